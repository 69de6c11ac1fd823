#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace hjc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

// Axis-aligned search box, one [lo,hi] interval per coordinate.
struct Box {
  Vec lo;
  Vec hi;

  int dim() const { return static_cast<int>(lo.size()); }
  double width(int a) const { return hi[a] - lo[a]; }
  double max_width() const { return (hi - lo).maxCoeff(); }
  bool contains(const Vec& x) const {
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
  }
  static Box centered(const Vec& c, double half_width) {
    return Box{c.array() - half_width, c.array() + half_width};
  }
};

// Thrown when a documented precondition of an operation fails; the message
// names the violated hypothesis so callers can surface it verbatim.
class PreconditionError : public std::invalid_argument {
 public:
  explicit PreconditionError(const std::string& what) : std::invalid_argument(what) {}
};

// Thrown on numerical breakdown (divergent iteration, singular factorization,
// non-finite state) that the caller did not opt into handling via a status.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw PreconditionError(msg);
}

}  // namespace hjc
