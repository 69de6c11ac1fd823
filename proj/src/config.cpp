#include "hjc/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace hjc {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

const std::set<std::string> kSections{"problem", "task", "tolerances", "output"};

const std::map<std::string, double> kTolDefaults{
    {"ode_dt", 1e-2},    {"tol_shoot", 1e-10}, {"tol_conj", 1e-7},
    {"tol_sing", 1e-7},  {"tol_kkt", 1e-9},    {"tol_ri", 1e-6},
    {"tol_rank", 1e-8},  {"face_tol", 1e-9},   {"tol_time", 1e-8},
    {"cfl", 0.9},        {"dedupe_frac", 1e-4}, {"tie_frac", 1e-7},
};

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::string spaced = text;
  std::replace(spaced.begin(), spaced.end(), ',', ' ');
  std::istringstream ss(spaced);
  std::vector<double> out;
  double v;
  while (ss >> v) out.push_back(v);
  std::string rest;
  ss.clear();
  ss >> rest;
  require(rest.empty(), what + ": '" + rest + "' is not a number");
  return out;
}

std::vector<std::string> split_on(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream ss(text);
  while (std::getline(ss, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

}  // namespace

Ini Ini::parse_string(const std::string& text, const std::string& name) {
  Ini ini;
  ini.name_ = name;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::vector<Entry>* current = nullptr;
  std::string current_name;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      require(s.back() == ']', name + ":" + std::to_string(lineno) + ": unterminated section header");
      current_name = trim(s.substr(1, s.size() - 2));
      require(!current_name.empty(), name + ":" + std::to_string(lineno) + ": empty section name");
      auto it = std::find_if(ini.sections_.begin(), ini.sections_.end(),
                             [&](const auto& p) { return p.first == current_name; });
      if (it == ini.sections_.end()) {
        ini.sections_.push_back({current_name, {}});
        current = &ini.sections_.back().second;
      } else {
        current = &it->second;
      }
      continue;
    }
    const size_t eq = s.find('=');
    require(eq != std::string::npos,
            name + ":" + std::to_string(lineno) + ": expected 'key = value' or '[section]'");
    require(current != nullptr,
            name + ":" + std::to_string(lineno) + ": key outside any [section]");
    Entry e;
    e.key = trim(s.substr(0, eq));
    e.value = trim(s.substr(eq + 1));
    e.line = lineno;
    require(!e.key.empty(), name + ":" + std::to_string(lineno) + ": empty key");
    for (const Entry& prev : *current)
      require(prev.key != e.key, name + ":" + std::to_string(lineno) + ": duplicate key '" +
                                     e.key + "' in [" + current_name + "] (first at line " +
                                     std::to_string(prev.line) + ")");
    current->push_back(std::move(e));
  }
  return ini;
}

Ini Ini::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

const Ini::Entry* Ini::find(const std::string& section, const std::string& key) const {
  for (const auto& [sname, entries] : sections_) {
    if (sname != section) continue;
    for (const Entry& e : entries)
      if (e.key == key) return &e;
  }
  return nullptr;
}

std::string Ini::where(const Entry& e) const {
  return e.line > 0 ? name_ + ":" + std::to_string(e.line) : name_ + ":<override>";
}

bool Ini::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string Ini::get_string(const std::string& section, const std::string& key,
                            const std::string& fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->used = true;
  return e->value;
}

std::string Ini::require_string(const std::string& section, const std::string& key) {
  const Entry* e = find(section, key);
  require(e != nullptr, name_ + ": missing required key '" + key + "' in [" + section + "]");
  e->used = true;
  return e->value;
}

double Ini::get_double(const std::string& section, const std::string& key, double fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->used = true;
  std::vector<double> v = parse_numbers(e->value, where(*e) + ": " + key);
  require(v.size() == 1, where(*e) + ": " + key + " expects a single number");
  return v[0];
}

int Ini::get_int(const std::string& section, const std::string& key, int fallback) {
  const double d = get_double(section, key, static_cast<double>(fallback));
  const int i = static_cast<int>(d);
  const Entry* e = find(section, key);
  if (e)
    require(static_cast<double>(i) == d, where(*e) + ": " + key + " expects an integer");
  return i;
}

Vec Ini::get_vec(const std::string& section, const std::string& key, const Vec& fallback) {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->used = true;
  std::vector<double> v = parse_numbers(e->value, where(*e) + ": " + key);
  require(!v.empty(), where(*e) + ": " + key + " expects at least one number");
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Vec Ini::require_vec(const std::string& section, const std::string& key) {
  require(has(section, key), name_ + ": missing required key '" + key + "' in [" + section + "]");
  return get_vec(section, key, Vec());
}

void Ini::set(const std::string& section, const std::string& key, const std::string& value) {
  for (auto& [sname, entries] : sections_) {
    if (sname != section) continue;
    for (Entry& e : entries) {
      if (e.key == key) {
        e.value = value;
        e.line = 0;
        e.used = false;
        return;
      }
    }
    entries.push_back({key, value, 0, false});
    return;
  }
  sections_.push_back({section, {{key, value, 0, false}}});
}

std::vector<std::string> Ini::keys(const std::string& section) const {
  std::vector<std::string> out;
  for (const auto& [sname, entries] : sections_)
    if (sname == section)
      for (const Entry& e : entries) out.push_back(e.key);
  return out;
}

void Ini::require_all_used() const {
  std::string complaints;
  for (const auto& [sname, entries] : sections_)
    for (const Entry& e : entries)
      if (!e.used)
        complaints += (complaints.empty() ? "" : "; ") + where(e) + ": unknown key '" + e.key +
                      "' in [" + sname + "]";
  require(complaints.empty(), "config: " + complaints);
}

namespace {

void parse_custom_terms(Ini& ini, ScenarioConfig& cfg) {
  for (int k = 1;; ++k) {
    const std::string key = "h_term" + std::to_string(k);
    if (!ini.has("problem", key)) break;
    const std::string text = ini.require_string("problem", key);
    std::vector<std::string> parts = split_on(text, '|');
    require(parts.size() == 4,
            "config: " + key + " expects 'coef_t... | x powers | p powers | u power'");
    PolyTerm term;
    term.coef_t = parse_numbers(parts[0], key + " time coefficients");
    for (double v : parse_numbers(parts[1], key + " x powers")) {
      require(v >= 0 && v == std::floor(v), "config: " + key + " x powers must be whole");
      term.ax.push_back(static_cast<int>(v));
    }
    for (double v : parse_numbers(parts[2], key + " p powers")) {
      require(v >= 0 && v == std::floor(v), "config: " + key + " p powers must be whole");
      term.ap.push_back(static_cast<int>(v));
    }
    std::vector<double> au = parse_numbers(parts[3], key + " u power");
    require(au.size() == 1 && au[0] >= 0 && au[0] == std::floor(au[0]),
            "config: " + key + " u power must be a whole number");
    term.au = static_cast<int>(au[0]);
    require(static_cast<int>(term.ax.size()) == cfg.dim &&
                static_cast<int>(term.ap.size()) == cfg.dim,
            "config: " + key + " power lists must have one entry per dimension");
    cfg.h_terms.push_back(std::move(term));
  }
  for (int k = 1;; ++k) {
    const std::string key = "u0_term" + std::to_string(k);
    if (!ini.has("problem", key)) break;
    const std::string text = ini.require_string("problem", key);
    std::vector<std::string> parts = split_on(text, '|');
    require(parts.size() == 2, "config: " + key + " expects 'coef | x powers'");
    std::vector<double> coef = parse_numbers(parts[0], key + " coefficient");
    require(coef.size() == 1, "config: " + key + " expects a single coefficient");
    PolynomialDatum::Term term;
    term.coef = coef[0];
    for (double v : parse_numbers(parts[1], key + " x powers")) {
      require(v >= 0 && v == std::floor(v), "config: " + key + " x powers must be whole");
      term.ax.push_back(static_cast<int>(v));
    }
    require(static_cast<int>(term.ax.size()) == cfg.dim,
            "config: " + key + " power list must have one entry per dimension");
    cfg.u0_terms.push_back(std::move(term));
  }
  require(!cfg.h_terms.empty(), "config: custom_polynomial needs at least h_term1");
  require(!cfg.u0_terms.empty(), "config: custom_polynomial needs at least u0_term1");
}

void resolve_problem(Ini& ini, ScenarioConfig& cfg) {
  cfg.family = ini.require_string("problem", "family");
  cfg.dim = ini.get_int("problem", "dim", 1);
  require(cfg.dim >= 1, "config: [problem] dim must be at least 1");

  const std::set<std::string> families{"classical_quadratic", "contact_discounted", "focusing",
                                       "custom_polynomial"};
  require(families.count(cfg.family) == 1, "config: unknown problem family '" + cfg.family + "'");

  if (cfg.family == "contact_discounted") {
    cfg.discount = ini.get_double("problem", "discount", 1.0);
    require(cfg.discount > 0.0, "config: [problem] discount must be positive");
  }
  if (cfg.family == "focusing") {
    cfg.curvature = ini.get_double("problem", "curvature", 1.0);
    require(cfg.curvature > 0.0, "config: [problem] curvature must be positive");
    require(!ini.has("problem", "datum"),
            "config: the focusing family fixes its own datum; remove [problem] datum");
    cfg.datum = "quadratic";
    return;
  }
  if (cfg.family == "custom_polynomial") {
    require(!ini.has("problem", "datum"),
            "config: custom_polynomial takes u0_term tables, not [problem] datum");
    cfg.datum = "polynomial";
    parse_custom_terms(ini, cfg);
    return;
  }

  cfg.datum = ini.require_string("problem", "datum");
  const std::set<std::string> data{"linear", "quadratic", "constant", "log_cosh", "min_linear"};
  require(data.count(cfg.datum) == 1, "config: unknown datum '" + cfg.datum + "'");
  if (cfg.datum == "linear") {
    cfg.datum_a = ini.require_vec("problem", "a");
    require(cfg.datum_a.size() == cfg.dim, "config: [problem] a must have dim entries");
    cfg.datum_c = ini.get_double("problem", "c", 0.0);
  } else if (cfg.datum == "quadratic") {
    cfg.quad_c0 = ini.get_double("problem", "c0", 0.0);
    cfg.quad_a = ini.get_vec("problem", "a", Vec::Zero(cfg.dim));
    require(cfg.quad_a.size() == cfg.dim, "config: [problem] a must have dim entries");
    Vec q = ini.require_vec("problem", "Q");
    require(q.size() == cfg.dim * cfg.dim,
            "config: [problem] Q must list dim*dim entries row by row");
    cfg.quad_Q = Eigen::Map<const Mat>(q.data(), cfg.dim, cfg.dim).transpose();
  } else if (cfg.datum == "constant") {
    cfg.datum_c = ini.get_double("problem", "c", 0.0);
  } else if (cfg.datum == "log_cosh") {
    require(cfg.dim == 1, "config: the log_cosh datum is one-dimensional");
  } else {  // min_linear
    for (int k = 1;; ++k) {
      const std::string key = "piece" + std::to_string(k);
      if (!ini.has("problem", key)) break;
      Vec row = ini.require_vec("problem", key);
      require(row.size() == cfg.dim + 1,
              "config: [problem] " + key + " expects dim slope entries then the offset");
      cfg.pieces_a.push_back(row.head(cfg.dim));
      cfg.pieces_c.push_back(row[cfg.dim]);
    }
    require(cfg.pieces_a.size() >= 2,
            "config: the min_linear datum needs piece1 and piece2 at least");
  }
}

void resolve_task(Ini& ini, ScenarioConfig& cfg) {
  cfg.task = ini.require_string("task", "type");
  const std::set<std::string> tasks{"value-map",      "classify-map",   "trace-char",
                                    "conjugate-scan", "trace-singular", "oracle",
                                    "report"};
  require(tasks.count(cfg.task) == 1, "config: unknown task type '" + cfg.task + "'");

  auto read_box = [&] {
    cfg.box_center = ini.get_vec("task", "box_center", Vec::Zero(cfg.dim));
    require(cfg.box_center.size() == cfg.dim, "config: [task] box_center must have dim entries");
    cfg.box_half_width = ini.get_double("task", "box_half_width", 2.0);
    require(cfg.box_half_width > 0.0, "config: [task] box_half_width must be positive");
  };

  if (cfg.task == "value-map" || cfg.task == "classify-map") {
    cfg.t = ini.get_double("task", "t", 1.0);
    require(cfg.t > 0.0, "config: [task] t must be positive");
    read_box();
    cfg.nx = ini.get_int("task", "nx", 50);
    require(cfg.nx >= 2, "config: [task] nx must be at least 2");
  } else if (cfg.task == "trace-char") {
    cfg.seed_z = ini.require_vec("task", "z");
    require(cfg.seed_z.size() == cfg.dim, "config: [task] z must have dim entries");
    cfg.horizon = ini.get_double("task", "horizon", 2.0);
    require(cfg.horizon > 0.0, "config: [task] horizon must be positive");
  } else if (cfg.task == "conjugate-scan") {
    read_box();
    cfg.nx = ini.get_int("task", "nx", 20);
    require(cfg.nx >= 2, "config: [task] nx must be at least 2");
    cfg.horizon = ini.get_double("task", "horizon", 2.0);
    require(cfg.horizon > 0.0, "config: [task] horizon must be positive");
  } else if (cfg.task == "trace-singular") {
    cfg.t = ini.get_double("task", "t", 1.0);
    require(cfg.t > 0.0, "config: [task] t must be positive");
    cfg.x0 = ini.require_vec("task", "x0");
    require(cfg.x0.size() == cfg.dim, "config: [task] x0 must have dim entries");
    cfg.horizon = ini.get_double("task", "horizon", cfg.t + 1.0);
    require(cfg.horizon > cfg.t, "config: [task] horizon must exceed the start time t");
    cfg.back_horizon = ini.get_double("task", "back_horizon", -1.0);
    if (cfg.back_horizon >= 0.0)
      require(cfg.back_horizon < cfg.t, "config: [task] back_horizon must precede t");
    cfg.branches = ini.get_string("task", "branches", "sheets");
    require(cfg.branches == "sheets" || cfg.branches == "auto",
            "config: [task] branches must be 'sheets' or 'auto'");
    if (cfg.branches == "auto")
      require(cfg.back_horizon >= 0.0,
              "config: [task] branches=auto traces both ways; set back_horizon");
    if (cfg.branches == "sheets")
      require(cfg.datum == "min_linear",
              "config: branches=sheets needs the min_linear datum pieces");
  } else if (cfg.task == "oracle") {
    read_box();
    cfg.horizon = ini.get_double("task", "horizon", 1.0);
    require(cfg.horizon > 0.0, "config: [task] horizon must be positive");
    cfg.grid_dx = ini.get_double("task", "dx", 0.005);
    require(cfg.grid_dx > 0.0, "config: [task] dx must be positive");
    cfg.grid_dt = ini.get_double("task", "dt", 0.0);
    require(cfg.grid_dt >= 0.0, "config: [task] dt must be nonnegative (0 = derived)");
    cfg.grid_safety = ini.get_double("task", "safety", 0.25);
    require(cfg.grid_safety > 0.0 && cfg.grid_safety <= 1.0,
            "config: [task] safety must lie in (0, 1]");
    cfg.jump_tol = ini.get_double("task", "jump_tol", 0.0);
    require(cfg.jump_tol >= 0.0, "config: [task] jump_tol must be nonnegative (0 = off)");
    cfg.slice_stride = ini.get_int("task", "slice_stride", 0);
    require(cfg.slice_stride >= 0, "config: [task] slice_stride must be nonnegative");
  } else {  // report
    cfg.curve_csv = ini.require_string("task", "curve_csv");
    cfg.flags_csv = ini.require_string("task", "flags_csv");
    cfg.grid_dx = ini.get_double("task", "dx", 0.0);
    require(cfg.grid_dx > 0.0, "config: [task] dx is required and must be positive");
    cfg.fail_above_cells = ini.get_double("task", "fail_above_cells", -1.0);
    cfg.t_min = ini.get_double("task", "t_min", 0.0);
    cfg.t_max = ini.get_double("task", "t_max", 0.0);
  }
}

void resolve_tolerances(Ini& ini, ScenarioConfig& cfg) {
  cfg.tol = kTolDefaults;
  for (const std::string& key : ini.keys("tolerances")) {
    require(kTolDefaults.count(key) == 1, "config: unknown tolerance '" + key + "'");
    const double v = ini.get_double("tolerances", key, 0.0);
    require(v > 0.0, "config: tolerance " + key + " must be positive");
    cfg.tol[key] = v;
  }
  require(cfg.tol.at("cfl") <= 1.0, "config: tolerance cfl must not exceed 1");
}

void resolve_output(Ini& ini, ScenarioConfig& cfg) {
  cfg.out_dir = ini.get_string("output", "dir", "out");
  require(!cfg.out_dir.empty(), "config: [output] dir must not be empty");
  cfg.rng_seed = ini.get_int("output", "seed", 0);
  cfg.threads = ini.get_int("output", "threads", 1);
  require(cfg.threads >= 1, "config: [output] threads must be at least 1");
}

}  // namespace

ScenarioConfig resolve_scenario(Ini& ini) {
  ScenarioConfig cfg;
  resolve_problem(ini, cfg);
  resolve_task(ini, cfg);
  resolve_tolerances(ini, cfg);
  resolve_output(ini, cfg);
  ini.require_all_used();
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
  Ini ini = Ini::parse_file(path);
  return resolve_scenario(ini);
}

ProblemSpec build_problem(const ScenarioConfig& cfg) {
  if (cfg.family == "focusing") return make_focusing(cfg.dim, cfg.curvature);
  if (cfg.family == "custom_polynomial")
    return make_custom_polynomial(cfg.dim, cfg.h_terms, cfg.u0_terms);

  std::shared_ptr<const InitialDatum> u0;
  if (cfg.datum == "linear") {
    u0 = linear_datum(cfg.datum_a, cfg.datum_c);
  } else if (cfg.datum == "quadratic") {
    u0 = quadratic_datum(cfg.quad_c0, cfg.quad_a, cfg.quad_Q);
  } else if (cfg.datum == "constant") {
    u0 = constant_datum(cfg.dim, cfg.datum_c);
  } else if (cfg.datum == "log_cosh") {
    u0 = log_cosh_datum();
  } else if (cfg.datum == "min_linear") {
    u0 = min_linear_datum(cfg.pieces_a, cfg.pieces_c);
  } else {
    throw PreconditionError("build_problem: unsupported datum '" + cfg.datum + "'");
  }
  if (cfg.family == "classical_quadratic") return make_classical_quadratic(u0);
  return make_contact_discounted(cfg.discount, u0);
}

}  // namespace hjc
