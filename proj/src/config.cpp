#include "kfrate/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace kfrate::config {
namespace {

const std::set<std::string>& schema() {
  static const std::set<std::string> keys{
      "system.A",     "system.B",      "system.C",   "system.Q",      "system.R",
      "system.P0",    "system.m",      "grid.T",     "grid.base_n",   "grid.depth",
      "filter.n",     "filter.K",      "study.n_list", "study.K_ref", "study.seeds",
      "study.variant", "bounds.n",     "bounds.variant", "bounds.mu", "wave.modes",
      "wave.c",       "wave.sigma",    "wave.R",     "wave.extra_levels", "wave.levels",
      "run.seed",
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

void check_key(const std::string& key) {
  if (!schema().count(key)) throw InvalidInput("unknown config key '" + key + "'");
}

std::vector<std::string> tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double to_real(const std::string& key, const std::string& tok) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw InvalidInput("config key '" + key + "': '" + tok + "' is not a finite number");
  return v;
}

long long to_integer(const std::string& key, const std::string& tok) {
  long long v = 0;
  const char* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw InvalidInput("config key '" + key + "': '" + tok + "' is not an integer");
  return v;
}

std::string require(const Config& cfg, const std::string& key) {
  const auto v = cfg.get(key);
  if (!v) throw InvalidInput("missing config key '" + key + "'");
  return *v;
}

Matrix matrix_or(const Config& cfg, const std::string& key, Matrix fallback) {
  const auto v = cfg.get(key);
  return v ? parse_matrix(key, *v) : std::move(fallback);
}

}  // namespace

bool Config::has_section(const std::string& section) const {
  const std::string prefix = section + ".";
  const auto it = values.lower_bound(prefix);
  return it != values.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

Config parse(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InvalidInput(std::string("config parse error: ") + e.message() + " (line " +
                       std::to_string(e.line()) + ")");
  }
  Config cfg;
  cfg.source_text = text;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw InvalidInput("unknown config key '" + section + "' outside any section");
    for (const auto& [name, leaf] : body) {
      const std::string key = section + "." + name;
      check_key(key);
      cfg.values[key] = trim(leaf.data());
    }
  }
  return cfg;
}

Config load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void apply_override(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidInput("override '" + assignment + "' must be key=value");
  const std::string key = trim(std::string_view(assignment).substr(0, eq));
  check_key(key);
  cfg.values[key] = trim(std::string_view(assignment).substr(eq + 1));
}

Matrix parse_matrix(const std::string& key, const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto stop = std::min(text.find(';', start), text.size());
    const auto toks = tokens(std::string_view(text).substr(start, stop - start));
    std::vector<double> row;
    for (const auto& t : toks) row.push_back(to_real(key, t));
    rows.push_back(std::move(row));
    start = stop + 1;
  }
  if (rows.size() == 1 && rows[0].empty()) return Matrix(0, 0);
  const std::size_t cols = rows[0].size();
  for (const auto& row : rows)
    if (row.size() != cols || cols == 0)
      throw InvalidInput("matrix " + key.substr(key.find('.') + 1) + " has rows of unequal length");
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return out;
}

std::vector<double> parse_reals(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& t : tokens(text)) out.push_back(to_real(key, t));
  return out;
}

std::vector<long long> parse_integers(const std::string& key, const std::string& text) {
  std::vector<long long> out;
  for (const auto& t : tokens(text)) out.push_back(to_integer(key, t));
  return out;
}

double real_or(const Config& cfg, const std::string& key, double fallback) {
  const auto v = cfg.get(key);
  if (!v) return fallback;
  const auto toks = tokens(*v);
  if (toks.size() != 1) throw InvalidInput("config key '" + key + "' expects one number");
  return to_real(key, toks[0]);
}

long long integer_or(const Config& cfg, const std::string& key, long long fallback) {
  const auto v = cfg.get(key);
  if (!v) return fallback;
  const auto toks = tokens(*v);
  if (toks.size() != 1) throw InvalidInput("config key '" + key + "' expects one integer");
  return to_integer(key, toks[0]);
}

LtiSystem system_from(const Config& cfg) {
  if (!cfg.has_section("system")) {
    if (cfg.has_section("wave")) return wave_instance(wave_from(cfg));
    throw InvalidInput("config needs a [system] or [wave] section");
  }
  LtiSystem sys;
  sys.A = parse_matrix("system.A", require(cfg, "system.A"));
  sys.C = parse_matrix("system.C", require(cfg, "system.C"));
  sys.R = parse_matrix("system.R", require(cfg, "system.R"));
  sys.P0 = parse_matrix("system.P0", require(cfg, "system.P0"));
  const Index p = sys.A.rows();
  sys.B = matrix_or(cfg, "system.B", Matrix::Zero(p, 1));
  sys.Q = matrix_or(cfg, "system.Q", Matrix::Identity(sys.B.cols(), sys.B.cols()));
  if (const auto m = cfg.get("system.m")) {
    const auto entries = parse_reals("system.m", *m);
    sys.m = Eigen::Map<const Vector>(entries.data(), static_cast<Index>(entries.size()));
  } else {
    sys.m = Vector::Zero(p);
  }
  sys.validate();
  return sys;
}

double horizon_from(const Config& cfg) { return real_or(cfg, "grid.T", 1.0); }

DyadicGrid grid_from(const Config& cfg) {
  DyadicGrid grid;
  grid.horizon = horizon_from(cfg);
  grid.base_n = integer_or(cfg, "grid.base_n", 1);
  grid.depth = static_cast<int>(integer_or(cfg, "grid.depth", 6));
  grid.validate();
  return grid;
}

StudyConfig study_from(const Config& cfg) {
  StudyConfig s;
  s.system = system_from(cfg);
  s.horizon = horizon_from(cfg);
  for (long long n : parse_integers("study.n_list", require(cfg, "study.n_list")))
    s.n_list.push_back(static_cast<Index>(n));
  s.k_ref = static_cast<int>(integer_or(cfg, "study.K_ref", 10));
  s.seeds = integer_or(cfg, "study.seeds", 1);
  s.seed = static_cast<std::uint64_t>(integer_or(cfg, "run.seed", 0));
  s.variant = parse_bound_variant(cfg.get("study.variant").value_or("noiseless"));
  s.validate();
  return s;
}

WaveConfig wave_from(const Config& cfg) {
  WaveConfig w;
  for (long long k : parse_integers("wave.modes", require(cfg, "wave.modes")))
    w.mode_exponents.push_back(static_cast<int>(k));
  w.c_coeffs = parse_reals("wave.c", require(cfg, "wave.c"));
  w.sigmas = parse_reals("wave.sigma", require(cfg, "wave.sigma"));
  w.R = real_or(cfg, "wave.R", 1.0);
  w.extra_levels = static_cast<int>(integer_or(cfg, "wave.extra_levels", 4));
  w.validate();
  return w;
}

std::vector<int> wave_levels_from(const Config& cfg) {
  std::vector<int> out;
  for (long long l : parse_integers("wave.levels", require(cfg, "wave.levels")))
    out.push_back(static_cast<int>(l));
  return out;
}

}  // namespace kfrate::config
