#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kfrate/experiments.hpp"
#include "kfrate/lti_model.hpp"
#include "kfrate/path_sim.hpp"

namespace kfrate::config {

// INI text with [section] headers and `key = value` lines. Matrices are rows
// separated by ';' with whitespace between entries, e.g. `A = -1 0; 0 -2`.
// Keys outside the documented schema are rejected by name.
struct Config {
  std::string source_text;                    // verbatim input
  std::map<std::string, std::string> values;  // "section.key" -> value

  bool has(const std::string& key) const { return values.count(key) != 0; }
  bool has_section(const std::string& section) const;
  std::optional<std::string> get(const std::string& key) const;
};

Config parse(const std::string& text);
Config load(const std::string& path);

// Applies "section.key=value"; the key must be in the schema.
void apply_override(Config& cfg, const std::string& assignment);

Matrix parse_matrix(const std::string& key, const std::string& text);
std::vector<double> parse_reals(const std::string& key, const std::string& text);
std::vector<long long> parse_integers(const std::string& key, const std::string& text);

// [system] when present, otherwise the [wave] instance.
LtiSystem system_from(const Config& cfg);
DyadicGrid grid_from(const Config& cfg);
double horizon_from(const Config& cfg);
StudyConfig study_from(const Config& cfg);
WaveConfig wave_from(const Config& cfg);
std::vector<int> wave_levels_from(const Config& cfg);

double real_or(const Config& cfg, const std::string& key, double fallback);
long long integer_or(const Config& cfg, const std::string& key, long long fallback);

}  // namespace kfrate::config
