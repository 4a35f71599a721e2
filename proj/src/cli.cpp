#include "kfrate/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "kfrate/config.hpp"
#include "kfrate/csv.hpp"
#include "kfrate/experiments.hpp"
#include "kfrate/filters.hpp"

namespace kfrate::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kVersion = "1.0.0";

struct Options {
  std::string config_path;
  std::optional<long long> seed;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
};

class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::ofstream open(const std::string& name) {
    const fs::path path = dir_ / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InvalidInput("cannot write '" + path.string() + "'");
    files_.push_back(name);
    return f;
  }

  void write_json(const std::string& name, const json& doc) {
    auto f = open(name);
    f << doc.dump(2) << '\n';
  }

  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

json vector_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalFailure(std::string(what) + " is not finite");
}

std::uint64_t seed_of(const Options& opt, const config::Config& cfg) {
  return static_cast<std::uint64_t>(opt.seed.value_or(config::integer_or(cfg, "run.seed", 0)));
}

json bound_json(const BoundReport& b) {
  json doc;
  doc["variant"] = std::string(to_string(b.variant));
  for (const auto& [name, value] : b.constants) doc[name] = value;
  doc["T"] = b.horizon;
  doc["n"] = b.n;
  doc["bound_value"] = b.bound_value;
  doc["a_priori_error"] = b.a_priori_error;
  doc["mu"] = b.mu;
  doc["norm_A"] = b.norm_A;
  doc["norm_C"] = b.norm_C;
  doc["min_eig_R"] = b.min_eig_R;
  doc["tr_P0"] = b.tr_P0;
  doc["tr_BQB"] = b.tr_BQB;
  doc["tr_ABQBA"] = b.tr_ABQBA;
  doc["tr_AP0A"] = b.tr_AP0A;
  doc["graph_norm_P0"] = b.graph_norm_P0;
  doc["mu_grid_points"] = kMuGridPoints;
  doc["mu_safety"] = kMuSafety;
  doc["notes"] = b.notes;
  return doc;
}

void cmd_simulate(const config::Config& cfg, const Options& opt, Outputs& out, json&) {
  const SamplePath path = simulate(config::system_from(cfg), config::grid_from(cfg), seed_of(opt, cfg));
  auto f = out.open("path.csv");
  write_path_csv(f, path);
}

void cmd_kf(const config::Config& cfg, const Options& opt, Outputs& out, json&) {
  const LtiSystem sys = config::system_from(cfg);
  const SamplePath path = simulate(sys, config::grid_from(cfg), seed_of(opt, cfg));
  const EstimateRecord rec = estimate_record(sys, path, config::integer_or(cfg, "filter.n", 1));
  require_finite(rec.cov_trace, "covariance trace");
  require_finite(rec.error_sq_vs_ref, "error");
  json doc;
  doc["n"] = rec.n;
  doc["depth"] = rec.depth;
  doc["seed"] = path.seed;
  doc["mean"] = vector_json(rec.mean);
  doc["cov_trace"] = rec.cov_trace;
  doc["error_sq_vs_ref"] = rec.error_sq_vs_ref;
  out.write_json("estimate.json", doc);
}

void cmd_refine(const config::Config& cfg, const Options& opt, Outputs& out, json&) {
  const LtiSystem sys = config::system_from(cfg);
  const SamplePath path = simulate(sys, config::grid_from(cfg), seed_of(opt, cfg));
  const auto n = config::integer_or(cfg, "filter.n", 1);
  const auto depth = static_cast<int>(config::integer_or(cfg, "filter.K", path.grid.depth));
  const RefinementTrajectory traj = refine_to_depth(sys, path, n, depth);
  auto f = out.open("refine.csv");
  csv::write_header(f, {"j", "trace", "increment_trace"});
  for (const auto& pt : traj.points) {
    const double trace = pt.target.cov.trace();
    require_finite(trace, "covariance trace");
    csv::write_row(f, {static_cast<double>(pt.j), trace, pt.increment_trace});
  }
}

void cmd_converge(const config::Config& cfg, const Options&, Outputs& out, json& manifest) {
  const StudyConfig study = config::study_from(cfg);
  const RateReport report = convergence_study(study);
  {
    auto f = out.open("converge.csv");
    csv::write_header(f, {"n", "error_sq", "bound_value", "a_priori_bound"});
    for (const auto& row : report.rows)
      csv::write_row(f, {static_cast<double>(row.n), row.error_sq, row.bound_value, row.a_priori_bound});
  }
  manifest["variant"] = std::string(to_string(report.variant));
  manifest["fitted_slope"] = report.inconclusive ? json(nullptr) : json(report.fitted_slope);
  manifest["slope_stderr"] = report.inconclusive ? json(nullptr) : json(report.slope_stderr);
  manifest["ref_floor"] = report.ref_floor;
  manifest["inconclusive"] = report.inconclusive;
  json used = json::array();
  for (const auto& row : report.rows)
    if (row.used_in_fit) used.push_back(row.n);
  manifest["fit_n"] = used;
  manifest["bounds"] = bound_json(report.a_priori);
}

void cmd_wave_demo(const config::Config& cfg, const Options&, Outputs& out, json& manifest) {
  const WaveConfig wave = config::wave_from(cfg);
  const std::vector<int> levels = config::wave_levels_from(cfg);
  const auto rows = wave_slow_convergence_demo(wave, levels);
  auto f = out.open("wave_demo.csv");
  csv::write_header(f, {"l", "error_sq", "lower_bound"});
  bool holds = true;
  for (const auto& row : rows) {
    csv::write_row(f, {static_cast<double>(row.level), row.error_sq, row.lower_bound});
    holds = holds && row.error_sq >= row.lower_bound;
  }
  manifest["lower_bound_holds"] = holds;
}

void cmd_bounds(const config::Config& cfg, const Options&, Outputs& out, json&) {
  const LtiSystem sys = config::system_from(cfg);
  const auto variant = parse_bound_variant(cfg.get("bounds.variant").value_or("noiseless"));
  std::optional<double> mu;
  if (cfg.has("bounds.mu")) mu = config::real_or(cfg, "bounds.mu", 1.0);
  const BoundReport report = bound_constants(sys, config::horizon_from(cfg),
                                             config::integer_or(cfg, "bounds.n", 1), variant,
                                             std::nullopt, mu);
  require_finite(report.bound_value, "bound");
  out.write_json("bounds.json", bound_json(report));
}

using Command = void (*)(const config::Config&, const Options&, Outputs&, json&);

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sampled-output Kalman filtering and refinement-rate studies", "kfrate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Options opt;
  long long seed_value = 0;
  const std::vector<std::pair<std::string, Command>> commands{
      {"simulate", cmd_simulate}, {"kf", cmd_kf},           {"refine", cmd_refine},
      {"converge", cmd_converge}, {"wave-demo", cmd_wave_demo}, {"bounds", cmd_bounds},
  };
  const std::map<std::string, std::string> help{
      {"simulate", "Simulate one path and write path.csv"},
      {"kf", "Discrete Kalman filter estimate on one path, estimate.json"},
      {"refine", "Dyadic refinement trajectory, refine.csv"},
      {"converge", "Deterministic convergence study, converge.csv"},
      {"wave-demo", "Wave-equation slow-convergence table, wave_demo.csv"},
      {"bounds", "Error bound constants, bounds.json"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", opt.config_path, "Config file")->required();
    sub->add_option("--seed", seed_value, "Seed (overrides run.seed)");
    sub->add_option("--out", opt.out_dir, "Output directory");
    sub->add_option("--set", opt.overrides, "Override: section.key=value");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  std::size_t which = 0;
  while (!subs[which]->parsed()) ++which;
  const auto& [name, command] = commands[which];
  if (subs[which]->count("--seed") > 0) opt.seed = seed_value;

  const auto start = std::chrono::steady_clock::now();
  try {
    config::Config cfg = config::load(opt.config_path);
    for (const auto& o : opt.overrides) config::apply_override(cfg, o);
    Outputs outputs(opt.out_dir);
    json manifest;
    manifest["command"] = name;
    manifest["config_path"] = opt.config_path;
    manifest["config"] = cfg.source_text;
    manifest["overrides"] = opt.overrides;
    manifest["seed"] = seed_of(opt, cfg);
    command(cfg, opt, outputs, manifest);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    manifest["versions"] = {{"kfrate", kVersion},
                            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                          std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                          std::to_string(EIGEN_MINOR_VERSION)},
                            {"compiler", __VERSION__}};
    manifest["duration_s"] = elapsed.count();
    json files = outputs.files();
    files.push_back("manifest.json");
    manifest["files"] = files;
    outputs.write_json("manifest.json", manifest);
    for (const auto& f : outputs.files()) out << (fs::path(opt.out_dir) / f).string() << '\n';
    return kExitOk;
  } catch (const InvalidInput& e) {
    err << "kfrate " << name << ": " << e.what() << '\n';
    return kExitConfigError;
  } catch (const NumericalFailure& e) {
    err << "kfrate " << name << ": numerical failure: " << e.what() << '\n';
    return kExitNumericalFailure;
  } catch (const fs::filesystem_error& e) {
    err << "kfrate " << name << ": " << e.what() << '\n';
    return kExitConfigError;
  }
}

}  // namespace kfrate::cli
