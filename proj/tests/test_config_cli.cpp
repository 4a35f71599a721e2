#include <doctest.h>
#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kfrate/cli.hpp"
#include "kfrate/config.hpp"
#include "kfrate/csv.hpp"

using namespace kfrate;
namespace fs = std::filesystem;

namespace {

const std::string kConfigDir = KFRATE_CONFIG_DIR;

struct RunResult {
  int code = 0;
  std::string out;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "kfrate");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("kfrate_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(slurp(path)); }

std::string write_config(const std::string& name, const std::string& text) {
  const fs::path path = fs::temp_directory_path() / ("kfrate_cfg_" + name + "_" + std::to_string(::getpid()) + ".ini");
  std::ofstream(path) << text;
  return path.string();
}

const char* const kSmallSystem = R"(
[system]
A = -1 0.5; -0.5 -1
C = 1 0
R = 0.5
P0 = 1 0; 0 1
m = 1 0

[grid]
T = 1
base_n = 2
depth = 3
)";

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("matrix and list parsing") {
    const Matrix a = config::parse_matrix("system.A", " -1 0.5 ;  2 3e-1 ");
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 2);
    CHECK(a(0, 0) == -1.0);
    CHECK(a(1, 1) == 0.3);
    const Matrix col = config::parse_matrix("system.B", "1; 2; 3");
    CHECK(col.rows() == 3);
    CHECK(col.cols() == 1);
    CHECK_THROWS_WITH_AS(config::parse_matrix("system.A", "1 2; 3"), doctest::Contains("matrix A"),
                         InvalidInput);
    CHECK_THROWS_AS(config::parse_matrix("system.A", "1 x"), InvalidInput);
    CHECK_THROWS_AS(config::parse_matrix("system.A", "1 nan"), InvalidInput);
    CHECK(config::parse_integers("study.n_list", "2 4 8") == std::vector<long long>{2, 4, 8});
    CHECK_THROWS_AS(config::parse_integers("study.n_list", "2 4.5"), InvalidInput);
    CHECK(config::parse_reals("wave.c", "1 -2.5") == std::vector<double>{1.0, -2.5});
  }

  TEST_CASE("parse keeps the source and rejects unknown keys") {
    const config::Config cfg = config::parse(kSmallSystem);
    CHECK(cfg.source_text == kSmallSystem);
    CHECK(cfg.has("system.A"));
    CHECK(cfg.has_section("grid"));
    CHECK_FALSE(cfg.has_section("wave"));
    CHECK(cfg.get("system.R") == std::optional<std::string>("0.5"));
    CHECK_THROWS_WITH_AS(config::parse("[system]\nD = 1\n"), "unknown config key 'system.D'", InvalidInput);
    CHECK_THROWS_WITH_AS(config::parse("[sytem]\nA = 1\n"), "unknown config key 'sytem.A'", InvalidInput);
  }

  TEST_CASE("system from config with defaults") {
    const LtiSystem sys = config::system_from(config::parse(kSmallSystem));
    CHECK(sys.p() == 2);
    CHECK(sys.B.isZero(0.0));
    CHECK(sys.Q == Matrix::Identity(1, 1));
    CHECK(sys.m(0) == 1.0);
    const DyadicGrid grid = config::grid_from(config::parse(kSmallSystem));
    CHECK(grid.intervals() == 16);
    CHECK(config::horizon_from(config::parse(kSmallSystem)) == 1.0);
  }

  TEST_CASE("dimension errors name the matrix") {
    std::string text = kSmallSystem;
    text.replace(text.find("C = 1 0"), 7, "C = 1 0 0");
    CHECK_THROWS_WITH_AS(config::system_from(config::parse(text)), doctest::Contains("matrix C"), InvalidInput);
    config::Config cfg = config::parse(kSmallSystem);
    config::apply_override(cfg, "system.P0=1 2; 0 1");
    CHECK_THROWS_WITH_AS(config::system_from(cfg), doctest::Contains("P0"), InvalidInput);
  }

  TEST_CASE("overrides") {
    config::Config cfg = config::parse(kSmallSystem);
    config::apply_override(cfg, "system.R = 2");
    CHECK(config::system_from(cfg).R(0, 0) == 2.0);
    config::apply_override(cfg, "run.seed=17");
    CHECK(config::integer_or(cfg, "run.seed", 0) == 17);
    CHECK_THROWS_WITH_AS(config::apply_override(cfg, "system.Z=1"), "unknown config key 'system.Z'",
                         InvalidInput);
    CHECK_THROWS_AS(config::apply_override(cfg, "system.R"), InvalidInput);
  }

  TEST_CASE("study and wave sections") {
    const config::Config study = config::load(kConfigDir + "/noiseless_converge.ini");
    const StudyConfig sc = config::study_from(study);
    CHECK(sc.n_list == std::vector<Index>{2, 4, 8, 16, 32, 64});
    CHECK(sc.k_ref == 10);
    CHECK(sc.variant == BoundVariant::noiseless);

    const config::Config wave = config::load(kConfigDir + "/wave_demo.ini");
    const WaveConfig wc = config::wave_from(wave);
    CHECK(wc.mode_exponents.size() == 10);
    CHECK(wc.sigmas[1] * wc.sigmas[1] == doctest::Approx(std::pow(2.0, -1.1)).epsilon(1e-8));
    CHECK(config::wave_levels_from(wave).back() == 9);
    CHECK(config::system_from(wave).p() == 20);
    CHECK_THROWS_AS(config::load(kConfigDir + "/missing.ini"), InvalidInput);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("converge writes the CSV and a manifest whose slope re-fits from the CSV") {
    const fs::path dir = fresh_dir("converge");
    const RunResult r =
        run_cli({"converge", "--config", kConfigDir + "/noiseless_converge.ini", "--out", dir.string()});
    REQUIRE(r.code == cli::kExitOk);
    std::ifstream in(dir / "converge.csv");
    const csv::Table table = csv::read(in);
    CHECK(table.header == std::vector<std::string>{"n", "error_sq", "bound_value", "a_priori_bound"});
    CHECK(table.rows.size() == 6);

    const auto manifest = read_json(dir / "manifest.json");
    CHECK(manifest["command"] == "converge");
    CHECK(manifest["config"] == slurp(kConfigDir + "/noiseless_converge.ini"));
    CHECK(manifest["variant"] == "noiseless");
    CHECK(manifest["inconclusive"] == false);
    CHECK(manifest["files"].size() == 2);
    CHECK(manifest.contains("versions"));
    CHECK(manifest.contains("duration_s"));

    std::vector<double> n;
    std::vector<double> err;
    const auto fit_n = manifest["fit_n"].get<std::vector<double>>();
    for (const auto& row : table.rows) {
      if (std::find(fit_n.begin(), fit_n.end(), row[0]) == fit_n.end()) continue;
      n.push_back(row[0]);
      err.push_back(row[1]);
      CHECK(row[1] <= row[3]);
    }
    const double slope = manifest["fitted_slope"].get<double>();
    CHECK(std::abs(fit_loglog_slope(n, err).slope - slope) <= 1e-9);
    CHECK(slope >= -2.3);
    CHECK(slope <= -1.8);
    fs::remove_all(dir);
  }

  TEST_CASE("bounds on the unit instance") {
    const fs::path dir = fresh_dir("bounds");
    const RunResult r = run_cli({"bounds", "--config", kConfigDir + "/unit_bounds.ini", "--out", dir.string()});
    REQUIRE(r.code == cli::kExitOk);
    const auto doc = read_json(dir / "bounds.json");
    CHECK(doc["M"].get<double>() == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
    CHECK(doc["bound_value"].get<double>() == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
    CHECK(doc["variant"] == "noiseless");
    fs::remove_all(dir);
  }

  TEST_CASE("kf with a fixed seed is byte-identical across runs") {
    const fs::path a = fresh_dir("kf_a");
    const fs::path b = fresh_dir("kf_b");
    const std::string cfg = kConfigDir + "/path_filter.ini";
    REQUIRE(run_cli({"kf", "--config", cfg, "--seed", "42", "--out", a.string()}).code == cli::kExitOk);
    REQUIRE(run_cli({"kf", "--config", cfg, "--seed", "42", "--out", b.string()}).code == cli::kExitOk);
    CHECK(slurp(a / "estimate.json") == slurp(b / "estimate.json"));
    const auto doc = read_json(a / "estimate.json");
    CHECK(doc["n"] == 8);
    CHECK(doc["seed"] == 42);
    CHECK(doc["mean"].size() == 2);
    CHECK(read_json(a / "manifest.json")["seed"] == 42);
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("simulate and refine outputs") {
    const fs::path dir = fresh_dir("simrefine");
    const std::string cfg = kConfigDir + "/path_filter.ini";
    REQUIRE(run_cli({"simulate", "--config", cfg, "--out", dir.string()}).code == cli::kExitOk);
    std::ifstream path_in(dir / "path.csv");
    const csv::Table path = csv::read(path_in);
    CHECK(path.header == std::vector<std::string>{"t", "z_1", "z_2", "y_1"});
    CHECK(path.rows.size() == 4 * 64 + 1);

    REQUIRE(run_cli({"refine", "--config", cfg, "--out", dir.string()}).code == cli::kExitOk);
    std::ifstream refine_in(dir / "refine.csv");
    const csv::Table refine = csv::read(refine_in);
    CHECK(refine.header == std::vector<std::string>{"j", "trace", "increment_trace"});
    // n = 8 refined by K = 3 levels ends at 64 nodes.
    CHECK(refine.rows.front()[0] == 8.0);
    CHECK(refine.rows.back()[0] == 64.0);
    for (std::size_t k = 1; k < refine.rows.size(); ++k) {
      CHECK(refine.rows[k][1] <= refine.rows[k - 1][1] + 1e-12);
      CHECK(refine.rows[k][1] == doctest::Approx(refine.rows[k - 1][1] - refine.rows[k][2]).epsilon(1e-9));
    }
    fs::remove_all(dir);
  }

  TEST_CASE("wave-demo reports the lower bound check") {
    const fs::path dir = fresh_dir("wave");
    REQUIRE(run_cli({"wave-demo", "--config", kConfigDir + "/wave_demo.ini", "--set", "wave.levels=0 1 2 3", "--out",
                     dir.string()})
                .code == cli::kExitOk);
    std::ifstream in(dir / "wave_demo.csv");
    const csv::Table table = csv::read(in);
    CHECK(table.header == std::vector<std::string>{"l", "error_sq", "lower_bound"});
    CHECK(table.rows.size() == 4);
    const auto manifest = read_json(dir / "manifest.json");
    CHECK(manifest["lower_bound_holds"] == true);
    CHECK(manifest["overrides"][0] == "wave.levels=0 1 2 3");
    fs::remove_all(dir);
  }

  TEST_CASE("exit codes") {
    const fs::path dir = fresh_dir("codes");
    const std::string good = write_config("good", kSmallSystem);
    RunResult r = run_cli({"converge", "--config", good, "--out", dir.string()});
    CHECK(r.code == cli::kExitConfigError);  // no [study] section
    CHECK(r.err.find("study.n_list") != std::string::npos);

    r = run_cli({"kf", "--config", good, "--set", "system.Q=1", "--set", "bogus.key=1", "--out", dir.string()});
    CHECK(r.code == cli::kExitConfigError);
    CHECK(r.err.find("unknown config key 'bogus.key'") != std::string::npos);

    r = run_cli({"kf", "--config", kConfigDir + "/nope.ini"});
    CHECK(r.code == cli::kExitConfigError);

    r = run_cli({"launch"});
    CHECK(r.code == cli::kExitConfigError);
    r = run_cli({"kf"});
    CHECK(r.code == cli::kExitConfigError);

    // e^{1000 t} overflows inside the filter.
    const std::string big = write_config("big", "[system]\nA = 1000\nC = 1\nR = 1\nP0 = 1\n[study]\nn_list = 2 4\nK_ref = 2\n");
    r = run_cli({"converge", "--config", big, "--out", dir.string()});
    CHECK(r.code == cli::kExitNumericalFailure);
    r = run_cli({"kf", "--config", big, "--out", dir.string()});
    CHECK(r.code == cli::kExitNumericalFailure);

    CHECK(run_cli({"--version"}).code == cli::kExitOk);
    fs::remove(good);
    fs::remove(big);
    fs::remove_all(dir);
  }

  TEST_CASE("installed binary smoke test") {
    const fs::path dir = fresh_dir("smoke");
    const std::string cmd = std::string("\"") + KFRATE_CLI_PATH + "\" bounds --config \"" + kConfigDir +
                            "/unit_bounds.ini\" --out \"" + dir.string() + "\" > /dev/null";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(fs::exists(dir / "bounds.json"));
    const int bad = std::system((std::string("\"") + KFRATE_CLI_PATH + "\" kf 2> /dev/null").c_str());
    REQUIRE(WIFEXITED(bad));
    CHECK(WEXITSTATUS(bad) == 2);
    fs::remove_all(dir);
  }
}
