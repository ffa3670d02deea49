#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "decoylink/config.hpp"

using namespace decoylink;
namespace fs = std::filesystem;

namespace {

fs::path temp_config(const std::string& content) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / "decoylink_config_tests";
  fs::create_directories(dir);
  fs::path path = dir / ("cfg" + std::to_string(counter++) + ".txt");
  std::ofstream out(path);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("flat dotted-key files parse with comments and whitespace") {
  auto path = temp_config(
      "# run configuration\n"
      "fdp.alpha = 0.10\n"
      "  schema.variables = sex:2, region : 20\n"
      "\n"
      "seed=7\n");
  Config cfg = Config::from_file(path.string());
  CHECK(cfg.get_double("fdp.alpha") == 0.10);
  CHECK(cfg.get_seed("seed") == 7);
  auto list = cfg.get_list("schema.variables");
  REQUIRE(list.size() == 2);
  CHECK(list[0] == "sex:2");
}

TEST_CASE("overrides replace file values") {
  auto path = temp_config("fdp.alpha = 0.10\n");
  Config cfg = Config::from_file(path.string());
  cfg.apply_override("fdp.alpha=0.05");
  CHECK(cfg.get_double("fdp.alpha") == 0.05);
  CHECK_THROWS_AS(cfg.apply_override("not-an-assignment"), ConfigError);
}

TEST_CASE("typed getters validate their input") {
  Config cfg;
  cfg.set("x", "abc");
  CHECK_THROWS_AS(cfg.get_double("x"), ConfigError);
  CHECK_THROWS_AS(cfg.get_int("x"), ConfigError);
  CHECK_THROWS_AS(cfg.get_string("missing"), ConfigError);
  CHECK(cfg.get_double("missing", 1.5) == 1.5);
  cfg.set("seed", "-3");
  CHECK_THROWS_AS(cfg.get_seed("seed"), ConfigError);
}

TEST_CASE("schema parses name:cardinality entries") {
  Config cfg;
  cfg.set("schema.variables", "sex:2, region:20, byear");
  Schema schema = schema_from_config(cfg);
  REQUIRE(schema.n_vars() == 3);
  CHECK(schema.variables[0].name == "sex");
  CHECK(schema.variables[0].cardinality == 2);
  CHECK(schema.variables[2].cardinality == 1);
}

TEST_CASE("simulation spec resolves defaults and validates") {
  Config cfg;
  cfg.set("sim.n_a", "100");
  cfg.set("sim.n_b", "300");
  cfg.set("seed", "11");
  SimulationSpec spec = simulation_spec_from_config(cfg);
  CHECK(spec.variables.size() == 5);
  CHECK(spec.mechanism == LinkMechanism::at_random);
  cfg.set("sim.overlap", "1.5");
  CHECK_THROWS_WITH(simulation_spec_from_config(cfg),
                    Catch::Matchers::ContainsSubstring("overlap"));
}

TEST_CASE("fdp config builds the default grid and custom ranges") {
  Config cfg;
  cfg.set("seed", "1");
  FdpConfig fc = fdp_config_from_config(cfg);
  REQUIRE(fc.xi_grid.size() == 50);
  CHECK(fc.xi_grid.front() == 0.5);
  CHECK(fc.xi_grid.back() == 0.99);
  cfg.set("fdp.xi_min", "0.5");
  cfg.set("fdp.xi_max", "0.7");
  cfg.set("fdp.xi_step", "0.1");
  FdpConfig custom = fdp_config_from_config(cfg);
  REQUIRE(custom.xi_grid.size() == 3);
  cfg.set("fdp.aggregation", "nonsense");
  CHECK_THROWS_AS(fdp_config_from_config(cfg), ConfigError);
}

TEST_CASE("manifest echoes every resolved key") {
  Config cfg;
  cfg.set("b.key", "2");
  cfg.set("a.key", "1");
  fs::path dir = fs::temp_directory_path() / "decoylink_config_tests";
  fs::create_directories(dir);
  auto path = (dir / "manifest.txt").string();
  cfg.write_manifest(path);
  std::ifstream in(path);
  std::string line1, line2;
  std::getline(in, line1);
  std::getline(in, line2);
  CHECK(line1 == "a.key = 1");
  CHECK(line2 == "b.key = 2");
}
