// Integration tests that drive the built CLI binary end to end.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "decoylink/csv.hpp"

using namespace decoylink;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
};

RunResult run_cli(const std::string& args, const fs::path& log) {
  std::string cmd = std::string(DECOYLINK_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return {WEXITSTATUS(rc)};
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "decoylink_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string simulate_args(const fs::path& out, int n_a, int n_b, const std::string& extra = "") {
  return "simulate --out " + out.string() + " --seed 42 sim.n_a=" + std::to_string(n_a) +
         " sim.n_b=" + std::to_string(n_b) + " sim.overlap=0.5 " + extra;
}

const std::string kSchema = "schema.variables=v1,v2,v3,v4,v5";

}  // namespace

TEST_CASE("simulate writes the file set and is byte-reproducible") {
  auto out1 = fresh_dir("sim1");
  auto out2 = fresh_dir("sim2");
  REQUIRE(run_cli(simulate_args(out1, 120, 260), out1 / "log.txt").exit_code == 0);
  for (const char* f : {"A.csv", "B.csv", "truth.csv", "manifest.txt"})
    REQUIRE(fs::exists(out1 / f));
  REQUIRE(run_cli(simulate_args(out2, 120, 260), out2 / "log.txt").exit_code == 0);
  CHECK(slurp(out1 / "A.csv") == slurp(out2 / "A.csv"));
  CHECK(slurp(out1 / "B.csv") == slurp(out2 / "B.csv"));
  CHECK(slurp(out1 / "truth.csv") == slurp(out2 / "truth.csv"));
}

TEST_CASE("simulate rejects invalid overlap with exit code 2 naming the field") {
  auto out = fresh_dir("sim_bad");
  auto res = run_cli(simulate_args(out, 50, 100, "sim.overlap=1.5"), out / "log.txt");
  CHECK(res.exit_code == 2);
  CHECK(slurp(out / "log.txt").find("overlap") != std::string::npos);
}

TEST_CASE("link emits one-to-one pairs nested across thresholds") {
  auto sim = fresh_dir("link_sim");
  REQUIRE(run_cli(simulate_args(sim, 150, 300), sim / "log.txt").exit_code == 0);
  auto lo = fresh_dir("link_lo");
  auto hi = fresh_dir("link_hi");
  std::string common = " --seed 1 " + kSchema + " input.a=" + (sim / "A.csv").string() +
                       " input.b=" + (sim / "B.csv").string();
  REQUIRE(run_cli("link --out " + lo.string() + common + " linker.xi=0.5", lo / "log.txt")
              .exit_code == 0);
  REQUIRE(run_cli("link --out " + hi.string() + common + " linker.xi=0.9", hi / "log.txt")
              .exit_code == 0);
  CsvTable lo_pairs = read_csv((lo / "linked_pairs.csv").string());
  CsvTable hi_pairs = read_csv((hi / "linked_pairs.csv").string());
  REQUIRE(lo_pairs.header ==
          std::vector<std::string>{"a_id", "b_id", "score", "b_origin"});
  // one-to-one
  std::set<std::string> a_ids, b_ids, lo_keys;
  for (const auto& row : lo_pairs.rows) {
    REQUIRE(a_ids.insert(row[0]).second);
    REQUIRE(b_ids.insert(row[1]).second);
    lo_keys.insert(row[0] + "|" + row[1]);
  }
  // nesting
  for (const auto& row : hi_pairs.rows) REQUIRE(lo_keys.count(row[0] + "|" + row[1]) == 1);
  CHECK(fs::exists(lo / "model_summary.txt"));
}

TEST_CASE("link respects blocking") {
  auto sim = fresh_dir("block_sim");
  REQUIRE(run_cli(simulate_args(sim, 120, 250), sim / "log.txt").exit_code == 0);
  auto out = fresh_dir("block_link");
  std::string args = "link --out " + out.string() + " --seed 1 " + kSchema +
                     " input.a=" + (sim / "A.csv").string() +
                     " input.b=" + (sim / "B.csv").string() + " blocking.variable=v5";
  REQUIRE(run_cli(args, out / "log.txt").exit_code == 0);
  // no cross-block pair: linked records must agree on v5
  CsvTable a = read_csv((sim / "A.csv").string());
  CsvTable b = read_csv((sim / "B.csv").string());
  auto a_v5 = *a.column("v5");
  auto b_v5 = *b.column("v5");
  auto a_id = *a.column("id");
  auto b_id = *b.column("id");
  std::map<std::string, std::string> va, vb;
  for (const auto& row : a.rows) va[row[a_id]] = row[a_v5];
  for (const auto& row : b.rows) vb[row[b_id]] = row[b_v5];
  CsvTable pairs = read_csv((out / "linked_pairs.csv").string());
  for (const auto& row : pairs.rows) REQUIRE(va.at(row[0]) == vb.at(row[1]));
}

TEST_CASE("synthesize emits rows in the input format with an origin column") {
  auto sim = fresh_dir("synth_sim");
  REQUIRE(run_cli(simulate_args(sim, 80, 200), sim / "log.txt").exit_code == 0);
  auto out = fresh_dir("synth_out");
  std::string args = "synthesize --out " + out.string() + " --seed 3 " + kSchema +
                     " input.b=" + (sim / "B.csv").string() + " synth.n=40";
  REQUIRE(run_cli(args, out / "log.txt").exit_code == 0);
  CsvTable synth = read_csv((out / "synthetic.csv").string());
  REQUIRE(synth.rows.size() == 40);
  auto origin = synth.column("origin");
  REQUIRE(origin);
  for (const auto& row : synth.rows) REQUIRE(row[*origin] == "synthetic");
  for (const char* v : {"v1", "v2", "v3", "v4", "v5"}) REQUIRE(synth.column(v));
}

TEST_CASE("estimate-fdp writes curves, aggregate, and report, reproducibly") {
  auto sim = fresh_dir("fdp_sim");
  REQUIRE(run_cli(simulate_args(sim, 150, 350), sim / "log.txt").exit_code == 0);
  auto out1 = fresh_dir("fdp_out1");
  auto out2 = fresh_dir("fdp_out2");
  std::string common = " --seed 5 " + kSchema + " input.a=" + (sim / "A.csv").string() +
                       " input.b=" + (sim / "B.csv").string() +
                       " fdp.repeats=2 fdp.xi_min=0.5 fdp.xi_max=0.9 fdp.xi_step=0.1";
  REQUIRE(run_cli("estimate-fdp --out " + out1.string() + common, out1 / "log.txt").exit_code == 0);
  REQUIRE(run_cli("estimate-fdp --out " + out2.string() + common, out2 / "log.txt").exit_code == 0);
  for (const char* f : {"fdp_curve_r1.csv", "fdp_curve_r2.csv", "fdp_aggregate.csv", "report.txt"})
    REQUIRE(fs::exists(out1 / f));
  CHECK(slurp(out1 / "fdp_curve_r1.csv") == slurp(out2 / "fdp_curve_r1.csv"));
  CHECK(slurp(out1 / "fdp_aggregate.csv") == slurp(out2 / "fdp_aggregate.csv"));
  CsvTable agg = read_csv((out1 / "fdp_aggregate.csv").string());
  REQUIRE(agg.header == std::vector<std::string>{"xi", "estimate", "stderr", "n_valid",
                                                 "bias_flag_rate", "sd"});
}

TEST_CASE("estimate-fdp on a perfect-information pair reports near-zero estimates") {
  auto sim = fresh_dir("fdp_perfect");
  std::string extra = "sim.overlap=1.0 sim.error_rate=0 sim.missing_rate=0 "
                      "sim.vars=v1:40:uniform,v2:40:uniform,v3:40:uniform,v4:40:uniform,v5:40:uniform";
  REQUIRE(run_cli(simulate_args(sim, 200, 200, extra), sim / "log.txt").exit_code == 0);
  auto out = fresh_dir("fdp_perfect_out");
  std::string args = "estimate-fdp --out " + out.string() + " --seed 5 " + kSchema +
                     " input.a=" + (sim / "A.csv").string() +
                     " input.b=" + (sim / "B.csv").string() +
                     " fdp.repeats=3 fdp.xi_min=0.5 fdp.xi_max=0.9 fdp.xi_step=0.2";
  REQUIRE(run_cli(args, out / "log.txt").exit_code == 0);
  CsvTable agg = read_csv((out / "fdp_aggregate.csv").string());
  for (const auto& row : agg.rows) {
    if (row[1] == "NA") continue;
    CHECK(std::stod(row[1]) <= 0.05);
  }
}

TEST_CASE("corrupted decoys surface in the report") {
  auto sim = fresh_dir("fdp_corrupt_sim");
  REQUIRE(run_cli(simulate_args(sim, 200, 500, "sim.overlap=0.7"), sim / "log.txt").exit_code == 0);
  auto out = fresh_dir("fdp_corrupt_out");
  std::string args = "estimate-fdp --out " + out.string() + " --seed 5 " + kSchema +
                     " input.a=" + (sim / "A.csv").string() +
                     " input.b=" + (sim / "B.csv").string() +
                     " fdp.repeats=3 fdp.decoy_mode=copy_linking_a fdp.truth=" +
                     (sim / "truth.csv").string() +
                     " fdp.xi_min=0.5 fdp.xi_max=0.6 fdp.xi_step=0.05";
  REQUIRE(run_cli(args, out / "log.txt").exit_code == 0);
  std::string report = slurp(out / "report.txt");
  CHECK(report.find("bias_flag_rate") != std::string::npos);
  CsvTable agg = read_csv((out / "fdp_aggregate.csv").string());
  bool flagged = false;
  for (const auto& row : agg.rows) flagged |= std::stod(row[4]) > 0.0;
  CHECK(flagged);
}

TEST_CASE("evaluate scores an oracle links file at zero FDP") {
  auto sim = fresh_dir("eval_sim");
  REQUIRE(run_cli(simulate_args(sim, 100, 220), sim / "log.txt").exit_code == 0);
  // construct the oracle linked_pairs.csv from truth.csv
  CsvTable truth = read_csv((sim / "truth.csv").string());
  auto c_file = *truth.column("file");
  auto c_id = *truth.column("id");
  auto c_entity = *truth.column("entity_id");
  auto c_links = *truth.column("links");
  std::map<std::string, std::string> a_of_entity, b_of_entity;
  for (const auto& row : truth.rows) {
    if (row[c_links] != "1") continue;
    (row[c_file] == "A" ? a_of_entity : b_of_entity)[row[c_entity]] = row[c_id];
  }
  auto links_path = sim / "oracle_links.csv";
  {
    CsvWriter out(links_path.string());
    out.row({"a_id", "b_id", "score", "b_origin"});
    for (const auto& [entity, aid] : a_of_entity)
      out.row({aid, b_of_entity.at(entity), "0.99", "real"});
  }
  auto out = fresh_dir("eval_out");
  std::string args = "evaluate --out " + out.string() + " --seed 1 input.truth=" +
                     (sim / "truth.csv").string() + " input.links=" + links_path.string() +
                     " fdp.xi_min=0.5 fdp.xi_max=0.9 fdp.xi_step=0.2";
  REQUIRE(run_cli(args, out / "log.txt").exit_code == 0);
  CsvTable assessment = read_csv((out / "assessment.csv").string());
  auto c_fdp = *assessment.column("true_fdp");
  auto c_fn = *assessment.column("fn");
  for (const auto& row : assessment.rows) {
    CHECK(std::stod(row[c_fdp]) == 0.0);
    CHECK(row[c_fn] == "0");
  }
}

TEST_CASE("evaluate reports every miss for an empty links file") {
  auto sim = fresh_dir("eval_empty");
  REQUIRE(run_cli(simulate_args(sim, 100, 220), sim / "log.txt").exit_code == 0);
  auto links_path = sim / "empty_links.csv";
  {
    CsvWriter out(links_path.string());
    out.row({"a_id", "b_id", "score", "b_origin"});
  }
  auto out = fresh_dir("eval_empty_out");
  std::string args = "evaluate --out " + out.string() + " --seed 1 input.truth=" +
                     (sim / "truth.csv").string() + " input.links=" + links_path.string();
  REQUIRE(run_cli(args, out / "log.txt").exit_code == 0);
  CsvTable assessment = read_csv((out / "assessment.csv").string());
  auto c_fn = *assessment.column("fn");
  CHECK(assessment.rows.front()[c_fn] == "50");  // round(0.5 * 100)
}

TEST_CASE("evaluate rejects unknown ids with exit code 3 naming the id") {
  auto sim = fresh_dir("eval_badid");
  REQUIRE(run_cli(simulate_args(sim, 60, 120), sim / "log.txt").exit_code == 0);
  auto links_path = sim / "bad_links.csv";
  {
    CsvWriter out(links_path.string());
    out.row({"a_id", "b_id", "score", "b_origin"});
    out.row({"no-such-row", "0", "0.9", "real"});
  }
  auto out = fresh_dir("eval_badid_out");
  std::string args = "evaluate --out " + out.string() + " --seed 1 input.truth=" +
                     (sim / "truth.csv").string() + " input.links=" + links_path.string();
  auto res = run_cli(args, out / "log.txt");
  CHECK(res.exit_code == 3);
  CHECK(slurp(out / "log.txt").find("no-such-row") != std::string::npos);
}

TEST_CASE("config file plus overrides drive a run") {
  auto sim = fresh_dir("cfgfile_sim");
  auto cfg_path = sim / "run.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "sim.n_a = 90\n"
        << "sim.n_b = 180\n"
        << "sim.overlap = 0.4\n"
        << "seed = 8\n";
  }
  REQUIRE(run_cli("simulate --config " + cfg_path.string() + " --out " + sim.string() +
                      " sim.overlap=0.5",
                  sim / "log.txt")
              .exit_code == 0);
  std::string manifest = slurp(sim / "manifest.txt");
  CHECK(manifest.find("sim.overlap = 0.5") != std::string::npos);
  CsvTable truth = read_csv((sim / "truth.csv").string());
  // overlap 0.5 of 90 -> 45 linked entities
  auto c_links = *truth.column("links");
  auto c_file = *truth.column("file");
  int links = 0;
  for (const auto& row : truth.rows) links += row[c_file] == "A" && row[c_links] == "1";
  CHECK(links == 45);
}
