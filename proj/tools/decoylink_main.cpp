// decoylink command-line tool.
//
// Subcommands: simulate, synthesize, link, estimate-fdp, evaluate.
// Configuration is a flat dotted-key file (--config), overridable with
// key=value tokens; every run echoes its resolved configuration to a
// manifest in the output directory.
//
// Exit codes: 0 completed (including "linkage not reliable" findings),
// 2 configuration error, 3 input/data error, 4 internal numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "decoylink/config.hpp"
#include "decoylink/csv.hpp"
#include "decoylink/dataset.hpp"
#include "decoylink/evaluate.hpp"
#include "decoylink/fdp.hpp"
#include "decoylink/linker.hpp"
#include "decoylink/simulate.hpp"
#include "decoylink/synthesis.hpp"

namespace fs = std::filesystem;
using namespace decoylink;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
  std::optional<std::int64_t> seed;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat dotted-key configuration file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "seed override (config key 'seed')");
  cmd->add_option("--threads", args.threads, "worker pool size");
  cmd->add_option("overrides", args.overrides, "key=value configuration overrides");
}

Config resolve_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config{} : Config::from_file(args.config_path);
  for (const auto& token : args.overrides) cfg.apply_override(token);
  if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  cfg.set("out", args.out_dir);
  cfg.set("threads", std::to_string(args.threads));
  return cfg;
}

std::string out_path(const CommonArgs& args, const std::string& name) {
  fs::create_directories(args.out_dir);
  return (fs::path(args.out_dir) / name).string();
}

std::string opt_str(const std::optional<double>& v) {
  return v ? format_double(*v) : "NA";
}

void write_model_summary(const FsModel& model, const Schema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "lambda = " << format_double(model.lambda) << "\n";
  out << "iterations = " << model.iterations << "\n";
  out << "final_loglik = " << format_double(model.final_loglik()) << "\n";
  out << "label_swap_applied = " << (model.swapped ? "yes" : "no") << "\n";
  out << "degenerate = " << (model.degenerate ? "yes" : "no") << "\n";
  for (std::size_t v = 0; v < model.m.size(); ++v)
    out << "m." << schema.variables[v].name << " = " << format_double(model.m[v]) << "\n";
  for (std::size_t v = 0; v < model.u.size(); ++v)
    out << "u." << schema.variables[v].name << " = " << format_double(model.u[v]) << "\n";
  for (std::size_t v : model.degenerate_variables)
    out << "warning = variable '" << schema.variables[v].name
        << "' shows no agreement variation; probabilities clamped\n";
}

void write_linked_pairs(const std::vector<ScoredPair>& links, const Dataset& a,
                        const Dataset& b, const std::string& path) {
  CsvWriter out(path);
  out.row({"a_id", "b_id", "score", "b_origin"});
  for (const auto& link : links)
    out.row({a.source_id[static_cast<std::size_t>(link.a)],
             b.source_id[static_cast<std::size_t>(link.b)], format_double(link.score),
             origin_name(b.origin[static_cast<std::size_t>(link.b)])});
}

int cmd_simulate(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  SimulationSpec spec = simulation_spec_from_config(cfg);
  SimOutput sim = generate_population(spec);

  Codebook cb = identity_codebook(sim.a.schema);
  write_dataset(sim.a, cb, out_path(args, "A.csv"));
  write_dataset(sim.b, cb, out_path(args, "B.csv"));
  write_truth(sim.truth, sim.a, sim.b, out_path(args, "truth.csv"));

  cfg.set("resolved.n_links", std::to_string(sim.truth.n_links()));
  cfg.set("resolved.achieved_discrimination", format_double(sim.achieved_discrimination));
  for (std::size_t v = 0; v < sim.cardinalities.size(); ++v)
    cfg.set("resolved.cardinality." + spec.variables[v].name,
            std::to_string(sim.cardinalities[v]));
  cfg.write_manifest(out_path(args, "manifest.txt"));
  std::cout << "simulate: wrote A.csv (" << sim.a.n_rows() << " rows), B.csv ("
            << sim.b.n_rows() << " rows), truth.csv; discrimination "
            << format_double(sim.achieved_discrimination) << "\n";
  return 0;
}

int cmd_synthesize(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  Schema schema = schema_from_config(cfg);
  Codebook cb(schema.n_vars());
  Dataset b = load_dataset(cfg.get_string("input.b"), schema, cb, Origin::real);
  SynthConfig sc = synth_config_from_config(cfg);
  std::uint64_t seed = cfg.get_seed("seed");
  std::size_t n = static_cast<std::size_t>(cfg.get_int(
      "synth.n",
      std::llround(cfg.get_double("fdp.alpha", 0.10) * static_cast<double>(b.n_rows()))));

  Synthesiser synth = fit_synthesiser(b, sc);
  Dataset sampled = sample_synthetic(synth, n, seed);
  write_dataset(sampled, cb, out_path(args, "synthetic.csv"), /*with_origin=*/true);
  cfg.write_manifest(out_path(args, "manifest.txt"));
  std::cout << "synthesize: wrote synthetic.csv (" << sampled.n_rows() << " rows)\n";
  return 0;
}

int cmd_link(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  Schema schema = schema_from_config(cfg);
  Codebook cb(schema.n_vars());
  auto [a, b] = load_pair(cfg.get_string("input.a"), cfg.get_string("input.b"), schema, cb);
  LinkerConfig lc = linker_config_from_config(cfg);
  double xi = cfg.get_double("linker.xi", 0.5);

  std::optional<BlockPartition> blocks;
  if (cfg.has("blocking.variable"))
    blocks = block_datasets(a, b, cfg.get_string("blocking.variable"));
  const BlockPartition* blocks_ptr = blocks ? &*blocks : nullptr;

  FsModel model = fit_fs_model(a, b, lc.em, blocks_ptr, args.threads);
  PairScores scores = score_pairs(model, a, b, blocks_ptr, lc.score, args.threads);
  LinkageResult links = select_links(scores, xi);

  write_linked_pairs(links.links, a, b, out_path(args, "linked_pairs.csv"));
  write_model_summary(model, a.schema, out_path(args, "model_summary.txt"));
  cfg.write_manifest(out_path(args, "manifest.txt"));
  if (blocks)
    std::cout << "link: " << blocks->unblocked_a.size() << " A rows and "
              << blocks->unblocked_b.size() << " B rows carry a missing blocking value\n";
  std::cout << "link: " << links.links.size() << " pairs at xi = " << format_double(xi) << "\n";
  return 0;
}

void write_curve_csv(const FdpCurve& curve, const std::string& path) {
  CsvWriter out(path);
  out.row({"xi", "n_real_linked", "fp_synth", "fdp_hat", "prob_fdp", "fdp_hat_synth",
           "exceeds_one"});
  for (const auto& row : curve.rows)
    out.row({format_double(row.xi), std::to_string(row.n_real_linked),
             std::to_string(row.fp_synth), opt_str(row.fdp_hat), opt_str(row.prob_fdp),
             opt_str(row.fdp_hat_synth), row.exceeds_one ? "1" : "0"});
}

int cmd_estimate_fdp(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  Schema schema = schema_from_config(cfg);
  Codebook cb(schema.n_vars());
  auto [a, b] = load_pair(cfg.get_string("input.a"), cfg.get_string("input.b"), schema, cb);

  ProcedureConfig pc;
  pc.linker = linker_config_from_config(cfg);
  pc.synth = synth_config_from_config(cfg);
  pc.fdp = fdp_config_from_config(cfg);
  if (cfg.has("blocking.variable")) pc.blocking_variable = cfg.get_string("blocking.variable");
  // spend the worker pool on repeats when there are several, else on pair chunks
  if (pc.fdp.repeats > 1 && args.threads > 1) {
    pc.repeat_workers = args.threads;
    pc.threads = 1;
  } else {
    pc.threads = args.threads;
  }

  DecoySampler sampler;  // default: fitted synthesiser
  std::string decoy_mode = cfg.get_string("fdp.decoy_mode", "synthesiser");
  if (decoy_mode == "copy_linking_a") {
    // validation harness: decoys copied from A records known to link; any
    // resulting estimate above 1 must raise the bias flag
    std::vector<std::string> ids_a;
    GroundTruth truth = read_truth(cfg.get_string("fdp.truth"), nullptr, nullptr, &ids_a);
    std::vector<std::int32_t> linking;
    std::unordered_map<std::string, std::size_t> row_of_id;
    for (std::size_t r = 0; r < a.n_rows(); ++r) row_of_id[a.source_id[r]] = r;
    for (std::size_t i = 0; i < ids_a.size(); ++i) {
      if (!truth.linked_entities.count(truth.entity_a[i])) continue;
      auto it = row_of_id.find(ids_a[i]);
      if (it != row_of_id.end()) linking.push_back(static_cast<std::int32_t>(it->second));
    }
    if (linking.empty()) throw DataError("no linking A records found for corrupted decoys");
    Dataset a_copy = a;
    sampler = [a_copy, linking](const Dataset&, std::size_t n, std::uint64_t seed) {
      Rng rng(seed);
      Dataset out;
      out.schema = a_copy.schema;
      for (std::size_t i = 0; i < n; ++i) {
        std::int32_t row = linking[rng.below(linking.size())];
        out.append_row(a_copy.row(static_cast<std::size_t>(row)), Origin::synthetic,
                       "synth:" + std::to_string(i));
      }
      return out;
    };
  } else if (decoy_mode != "synthesiser") {
    throw ConfigError("unknown fdp.decoy_mode '" + decoy_mode + "'");
  }

  ProcedureResult result = run_procedure(a, b, pc, sampler);

  for (std::size_t r = 0; r < result.repeats.size(); ++r) {
    const auto& rep = result.repeats[r];
    if (rep.ok)
      write_curve_csv(rep.curve, out_path(args, "fdp_curve_r" + std::to_string(r + 1) + ".csv"));
  }
  {
    CsvWriter out(out_path(args, "fdp_aggregate.csv"));
    out.row({"xi", "estimate", "stderr", "n_valid", "bias_flag_rate", "sd"});
    for (const auto& row : result.aggregate.rows)
      out.row({format_double(row.xi), opt_str(row.estimate), opt_str(row.stderr_),
               std::to_string(row.n_valid), format_double(row.bias_flag_rate),
               opt_str(row.sd)});
  }

  // recommendation report
  std::ofstream report(out_path(args, "report.txt"));
  report << "decoylink estimate-fdp report\n";
  report << "repeats = " << pc.fdp.repeats << " (failed: " << result.n_failed() << ")\n";
  for (const auto& rep : result.repeats)
    if (!rep.ok) report << "repeat " << rep.repeat << " failed: " << rep.error << "\n";
  std::int64_t n_b_real = 0, n_synth = 0;
  for (const auto& rep : result.repeats)
    if (rep.ok) {
      n_b_real = rep.curve.n_b;
      n_synth = rep.curve.n_synth;
      break;
    }
  report << "n_b = " << n_b_real << ", n_synth = " << n_synth
         << ", alpha = " << format_double(pc.fdp.alpha) << "\n";
  report << "aggregation = " << aggregation_name(pc.fdp.rule) << "\n";
  report << "target_fdp = " << format_double(pc.fdp.target_fdp) << "\n";
  double max_flag_rate = 0.0;
  for (const auto& row : result.aggregate.rows)
    max_flag_rate = std::max(max_flag_rate, row.bias_flag_rate);
  if (max_flag_rate > 0.0)
    report << "warning = estimates above 1 occurred (max bias_flag_rate "
           << format_double(max_flag_rate)
           << "); this indicates bias in the synthetic records\n";
  std::optional<double> chosen_xi;
  for (const auto& row : result.aggregate.rows)
    if (row.estimate && *row.estimate <= pc.fdp.target_fdp) {
      chosen_xi = row.xi;
      // mean real linked-set size at the recommended threshold
      std::vector<double> sizes;
      for (const auto& rep : result.repeats)
        if (rep.ok)
          for (const auto& curve_row : rep.curve.rows)
            if (curve_row.xi == row.xi)
              sizes.push_back(static_cast<double>(curve_row.n_real_linked));
      report << "recommended_xi = " << format_double(row.xi) << " (estimate "
             << opt_str(row.estimate) << ", mean linked-set size "
             << format_double(mean_of(sizes)) << ")\n";
      break;
    }
  if (!chosen_xi)
    report << "recommended_xi = none; no threshold on the grid meets the target, "
              "the linkage is not reliable at this target\n";
  cfg.write_manifest(out_path(args, "manifest.txt"));
  std::cout << "estimate-fdp: wrote " << (pc.fdp.repeats - result.n_failed())
            << " curve files, fdp_aggregate.csv, report.txt\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  std::vector<std::string> ids_a, ids_b;
  GroundTruth truth = read_truth(cfg.get_string("input.truth"), nullptr, nullptr, &ids_a, &ids_b);
  std::unordered_map<std::string, std::int64_t> entity_a, entity_b;
  for (std::size_t i = 0; i < ids_a.size(); ++i) entity_a.emplace(ids_a[i], truth.entity_a[i]);
  for (std::size_t i = 0; i < ids_b.size(); ++i) entity_b.emplace(ids_b[i], truth.entity_b[i]);

  CsvTable links_table = read_csv(cfg.get_string("input.links"));
  auto col = [&](const char* name) {
    auto c = links_table.column(name);
    if (!c) throw DataError("links file misses column '" + std::string(name) + "'");
    return *c;
  };
  std::size_t c_a = col("a_id"), c_b = col("b_id"), c_score = col("score"),
              c_origin = col("b_origin");

  struct LinkRow {
    std::int64_t ea, eb;
    double score;
  };
  std::vector<LinkRow> rows;
  for (const auto& row : links_table.rows) {
    if (row[c_origin] == "synthetic") continue;  // decoy pairs are not evaluated
    auto ia = entity_a.find(row[c_a]);
    if (ia == entity_a.end()) throw DataError("linked id '" + row[c_a] + "' is not in truth file A");
    auto ib = entity_b.find(row[c_b]);
    if (ib == entity_b.end()) throw DataError("linked id '" + row[c_b] + "' is not in truth file B");
    rows.push_back({ia->second, ib->second, std::stod(row[c_score])});
  }

  // optional per-repeat curve files for estimator bias columns
  std::vector<FdpCurve> curves;
  if (cfg.has("input.curves")) {
    for (const std::string& path : cfg.get_list("input.curves")) {
      CsvTable t = read_csv(path);
      auto cxi = t.column("xi"), chat = t.column("fdp_hat");
      if (!cxi || !chat) throw DataError(path + " is not a fdp curve file");
      FdpCurve curve;
      for (const auto& r : t.rows) {
        FdpRow row;
        row.xi = std::stod(r[*cxi]);
        if (r[*chat] != "NA") row.fdp_hat = std::stod(r[*chat]);
        curve.rows.push_back(row);
      }
      curves.push_back(std::move(curve));
    }
  }

  FdpConfig grid_cfg = fdp_config_from_config(cfg);
  CsvWriter out(out_path(args, "assessment.csv"));
  out.row({"xi", "tp", "fp", "fn", "true_fdp", "sensitivity", "fdp_hat_bias", "prob_fdp_bias",
           "rmse", "fnp", "n_curves"});
  std::ofstream summary(out_path(args, "summary.txt"));
  summary << "evaluate: " << rows.size() << " real linked pairs against "
          << truth.n_links() << " true links\n";
  for (double xi : grid_cfg.xi_grid) {
    Confusion c;
    c.xi = xi;
    std::unordered_set<std::int64_t> hit;
    double one_minus_d = 0.0;
    std::int64_t kept = 0;
    for (const auto& row : rows) {
      if (!(row.score > xi)) continue;
      ++kept;
      one_minus_d += 1.0 - row.score;
      if (row.ea == row.eb && truth.linked_entities.count(row.ea)) {
        ++c.tp;
        hit.insert(row.ea);
      } else {
        ++c.fp;
      }
    }
    c.fn = static_cast<std::int64_t>(truth.n_links()) - static_cast<std::int64_t>(hit.size());
    auto tf = true_fdp(c);
    auto sens = sensitivity(c);
    auto fnp = false_negative_proportion(c);
    std::optional<double> prob = kept > 0 ? std::optional<double>(one_minus_d / kept) : std::nullopt;
    std::optional<double> bias, rmse, prob_bias;
    int n_used = 0;
    if (tf) {
      if (prob) prob_bias = *prob - *tf;
      if (!curves.empty()) {
        std::vector<double> ests;
        for (const auto& curve : curves)
          for (const auto& r : curve.rows)
            if (r.xi == xi && r.fdp_hat) ests.push_back(*r.fdp_hat);
        n_used = static_cast<int>(ests.size());
        if (!ests.empty()) {
          bias = mean_of(ests) - *tf;
          double sq = 0.0;
          for (double e : ests) sq += (e - *tf) * (e - *tf);
          rmse = std::sqrt(sq / static_cast<double>(ests.size()));
        }
      }
    }
    out.row({format_double(xi), std::to_string(c.tp), std::to_string(c.fp), std::to_string(c.fn),
             opt_str(tf), opt_str(sens), opt_str(bias), opt_str(prob_bias), opt_str(rmse),
             opt_str(fnp), std::to_string(n_used)});
  }
  cfg.write_manifest(out_path(args, "manifest.txt"));
  std::cout << "evaluate: wrote assessment.csv, summary.txt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"record linkage with decoy-based false-discovery estimation"};
  app.require_subcommand(1);

  CommonArgs sim_args, synth_args, link_args, fdp_args, eval_args;
  add_common(app.add_subcommand("simulate", "generate a ground-truth file pair"), sim_args);
  add_common(app.add_subcommand("synthesize", "sample synthetic records from file B"), synth_args);
  add_common(app.add_subcommand("link", "fit the linker and emit linked pairs"), link_args);
  add_common(app.add_subcommand("estimate-fdp", "run the decoy procedure end to end"), fdp_args);
  add_common(app.add_subcommand("evaluate", "score linked pairs against ground truth"), eval_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("simulate")) return cmd_simulate(sim_args);
    if (app.got_subcommand("synthesize")) return cmd_synthesize(synth_args);
    if (app.got_subcommand("link")) return cmd_link(link_args);
    if (app.got_subcommand("estimate-fdp")) return cmd_estimate_fdp(fdp_args);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(eval_args);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
