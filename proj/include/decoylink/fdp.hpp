#pragma once

// Decoy-based false-discovery estimation: augment file B with synthetic
// records, re-link, count linked decoys, and turn them into FDP estimates
// with repeat aggregation and bias flags.
//
// Estimators, with n_b real B rows and n_synth decoys:
//   fdp_hat        = fp_synth * (n_b / n_synth) / n_real_linked
//   prob_fdp       = mean of (1 - d) over real linked pairs
//   fdp_hat_synth  = fp_synth * (1 + n_b / n_synth) / n_all_linked
//     (FDP of the augmented task; biased for the real-data FDP, reported for
//      comparison only)
// An estimate above 1 contradicts the estimator's validity condition, so the
// row carries an exceeds_one flag and repeats aggregate a bias_flag_rate.
//
// Synthetic rows are placed at seeded-uniform positions of the augmented
// file rather than appended: the one-to-one selection breaks score ties by
// row index, and decoys must be exchangeable with real rows under that
// tie-break for fp_synth to estimate the real false-positive rate.

#include <algorithm>
#include <functional>
#include <future>
#include <string>
#include <vector>

#include "decoylink/linker.hpp"
#include "decoylink/synthesis.hpp"

namespace decoylink {

enum class Aggregation { mean_min1, truncated_mean, median };

inline const char* aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::mean_min1: return "mean_min1";
    case Aggregation::truncated_mean: return "truncated_mean";
    case Aggregation::median: return "median";
  }
  return "?";
}

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean_min1") return Aggregation::mean_min1;
  if (s == "truncated_mean") return Aggregation::truncated_mean;
  if (s == "median") return Aggregation::median;
  throw ConfigError("unknown aggregation rule '" + s + "'");
}

inline std::vector<double> default_xi_grid() {
  std::vector<double> grid(50);
  for (int i = 0; i < 50; ++i) grid[static_cast<std::size_t>(i)] = (50 + i) / 100.0;
  return grid;
}

struct FdpConfig {
  double alpha = 0.10;                       // synthetic fraction of n_b
  std::vector<double> xi_grid = default_xi_grid();
  int repeats = 10;
  std::uint64_t seed_base = 0;
  Aggregation rule = Aggregation::mean_min1;
  double target_fdp = 0.10;                  // drives the recommendation report

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 0.20))
      throw ConfigError("alpha must lie in (0, 0.20]");
    if (xi_grid.empty()) throw ConfigError("xi grid is empty");
    for (std::size_t i = 0; i < xi_grid.size(); ++i) {
      if (!(xi_grid[i] >= 0.5 && xi_grid[i] < 1.0))
        throw ConfigError("xi grid values must lie in [0.5, 1)");
      if (i > 0 && !(xi_grid[i] > xi_grid[i - 1]))
        throw ConfigError("xi grid must be strictly ascending");
    }
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
  }
};

// Canonical estimator arithmetic. Tests recompute these expressions from the
// stored counts and compare for exact equality, so the evaluation order here
// is part of the contract.
inline double fdp_hat_value(std::int64_t fp_synth, std::int64_t n_b, std::int64_t n_synth,
                            std::int64_t n_real_linked) {
  return static_cast<double>(fp_synth) *
         (static_cast<double>(n_b) / static_cast<double>(n_synth)) /
         static_cast<double>(n_real_linked);
}

inline std::optional<double> fdp_hat_synth(std::int64_t fp_synth, std::int64_t n_b,
                                           std::int64_t n_synth, std::int64_t n_all_linked) {
  if (n_all_linked <= 0) return std::nullopt;
  return static_cast<double>(fp_synth) *
         (1.0 + static_cast<double>(n_b) / static_cast<double>(n_synth)) /
         static_cast<double>(n_all_linked);
}

// Mean of (1 - d) over the real linked pairs of a selection, in acceptance
// order; undefined when no real pair is linked.
inline std::optional<double> prob_fdp(const PairScores& scores, double xi,
                                      const LinkageResult& links) {
  (void)scores;
  if (links.xi != xi) throw ConfigError("links were not selected at the given xi");
  if (links.real_links.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& link : links.real_links) sum += 1.0 - link.score;
  return sum / static_cast<double>(links.real_links.size());
}

// Signed gap between synthetic and real false-positive proportions; needs
// ground truth for fp_true, evaluation use only.
inline double condition_gap(std::int64_t fp_synth, std::int64_t fp_true, std::int64_t n_a,
                            std::int64_t n_b, std::int64_t n_synth) {
  return static_cast<double>(fp_synth) / (static_cast<double>(n_a) * static_cast<double>(n_synth)) -
         static_cast<double>(fp_true) / (static_cast<double>(n_a) * static_cast<double>(n_b));
}

struct FdpRow {
  double xi = 0.5;
  std::int64_t n_real_linked = 0;
  std::int64_t fp_synth = 0;
  std::optional<double> fdp_hat;        // undefined when n_real_linked == 0
  std::optional<double> prob_fdp;
  std::optional<double> fdp_hat_synth;  // undefined when nothing linked
  bool exceeds_one = false;
};

struct FdpCurve {
  std::vector<FdpRow> rows;
  std::int64_t n_b = 0;      // real B rows
  std::int64_t n_synth = 0;  // decoys in the scored universe
};

// Merges a decoy set into B at seeded-uniform positions, preserving each
// side's relative order. Deterministic given seed.
inline Dataset merge_decoys(const Dataset& b, const Dataset& decoy_set, std::uint64_t seed) {
  if (!b.schema.same_variables(decoy_set.schema))
    throw DataError("decoy set does not match the schema of B");
  const std::size_t n_synth = decoy_set.n_rows();
  const std::size_t total = b.n_rows() + n_synth;
  std::vector<std::uint8_t> is_synth(total, 0);
  Rng rng(mix_seed(seed, 0x5eedULL));
  // uniform subset of positions for the decoys (selection sampling)
  std::size_t remaining = n_synth;
  for (std::size_t pos = 0; pos < total && remaining > 0; ++pos) {
    if (rng.below(total - pos) < remaining) {
      is_synth[pos] = 1;
      --remaining;
    }
  }
  Dataset out;
  out.schema = b.schema;
  out.codes.reserve(total * b.n_vars());
  std::size_t next_real = 0, next_synth = 0;
  for (std::size_t pos = 0; pos < total; ++pos) {
    if (is_synth[pos]) {
      out.append_row(decoy_set.row(next_synth), Origin::synthetic,
                     decoy_set.source_id[next_synth]);
      ++next_synth;
    } else {
      out.append_row(b.row(next_real), b.origin[next_real], b.source_id[next_real]);
      ++next_real;
    }
  }
  return out;
}

// Returns B with round(alpha * n_b) synthesised decoys merged in.
inline Dataset augment_b(const Dataset& b, const Synthesiser& s, double alpha,
                         std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha <= 0.20)) throw ConfigError("alpha must lie in (0, 0.20]");
  const std::size_t n_synth =
      static_cast<std::size_t>(std::llround(alpha * static_cast<double>(b.n_rows())));
  return merge_decoys(b, sample_synthetic(s, n_synth, seed), seed);
}

inline FdpCurve fdp_curve(const PairScores& scores, const std::vector<double>& xi_grid) {
  if (xi_grid.empty()) throw ConfigError("xi grid is empty");
  for (std::size_t i = 0; i < xi_grid.size(); ++i) {
    if (!(xi_grid[i] >= 0.5 && xi_grid[i] < 1.0))
      throw ConfigError("xi grid values must lie in [0.5, 1)");
    if (i > 0 && !(xi_grid[i] > xi_grid[i - 1]))
      throw ConfigError("xi grid must be strictly ascending");
  }
  FdpCurve curve;
  curve.n_b = static_cast<std::int64_t>(scores.n_b_real());
  curve.n_synth = static_cast<std::int64_t>(scores.n_b) - curve.n_b;
  if (curve.n_synth < 1)
    throw ConfigError("scored universe carries no synthetic rows; nothing to estimate from");

  // one greedy pass at the smallest threshold; higher thresholds are prefix
  // filters of the same acceptance sequence
  std::vector<ScoredPair> accepted = greedy_one_to_one(scores, xi_grid.front());

  for (double xi : xi_grid) {
    FdpRow row;
    row.xi = xi;
    double real_score_sum = 0.0;
    for (const auto& link : accepted) {
      if (!(link.score > xi)) continue;
      if (scores.origin_of_j[static_cast<std::size_t>(link.b)] == Origin::real) {
        ++row.n_real_linked;
        real_score_sum += 1.0 - link.score;
      } else {
        ++row.fp_synth;
      }
    }
    if (row.n_real_linked > 0) {
      row.fdp_hat = fdp_hat_value(row.fp_synth, curve.n_b, curve.n_synth, row.n_real_linked);
      row.prob_fdp = real_score_sum / static_cast<double>(row.n_real_linked);
    }
    row.fdp_hat_synth =
        fdp_hat_synth(row.fp_synth, curve.n_b, curve.n_synth, row.n_real_linked + row.fp_synth);
    row.exceeds_one = row.fdp_hat.has_value() && *row.fdp_hat > 1.0;
    curve.rows.push_back(row);
  }
  return curve;
}

struct LinkerConfig {
  EmConfig em;
  ScoreConfig score;
};

struct AggregatedRow {
  double xi = 0.5;
  std::optional<double> estimate;
  std::optional<double> sd;       // sample sd of per-repeat estimates
  std::optional<double> stderr_;  // sd / sqrt(n_valid)
  int n_valid = 0;
  double bias_flag_rate = 0.0;    // share of valid repeats with fdp_hat > 1
};

struct AggregatedFdp {
  Aggregation rule = Aggregation::mean_min1;
  std::vector<AggregatedRow> rows;
};

struct RepeatOutcome {
  int repeat = 0;
  bool ok = false;
  std::string error;
  FdpCurve curve;
};

struct ProcedureResult {
  std::vector<RepeatOutcome> repeats;
  AggregatedFdp aggregate;

  int n_failed() const {
    int n = 0;
    for (const auto& r : repeats) n += !r.ok;
    return n;
  }
};

inline AggregatedFdp aggregate_curves(const std::vector<const FdpCurve*>& curves,
                                      const std::vector<double>& xi_grid, Aggregation rule) {
  AggregatedFdp agg;
  agg.rule = rule;
  for (std::size_t xi_idx = 0; xi_idx < xi_grid.size(); ++xi_idx) {
    AggregatedRow row;
    row.xi = xi_grid[xi_idx];
    std::vector<double> estimates;
    int flagged = 0;
    for (const FdpCurve* curve : curves) {
      const FdpRow& r = curve->rows[xi_idx];
      if (!r.fdp_hat) continue;
      estimates.push_back(*r.fdp_hat);
      flagged += r.exceeds_one;
    }
    row.n_valid = static_cast<int>(estimates.size());
    if (row.n_valid > 0) {
      row.bias_flag_rate = static_cast<double>(flagged) / static_cast<double>(row.n_valid);
      std::vector<double> values;
      switch (rule) {
        case Aggregation::mean_min1:
          for (double e : estimates) values.push_back(std::min(e, 1.0));
          if (!values.empty()) row.estimate = mean_of(values);
          break;
        case Aggregation::truncated_mean:
          for (double e : estimates)
            if (e <= 1.0) values.push_back(e);
          if (!values.empty()) row.estimate = mean_of(values);
          break;
        case Aggregation::median:
          values = estimates;
          row.estimate = std::min(median_of(values), 1.0);
          break;
      }
      if (values.size() >= 2) {
        row.sd = sample_sd(values);
        row.stderr_ = *row.sd / std::sqrt(static_cast<double>(values.size()));
      }
    }
    agg.rows.push_back(std::move(row));
  }
  return agg;
}

// Supplies the decoy set for one repeat; the default fits the synthesiser on
// B and samples from it. Evaluation harnesses substitute oracle or
// deliberately corrupted samplers here.
using DecoySampler =
    std::function<Dataset(const Dataset& b, std::size_t n_synth, std::uint64_t seed)>;

inline DecoySampler synthesiser_decoys(const SynthConfig& cfg) {
  return [cfg](const Dataset& b, std::size_t n, std::uint64_t seed) {
    return sample_synthetic(fit_synthesiser(b, cfg), n, seed);
  };
}

struct ProcedureConfig {
  LinkerConfig linker;
  SynthConfig synth;
  FdpConfig fdp;
  std::optional<std::string> blocking_variable;
  unsigned threads = 1;
  unsigned repeat_workers = 1;  // repeats run concurrently; results are seed-keyed
};

// Algorithm: per repeat r = 1..R, draw decoys with seed_base + r, merge into
// B, refit the linker on (A, augmented B) over the blocked pair universe, and
// compute the threshold curve. Failed repeats are recorded and excluded.
inline ProcedureResult run_procedure(const Dataset& a, const Dataset& b,
                                     const ProcedureConfig& cfg,
                                     DecoySampler decoys = {}) {
  cfg.fdp.validate();
  if (a.n_rows() == 0 || b.n_rows() == 0) throw DataError("empty input dataset");
  if (!decoys) decoys = synthesiser_decoys(cfg.synth);
  const std::size_t n_synth =
      static_cast<std::size_t>(std::llround(cfg.fdp.alpha * static_cast<double>(b.n_rows())));
  if (n_synth < 1) throw ConfigError("alpha * n_b rounds to zero synthetic records");

  auto run_repeat = [&](int r) -> RepeatOutcome {
    RepeatOutcome outcome;
    outcome.repeat = r;
    try {
      const std::uint64_t seed = cfg.fdp.seed_base + static_cast<std::uint64_t>(r);
      Dataset decoy_set = decoys(b, n_synth, seed);
      if (decoy_set.n_rows() != n_synth) throw DataError("decoy sampler returned a wrong count");
      Dataset augmented = merge_decoys(b, decoy_set, seed);

      std::optional<BlockPartition> blocks;
      if (cfg.blocking_variable)
        blocks = block_datasets(a, augmented, *cfg.blocking_variable);
      const BlockPartition* blocks_ptr = blocks ? &*blocks : nullptr;

      FsModel model = fit_fs_model(a, augmented, cfg.linker.em, blocks_ptr, cfg.threads);
      PairScores scores =
          score_pairs(model, a, augmented, blocks_ptr, cfg.linker.score, cfg.threads);
      outcome.curve = fdp_curve(scores, cfg.fdp.xi_grid);
      outcome.ok = true;
    } catch (const std::exception& e) {
      outcome.ok = false;
      outcome.error = e.what();
    }
    return outcome;
  };

  ProcedureResult result;
  result.repeats.resize(static_cast<std::size_t>(cfg.fdp.repeats));
  if (cfg.repeat_workers > 1 && cfg.fdp.repeats > 1) {
    std::vector<std::future<RepeatOutcome>> futures;
    for (int r = 1; r <= cfg.fdp.repeats; ++r)
      futures.push_back(std::async(std::launch::async, run_repeat, r));
    for (int r = 0; r < cfg.fdp.repeats; ++r)
      result.repeats[static_cast<std::size_t>(r)] = futures[static_cast<std::size_t>(r)].get();
  } else {
    for (int r = 1; r <= cfg.fdp.repeats; ++r)
      result.repeats[static_cast<std::size_t>(r - 1)] = run_repeat(r);
  }

  std::vector<const FdpCurve*> curves;
  for (const auto& rep : result.repeats)
    if (rep.ok) curves.push_back(&rep.curve);
  if (curves.empty()) throw NumericError("every repeat of the procedure failed");
  result.aggregate = aggregate_curves(curves, cfg.fdp.xi_grid, cfg.fdp.rule);
  return result;
}

}  // namespace decoylink
