#pragma once

// Fellegi-Sunter two-class mixture over binary agreement patterns, fitted by
// EM on the pattern histogram of the scored pair universe. Scores are
// posterior link probabilities; the linked set is a greedy one-to-one
// matching over entries above a threshold.
//
// Determinism: histogram construction and scoring run over fixed row chunks
// whose results merge in chunk order, so output is identical for any worker
// count. The EM itself runs on the (order-independent) histogram.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "decoylink/dataset.hpp"

namespace decoylink {

struct EmInit {
  std::optional<std::vector<double>> m0;
  std::optional<std::vector<double>> u0;
  std::optional<double> lambda0;
};

struct EmConfig {
  int max_iter = 500;
  double rel_tol = 1e-6;
  EmInit init;
};

struct FsModel {
  std::vector<double> m;  // P(agree on var k | link)
  std::vector<double> u;  // P(agree on var k | non-link)
  double lambda = 0.0;    // prior link probability of a candidate pair
  std::vector<double> loglik_trace;
  bool degenerate = false;  // a single distinct pattern: lambda unidentifiable
  std::vector<std::size_t> degenerate_variables;  // agreement all-0 or all-1
  bool swapped = false;     // label-swap guard fired after convergence
  int iterations = 0;

  double final_loglik() const {
    return loglik_trace.empty() ? std::numeric_limits<double>::quiet_NaN() : loglik_trace.back();
  }
};

// Histogram over agreement patterns (bit k = agreement on variable k).
struct PatternCounts {
  std::size_t n_vars = 0;
  std::vector<std::int64_t> counts;  // size 2^n_vars
  std::int64_t total = 0;

  std::size_t n_distinct() const {
    std::size_t d = 0;
    for (auto c : counts) d += (c > 0);
    return d;
  }
};

namespace detail {

constexpr double kProbClamp = 1e-10;

inline double clamp01(double p) {
  return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}

template <typename Fn>
void parallel_chunks(std::size_t n, unsigned threads, Fn&& fn) {
  // fixed chunk boundaries; fn(chunk_index, begin, end)
  const std::size_t chunk = 4096;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  if (threads <= 1 || n_chunks <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c)
      fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline std::uint32_t pair_pattern(std::span<const Code> a, std::span<const Code> b,
                                  Code missing, std::size_t k_vars) {
  std::uint32_t pat = 0;
  for (std::size_t k = 0; k < k_vars; ++k)
    if (a[k] == b[k] && a[k] != missing) pat |= (1u << k);
  return pat;
}

}  // namespace detail

inline void check_compatible(const Dataset& a, const Dataset& b) {
  if (!a.schema.same_variables(b.schema)) throw DataError("datasets have mismatching schemas");
  if (a.schema.n_vars() > 24) throw DataError("more than 24 linkage variables is unsupported");
}

inline PatternCounts pattern_histogram(const Dataset& a, const Dataset& b,
                                       const BlockPartition* blocking = nullptr,
                                       unsigned threads = 1) {
  check_compatible(a, b);
  const std::size_t k = a.n_vars();
  const Code miss = a.schema.missing_code;
  PatternCounts pc;
  pc.n_vars = k;
  pc.counts.assign(std::size_t{1} << k, 0);

  auto scan_rows = [&](const std::vector<std::int32_t>* a_rows,
                       const std::vector<std::int32_t>* b_rows) {
    const std::size_t na = a_rows ? a_rows->size() : a.n_rows();
    std::vector<std::vector<std::int64_t>> partial;
    const std::size_t n_chunks = (na + 4095) / 4096;
    partial.assign(n_chunks, {});
    detail::parallel_chunks(na, threads, [&](std::size_t c, std::size_t begin, std::size_t end) {
      std::vector<std::int64_t> local(pc.counts.size(), 0);
      for (std::size_t ai = begin; ai < end; ++ai) {
        auto ra = a.row(a_rows ? static_cast<std::size_t>((*a_rows)[ai]) : ai);
        const std::size_t nb = b_rows ? b_rows->size() : b.n_rows();
        for (std::size_t bj = 0; bj < nb; ++bj) {
          auto rb = b.row(b_rows ? static_cast<std::size_t>((*b_rows)[bj]) : bj);
          ++local[detail::pair_pattern(ra, rb, miss, k)];
        }
      }
      partial[c] = std::move(local);
    });
    for (const auto& local : partial)
      if (!local.empty())
        for (std::size_t g = 0; g < pc.counts.size(); ++g) pc.counts[g] += local[g];
  };

  if (blocking) {
    for (const auto& block : blocking->blocks)
      if (!block.a_rows.empty() && !block.b_rows.empty()) scan_rows(&block.a_rows, &block.b_rows);
  } else {
    scan_rows(nullptr, nullptr);
  }
  for (auto c : pc.counts) pc.total += c;
  return pc;
}

inline double pattern_loglik(const PatternCounts& pc, const std::vector<double>& m,
                             const std::vector<double>& u, double lambda) {
  double ll = 0.0;
  for (std::size_t g = 0; g < pc.counts.size(); ++g) {
    if (pc.counts[g] == 0) continue;
    double pm = lambda, pu = 1.0 - lambda;
    for (std::size_t k = 0; k < pc.n_vars; ++k) {
      bool agree = (g >> k) & 1u;
      pm *= agree ? m[k] : 1.0 - m[k];
      pu *= agree ? u[k] : 1.0 - u[k];
    }
    ll += static_cast<double>(pc.counts[g]) * std::log(pm + pu);
  }
  return ll;
}

// EM on a pattern histogram. Initial values come from cfg.init when given;
// callers fitting from datasets fill in the standard initialisation first.
inline FsModel fit_fs_model(const PatternCounts& pc, const EmConfig& cfg) {
  if (pc.total <= 0) throw DataError("empty pair universe: nothing to fit");
  if (cfg.max_iter < 1) throw ConfigError("em max_iter must be >= 1");
  const std::size_t k = pc.n_vars;

  FsModel model;
  model.m = cfg.init.m0.value_or(std::vector<double>(k, 0.9));
  if (model.m.size() != k) throw ConfigError("em init m0 has wrong length");

  // marginal agreement rate per variable over the full histogram
  std::vector<double> agree_rate(k, 0.0);
  for (std::size_t g = 0; g < pc.counts.size(); ++g)
    for (std::size_t v = 0; v < k; ++v)
      if ((g >> v) & 1u) agree_rate[v] += static_cast<double>(pc.counts[g]);
  for (auto& r : agree_rate) r /= static_cast<double>(pc.total);

  model.u = cfg.init.u0.value_or(agree_rate);
  if (model.u.size() != k) throw ConfigError("em init u0 has wrong length");
  model.lambda = cfg.init.lambda0.value_or(0.01);
  for (auto& p : model.m) p = detail::clamp01(p);
  for (auto& p : model.u) p = detail::clamp01(p);
  model.lambda = detail::clamp01(model.lambda);

  for (std::size_t v = 0; v < k; ++v)
    if (agree_rate[v] <= 0.0 || agree_rate[v] >= 1.0) model.degenerate_variables.push_back(v);
  model.degenerate = pc.n_distinct() <= 1;

  model.loglik_trace.push_back(pattern_loglik(pc, model.m, model.u, model.lambda));

  std::vector<double> w(pc.counts.size());
  for (int it = 0; it < cfg.max_iter; ++it) {
    // E step: posterior link weight per pattern
    for (std::size_t g = 0; g < pc.counts.size(); ++g) {
      if (pc.counts[g] == 0) { w[g] = 0.0; continue; }
      double pm = model.lambda, pu = 1.0 - model.lambda;
      for (std::size_t v = 0; v < k; ++v) {
        bool agree = (g >> v) & 1u;
        pm *= agree ? model.m[v] : 1.0 - model.m[v];
        pu *= agree ? model.u[v] : 1.0 - model.u[v];
      }
      w[g] = pm / (pm + pu);
    }
    // M step
    double wm_total = 0.0;
    std::vector<double> wm_agree(k, 0.0), wu_agree(k, 0.0);
    for (std::size_t g = 0; g < pc.counts.size(); ++g) {
      if (pc.counts[g] == 0) continue;
      double n = static_cast<double>(pc.counts[g]);
      wm_total += n * w[g];
      for (std::size_t v = 0; v < k; ++v)
        if ((g >> v) & 1u) {
          wm_agree[v] += n * w[g];
          wu_agree[v] += n * (1.0 - w[g]);
        }
    }
    double wu_total = static_cast<double>(pc.total) - wm_total;
    model.lambda = detail::clamp01(wm_total / static_cast<double>(pc.total));
    for (std::size_t v = 0; v < k; ++v) {
      model.m[v] = detail::clamp01(wm_total > 0 ? wm_agree[v] / wm_total : model.m[v]);
      model.u[v] = detail::clamp01(wu_total > 0 ? wu_agree[v] / wu_total : model.u[v]);
    }
    double ll = pattern_loglik(pc, model.m, model.u, model.lambda);
    double prev = model.loglik_trace.back();
    model.loglik_trace.push_back(ll);
    model.iterations = it + 1;
    if (std::fabs(ll - prev) <= cfg.rel_tol * (std::fabs(prev) + 1.0)) break;
  }

  double mean_m = mean_of(model.m), mean_u = mean_of(model.u);
  if (mean_m < mean_u) {
    std::swap(model.m, model.u);
    model.lambda = 1.0 - model.lambda;
    model.swapped = true;
  }
  return model;
}

inline FsModel fit_fs_model(const Dataset& a, const Dataset& b, const EmConfig& cfg = {},
                            const BlockPartition* blocking = nullptr, unsigned threads = 1) {
  if (a.n_rows() == 0 || b.n_rows() == 0) throw DataError("cannot fit on an empty dataset");
  PatternCounts pc = pattern_histogram(a, b, blocking, threads);
  EmConfig full = cfg;
  if (!full.init.lambda0) {
    double na = static_cast<double>(a.n_rows()), nb = static_cast<double>(b.n_rows());
    full.init.lambda0 = std::min(na, nb) / (na * nb);
  }
  return fit_fs_model(pc, full);
}

// Posterior link probability for each agreement pattern under the model.
inline std::vector<double> pattern_posteriors(const FsModel& model) {
  const std::size_t k = model.m.size();
  std::vector<double> d(std::size_t{1} << k);
  for (std::size_t g = 0; g < d.size(); ++g) {
    double pm = model.lambda, pu = 1.0 - model.lambda;
    for (std::size_t v = 0; v < k; ++v) {
      bool agree = (g >> v) & 1u;
      pm *= agree ? model.m[v] : 1.0 - model.m[v];
      pu *= agree ? model.u[v] : 1.0 - model.u[v];
    }
    double denom = pm + pu;
    d[g] = denom > 0.0 ? pm / denom : 0.0;
  }
  return d;
}

struct ScoredPair {
  std::int32_t a = 0;
  std::int32_t b = 0;
  double score = 0.0;

  bool operator==(const ScoredPair&) const = default;
};

struct PairScores {
  std::size_t n_a = 0;
  std::size_t n_b = 0;                  // total B rows, synthetic included
  std::vector<ScoredPair> entries;      // ascending (a, b); scores >= storage floor
  std::vector<Origin> origin_of_j;      // size n_b

  std::size_t n_b_real() const {
    std::size_t n = 0;
    for (Origin o : origin_of_j) n += (o == Origin::real);
    return n;
  }
  std::size_t n_synth() const { return n_b - n_b_real(); }
};

struct ScoreConfig {
  double floor = 0.01;  // entries below are omitted; must stay <= 0.5
};

inline PairScores score_pairs(const FsModel& model, const Dataset& a, const Dataset& b,
                              const BlockPartition* blocking = nullptr,
                              const ScoreConfig& score_cfg = {}, unsigned threads = 1) {
  check_compatible(a, b);
  if (model.m.size() != a.n_vars()) throw DataError("model fitted on a different schema");
  if (score_cfg.floor > 0.5) throw ConfigError("score floor must be <= 0.5");
  const std::size_t k = a.n_vars();
  const Code miss = a.schema.missing_code;
  const std::vector<double> dpat = pattern_posteriors(model);

  PairScores ps;
  ps.n_a = a.n_rows();
  ps.n_b = b.n_rows();
  ps.origin_of_j = b.origin;

  auto scan_rows = [&](const std::vector<std::int32_t>* a_rows,
                       const std::vector<std::int32_t>* b_rows,
                       std::vector<std::vector<ScoredPair>>& sink) {
    const std::size_t na = a_rows ? a_rows->size() : a.n_rows();
    const std::size_t n_chunks = (na + 4095) / 4096;
    sink.assign(n_chunks, {});
    detail::parallel_chunks(na, threads, [&](std::size_t c, std::size_t begin, std::size_t end) {
      std::vector<ScoredPair>& local = sink[c];
      for (std::size_t ai = begin; ai < end; ++ai) {
        std::int32_t ia = a_rows ? (*a_rows)[ai] : static_cast<std::int32_t>(ai);
        auto ra = a.row(static_cast<std::size_t>(ia));
        const std::size_t nb = b_rows ? b_rows->size() : b.n_rows();
        for (std::size_t bj = 0; bj < nb; ++bj) {
          std::int32_t jb = b_rows ? (*b_rows)[bj] : static_cast<std::int32_t>(bj);
          double d = dpat[detail::pair_pattern(ra, b.row(static_cast<std::size_t>(jb)), miss, k)];
          if (d >= score_cfg.floor) local.push_back({ia, jb, d});
        }
      }
    });
  };

  std::vector<std::vector<ScoredPair>> sink;
  if (blocking) {
    for (const auto& block : blocking->blocks) {
      if (block.a_rows.empty() || block.b_rows.empty()) continue;
      scan_rows(&block.a_rows, &block.b_rows, sink);
      for (auto& chunk : sink)
        ps.entries.insert(ps.entries.end(), chunk.begin(), chunk.end());
    }
    // per-block scans emit in block order; normalise to ascending (a, b)
    std::sort(ps.entries.begin(), ps.entries.end(), [](const ScoredPair& x, const ScoredPair& y) {
      return x.a != y.a ? x.a < y.a : x.b < y.b;
    });
  } else {
    scan_rows(nullptr, nullptr, sink);
    for (auto& chunk : sink)
      ps.entries.insert(ps.entries.end(), chunk.begin(), chunk.end());
  }
  return ps;
}

struct LinkageResult {
  double xi = 0.5;
  std::vector<ScoredPair> links;        // greedy acceptance order (descending score)
  std::vector<ScoredPair> real_links;   // partition of links by B-side origin
  std::vector<ScoredPair> synth_links;
};

// Greedy one-to-one matching over entries with score > min_threshold, in
// (descending score, ascending a, ascending b) order. Acceptance of an entry
// depends only on earlier entries, so the result at a higher threshold is
// exactly the prefix-filtered result at a lower one (D(xi) nesting).
inline std::vector<ScoredPair> greedy_one_to_one(const PairScores& scores, double min_threshold) {
  std::vector<const ScoredPair*> cand;
  cand.reserve(scores.entries.size());
  for (const auto& e : scores.entries)
    if (e.score > min_threshold) cand.push_back(&e);
  std::sort(cand.begin(), cand.end(), [](const ScoredPair* x, const ScoredPair* y) {
    if (x->score != y->score) return x->score > y->score;
    if (x->a != y->a) return x->a < y->a;
    return x->b < y->b;
  });
  std::vector<std::uint8_t> a_used(scores.n_a, 0), b_used(scores.n_b, 0);
  std::vector<ScoredPair> accepted;
  for (const ScoredPair* e : cand) {
    if (a_used[static_cast<std::size_t>(e->a)] || b_used[static_cast<std::size_t>(e->b)]) continue;
    a_used[static_cast<std::size_t>(e->a)] = 1;
    b_used[static_cast<std::size_t>(e->b)] = 1;
    accepted.push_back(*e);
  }
  return accepted;
}

inline LinkageResult select_links(const PairScores& scores, double xi) {
  if (!(xi >= 0.5 && xi < 1.0)) throw ConfigError("threshold xi must lie in [0.5, 1)");
  LinkageResult res;
  res.xi = xi;
  res.links = greedy_one_to_one(scores, xi);
  for (const auto& link : res.links) {
    if (scores.origin_of_j[static_cast<std::size_t>(link.b)] == Origin::real)
      res.real_links.push_back(link);
    else
      res.synth_links.push_back(link);
  }
  return res;
}

}  // namespace decoylink
