#pragma once

// Sequential-conditional synthesiser for categorical records: one conditional
// frequency table per position in a cardinality-descending variable order,
// additive smoothing, and count-based back-off to shorter contexts. The same
// tables drive sampling and log-density evaluation, so synthetic-data quality
// can be scored by a cross-validated density-ratio AUC.
//
// Contexts are the most recently generated values: backing off drops the
// earliest (highest-cardinality) variables first. A context is usable once it
// was observed at least max_context times in the fitted data; rarer contexts
// fall back to the next shorter one, down to the unconditional marginal.
// missing_code is synthesised like any observed category so that decoys mimic
// the source file's missingness pattern.

#include <algorithm>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "decoylink/dataset.hpp"

namespace decoylink {

struct SynthConfig {
  double gamma = 0.5;     // additive smoothing weight
  int max_context = 400;  // observations a context needs before back-off stops
  std::optional<std::vector<std::string>> variable_order;  // override by name
};

namespace detail {

inline std::string context_key(std::span<const Code> values) {
  std::string key(values.size() * sizeof(Code), '\0');
  if (!values.empty()) std::memcpy(key.data(), values.data(), key.size());
  return key;
}

}  // namespace detail

class Synthesiser {
 public:
  struct Dist {
    std::vector<std::pair<Code, std::int64_t>> counts;  // sorted by code
    std::int64_t total = 0;

    std::int64_t count_of(Code c) const {
      auto it = std::lower_bound(counts.begin(), counts.end(), c,
                                 [](const auto& p, Code code) { return p.first < code; });
      return (it != counts.end() && it->first == c) ? it->second : 0;
    }
  };

  Schema schema;
  std::vector<std::size_t> order;              // generation order -> variable index
  std::vector<std::vector<Code>> supports;     // per position, sorted observed codes
  // tables[p][L]: context of the L most recent generated values -> Dist
  std::vector<std::vector<std::unordered_map<std::string, Dist>>> tables;
  double gamma = 0.5;
  int max_context = 10;

  // Smoothed conditional probability of value x under a dist over support S.
  double smoothed_prob(const Dist& dist, std::size_t position, Code x) const {
    const auto& support = supports[position];
    double denom = static_cast<double>(dist.total) + gamma * static_cast<double>(support.size());
    bool known = std::binary_search(support.begin(), support.end(), x);
    if (known) return (static_cast<double>(dist.count_of(x)) + gamma) / denom;
    // out-of-support values only arise when evaluating foreign records
    double floor_denom = static_cast<double>(dist.total) +
                         gamma * static_cast<double>(support.size() + 1);
    return std::max(gamma, 1e-12) / floor_denom;
  }

  // Longest usable context for `position` given already-chosen prefix values
  // (in generation order). Returns the backed-off distribution.
  const Dist& backoff_dist(std::size_t position, std::span<const Code> prefix) const {
    for (std::size_t len = position; len > 0; --len) {
      const auto& table = tables[position][len];
      auto it = table.find(detail::context_key(prefix.subspan(position - len, len)));
      if (it != table.end()) return it->second;
    }
    return tables[position][0].begin()->second;
  }

  double log_density(std::span<const Code> row) const {
    std::vector<Code> prefix(order.size());
    for (std::size_t p = 0; p < order.size(); ++p) prefix[p] = row[order[p]];
    double ll = 0.0;
    for (std::size_t p = 0; p < order.size(); ++p) {
      const Dist& dist = backoff_dist(p, {prefix.data(), p});
      ll += std::log(std::max(smoothed_prob(dist, p, prefix[p]), 1e-300));
    }
    return ll;
  }
};

inline Synthesiser fit_synthesiser(const Dataset& b, const SynthConfig& cfg = {}) {
  if (b.n_rows() == 0) throw DataError("cannot fit a synthesiser on an empty dataset");
  if (cfg.gamma < 0.0) throw ConfigError("smoothing gamma must be >= 0");
  if (cfg.max_context < 1) throw ConfigError("max_context must be >= 1");
  const std::size_t k = b.n_vars();

  Synthesiser s;
  s.schema = b.schema;
  s.gamma = cfg.gamma;
  s.max_context = cfg.max_context;

  // distinct observed codes per variable (missing included when present)
  std::vector<std::vector<Code>> distinct(k);
  for (std::size_t v = 0; v < k; ++v) {
    std::vector<Code> codes(b.n_rows());
    for (std::size_t r = 0; r < b.n_rows(); ++r) codes[r] = b.at(r, v);
    std::sort(codes.begin(), codes.end());
    codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
    distinct[v] = std::move(codes);
  }

  if (cfg.variable_order) {
    for (const auto& name : *cfg.variable_order) {
      auto idx = b.schema.index_of(name);
      if (!idx) throw ConfigError("variable order names unknown variable '" + name + "'");
      s.order.push_back(*idx);
    }
    if (s.order.size() != k) throw ConfigError("variable order must list every schema variable");
  } else {
    // descending observed cardinality, ties by schema order
    s.order.resize(k);
    for (std::size_t v = 0; v < k; ++v) s.order[v] = v;
    std::stable_sort(s.order.begin(), s.order.end(), [&](std::size_t x, std::size_t y) {
      return distinct[x].size() > distinct[y].size();
    });
  }

  s.supports.resize(k);
  for (std::size_t p = 0; p < k; ++p) s.supports[p] = distinct[s.order[p]];

  s.tables.resize(k);
  std::vector<Code> prefix(k);
  for (std::size_t p = 0; p < k; ++p) {
    s.tables[p].resize(p + 1);
    for (std::size_t len = 0; len <= p; ++len) {
      std::unordered_map<std::string, Synthesiser::Dist> counts;
      for (std::size_t r = 0; r < b.n_rows(); ++r) {
        for (std::size_t q = 0; q < p; ++q) prefix[q] = b.at(r, s.order[q]);
        std::string key = detail::context_key({prefix.data() + (p - len), len});
        auto& dist = counts[key];
        Code value = b.at(r, s.order[p]);
        auto it = std::lower_bound(dist.counts.begin(), dist.counts.end(), value,
                                   [](const auto& c, Code code) { return c.first < code; });
        if (it != dist.counts.end() && it->first == value) ++it->second;
        else dist.counts.insert(it, {value, 1});
        ++dist.total;
      }
      // contexts below the support threshold are never sampled from; keep the
      // unconditional table (len 0) as the last resort regardless
      auto& table = s.tables[p][len];
      for (auto& [key, dist] : counts)
        if (len == 0 || dist.total >= cfg.max_context) table.emplace(key, std::move(dist));
    }
  }
  return s;
}

inline Dataset sample_synthetic(const Synthesiser& s, std::size_t n, std::uint64_t seed) {
  const std::size_t k = s.order.size();
  Dataset out;
  out.schema = s.schema;
  out.codes.reserve(n * k);
  Rng rng(seed);
  std::vector<Code> prefix(k), row(k);
  std::vector<double> weights;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t p = 0; p < k; ++p) {
      const auto& dist = s.backoff_dist(p, {prefix.data(), p});
      const auto& support = s.supports[p];
      weights.assign(support.size(), 0.0);
      for (std::size_t i = 0; i < support.size(); ++i)
        weights[i] = static_cast<double>(dist.count_of(support[i])) + s.gamma;
      prefix[p] = support[rng.discrete(weights)];
      row[s.order[p]] = prefix[p];
    }
    out.append_row(row, Origin::synthetic, "synth:" + std::to_string(r));
  }
  return out;
}

struct SynthQuality {
  double auc = 0.5;
  std::size_t n_real = 0;
  std::size_t n_synth = 0;
};

namespace detail {

inline Dataset subset_rows(const Dataset& ds, const std::vector<std::int32_t>& rows) {
  Dataset out;
  out.schema = ds.schema;
  out.codes.reserve(rows.size() * ds.n_vars());
  for (std::int32_t r : rows)
    out.append_row(ds.row(static_cast<std::size_t>(r)), ds.origin[static_cast<std::size_t>(r)],
                   ds.source_id[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace detail

// Mann-Whitney AUC with midranks for ties; class-1 scores should rank high.
// Flipping every label maps the statistic to exactly 1 - auc.
inline double mann_whitney_auc(std::vector<std::pair<double, int>> scored) {
  std::sort(scored.begin(), scored.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  double rank_sum_1 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  std::size_t i = 0;
  while (i < scored.size()) {
    std::size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (scored[t].second == 1) {
        rank_sum_1 += midrank;
        ++n1;
      } else {
        ++n0;
      }
    }
    i = j;
  }
  if (n1 == 0 || n0 == 0) throw DataError("AUC needs both classes non-empty");
  return (rank_sum_1 - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1)) /
         (static_cast<double>(n1) * static_cast<double>(n0));
}

// Cross-validated density-ratio AUC between two row populations of the same
// schema. Each fold fits one synthesiser per class on the training rows; a
// held-out record scores log p_class1 - log p_class0. Fold assignment is by
// row index within class, so the statistic is invariant under swapping the
// two arguments (the score negates and the positive class flips with it).
inline double density_ratio_auc(const Dataset& class1, const Dataset& class0,
                                std::size_t folds, const SynthConfig& cfg = {}) {
  if (folds < 2) throw ConfigError("cross-validation needs folds >= 2");
  if (class1.n_rows() == 0 || class0.n_rows() == 0)
    throw DataError("AUC needs both classes non-empty");
  if (!class1.schema.same_variables(class0.schema))
    throw DataError("AUC classes have mismatching schemas");

  std::vector<std::pair<double, int>> scored;
  scored.reserve(class1.n_rows() + class0.n_rows());
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::int32_t> train1, train0, held1, held0;
    for (std::size_t r = 0; r < class1.n_rows(); ++r)
      (r % folds == f ? held1 : train1).push_back(static_cast<std::int32_t>(r));
    for (std::size_t r = 0; r < class0.n_rows(); ++r)
      (r % folds == f ? held0 : train0).push_back(static_cast<std::int32_t>(r));
    if (train1.empty() || train0.empty()) throw DataError("fold leaves an empty training class");
    Synthesiser model1 = fit_synthesiser(detail::subset_rows(class1, train1), cfg);
    Synthesiser model0 = fit_synthesiser(detail::subset_rows(class0, train0), cfg);
    for (std::int32_t r : held1) {
      auto row = class1.row(static_cast<std::size_t>(r));
      scored.push_back({model1.log_density(row) - model0.log_density(row), 1});
    }
    for (std::int32_t r : held0) {
      auto row = class0.row(static_cast<std::size_t>(r));
      scored.push_back({model1.log_density(row) - model0.log_density(row), 0});
    }
  }
  return mann_whitney_auc(std::move(scored));
}

inline SynthQuality synth_quality_auc(const Dataset& real, const Dataset& synthetic,
                                      std::size_t folds, const SynthConfig& cfg = {}) {
  SynthQuality q;
  q.n_real = real.n_rows();
  q.n_synth = synthetic.n_rows();
  q.auc = density_ratio_auc(real, synthetic, folds, cfg);
  return q;
}

}  // namespace decoylink
