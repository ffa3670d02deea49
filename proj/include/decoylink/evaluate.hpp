#pragma once

// Ground-truth evaluation: confusion counts per threshold, true FDP/FNP and
// sensitivity, the exact-match baseline, estimator bias/RMSE assessment, the
// link-vs-non-link AUC, and a small OLS used by the downstream inference demo.
//
// TP counting is entity-based, so a link to any member of a duplicated
// entity's group counts as a true positive; FN counts linked entities with no
// accepted true link.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "decoylink/fdp.hpp"
#include "decoylink/linker.hpp"
#include "decoylink/simulate.hpp"
#include "decoylink/synthesis.hpp"

namespace decoylink {

struct Confusion {
  double xi = 0.5;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

inline std::optional<double> true_fdp(const Confusion& c) {
  if (c.tp + c.fp <= 0) return std::nullopt;
  return static_cast<double>(c.fp) / static_cast<double>(c.tp + c.fp);
}

inline std::optional<double> sensitivity(const Confusion& c) {
  if (c.tp + c.fn <= 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline std::optional<double> false_negative_proportion(const Confusion& c) {
  if (c.tp + c.fn <= 0) return std::nullopt;
  return static_cast<double>(c.fn) / static_cast<double>(c.tp + c.fn);
}

// Confusion of a set of real linked pairs against ground truth. Pairs must
// exclude synthetic records (the caller partitions by origin first); row
// identity is resolved through source ids, so B may be an augmented or
// reordered view of the generated file. An id the truth does not know is an
// input error naming the id.
inline Confusion confusion_at(const std::vector<ScoredPair>& real_links, const Dataset& a,
                              const Dataset& b, const GroundTruth& truth, double xi) {
  Confusion c;
  c.xi = xi;
  std::unordered_set<std::int64_t> hit_entities;
  for (const auto& link : real_links) {
    std::int64_t ea = truth.entity_of(a.source_id[static_cast<std::size_t>(link.a)], true);
    std::int64_t eb = truth.entity_of(b.source_id[static_cast<std::size_t>(link.b)], false);
    if (ea == eb && truth.linked_entities.count(ea)) {
      ++c.tp;
      hit_entities.insert(ea);
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::int64_t>(truth.n_links()) -
         static_cast<std::int64_t>(hit_entities.size());
  return c;
}

// Pairs agreeing on every variable (both sides non-missing), resolved
// one-to-one by ascending (i, j) among the agreeing candidates.
inline Confusion exact_match_baseline(const Dataset& a, const Dataset& b,
                                      const GroundTruth& truth) {
  check_compatible(a, b);
  const std::size_t k = a.n_vars();
  const Code miss = a.schema.missing_code;
  std::map<std::vector<Code>, std::vector<std::int32_t>> b_by_tuple;
  for (std::size_t r = 0; r < b.n_rows(); ++r) {
    auto row = b.row(r);
    bool has_missing = false;
    for (std::size_t v = 0; v < k; ++v) has_missing |= row[v] == miss;
    if (!has_missing)
      b_by_tuple[std::vector<Code>(row.begin(), row.end())].push_back(
          static_cast<std::int32_t>(r));
  }
  std::vector<ScoredPair> matched;
  std::unordered_map<const std::vector<std::int32_t>*, std::size_t> next_free;
  for (std::size_t r = 0; r < a.n_rows(); ++r) {
    auto row = a.row(r);
    bool has_missing = false;
    for (std::size_t v = 0; v < k; ++v) has_missing |= row[v] == miss;
    if (has_missing) continue;
    auto it = b_by_tuple.find(std::vector<Code>(row.begin(), row.end()));
    if (it == b_by_tuple.end()) continue;
    std::size_t& cursor = next_free[&it->second];
    if (cursor < it->second.size()) {
      matched.push_back({static_cast<std::int32_t>(r), it->second[cursor], 1.0});
      ++cursor;
    }
  }
  return confusion_at(matched, a, b, truth, 0.5);
}

// Cross-validated AUC separating B rows that form a link from those that do
// not, using the same density-ratio classifier as the synthetic-data check.
inline std::optional<double> auc_link(const Dataset& b, const GroundTruth& truth,
                                      std::size_t folds = 5, const SynthConfig& cfg = {}) {
  std::vector<std::int32_t> linking, other;
  for (std::size_t r = 0; r < b.n_rows(); ++r)
    (truth.linked_entities.count(truth.entity_b[r]) ? linking : other)
        .push_back(static_cast<std::int32_t>(r));
  if (linking.empty() || other.empty()) return std::nullopt;
  return density_ratio_auc(detail::subset_rows(b, linking), detail::subset_rows(b, other),
                           folds, cfg);
}

struct AssessmentRow {
  double xi = 0.5;
  double true_fdp = 0.0;
  std::optional<double> mean_estimate;
  std::optional<double> bias;
  std::optional<double> rmse;
  std::optional<double> stderr_;
  int n_used = 0;
  int n_excluded = 0;  // repeats with an undefined estimate at this threshold
};

struct EstimatorAssessment {
  std::vector<AssessmentRow> rows;
};

inline EstimatorAssessment assess_estimator(const std::vector<const FdpCurve*>& curves,
                                            const std::vector<double>& truth_fdp_per_xi) {
  if (curves.empty()) throw DataError("assessment needs at least one curve");
  const std::size_t n_xi = curves.front()->rows.size();
  if (truth_fdp_per_xi.size() != n_xi)
    throw DataError("true-FDP vector does not match the curve grid");
  EstimatorAssessment out;
  for (std::size_t i = 0; i < n_xi; ++i) {
    AssessmentRow row;
    row.xi = curves.front()->rows[i].xi;
    row.true_fdp = truth_fdp_per_xi[i];
    std::vector<double> estimates;
    for (const FdpCurve* curve : curves) {
      const auto& r = curve->rows[i];
      if (r.fdp_hat) estimates.push_back(*r.fdp_hat);
      else ++row.n_excluded;
    }
    row.n_used = static_cast<int>(estimates.size());
    if (!estimates.empty()) {
      row.mean_estimate = mean_of(estimates);
      row.bias = *row.mean_estimate - row.true_fdp;
      double sq = 0.0;
      for (double e : estimates) sq += (e - row.true_fdp) * (e - row.true_fdp);
      row.rmse = std::sqrt(sq / static_cast<double>(estimates.size()));
      if (estimates.size() >= 2)
        row.stderr_ = sample_sd(estimates) / std::sqrt(static_cast<double>(estimates.size()));
      else
        row.stderr_ = 0.0;
    }
    out.rows.push_back(row);
  }
  return out;
}

struct OlsFit {
  std::vector<double> coefficients;    // intercept first
  std::vector<double> standard_errors;
  double r_squared = 0.0;
  std::size_t n = 0;
  bool rank_deficient = false;
};

// Ordinary least squares with an intercept; normal equations, falling back to
// the SVD pseudo-inverse (minimum-norm solution) when X'X is rank deficient.
inline OlsFit ols(const std::vector<std::vector<double>>& covariates,
                  const std::vector<double>& outcome) {
  const std::size_t n = outcome.size();
  if (covariates.size() != n) throw DataError("covariate and outcome lengths differ");
  const std::size_t p = n == 0 ? 0 : covariates.front().size() + 1;
  if (n <= p || p < 2) throw DataError("regression needs more observations than parameters");

  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) {
    x(static_cast<Eigen::Index>(r), 0) = 1.0;
    if (covariates[r].size() + 1 != p) throw DataError("ragged covariate matrix");
    for (std::size_t c = 0; c + 1 < p; ++c)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c + 1)) = covariates[r][c];
    y(static_cast<Eigen::Index>(r)) = outcome[r];
  }
  if (x.cwiseAbs().maxCoeff() == 0.0) throw DataError("all-zero design matrix");

  Eigen::MatrixXd xtx = x.transpose() * x;
  Eigen::VectorXd xty = x.transpose() * y;

  OlsFit fit;
  fit.n = n;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(xtx, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double tol = 1e-10 * svd.singularValues()(0) * static_cast<double>(p);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    rank += svd.singularValues()(i) > tol;
  fit.rank_deficient = rank < static_cast<Eigen::Index>(p);

  Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < rank; ++i)
    pinv += svd.matrixV().col(i) * svd.matrixU().col(i).transpose() / svd.singularValues()(i);
  Eigen::VectorXd beta = pinv * xty;

  Eigen::VectorXd resid = y - x * beta;
  double rss = resid.squaredNorm();
  double tss = (y.array() - y.mean()).square().sum();
  fit.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  double dof = static_cast<double>(n) - static_cast<double>(rank);
  double s2 = dof > 0.0 ? rss / dof : 0.0;
  for (std::size_t c = 0; c < p; ++c) {
    fit.coefficients.push_back(beta(static_cast<Eigen::Index>(c)));
    fit.standard_errors.push_back(
        std::sqrt(std::max(0.0, s2 * pinv(static_cast<Eigen::Index>(c),
                                          static_cast<Eigen::Index>(c)))));
  }
  return fit;
}

// Covariates on A rows and outcomes on B rows for the inference demo:
// links get Y = -5 + X1 + X2 + 20*X3 + noise from the A-side covariates,
// non-link outcomes are inverse-transform draws from the link outcomes' ECDF.
struct PlantedOutcomes {
  std::vector<std::array<double, 3>> covariates_a;  // per A row
  std::vector<double> outcome_b;                    // per B row
  static constexpr double kIntercept = -5.0;
  static constexpr std::array<double, 3> kSlopes{1.0, 1.0, 20.0};
};

inline PlantedOutcomes plant_outcomes(const Dataset& a, const Dataset& b,
                                      const GroundTruth& truth, std::uint64_t seed,
                                      double noise_sd = 1.0) {
  PlantedOutcomes planted;
  Rng rng(seed);
  planted.covariates_a.resize(a.n_rows());
  for (auto& x : planted.covariates_a) {
    x[0] = rng.normal(0.0, 1.0);
    x[1] = rng.normal(0.0, 3.0);
    x[2] = rng.beta(0.2, 0.1) - 2.0 / 3.0;
  }
  std::unordered_map<std::int64_t, std::size_t> a_row_of_entity;
  for (std::size_t r = 0; r < a.n_rows(); ++r)
    if (truth.linked_entities.count(truth.entity_a[r]))
      a_row_of_entity.emplace(truth.entity_a[r], r);

  planted.outcome_b.assign(b.n_rows(), 0.0);
  std::vector<double> link_outcomes;
  std::vector<std::size_t> nonlink_rows;
  for (std::size_t r = 0; r < b.n_rows(); ++r) {
    auto it = a_row_of_entity.find(truth.entity_b[r]);
    if (it != a_row_of_entity.end()) {
      const auto& x = planted.covariates_a[it->second];
      planted.outcome_b[r] = PlantedOutcomes::kIntercept + x[0] + x[1] + 20.0 * x[2] +
                             (noise_sd > 0.0 ? rng.normal(0.0, noise_sd) : 0.0);
      link_outcomes.push_back(planted.outcome_b[r]);
    } else {
      nonlink_rows.push_back(r);
    }
  }
  if (!link_outcomes.empty()) {
    std::sort(link_outcomes.begin(), link_outcomes.end());
    for (std::size_t r : nonlink_rows) {
      // inverse-transform sampling from the link outcomes' empirical CDF
      std::size_t idx = static_cast<std::size_t>(rng.below(link_outcomes.size()));
      planted.outcome_b[r] = link_outcomes[idx];
    }
  }
  return planted;
}

struct InferenceDemoResult {
  OlsFit fit;
};

inline InferenceDemoResult inference_demo(const std::vector<ScoredPair>& linked,
                                          const PlantedOutcomes& planted) {
  if (linked.empty()) throw DataError("inference demo needs a non-empty linked set");
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& link : linked) {
    const auto& cov = planted.covariates_a[static_cast<std::size_t>(link.a)];
    x.push_back({cov[0], cov[1], cov[2]});
    y.push_back(planted.outcome_b[static_cast<std::size_t>(link.b)]);
  }
  return {ols(x, y)};
}

}  // namespace decoylink
