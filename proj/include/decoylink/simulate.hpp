#pragma once

// Ground-truth simulation: two overlapping files drawn from a product of
// categorical marginals, with controlled overlap, discrimination level,
// link mechanism, registration errors, missingness, and duplicates.
//
// Linking entities appear in both files; each file's remaining rows are
// fresh entities. Under at_random the linking subset is exchangeable with
// the rest; under depends_on_variables it is drawn with probability
// proportional to (1 + c)^tilt on the first variable's category index c, so
// links and non-links differ in distribution (tilt = 1 is a linear tilt,
// the default 8 gives the near-separable regime).
//
// Registration errors resample a linked copy's value from the variable's
// marginal, independently per file copy. Missingness applies to every row of
// both files. Duplicate injection copies post-error rows.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "decoylink/dataset.hpp"

namespace decoylink {

struct MarginalShape {
  enum class Kind { uniform, geometric, linear } kind = Kind::uniform;
  double param = 1.0;  // geometric: decay ratio; linear: weight of the last category

  std::vector<double> render(int cardinality) const {
    std::vector<double> p(static_cast<std::size_t>(cardinality));
    for (int c = 0; c < cardinality; ++c) {
      double w = 1.0;
      switch (kind) {
        case Kind::uniform: w = 1.0; break;
        case Kind::geometric: w = std::pow(param, c); break;
        case Kind::linear:
          w = cardinality == 1
                  ? 1.0
                  : 1.0 + (param - 1.0) * static_cast<double>(c) / (cardinality - 1);
          break;
      }
      p[static_cast<std::size_t>(c)] = std::max(w, 1e-12);
    }
    double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& x : p) x /= total;
    return p;
  }
};

inline MarginalShape parse_shape(const std::string& text) {
  auto colon = text.find(':');
  std::string kind = text.substr(0, colon);
  double param = colon == std::string::npos ? 1.0 : std::stod(text.substr(colon + 1));
  if (kind == "uniform") return {MarginalShape::Kind::uniform, 1.0};
  if (kind == "geometric") return {MarginalShape::Kind::geometric, param};
  if (kind == "linear") return {MarginalShape::Kind::linear, param};
  throw ConfigError("unknown marginal shape '" + text + "'");
}

struct SimVariable {
  std::string name;
  int cardinality = 2;
  MarginalShape shape;
  double error_rate = 0.0;    // per-file chance a linked copy's value is resampled
  double missing_rate = 0.0;  // per-row chance the cell is missing
};

enum class LinkMechanism { at_random, depends_on_variables };

struct SimulationSpec {
  std::size_t n_a = 2000;
  std::size_t n_b = 5000;
  std::vector<SimVariable> variables;
  double overlap = 0.35;                  // fraction of min(n_a, n_b) that links
  std::optional<double> discr_target;     // calibrate cardinalities when set
  LinkMechanism mechanism = LinkMechanism::at_random;
  double link_tilt = 8.0;
  double duplicate_rate = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_a == 0 || n_b == 0) throw ConfigError("file sizes must be positive");
    if (variables.empty()) throw ConfigError("simulation needs at least one variable");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw ConfigError("overlap must lie in [0, 1]");
    if (discr_target && !(*discr_target > 0.0 && *discr_target <= 1.0))
      throw ConfigError("discr_target must lie in (0, 1]");
    if (!(duplicate_rate >= 0.0 && duplicate_rate <= 0.5))
      throw ConfigError("duplicate_rate must lie in [0, 0.5]");
    if (link_tilt < 0.0) throw ConfigError("link_tilt must be >= 0");
    for (const auto& v : variables) {
      if (v.cardinality < 1) throw ConfigError("variable '" + v.name + "' has cardinality < 1");
      if (!(v.error_rate >= 0.0 && v.error_rate <= 1.0))
        throw ConfigError("error_rate must lie in [0, 1]");
      if (!(v.missing_rate >= 0.0 && v.missing_rate <= 1.0))
        throw ConfigError("missing_rate must lie in [0, 1]");
    }
  }

  Schema schema() const {
    Schema s;
    for (const auto& v : variables) s.variables.push_back({v.name, v.cardinality});
    return s;
  }

  // Five variables with distinct distributions, highest cardinality first.
  static SimulationSpec standard(std::size_t n_a, std::size_t n_b, std::uint64_t seed,
                                 double error_rate = 0.005, double missing_rate = 0.002) {
    SimulationSpec spec;
    spec.n_a = n_a;
    spec.n_b = n_b;
    spec.seed = seed;
    spec.variables = {
        {"v1", 10, {MarginalShape::Kind::uniform, 1.0}, error_rate, missing_rate},
        {"v2", 8, {MarginalShape::Kind::geometric, 0.9}, error_rate, missing_rate},
        {"v3", 6, {MarginalShape::Kind::geometric, 0.8}, error_rate, missing_rate},
        {"v4", 4, {MarginalShape::Kind::linear, 0.2}, error_rate, missing_rate},
        {"v5", 2, {MarginalShape::Kind::uniform, 1.0}, error_rate, missing_rate},
    };
    return spec;
  }
};

struct GroundTruth {
  std::vector<std::int64_t> entity_a;  // aligned with the rows of the generated files
  std::vector<std::int64_t> entity_b;
  std::vector<std::int32_t> dup_of_a;  // source row when duplicated, else -1
  std::vector<std::int32_t> dup_of_b;
  std::unordered_set<std::int64_t> linked_entities;  // the link set as entity ids
  // id-keyed lookup; robust against row reordering and augmentation downstream
  std::unordered_map<std::string, std::int64_t> entity_of_a_id;
  std::unordered_map<std::string, std::int64_t> entity_of_b_id;

  std::size_t n_links() const { return linked_entities.size(); }

  std::int64_t entity_of(const std::string& id, bool file_a) const {
    const auto& map = file_a ? entity_of_a_id : entity_of_b_id;
    auto it = map.find(id);
    if (it == map.end())
      throw DataError("id '" + id + "' is not in the ground truth for file " +
                      (file_a ? "A" : "B"));
    return it->second;
  }
};

struct SimOutput {
  Dataset a;
  Dataset b;
  GroundTruth truth;
  std::vector<int> cardinalities;  // post-calibration
  double achieved_discrimination = 0.0;
};

inline void inject_duplicates(Dataset& a, Dataset& b, GroundTruth& truth, double rate,
                              std::uint64_t seed);

namespace detail {

inline std::vector<std::vector<double>> render_marginals(const std::vector<SimVariable>& vars,
                                                         const std::vector<int>& cards) {
  std::vector<std::vector<double>> m;
  for (std::size_t v = 0; v < vars.size(); ++v)
    m.push_back(vars[v].shape.render(cards[v]));
  return m;
}

inline double uniqueness_proportion(const std::vector<std::vector<double>>& marginals,
                                    std::size_t n, Rng& rng) {
  std::vector<std::vector<double>> cdf(marginals.size());
  for (std::size_t v = 0; v < marginals.size(); ++v) {
    cdf[v].resize(marginals[v].size());
    double acc = 0.0;
    for (std::size_t c = 0; c < marginals[v].size(); ++c) {
      acc += marginals[v][c];
      cdf[v][c] = acc;
    }
  }
  std::vector<std::vector<Code>> rows(n, std::vector<Code>(marginals.size()));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t v = 0; v < marginals.size(); ++v) {
      double t = rng.u01();
      auto it = std::lower_bound(cdf[v].begin(), cdf[v].end(), t);
      rows[r][v] = static_cast<Code>(std::min<std::size_t>(
          static_cast<std::size_t>(it - cdf[v].begin()), cdf[v].size() - 1));
    }
  std::sort(rows.begin(), rows.end());
  std::size_t unique = 0;
  for (std::size_t r = 0; r < n; ++r) {
    bool same_prev = r > 0 && rows[r] == rows[r - 1];
    bool same_next = r + 1 < n && rows[r] == rows[r + 1];
    unique += !same_prev && !same_next;
  }
  return static_cast<double>(unique) / static_cast<double>(n);
}

inline double expected_uniqueness(const std::vector<SimVariable>& vars,
                                  const std::vector<int>& cards, std::size_t n,
                                  std::uint64_t seed, int draws = 5) {
  double total = 0.0;
  for (int d = 0; d < draws; ++d) {
    Rng rng(mix_seed(seed, 0xca11b000ULL + static_cast<std::uint64_t>(d)));
    total += uniqueness_proportion(render_marginals(vars, cards), n, rng);
  }
  return total / draws;
}

inline std::vector<int> scaled_cards(const std::vector<SimVariable>& vars, double g) {
  std::vector<int> cards;
  for (const auto& v : vars) {
    // a constant variable stays constant: there is no shape to rescale
    if (v.cardinality <= 1) cards.push_back(1);
    else cards.push_back(std::max(1, static_cast<int>(std::llround(v.cardinality * g))));
  }
  return cards;
}

inline double combination_count(const std::vector<int>& cards) {
  double total = 1.0;
  for (int c : cards) total *= static_cast<double>(c);
  return total;
}

}  // namespace detail

// Scales every variable's cardinality by a common multiplier (marginal shapes
// re-rendered at the new size) until the Monte-Carlo expected proportion of
// unique variable combinations in a sample of size n is within +-0.02 of the
// target. Errors out when no multiplier with at most 1e6 combinations works.
inline std::vector<int> calibrate_discrimination(const std::vector<SimVariable>& variables,
                                                 std::size_t n, double discr_target,
                                                 std::uint64_t seed) {
  if (!(discr_target > 0.0 && discr_target <= 1.0))
    throw ConfigError("discr_target must lie in (0, 1]");
  constexpr double kTol = 0.02;
  constexpr double kMaxCombinations = 1e6;

  auto measure = [&](double g) {
    return detail::expected_uniqueness(variables, detail::scaled_cards(variables, g), n, seed);
  };
  auto feasible = [&](double g) {
    return detail::combination_count(detail::scaled_cards(variables, g)) <= kMaxCombinations;
  };
  // largest feasible multiplier: uniqueness grows with the multiplier, so
  // the best achievable level sits at the combination budget (the bound also
  // stops the search when every variable is constant and combos never grow)
  double g_cap = 1.0;
  if (!feasible(g_cap)) {
    while (g_cap > 1e-6 && !feasible(g_cap)) g_cap *= 0.5;
    if (!feasible(g_cap))
      throw ConfigError("discr_target unreachable within 1e6 variable combinations");
  } else {
    while (g_cap < kMaxCombinations && feasible(g_cap * 2.0)) g_cap *= 2.0;
    for (int it = 0; it < 40 && g_cap < kMaxCombinations; ++it) {
      double mid = g_cap * 1.5;
      if (feasible(mid)) g_cap = mid;
      else break;
    }
  }
  double u_cap = measure(g_cap);
  if (u_cap + kTol < discr_target)
    throw ConfigError("discr_target unreachable within 1e6 variable combinations");
  if (std::fabs(u_cap - discr_target) <= kTol) return detail::scaled_cards(variables, g_cap);

  double lo = 0.0, hi = g_cap;
  for (int it = 0; it < 80; ++it) {
    double mid = 0.5 * (lo + hi);
    double u = measure(mid);
    if (std::fabs(u - discr_target) <= kTol) return detail::scaled_cards(variables, mid);
    (u < discr_target ? lo : hi) = mid;
  }
  throw ConfigError("discr_target unreachable: calibration did not converge at the +-0.02 tolerance");
}

inline SimOutput generate_population(const SimulationSpec& spec) {
  spec.validate();
  const std::size_t k = spec.variables.size();

  std::vector<int> cards;
  for (const auto& v : spec.variables) cards.push_back(v.cardinality);
  if (spec.discr_target)
    cards = calibrate_discrimination(spec.variables, spec.n_b, *spec.discr_target, spec.seed);

  auto marginals = detail::render_marginals(spec.variables, cards);
  Rng rng(mix_seed(spec.seed, 0x5103ULL));

  const std::size_t n_links =
      static_cast<std::size_t>(std::llround(spec.overlap * std::min(spec.n_a, spec.n_b)));
  const std::size_t n_pool = spec.n_a + spec.n_b - n_links;
  if (n_links > std::min(spec.n_a, spec.n_b))
    throw ConfigError("overlap demands more linked entities than the smallest file holds");

  // entity pool, i.i.d. from the product of marginals
  std::vector<Code> pool(n_pool * k);
  for (std::size_t e = 0; e < n_pool; ++e)
    for (std::size_t v = 0; v < k; ++v)
      pool[e * k + v] = static_cast<Code>(rng.discrete(marginals[v]));

  // choose which entities link
  std::vector<std::int64_t> order(n_pool);
  std::iota(order.begin(), order.end(), 0);
  if (spec.mechanism == LinkMechanism::depends_on_variables && n_links > 0) {
    std::vector<double> weight(n_pool);
    for (std::size_t e = 0; e < n_pool; ++e)
      weight[e] = std::pow(1.0 + static_cast<double>(pool[e * k]), spec.link_tilt);
    // weighted sampling without replacement: exponential race keyed by weight
    std::vector<std::pair<double, std::int64_t>> keys(n_pool);
    for (std::size_t e = 0; e < n_pool; ++e) {
      double u = rng.u01();
      while (u <= 0.0) u = rng.u01();
      keys[e] = {-std::log(u) / weight[e], static_cast<std::int64_t>(e)};
    }
    std::sort(keys.begin(), keys.end());
    for (std::size_t e = 0; e < n_pool; ++e) order[e] = keys[e].second;
  }
  // under at_random the pool is i.i.d., so the identity order is exchangeable

  SimOutput out;
  out.cardinalities = cards;
  Schema schema;
  for (std::size_t v = 0; v < k; ++v)
    schema.variables.push_back({spec.variables[v].name, cards[v]});

  auto build_file = [&](std::size_t n_rows, bool file_a) {
    Dataset ds;
    ds.schema = schema;
    ds.codes.reserve(n_rows * k);
    std::vector<std::int64_t>& entities = file_a ? out.truth.entity_a : out.truth.entity_b;
    // linking entities first, then this file's own fresh entities
    std::vector<std::int64_t> ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_links));
    std::size_t own = n_rows - n_links;
    std::size_t offset = n_links + (file_a ? 0 : spec.n_a - n_links);
    for (std::size_t i = 0; i < own; ++i) ids.push_back(order[offset + i]);
    rng.shuffle(ids);
    std::vector<Code> row(k);
    for (std::size_t r = 0; r < n_rows; ++r) {
      std::int64_t e = ids[r];
      bool linked = out.truth.linked_entities.count(e) > 0;
      for (std::size_t v = 0; v < k; ++v) {
        Code value = pool[static_cast<std::size_t>(e) * k + v];
        if (linked && rng.u01() < spec.variables[v].error_rate)
          value = static_cast<Code>(rng.discrete(marginals[v]));
        if (rng.u01() < spec.variables[v].missing_rate) value = schema.missing_code;
        row[v] = value;
      }
      ds.append_row(row, Origin::real, std::to_string(r));
      entities.push_back(e);
      (file_a ? out.truth.entity_of_a_id : out.truth.entity_of_b_id)
          .emplace(ds.source_id.back(), e);
    }
    return ds;
  };

  for (std::size_t i = 0; i < n_links; ++i) out.truth.linked_entities.insert(order[i]);
  out.a = build_file(spec.n_a, true);
  out.b = build_file(spec.n_b, false);
  out.truth.dup_of_a.assign(spec.n_a, -1);
  out.truth.dup_of_b.assign(spec.n_b, -1);

  // realized discrimination level of file B
  {
    std::vector<std::vector<Code>> rows(spec.n_b, std::vector<Code>(k));
    for (std::size_t r = 0; r < spec.n_b; ++r)
      for (std::size_t v = 0; v < k; ++v) rows[r][v] = out.b.at(r, v);
    std::sort(rows.begin(), rows.end());
    std::size_t unique = 0;
    for (std::size_t r = 0; r < spec.n_b; ++r) {
      bool same_prev = r > 0 && rows[r] == rows[r - 1];
      bool same_next = r + 1 < spec.n_b && rows[r] == rows[r + 1];
      unique += !same_prev && !same_next;
    }
    out.achieved_discrimination = static_cast<double>(unique) / static_cast<double>(spec.n_b);
  }

  if (spec.duplicate_rate > 0.0)
    inject_duplicates(out.a, out.b, out.truth, spec.duplicate_rate,
                      mix_seed(spec.seed, 0xd0bULL));
  return out;
}

// Appends round(rate/2 * N) copies of linking rows and as many copies of
// non-linking rows to each file (post-error values); counts are clamped when
// a file lacks enough linking rows. Duplicates of linking rows are additional
// valid partners through their shared entity id.
inline void inject_duplicates(Dataset& a, Dataset& b, GroundTruth& truth, double rate,
                              std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 0.5)) throw ConfigError("duplicate_rate must lie in [0, 0.5]");
  if (rate == 0.0) return;
  Rng rng(seed);
  auto duplicate_file = [&](Dataset& ds, std::vector<std::int64_t>& entities,
                            std::vector<std::int32_t>& dup_of,
                            std::unordered_map<std::string, std::int64_t>& entity_of_id) {
    const std::size_t n = ds.n_rows();
    std::vector<std::int32_t> linking, other;
    for (std::size_t r = 0; r < n; ++r)
      (truth.linked_entities.count(entities[r]) ? linking : other)
          .push_back(static_cast<std::int32_t>(r));
    std::size_t want = static_cast<std::size_t>(std::llround(rate / 2.0 * static_cast<double>(n)));
    auto pick = [&](std::vector<std::int32_t>& from, std::size_t count) {
      count = std::min(count, from.size());  // clamped when too few candidates
      rng.shuffle(from);
      for (std::size_t i = 0; i < count; ++i) {
        std::int32_t src = from[i];
        ds.append_row(ds.row(static_cast<std::size_t>(src)), ds.origin[static_cast<std::size_t>(src)],
                      ds.source_id[static_cast<std::size_t>(src)] + "+dup");
        entities.push_back(entities[static_cast<std::size_t>(src)]);
        entity_of_id.emplace(ds.source_id.back(), entities.back());
        dup_of.push_back(src);
      }
    };
    pick(linking, want);
    pick(other, want);
  };
  if (truth.dup_of_a.size() != a.n_rows()) truth.dup_of_a.assign(a.n_rows(), -1);
  if (truth.dup_of_b.size() != b.n_rows()) truth.dup_of_b.assign(b.n_rows(), -1);
  duplicate_file(a, truth.entity_a, truth.dup_of_a, truth.entity_of_a_id);
  duplicate_file(b, truth.entity_b, truth.dup_of_b, truth.entity_of_b_id);
}

// truth.csv: one row per record of each file.
inline void write_truth(const GroundTruth& truth, const Dataset& a, const Dataset& b,
                        const std::string& path) {
  CsvWriter out(path);
  out.row({"file", "row_index", "id", "entity_id", "is_duplicate_of", "links"});
  auto dump = [&](const char* file, const Dataset& ds, const std::vector<std::int64_t>& entities,
                  const std::vector<std::int32_t>& dup_of) {
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
      bool links = truth.linked_entities.count(entities[r]) > 0;
      out.row({file, std::to_string(r), ds.source_id[r], std::to_string(entities[r]),
               dup_of[r] < 0 ? std::string() : std::to_string(dup_of[r]), links ? "1" : "0"});
    }
  };
  dump("A", a, truth.entity_a, truth.dup_of_a);
  dump("B", b, truth.entity_b, truth.dup_of_b);
}

inline GroundTruth read_truth(const std::string& path, std::size_t* n_a_rows = nullptr,
                              std::size_t* n_b_rows = nullptr,
                              std::vector<std::string>* ids_a = nullptr,
                              std::vector<std::string>* ids_b = nullptr) {
  CsvTable table = read_csv(path);
  auto need = [&](const char* name) {
    auto c = table.column(name);
    if (!c) throw DataError(path + ": missing column '" + std::string(name) + "'");
    return *c;
  };
  std::size_t c_file = need("file"), c_id = need("id"), c_entity = need("entity_id"),
              c_dup = need("is_duplicate_of"), c_links = need("links");
  GroundTruth truth;
  for (const auto& row : table.rows) {
    std::int64_t entity = std::stoll(row[c_entity]);
    std::int32_t dup = row[c_dup].empty() ? -1 : static_cast<std::int32_t>(std::stol(row[c_dup]));
    if (row[c_file] == "A") {
      truth.entity_a.push_back(entity);
      truth.dup_of_a.push_back(dup);
      truth.entity_of_a_id.emplace(row[c_id], entity);
      if (ids_a) ids_a->push_back(row[c_id]);
    } else if (row[c_file] == "B") {
      truth.entity_b.push_back(entity);
      truth.dup_of_b.push_back(dup);
      truth.entity_of_b_id.emplace(row[c_id], entity);
      if (ids_b) ids_b->push_back(row[c_id]);
    } else {
      throw DataError(path + ": unknown file tag '" + row[c_file] + "'");
    }
    if (row[c_links] == "1") truth.linked_entities.insert(entity);
  }
  if (n_a_rows) *n_a_rows = truth.entity_a.size();
  if (n_b_rows) *n_b_rows = truth.entity_b.size();
  return truth;
}

}  // namespace decoylink
