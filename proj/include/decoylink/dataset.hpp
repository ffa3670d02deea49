#pragma once

// Dataset representation for categorical linkage variables: schema, shared
// value dictionaries, record comparison, and blocking.
//
// Conventions:
//  - category codes are non-negative int32, missing is schema.missing_code
//    (default -1, always outside the observed code range)
//  - missing never agrees with anything, including another missing value
//  - value dictionaries are shared across a file pair so that codes are
//    comparable; agreement is defined on raw values, not per-file codes

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "decoylink/common.hpp"
#include "decoylink/csv.hpp"

namespace decoylink {

using Code = std::int32_t;

struct Variable {
  std::string name;
  int cardinality = 1;
};

struct Schema {
  std::vector<Variable> variables;
  Code missing_code = -1;

  std::size_t n_vars() const { return variables.size(); }

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
      if (variables[i].name == name) return i;
    return std::nullopt;
  }

  void validate() const {
    if (variables.empty()) throw ConfigError("schema declares no variables");
    for (std::size_t i = 0; i < variables.size(); ++i) {
      if (variables[i].cardinality < 1)
        throw ConfigError("variable '" + variables[i].name + "' has cardinality < 1");
      for (std::size_t j = i + 1; j < variables.size(); ++j)
        if (variables[i].name == variables[j].name)
          throw ConfigError("duplicate variable name '" + variables[i].name + "'");
      if (missing_code >= 0 && missing_code < variables[i].cardinality)
        throw ConfigError("missing_code collides with value range of '" + variables[i].name + "'");
    }
  }

  bool same_variables(const Schema& other) const {
    if (variables.size() != other.variables.size()) return false;
    for (std::size_t i = 0; i < variables.size(); ++i)
      if (variables[i].name != other.variables[i].name) return false;
    return missing_code == other.missing_code;
  }
};

enum class Origin : std::uint8_t { real = 0, synthetic = 1 };

inline const char* origin_name(Origin o) { return o == Origin::real ? "real" : "synthetic"; }

struct Dataset {
  Schema schema;
  std::vector<Code> codes;  // row-major, n_rows x n_vars
  std::vector<Origin> origin;
  std::vector<std::string> source_id;

  std::size_t n_rows() const { return origin.size(); }
  std::size_t n_vars() const { return schema.n_vars(); }

  std::span<const Code> row(std::size_t r) const {
    return {codes.data() + r * n_vars(), n_vars()};
  }

  Code at(std::size_t r, std::size_t v) const { return codes[r * n_vars() + v]; }

  void append_row(std::span<const Code> row_codes, Origin o, std::string id) {
    codes.insert(codes.end(), row_codes.begin(), row_codes.end());
    origin.push_back(o);
    source_id.push_back(std::move(id));
  }

  void validate() const {
    schema.validate();
    const std::size_t k = n_vars();
    if (codes.size() != n_rows() * k || source_id.size() != n_rows())
      throw DataError("dataset arrays are inconsistent with row count");
    for (std::size_t r = 0; r < n_rows(); ++r)
      for (std::size_t v = 0; v < k; ++v) {
        Code c = at(r, v);
        if (c != schema.missing_code && (c < 0 || c >= schema.variables[v].cardinality))
          throw DataError("row " + std::to_string(r) + " has invalid code for '" +
                          schema.variables[v].name + "'");
      }
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t r = 0; r < n_rows(); ++r)
      if (!seen.emplace(source_id[r], r).second)
        throw DataError("duplicate source_id '" + source_id[r] + "'");
  }
};

// Per-variable value dictionaries, shared across a file pair. Codes are
// assigned in first-appearance order; decode() reproduces the loaded text.
struct Codebook {
  std::vector<std::vector<std::string>> code_to_value;
  std::vector<std::unordered_map<std::string, Code>> value_to_code;

  explicit Codebook(std::size_t n_vars = 0)
      : code_to_value(n_vars), value_to_code(n_vars) {}

  Code encode(std::size_t var, const std::string& value) {
    auto& dict = value_to_code[var];
    auto it = dict.find(value);
    if (it != dict.end()) return it->second;
    Code c = static_cast<Code>(code_to_value[var].size());
    code_to_value[var].push_back(value);
    dict.emplace(value, c);
    return c;
  }

  const std::string& decode(std::size_t var, Code code) const {
    return code_to_value[var].at(static_cast<std::size_t>(code));
  }

  int cardinality(std::size_t var) const {
    return static_cast<int>(code_to_value[var].size());
  }
};

struct ComparisonVector {
  std::uint32_t agreements = 0;  // bit k set iff both non-missing and equal on variable k
  bool any_missing = false;
};

inline ComparisonVector compare_pair(std::span<const Code> a, std::span<const Code> b,
                                     const Schema& schema) {
  ComparisonVector cv;
  const Code miss = schema.missing_code;
  for (std::size_t k = 0; k < schema.n_vars(); ++k) {
    if (a[k] == miss || b[k] == miss) {
      cv.any_missing = true;
    } else if (a[k] == b[k]) {
      cv.agreements |= (1u << k);
    }
  }
  return cv;
}

struct Block {
  Code value;
  std::vector<std::int32_t> a_rows;
  std::vector<std::int32_t> b_rows;
};

struct BlockPartition {
  std::string variable;
  std::size_t var_index = 0;
  std::vector<Block> blocks;  // sorted by blocking value code
  std::vector<std::int32_t> unblocked_a;  // rows with a missing blocking value
  std::vector<std::int32_t> unblocked_b;
};

inline BlockPartition block_datasets(const Dataset& a, const Dataset& b,
                                     const std::string& variable) {
  auto ia = a.schema.index_of(variable);
  auto ib = b.schema.index_of(variable);
  if (!ia || !ib) throw DataError("unknown blocking variable '" + variable + "'");
  BlockPartition part;
  part.variable = variable;
  part.var_index = *ia;
  std::map<Code, Block> by_value;  // ordered -> blocks sorted by code
  for (std::size_t r = 0; r < a.n_rows(); ++r) {
    Code c = a.at(r, *ia);
    if (c == a.schema.missing_code) part.unblocked_a.push_back(static_cast<std::int32_t>(r));
    else by_value[c].a_rows.push_back(static_cast<std::int32_t>(r));
  }
  for (std::size_t r = 0; r < b.n_rows(); ++r) {
    Code c = b.at(r, *ib);
    if (c == b.schema.missing_code) part.unblocked_b.push_back(static_cast<std::int32_t>(r));
    else by_value[c].b_rows.push_back(static_cast<std::int32_t>(r));
  }
  for (auto& [value, block] : by_value) {
    block.value = value;
    part.blocks.push_back(std::move(block));
  }
  return part;
}

// Loads a delimited file against a declared schema. The header must contain
// every schema variable (extra columns are ignored); an "id" column, when
// present, supplies source ids, otherwise the 0-based row index is used.
// Empty cells map to missing_code; unseen values extend the shared codebook.
inline Dataset load_dataset(const std::string& path, const Schema& schema,
                            Codebook& codebook, Origin origin) {
  schema.validate();
  if (codebook.code_to_value.size() != schema.n_vars())
    throw DataError("codebook does not match schema variable count");
  CsvTable table = read_csv(path);
  std::vector<std::size_t> col(schema.n_vars());
  for (std::size_t v = 0; v < schema.n_vars(); ++v) {
    auto c = table.column(schema.variables[v].name);
    if (!c) throw DataError(path + ": missing declared column '" + schema.variables[v].name + "'");
    col[v] = *c;
  }
  auto id_col = table.column("id");
  auto origin_col = table.column("origin");

  Dataset ds;
  ds.schema = schema;
  ds.codes.reserve(table.rows.size() * schema.n_vars());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& fields = table.rows[r];
    for (std::size_t v = 0; v < schema.n_vars(); ++v) {
      const std::string& cell = fields[col[v]];
      ds.codes.push_back(cell.empty() ? schema.missing_code : codebook.encode(v, cell));
    }
    Origin o = origin;
    if (origin_col) o = fields[*origin_col] == "synthetic" ? Origin::synthetic : Origin::real;
    ds.origin.push_back(o);
    ds.source_id.push_back(id_col ? fields[*id_col] : std::to_string(r));
  }
  for (std::size_t v = 0; v < schema.n_vars(); ++v)
    ds.schema.variables[v].cardinality =
        std::max(ds.schema.variables[v].cardinality, std::max(1, codebook.cardinality(v)));
  ds.validate();
  return ds;
}

// Loads a file pair through one shared codebook and aligns both schemas to
// the final dictionary sizes so the datasets are directly comparable.
inline std::pair<Dataset, Dataset> load_pair(const std::string& path_a,
                                             const std::string& path_b,
                                             const Schema& schema, Codebook& codebook) {
  Dataset a = load_dataset(path_a, schema, codebook, Origin::real);
  Dataset b = load_dataset(path_b, schema, codebook, Origin::real);
  for (std::size_t v = 0; v < schema.n_vars(); ++v) {
    int card = std::max(a.schema.variables[v].cardinality, b.schema.variables[v].cardinality);
    a.schema.variables[v].cardinality = card;
    b.schema.variables[v].cardinality = card;
  }
  return {std::move(a), std::move(b)};
}

// Writes rows back through the codebook; missing cells become empty fields.
inline void write_dataset(const Dataset& ds, const Codebook& codebook,
                          const std::string& path, bool with_origin = false) {
  CsvWriter out(path);
  std::vector<std::string> header{"id"};
  for (const auto& v : ds.schema.variables) header.push_back(v.name);
  if (with_origin) header.push_back("origin");
  out.row(header);
  std::vector<std::string> fields;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    fields.clear();
    fields.push_back(ds.source_id[r]);
    for (std::size_t v = 0; v < ds.n_vars(); ++v) {
      Code c = ds.at(r, v);
      fields.push_back(c == ds.schema.missing_code ? std::string() : codebook.decode(v, c));
    }
    if (with_origin) fields.push_back(origin_name(ds.origin[r]));
    out.row(fields);
  }
}

// Codebook in which simulated integer codes decode to their decimal form.
inline Codebook identity_codebook(const Schema& schema) {
  Codebook cb(schema.n_vars());
  for (std::size_t v = 0; v < schema.n_vars(); ++v)
    for (int c = 0; c < schema.variables[v].cardinality; ++c)
      cb.encode(v, std::to_string(c));
  return cb;
}

}  // namespace decoylink
