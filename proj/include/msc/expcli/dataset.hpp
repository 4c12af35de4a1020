#pragma once

// CSV ingestion, standardisation and train/test splitting for probit data.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msc/models.hpp"
#include "msc/numkit.hpp"

namespace msc::expcli {

/// Malformed input file; `line` is 1-based, 0 when not tied to a line.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Raw feature table as read from disk plus the standardised design matrix.
struct LoadedDataset {
  std::size_t n = 0;
  std::size_t num_features = 0;    // columns before the intercept is appended
  std::vector<double> raw;          // n x num_features, row-major
  std::vector<int> labels;
  ProbitData data;                  // standardised on all rows, intercept last
  std::vector<std::string> warnings;
};

/// Per-column location/scale; constant columns get scale 1 and map to zero.
struct Standardizer {
  std::vector<double> center;
  std::vector<double> scale;
  std::vector<std::size_t> constant_columns;

  static constexpr double kVarianceFloor = 1e-12;

  static Standardizer fit(const std::vector<double>& raw, std::size_t p,
                          const std::vector<std::size_t>& rows) {
    Standardizer s;
    s.center.assign(p, 0.0);
    s.scale.assign(p, 1.0);
    const double n = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < p; ++j) {
      double m = 0.0;
      for (std::size_t r : rows) m += raw[r * p + j];
      m /= n;
      double v = 0.0;
      for (std::size_t r : rows) v += (raw[r * p + j] - m) * (raw[r * p + j] - m);
      v = rows.size() > 1 ? v / (n - 1.0) : 0.0;
      s.center[j] = m;
      if (v < kVarianceFloor) {
        s.constant_columns.push_back(j);
      } else {
        s.scale[j] = std::sqrt(v);
      }
    }
    return s;
  }

  ProbitData apply(const std::vector<double>& raw, const std::vector<int>& labels,
                   std::size_t p, const std::vector<std::size_t>& rows) const {
    ProbitData d;
    d.n = rows.size();
    d.d = p + 1;
    d.X.reserve(d.n * d.d);
    d.y.reserve(d.n);
    for (std::size_t r : rows) {
      for (std::size_t j = 0; j < p; ++j) d.X.push_back((raw[r * p + j] - center[j]) / scale[j]);
      d.X.push_back(1.0);
      d.y.push_back(labels[r]);
    }
    return d;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_number(std::string_view field, std::size_t line) {
  field = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
    throw DataError("cannot parse '" + std::string(field) + "' as a number", line);
  return v;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

}  // namespace detail

/**
 * Parses comma-separated numeric rows without a header; the last column is a
 * 0/1 label. Blank lines are skipped.
 */
inline LoadedDataset parse_csv_dataset(std::istream& in) {
  LoadedDataset ds;
  std::string line;
  std::size_t lineno = 0;
  std::size_t cols = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<double> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(detail::parse_number(rest.substr(0, comma), lineno));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() < 2) throw DataError("need at least one feature and a label", lineno);
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols)
      throw DataError("expected " + std::to_string(cols) + " columns, found " +
                          std::to_string(fields.size()), lineno);
    const double label = fields.back();
    if (label != 0.0 && label != 1.0)
      throw DataError("label must be 0 or 1, found " + std::to_string(label), lineno);
    for (std::size_t j = 0; j + 1 < fields.size(); ++j)
      if (!std::isfinite(fields[j])) throw DataError("non-finite feature", lineno);
    ds.raw.insert(ds.raw.end(), fields.begin(), fields.end() - 1);
    ds.labels.push_back(static_cast<int>(label));
  }
  if (ds.labels.empty()) throw DataError("no data rows", 0);
  ds.n = ds.labels.size();
  ds.num_features = cols - 1;

  const auto rows = detail::all_rows(ds.n);
  const Standardizer st = Standardizer::fit(ds.raw, ds.num_features, rows);
  for (std::size_t j : st.constant_columns)
    ds.warnings.push_back("column " + std::to_string(j + 1) + " is constant; standardised to zero");
  ds.data = st.apply(ds.raw, ds.labels, ds.num_features, rows);
  return ds;
}

inline LoadedDataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'", 0);
  return parse_csv_dataset(in);
}

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t split_index = 0;
  std::uint64_t master_seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Row partition, a deterministic function of (master_seed, split_index).
inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  if (n < 10) throw std::invalid_argument("split_train_test: need at least 10 rows");
  std::vector<std::size_t> perm = detail::all_rows(n);
  RngStream rng(spec.master_seed, 0x5b117ull + spec.split_index);
  // Fisher-Yates with our own uniform so the order does not depend on the
  // standard library's distribution implementations.
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
    std::swap(perm[i], perm[std::min(j, i)]);
  }
  const auto n_train = static_cast<std::size_t>(std::ceil(spec.train_fraction * static_cast<double>(n) - 1e-9));
  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return s;
}

/// Train/test design matrices, both standardised with training-split statistics.
inline std::pair<ProbitData, ProbitData> split_train_test(const LoadedDataset& ds,
                                                          const SplitSpec& spec) {
  const SplitIndices idx = split_indices(ds.n, spec);
  const Standardizer st = Standardizer::fit(ds.raw, ds.num_features, idx.train);
  return {st.apply(ds.raw, ds.labels, ds.num_features, idx.train),
          st.apply(ds.raw, ds.labels, ds.num_features, idx.test)};
}

}  // namespace msc::expcli
