#pragma once

// Trace CSV emission and parsing.
//
// Columns: replication, iteration, one column per traced parameter, grad_norm.
// Values are written with 17 significant digits so every row parses back to
// the same doubles.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "msc/climb.hpp"
#include "msc/expcli/config.hpp"
#include "msc/expcli/dataset.hpp"

namespace msc::expcli {

struct TraceRow {
  std::uint64_t replication = 0;
  long iteration = 0;
  std::vector<double> params;
  double grad_norm = 0.0;

  bool operator==(const TraceRow&) const = default;
};

struct TraceTable {
  std::vector<std::string> param_names;
  std::vector<TraceRow> rows;
};

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trace_header(std::ostream& out, const std::vector<std::string>& param_names) {
  out << "replication,iteration";
  for (const auto& n : param_names) out << ',' << n;
  out << ",grad_norm\n";
}

inline void write_trace_row(std::ostream& out, const TraceRow& row) {
  out << row.replication << ',' << row.iteration;
  for (double v : row.params) out << ',' << format_g17(v);
  out << ',' << format_g17(row.grad_norm) << '\n';
}

inline void write_trace(std::ostream& out, const TraceTable& table) {
  write_trace_header(out, table.param_names);
  for (const auto& r : table.rows) write_trace_row(out, r);
}

/// Parses a trace written by write_trace; throws DataError with the line number on bad rows.
inline TraceTable read_trace(std::istream& in) {
  TraceTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty trace file", 1);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(std::string(detail::trim(cell)));
  }
  if (header.size() < 3 || header.front() != "replication" || header[1] != "iteration" ||
      header.back() != "grad_norm")
    throw DataError("unexpected trace header", 1);
  t.param_names.assign(header.begin() + 2, header.end() - 1);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size())
      throw DataError("expected " + std::to_string(header.size()) + " columns", lineno);
    TraceRow r;
    r.replication = static_cast<std::uint64_t>(detail::parse_number(cells[0], lineno));
    r.iteration = static_cast<long>(detail::parse_number(cells[1], lineno));
    for (std::size_t j = 2; j + 1 < cells.size(); ++j)
      r.params.push_back(detail::parse_number(cells[j], lineno));
    r.grad_norm = detail::parse_number(cells.back(), lineno);
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline TraceTable read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace '" + path + "'", 0);
  return read_trace(in);
}

/// Trace rows of one run; `use_theta` selects model parameters instead of lambda.
inline std::vector<TraceRow> trace_rows(std::uint64_t replication, const RunResult& run,
                                        bool use_theta = false) {
  std::vector<TraceRow> rows;
  rows.reserve(run.records.size());
  for (const auto& rec : run.records)
    rows.push_back({replication, rec.iteration, use_theta ? rec.theta : rec.lambda, rec.grad_norm});
  return rows;
}

/// Names for the flat DiagGaussianParams layout.
inline std::vector<std::string> diag_gaussian_names(std::size_t dim) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < dim; ++i) names.push_back("mu_" + std::to_string(i));
  for (std::size_t i = 0; i < dim; ++i) names.push_back("log_sigma_" + std::to_string(i));
  return names;
}

}  // namespace msc::expcli
