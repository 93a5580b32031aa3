#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "kronid/common.hpp"

namespace kronid {

/// Measured trajectories. Row t of y is y(t)^T with channels (h,k) row-major;
/// row t of u is u(t)^T. All entries finite.
struct Dataset {
  Eigen::MatrixXd y;  // N x (p1*p2)
  Eigen::MatrixXd u;  // N x m
  Dims dims;

  Dataset() = default;
  Dataset(Eigen::MatrixXd y_, Eigen::MatrixXd u_, Dims dims_)
      : y(std::move(y_)), u(std::move(u_)), dims(dims_) {
    if (y.rows() < 1) throw std::invalid_argument("Dataset: need at least one sample");
    if (y.cols() != dims.channels() || u.cols() != dims.m || (dims.m > 0 && u.rows() != y.rows())) {
      throw std::invalid_argument("Dataset: column counts do not match dims");
    }
    if (!y.allFinite() || !u.allFinite()) {
      throw std::invalid_argument("Dataset: NaN/Inf entries are not allowed");
    }
  }

  int samples() const { return static_cast<int>(y.rows()); }

  // Per-channel mean removal (outputs and inputs).
  Dataset demeaned() const {
    Dataset out = *this;
    out.y.rowwise() -= y.colwise().mean();
    if (dims.m > 0) out.u.rowwise() -= u.colwise().mean();
    return out;
  }
};

namespace detail {

inline double parse_cell(const std::string& cell, int row, int col) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
  double value = 0.0;
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end || begin == end) {
    throw std::invalid_argument("CSV parse error: non-numeric cell at row " +
                                std::to_string(row) + ", column " + std::to_string(col));
  }
  if (!std::isfinite(value)) {
    throw std::invalid_argument("CSV parse error: non-finite value at row " +
                                std::to_string(row) + ", column " + std::to_string(col));
  }
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

/// Reads the dataset CSV `t, y_1..y_{p1p2}, u_1..u_m` (rows sorted by t).
inline Dataset load_dataset_csv(const std::string& path, const Dims& dims) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_dataset_csv: empty file");
  const int expected = 1 + dims.channels() + dims.m;
  if (static_cast<int>(detail::split_csv_line(line).size()) != expected) {
    throw std::invalid_argument("load_dataset_csv: header has wrong column count (expected " +
                                std::to_string(expected) + ")");
  }
  std::vector<std::vector<double>> rows;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != expected) {
      throw std::invalid_argument("load_dataset_csv: row " + std::to_string(row_no) + " has " +
                                  std::to_string(cells.size()) + " columns, expected " +
                                  std::to_string(expected));
    }
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      vals[c] = detail::parse_cell(cells[c], row_no, static_cast<int>(c) + 1);
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::invalid_argument("load_dataset_csv: no data rows");
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd y(n, dims.channels());
  Eigen::MatrixXd u(n, dims.m);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < dims.channels(); ++c) y(r, c) = rows[r][1 + c];
    for (int c = 0; c < dims.m; ++c) u(r, c) = rows[r][1 + dims.channels() + c];
  }
  return Dataset(std::move(y), std::move(u), dims);
}

/// Writes the CSV with full float64 round-trip precision.
inline void save_dataset_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset_csv: cannot open " + path);
  out << "t";
  for (int c = 1; c <= d.dims.channels(); ++c) out << ",y_" << c;
  for (int c = 1; c <= d.dims.m; ++c) out << ",u_" << c;
  out << "\n";
  char buf[40];
  for (int t = 0; t < d.samples(); ++t) {
    out << (t + 1);
    for (int c = 0; c < d.dims.channels(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", d.y(t, c));
      out << ',' << buf;
    }
    for (int c = 0; c < d.dims.m; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", d.u(t, c));
      out << ',' << buf;
    }
    out << "\n";
  }
}

/// Folds a scalar-time series x (S x p2) of period p1 into super-samples:
/// channel (h,k) of y(t) equals x_k((t-1)p1 + h). A trailing remainder is
/// dropped with a warning on stderr. The folded dataset has no input.
inline Dataset fold_series(const Eigen::MatrixXd& x, int p1) {
  if (p1 <= 0) throw std::invalid_argument("fold_series: p1 must be positive");
  const int s_total = static_cast<int>(x.rows());
  const int p2 = static_cast<int>(x.cols());
  const int n = s_total / p1;
  if (n < 1) throw std::invalid_argument("fold_series: series shorter than one period");
  if (n * p1 != s_total) {
    std::cerr << "fold_series: dropping trailing " << (s_total - n * p1)
              << " sample(s) not filling a period\n";
  }
  Dims dims(p1, p2, 0);
  Eigen::MatrixXd y(n, dims.channels());
  for (int t = 0; t < n; ++t)
    for (int h = 0; h < p1; ++h)
      for (int k = 0; k < p2; ++k) y(t, dims.channel(h, k)) = x(t * p1 + h, k);
  return Dataset(std::move(y), Eigen::MatrixXd(n, 0), dims);
}

}  // namespace kronid
