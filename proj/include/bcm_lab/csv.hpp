#pragma once

// Sample sets as CSV: one row per sample, one column per dimension.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcm_lab/samplers.hpp"

namespace bcm {

inline void write_samples_csv(std::ostream& os, const Eigen::MatrixXd& x) {
  for (Eigen::Index d = 0; d < x.rows(); ++d) os << (d ? "," : "") << 'x' << d;
  os << '\n';
  os.precision(17);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index d = 0; d < x.rows(); ++d) os << (d ? "," : "") << x(d, j);
    os << '\n';
  }
}

/// Reads a sample CSV (a non-numeric first line is taken as a header).
inline Eigen::MatrixXd read_samples_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      // strtod rather than stod: subnormals are valid values, not range errors.
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size()) numeric = false;
      row.push_back(v);
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw std::runtime_error("csv: non-numeric row: " + line);
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size()) throw std::runtime_error("csv: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t d = 0; d < rows[j].size(); ++d)
      x(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) = rows[j][d];
  return x;
}

inline Eigen::MatrixXd read_samples_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return read_samples_csv(in);
}

/// Trajectory dump: sample,time,x0,x1,... with one row per (state, sample).
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "sample,time";
  const Eigen::Index dim = traj.states.empty() ? 0 : traj.states.front().rows();
  for (Eigen::Index d = 0; d < dim; ++d) os << ",x" << d;
  os << '\n';
  os.precision(17);
  for (std::size_t s = 0; s < traj.states.size(); ++s) {
    const auto& x = traj.states[s];
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      os << j << ',' << traj.times[s];
      for (Eigen::Index d = 0; d < dim; ++d) os << ',' << x(d, j);
      os << '\n';
    }
  }
}

}  // namespace bcm
