#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "swimvg/params.hpp"
#include "swimvg/tensor.hpp"

namespace swimvg::testing {

inline Mat<double> random_mat(Rng& rng, Index rows, Index cols, double std = 1.0) {
  Mat<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.normal(0.0, std);
  }
  return m;
}

template <typename T>
ParamId add_random(ParamSet<T>& ps, Rng& rng, const std::string& name, Index rows, Index cols,
                   Trainability tag = Trainability::Tunable, double std = 0.5) {
  const ParamId id = ps.add(name, rows, cols, ParamGroup::Cia, tag);
  auto m = ps[id];
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(rng.normal(0.0, std));
  }
  return id;
}

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Central difference of a scalar function of one matrix entry.
inline double central_diff(double& x, const std::function<double()>& f, double eps = 1e-6) {
  const double saved = x;
  x = saved + eps;
  const double up = f();
  x = saved - eps;
  const double down = f();
  x = saved;
  return (up - down) / (2 * eps);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("swimvg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace swimvg::testing
