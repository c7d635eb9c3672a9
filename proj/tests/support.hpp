#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace testsupport {

// ||a - b|| / max(||a||, ||b||); plain difference norm when both vanish.
inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num) / den;
}

// Fourth-order central difference of f with respect to the scalar behind x.
inline double fd(const std::function<double()>& f, double& x, double h = 1e-4) {
  const double x0 = x;
  x = x0 + 2 * h;
  const double f2 = f();
  x = x0 + h;
  const double f1 = f();
  x = x0 - h;
  const double m1 = f();
  x = x0 - 2 * h;
  const double m2 = f();
  x = x0;
  return (-f2 + 8 * f1 - 8 * m1 + m2) / (12 * h);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nashdiff_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
