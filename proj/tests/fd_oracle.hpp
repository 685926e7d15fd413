#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace dmp::test {

// Five-point central difference, step scaled to |x|.
template <class F>
std::vector<double> fd_gradient(F&& f, std::span<const double> x, double h0 = 1e-3) {
  std::vector<double> g(x.size());
  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = h0 * std::max(1.0, std::abs(x[i]));
    const double xi = xp[i];
    auto at = [&](double d) {
      xp[i] = xi + d;
      const double v = f(std::span<const double>(xp));
      xp[i] = xi;
      return v;
    };
    g[i] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  }
  return g;
}

inline bool gradient_close(double analytic, double fd, double rel = 1e-6, double abs = 1e-8) {
  return std::abs(analytic - fd) <= std::max(rel * std::abs(fd), abs);
}

}  // namespace dmp::test
