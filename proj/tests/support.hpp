#pragma once

// Shared model factories for the test suites.

#include <random>

#include "mmfg/example6.hpp"
#include "mmfg/lqg_model.hpp"

namespace mmfg::fixtures {

/// Moderate random LQG model with d0 = 1, k0 = k = m0 = m = 1.
inline LqgModel random_model(std::uint64_t seed, int d) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  auto fill = [&](int r, int c) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = u(gen);
    return m;
  };
  auto spd = [&](int n, double floor) {
    const Matrix L = fill(n, n);
    return Matrix(L * L.transpose() + floor * Matrix::Identity(n, n));
  };
  LqgModel md = LqgModel::zeros(1, d, 1, 1, 1, 1, 1.0);
  md.A0 = fill(1, 1);
  md.B0 = fill(1, 1).array() + 1.0;
  md.F0 = fill(1, d);
  md.D0 = fill(1, 1).array() + 1.0;
  md.A = fill(d, d);
  md.B = fill(d, 1).array() + 1.0;
  md.F = fill(d, d);
  md.G = fill(d, 1);
  md.D = fill(d, 1).array() + 1.0;
  md.Q0 = spd(1, 0.5);
  md.R0 = spd(1, 1.0);
  md.H0 = fill(1, d);
  md.eta0 = fill(1, 1).col(0);
  md.Q = spd(d, 0.5);
  md.R = spd(1, 1.0);
  md.H = fill(d, 1);
  md.Hhat = fill(d, d);
  md.eta = fill(d, 1).col(0);
  md.x0_major = fill(1, 1).col(0);
  md.x0_minor = fill(d, 1).col(0);
  return md;
}

inline example6::ExampleParams unit_example() {
  example6::ExampleParams p;
  p.a = p.b = p.c = p.q = 1.0;
  p.D0 = p.D = 1.0;
  p.T = 1.0;
  return p;
}

}  // namespace mmfg::fixtures
