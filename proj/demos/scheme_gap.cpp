// Sweeps the major-minor coupling of the scalar example and prints how far
// apart the two schemes' major controls are, then the finite-N errors.
#include <cstdio>

#include "mmfg/example6.hpp"

using namespace mmfg;

int main() {
  const TimeGrid grid = TimeGrid::uniform(1.0, 1000);
  example6::ExampleParams p;

  std::printf("%6s %14s %14s %14s\n", "c", "gap X0", "gap Xbar", "gap const");
  for (double c : {0.0, 0.25, 0.5, 1.0, 2.0}) {
    p.c = c;
    const auto d = example6::scheme_difference(p, grid);
    std::printf("%6.2f %14.6e %14.6e %14.6e%s\n", c, d.max_gap_x0, d.max_gap_xbar,
                d.max_gap_const, d.coincide ? "  (coincide)" : "");
  }

  p.c = 1.0;
  p.x0_major = p.x0_minor = 1.0;
  const auto rep = example6::verify_pnew(p, {8, 32, 128, 512}, TimeGrid::uniform(1.0, 200),
                                         NoiseSource(2024), 200);
  std::printf("\n%6s %14s %14s %14s\n", "N", "err state", "err u0 new", "err u0 old");
  for (const auto& pt : rep.points)
    std::printf("%6d %14.6e %14.6e %14.6e\n", pt.N, pt.err_state.mean, pt.err_control.mean,
                pt.err_control_old.mean);
  if (rep.state_fit) std::printf("state error slope in N: %.3f\n", rep.state_fit->slope);
  return 0;
}
