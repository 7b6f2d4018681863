#ifndef CHAOSLAB_FVPATH_HPP
#define CHAOSLAB_FVPATH_HPP

#include <cstddef>
#include <vector>

namespace chaoslab {

// Deterministic finite-variation path on a fixed grid t_0 < ... < t_K.
// The path starts at 0, gains a continuous (piecewise-linear) increment
// drift[k-1] on (t_{k-1}, t_k] and a jump jumps[k-1] at t_k. Grid values are
// the contract; between grid points only the linear interpolant is meant.
struct FVPath {
  std::vector<double> times;  // size K+1
  std::vector<double> jumps;  // size K, jump at t_k
  std::vector<double> drift;  // size K, continuous increment on (t_{k-1}, t_k]

  FVPath() = default;
  FVPath(std::vector<double> t, std::vector<double> j, std::vector<double> dr);

  static FVPath pure_jump(std::vector<double> t, std::vector<double> j);
  static FVPath zero(std::vector<double> t);

  std::size_t steps() const { return jumps.size(); }
  // value at t_k (k = 0..K)
  double value_at(std::size_t k) const;
  // continuous part at t_k
  double continuous_at(std::size_t k) const;
  // left limit at t_k: value_at(k) - jumps[k-1] for k >= 1
  double left_value_at(std::size_t k) const;

  bool non_decreasing() const;
  bool non_increasing() const;

  FVPath scaled(double c) const;
};

FVPath add(const FVPath& a, const FVPath& b);
// [A,B]: pure-jump path with jumps dA_k * dB_k
FVPath quad_covar(const FVPath& a, const FVPath& b);

// Grid values of the stochastic exponential E(A)_t = exp(A^c_t) prod(1 + dA_s).
std::vector<double> stoch_exp_values(const FVPath& a);
// Left limits E(A)_{t_k-}.
std::vector<double> stoch_exp_left_values(const FVPath& a);

// E(A) repackaged as an FVPath (grid values exact).
FVPath stoch_exp(const FVPath& a);

// A_bar = A - sum (dA)^2/(1+dA); satisfies E(A) E(-A_bar) = 1.
// Throws JumpAtMinusOne if some dA = -1.
FVPath bar_path(const FVPath& a);

// A_tilde^{delta,gamma} = delta A - bar(gamma A) - [delta A, bar(gamma A)];
// satisfies E(delta A)/E(gamma A) = E(A_tilde). Throws JumpAtMinusOne if
// some gamma dA = -1.
FVPath tilde_path(const FVPath& a, double delta, double gamma);

// E(A)E(B) == E(A + B + [A,B]) at every grid point, tolerance 1e-12
// (relative 1e-9 past magnitude 1e6).
bool product_identity_check(const FVPath& a, const FVPath& b);

// Comparison rule used across the identity checks: absolute 1e-12 for
// magnitudes up to 1e6, relative 1e-9 beyond.
bool values_close(double x, double y, double abs_tol = 1e-12,
                  double rel_tol = 1e-9, double mag_switch = 1e6);

}  // namespace chaoslab

#endif
