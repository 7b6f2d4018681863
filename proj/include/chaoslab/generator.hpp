#ifndef CHAOSLAB_GENERATOR_HPP
#define CHAOSLAB_GENERATOR_HPP

#include <span>
#include <string>
#include <vector>

#include "chaoslab/driver.hpp"
#include "chaoslab/transport.hpp"

namespace chaoslab {

enum class GenMode { instantaneous, path };
enum class MeasureMode { none, mean, w2ref };

// Measure argument handed to the generator, precomputed by the solver:
// mean-mode carries the mean vector (or the mean of the truncated path sup
// in path mode), w2ref-mode carries W2(mu, reference).
struct MeasureArg {
  std::vector<double> mean;
  double w2 = 0.0;
};

// Affine generator frame
//   f_r = a + b * sat(y_r) + c * rowavg(Zc)_r + d * Gamma(U)_r + e * m(mu)_r,
// where sat is tanh under the saturating flag, rowavg averages the p columns
// scaled by 1/sqrt(p), and m(mu) is the measure term per measure_mode. In
// path mode the y-term is b * min(sup_k |y_k|, 1) broadcast to every
// coordinate.
struct GeneratorSpec {
  std::string name = "zero";
  GenMode mode = GenMode::instantaneous;
  MeasureMode measure_mode = MeasureMode::none;
  double level = 0.0;   // a
  double lin_y = 0.0;   // b
  double lin_z = 0.0;   // c
  double lin_u = 0.0;   // d
  double meas = 0.0;    // e
  bool saturating = false;
  DiscreteLaw reference;  // w2ref target; defaults to a Dirac at 0

  bool needs_measure() const { return measure_mode != MeasureMode::none; }

  // Declared Lipschitz coefficients for a d-dimensional solution.
  LipschitzCoeffs lipschitz(std::size_t K, int d_dim) const;

  void eval_instant(int d_dim, std::span<const double> y, std::span<const double> zc_rowavg,
                    std::span<const double> gamma, const MeasureArg& mu,
                    std::span<double> out) const;
  void eval_path(int d_dim, double tau_y, std::span<const double> zc_rowavg,
                 std::span<const double> gamma, const MeasureArg& mu,
                 std::span<double> out) const;
};

// Truncated sup functional min(sup_k |x_k|, 1) over d-dim blocks.
double path_tau(std::span<const double> path, int d_dim);

// Presets: "zero", "constant(kappa)", "linear(b)", "mean(e)",
// "saturating-mean(e)", "w2ref(e)", "path-supmean(b,e)".
GeneratorSpec make_generator(const std::string& preset);

}  // namespace chaoslab

#endif
