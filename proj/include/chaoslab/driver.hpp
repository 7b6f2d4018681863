#ifndef CHAOSLAB_DRIVER_HPP
#define CHAOSLAB_DRIVER_HPP

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chaoslab/fvpath.hpp"

namespace chaoslab {

// Finite zero-mean increment law on R^dim.
struct IncrementLaw {
  int dim = 1;
  std::vector<double> atoms;    // flat, n_atoms * dim
  std::vector<double> weights;  // positive, sum 1

  std::size_t size() const { return weights.size(); }
  std::span<const double> atom(std::size_t i) const {
    return {atoms.data() + static_cast<std::ptrdiff_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  void validate(bool zero_mean_required) const;

  static IncrementLaw rademacher(double sigma = 1.0);
  static IncrementLaw trinomial(double p0, double scale = 1.0);  // {-s,0,+s}
  static IncrementLaw dirac_zero(int dim = 1);
};

// Joint per-step law over (dX_diff, dX_jump); product of marginals in the
// standard build, arbitrary correlated atoms for validation tests.
struct StepLaw {
  int p = 1;  // diffusion dimension
  int n = 0;  // jump dimension (0 = no jump component)
  std::vector<double> diff_support;  // n_d * p
  std::vector<double> jump_support;  // n_j * n
  std::vector<double> joint_prob;    // n_d * n_j, row-major over diff

  // With n == 0 there is a single dummy zero atom so joint_prob stays
  // rectangular.
  std::size_t n_diff() const { return p == 0 ? 0 : diff_support.size() / p; }
  std::size_t n_jump() const { return n == 0 ? 1 : jump_support.size() / n; }
  std::span<const double> diff_atom(std::size_t i) const {
    return {diff_support.data() + static_cast<std::ptrdiff_t>(i) * p, static_cast<std::size_t>(p)};
  }
  std::span<const double> jump_atom(std::size_t j) const {
    return {jump_support.data() + static_cast<std::ptrdiff_t>(j) * n, static_cast<std::size_t>(n)};
  }
  double prob(std::size_t i, std::size_t j) const { return joint_prob[i * n_jump() + j]; }
};

// Per-step derived compensator data.
struct StepModel {
  StepLaw law;
  double dC = 0.0;                    // E|dX_diff|^2 + E|dX_jump|^2
  Eigen::MatrixXd gram;               // E[dX_diff dX_diff^T], p x p
  Eigen::MatrixXd gram_pinv;          // pseudo-inverse of gram
  Eigen::MatrixXd c;                  // PSD square root of gram / dC
  std::vector<double> jump_marginal;  // per jump atom
  std::vector<char> jump_is_zero;     // per jump atom
  double zeta = 0.0;                  // mass of nonzero jump atoms

  // K(w) = jump_marginal(w) / dC on nonzero atoms.
  double kernel(std::size_t j) const { return jump_is_zero[j] ? 0.0 : jump_marginal[j] / dC; }
};

struct DriverModel {
  std::vector<double> times;    // t_0..t_K
  std::vector<StepModel> steps; // K entries

  std::size_t num_steps() const { return steps.size(); }
  double total_c() const;
};

// Values of a jump-argument function on the step's jump atoms, R^d valued;
// the value at the zero atom is forced to 0 by convention.
struct JumpFunction {
  int d = 1;
  std::vector<double> values;  // n_jump_atoms * d

  std::span<const double> at(std::size_t j) const {
    return {values.data() + static_cast<std::ptrdiff_t>(j) * d, static_cast<std::size_t>(d)};
  }
};

// Build from independent per-step marginals. Throws NonZeroMean,
// DegenerateStep (dC == 0) and NonPSD.
DriverModel build_driver(const std::vector<double>& times,
                         const std::vector<IncrementLaw>& diff_laws,
                         const std::vector<IncrementLaw>& jump_laws);

// Correlated variant for orthogonality tests; joint zero-mean still required.
DriverModel build_driver_joint(const std::vector<double>& times,
                               const std::vector<StepLaw>& laws);

// hat U = sum_{w != 0} U(w) * jump_marginal(w), the nu-integral at t_k.
std::vector<double> hat_u(const DriverModel& model, std::size_t k, const JumpFunction& u);

// Gamma(U) = int (U - hatU)(Theta - hatTheta) K + (1 - zeta) dC int U K int Theta K.
// Theta must be scalar with |Theta(w)| <= |w|; throws ThetaBoundViolated.
std::vector<double> gamma_eval(const DriverModel& model, std::size_t k, const JumpFunction& u,
                               const JumpFunction& theta);

// tnorm(U)^2 = int |U - hatU|^2 K + (1 - zeta) dC |int U K|^2.
double tnorm_sq(const DriverModel& model, std::size_t k, const JumpFunction& u);

// Default Theta(t, x) = x_coord; satisfies the |Theta| <= |I| bound.
JumpFunction theta_coordinate(const DriverModel& model, std::size_t k, int coord = 0);

// E[dX_diff | dX_jump = w] == 0 for every nonzero atom w, to 1e-12.
bool validate_driver_orthogonality(const DriverModel& model);

// Lipschitz data of a generator, per step.
struct LipschitzCoeffs {
  std::vector<double> r, theta_o, theta_nat, theta_star;  // size K each

  static LipschitzCoeffs constant(std::size_t K, double r, double th_o, double th_nat,
                                  double th_star);
  double alpha_sq(std::size_t k) const;  // max{sqrt(r), th_o, th_nat, sqrt(th_star)} at t_{k+1}
};

struct LipschitzToA {
  FVPath A;
  double phi = 0.0;  // max_k dA_k
};

LipschitzToA lipschitz_to_A(const LipschitzCoeffs& coeffs, const DriverModel& model);
// Lambda_beta = E(beta A)_T for deterministic non-decreasing A.
double lambda_beta_of(const FVPath& A, double beta);

// Named presets for the config file: "rademacher", "trinomial(p0)", "jumponly".
IncrementLaw increment_preset(const std::string& name, double scale);

}  // namespace chaoslab

#endif
