#include "chaoslab/driver.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "chaoslab/errors.hpp"

namespace chaoslab {

void IncrementLaw::validate(bool zero_mean_required) const {
  if (atoms.size() != weights.size() * static_cast<std::size_t>(dim))
    throw DimensionMismatch("IncrementLaw: atom storage does not match dim");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw Error("IncrementLaw: weights must be positive");
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-12) throw Error("IncrementLaw: weights must sum to 1");
  if (zero_mean_required) {
    for (int j = 0; j < dim; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < size(); ++i) mean += weights[i] * atoms[i * dim + j];
      if (std::fabs(mean) > 1e-12)
        throw NonZeroMean("IncrementLaw: mean component exceeds 1e-12");
    }
  }
}

IncrementLaw IncrementLaw::rademacher(double sigma) {
  return IncrementLaw{1, {-sigma, sigma}, {0.5, 0.5}};
}

IncrementLaw IncrementLaw::trinomial(double p0, double scale) {
  if (!(p0 >= 0.0 && p0 < 1.0)) throw Error("trinomial: p0 must lie in [0,1)");
  const double side = (1.0 - p0) / 2.0;
  return IncrementLaw{1, {-scale, 0.0, scale}, {side, p0, side}};
}

IncrementLaw IncrementLaw::dirac_zero(int dim) {
  IncrementLaw law;
  law.dim = dim;
  law.atoms.assign(static_cast<std::size_t>(dim), 0.0);
  law.weights = {1.0};
  return law;
}

double DriverModel::total_c() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.dC;
  return s;
}

namespace {

bool atom_is_zero(std::span<const double> w) {
  for (double x : w)
    if (x != 0.0) return false;
  return true;
}

StepModel derive_step(StepLaw law) {
  StepModel st;
  st.law = std::move(law);
  const StepLaw& L = st.law;
  const std::size_t nd = L.n_diff(), nj = L.n_jump();
  if (L.joint_prob.size() != nd * nj)
    throw DimensionMismatch("StepLaw: joint_prob size mismatch");

  double mass = 0.0;
  for (double pr : L.joint_prob) {
    if (pr < 0.0) throw Error("StepLaw: negative probability");
    mass += pr;
  }
  if (std::fabs(mass - 1.0) > 1e-12) throw Error("StepLaw: probabilities must sum to 1");

  // zero-mean checks on both marginals
  for (int comp = 0; comp < L.p; ++comp) {
    double mean = 0.0;
    for (std::size_t i = 0; i < nd; ++i) {
      double wr = 0.0;
      for (std::size_t j = 0; j < nj; ++j) wr += L.prob(i, j);
      mean += wr * L.diff_atom(i)[comp];
    }
    if (std::fabs(mean) > 1e-12) throw NonZeroMean("diffusion increment has nonzero mean");
  }
  st.jump_marginal.assign(nj, 0.0);
  st.jump_is_zero.assign(nj, 0);
  for (std::size_t j = 0; j < nj; ++j) {
    for (std::size_t i = 0; i < nd; ++i) st.jump_marginal[j] += L.prob(i, j);
    st.jump_is_zero[j] = (L.n == 0) || atom_is_zero(L.jump_atom(j));
  }
  for (int comp = 0; comp < L.n; ++comp) {
    double mean = 0.0;
    for (std::size_t j = 0; j < nj; ++j) mean += st.jump_marginal[j] * L.jump_atom(j)[comp];
    if (std::fabs(mean) > 1e-12) throw NonZeroMean("jump increment has nonzero mean");
  }

  // dC = E|dX_diff|^2 + E|dX_jump|^2 and the diffusion Gram matrix
  st.gram = Eigen::MatrixXd::Zero(L.p, L.p);
  double e2_diff = 0.0, e2_jump = 0.0;
  for (std::size_t i = 0; i < nd; ++i) {
    double wr = 0.0;
    for (std::size_t j = 0; j < nj; ++j) wr += L.prob(i, j);
    const auto a = L.diff_atom(i);
    for (int r = 0; r < L.p; ++r) {
      e2_diff += wr * a[r] * a[r];
      for (int ccol = 0; ccol < L.p; ++ccol) st.gram(r, ccol) += wr * a[r] * a[ccol];
    }
  }
  for (std::size_t j = 0; j < nj; ++j) {
    if (st.jump_is_zero[j]) continue;
    const auto w = L.jump_atom(j);
    double s = 0.0;
    for (double x : w) s += x * x;
    e2_jump += st.jump_marginal[j] * s;
    st.zeta += st.jump_marginal[j];
  }
  st.dC = e2_diff + e2_jump;
  if (!(st.dC > 0.0)) throw DegenerateStep("step has dC == 0");

  // c = PSD square root of gram / dC, eigenvalues clamped at -1e-10
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(st.gram / st.dC);
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-10) throw NonPSD("diffusion covariance has negative eigenvalue");
    if (ev(i) < 1e-12) ev(i) = 0.0;
  }
  st.c = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();

  // pseudo-inverse of gram via the same eigendecomposition (scaled back)
  Eigen::VectorXd gev = ev * st.dC;
  Eigen::VectorXd inv = gev;
  for (int i = 0; i < inv.size(); ++i) inv(i) = gev(i) > 1e-12 * st.dC ? 1.0 / gev(i) : 0.0;
  st.gram_pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return st;
}

}  // namespace

DriverModel build_driver(const std::vector<double>& times,
                         const std::vector<IncrementLaw>& diff_laws,
                         const std::vector<IncrementLaw>& jump_laws) {
  const std::size_t K = times.size() - 1;
  if (diff_laws.size() != K || jump_laws.size() != K)
    throw DimensionMismatch("build_driver: need one law pair per step");
  DriverModel model;
  model.times = times;
  for (std::size_t k = 0; k < K; ++k) {
    diff_laws[k].validate(true);
    jump_laws[k].validate(true);
    StepLaw law;
    law.p = diff_laws[k].dim;
    law.n = jump_laws[k].dim;
    law.diff_support = diff_laws[k].atoms;
    law.jump_support = jump_laws[k].atoms;
    const std::size_t nd = diff_laws[k].size(), nj = jump_laws[k].size();
    law.joint_prob.resize(nd * nj);
    for (std::size_t i = 0; i < nd; ++i)
      for (std::size_t j = 0; j < nj; ++j)
        law.joint_prob[i * nj + j] = diff_laws[k].weights[i] * jump_laws[k].weights[j];
    model.steps.push_back(derive_step(std::move(law)));
  }
  return model;
}

DriverModel build_driver_joint(const std::vector<double>& times,
                               const std::vector<StepLaw>& laws) {
  if (laws.size() + 1 != times.size())
    throw DimensionMismatch("build_driver_joint: need one law per step");
  DriverModel model;
  model.times = times;
  for (const auto& law : laws) model.steps.push_back(derive_step(law));
  return model;
}

std::vector<double> hat_u(const DriverModel& model, std::size_t k, const JumpFunction& u) {
  const StepModel& st = model.steps.at(k);
  std::vector<double> out(u.d, 0.0);
  for (std::size_t j = 0; j < st.law.n_jump(); ++j) {
    if (st.jump_is_zero[j]) continue;
    const auto val = u.at(j);
    for (int r = 0; r < u.d; ++r) out[r] += st.jump_marginal[j] * val[r];
  }
  return out;
}

static void check_theta(const StepModel& st, const JumpFunction& theta) {
  if (theta.d != 1) throw ThetaBoundViolated("Theta must be scalar");
  for (std::size_t j = 0; j < st.law.n_jump(); ++j) {
    if (st.jump_is_zero[j]) continue;
    const auto w = st.law.jump_atom(j);
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (std::fabs(theta.at(j)[0]) > norm + 1e-12)
      throw ThetaBoundViolated("|Theta(w)| exceeds |w|");
  }
}

std::vector<double> gamma_eval(const DriverModel& model, std::size_t k, const JumpFunction& u,
                               const JumpFunction& theta) {
  const StepModel& st = model.steps.at(k);
  check_theta(st, theta);
  const auto uh = hat_u(model, k, u);
  const auto th = hat_u(model, k, theta);
  std::vector<double> out(u.d, 0.0);
  double int_theta_k = 0.0;
  std::vector<double> int_u_k(u.d, 0.0);
  for (std::size_t j = 0; j < st.law.n_jump(); ++j) {
    const double kj = st.kernel(j);
    if (kj == 0.0) continue;
    const auto uv = u.at(j);
    const double tv = theta.at(j)[0];
    for (int r = 0; r < u.d; ++r) {
      out[r] += (uv[r] - uh[r]) * (tv - th[0]) * kj;
      int_u_k[r] += uv[r] * kj;
    }
    int_theta_k += tv * kj;
  }
  const double tail = (1.0 - st.zeta) * st.dC;
  for (int r = 0; r < u.d; ++r) out[r] += tail * int_u_k[r] * int_theta_k;
  return out;
}

double tnorm_sq(const DriverModel& model, std::size_t k, const JumpFunction& u) {
  const StepModel& st = model.steps.at(k);
  const auto uh = hat_u(model, k, u);
  double first = 0.0;
  std::vector<double> int_u_k(u.d, 0.0);
  for (std::size_t j = 0; j < st.law.n_jump(); ++j) {
    const double kj = st.kernel(j);
    if (kj == 0.0) continue;
    const auto uv = u.at(j);
    for (int r = 0; r < u.d; ++r) {
      const double diff = uv[r] - uh[r];
      first += diff * diff * kj;
      int_u_k[r] += uv[r] * kj;
    }
  }
  double second = 0.0;
  for (int r = 0; r < u.d; ++r) second += int_u_k[r] * int_u_k[r];
  return first + (1.0 - st.zeta) * st.dC * second;
}

JumpFunction theta_coordinate(const DriverModel& model, std::size_t k, int coord) {
  const StepModel& st = model.steps.at(k);
  JumpFunction theta;
  theta.d = 1;
  theta.values.assign(st.law.n_jump(), 0.0);
  if (st.law.n == 0) return theta;
  for (std::size_t j = 0; j < st.law.n_jump(); ++j) {
    if (st.jump_is_zero[j]) continue;
    theta.values[j] = st.law.jump_atom(j)[coord];
  }
  return theta;
}

bool validate_driver_orthogonality(const DriverModel& model) {
  for (const auto& st : model.steps) {
    const std::size_t nd = st.law.n_diff(), nj = st.law.n_jump();
    for (std::size_t j = 0; j < nj; ++j) {
      if (st.jump_is_zero[j] || st.jump_marginal[j] == 0.0) continue;
      for (int comp = 0; comp < st.law.p; ++comp) {
        double cond_mean = 0.0;
        for (std::size_t i = 0; i < nd; ++i)
          cond_mean += st.law.prob(i, j) * st.law.diff_atom(i)[comp];
        if (std::fabs(cond_mean / st.jump_marginal[j]) > 1e-12) return false;
      }
    }
  }
  return true;
}

LipschitzCoeffs LipschitzCoeffs::constant(std::size_t K, double r, double th_o, double th_nat,
                                          double th_star) {
  LipschitzCoeffs c;
  c.r.assign(K, r);
  c.theta_o.assign(K, th_o);
  c.theta_nat.assign(K, th_nat);
  c.theta_star.assign(K, th_star);
  return c;
}

double LipschitzCoeffs::alpha_sq(std::size_t k) const {
  const double a = std::sqrt(r.at(k));
  const double b = theta_o.at(k);
  const double cc = theta_nat.at(k);
  const double d = std::sqrt(theta_star.at(k));
  return std::max(std::max(a, b), std::max(cc, d));
}

LipschitzToA lipschitz_to_A(const LipschitzCoeffs& coeffs, const DriverModel& model) {
  const std::size_t K = model.num_steps();
  if (coeffs.r.size() != K) throw DimensionMismatch("lipschitz_to_A: coefficient size mismatch");
  LipschitzToA out;
  out.A = FVPath::zero(model.times);
  for (std::size_t k = 0; k < K; ++k) {
    const double da = coeffs.alpha_sq(k) * model.steps[k].dC;
    out.A.jumps[k] = da;
    out.phi = std::max(out.phi, da);
  }
  return out;
}

double lambda_beta_of(const FVPath& A, double beta) {
  double prod = 1.0;
  for (std::size_t k = 0; k < A.steps(); ++k) prod *= 1.0 + beta * A.jumps[k];
  return prod * std::exp(beta * A.continuous_at(A.steps()));
}

IncrementLaw increment_preset(const std::string& name, double scale) {
  if (name == "rademacher") return IncrementLaw::rademacher(scale);
  if (name == "jumponly") return IncrementLaw::rademacher(scale);
  if (name.rfind("trinomial(", 0) == 0 && name.back() == ')') {
    const double p0 = std::stod(name.substr(10, name.size() - 11));
    return IncrementLaw::trinomial(p0, scale);
  }
  if (name == "zero") return IncrementLaw::dirac_zero(1);
  throw ConfigError("unknown increment preset: " + name);
}

}  // namespace chaoslab
