#include "chaoslab/fvpath.hpp"

#include <cmath>

#include "chaoslab/errors.hpp"

namespace chaoslab {

FVPath::FVPath(std::vector<double> t, std::vector<double> j, std::vector<double> dr)
    : times(std::move(t)), jumps(std::move(j)), drift(std::move(dr)) {
  if (times.size() != jumps.size() + 1 || jumps.size() != drift.size())
    throw DimensionMismatch("FVPath: times must have one more entry than jumps/drift");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1]))
      throw DimensionMismatch("FVPath: grid times must be strictly increasing");
}

FVPath FVPath::pure_jump(std::vector<double> t, std::vector<double> j) {
  std::vector<double> dr(j.size(), 0.0);
  return FVPath(std::move(t), std::move(j), std::move(dr));
}

FVPath FVPath::zero(std::vector<double> t) {
  std::vector<double> j(t.size() - 1, 0.0);
  return pure_jump(std::move(t), std::move(j));
}

double FVPath::value_at(std::size_t k) const {
  double v = 0.0;
  for (std::size_t i = 0; i < k; ++i) v += drift[i] + jumps[i];
  return v;
}

double FVPath::continuous_at(std::size_t k) const {
  double v = 0.0;
  for (std::size_t i = 0; i < k; ++i) v += drift[i];
  return v;
}

double FVPath::left_value_at(std::size_t k) const {
  if (k == 0) return 0.0;
  return value_at(k) - jumps[k - 1];
}

bool FVPath::non_decreasing() const {
  for (std::size_t i = 0; i < steps(); ++i)
    if (drift[i] < 0.0 || jumps[i] < 0.0) return false;
  return true;
}

bool FVPath::non_increasing() const {
  for (std::size_t i = 0; i < steps(); ++i)
    if (drift[i] > 0.0 || jumps[i] > 0.0) return false;
  return true;
}

FVPath FVPath::scaled(double c) const {
  FVPath out = *this;
  for (auto& x : out.jumps) x *= c;
  for (auto& x : out.drift) x *= c;
  return out;
}

static void require_same_grid(const FVPath& a, const FVPath& b) {
  if (a.times != b.times)
    throw DimensionMismatch("FVPath operation requires identical grids");
}

FVPath add(const FVPath& a, const FVPath& b) {
  require_same_grid(a, b);
  FVPath out = a;
  for (std::size_t i = 0; i < out.steps(); ++i) {
    out.jumps[i] += b.jumps[i];
    out.drift[i] += b.drift[i];
  }
  return out;
}

FVPath quad_covar(const FVPath& a, const FVPath& b) {
  require_same_grid(a, b);
  FVPath out = FVPath::zero(a.times);
  for (std::size_t i = 0; i < out.steps(); ++i) out.jumps[i] = a.jumps[i] * b.jumps[i];
  return out;
}

std::vector<double> stoch_exp_values(const FVPath& a) {
  const std::size_t K = a.steps();
  std::vector<double> v(K + 1);
  v[0] = 1.0;
  double cont = 0.0;
  double jump_prod = 1.0;
  for (std::size_t k = 1; k <= K; ++k) {
    cont += a.drift[k - 1];
    jump_prod *= 1.0 + a.jumps[k - 1];
    v[k] = std::exp(cont) * jump_prod;
  }
  return v;
}

std::vector<double> stoch_exp_left_values(const FVPath& a) {
  const std::size_t K = a.steps();
  std::vector<double> v(K + 1);
  v[0] = 1.0;
  double cont = 0.0;
  double jump_prod = 1.0;
  for (std::size_t k = 1; k <= K; ++k) {
    cont += a.drift[k - 1];
    v[k] = std::exp(cont) * jump_prod;  // jump at t_k not yet applied
    jump_prod *= 1.0 + a.jumps[k - 1];
  }
  return v;
}

FVPath stoch_exp(const FVPath& a) {
  const auto vals = stoch_exp_values(a);
  const auto lefts = stoch_exp_left_values(a);
  FVPath out = FVPath::zero(a.times);
  for (std::size_t k = 1; k <= a.steps(); ++k) {
    out.drift[k - 1] = lefts[k] - vals[k - 1];
    out.jumps[k - 1] = vals[k] - lefts[k];
  }
  return out;
}

FVPath bar_path(const FVPath& a) {
  FVPath out = a;
  for (std::size_t i = 0; i < a.steps(); ++i) {
    const double da = a.jumps[i];
    if (da == -1.0) throw JumpAtMinusOne("bar_path: jump equal to -1");
    out.jumps[i] = da - da * da / (1.0 + da);  // = da / (1 + da)
  }
  return out;
}

FVPath tilde_path(const FVPath& a, double delta, double gamma) {
  const FVPath ga = a.scaled(gamma);
  for (double dj : ga.jumps)
    if (dj == -1.0) throw JumpAtMinusOne("tilde_path: gamma * jump equal to -1");
  const FVPath da = a.scaled(delta);
  const FVPath gbar = bar_path(ga);
  FVPath out = add(da, gbar.scaled(-1.0));
  const FVPath cov = quad_covar(da, gbar);
  for (std::size_t i = 0; i < out.steps(); ++i) out.jumps[i] -= cov.jumps[i];
  return out;
}

bool values_close(double x, double y, double abs_tol, double rel_tol, double mag_switch) {
  const double diff = std::fabs(x - y);
  const double mag = std::max(std::fabs(x), std::fabs(y));
  if (mag <= mag_switch) return diff <= abs_tol;
  return diff <= rel_tol * mag;
}

bool product_identity_check(const FVPath& a, const FVPath& b) {
  const FVPath sum = add(add(a, b), quad_covar(a, b));
  const auto ea = stoch_exp_values(a);
  const auto eb = stoch_exp_values(b);
  const auto es = stoch_exp_values(sum);
  for (std::size_t k = 0; k < ea.size(); ++k)
    if (!values_close(ea[k] * eb[k], es[k])) return false;
  return true;
}

}  // namespace chaoslab
