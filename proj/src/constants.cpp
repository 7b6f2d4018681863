#include "chaoslab/constants.hpp"

#include <algorithm>
#include <cmath>

#include "chaoslab/errors.hpp"

namespace chaoslab {

double lambda_gdp(double gamma, double delta, double phi) {
  if (gamma == delta) throw EqualExponents("lambda_gdp: gamma == delta");
  const double num = 1.0 + gamma * phi;
  return num * num / (gamma * std::fabs(delta - gamma));
}

double m_star(double beta, double phi) {
  static const double s17 = std::sqrt(17.0);
  return (6.0 * s17 + 35.0) / beta + (6.0 * s17 + 26.0) * phi;
}

double m_tilde(double beta, double phi) {
  const double root = 2.0 * std::sqrt(2.0 / beta + 9.0) * std::sqrt(2.0 / beta + 17.0);
  const double s = root + 4.0 / beta;
  return (s + 35.0) / beta + (s + 26.0) * phi;
}

namespace {

// gamma-objective with delta = beta: g1 for star, g2 for tilde.
double gamma_objective(MKind kind, double gamma, double beta, double phi) {
  const double one = 1.0 + gamma * phi;
  const double front = (kind == MKind::star) ? 9.0 * beta : 2.0 + 9.0 * beta;
  return 9.0 / beta + 8.0 * one / gamma + front / (beta - gamma) * one * one / gamma;
}

struct GridMin {
  double x;
  double f;
};

GridMin golden_refine(MKind kind, double beta, double phi, double lo, double hi) {
  static const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = gamma_objective(kind, x1, beta, phi);
  double f2 = gamma_objective(kind, x2, beta, phi);
  for (int it = 0; it < 200 && (b - a) > 1e-14 * beta; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = gamma_objective(kind, x1, beta, phi);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = gamma_objective(kind, x2, beta, phi);
    }
  }
  const double x = 0.5 * (a + b);
  return {x, gamma_objective(kind, x, beta, phi)};
}

GridMin minimize_impl(MKind kind, double beta, double phi, std::size_t grid_size) {
  if (grid_size < 1000) grid_size = 1000;
  const double h = beta / static_cast<double>(grid_size + 1);
  std::size_t best = 1;
  double best_f = gamma_objective(kind, h, beta, phi);
  for (std::size_t i = 2; i <= grid_size; ++i) {
    const double f = gamma_objective(kind, h * static_cast<double>(i), beta, phi);
    if (f < best_f) {
      best_f = f;
      best = i;
    }
  }
  const double lo = h * static_cast<double>(best > 1 ? best - 1 : best);
  const double hi = h * static_cast<double>(best + 1);
  return golden_refine(kind, beta, phi, lo, std::min(hi, beta * (1.0 - 1e-15)));
}

}  // namespace

double minimize_over_gamma(MKind kind, double beta, double phi, std::size_t grid_size) {
  return minimize_impl(kind, beta, phi, grid_size).f;
}

double argmin_over_gamma(MKind kind, double beta, double phi, std::size_t grid_size) {
  return minimize_impl(kind, beta, phi, grid_size).x;
}

TheoremId theorem_from_string(const std::string& name) {
  if (name == "path-MV") return TheoremId::path_mv;
  if (name == "instant-MV") return TheoremId::instant_mv;
  if (name == "path-MF") return TheoremId::path_mf;
  if (name == "instant-MF") return TheoremId::instant_mf;
  if (name == "chaos-PC9") return TheoremId::chaos_pc9;
  if (name == "chaos-PC8'") return TheoremId::chaos_pc8p;
  throw UnknownTheorem("unknown theorem id: " + name);
}

std::string theorem_to_string(TheoremId id) {
  switch (id) {
    case TheoremId::path_mv: return "path-MV";
    case TheoremId::instant_mv: return "instant-MV";
    case TheoremId::path_mf: return "path-MF";
    case TheoremId::instant_mf: return "instant-MF";
    case TheoremId::chaos_pc9: return "chaos-PC9";
    case TheoremId::chaos_pc8p: return "chaos-PC8'";
  }
  throw UnknownTheorem("bad theorem id");
}

bool theorem_needs_lambda(TheoremId id) {
  return id == TheoremId::path_mv || id == TheoremId::path_mf || id == TheoremId::chaos_pc9;
}

bool theorem_is_path(TheoremId id) { return theorem_needs_lambda(id); }

ContractionReport contraction_condition(TheoremId id, double beta_hat, double phi,
                                        double lambda_beta) {
  if (!(beta_hat > 0.0)) throw Error("contraction_condition: beta_hat must be > 0");
  if (phi < 0.0) throw Error("contraction_condition: phi must be >= 0");
  ContractionReport rep;
  rep.theorem = id;
  rep.beta_hat = beta_hat;
  rep.phi = phi;
  rep.lambda_beta = lambda_beta;
  switch (id) {
    case TheoremId::path_mv:
    case TheoremId::path_mf:
      rep.modulus = std::max(2.0, 2.0 * lambda_beta / beta_hat) * m_star(beta_hat, phi);
      break;
    case TheoremId::chaos_pc9:
      rep.modulus = std::max(2.0, 3.0 * lambda_beta / beta_hat) * m_star(beta_hat, phi);
      break;
    case TheoremId::instant_mv:
    case TheoremId::instant_mf:
      rep.modulus = 2.0 * m_tilde(beta_hat, phi);
      break;
    case TheoremId::chaos_pc8p:
      rep.modulus = 3.0 * m_tilde(beta_hat, phi);
      break;
  }
  rep.holds = rep.modulus < 1.0;
  return rep;
}

std::optional<double> suggest_beta(TheoremId id, double phi,
                                   const std::function<double(double)>& lambda_of_beta) {
  // 200 points per decade over beta in [1e-2, 1e6].
  const int per_decade = 200;
  const int decades = 8;
  for (int i = 0; i <= per_decade * decades; ++i) {
    const double beta = std::pow(10.0, -2.0 + static_cast<double>(i) / per_decade);
    double lambda = 0.0;
    if (theorem_needs_lambda(id)) {
      if (!lambda_of_beta) continue;
      lambda = lambda_of_beta(beta);
    }
    if (contraction_condition(id, beta, phi, lambda).holds) return beta;
  }
  return std::nullopt;
}

}  // namespace chaoslab
