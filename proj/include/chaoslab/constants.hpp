#ifndef CHAOSLAB_CONSTANTS_HPP
#define CHAOSLAB_CONSTANTS_HPP

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

namespace chaoslab {

// Lambda^{gamma,delta,Phi} = (1 + gamma Phi)^2 / (gamma |delta - gamma|).
// Throws EqualExponents for gamma == delta.
double lambda_gdp(double gamma, double delta, double phi);

// M_star^Phi(beta) = (6 sqrt(17) + 35)/beta + (6 sqrt(17) + 26) Phi.
double m_star(double beta, double phi);

// M_tilde^Phi(beta) = (2 sqrt(2/b+9) sqrt(2/b+17) + 4/b + 35)/b
//                   + (2 sqrt(2/b+9) sqrt(2/b+17) + 4/b + 26) Phi.
double m_tilde(double beta, double phi);

enum class MKind { star, tilde };

// Build-time oracle: grid search of the gamma-objective over (0, beta) with
// delta fixed at beta, refined by golden-section around the best cell.
double minimize_over_gamma(MKind kind, double beta, double phi, std::size_t grid_size);
// Interior minimizer location found by the same search.
double argmin_over_gamma(MKind kind, double beta, double phi, std::size_t grid_size);

enum class TheoremId {
  path_mv,      // max{2, 2 Lambda/beta} M_star < 1
  instant_mv,   // 2 M_tilde < 1
  path_mf,      // max{2, 2 Lambda/beta} M_star < 1
  instant_mf,   // 2 M_tilde < 1
  chaos_pc9,    // max{2, 3 Lambda/beta} M_star < 1
  chaos_pc8p,   // 3 M_tilde < 1
};

TheoremId theorem_from_string(const std::string& name);  // throws UnknownTheorem
std::string theorem_to_string(TheoremId id);
bool theorem_needs_lambda(TheoremId id);
bool theorem_is_path(TheoremId id);

struct ContractionReport {
  TheoremId theorem;
  double beta_hat = 0.0;
  double phi = 0.0;
  double lambda_beta = 0.0;  // ignored for the instantaneous theorems
  double modulus = 0.0;
  bool holds = false;
};

ContractionReport contraction_condition(TheoremId id, double beta_hat, double phi,
                                        double lambda_beta);

// Smallest beta on a fixed log grid for which the theorem condition holds,
// or nullopt. lambda_of_beta supplies E(beta A)_T for the path theorems.
std::optional<double> suggest_beta(TheoremId id, double phi,
                                   const std::function<double(double)>& lambda_of_beta);

}  // namespace chaoslab

#endif
