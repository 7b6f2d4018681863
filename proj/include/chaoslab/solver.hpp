#ifndef CHAOSLAB_SOLVER_HPP
#define CHAOSLAB_SOLVER_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chaoslab/constants.hpp"
#include "chaoslab/generator.hpp"
#include "chaoslab/scenario.hpp"

namespace chaoslab {

// Terminal conditions xi^i = phi(own driver path), optionally perturbed by
// eps(N) * psi with psi = (1/N) sum_m phi(path of particle m).
struct TerminalFamily {
  enum class Kind { constant, xcirc, tanh_xcirc, xjump, xsum, explicit_values };
  enum class Eps { zero, inv_n, inv_sqrt_n };

  Kind kind = Kind::constant;
  double constant = 1.0;
  double scale = 1.0;
  Eps eps = Eps::zero;
  int d = 1;
  // kind == explicit_values: per-particle leaf arrays (small trees only)
  std::shared_ptr<std::vector<LevelValues>> explicit_leaves;

  static TerminalFamily make(const std::string& kind_name, double value, double scale = 1.0);
  TerminalFamily unperturbed() const {
    TerminalFamily t = *this;
    t.eps = Eps::zero;
    return t;
  }

  double eps_value(int particles) const;
  bool functional() const { return kind != Kind::explicit_values; }
  // phi of one particle's own path, given its single-outcome digits per step.
  double phi(const DriverModel& model, const std::vector<std::size_t>& digits) const;
};

struct SolveOptions {
  double beta_hat = 1.0;
  double tol = 1e-10;       // Picard tolerance on the star-norm distance
  int max_iter = 200;
  bool left_limit = false;  // evaluate f at t_{k+1} with the left limit
  enum class Init { zero_start, terminal_start } init = Init::zero_start;
};

struct PicardTrace {
  std::vector<double> diff_star_sq;  // squared star-norm of successive differences
  std::vector<double> ratios;        // diff_sq[m] / diff_sq[m-1]
  bool converged = false;
  int iterations = 0;
  bool divergence_detected = false;
  std::string warning;
};

struct StarNorms {
  double s2 = 0.0;        // sup-norm component of Y
  double h2_alpha_y = 0.0;
  double h2_z = 0.0;
  double h2_u = 0.0;
  double h2_m = 0.0;
  double star_path() const { return s2 + h2_z + h2_u + h2_m; }
  double star_instant() const { return star_path() + h2_alpha_y; }
};

enum class MeasureFlow { none, exact_law, empirical, fixed };

// Result of a solve; holds the full tree-indexed quadruple per particle.
struct SolveResult {
  std::shared_ptr<const ScenarioTree> tree;
  GeneratorSpec gen;
  TerminalFamily terminal;
  SolveOptions opts;
  FVPath A;
  double phi = 0.0;
  MeasureFlow flow = MeasureFlow::none;
  int d = 1, p = 1;

  struct ParticleState {
    std::vector<LevelValues> y;    // depths 0..K (leaf level may be empty)
    std::vector<LevelValues> z;    // depths 0..K-1, d*p per node
    std::vector<LevelValues> u;    // depths 0..K-1, nj*d per node
    std::vector<LevelValues> dm2;  // depths 0..K-1, E[|dM|^2 | node]
    std::vector<LevelValues> dm;   // depths 1..K when materialized, else empty
    bool leaf_y_stored = false;
    bool dm_stored = false;
  };
  std::vector<ParticleState> state;
  // Final measure argument flow per time index 1..K (exact_law / fixed runs).
  std::vector<MeasureArg> law_flow;
  PicardTrace trace;

  double y0(int particle = 0, int coord = 0) const {
    return state[particle].y[0].data[coord];
  }
};

// Standard BSDE (no measure argument). xi must not be perturbed.
SolveResult solve_standard(const std::shared_ptr<const ScenarioTree>& tree,
                           const TerminalFamily& xi, const GeneratorSpec& gen,
                           const SolveOptions& opts);

// McKean-Vlasov: the measure argument is the exact law of the previous
// iterate. Requires a single-particle tree.
SolveResult solve_mckean_vlasov(const std::shared_ptr<const ScenarioTree>& tree,
                                const TerminalFamily& xi, const GeneratorSpec& gen,
                                const SolveOptions& opts);

// Mean-field system: the measure argument is the empirical measure across
// particles at the current node.
SolveResult solve_meanfield(const std::shared_ptr<const ScenarioTree>& tree,
                            const TerminalFamily& xi, const GeneratorSpec& gen,
                            const SolveOptions& opts);

// Standard solve with the measure argument frozen to a given per-time flow
// (conservation-of-solutions checks).
SolveResult solve_fixed_flow(const std::shared_ptr<const ScenarioTree>& tree,
                             const TerminalFamily& xi, const GeneratorSpec& gen,
                             const SolveOptions& opts, std::vector<MeasureArg> flow);

// beta-weighted norms of one particle's quadruple.
StarNorms star_norms(const SolveResult& result, int particle, double beta);

// Squared star distance between two solutions living on the same tree.
StarNorms star_sq_distance(const SolveResult& a, const SolveResult& b, int particle);

// Squared star gap between particle i of a joint mean-field solve and the
// single-particle McKean-Vlasov solution lifted to the joint tree.
StarNorms star_sq_gap(const SolveResult& mf, const SolveResult& mv, int particle);

// Materialize dm arrays (small trees) so nodewise identities can be checked.
void materialize_dm(SolveResult& result, int particle);
// Max nodewise BSDE identity residual over the tree (requires dm).
double bsde_max_residual(SolveResult& result, int particle);

// A-priori inequality report for the generator-free equation
// y_t = E[xi + sum_{j>k} f_j dC_j | F_k].
struct AprioriLine {
  std::string name;
  double lhs = 0.0, rhs = 0.0;
  double slack() const { return rhs - lhs; }
};
struct AprioriReport {
  std::vector<AprioriLine> lines;  // six inequalities
  double norm_xi = 0.0, norm_f_over_alpha = 0.0;
  bool all_hold(double tol = 1e-10) const;
};

AprioriReport apriori_verify(const ScenarioTree& tree, const LevelValues& xi,
                             const std::vector<LevelValues>& f_process, const FVPath& A,
                             double gamma, double delta, double phi);

// Itemized standard-data report plus the contraction verdict.
struct StandardDataReport {
  struct Item {
    std::string name;
    bool pass = true;
    std::string detail;
  };
  std::vector<Item> items;
  ContractionReport contraction;
  bool all_pass() const;
};

StandardDataReport standard_data_check(const DriverModel& model, const GeneratorSpec& gen,
                                       double beta_hat, TheoremId theorem);

}  // namespace chaoslab

#endif
