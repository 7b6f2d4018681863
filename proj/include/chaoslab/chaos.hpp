#ifndef CHAOSLAB_CHAOS_HPP
#define CHAOSLAB_CHAOS_HPP

#include <cstdint>
#include <vector>

#include "chaoslab/solver.hpp"

namespace chaoslab {

struct ChaosConfig {
  DriverModel model;
  GeneratorSpec gen;
  TerminalFamily terminal;
  SolveOptions opts;               // beta_hat, tol, mode flags
  std::vector<int> n_list;         // particle counts for gap experiments
  std::uint64_t seed = 1;
  std::size_t t_index = 0;         // 0 = terminal time
  double q = 6.0;
  std::size_t reps_cap = 64;
  std::size_t budget = 0;          // 0 = default node budget

  std::size_t effective_t() const {
    return t_index == 0 ? model.num_steps() : t_index;
  }
};

struct GapRow {
  int n = 0;
  double avg_gap = 0.0;       // (1/N) sum_i ||(dY,dZ,dU,dM)||^2_star
  double particle_gap = 0.0;  // particle i gap (run_particle_gap)
  StarNorms avg_components;
  int mf_iterations = 0;
};

struct ChaosReport {
  std::vector<GapRow> rows;
};

// Averaged star-norm gap between the joint mean-field solve and the
// McKean-Vlasov solution, for each N in Ns.
ChaosReport run_system_gap(const ChaosConfig& cfg, const std::vector<int>& Ns);
// Fixed-particle version.
ChaosReport run_particle_gap(const ChaosConfig& cfg, int particle,
                             const std::vector<int>& Ns);

// Conservation of solutions: the per-particle fixed-law solve on the joint
// space agrees with the single-particle MV solve. corrupt injects a fault
// (negative control).
bool conservation_check(const ChaosConfig& cfg, int n, bool corrupt = false,
                        double tol = 1e-10);

// N i.i.d. samples of Y_{t_k} drawn by root-to-depth-k walks with exact
// transition probabilities; counter-based, reproducible per (seed, index).
std::vector<double> sample_mv_values(const SolveResult& mv, std::size_t k, std::size_t n,
                                     std::uint64_t seed);

struct RateRow {
  int n = 0;
  std::size_t reps = 0;
  double mean_w2sq = 0.0;
  double stderr_mean = 0.0;
};

struct RateReport {
  std::vector<RateRow> rows;
  bool slope_defined = false;
  double slope = 0.0;       // log-log slope of mean W2^2 vs N, smallest N excluded
  double envelope_c = 0.0;  // max over N of measured / envelope(N, d, q)
  double q = 0.0;
  int dim = 1;
};

// Fournier-Guillin envelope N^{-1/2} + N^{-(q-2)/q} and its d >= 4 variants.
double envelope(double n, int d, double q);

// threads > 1 runs the (N) cells on a small pool; results are written to
// indexed slots, so the output is independent of scheduling.
RateReport rate_experiment(const SolveResult& mv, std::size_t t_k, const std::vector<int>& Ns,
                           std::size_t reps_cap, double q, std::uint64_t seed, int threads = 1);

// Lambda_{q,T} = (1/beta) sum_k (E|Y_k|^q)^{2/q} dE(beta A)_k on the exact law.
double lambda_qt(const SolveResult& mv, const FVPath& A, double beta_hat, double q);
// ||alpha Y||^2_{H2_beta}; always <= lambda_qt for q > 2.
double alpha_y_h2(const SolveResult& mv, const FVPath& A, double beta_hat);

struct Cor64Row {
  int n = 0;
  double expected_w2sq = 0.0;  // E[W2^2(L^N(Y^N_t), L(Y^1_t))], exact over nodes
  double sup_grid_w2 = 0.0;    // sup over grid times of W2 of the two laws
};

std::vector<Cor64Row> cor64_check(const ChaosConfig& cfg, const std::vector<int>& Ns,
                                  std::size_t t_k);

// Theorem-proof constant bound for the terminal-perturbation response: the
// averaged gap is at most (26 + 2/beta + (9 beta + 2) Phi) / (1 - 3 Mtilde)
// times the averaged terminal norm gap R(N).
struct PerturbationBound {
  double gap = 0.0;
  double bound = 0.0;
  double r_n = 0.0;
  double slack() const { return bound - gap; }
};

PerturbationBound perturbation_response_check(const ChaosConfig& cfg, int n);

}  // namespace chaoslab

#endif
