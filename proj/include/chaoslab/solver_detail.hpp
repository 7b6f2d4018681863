#ifndef CHAOSLAB_SOLVER_DETAIL_HPP
#define CHAOSLAB_SOLVER_DETAIL_HPP

// Internal solver machinery shared by the Picard engine and the norm /
// residual analysis passes.

#include <cmath>
#include <memory>
#include <vector>

#include "chaoslab/solver.hpp"

namespace chaoslab::detail {

constexpr std::size_t kMaterializeCap = 1u << 22;  // values per array
constexpr std::size_t kMaxJump = 64;
constexpr std::size_t kMaxDim = 16;

// E|U(dX)1_{!=0} - Uhat|^2 for flat u (nj x d); uhat is the nu-integral.
inline double step_e2_jump(const StepModel& st, int d, const double* u_vals,
                           const double* uhat) {
  const std::size_t nj = st.law.n_jump();
  double acc = 0.0;
  for (std::size_t j = 0; j < nj; ++j) {
    if (st.jump_is_zero[j]) continue;
    for (int r = 0; r < d; ++r) {
      const double diff = u_vals[j * d + r] - uhat[r];
      acc += st.jump_marginal[j] * diff * diff;
    }
  }
  double uh2 = 0.0;
  for (int r = 0; r < d; ++r) uh2 += uhat[r] * uhat[r];
  return acc + (1.0 - st.zeta) * uh2;
}

// nu-integral of flat u values into uhat (d).
inline void step_uhat(const StepModel& st, int d, const double* u_vals, double* uhat) {
  const std::size_t nj = st.law.n_jump();
  for (int r = 0; r < d; ++r) uhat[r] = 0.0;
  for (std::size_t j = 0; j < nj; ++j) {
    if (st.jump_is_zero[j]) continue;
    for (int r = 0; r < d; ++r) uhat[r] += st.jump_marginal[j] * u_vals[j * d + r];
  }
}

// tr(Z gram Z^T) == ||Z c||_F^2 dC for flat z (d x p).
inline double step_z_energy(const StepModel& st, int d, int p, const double* z_vals) {
  double acc = 0.0;
  for (int r = 0; r < d; ++r)
    for (int q1 = 0; q1 < p; ++q1)
      for (int q2 = 0; q2 < p; ++q2)
        acc += z_vals[r * p + q1] * st.gram(q1, q2) * z_vals[r * p + q2];
  return acc;
}

// Gamma(u) with the coordinate Theta, into out (d).
inline void step_gamma(const StepModel& st, int d, const double* u_vals, double* out) {
  const std::size_t nj = st.law.n_jump();
  double theta_hat = 0.0;
  double uhat[kMaxDim] = {0};
  for (std::size_t j = 0; j < nj; ++j) {
    if (st.jump_is_zero[j]) continue;
    const double tv = st.law.n > 0 ? st.law.jump_atom(j)[0] : 0.0;
    theta_hat += st.jump_marginal[j] * tv;
    for (int r = 0; r < d; ++r) uhat[r] += st.jump_marginal[j] * u_vals[j * d + r];
  }
  double int_theta_k = 0.0;
  double int_u_k[kMaxDim] = {0};
  for (int r = 0; r < d; ++r) out[r] = 0.0;
  for (std::size_t j = 0; j < nj; ++j) {
    const double kj = st.kernel(j);
    if (kj == 0.0) continue;
    const double tv = st.law.n > 0 ? st.law.jump_atom(j)[0] : 0.0;
    int_theta_k += tv * kj;
    for (int r = 0; r < d; ++r) {
      out[r] += (u_vals[j * d + r] - uhat[r]) * (tv - theta_hat) * kj;
      int_u_k[r] += u_vals[j * d + r] * kj;
    }
  }
  const double tail = (1.0 - st.zeta) * st.dC;
  for (int r = 0; r < d; ++r) out[r] += tail * int_u_k[r] * int_theta_k;
}

// Row average of Z c scaled by 1/sqrt(p), into out (d).
inline void step_zc_rowavg(const StepModel& st, int d, int p, const double* z_vals,
                           double* out) {
  const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(p));
  for (int r = 0; r < d; ++r) {
    double acc = 0.0;
    for (int q1 = 0; q1 < p; ++q1) {
      double zc = 0.0;
      for (int q2 = 0; q2 < p; ++q2) zc += z_vals[r * p + q2] * st.c(q2, q1);
      acc += zc;
    }
    out[r] = acc * inv_sqrt_p;
  }
}

struct StateGen {
  std::vector<std::vector<LevelValues>> y;  // [particle][depth 0..K-1]
  std::vector<std::vector<LevelValues>> z;
  std::vector<std::vector<LevelValues>> u;
  bool leaf_is_terminal = false;
};

struct Engine {
  std::shared_ptr<const ScenarioTree> tree_ptr;
  const ScenarioTree& tree;
  const GeneratorSpec* gen_main;
  TerminalFamily terminal;
  SolveOptions opts;
  MeasureFlow flow;
  const std::vector<MeasureArg>* fixed_flow = nullptr;

  int N = 1, d = 1, p = 1;
  std::size_t K = 0;
  FVPath A;
  double phi_bound = 0.0;
  std::vector<double> lefts, posts;
  std::vector<std::vector<double>> probs;

  StateGen cur, prev, prevprev;
  std::vector<std::vector<LevelValues>> cur_dm2;  // [particle][depth 0..K-1]
  std::vector<MeasureArg> flow_prev, flow_prevprev;
  PicardTrace trace;

  double last_ez = 0.0, last_eu = 0.0, last_em = 0.0;
  std::vector<double> scratch_a, scratch_b, scratch_c;

  struct SweepDiff {
    double s2 = 0.0;
    double h2_alpha_y = 0.0, h2_z = 0.0, h2_u = 0.0, h2_m = 0.0;
    double star_sq(GenMode mode) const {
      const double base = s2 + h2_z + h2_u + h2_m;
      return mode == GenMode::path ? base : base + h2_alpha_y;
    }
  };

  Engine(const std::shared_ptr<const ScenarioTree>& t, const GeneratorSpec& g,
         const TerminalFamily& xi, const SolveOptions& o, MeasureFlow fl);

  bool empirical_mode() const { return flow == MeasureFlow::empirical; }
  double s2_weight(std::size_t k) const { return k < K ? posts[k] : lefts[k]; }

  void init_state(StateGen& s) const;
  void zero_state(StateGen& s) const;
  void node_digits(std::size_t depth, std::size_t idx, int i,
                   std::vector<std::size_t>& out) const;
  void build_phi_tables(std::size_t v, std::vector<double>& phi_tab) const;
  LevelValues materialize_leaf(bool leaf_terminal, int i) const;
  MeasureArg summary_at_depth(const StateGen& s, std::size_t depth_k) const;
  void refresh_flow(std::vector<MeasureArg>& out, const StateGen& s) const;

  double e2_jump_integral(std::size_t k, const double* u_vals, const double* uhat) const;
  double z_energy(std::size_t k, const double* z_vals) const;
  void gamma_of(std::size_t k, const double* u_vals, double* out) const;
  void zc_rowavg_of(std::size_t k, const double* z_vals, double* out) const;
  void apply_representation(std::size_t k, std::size_t v, int i, const double* gbar,
                            const double* R_flat, const double* h_raw, double e2, double* z_out,
                            double* u_out, double* dm2_out);

  SweepDiff sweep(bool first_iter);
  void sweep_node_fast(bool first_iter, std::size_t k, std::size_t v, std::size_t B, double dC,
                       bool child_is_leaf, std::size_t m_single, double eps,
                       const std::vector<double>& phi_tab, std::vector<double>& gbar_all,
                       std::vector<double>& dbar_all, std::vector<double>& Rn,
                       std::vector<double>& Rd, std::vector<double>& e2n,
                       std::vector<double>& e2d, std::vector<double>& hn,
                       std::vector<double>& hd);
  void sweep_node_generic(bool first_iter, std::size_t k, std::size_t v, std::size_t B,
                          double dC, bool child_is_leaf, std::size_t m_single, double eps,
                          bool empirical, bool inst, const std::vector<double>& phi_tab,
                          std::vector<double>& f_new, std::vector<double>& f_old,
                          std::vector<double>& y_new_c, std::vector<double>& y_prev_c,
                          std::vector<double>& y_pp_c, const std::vector<double>& zc_prev,
                          const std::vector<double>& zc_pp, const std::vector<double>& gam_prev,
                          const std::vector<double>& gam_pp,
                          const std::vector<double>& prefix_sup_prev,
                          const std::vector<double>& prefix_sup_pp,
                          std::vector<double>& gbar_all, std::vector<double>& dbar_all,
                          std::vector<double>& Rn, std::vector<double>& Rd,
                          std::vector<double>& e2n, std::vector<double>& e2d,
                          std::vector<double>& hn, std::vector<double>& hd);
  void child_summary(std::size_t k, std::size_t v, const std::vector<double>& y_child,
                     const StateGen& sgen, const std::vector<double>& prefix_sup,
                     MeasureArg& out_arg) const;
  void finish_y_diffs(SweepDiff& diff);
  double s2_of_difference(bool include_leaf);
  double leaf_e2(int i);
  void run();
};

// Evaluate the generator of a finished solve at (step k, node v, child c),
// returning f (size d). Used by the analysis passes.
struct FinalView {
  const SolveResult& res;
  const ScenarioTree& tree;
  int N, d, p;
  std::size_t K;

  explicit FinalView(const SolveResult& r)
      : res(r), tree(*r.tree), N(r.tree->particles), d(r.d), p(r.p), K(r.tree->depth) {}

  // y of particle i at (depth, idx); leaf level must be stored.
  std::span<const double> y_at(int i, std::size_t depth, std::size_t idx) const {
    return res.state[i].y[depth].at(idx);
  }
  void f_at(int i, std::size_t k, std::size_t v, std::size_t c, std::span<double> out) const;
  // measure argument the generator sees at time k+1 for the child c of v
  MeasureArg measure_at(std::size_t k, std::size_t v, std::size_t c) const;
};

}  // namespace chaoslab::detail

#endif
