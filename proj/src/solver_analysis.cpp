#include <algorithm>
#include <cmath>
#include <limits>

#include "chaoslab/errors.hpp"
#include "chaoslab/solver.hpp"
#include "chaoslab/solver_detail.hpp"

namespace chaoslab {

namespace detail {

MeasureArg FinalView::measure_at(std::size_t k, std::size_t v, std::size_t c) const {
  MeasureArg arg;
  if (!res.gen.needs_measure()) return arg;
  switch (res.flow) {
    case MeasureFlow::none: return arg;
    case MeasureFlow::exact_law:
    case MeasureFlow::fixed: return res.law_flow[k + 1];
    case MeasureFlow::empirical: break;
  }
  const std::size_t B = tree.steps[k].branching;
  const std::size_t child = v * B + c;
  const bool left = res.opts.left_limit;
  if (res.gen.mode == GenMode::instantaneous) {
    if (res.gen.measure_mode == MeasureMode::mean) {
      arg.mean.assign(d, 0.0);
      for (int i = 0; i < N; ++i) {
        const auto y = left ? y_at(i, k, v) : y_at(i, k + 1, child);
        for (int r = 0; r < d; ++r) arg.mean[r] += y[r];
      }
      for (int r = 0; r < d; ++r) arg.mean[r] /= static_cast<double>(N);
    } else {
      DiscreteLaw emp;
      emp.dim = d;
      emp.weights.assign(N, 1.0 / static_cast<double>(N));
      emp.atoms.resize(static_cast<std::size_t>(N) * d);
      for (int i = 0; i < N; ++i) {
        const auto y = left ? y_at(i, k, v) : y_at(i, k + 1, child);
        for (int r = 0; r < d; ++r) emp.atoms[i * d + r] = y[r];
      }
      emp = merge_atoms(emp);
      arg.w2 = w2_discrete(emp, res.gen.reference, Metric::euclidean());
    }
  } else {
    double mean_tau = 0.0;
    for (int i = 0; i < N; ++i) {
      double sup = 0.0;
      std::size_t cx = left ? v : child;
      for (std::size_t j = (left ? k : k + 1) + 1; j-- > 0;) {
        const auto y = y_at(i, j, cx);
        double s = 0.0;
        for (int r = 0; r < d; ++r) s += y[r] * y[r];
        sup = std::max(sup, s);
        if (j > 0) cx = tree.parent_of(j, cx);
      }
      mean_tau += std::min(std::sqrt(sup), 1.0);
    }
    arg.mean.assign(1, mean_tau / static_cast<double>(N));
  }
  return arg;
}

void FinalView::f_at(int i, std::size_t k, std::size_t v, std::size_t c,
                     std::span<double> out) const {
  const auto& st = tree.model.steps[k];
  const std::size_t nj = st.law.n_jump();
  const std::size_t B = tree.steps[k].branching;
  const std::size_t child = v * B + c;
  double zc[kMaxDim], gam[kMaxDim];
  step_zc_rowavg(st, d, p, res.state[i].z[k].data.data() + v * static_cast<std::size_t>(d) * p,
                 zc);
  step_gamma(st, d, res.state[i].u[k].data.data() + v * nj * static_cast<std::size_t>(d), gam);
  const MeasureArg mu = measure_at(k, v, c);
  if (res.gen.mode == GenMode::instantaneous) {
    const auto y = res.opts.left_limit ? y_at(i, k, v) : y_at(i, k + 1, child);
    res.gen.eval_instant(d, y, {zc, static_cast<std::size_t>(d)},
                         {gam, static_cast<std::size_t>(d)}, mu, out);
  } else {
    double sup = 0.0;
    std::size_t cx = res.opts.left_limit ? v : child;
    for (std::size_t j = (res.opts.left_limit ? k : k + 1) + 1; j-- > 0;) {
      const auto y = y_at(i, j, cx);
      double s = 0.0;
      for (int r = 0; r < d; ++r) s += y[r] * y[r];
      sup = std::max(sup, s);
      if (j > 0) cx = tree.parent_of(j, cx);
    }
    res.gen.eval_path(d, std::min(std::sqrt(sup), 1.0), {zc, static_cast<std::size_t>(d)},
                      {gam, static_cast<std::size_t>(d)}, mu, out);
  }
}

}  // namespace detail

using detail::FinalView;
using detail::kMaxDim;

// ---------------------------------------------------------------------------
// star norms of a solution

namespace {

// E[max over depths of weight * |values|^2] via a depth-first walk.
double weighted_sup_expectation(const ScenarioTree& tree,
                                const std::vector<const LevelValues*>& levels,
                                const std::vector<double>& weights, int d) {
  const std::size_t depth_max = levels.size() - 1;
  struct Frame {
    std::size_t idx = 0;
    std::size_t child = 0;
    double running = 0.0;
  };
  auto term = [&](std::size_t depth, std::size_t idx) {
    const auto v = levels[depth]->at(idx);
    double s = 0.0;
    for (int r = 0; r < d; ++r) s += v[r] * v[r];
    return weights[depth] * s;
  };
  if (depth_max == 0) return term(0, 0);
  std::vector<Frame> frames(depth_max + 1);
  frames[0].running = term(0, 0);
  double total = 0.0;
  std::size_t pos = 0;
  while (true) {
    if (frames[pos].child == tree.steps[pos].branching) {
      if (pos == 0) break;
      --pos;
      ++frames[pos].child;
      continue;
    }
    const std::size_t c = frames[pos].child;
    const std::size_t depth = pos + 1;
    const std::size_t idx = frames[pos].idx * tree.steps[pos].branching + c;
    const double running = std::max(frames[pos].running, term(depth, idx));
    if (depth == depth_max) {
      total += tree.node_prob(depth, idx) * running;
      ++frames[pos].child;
    } else {
      frames[depth] = {idx, 0, running};
      pos = depth;
    }
  }
  return total;
}

}  // namespace

StarNorms star_norms(const SolveResult& result, int particle, double beta) {
  const ScenarioTree& tree = *result.tree;
  const std::size_t K = tree.depth;
  const int d = result.d, p = result.p;
  const auto& ps = result.state[particle];
  if (!ps.leaf_y_stored) throw BudgetExceeded("star_norms: leaf level not materialized");
  const FVPath betaA = result.A.scaled(beta);
  const auto lefts = stoch_exp_left_values(betaA);
  const auto posts = stoch_exp_values(betaA);

  StarNorms out;
  // S2 with the sup convention: the weight has already jumped inside (t_k, t_{k+1}).
  std::vector<const LevelValues*> levels;
  std::vector<double> s2w;
  for (std::size_t k = 0; k <= K; ++k) {
    levels.push_back(&ps.y[k]);
    s2w.push_back(k < K ? posts[k] : lefts[k]);
  }
  out.s2 = weighted_sup_expectation(tree, levels, s2w, d);

  for (std::size_t k = 1; k <= K; ++k) {
    const double dak = result.A.jumps[k - 1];
    if (dak == 0.0) continue;
    const auto probs = tree.level_probs(k);
    double e2 = 0.0;
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
      const auto y = ps.y[k].at(idx);
      double s = 0.0;
      for (int r = 0; r < d; ++r) s += y[r] * y[r];
      e2 += probs[idx] * s;
    }
    out.h2_alpha_y += lefts[k] * dak * e2;
  }

  for (std::size_t k = 0; k < K; ++k) {
    const auto& st = tree.model.steps[k];
    const std::size_t nj = st.law.n_jump();
    const auto probs = tree.level_probs(k);
    const double wl = lefts[k + 1];
    double ez = 0.0, eu = 0.0, em = 0.0;
    double uhat[detail::kMaxDim];
    for (std::size_t v = 0; v < probs.size(); ++v) {
      ez += probs[v] * detail::step_z_energy(st, d, p, ps.z[k].data.data() + v * d * p);
      const double* uv = ps.u[k].data.data() + v * nj * d;
      detail::step_uhat(st, d, uv, uhat);
      eu += probs[v] * detail::step_e2_jump(st, d, uv, uhat);
      em += probs[v] * ps.dm2[k].data[v];
    }
    out.h2_z += wl * ez;
    out.h2_u += wl * eu;
    out.h2_m += wl * em;
  }
  return out;
}

// ---------------------------------------------------------------------------
// materialized dm and nodewise residuals

void materialize_dm(SolveResult& result, int particle) {
  auto& ps = result.state[particle];
  if (ps.dm_stored) return;
  const ScenarioTree& tree = *result.tree;
  const std::size_t K = tree.depth;
  const int d = result.d;
  if (!ps.leaf_y_stored) throw BudgetExceeded("materialize_dm: leaf level not materialized");
  FinalView view(result);
  ps.dm.assign(K + 1, LevelValues{});
  std::vector<double> fval(d);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& st = tree.model.steps[k];
    const std::size_t nj = st.law.n_jump();
    const std::size_t B = tree.steps[k].branching;
    const std::size_t n_nodes = tree.level_nodes[k];
    auto& dm = ps.dm[k + 1];
    dm.dim = d;
    dm.data.assign(tree.level_nodes[k + 1] * d, 0.0);
    std::vector<double> g(B * static_cast<std::size_t>(d));
    double uhat[detail::kMaxDim];
    for (std::size_t v = 0; v < n_nodes; ++v) {
      double gbar[detail::kMaxDim] = {0};
      for (std::size_t c = 0; c < B; ++c) {
        const double pc = tree.child_prob(k, c);
        view.f_at(particle, k, v, c, {fval.data(), static_cast<std::size_t>(d)});
        const auto ynext = ps.y[k + 1].at(v * B + c);
        for (int r = 0; r < d; ++r) {
          g[c * d + r] = ynext[r] + fval[r] * st.dC;
          gbar[r] += pc * g[c * d + r];
        }
      }
      const double* zv = ps.z[k].data.data() + v * static_cast<std::size_t>(d) * result.p;
      const double* uv = ps.u[k].data.data() + v * nj * static_cast<std::size_t>(d);
      detail::step_uhat(st, d, uv, uhat);
      for (std::size_t c = 0; c < B; ++c) {
        const std::size_t o = tree.child_outcome(k, c, particle);
        const auto dx = st.law.diff_atom(tree.diff_index(k, o));
        const std::size_t ji = tree.jump_index(k, o);
        for (int r = 0; r < d; ++r) {
          double val = g[c * d + r] - gbar[r];
          for (int q = 0; q < result.p; ++q) val -= zv[r * result.p + q] * dx[q];
          if (!st.jump_is_zero[ji]) val -= uv[ji * d + r];
          val += uhat[r];
          dm.data[(v * B + c) * d + r] = val;
        }
      }
    }
  }
  ps.dm_stored = true;
}

double bsde_max_residual(SolveResult& result, int particle) {
  materialize_dm(result, particle);
  const ScenarioTree& tree = *result.tree;
  const std::size_t K = tree.depth;
  const int d = result.d;
  const auto& ps = result.state[particle];
  FinalView view(result);
  std::vector<double> fval(d);
  double uhat[detail::kMaxDim];
  double worst = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& st = tree.model.steps[k];
    const std::size_t nj = st.law.n_jump();
    const std::size_t B = tree.steps[k].branching;
    for (std::size_t v = 0; v < tree.level_nodes[k]; ++v) {
      const double* zv = ps.z[k].data.data() + v * static_cast<std::size_t>(d) * result.p;
      const double* uv = ps.u[k].data.data() + v * nj * static_cast<std::size_t>(d);
      detail::step_uhat(st, d, uv, uhat);
      for (std::size_t c = 0; c < B; ++c) {
        view.f_at(particle, k, v, c, {fval.data(), static_cast<std::size_t>(d)});
        const std::size_t o = tree.child_outcome(k, c, particle);
        const auto dx = st.law.diff_atom(tree.diff_index(k, o));
        const std::size_t ji = tree.jump_index(k, o);
        const auto ynext = ps.y[k + 1].at(v * B + c);
        const auto ycur = ps.y[k].at(v);
        for (int r = 0; r < d; ++r) {
          double rhs = ynext[r] + fval[r] * st.dC;
          for (int q = 0; q < result.p; ++q) rhs -= zv[r * result.p + q] * dx[q];
          if (!st.jump_is_zero[ji]) rhs -= uv[ji * d + r];
          rhs += uhat[r];
          rhs -= ps.dm[k + 1].data[(v * B + c) * d + r];
          worst = std::max(worst, std::fabs(ycur[r] - rhs));
        }
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// distances and gaps

namespace {

// Difference of the final G-values of two solutions at one child; both views
// must live on the same tree for a/b or lift b from a single-particle tree.
struct PairView {
  const SolveResult& a;
  const SolveResult& b;
  int particle_a;
  int particle_b;
  bool lift_b;  // b lives on the single-particle tree of particle_a's digits
  FinalView va, vb;

  PairView(const SolveResult& a_, const SolveResult& b_, int pa, int pb, bool lift)
      : a(a_), b(b_), particle_a(pa), particle_b(pb), lift_b(lift), va(a_), vb(b_) {}

  std::size_t lift_index(std::size_t depth, std::size_t idx) const {
    if (!lift_b) return idx;
    const ScenarioTree& ta = *a.tree;
    std::size_t digits_idx = 0;
    std::vector<std::size_t> digits;
    // decode particle_a's digits along the ancestry
    std::size_t cur = idx;
    digits.resize(depth);
    for (std::size_t j = depth; j > 0; --j) {
      const std::size_t c = cur % ta.steps[j - 1].branching;
      digits[j - 1] = ta.child_outcome(j - 1, c, particle_a);
      cur /= ta.steps[j - 1].branching;
    }
    for (std::size_t j = 0; j < depth; ++j)
      digits_idx = digits_idx * b.tree->steps[j].branching + digits[j];
    return digits_idx;
  }
};

}  // namespace

static StarNorms star_sq_pair(const SolveResult& a, const SolveResult& b, int pa, int pb,
                              bool lift_b, double beta) {
  const ScenarioTree& tree = *a.tree;
  const std::size_t K = tree.depth;
  const int d = a.d, p = a.p;
  if (b.d != d || b.tree->depth != K)
    throw DimensionMismatch("star gap: incompatible solves");
  PairView pv(a, b, pa, pb, lift_b);
  const FVPath betaA = a.A.scaled(beta);
  const auto lefts = stoch_exp_left_values(betaA);
  const auto posts = stoch_exp_values(betaA);

  StarNorms out;

  // leaf difference: eps-perturbation of a's terminal versus b's.
  const double eps_a = a.terminal.eps_value(tree.particles);
  const double eps_b = b.terminal.eps_value(b.tree->particles);
  const bool leaf_differs = (eps_a != 0.0) || (eps_b != 0.0) ||
                            (!a.terminal.functional() || !b.terminal.functional());

  // --- S2 and H2(alpha Y) over y-differences -------------------------------
  const std::size_t depth_max = leaf_differs ? K : K - 1;
  {
    struct Frame {
      std::size_t idx = 0;
      std::size_t child = 0;
      double running = 0.0;
    };
    std::vector<std::size_t> digits;
    auto delta_sq = [&](std::size_t depth, std::size_t idx) {
      double s = 0.0;
      if (depth < K || (a.state[pa].leaf_y_stored && b.state[pb].leaf_y_stored)) {
        const auto ya = a.state[pa].y[depth].at(idx);
        const auto yb = b.state[pb].y[depth].at(pv.lift_index(depth, idx));
        for (int r = 0; r < d; ++r) {
          const double dy = ya[r] - yb[r];
          s += dy * dy;
        }
        return s;
      }
      // streamed leaf difference: eps * psi for functional terminals
      double psi = 0.0;
      std::vector<std::size_t> dg;
      for (int m = 0; m < tree.particles; ++m) {
        dg.resize(K);
        std::size_t cur = idx;
        for (std::size_t j = K; j > 0; --j) {
          const std::size_t c = cur % tree.steps[j - 1].branching;
          dg[j - 1] = tree.child_outcome(j - 1, c, m);
          cur /= tree.steps[j - 1].branching;
        }
        psi += a.terminal.phi(tree.model, dg);
      }
      const double diff = (eps_a - eps_b) * psi / static_cast<double>(tree.particles);
      return diff * diff;
    };
    auto s2w = [&](std::size_t k) { return k < K ? posts[k] : lefts[k]; };
    std::vector<Frame> frames(depth_max + 1);
    frames[0].running = s2w(0) * delta_sq(0, 0);
    if (depth_max == 0) {
      out.s2 = frames[0].running;
    } else {
      double total = 0.0;
      std::size_t pos = 0;
      while (true) {
        if (frames[pos].child == tree.steps[pos].branching) {
          if (pos == 0) break;
          --pos;
          ++frames[pos].child;
          continue;
        }
        const std::size_t c = frames[pos].child;
        const std::size_t depth = pos + 1;
        const std::size_t idx = frames[pos].idx * tree.steps[pos].branching + c;
        const double running = std::max(frames[pos].running, s2w(depth) * delta_sq(depth, idx));
        if (depth == depth_max) {
          total += tree.node_prob(depth, idx) * running;
          ++frames[pos].child;
        } else {
          frames[depth] = {idx, 0, running};
          pos = depth;
        }
      }
      out.s2 = total;
    }
    // H2(alpha Y)
    for (std::size_t k = 1; k <= depth_max; ++k) {
      const double dak = a.A.jumps[k - 1];
      if (dak == 0.0) continue;
      const auto probs = tree.level_probs(k);
      double e2 = 0.0;
      for (std::size_t idx = 0; idx < probs.size(); ++idx) e2 += probs[idx] * delta_sq(k, idx);
      out.h2_alpha_y += lefts[k] * dak * e2;
    }
  }

  // --- H2 components of Z, U, M --------------------------------------------
  std::vector<double> fa(d), fb(d);
  double uhat_d[kMaxDim];
  std::vector<double> du;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& st = tree.model.steps[k];
    const std::size_t nj = st.law.n_jump();
    const std::size_t B = tree.steps[k].branching;
    const double wl = lefts[k + 1];
    const auto probs = tree.level_probs(k);
    du.assign(nj * static_cast<std::size_t>(d), 0.0);
    std::vector<double> dz(static_cast<std::size_t>(d) * p);
    for (std::size_t v = 0; v < tree.level_nodes[k]; ++v) {
      const std::size_t vb_idx = pv.lift_index(k, v);
      const double* za = a.state[pa].z[k].data.data() + v * static_cast<std::size_t>(d) * p;
      const double* zb = b.state[pb].z[k].data.data() + vb_idx * static_cast<std::size_t>(d) * p;
      for (std::size_t t = 0; t < static_cast<std::size_t>(d) * p; ++t) dz[t] = za[t] - zb[t];
      const double* ua = a.state[pa].u[k].data.data() + v * nj * static_cast<std::size_t>(d);
      const double* ub = b.state[pb].u[k].data.data() + vb_idx * nj * static_cast<std::size_t>(d);
      for (std::size_t t = 0; t < nj * static_cast<std::size_t>(d); ++t) du[t] = ua[t] - ub[t];
      detail::step_uhat(st, d, du.data(), uhat_d);
      const double ez = detail::step_z_energy(st, d, p, dz.data());
      const double eu = detail::step_e2_jump(st, d, du.data(), uhat_d);

      // E|dG - dGbar|^2 via a child sweep with both generators evaluated at
      // their own final states.
      double e2 = 0.0;
      double dbar[kMaxDim] = {0};
      for (std::size_t c = 0; c < B; ++c) {
        const double pc = tree.child_prob(k, c);
        pv.va.f_at(pa, k, v, c, {fa.data(), static_cast<std::size_t>(d)});
        const std::size_t cb = pv.lift_index(k + 1, v * B + c);
        // f of b at the lifted child: need the child index within b's tree
        const std::size_t vb_parent = pv.lift_index(k, v);
        const std::size_t cb_local = cb - vb_parent * b.tree->steps[k].branching;
        pv.vb.f_at(pb, k, vb_parent, cb_local, {fb.data(), static_cast<std::size_t>(d)});
        const auto ya = a.state[pa].y[k + 1].at(v * B + c);
        const auto yb = b.state[pb].y[k + 1].at(cb);
        for (int r = 0; r < d; ++r) {
          const double dg = (ya[r] + fa[r] * st.dC) - (yb[r] + fb[r] * st.dC);
          e2 += pc * dg * dg;
          dbar[r] += pc * dg;
        }
      }
      for (int r = 0; r < d; ++r) e2 -= dbar[r] * dbar[r];
      const double em = std::max(0.0, e2 - ez - eu);
      out.h2_z += probs[v] * wl * ez;
      out.h2_u += probs[v] * wl * eu;
      out.h2_m += probs[v] * wl * em;
    }
  }
  return out;
}

StarNorms star_sq_distance(const SolveResult& a, const SolveResult& b, int particle) {
  if (a.tree != b.tree && a.tree->total_node_count != b.tree->total_node_count)
    throw DimensionMismatch("star_sq_distance: different trees");
  return star_sq_pair(a, b, particle, particle, false, a.opts.beta_hat);
}

StarNorms star_sq_gap(const SolveResult& mf, const SolveResult& mv, int particle) {
  if (mv.tree->particles != 1)
    throw DimensionMismatch("star_sq_gap: second argument must be a single-particle solve");
  return star_sq_pair(mf, mv, particle, 0, true, mf.opts.beta_hat);
}

// ---------------------------------------------------------------------------
// a-priori estimates

bool AprioriReport::all_hold(double tol) const {
  for (const auto& l : lines)
    if (l.slack() < -tol) return false;
  return true;
}

AprioriReport apriori_verify(const ScenarioTree& tree, const LevelValues& xi,
                             const std::vector<LevelValues>& f_process, const FVPath& A,
                             double gamma, double delta, double phi) {
  if (gamma == delta) throw EqualExponents("apriori_verify: gamma == delta");
  if (!(gamma > 0.0) || !(delta > 0.0)) throw Error("apriori_verify: exponents must be > 0");
  const std::size_t K = tree.depth;
  const int d = xi.dim;
  for (std::size_t k = 0; k < K; ++k)
    if (A.jumps[k] > phi + 1e-12) throw Error("apriori_verify: dA exceeds Phi");

  // backward values y and martingale increments
  std::vector<LevelValues> y(K + 1);
  y[K] = xi;
  for (std::size_t k = K; k-- > 0;) {
    LevelValues integrated = y[k + 1];
    const double dC = tree.model.steps[k].dC;
    for (std::size_t idx = 0; idx < tree.level_nodes[k + 1]; ++idx)
      for (int r = 0; r < d; ++r)
        integrated.data[idx * d + r] += f_process[k + 1].data[idx * d + r] * dC;
    y[k] = cond_exp(tree, k + 1, integrated);
  }

  const double gd = std::max(gamma, delta);
  const auto lefts_d = stoch_exp_left_values(A.scaled(delta));
  const auto posts_d = stoch_exp_values(A.scaled(delta));
  const auto lefts_gd = stoch_exp_left_values(A.scaled(gd));

  // norms
  double norm_xi = 0.0;
  {
    const auto probs = tree.level_probs(K);
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
      double s = 0.0;
      for (int r = 0; r < d; ++r) s += xi.data[idx * d + r] * xi.data[idx * d + r];
      norm_xi += probs[idx] * s;
    }
    norm_xi *= lefts_d[K];
  }
  double norm_f = 0.0;  // ||f/alpha||^2_{H2_{gamma v delta}}
  for (std::size_t k = 1; k <= K; ++k) {
    const double dA = A.jumps[k - 1];
    const double dC = tree.model.steps[k - 1].dC;
    const auto probs = tree.level_probs(k);
    double e2 = 0.0;
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
      double s = 0.0;
      for (int r = 0; r < d; ++r)
        s += f_process[k].data[idx * d + r] * f_process[k].data[idx * d + r];
      e2 += probs[idx] * s;
    }
    if (e2 == 0.0) continue;
    if (dA <= 0.0) {
      norm_f = std::numeric_limits<double>::infinity();
      break;
    }
    const double alpha_sq = dA / dC;
    norm_f += lefts_gd[k] * e2 / alpha_sq * dC;
  }

  double h2_alpha_y = 0.0;
  for (std::size_t k = 1; k <= K; ++k) {
    const double dA = A.jumps[k - 1];
    if (dA == 0.0) continue;
    const auto probs = tree.level_probs(k);
    double e2 = 0.0;
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
      double s = 0.0;
      for (int r = 0; r < d; ++r) s += y[k].data[idx * d + r] * y[k].data[idx * d + r];
      e2 += probs[idx] * s;
    }
    h2_alpha_y += lefts_d[k] * dA * e2;
  }

  double s2 = 0.0;
  {
    std::vector<const LevelValues*> levels;
    std::vector<double> w;
    for (std::size_t k = 0; k <= K; ++k) {
      levels.push_back(&y[k]);
      w.push_back(k < K ? posts_d[k] : lefts_d[k]);
    }
    s2 = weighted_sup_expectation(tree, levels, w, d);
  }

  double h2_eta = 0.0;
  for (std::size_t k = 1; k <= K; ++k) {
    const double dC = tree.model.steps[k - 1].dC;
    const std::size_t B = tree.steps[k - 1].branching;
    const auto probs = tree.level_probs(k - 1);
    double e2 = 0.0;
    for (std::size_t v = 0; v < tree.level_nodes[k - 1]; ++v) {
      for (std::size_t c = 0; c < B; ++c) {
        const std::size_t idx = v * B + c;
        double s = 0.0;
        for (int r = 0; r < d; ++r) {
          const double deta = y[k].data[idx * d + r] + f_process[k].data[idx * d + r] * dC -
                              y[k - 1].data[v * d + r];
          s += deta * deta;
        }
        e2 += probs[v] * tree.child_prob(k - 1, c) * s;
      }
    }
    h2_eta += lefts_d[k] * e2;
  }

  const double lam = lambda_gdp(gamma, delta, phi);
  AprioriReport rep;
  rep.norm_xi = norm_xi;
  rep.norm_f_over_alpha = norm_f;
  rep.lines.push_back({"H2(alpha y)", h2_alpha_y,
                       2.0 * (1.0 + delta * phi) / delta * norm_xi + 2.0 * lam * norm_f});
  rep.lines.push_back(
      {"S2(y)", s2, 8.0 * norm_xi + 8.0 * (1.0 + gamma * phi) / gamma * norm_f});
  rep.lines.push_back({"H2(eta)", h2_eta,
                       9.0 * (2.0 + delta * phi) * norm_xi +
                           9.0 * (1.0 / gd + delta * lam) * norm_f});
  rep.lines.push_back({"H2(alpha y) + H2(eta)", h2_alpha_y + h2_eta,
                       (18.0 + 2.0 / delta + (9.0 * delta + 2.0) * phi) * norm_xi +
                           (9.0 / gd + (9.0 * delta + 2.0) * lam) * norm_f});
  rep.lines.push_back({"S2(y) + H2(eta)", s2 + h2_eta,
                       (26.0 + 9.0 * delta * phi) * norm_xi +
                           (8.0 / gamma + 8.0 * phi + 9.0 / gd + 9.0 * delta * lam) * norm_f});
  rep.lines.push_back({"H2(alpha y) + S2(y) + H2(eta)", h2_alpha_y + s2 + h2_eta,
                       (26.0 + 2.0 / delta + (9.0 * delta + 2.0) * phi) * norm_xi +
                           (8.0 / gamma + 8.0 * phi + 9.0 / gd + (9.0 * delta + 2.0) * lam) *
                               norm_f});
  return rep;
}

// ---------------------------------------------------------------------------
// standard data check

bool StandardDataReport::all_pass() const {
  for (const auto& it : items)
    if (!it.pass) return false;
  return contraction.holds;
}

StandardDataReport standard_data_check(const DriverModel& model, const GeneratorSpec& gen,
                                       double beta_hat, TheoremId theorem) {
  StandardDataReport rep;
  const std::size_t K = model.num_steps();
  const auto lip = gen.lipschitz(K, 1);
  const auto la = lipschitz_to_A(lip, model);

  // zero-mean drivers and orthogonality
  bool zero_mean = true;
  for (const auto& st : model.steps) {
    for (int comp = 0; comp < st.law.p; ++comp) {
      double mean = 0.0;
      for (std::size_t i = 0; i < st.law.n_diff(); ++i) {
        double wr = 0.0;
        for (std::size_t j = 0; j < st.law.n_jump(); ++j) wr += st.law.prob(i, j);
        mean += wr * st.law.diff_atom(i)[comp];
      }
      if (std::fabs(mean) > 1e-12) zero_mean = false;
    }
  }
  rep.items.push_back({"zero-mean increments", zero_mean, ""});
  rep.items.push_back({"jump/diffusion orthogonality (MV1)/(PC1)",
                       validate_driver_orthogonality(model), ""});
  rep.items.push_back({"deterministic compensators (PC7)/(MF6')", true,
                       "independent increments by construction"});
  rep.items.push_back({"dA <= Phi (MV5)/(PC5)", true, "Phi = " + std::to_string(la.phi)});
  const double lambda = lambda_beta_of(la.A, beta_hat);
  rep.items.push_back({"stochastic exponential bound (MV6)/(PC8)", true,
                       "Lambda_beta = " + std::to_string(lambda)});
  // |f(t,0,0,0,delta_0)| finiteness relative to alpha
  double f0 = std::fabs(gen.level);
  if (gen.measure_mode == MeasureMode::w2ref && !gen.reference.atoms.empty()) {
    const DiscreteLaw zero = DiscreteLaw::dirac(std::vector<double>(gen.reference.dim, 0.0));
    f0 += std::fabs(gen.meas) * w2_discrete(zero, gen.reference, Metric::euclidean());
  }
  bool f0_ok = true;
  std::string f0_detail = "f(.,0,0,0,delta_0) = " + std::to_string(f0);
  if (f0 > 0.0) {
    for (std::size_t k = 0; k < K; ++k)
      if (lip.alpha_sq(k) <= 0.0) f0_ok = false;
    if (!f0_ok) f0_detail += " with alpha = 0 (norm infinite)";
  }
  rep.items.push_back({"||f(.,0,0,0,delta_0)/alpha|| finite (MV7)/(PC6)", f0_ok, f0_detail});

  rep.contraction = contraction_condition(theorem, beta_hat, la.phi, lambda);
  return rep;
}

}  // namespace chaoslab
