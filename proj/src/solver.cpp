#include "chaoslab/solver.hpp"

#include <algorithm>
#include <cmath>

#include "chaoslab/errors.hpp"
#include "chaoslab/solver_detail.hpp"

namespace chaoslab {

// ---------------------------------------------------------------------------
// TerminalFamily

TerminalFamily TerminalFamily::make(const std::string& kind_name, double value, double scale) {
  TerminalFamily t;
  t.constant = value;
  t.scale = scale;
  if (kind_name == "constant")
    t.kind = Kind::constant;
  else if (kind_name == "xcirc")
    t.kind = Kind::xcirc;
  else if (kind_name == "tanh_xcirc")
    t.kind = Kind::tanh_xcirc;
  else if (kind_name == "xjump")
    t.kind = Kind::xjump;
  else if (kind_name == "xsum")
    t.kind = Kind::xsum;
  else
    throw ConfigError("unknown terminal kind: " + kind_name);
  return t;
}

double TerminalFamily::eps_value(int particles) const {
  switch (eps) {
    case Eps::zero: return 0.0;
    case Eps::inv_n: return 1.0 / static_cast<double>(particles);
    case Eps::inv_sqrt_n: return 1.0 / std::sqrt(static_cast<double>(particles));
  }
  return 0.0;
}

double TerminalFamily::phi(const DriverModel& model, const std::vector<std::size_t>& digits) const {
  double xc = 0.0, xj = 0.0;
  for (std::size_t k = 0; k < digits.size(); ++k) {
    const auto& law = model.steps[k].law;
    const std::size_t nj = law.n_jump();
    const std::size_t di = digits[k] / nj, ji = digits[k] % nj;
    if (law.p > 0) xc += law.diff_atom(di)[0];
    if (law.n > 0) xj += law.jump_atom(ji)[0];
  }
  switch (kind) {
    case Kind::constant: return constant;
    case Kind::xcirc: return scale * xc;
    case Kind::tanh_xcirc: return scale * std::tanh(xc);
    case Kind::xjump: return scale * xj;
    case Kind::xsum: return scale * (xc + xj);
    case Kind::explicit_values: break;
  }
  throw ConfigError("phi() is undefined for explicit terminal values");
}

namespace detail {

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(const std::shared_ptr<const ScenarioTree>& t, const GeneratorSpec& g,
               const TerminalFamily& xi, const SolveOptions& o, MeasureFlow fl)
    : tree_ptr(t), tree(*t), gen_main(&g), terminal(xi), opts(o), flow(fl) {
  N = tree.particles;
  d = terminal.d;
  if (terminal.functional() && d != 1)
    throw ConfigError("functional terminal kinds are scalar");
  p = tree.model.steps.empty() ? 1 : tree.model.steps[0].law.p;
  K = tree.depth;
  const auto lip = gen_main->lipschitz(K, d);
  const auto la = lipschitz_to_A(lip, tree.model);
  A = la.A;
  phi_bound = la.phi;
  const FVPath betaA = A.scaled(opts.beta_hat);
  lefts = stoch_exp_left_values(betaA);
  posts = stoch_exp_values(betaA);
  probs.resize(K + 1);
  for (std::size_t k = 0; k <= K; ++k) probs[k] = tree.level_probs(k);
}

void Engine::init_state(StateGen& s) const {
  s.y.assign(N, {});
  s.z.assign(N, {});
  s.u.assign(N, {});
  for (int i = 0; i < N; ++i) {
    s.y[i].resize(K);
    s.z[i].resize(K);
    s.u[i].resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      s.y[i][k].dim = d;
      s.y[i][k].data.assign(tree.level_nodes[k] * d, 0.0);
      s.z[i][k].dim = d * p;
      s.z[i][k].data.assign(tree.level_nodes[k] * d * p, 0.0);
      const int nj = static_cast<int>(tree.model.steps[k].law.n_jump());
      s.u[i][k].dim = nj * d;
      s.u[i][k].data.assign(tree.level_nodes[k] * nj * d, 0.0);
    }
  }
  s.leaf_is_terminal = false;
}

void Engine::zero_state(StateGen& s) const {
  for (int i = 0; i < N; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      std::fill(s.y[i][k].data.begin(), s.y[i][k].data.end(), 0.0);
      std::fill(s.z[i][k].data.begin(), s.z[i][k].data.end(), 0.0);
      std::fill(s.u[i][k].data.begin(), s.u[i][k].data.end(), 0.0);
    }
  s.leaf_is_terminal = false;
}

void Engine::node_digits(std::size_t depth, std::size_t idx, int i,
                         std::vector<std::size_t>& out) const {
  out.resize(depth);
  std::size_t cur_idx = idx;
  for (std::size_t j = depth; j > 0; --j) {
    const std::size_t c = cur_idx % tree.steps[j - 1].branching;
    out[j - 1] = tree.child_outcome(j - 1, c, i);
    cur_idx /= tree.steps[j - 1].branching;
  }
}

void Engine::build_phi_tables(std::size_t v, std::vector<double>& phi_tab) const {
  const std::size_t m = tree.steps[K - 1].single_outcomes;
  phi_tab.assign(static_cast<std::size_t>(N) * m, 0.0);
  std::vector<std::size_t> digits;
  for (int i = 0; i < N; ++i) {
    node_digits(K - 1, v, i, digits);
    digits.push_back(0);
    for (std::size_t o = 0; o < m; ++o) {
      digits.back() = o;
      phi_tab[static_cast<std::size_t>(i) * m + o] = terminal.phi(tree.model, digits);
    }
  }
}

LevelValues Engine::materialize_leaf(bool leaf_terminal, int i) const {
  const std::size_t n_leaf = tree.level_nodes[K];
  if (n_leaf * static_cast<std::size_t>(d) > kMaterializeCap)
    throw BudgetExceeded("leaf level too large to materialize");
  LevelValues lv;
  lv.dim = d;
  lv.data.assign(n_leaf * d, 0.0);
  if (!leaf_terminal) return lv;
  if (!terminal.functional()) return (*terminal.explicit_leaves)[i];
  std::vector<std::size_t> digits;
  for (std::size_t idx = 0; idx < n_leaf; ++idx) {
    node_digits(K, idx, i, digits);
    lv.data[idx] = terminal.phi(tree.model, digits);
  }
  const double eps = terminal.eps_value(N);
  if (eps != 0.0) {
    std::vector<double> psi(n_leaf, 0.0);
    for (int m = 0; m < N; ++m)
      for (std::size_t idx = 0; idx < n_leaf; ++idx) {
        node_digits(K, idx, m, digits);
        psi[idx] += terminal.phi(tree.model, digits);
      }
    for (std::size_t idx = 0; idx < n_leaf; ++idx)
      lv.data[idx] += eps * psi[idx] / static_cast<double>(N);
  }
  return lv;
}

MeasureArg Engine::summary_at_depth(const StateGen& s, std::size_t depth_k) const {
  MeasureArg arg;
  if (!gen_main->needs_measure()) return arg;
  LevelValues lv = depth_k < K ? s.y[0][depth_k] : materialize_leaf(s.leaf_is_terminal, 0);
  if (gen_main->mode == GenMode::instantaneous) {
    if (gen_main->measure_mode == MeasureMode::mean) {
      arg.mean.assign(d, 0.0);
      for (std::size_t idx = 0; idx < probs[depth_k].size(); ++idx)
        for (int r = 0; r < d; ++r) arg.mean[r] += probs[depth_k][idx] * lv.data[idx * d + r];
    } else {
      DiscreteLaw law = law_at(tree, lv, depth_k);
      arg.w2 = w2_discrete(law, gen_main->reference, Metric::euclidean());
    }
  } else {
    std::vector<LevelValues> levels;
    for (std::size_t j = 0; j < depth_k; ++j) levels.push_back(s.y[0][j]);
    levels.push_back(std::move(lv));
    DiscreteLaw plaw = path_law_at(tree, levels, depth_k);
    if (gen_main->measure_mode == MeasureMode::mean) {
      double m = 0.0;
      for (std::size_t a = 0; a < plaw.size(); ++a)
        m += plaw.weights[a] * path_tau(plaw.atom(a), d);
      arg.mean.assign(1, m);
    } else {
      DiscreteLaw ref = gen_main->reference;
      if (ref.dim != plaw.dim) ref = DiscreteLaw::dirac(std::vector<double>(plaw.dim, 0.0));
      arg.w2 = w2_discrete(plaw, ref, Metric::path(d));
    }
  }
  return arg;
}

void Engine::refresh_flow(std::vector<MeasureArg>& out, const StateGen& s) const {
  out.assign(K + 1, MeasureArg{});
  if (!gen_main->needs_measure() || flow == MeasureFlow::none) return;
  if (flow == MeasureFlow::fixed) {
    for (std::size_t k = 1; k <= K; ++k) out[k] = (*fixed_flow)[k];
    return;
  }
  if (flow == MeasureFlow::empirical) return;
  for (std::size_t k = 1; k <= K; ++k)
    out[k] = summary_at_depth(s, opts.left_limit ? k - 1 : k);
}

double Engine::e2_jump_integral(std::size_t k, const double* u_vals, const double* uhat) const {
  return step_e2_jump(tree.model.steps[k], d, u_vals, uhat);
}

double Engine::z_energy(std::size_t k, const double* z_vals) const {
  return step_z_energy(tree.model.steps[k], d, p, z_vals);
}

void Engine::gamma_of(std::size_t k, const double* u_vals, double* out) const {
  step_gamma(tree.model.steps[k], d, u_vals, out);
}

void Engine::zc_rowavg_of(std::size_t k, const double* z_vals, double* out) const {
  step_zc_rowavg(tree.model.steps[k], d, p, z_vals, out);
}

void Engine::apply_representation(std::size_t k, std::size_t v, int i, const double* gbar,
                                  const double* R_flat, const double* h_raw, double e2,
                                  double* z_out, double* u_out, double* dm2_out) {
  const auto& st = tree.model.steps[k];
  const std::size_t nj = st.law.n_jump();
  const std::size_t nd = static_cast<std::size_t>(d);
  (void)v;
  (void)i;
  // Z = R * pinv(gram)
  for (int r = 0; r < d; ++r)
    for (int q = 0; q < p; ++q) {
      double acc = 0.0;
      for (int q2 = 0; q2 < p; ++q2) acc += R_flat[r * p + q2] * st.gram_pinv(q2, q);
      z_out[r * p + q] = acc;
    }
  // h(w) = E[G | jump = w]/m - gbar; Uhat = -h(0) when mass at 0.
  double hval[kMaxJump * kMaxDim];
  double uhat[kMaxDim] = {0};
  for (std::size_t j = 0; j < nj; ++j) {
    const double mj = st.jump_marginal[j];
    for (int r = 0; r < d; ++r)
      hval[j * nd + r] = mj > 0.0 ? h_raw[j * nd + r] / mj - gbar[r] : 0.0;
  }
  for (std::size_t j = 0; j < nj; ++j)
    if (st.jump_is_zero[j] && st.jump_marginal[j] > 0.0)
      for (int r = 0; r < d; ++r) uhat[r] = -hval[j * nd + r];
  for (std::size_t j = 0; j < nj; ++j) {
    if (st.jump_is_zero[j]) {
      for (int r = 0; r < d; ++r) u_out[j * nd + r] = 0.0;
    } else {
      for (int r = 0; r < d; ++r) u_out[j * nd + r] = hval[j * nd + r] + uhat[r];
    }
  }
  // E|G - gbar|^2 = E|G|^2 - |gbar|^2, split by Pythagoras.
  double g2c = e2;
  for (int r = 0; r < d; ++r) g2c -= gbar[r] * gbar[r];
  const double ez = z_energy(k, z_out);
  const double eu = e2_jump_integral(k, u_out, uhat);
  if (dm2_out) *dm2_out = std::max(0.0, g2c - ez - eu);
  last_ez = ez;
  last_eu = eu;
  last_em = std::max(0.0, g2c - ez - eu);
}

// one backward sweep; first_iter treats the older iterate's generator as 0
Engine::SweepDiff Engine::sweep(bool first_iter) {
  SweepDiff diff;
  const bool inst = gen_main->mode == GenMode::instantaneous;
  const bool empirical = flow == MeasureFlow::empirical && gen_main->needs_measure();
  const std::size_t nd = static_cast<std::size_t>(d);

  refresh_flow(flow_prev, prev);
  if (!first_iter) refresh_flow(flow_prevprev, prevprev);

  // fast path: scalar instantaneous generator without z/u coupling
  const bool fast = inst && d == 1 && p == 1 && gen_main->lin_z == 0.0 &&
                    gen_main->lin_u == 0.0 &&
                    gen_main->measure_mode != MeasureMode::w2ref && !opts.left_limit &&
                    terminal.functional();

  // scratch (hoisted)
  std::vector<double> f_new(N * nd), f_old(N * nd);
  std::vector<double> y_new_c(N * nd), y_prev_c(N * nd), y_pp_c(N * nd);
  std::vector<double> zc_prev(N * nd, 0.0), zc_pp(N * nd, 0.0);
  std::vector<double> gam_prev(N * nd, 0.0), gam_pp(N * nd, 0.0);
  std::vector<double> phi_tab;
  std::vector<double> prefix_sup_prev(N, 0.0), prefix_sup_pp(N, 0.0);
  std::vector<double> gbar_all(N * nd), dbar_all(N * nd);
  std::vector<double> Rn(N * nd * p), Rd(N * nd * p);
  std::vector<double> e2n(N), e2d(N);
  std::vector<double> hn, hd;
  std::vector<double> du_scratch;
  std::vector<std::size_t> digits;

  for (std::size_t kk = K; kk-- > 0;) {
    const std::size_t k = kk;
    const auto& st = tree.model.steps[k];
    const std::size_t B = tree.steps[k].branching;
    const std::size_t nj = st.law.n_jump();
    if (nj > kMaxJump || nd > kMaxDim)
      throw DimensionMismatch("solver caps: too many jump atoms or dimensions");
    const double dC = st.dC;
    const bool child_is_leaf = (k + 1 == K);
    const std::size_t n_nodes = tree.level_nodes[k];
    const double wl = lefts[k + 1];
    const double eps = terminal.eps_value(N);
    const std::size_t m_single = tree.steps[k].single_outcomes;
    hn.assign(N * nj * nd, 0.0);
    hd.assign(N * nj * nd, 0.0);
    du_scratch.assign(nj * nd, 0.0);

    for (std::size_t v = 0; v < n_nodes; ++v) {
      const double pv = probs[k][v];
      // predictable arguments at this node
      if (gen_main->lin_z != 0.0)
        for (int i = 0; i < N; ++i) {
          zc_rowavg_of(k, prev.z[i][k].data.data() + v * nd * p, &zc_prev[i * nd]);
          if (!first_iter)
            zc_rowavg_of(k, prevprev.z[i][k].data.data() + v * nd * p, &zc_pp[i * nd]);
        }
      if (gen_main->lin_u != 0.0)
        for (int i = 0; i < N; ++i) {
          gamma_of(k, prev.u[i][k].data.data() + v * nj * nd, &gam_prev[i * nd]);
          if (!first_iter)
            gamma_of(k, prevprev.u[i][k].data.data() + v * nj * nd, &gam_pp[i * nd]);
        }
      if (!inst) {
        for (int i = 0; i < N; ++i) {
          double sup_prev = 0.0, sup_pp = 0.0;
          std::size_t cx = v;
          for (std::size_t j = k + 1; j-- > 0;) {
            double s1 = 0.0, s2v = 0.0;
            for (int r = 0; r < d; ++r) {
              const double a1 = prev.y[i][j].data[cx * nd + r];
              s1 += a1 * a1;
              if (!first_iter) {
                const double a2 = prevprev.y[i][j].data[cx * nd + r];
                s2v += a2 * a2;
              }
            }
            sup_prev = std::max(sup_prev, s1);
            sup_pp = std::max(sup_pp, s2v);
            if (j > 0) cx = tree.parent_of(j, cx);
          }
          prefix_sup_prev[i] = sup_prev;
          prefix_sup_pp[i] = sup_pp;
        }
      }
      if (child_is_leaf && terminal.functional()) build_phi_tables(v, phi_tab);

      std::fill(gbar_all.begin(), gbar_all.end(), 0.0);
      std::fill(dbar_all.begin(), dbar_all.end(), 0.0);
      std::fill(Rn.begin(), Rn.end(), 0.0);
      std::fill(Rd.begin(), Rd.end(), 0.0);
      std::fill(e2n.begin(), e2n.end(), 0.0);
      std::fill(e2d.begin(), e2d.end(), 0.0);
      std::fill(hn.begin(), hn.begin() + N * nj * nd, 0.0);
      std::fill(hd.begin(), hd.begin() + N * nj * nd, 0.0);

      if (fast && m_single <= 64) {
        sweep_node_fast(first_iter, k, v, B, dC, child_is_leaf, m_single, eps, phi_tab,
                        gbar_all, dbar_all, Rn, Rd, e2n, e2d, hn, hd);
      } else {
        sweep_node_generic(first_iter, k, v, B, dC, child_is_leaf, m_single, eps, empirical,
                           inst, phi_tab, f_new, f_old, y_new_c, y_prev_c, y_pp_c, zc_prev,
                           zc_pp, gam_prev, gam_pp, prefix_sup_prev, prefix_sup_pp, gbar_all,
                           dbar_all, Rn, Rd, e2n, e2d, hn, hd);
      }

      // finalize the node per particle
      for (int i = 0; i < N; ++i) {
        double* ydst = cur.y[i][k].data.data() + v * nd;
        for (int r = 0; r < d; ++r) ydst[r] = gbar_all[i * nd + r];
        double* zdst = cur.z[i][k].data.data() + v * nd * p;
        double* udst = cur.u[i][k].data.data() + v * nj * nd;
        apply_representation(k, v, i, &gbar_all[i * nd], &Rn[i * nd * p], &hn[i * nj * nd],
                             e2n[i], zdst, udst, &cur_dm2[i][k].data[v]);
        // delta components
        double zd[kMaxDim * kMaxDim];
        apply_representation(k, v, i, &dbar_all[i * nd], &Rd[i * nd * p], &hd[i * nj * nd],
                             e2d[i], zd, du_scratch.data(), nullptr);
        diff.h2_z += pv * wl * last_ez;
        diff.h2_u += pv * wl * last_eu;
        diff.h2_m += pv * wl * last_em;
      }
    }
  }
  cur.leaf_is_terminal = true;
  finish_y_diffs(diff);
  return diff;
}

void Engine::sweep_node_fast(bool first_iter, std::size_t k, std::size_t v, std::size_t B,
                             double dC, bool child_is_leaf, std::size_t m_single, double eps,
                             const std::vector<double>& phi_tab, std::vector<double>& gbar_all,
                             std::vector<double>& dbar_all, std::vector<double>& Rn,
                             std::vector<double>& Rd, std::vector<double>& e2n,
                             std::vector<double>& e2d, std::vector<double>& hn,
                             std::vector<double>& hd) {
  // d == 1, p == 1, instantaneous, f = a + b*sat(y) + e*sat(mean(mu)).
  const auto& st = tree.model.steps[k];
  const auto& table = tree.steps[k];
  const std::size_t nj = st.law.n_jump();
  const bool mean_mode = gen_main->measure_mode == MeasureMode::mean;
  const bool saturating = gen_main->saturating;
  const double a0 = gen_main->level, by = gen_main->lin_y, em = gen_main->meas;
  const bool use_flow_mean = mean_mode && !empirical_mode();
  const double flow_mean_prev = use_flow_mean && !flow_prev[k + 1].mean.empty()
                                    ? flow_prev[k + 1].mean[0]
                                    : 0.0;
  const double flow_mean_pp = (!first_iter && use_flow_mean && !flow_prevprev[k + 1].mean.empty())
                                  ? flow_prevprev[k + 1].mean[0]
                                  : 0.0;
  const double invN = 1.0 / static_cast<double>(N);
  // per-outcome diffusion atom and jump index
  double dxval[64];
  std::size_t jidx[64];
  const std::size_t m = table.single_outcomes;
  for (std::size_t o = 0; o < m; ++o) {
    dxval[o] = st.law.p > 0 ? st.law.diff_atom(o / nj)[0] : 0.0;
    jidx[o] = o % nj;
  }
  std::vector<double>& ynb = scratch_a;
  std::vector<double>& ypb = scratch_b;
  std::vector<double>& ypp = scratch_c;
  ynb.resize(N);
  ypb.resize(N);
  ypp.resize(N);

  const double* curch = child_is_leaf ? nullptr : cur.y[0][k + 1].data.data();
  (void)curch;

  for (std::size_t c = 0; c < B; ++c) {
    const double pc = table.materialized ? table.joint_prob[c] : tree.child_prob(k, c);
    const std::size_t child = v * B + c;
    double mean_new = 0.0, mean_prev = 0.0, mean_pp = 0.0;
    double psi_sum = 0.0;
    const std::uint16_t* atoms =
        table.materialized ? table.joint_atom.data() + c * static_cast<std::size_t>(N) : nullptr;
    for (int i = 0; i < N; ++i) {
      const std::size_t o = atoms ? atoms[i] : tree.child_outcome(k, c, i);
      double yn, yp, yq;
      if (child_is_leaf) {
        const double base = phi_tab[static_cast<std::size_t>(i) * m_single + o];
        psi_sum += base;
        yn = base;
        yp = prev.leaf_is_terminal ? base : 0.0;
        yq = prevprev.leaf_is_terminal ? base : 0.0;
      } else {
        yn = cur.y[i][k + 1].data[child];
        yp = prev.y[i][k + 1].data[child];
        yq = first_iter ? 0.0 : prevprev.y[i][k + 1].data[child];
      }
      ynb[i] = yn;
      ypb[i] = yp;
      ypp[i] = yq;
      mean_prev += yp;
      mean_pp += yq;
    }
    if (child_is_leaf && eps != 0.0) {
      const double bump = eps * psi_sum * invN;
      for (int i = 0; i < N; ++i) {
        ynb[i] += bump;
        if (prev.leaf_is_terminal) ypb[i] += bump;
        if (prevprev.leaf_is_terminal) ypp[i] += bump;
      }
      mean_prev = prev.leaf_is_terminal ? mean_prev + eps * psi_sum : mean_prev;
      mean_pp = prevprev.leaf_is_terminal ? mean_pp + eps * psi_sum : mean_pp;
    }
    (void)mean_new;
    double mu_prev = 0.0, mu_pp = 0.0;
    if (mean_mode) {
      mu_prev = use_flow_mean ? flow_mean_prev : mean_prev * invN;
      mu_pp = use_flow_mean ? flow_mean_pp : mean_pp * invN;
      if (saturating) {
        mu_prev = std::tanh(mu_prev);
        mu_pp = std::tanh(mu_pp);
      }
    }
    for (int i = 0; i < N; ++i) {
      const std::size_t o = atoms ? atoms[i] : tree.child_outcome(k, c, i);
      const double fy_new = a0 + by * (saturating ? std::tanh(ypb[i]) : ypb[i]) + em * mu_prev;
      const double fy_old = first_iter
                                ? 0.0
                                : a0 + by * (saturating ? std::tanh(ypp[i]) : ypp[i]) +
                                      em * mu_pp;
      const double gn = ynb[i] + fy_new * dC;
      const double gp = ypb[i] + fy_old * dC;
      const double dg = gn - gp;
      gbar_all[i] += pc * gn;
      dbar_all[i] += pc * dg;
      e2n[i] += pc * gn * gn;
      e2d[i] += pc * dg * dg;
      const double dx = dxval[o];
      Rn[i] += pc * gn * dx;
      Rd[i] += pc * dg * dx;
      hn[i * nj + jidx[o]] += pc * gn;
      hd[i * nj + jidx[o]] += pc * dg;
    }
  }
}

void Engine::sweep_node_generic(
    bool first_iter, std::size_t k, std::size_t v, std::size_t B, double dC, bool child_is_leaf,
    std::size_t m_single, double eps, bool empirical, bool inst,
    const std::vector<double>& phi_tab, std::vector<double>& f_new, std::vector<double>& f_old,
    std::vector<double>& y_new_c, std::vector<double>& y_prev_c, std::vector<double>& y_pp_c,
    const std::vector<double>& zc_prev, const std::vector<double>& zc_pp,
    const std::vector<double>& gam_prev, const std::vector<double>& gam_pp,
    const std::vector<double>& prefix_sup_prev, const std::vector<double>& prefix_sup_pp,
    std::vector<double>& gbar_all, std::vector<double>& dbar_all, std::vector<double>& Rn,
    std::vector<double>& Rd, std::vector<double>& e2n, std::vector<double>& e2d,
    std::vector<double>& hn, std::vector<double>& hd) {
  const auto& st = tree.model.steps[k];
  const std::size_t nj = st.law.n_jump();
  const std::size_t nd = static_cast<std::size_t>(d);

  for (std::size_t c = 0; c < B; ++c) {
    const double pc = tree.child_prob(k, c);
    const std::size_t child = v * B + c;
    double psi_sum = 0.0;
    for (int i = 0; i < N; ++i) {
      if (child_is_leaf) {
        if (terminal.functional()) {
          const std::size_t o = tree.child_outcome(k, c, i);
          const double base = phi_tab[static_cast<std::size_t>(i) * m_single + o];
          psi_sum += base;
          y_new_c[i * nd] = base;
          y_prev_c[i * nd] = prev.leaf_is_terminal ? base : 0.0;
          y_pp_c[i * nd] = prevprev.leaf_is_terminal ? base : 0.0;
        } else {
          for (int r = 0; r < d; ++r) {
            const double xi_r = (*terminal.explicit_leaves)[i].data[child * nd + r];
            y_new_c[i * nd + r] = xi_r;
            y_prev_c[i * nd + r] = prev.leaf_is_terminal ? xi_r : 0.0;
            y_pp_c[i * nd + r] = prevprev.leaf_is_terminal ? xi_r : 0.0;
          }
        }
      } else {
        for (int r = 0; r < d; ++r) {
          y_new_c[i * nd + r] = cur.y[i][k + 1].data[child * nd + r];
          y_prev_c[i * nd + r] = prev.y[i][k + 1].data[child * nd + r];
          y_pp_c[i * nd + r] = first_iter ? 0.0 : prevprev.y[i][k + 1].data[child * nd + r];
        }
      }
    }
    if (child_is_leaf && terminal.functional() && eps != 0.0) {
      const double bump = eps * psi_sum / static_cast<double>(N);
      for (int i = 0; i < N; ++i) {
        y_new_c[i * nd] += bump;
        if (prev.leaf_is_terminal) y_prev_c[i * nd] += bump;
        if (prevprev.leaf_is_terminal) y_pp_c[i * nd] += bump;
      }
    }

    MeasureArg emp_prev, emp_pp;
    const MeasureArg* mu_prev = &flow_prev[k + 1];
    const MeasureArg* mu_pp = first_iter ? &flow_prev[k + 1] : &flow_prevprev[k + 1];
    if (empirical) {
      child_summary(k, v, y_prev_c, prev, prefix_sup_prev, emp_prev);
      mu_prev = &emp_prev;
      if (!first_iter) {
        child_summary(k, v, y_pp_c, prevprev, prefix_sup_pp, emp_pp);
        mu_pp = &emp_pp;
      }
    }

    for (int i = 0; i < N; ++i) {
      if (inst) {
        std::span<const double> y_arg(
            opts.left_limit ? &prev.y[i][k].data[v * nd] : &y_prev_c[i * nd], nd);
        gen_main->eval_instant(d, y_arg, {&zc_prev[i * nd], nd}, {&gam_prev[i * nd], nd},
                               *mu_prev, {&f_new[i * nd], nd});
      } else {
        double sup = prefix_sup_prev[i];
        if (!opts.left_limit) {
          double s = 0.0;
          for (int r = 0; r < d; ++r) s += y_prev_c[i * nd + r] * y_prev_c[i * nd + r];
          sup = std::max(sup, s);
        }
        gen_main->eval_path(d, std::min(std::sqrt(sup), 1.0), {&zc_prev[i * nd], nd},
                            {&gam_prev[i * nd], nd}, *mu_prev, {&f_new[i * nd], nd});
      }
      if (first_iter) {
        std::fill(&f_old[i * nd], &f_old[i * nd] + nd, 0.0);
      } else if (inst) {
        std::span<const double> y_arg(
            opts.left_limit ? &prevprev.y[i][k].data[v * nd] : &y_pp_c[i * nd], nd);
        gen_main->eval_instant(d, y_arg, {&zc_pp[i * nd], nd}, {&gam_pp[i * nd], nd}, *mu_pp,
                               {&f_old[i * nd], nd});
      } else {
        double sup = prefix_sup_pp[i];
        if (!opts.left_limit) {
          double s = 0.0;
          for (int r = 0; r < d; ++r) s += y_pp_c[i * nd + r] * y_pp_c[i * nd + r];
          sup = std::max(sup, s);
        }
        gen_main->eval_path(d, std::min(std::sqrt(sup), 1.0), {&zc_pp[i * nd], nd},
                            {&gam_pp[i * nd], nd}, *mu_pp, {&f_old[i * nd], nd});
      }

      const std::size_t o = tree.child_outcome(k, c, i);
      const std::size_t ji = tree.jump_index(k, o);
      const auto dx = st.law.diff_atom(tree.diff_index(k, o));
      for (int r = 0; r < d; ++r) {
        const double gn = y_new_c[i * nd + r] + f_new[i * nd + r] * dC;
        const double gp = y_prev_c[i * nd + r] + f_old[i * nd + r] * dC;
        const double dg = gn - gp;
        gbar_all[i * nd + r] += pc * gn;
        dbar_all[i * nd + r] += pc * dg;
        e2n[i] += pc * gn * gn;
        e2d[i] += pc * dg * dg;
        for (int q = 0; q < p; ++q) {
          Rn[(i * nd + r) * p + q] += pc * gn * dx[q];
          Rd[(i * nd + r) * p + q] += pc * dg * dx[q];
        }
        hn[(i * nj + ji) * nd + r] += pc * gn;
        hd[(i * nj + ji) * nd + r] += pc * dg;
      }
    }
  }
}

void Engine::child_summary(std::size_t k, std::size_t v, const std::vector<double>& y_child,
                           const StateGen& sgen, const std::vector<double>& prefix_sup,
                           MeasureArg& out_arg) const {
  const std::size_t nd = static_cast<std::size_t>(d);
  if (gen_main->mode == GenMode::instantaneous) {
    if (gen_main->measure_mode == MeasureMode::mean) {
      out_arg.mean.assign(d, 0.0);
      if (opts.left_limit) {
        for (int i = 0; i < N; ++i)
          for (int r = 0; r < d; ++r) out_arg.mean[r] += sgen.y[i][k].data[v * nd + r];
      } else {
        for (int i = 0; i < N; ++i)
          for (int r = 0; r < d; ++r) out_arg.mean[r] += y_child[i * nd + r];
      }
      for (int r = 0; r < d; ++r) out_arg.mean[r] /= static_cast<double>(N);
    } else {
      DiscreteLaw emp;
      emp.dim = d;
      emp.weights.assign(N, 1.0 / static_cast<double>(N));
      emp.atoms.resize(static_cast<std::size_t>(N) * nd);
      for (int i = 0; i < N; ++i)
        for (int r = 0; r < d; ++r)
          emp.atoms[i * nd + r] =
              opts.left_limit ? sgen.y[i][k].data[v * nd + r] : y_child[i * nd + r];
      emp = merge_atoms(emp);
      out_arg.w2 = w2_discrete(emp, gen_main->reference, Metric::euclidean());
    }
  } else {
    double mean_tau = 0.0;
    for (int i = 0; i < N; ++i) {
      double sup = prefix_sup[i];
      if (!opts.left_limit) {
        double s = 0.0;
        for (int r = 0; r < d; ++r) s += y_child[i * nd + r] * y_child[i * nd + r];
        sup = std::max(sup, s);
      }
      mean_tau += std::min(std::sqrt(sup), 1.0);
    }
    out_arg.mean.assign(1, mean_tau / static_cast<double>(N));
  }
}

void Engine::finish_y_diffs(SweepDiff& diff) {
  const std::size_t nd = static_cast<std::size_t>(d);
  for (std::size_t k = 1; k < K; ++k) {
    const double dak = A.jumps[k - 1];
    if (dak == 0.0) continue;
    double e2 = 0.0;
    for (int i = 0; i < N; ++i)
      for (std::size_t idx = 0; idx < tree.level_nodes[k]; ++idx) {
        double s = 0.0;
        for (int r = 0; r < d; ++r) {
          const double dy = cur.y[i][k].data[idx * nd + r] - prev.y[i][k].data[idx * nd + r];
          s += dy * dy;
        }
        e2 += probs[k][idx] * s;
      }
    diff.h2_alpha_y += lefts[k] * dak * e2;
  }
  const bool leaf_diff = !prev.leaf_is_terminal;
  if (leaf_diff && A.jumps[K - 1] != 0.0) {
    double e2 = 0.0;
    for (int i = 0; i < N; ++i) e2 += leaf_e2(i);
    diff.h2_alpha_y += lefts[K] * A.jumps[K - 1] * e2;
  }

  // S2 component: depth-first walk carrying the running max of the weighted
  // squared difference. Per particle system the difference is summed, but
  // the sup is over time per particle, so accumulate sup per particle and sum.
  diff.s2 = s2_of_difference(leaf_diff);
}

double Engine::s2_of_difference(bool include_leaf) {
  const std::size_t nd = static_cast<std::size_t>(d);
  const std::size_t max_depth = include_leaf ? K : K - 1;
  std::vector<std::size_t> digits;

  // running[i]: per-particle running max along the current path
  auto node_term = [&](std::size_t depth, std::size_t idx, int i) -> double {
    if (depth < K) {
      double s = 0.0;
      for (int r = 0; r < d; ++r) {
        const double dy =
            cur.y[i][depth].data[idx * nd + r] - prev.y[i][depth].data[idx * nd + r];
        s += dy * dy;
      }
      return s;
    }
    // leaf: difference is the terminal value (prev leaf is zero)
    if (!terminal.functional()) {
      double s = 0.0;
      for (int r = 0; r < d; ++r) {
        const double x = (*terminal.explicit_leaves)[i].data[idx * nd + r];
        s += x * x;
      }
      return s;
    }
    node_digits(K, idx, i, digits);
    const double x = terminal.phi(tree.model, digits);
    return x * x;
  };

  struct Frame {
    std::size_t idx = 0;
    std::size_t child = 0;
    std::vector<double> running;
  };
  std::vector<Frame> frames(max_depth + 1);
  for (auto& f : frames) f.running.assign(N, 0.0);
  for (int i = 0; i < N; ++i)
    frames[0].running[i] = s2_weight(0) * node_term(0, 0, i);
  if (max_depth == 0) {
    double total = 0.0;
    for (int i = 0; i < N; ++i) total += frames[0].running[i];
    return total;
  }
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
    auto& fr = frames[depth];
    fr.idx = idx;
    fr.child = 0;
    const double w = s2_weight(depth);
    double sum_running = 0.0;
    for (int i = 0; i < N; ++i) {
      fr.running[i] = std::max(frames[pos].running[i], w * node_term(depth, idx, i));
      sum_running += fr.running[i];
    }
    if (depth == max_depth) {
      total += tree.node_prob(depth, idx) * sum_running;
      ++frames[pos].child;
    } else {
      pos = depth;
    }
  }
  return total;
}

double Engine::leaf_e2(int i) {
  const std::size_t n_leaf = tree.level_nodes[K];
  std::vector<std::size_t> digits;
  double e2 = 0.0;
  if (!terminal.functional()) {
    for (std::size_t idx = 0; idx < n_leaf; ++idx) {
      double s = 0.0;
      for (int r = 0; r < d; ++r) {
        const double x = (*terminal.explicit_leaves)[i].data[idx * d + r];
        s += x * x;
      }
      e2 += probs[K][idx] * s;
    }
    return e2;
  }
  for (std::size_t idx = 0; idx < n_leaf; ++idx) {
    node_digits(K, idx, i, digits);
    const double x = terminal.phi(tree.model, digits);
    e2 += probs[K][idx] * x * x;
  }
  return e2;
}

void Engine::run() {
  init_state(cur);
  init_state(prev);
  init_state(prevprev);
  cur_dm2.assign(N, {});
  for (int i = 0; i < N; ++i) {
    cur_dm2[i].resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      cur_dm2[i][k].dim = 1;
      cur_dm2[i][k].data.assign(tree.level_nodes[k], 0.0);
    }
  }

  if (opts.init == SolveOptions::Init::terminal_start) {
    GeneratorSpec zero = make_generator("zero");
    const GeneratorSpec* saved = gen_main;
    gen_main = &zero;
    sweep(true);
    gen_main = saved;
    std::swap(prev, cur);
    zero_state(cur);
  }

  double last_diff_sq = -1.0;
  int bad_streak = 0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const SweepDiff sd = sweep(it == 1);
    const double diff_sq = sd.star_sq(gen_main->mode);
    trace.diff_star_sq.push_back(diff_sq);
    if (last_diff_sq > 0.0) {
      const double ratio = diff_sq / last_diff_sq;
      trace.ratios.push_back(ratio);
      if (ratio > 1.0)
        ++bad_streak;
      else
        bad_streak = 0;
      if (bad_streak >= 5) {
        trace.divergence_detected = true;
        throw DivergenceDetected("Picard iteration diverging (5 consecutive ratios > 1)");
      }
    }
    trace.iterations = it;
    std::swap(prevprev, prev);
    std::swap(prev, cur);
    if (std::sqrt(diff_sq) < opts.tol) {
      trace.converged = true;
      break;
    }
    last_diff_sq = diff_sq;
    if (it < opts.max_iter) zero_state(cur);
  }
  if (!trace.converged)
    throw NotConverged("Picard iteration did not reach tolerance " +
                       std::to_string(opts.tol) + " within " + std::to_string(opts.max_iter) +
                       " iterations");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// public entry points

namespace {

SolveResult run_engine(const std::shared_ptr<const ScenarioTree>& tree,
                       const TerminalFamily& xi, const GeneratorSpec& gen,
                       const SolveOptions& opts, MeasureFlow flow,
                       std::vector<MeasureArg> fixed_flow = {}) {
  if (!tree) throw Error("solve: null tree");
  detail::Engine eng(tree, gen, xi, opts, flow);
  if (flow == MeasureFlow::fixed) {
    if (fixed_flow.size() != tree->depth + 1)
      throw DimensionMismatch("solve_fixed_flow: flow must have K+1 entries");
    eng.fixed_flow = &fixed_flow;
  }
  eng.run();

  SolveResult result;
  result.tree = tree;
  result.gen = gen;
  result.terminal = xi;
  result.opts = opts;
  result.A = eng.A;
  result.phi = eng.phi_bound;
  result.flow = flow;
  result.d = eng.d;
  result.p = eng.p;
  result.state.resize(eng.N);
  for (int i = 0; i < eng.N; ++i) {
    auto& ps = result.state[i];
    ps.y.resize(tree->depth + 1);
    for (std::size_t k = 0; k < tree->depth; ++k) ps.y[k] = std::move(eng.prev.y[i][k]);
    ps.z = std::move(eng.prev.z[i]);
    ps.u = std::move(eng.prev.u[i]);
    ps.dm2 = std::move(eng.cur_dm2[i]);
    const std::size_t leaf_vals =
        tree->level_nodes[tree->depth] * static_cast<std::size_t>(eng.d);
    if (leaf_vals <= detail::kMaterializeCap) {
      ps.y[tree->depth] = eng.materialize_leaf(true, i);
      ps.leaf_y_stored = true;
    }
  }
  if (flow == MeasureFlow::exact_law && gen.needs_measure()) {
    // final law flow from the converged iterate
    detail::StateGen shim;
    shim.leaf_is_terminal = true;
    shim.y.assign(1, {});
    shim.y[0].resize(tree->depth);
    for (std::size_t j = 0; j < tree->depth; ++j) shim.y[0][j] = result.state[0].y[j];
    result.law_flow.assign(tree->depth + 1, MeasureArg{});
    for (std::size_t k = 1; k <= tree->depth; ++k)
      result.law_flow[k] = eng.summary_at_depth(shim, opts.left_limit ? k - 1 : k);
  } else if (flow == MeasureFlow::fixed) {
    result.law_flow = std::move(fixed_flow);
  }
  result.trace = eng.trace;
  return result;
}

}  // namespace

SolveResult solve_standard(const std::shared_ptr<const ScenarioTree>& tree,
                           const TerminalFamily& xi, const GeneratorSpec& gen,
                           const SolveOptions& opts) {
  if (gen.needs_measure())
    throw ConfigError("solve_standard requires a generator without measure dependence");
  return run_engine(tree, xi, gen, opts, MeasureFlow::none);
}

SolveResult solve_mckean_vlasov(const std::shared_ptr<const ScenarioTree>& tree,
                                const TerminalFamily& xi, const GeneratorSpec& gen,
                                const SolveOptions& opts) {
  if (tree->particles != 1)
    throw ConfigError("solve_mckean_vlasov runs on a single-particle tree");
  return run_engine(tree, xi.unperturbed(), gen, opts,
                    gen.needs_measure() ? MeasureFlow::exact_law : MeasureFlow::none);
}

SolveResult solve_meanfield(const std::shared_ptr<const ScenarioTree>& tree,
                            const TerminalFamily& xi, const GeneratorSpec& gen,
                            const SolveOptions& opts) {
  return run_engine(tree, xi, gen, opts,
                    gen.needs_measure() ? MeasureFlow::empirical : MeasureFlow::none);
}

SolveResult solve_fixed_flow(const std::shared_ptr<const ScenarioTree>& tree,
                             const TerminalFamily& xi, const GeneratorSpec& gen,
                             const SolveOptions& opts, std::vector<MeasureArg> flow) {
  return run_engine(tree, xi, gen, opts, MeasureFlow::fixed, std::move(flow));
}

}  // namespace chaoslab
