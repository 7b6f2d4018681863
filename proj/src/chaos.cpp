#include "chaoslab/chaos.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "chaoslab/constants.hpp"
#include "chaoslab/errors.hpp"
#include "chaoslab/rng.hpp"

namespace chaoslab {

namespace {

std::shared_ptr<const ScenarioTree> make_tree(const ChaosConfig& cfg, int particles) {
  return std::make_shared<ScenarioTree>(
      build_tree(cfg.model, particles, cfg.model.num_steps(), cfg.budget));
}

SolveResult solve_mv_reference(const ChaosConfig& cfg) {
  auto tree1 = make_tree(cfg, 1);
  if (cfg.gen.needs_measure())
    return solve_mckean_vlasov(tree1, cfg.terminal.unperturbed(), cfg.gen, cfg.opts);
  return solve_standard(tree1, cfg.terminal.unperturbed(), cfg.gen, cfg.opts);
}

}  // namespace

ChaosReport run_system_gap(const ChaosConfig& cfg, const std::vector<int>& Ns) {
  ChaosReport report;
  const SolveResult mv = solve_mv_reference(cfg);
  for (int n : Ns) {
    auto tree = make_tree(cfg, n);
    const SolveResult mf = cfg.gen.needs_measure()
                               ? solve_meanfield(tree, cfg.terminal, cfg.gen, cfg.opts)
                               : solve_standard(tree, cfg.terminal, cfg.gen, cfg.opts);
    GapRow row;
    row.n = n;
    row.mf_iterations = mf.trace.iterations;
    for (int i = 0; i < n; ++i) {
      const StarNorms g = star_sq_gap(mf, mv, i);
      const double gi = cfg.gen.mode == GenMode::path ? g.star_path() : g.star_instant();
      row.avg_gap += gi;
      if (i == 0) row.particle_gap = gi;
      row.avg_components.s2 += g.s2;
      row.avg_components.h2_alpha_y += g.h2_alpha_y;
      row.avg_components.h2_z += g.h2_z;
      row.avg_components.h2_u += g.h2_u;
      row.avg_components.h2_m += g.h2_m;
    }
    const double invn = 1.0 / static_cast<double>(n);
    row.avg_gap *= invn;
    row.avg_components.s2 *= invn;
    row.avg_components.h2_alpha_y *= invn;
    row.avg_components.h2_z *= invn;
    row.avg_components.h2_u *= invn;
    row.avg_components.h2_m *= invn;
    report.rows.push_back(row);
  }
  return report;
}

ChaosReport run_particle_gap(const ChaosConfig& cfg, int particle,
                             const std::vector<int>& Ns) {
  ChaosReport report;
  const SolveResult mv = solve_mv_reference(cfg);
  for (int n : Ns) {
    if (particle >= n) throw DimensionMismatch("run_particle_gap: particle index >= N");
    auto tree = make_tree(cfg, n);
    const SolveResult mf = cfg.gen.needs_measure()
                               ? solve_meanfield(tree, cfg.terminal, cfg.gen, cfg.opts)
                               : solve_standard(tree, cfg.terminal, cfg.gen, cfg.opts);
    GapRow row;
    row.n = n;
    row.mf_iterations = mf.trace.iterations;
    const StarNorms g = star_sq_gap(mf, mv, particle);
    row.avg_components = g;
    row.particle_gap = cfg.gen.mode == GenMode::path ? g.star_path() : g.star_instant();
    row.avg_gap = row.particle_gap;
    report.rows.push_back(row);
  }
  return report;
}

bool conservation_check(const ChaosConfig& cfg, int n, bool corrupt, double tol) {
  ChaosConfig base = cfg;
  base.terminal.eps = TerminalFamily::Eps::zero;
  const SolveResult mv = solve_mv_reference(base);

  auto tree = make_tree(base, n);
  SolveResult joint =
      cfg.gen.needs_measure()
          ? solve_fixed_flow(tree, base.terminal, base.gen, base.opts, mv.law_flow)
          : solve_standard(tree, base.terminal, base.gen, base.opts);
  if (corrupt && !joint.state.empty() && !joint.state[0].y[0].data.empty())
    joint.state[0].y[0].data[0] += 1e-6;

  for (int i = 0; i < n; ++i) {
    const StarNorms g = star_sq_gap(joint, mv, i);
    const double dist = std::sqrt(cfg.gen.mode == GenMode::path ? g.star_path()
                                                                : g.star_instant());
    if (dist > tol) return false;
  }
  return true;
}

std::vector<double> sample_mv_values(const SolveResult& mv, std::size_t k, std::size_t n,
                                     std::uint64_t seed) {
  const ScenarioTree& tree = *mv.tree;
  if (tree.particles != 1) throw DimensionMismatch("sample_mv_values: single-particle tree");
  if (k > tree.depth) throw DimensionMismatch("sample_mv_values: depth out of range");
  const int d = mv.d;
  std::vector<double> out(n * static_cast<std::size_t>(d));
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t idx = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double u = uniform01(key_mix(seed, s, j, 0x5eedULL));
      const auto& st = tree.steps[j];
      double acc = 0.0;
      std::size_t pick = st.single_outcomes - 1;
      for (std::size_t o = 0; o < st.single_outcomes; ++o) {
        acc += st.single_prob[o];
        if (u < acc) {
          pick = o;
          break;
        }
      }
      idx = idx * st.branching + pick;
    }
    const auto y = mv.state[0].y[k].at(idx);
    for (int r = 0; r < d; ++r) out[s * d + r] = y[r];
  }
  return out;
}

double envelope(double n, int d, double q) {
  if (q <= 2.0) throw QTooSmall("envelope: q must exceed 2");
  const double tail = std::pow(n, -(q - 2.0) / q);
  if (d < 4) return std::pow(n, -0.5) + tail;
  if (d == 4) return std::pow(n, -0.5) * std::log1p(n) + tail;
  return std::pow(n, -2.0 / static_cast<double>(d)) + tail;
}

RateReport rate_experiment(const SolveResult& mv, std::size_t t_k, const std::vector<int>& Ns,
                           std::size_t reps_cap, double q, std::uint64_t seed, int threads) {
  if (q <= 2.0) throw QTooSmall("rate_experiment: q must exceed 2");
  const int d = mv.d;
  const DiscreteLaw exact = law_at(*mv.tree, mv.state[0].y[t_k], t_k);
  RateReport report;
  report.q = q;
  report.dim = d;
  report.rows.resize(Ns.size());

  auto run_cell = [&](std::size_t cell) {
    const int n = Ns[cell];
    RateRow row;
    row.n = n;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t reps = 0;
    const std::size_t min_reps = std::min<std::size_t>(8, reps_cap);
    while (reps < reps_cap) {
      const std::uint64_t cell_seed =
          key_mix(seed, static_cast<std::uint64_t>(n), reps, 0xce11ULL);
      const auto samples = sample_mv_values(mv, t_k, static_cast<std::size_t>(n), cell_seed);
      DiscreteLaw emp;
      emp.dim = d;
      emp.weights.assign(n, 1.0 / static_cast<double>(n));
      emp.atoms = samples;
      emp = merge_atoms(emp);
      const double w2 = w2_discrete(emp, exact, Metric::euclidean());
      sum += w2 * w2;
      sum_sq += w2 * w2 * w2 * w2;
      ++reps;
      if (reps >= min_reps) {
        const double mean = sum / static_cast<double>(reps);
        const double var = std::max(0.0, sum_sq / static_cast<double>(reps) - mean * mean);
        const double se = std::sqrt(var / static_cast<double>(reps));
        if (mean == 0.0 || se < 0.05 * mean) break;
      }
    }
    row.reps = reps;
    row.mean_w2sq = sum / static_cast<double>(reps);
    const double mean = row.mean_w2sq;
    const double var = std::max(0.0, sum_sq / static_cast<double>(reps) - mean * mean);
    row.stderr_mean = std::sqrt(var / static_cast<double>(reps));
    report.rows[cell] = row;
  };

  if (threads <= 1 || Ns.size() <= 1) {
    for (std::size_t cell = 0; cell < Ns.size(); ++cell) run_cell(cell);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    const int nt = std::min<int>(threads, static_cast<int>(Ns.size()));
    for (int t = 0; t < nt; ++t)
      pool.emplace_back([&] {
        for (std::size_t cell = next.fetch_add(1); cell < Ns.size();
             cell = next.fetch_add(1))
          run_cell(cell);
      });
    for (auto& th : pool) th.join();
  }

  // log-log least squares, smallest N excluded (pre-asymptotic).
  std::vector<double> lx, ly;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    if (report.rows[i].mean_w2sq <= 0.0) continue;
    lx.push_back(std::log(static_cast<double>(report.rows[i].n)));
    ly.push_back(std::log(report.rows[i].mean_w2sq));
  }
  if (lx.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i];
      my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(lx.size());
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxx += (lx[i] - mx) * (lx[i] - mx);
      sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx > 0.0) {
      report.slope = sxy / sxx;
      report.slope_defined = true;
    }
  }
  double c = 0.0;
  for (const auto& row : report.rows)
    c = std::max(c, row.mean_w2sq / envelope(static_cast<double>(row.n), d, q));
  report.envelope_c = c;
  return report;
}

double lambda_qt(const SolveResult& mv, const FVPath& A, double beta_hat, double q) {
  if (q <= 2.0) throw QTooSmall("lambda_qt: q must exceed 2");
  const ScenarioTree& tree = *mv.tree;
  const auto lefts = stoch_exp_left_values(A.scaled(beta_hat));
  double total = 0.0;
  for (std::size_t k = 1; k <= tree.depth; ++k) {
    const double dak = A.jumps[k - 1];
    if (dak == 0.0) continue;
    const auto probs = tree.level_probs(k);
    double moment_q = 0.0;
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
      const auto y = mv.state[0].y[k].at(idx);
      double s = 0.0;
      for (int r = 0; r < mv.d; ++r) s += y[r] * y[r];
      moment_q += probs[idx] * std::pow(s, q / 2.0);
    }
    // dE(beta A)_k = E(beta A)_{t_k-} * beta * dA_k for pure-jump A
    total += std::pow(moment_q, 2.0 / q) * lefts[k] * dak;
  }
  return total;
}

double alpha_y_h2(const SolveResult& mv, const FVPath& A, double beta_hat) {
  const ScenarioTree& tree = *mv.tree;
  const auto lefts = stoch_exp_left_values(A.scaled(beta_hat));
  double total = 0.0;
  for (std::size_t k = 1; k <= tree.depth; ++k) {
    const double dak = A.jumps[k - 1];
    if (dak == 0.0) continue;
    const auto probs = tree.level_probs(k);
    double e2 = 0.0;
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
      const auto y = mv.state[0].y[k].at(idx);
      double s = 0.0;
      for (int r = 0; r < mv.d; ++r) s += y[r] * y[r];
      e2 += probs[idx] * s;
    }
    total += lefts[k] * dak * e2;
  }
  return total;
}

std::vector<Cor64Row> cor64_check(const ChaosConfig& cfg, const std::vector<int>& Ns,
                                  std::size_t t_k) {
  std::vector<Cor64Row> rows;
  const SolveResult mv = solve_mv_reference(cfg);
  const DiscreteLaw exact = law_at(*mv.tree, mv.state[0].y[t_k], t_k);
  for (int n : Ns) {
    auto tree = make_tree(cfg, n);
    const SolveResult mf = cfg.gen.needs_measure()
                               ? solve_meanfield(tree, cfg.terminal, cfg.gen, cfg.opts)
                               : solve_standard(tree, cfg.terminal, cfg.gen, cfg.opts);
    Cor64Row row;
    row.n = n;
    const int d = mf.d;
    {
      const auto probs = tree->level_probs(t_k);
      for (std::size_t idx = 0; idx < probs.size(); ++idx) {
        DiscreteLaw emp;
        emp.dim = d;
        emp.weights.assign(n, 1.0 / static_cast<double>(n));
        emp.atoms.resize(static_cast<std::size_t>(n) * d);
        for (int i = 0; i < n; ++i) {
          const auto y = mf.state[i].y[t_k].at(idx);
          for (int r = 0; r < d; ++r) emp.atoms[i * d + r] = y[r];
        }
        emp = merge_atoms(emp);
        const double w2 = w2_discrete(emp, exact, Metric::euclidean());
        row.expected_w2sq += probs[idx] * w2 * w2;
      }
    }
    // sup over grid times of W2 between the pooled mean-field law and the MV law
    for (std::size_t k = 0; k <= tree->depth; ++k) {
      const DiscreteLaw mv_law = law_at(*mv.tree, mv.state[0].y[k], k);
      const auto pk = tree->level_probs(k);
      DiscreteLaw pooled;
      pooled.dim = d;
      for (std::size_t idx = 0; idx < pk.size(); ++idx)
        for (int i = 0; i < n; ++i) {
          const auto y = mf.state[i].y[k].at(idx);
          for (int r = 0; r < d; ++r) pooled.atoms.push_back(y[r]);
          pooled.weights.push_back(pk[idx] / static_cast<double>(n));
        }
      const DiscreteLaw mf_law = merge_atoms(pooled);
      row.sup_grid_w2 =
          std::max(row.sup_grid_w2, w2_discrete(mf_law, mv_law, Metric::euclidean()));
    }
    rows.push_back(row);
  }
  return rows;
}

PerturbationBound perturbation_response_check(const ChaosConfig& cfg, int n) {
  if (cfg.gen.needs_measure())
    throw ConfigError("perturbation_response_check needs a measure-independent generator");
  PerturbationBound out;
  const SolveResult mv = solve_mv_reference(cfg);
  auto tree = make_tree(cfg, n);
  const SolveResult mf = solve_standard(tree, cfg.terminal, cfg.gen, cfg.opts);
  double gap = 0.0;
  for (int i = 0; i < n; ++i) {
    const StarNorms g = star_sq_gap(mf, mv, i);
    gap += cfg.gen.mode == GenMode::path ? g.star_path() : g.star_instant();
  }
  out.gap = gap / static_cast<double>(n);

  // R(N) = (1/N) sum_i ||xi^{i,N} - xi^i||^2_{L2_beta}: the perturbation is
  // eps * psi with psi the phi-average, identical across particles.
  const auto lip = cfg.gen.lipschitz(cfg.model.num_steps(), mv.d);
  const auto la = lipschitz_to_A(lip, cfg.model);
  const auto lefts = stoch_exp_left_values(la.A.scaled(cfg.opts.beta_hat));
  const double eps = cfg.terminal.eps_value(n);
  double e2 = 0.0;
  {
    const auto probs = tree->level_probs(tree->depth);
    std::vector<std::size_t> digits(tree->depth);
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
      double psi = 0.0;
      for (int m = 0; m < n; ++m) {
        std::size_t cur = idx;
        for (std::size_t j = tree->depth; j > 0; --j) {
          const std::size_t c = cur % tree->steps[j - 1].branching;
          digits[j - 1] = tree->child_outcome(j - 1, c, m);
          cur /= tree->steps[j - 1].branching;
        }
        psi += cfg.terminal.phi(cfg.model, digits);
      }
      psi *= eps / static_cast<double>(n);
      e2 += probs[idx] * psi * psi;
    }
  }
  out.r_n = lefts[tree->depth] * e2;

  const double mt = m_tilde(cfg.opts.beta_hat, la.phi);
  const double denom = 1.0 - 3.0 * mt;
  if (denom <= 0.0) throw Error("perturbation_response_check: (PC8') fails, bound undefined");
  out.bound = (26.0 + 2.0 / cfg.opts.beta_hat + (9.0 * cfg.opts.beta_hat + 2.0) * la.phi) /
              denom * out.r_n;
  return out;
}

}  // namespace chaoslab
