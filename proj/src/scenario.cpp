#include "chaoslab/scenario.hpp"

#include <cmath>
#include <cstdlib>

#include "chaoslab/errors.hpp"

namespace chaoslab {

std::size_t ScenarioTree::child_outcome(std::size_t k, std::size_t c, int i) const {
  const auto& st = steps[k];
  if (st.materialized) return st.joint_atom[c * static_cast<std::size_t>(particles) + i];
  std::size_t x = c;
  for (int j = 0; j < i; ++j) x /= st.single_outcomes;
  return x % st.single_outcomes;
}

double ScenarioTree::child_prob(std::size_t k, std::size_t c) const {
  const auto& st = steps[k];
  if (st.materialized) return st.joint_prob[c];
  double p = 1.0;
  std::size_t x = c;
  for (int i = 0; i < particles; ++i) {
    p *= st.single_prob[x % st.single_outcomes];
    x /= st.single_outcomes;
  }
  return p;
}

double ScenarioTree::node_prob(std::size_t k, std::size_t idx) const {
  double p = 1.0;
  for (std::size_t j = k; j > 0; --j) {
    p *= child_prob(j - 1, idx % steps[j - 1].branching);
    idx /= steps[j - 1].branching;
  }
  return p;
}

std::vector<double> ScenarioTree::level_probs(std::size_t k) const {
  std::vector<double> probs{1.0};
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t B = steps[j].branching;
    std::vector<double> next(probs.size() * B);
    for (std::size_t idx = 0; idx < probs.size(); ++idx)
      for (std::size_t c = 0; c < B; ++c) next[idx * B + c] = probs[idx] * child_prob(j, c);
    probs.swap(next);
  }
  return probs;
}

std::size_t default_node_budget() {
  if (const char* env = std::getenv("CHAOSLAB_NODE_BUDGET")) {
    const long long v = std::atoll(env);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 20000000;  // 2e7
}

ScenarioTree build_tree(const DriverModel& model, int particles, std::size_t K,
                        std::size_t budget) {
  if (budget == 0) budget = default_node_budget();
  if (particles < 1) throw DimensionMismatch("build_tree: need at least one particle");
  if (K > model.num_steps()) throw DimensionMismatch("build_tree: K exceeds driver steps");

  ScenarioTree tree;
  tree.model = model;
  tree.model.steps.resize(K);
  tree.model.times.resize(K + 1);
  tree.particles = particles;
  tree.depth = K;
  tree.level_nodes.assign(K + 1, 1);

  long double total = 1.0L, level = 1.0L;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& st = model.steps[k];
    const std::size_t m = st.law.n_diff() * st.law.n_jump();
    long double b = 1.0L;
    for (int i = 0; i < particles; ++i) b *= static_cast<long double>(m);
    level *= b;
    total += level;
    if (total > static_cast<long double>(budget))
      throw BudgetExceeded("build_tree: node count " + std::to_string(static_cast<double>(total)) +
                           " exceeds budget " + std::to_string(budget));
    ScenarioTree::StepTable table;
    table.single_outcomes = m;
    table.branching = static_cast<std::size_t>(b);
    table.single_prob.resize(m);
    const std::size_t nj = st.law.n_jump();
    for (std::size_t o = 0; o < m; ++o)
      table.single_prob[o] = st.law.prob(o / nj, o % nj);
    if (table.branching <= (1u << 16)) {
      table.materialized = true;
      table.joint_prob.resize(table.branching);
      table.joint_atom.resize(table.branching * static_cast<std::size_t>(particles));
      for (std::size_t c = 0; c < table.branching; ++c) {
        double pr = 1.0;
        std::size_t x = c;
        for (int i = 0; i < particles; ++i) {
          const std::size_t o = x % m;
          x /= m;
          table.joint_atom[c * static_cast<std::size_t>(particles) + i] =
              static_cast<std::uint16_t>(o);
          pr *= table.single_prob[o];
        }
        table.joint_prob[c] = pr;
      }
    }
    tree.steps.push_back(std::move(table));
    tree.level_nodes[k + 1] = static_cast<std::size_t>(level);
  }
  tree.total_node_count = static_cast<std::size_t>(total);
  return tree;
}

LevelValues cond_exp(const ScenarioTree& tree, std::size_t k_child,
                     const LevelValues& child_values) {
  if (k_child == 0) throw DimensionMismatch("cond_exp: root has no parent level");
  const std::size_t B = tree.steps[k_child - 1].branching;
  const std::size_t n_parent = tree.level_nodes[k_child - 1];
  LevelValues out;
  out.dim = child_values.dim;
  out.data.assign(n_parent * child_values.dim, 0.0);
  for (std::size_t idx = 0; idx < n_parent; ++idx) {
    auto acc = out.at_mut(idx);
    for (std::size_t c = 0; c < B; ++c) {
      const double pr = tree.child_prob(k_child - 1, c);
      const auto v = child_values.at(idx * B + c);
      for (int r = 0; r < out.dim; ++r) acc[r] += pr * v[r];
    }
  }
  return out;
}

namespace {

MartRepr mart_repr_impl(const ScenarioTree& tree, std::size_t k_parent,
                        const LevelValues& g, std::size_t offset, int particle) {
  const auto& st = tree.model.steps[k_parent];
  const auto& table = tree.steps[k_parent];
  const std::size_t B = table.branching;
  const int d = g.dim;
  const int p = st.law.p;
  const std::size_t nj = st.law.n_jump();

  MartRepr rep;
  rep.ghat.assign(d, 0.0);
  for (std::size_t c = 0; c < B; ++c) {
    const double pr = tree.child_prob(k_parent, c);
    const auto v = g.at(offset + c);
    for (int r = 0; r < d; ++r) rep.ghat[r] += pr * v[r];
  }

  // Z: normal equations R = Z * gram, R = E[(G - ghat) dX_diff^T].
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(d, p);
  // h(w) = E[G - ghat | dX_jump = w], per jump atom.
  std::vector<double> h(nj * static_cast<std::size_t>(d), 0.0);
  for (std::size_t c = 0; c < B; ++c) {
    const double pr = tree.child_prob(k_parent, c);
    if (pr == 0.0) continue;
    const std::size_t o = tree.child_outcome(k_parent, c, particle);
    const auto dx = st.law.diff_atom(tree.diff_index(k_parent, o));
    const std::size_t j = tree.jump_index(k_parent, o);
    const auto v = g.at(offset + c);
    for (int r = 0; r < d; ++r) {
      const double dev = v[r] - rep.ghat[r];
      for (int q = 0; q < p; ++q) R(r, q) += pr * dev * dx[q];
      h[j * d + r] += pr * dev;
    }
  }
  for (std::size_t j = 0; j < nj; ++j) {
    const double m = st.jump_marginal[j];
    if (m > 0.0)
      for (int r = 0; r < d; ++r) h[j * d + r] /= m;
  }

  const Eigen::MatrixXd Z = R * st.gram_pinv;
  rep.z.assign(static_cast<std::size_t>(d) * p, 0.0);
  for (int r = 0; r < d; ++r)
    for (int q = 0; q < p; ++q) rep.z[r * p + q] = Z(r, q);

  // Uhat = -h(0) when the jump law has an atom at 0, else 0.
  rep.uhat.assign(d, 0.0);
  for (std::size_t j = 0; j < nj; ++j)
    if (st.jump_is_zero[j] && st.jump_marginal[j] > 0.0)
      for (int r = 0; r < d; ++r) rep.uhat[r] = -h[j * d + r];
  rep.u.d = d;
  rep.u.values.assign(nj * static_cast<std::size_t>(d), 0.0);
  for (std::size_t j = 0; j < nj; ++j) {
    if (st.jump_is_zero[j]) continue;
    for (int r = 0; r < d; ++r) rep.u.values[j * d + r] = h[j * d + r] + rep.uhat[r];
  }

  rep.dm.assign(B * static_cast<std::size_t>(d), 0.0);
  for (std::size_t c = 0; c < B; ++c) {
    const std::size_t o = tree.child_outcome(k_parent, c, particle);
    const auto dx = st.law.diff_atom(tree.diff_index(k_parent, o));
    const std::size_t j = tree.jump_index(k_parent, o);
    const bool zero_jump = static_cast<bool>(st.jump_is_zero[j]);
    const auto v = g.at(offset + c);
    for (int r = 0; r < d; ++r) {
      double val = v[r] - rep.ghat[r];
      for (int q = 0; q < p; ++q) val -= rep.z[r * p + q] * dx[q];
      if (!zero_jump) val -= rep.u.values[j * d + r];
      val += rep.uhat[r];
      rep.dm[c * d + r] = val;
    }
  }
  return rep;
}

}  // namespace

MartRepr mart_repr(const ScenarioTree& tree, std::size_t k_parent, std::size_t parent_idx,
                   const LevelValues& g_children_block, int particle) {
  (void)parent_idx;
  if (g_children_block.data.size() !=
      tree.steps[k_parent].branching * static_cast<std::size_t>(g_children_block.dim))
    throw DimensionMismatch("mart_repr: child block size mismatch");
  return mart_repr_impl(tree, k_parent, g_children_block, 0, particle);
}

MartRepr mart_repr_level(const ScenarioTree& tree, std::size_t k_parent, std::size_t parent_idx,
                         const LevelValues& g_level, int particle) {
  const std::size_t B = tree.steps[k_parent].branching;
  return mart_repr_impl(tree, k_parent, g_level, parent_idx * B, particle);
}

double norm_l2_beta(const ScenarioTree& tree, const LevelValues& leaf_values, const FVPath& A,
                    double beta) {
  const auto lefts = stoch_exp_left_values(A.scaled(beta));
  const double w = lefts[tree.depth];
  const auto probs = tree.level_probs(tree.depth);
  double e2 = 0.0;
  for (std::size_t idx = 0; idx < probs.size(); ++idx) {
    const auto v = leaf_values.at(idx);
    double s = 0.0;
    for (int r = 0; r < leaf_values.dim; ++r) s += v[r] * v[r];
    e2 += probs[idx] * s;
  }
  return w * e2;
}

DiscreteLaw law_at(const ScenarioTree& tree, const LevelValues& values, std::size_t k,
                   double merge_tol) {
  const auto probs = tree.level_probs(k);
  if (values.data.size() != probs.size() * static_cast<std::size_t>(values.dim))
    throw DimensionMismatch("law_at: level size mismatch");
  DiscreteLaw law;
  law.dim = values.dim;
  law.atoms = values.data;
  law.weights = probs;
  return merge_atoms(law, merge_tol);
}

DiscreteLaw path_law_at(const ScenarioTree& tree, const std::vector<LevelValues>& values,
                        std::size_t k, double merge_tol) {
  const auto probs = tree.level_probs(k);
  const int d = values.at(0).dim;
  DiscreteLaw law;
  law.dim = static_cast<int>((k + 1) * static_cast<std::size_t>(d));
  law.weights = probs;
  law.atoms.resize(probs.size() * static_cast<std::size_t>(law.dim));
  for (std::size_t idx = 0; idx < probs.size(); ++idx) {
    // ancestors from depth k up to the root
    std::size_t cur = idx;
    for (std::size_t j = k + 1; j-- > 0;) {
      const auto v = values.at(j).at(cur);
      for (int r = 0; r < d; ++r)
        law.atoms[idx * static_cast<std::size_t>(law.dim) + j * d + r] = v[r];
      if (j > 0) cur = tree.parent_of(j, cur);
    }
  }
  return merge_atoms(law, merge_tol);
}

}  // namespace chaoslab
