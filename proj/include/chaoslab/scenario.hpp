#ifndef CHAOSLAB_SCENARIO_HPP
#define CHAOSLAB_SCENARIO_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "chaoslab/driver.hpp"
#include "chaoslab/fvpath.hpp"
#include "chaoslab/transport.hpp"

namespace chaoslab {

// Exact finite probability space for N i.i.d. particles driven by the same
// DriverModel. The tree is a complete product tree and is kept implicit:
// a node is (depth k, index in [0, level_nodes[k])), its children are the
// joint outcomes of one step, child index = parent * branching + outcome.
struct ScenarioTree {
  DriverModel model;
  int particles = 1;
  std::size_t depth = 0;  // K

  struct StepTable {
    std::size_t single_outcomes = 0;     // per-particle outcomes m_k
    std::size_t branching = 0;           // m_k^N
    std::vector<double> single_prob;     // m_k
    std::vector<double> joint_prob;      // branching (materialized when small)
    std::vector<std::uint16_t> joint_atom;  // branching * N (materialized when small)
    bool materialized = false;
  };
  std::vector<StepTable> steps;
  std::vector<std::size_t> level_nodes;  // size K+1
  std::size_t total_node_count = 0;

  // Single-particle outcome o at step k splits into (diff_idx, jump_idx).
  std::size_t diff_index(std::size_t k, std::size_t o) const {
    return o / model.steps[k].law.n_jump();
  }
  std::size_t jump_index(std::size_t k, std::size_t o) const {
    return o % model.steps[k].law.n_jump();
  }

  // Outcome of particle i inside joint child c at step k.
  std::size_t child_outcome(std::size_t k, std::size_t c, int i) const;
  double child_prob(std::size_t k, std::size_t c) const;

  std::size_t parent_of(std::size_t k, std::size_t idx) const {
    return idx / steps[k - 1].branching;
  }
  // Joint outcome taken on the step into depth k.
  std::size_t arriving_outcome(std::size_t k, std::size_t idx) const {
    return idx % steps[k - 1].branching;
  }

  // Exact probability of a node.
  double node_prob(std::size_t k, std::size_t idx) const;
  // Probabilities of a whole level (forward accumulation).
  std::vector<double> level_probs(std::size_t k) const;
};

std::size_t default_node_budget();  // 2e7, overridable via CHAOSLAB_NODE_BUDGET

// Throws BudgetExceeded with the computed node count.
ScenarioTree build_tree(const DriverModel& model, int particles, std::size_t K,
                        std::size_t budget = 0);

// Values on one tree level, dim doubles per node.
struct LevelValues {
  int dim = 1;
  std::vector<double> data;
  std::span<const double> at(std::size_t idx) const {
    return {data.data() + static_cast<std::ptrdiff_t>(idx) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> at_mut(std::size_t idx) {
    return {data.data() + static_cast<std::ptrdiff_t>(idx) * dim, static_cast<std::size_t>(dim)};
  }
};

// Probability-weighted child average: values at depth k+1 -> depth k.
LevelValues cond_exp(const ScenarioTree& tree, std::size_t k_child,
                     const LevelValues& child_values);

// Orthogonal one-step representation of child-indexed values G against
// particle i's increments:
//   G - ghat = Z dX_diff + (U(dX_jump) 1_{!=0} - Uhat) + dM,
// with E[dM dX_diff^T] = 0 and E[dM | dX_jump = w] = 0 for nonzero w.
struct MartRepr {
  std::vector<double> ghat;   // d
  std::vector<double> z;      // d x p, row-major
  JumpFunction u;             // per jump atom, d values
  std::vector<double> uhat;   // d
  std::vector<double> dm;     // branching x d
};

MartRepr mart_repr(const ScenarioTree& tree, std::size_t k_parent, std::size_t parent_idx,
                   const LevelValues& g_children_block, int particle);

// Same, but g spans the whole child level and the block of this parent is
// located internally.
MartRepr mart_repr_level(const ScenarioTree& tree, std::size_t k_parent, std::size_t parent_idx,
                         const LevelValues& g_level, int particle);

// ||xi||^2_{L2_beta} = E(beta A)_{T-} * E|xi|^2 (deterministic weight).
double norm_l2_beta(const ScenarioTree& tree, const LevelValues& leaf_values, const FVPath& A,
                    double beta);

// Marginal law of depth-k values, duplicate atoms merged.
DiscreteLaw law_at(const ScenarioTree& tree, const LevelValues& values, std::size_t k,
                   double merge_tol = 1e-12);

// Law of the stopped path (values at depths 0..k stacked), duplicate paths
// merged.
DiscreteLaw path_law_at(const ScenarioTree& tree, const std::vector<LevelValues>& values,
                        std::size_t k, double merge_tol = 1e-12);

}  // namespace chaoslab

#endif
