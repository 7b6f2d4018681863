#include "chaoslab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "chaoslab/errors.hpp"

namespace chaoslab {

DiscreteLaw DiscreteLaw::dirac(std::vector<double> point) {
  DiscreteLaw law;
  law.dim = static_cast<int>(point.size());
  law.atoms = std::move(point);
  law.weights = {1.0};
  return law;
}

void DiscreteLaw::validate() const {
  if (atoms.size() != weights.size() * static_cast<std::size_t>(dim))
    throw DimensionMismatch("DiscreteLaw: atom storage does not match dim");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw Error("DiscreteLaw: weights must be positive");
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-12) throw Error("DiscreteLaw: weights must sum to 1");
}

DiscreteLaw merge_atoms(const DiscreteLaw& law, double tol) {
  const std::size_t n = law.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int d = law.dim;
  auto lex_less = [&](std::size_t a, std::size_t b) {
    for (int j = 0; j < d; ++j) {
      const double xa = law.atoms[a * d + j], xb = law.atoms[b * d + j];
      if (xa != xb) return xa < xb;
    }
    return false;
  };
  std::sort(order.begin(), order.end(), lex_less);

  DiscreteLaw out;
  out.dim = d;
  for (std::size_t idx : order) {
    bool merged = false;
    if (!out.weights.empty()) {
      const std::size_t last = out.weights.size() - 1;
      bool same = true;
      for (int j = 0; j < d; ++j)
        if (std::fabs(out.atoms[last * d + j] - law.atoms[idx * d + j]) > tol) {
          same = false;
          break;
        }
      if (same) {
        out.weights[last] += law.weights[idx];
        merged = true;
      }
    }
    if (!merged) {
      for (int j = 0; j < d; ++j) out.atoms.push_back(law.atoms[idx * d + j]);
      out.weights.push_back(law.weights[idx]);
    }
  }
  return out;
}

double metric_euclid(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("metric_euclid: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double metric_path(std::span<const double> x, std::span<const double> y, int point_dim) {
  if (x.size() != y.size()) throw DimensionMismatch("metric_path: path length mismatch");
  if (point_dim < 1 || x.size() % static_cast<std::size_t>(point_dim) != 0)
    throw DimensionMismatch("metric_path: bad point dimension");
  double sup = 0.0;
  for (std::size_t i = 0; i < x.size(); i += point_dim) {
    double s = 0.0;
    for (int j = 0; j < point_dim; ++j) {
      const double d = x[i + j] - y[i + j];
      s += d * d;
    }
    sup = std::max(sup, std::sqrt(s));
  }
  return std::min(sup, 1.0);
}

double Metric::operator()(std::span<const double> x, std::span<const double> y) const {
  return kind == euclid ? metric_euclid(x, y) : metric_path(x, y, point_dim);
}

namespace {

std::vector<double> pairwise_sq_costs(const std::vector<std::vector<double>>& xs,
                                      const std::vector<std::vector<double>>& ys,
                                      const Metric& metric) {
  const std::size_t n = xs.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = metric(xs[i], ys[j]);
      cost[i * n + j] = d * d;
    }
  return cost;
}

// Hungarian algorithm (Jonker-Volgenant style row additions), O(n^3).
double assignment_min_cost(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0);  // column -> row (1-based)
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    std::vector<std::size_t> way(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost[(match[j] - 1) * n + (j - 1)];
  return total;
}

}  // namespace

double w2_empirical_equal(const std::vector<std::vector<double>>& xs,
                          const std::vector<std::vector<double>>& ys, const Metric& metric) {
  if (xs.size() != ys.size() || xs.empty())
    throw SizeMismatch("w2_empirical_equal: point sets must have equal positive size");
  const std::size_t n = xs.size();
  const auto cost = pairwise_sq_costs(xs, ys, metric);
  const double total = assignment_min_cost(cost, n);
  return std::sqrt(total / static_cast<double>(n));
}

double w2_empirical_bruteforce(const std::vector<std::vector<double>>& xs,
                               const std::vector<std::vector<double>>& ys,
                               const Metric& metric) {
  if (xs.size() != ys.size() || xs.empty())
    throw SizeMismatch("w2_empirical_bruteforce: size mismatch");
  const std::size_t n = xs.size();
  const auto cost = pairwise_sq_costs(xs, ys, metric);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += cost[i * n + perm[i]];
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(n));
}

namespace {

// Transportation simplex on the bipartite polytope. Basic solutions form a
// spanning tree of the m x n bipartite graph; entering arc chosen by Bland's
// rule (smallest (i,j) with negative reduced cost).
class TransportSimplex {
 public:
  TransportSimplex(std::vector<double> supply, std::vector<double> demand,
                   const std::vector<double>& cost)
      : m_(supply.size()), n_(demand.size()), cost_(cost),
        supply_(std::move(supply)), demand_(std::move(demand)) {}

  double solve() {
    // Perturb marginals so ties in the NW start do not create degenerate
    // bases; the mass error is ~1e-13 and irrelevant at the 1e-10 contract.
    double added = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      const double eps = 1e-15 * static_cast<double>(i + 1);
      supply_[i] += eps;
      added += eps;
    }
    demand_.back() += added;
    northwest_start();
    const std::size_t max_pivots = 200 * (m_ + n_) * (m_ + n_) + 10000;
    for (std::size_t it = 0; it < max_pivots; ++it) {
      compute_potentials();
      std::ptrdiff_t ei = -1, ej = -1;
      for (std::size_t i = 0; i < m_ && ei < 0; ++i)
        for (std::size_t j = 0; j < n_; ++j) {
          if (basic_[i * n_ + j]) continue;
          if (cost_[i * n_ + j] - u_[i] - v_[j] < -1e-13) {
            ei = static_cast<std::ptrdiff_t>(i);
            ej = static_cast<std::ptrdiff_t>(j);
            break;
          }
        }
      if (ei < 0) break;
      pivot(static_cast<std::size_t>(ei), static_cast<std::size_t>(ej));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        if (basic_[i * n_ + j]) total += flow_[i * n_ + j] * cost_[i * n_ + j];
    return total;
  }

 private:
  void northwest_start() {
    flow_.assign(m_ * n_, 0.0);
    basic_.assign(m_ * n_, 0);
    std::vector<double> s = supply_, d = demand_;
    std::size_t i = 0, j = 0;
    const double eps = 1e-18;
    while (i < m_ && j < n_) {
      const double f = std::min(s[i], d[j]);
      flow_[i * n_ + j] = f;
      basic_[i * n_ + j] = 1;
      s[i] -= f;
      d[j] -= f;
      if (i + 1 == m_ && j + 1 == n_) break;
      if (s[i] <= eps && i + 1 < m_)
        ++i;
      else
        ++j;
    }
  }

  void compute_potentials() {
    u_.assign(m_, 0.0);
    v_.assign(n_, 0.0);
    std::vector<char> udone(m_, 0), vdone(n_, 0);
    udone[0] = 1;
    std::size_t done = 1;
    const std::size_t total = m_ + n_;
    while (done < total) {
      bool progress = false;
      for (std::size_t i = 0; i < m_; ++i)
        for (std::size_t j = 0; j < n_; ++j) {
          if (!basic_[i * n_ + j]) continue;
          if (udone[i] && !vdone[j]) {
            v_[j] = cost_[i * n_ + j] - u_[i];
            vdone[j] = 1;
            ++done;
            progress = true;
          } else if (!udone[i] && vdone[j]) {
            u_[i] = cost_[i * n_ + j] - v_[j];
            udone[i] = 1;
            ++done;
            progress = true;
          }
        }
      if (!progress) {
        // Degenerate basis split the tree; anchor the first loose node.
        bool anchored = false;
        for (std::size_t i = 0; i < m_ && !anchored; ++i)
          if (!udone[i]) {
            udone[i] = 1;
            ++done;
            anchored = true;
          }
        for (std::size_t j = 0; j < n_ && !anchored; ++j)
          if (!vdone[j]) {
            vdone[j] = 1;
            ++done;
            anchored = true;
          }
        if (!anchored) break;
      }
    }
  }

  // Find the unique cycle created by adding arc (ei, ej) to the basis tree and
  // shift flow around it.
  void pivot(std::size_t ei, std::size_t ej) {
    // Build adjacency over basic arcs; nodes: rows [0,m), cols [m, m+n).
    std::vector<std::vector<std::size_t>> adj(m_ + n_);
    for (std::size_t i = 0; i < m_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        if (basic_[i * n_ + j]) {
          adj[i].push_back(m_ + j);
          adj[m_ + j].push_back(i);
        }
    // Path from column ej to row ei through the tree (BFS).
    std::vector<std::ptrdiff_t> parent(m_ + n_, -1);
    std::vector<char> seen(m_ + n_, 0);
    std::vector<std::size_t> queue{m_ + ej};
    seen[m_ + ej] = 1;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const std::size_t x = queue[qi];
      if (x == ei) break;
      for (std::size_t y : adj[x])
        if (!seen[y]) {
          seen[y] = 1;
          parent[y] = static_cast<std::ptrdiff_t>(x);
          queue.push_back(y);
        }
    }
    if (!seen[ei]) {
      // Disconnected (degenerate) basis: just enter the arc with zero flow.
      basic_[ei * n_ + ej] = 1;
      flow_[ei * n_ + ej] = 0.0;
      return;
    }
    // Cycle: (ei,ej) plus tree path ei -> ... -> ej. Alternate +/-.
    std::vector<std::pair<std::size_t, std::size_t>> cycle;  // arcs (row, col)
    cycle.emplace_back(ei, ej);                              // + arc
    std::size_t x = ei;
    std::vector<std::size_t> nodes;
    while (x != m_ + ej) {
      nodes.push_back(x);
      x = static_cast<std::size_t>(parent[x]);
    }
    nodes.push_back(m_ + ej);
    for (std::size_t t = 0; t + 1 < nodes.size(); ++t) {
      const std::size_t a = nodes[t], b = nodes[t + 1];
      const std::size_t row = a < m_ ? a : b;
      const std::size_t col = (a < m_ ? b : a) - m_;
      cycle.emplace_back(row, col);
    }
    // Odd positions (1,3,...) are minus arcs.
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = 1;
    for (std::size_t t = 1; t < cycle.size(); t += 2) {
      const double f = flow_[cycle[t].first * n_ + cycle[t].second];
      if (f < theta) {
        theta = f;
        leave = t;
      }
    }
    for (std::size_t t = 0; t < cycle.size(); ++t) {
      double& f = flow_[cycle[t].first * n_ + cycle[t].second];
      f += (t % 2 == 0) ? theta : -theta;
    }
    basic_[ei * n_ + ej] = 1;
    basic_[cycle[leave].first * n_ + cycle[leave].second] = 0;
    flow_[cycle[leave].first * n_ + cycle[leave].second] = 0.0;
  }

  std::size_t m_, n_;
  const std::vector<double>& cost_;
  std::vector<double> supply_, demand_;
  std::vector<double> flow_, u_, v_;
  std::vector<char> basic_;
};

}  // namespace

double w2_discrete(const DiscreteLaw& p, const DiscreteLaw& q, const Metric& metric) {
  if (p.dim != q.dim) throw SpaceMismatch("w2_discrete: laws live on different spaces");
  p.validate();
  q.validate();
  const std::size_t m = p.size(), n = q.size();
  std::vector<double> cost(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = metric(p.atom(i), q.atom(j));
      cost[i * n + j] = d * d;
    }
  TransportSimplex simplex(p.weights, q.weights, cost);
  const double total = simplex.solve();
  return std::sqrt(std::max(0.0, total));
}

double w2_1d(const DiscreteLaw& p, const DiscreteLaw& q) {
  if (p.dim != 1 || q.dim != 1) throw SpaceMismatch("w2_1d: scalar atoms required");
  p.validate();
  q.validate();
  auto sorted = [](const DiscreteLaw& law) {
    std::vector<std::pair<double, double>> aw(law.size());
    for (std::size_t i = 0; i < law.size(); ++i) aw[i] = {law.atoms[i], law.weights[i]};
    std::sort(aw.begin(), aw.end());
    return aw;
  };
  const auto a = sorted(p), b = sorted(q);
  // Integrate (F_p^{-1}(u) - F_q^{-1}(u))^2 over the merged CDF breakpoints.
  std::size_t i = 0, j = 0;
  double u = 0.0, ca = a[0].second, cb = b[0].second, total = 0.0;
  while (u < 1.0 - 1e-15 && i < a.size() && j < b.size()) {
    const double next = std::min(std::min(ca, cb), 1.0);
    const double du = next - u;
    if (du > 0.0) {
      const double diff = a[i].first - b[j].first;
      total += diff * diff * du;
    }
    u = next;
    if (ca <= next + 1e-18) {
      ++i;
      ca = (i < a.size()) ? ca + a[i].second : 2.0;
    }
    if (cb <= next + 1e-18) {
      ++j;
      cb = (j < b.size()) ? cb + b[j].second : 2.0;
    }
  }
  return std::sqrt(std::max(0.0, total));
}

bool empirical_coupling_bound_check(const std::vector<std::vector<double>>& xs,
                                    const std::vector<std::vector<double>>& ys,
                                    const Metric& metric) {
  if (xs.size() != ys.size() || xs.empty())
    throw SizeMismatch("empirical_coupling_bound_check: size mismatch");
  const std::size_t n = xs.size();
  double rhs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = metric(xs[i], ys[i]);
    rhs += d * d;
  }
  rhs /= static_cast<double>(n);
  const double lhs = w2_empirical_equal(xs, ys, metric);
  return lhs * lhs <= rhs + 1e-12;
}

}  // namespace chaoslab
