#ifndef CHAOSLAB_TRANSPORT_HPP
#define CHAOSLAB_TRANSPORT_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace chaoslab {

// Finite atom/weight measure on R^dim, or on grid-path space when the atoms
// are stacked paths (length*point_dim doubles per atom, metric = trunc_sup).
struct DiscreteLaw {
  int dim = 1;  // doubles per atom
  std::vector<double> atoms;    // flat, size() == dim * weights.size()
  std::vector<double> weights;  // positive, sum to 1

  std::size_t size() const { return weights.size(); }
  std::span<const double> atom(std::size_t i) const {
    return {atoms.data() + static_cast<std::ptrdiff_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  static DiscreteLaw dirac(std::vector<double> point);
  void validate() const;  // weights positive, sum 1 within 1e-12
};

// Merge duplicate atoms (lexicographic sort, tolerance per coordinate).
DiscreteLaw merge_atoms(const DiscreteLaw& law, double tol = 1e-12);

// Metrics. point_dim describes the R^d blocks of a stacked path; for euclid
// it is ignored.
struct Metric {
  enum Kind { euclid, trunc_sup } kind = euclid;
  int point_dim = 1;

  static Metric euclidean() { return {euclid, 1}; }
  static Metric path(int d = 1) { return {trunc_sup, d}; }

  double operator()(std::span<const double> x, std::span<const double> y) const;
};

double metric_euclid(std::span<const double> x, std::span<const double> y);
// min(sup_k |x_k - y_k|, 1) over R^d blocks.
double metric_path(std::span<const double> x, std::span<const double> y, int point_dim = 1);

// Equal-size empirical W2: optimal assignment, O(N^3) Hungarian.
double w2_empirical_equal(const std::vector<std::vector<double>>& xs,
                          const std::vector<std::vector<double>>& ys, const Metric& metric);

// Exact W2 between finite discrete laws via the transportation simplex.
double w2_discrete(const DiscreteLaw& p, const DiscreteLaw& q, const Metric& metric);

// 1-D quantile-coupling oracle: sqrt(int_0^1 (F_p^{-1} - F_q^{-1})^2 du).
double w2_1d(const DiscreteLaw& p, const DiscreteLaw& q);

// W2^2(L^N(x), L^N(y)) <= (1/N) sum d(x_i, y_i)^2 up to 1e-12.
bool empirical_coupling_bound_check(const std::vector<std::vector<double>>& xs,
                                    const std::vector<std::vector<double>>& ys,
                                    const Metric& metric);

// Assignment cost oracle for tests (N <= ~9): exhaustive permutations.
double w2_empirical_bruteforce(const std::vector<std::vector<double>>& xs,
                               const std::vector<std::vector<double>>& ys,
                               const Metric& metric);

}  // namespace chaoslab

#endif
