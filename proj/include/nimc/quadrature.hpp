#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "nimc/types.hpp"

namespace nimc {

// Gauss-Hermite rule rescaled so that expect(f) integrates against the
// standard normal density: E_{z~N(0,1)}[f(z)] = sum_i weight[i] * f(node[i]).
class GaussHermite {
 public:
  static constexpr int kDefaultNodes = 128;

  explicit GaussHermite(int n = kDefaultNodes) {
    if (n < 2) throw InvalidArgument("GaussHermite: need at least 2 nodes");
    // Golub-Welsch on the Jacobi matrix of the (physicists') Hermite
    // recurrence: zero diagonal, off-diagonal sqrt(i/2).
    Vecd diag = Vecd::Zero(n);
    Vecd sub(n - 1);
    for (int i = 1; i < n; ++i) sub[i - 1] = std::sqrt(i / 2.0);
    Eigen::SelfAdjointEigenSolver<Matd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    nodes_ = es.eigenvalues();
    weights_.resize(n);
    for (int i = 0; i < n; ++i) {
      const double v0 = es.eigenvectors()(0, i);
      weights_[i] = v0 * v0;  // mu0 = sqrt(pi) cancels against the normal density
    }
    // Change of variable x -> sqrt(2) x maps exp(-x^2) onto the N(0,1) weight.
    nodes_ *= std::sqrt(2.0);
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Vecd& nodes() const { return nodes_; }
  const Vecd& weights() const { return weights_; }

  template <class F>
  double expect(F&& f) const {
    double acc = 0;
    for (int i = 0; i < size(); ++i) acc += weights_[i] * f(nodes_[i]);
    return acc;
  }

 private:
  Vecd nodes_;
  Vecd weights_;
};

inline const GaussHermite& default_gauss_hermite() {
  static const GaussHermite rule(GaussHermite::kDefaultNodes);
  return rule;
}

}  // namespace nimc
