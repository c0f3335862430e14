#pragma once

#include <Eigen/Dense>

#include "nimc/model.hpp"
#include "nimc/rng.hpp"
#include "nimc/types.hpp"

namespace nimc {

template <class Scalar = double>
FeatureSet<Scalar> gen_gaussian_features(Index n1, Index n2, Index d1, Index d2, RngSeed seed) {
  if (n1 < 1 || n2 < 1 || d1 < 1 || d2 < 1)
    throw InvalidArgument("gen_gaussian_features: all dimensions must be >= 1");
  Rng rng(seed);
  FeatureSet<Scalar> fs;
  fs.X = rng.gaussian_matrix<Scalar>(n1, d1);
  fs.Y = rng.gaussian_matrix<Scalar>(n2, d2);
  return fs;
}

// Draws m grid cells uniformly with replacement and labels them with the
// model's prediction at the ground-truth parameters.
template <class Scalar>
ObservationSet<Scalar> sample_observations(const FeatureSet<Scalar>& fs,
                                           const FactorPair<Scalar>& truth, Index m,
                                           RngSeed seed) {
  if (m < 1) throw InvalidArgument("sample_observations: m must be >= 1");
  if (fs.d1() != truth.d1() || fs.d2() != truth.d2())
    throw InvalidArgument("sample_observations: feature/factor dimension mismatch");
  Rng rng(seed);
  ObservationSet<Scalar> obs;
  obs.reserve(m);
  const auto n1 = static_cast<std::uint64_t>(fs.n1());
  const auto n2 = static_cast<std::uint64_t>(fs.n2());
  for (Index t = 0; t < m; ++t) {
    const Index i = static_cast<Index>(rng.below(n1));
    const Index j = static_cast<Index>(rng.below(n2));
    const Vec<Scalar> x = fs.X.row(i).transpose();
    const Vec<Scalar> y = fs.Y.row(j).transpose();
    obs.push_back({i, j, predict(truth, x, y)});
  }
  return obs;
}

// Ground-truth factors with sigma_k = 1. With kappa_max > 0 the spectrum is
// pinned to linspace(kappa_max, 1, k) on random orthonormal bases; otherwise a
// Gaussian matrix is rescaled by its smallest singular value.
template <class Scalar = double>
FactorPair<Scalar> make_truth(Index d1, Index d2, Index k, ActivationKind kind, RngSeed seed,
                              double kappa_max = 0) {
  if (k < 1 || k > d1 || k > d2) throw InvalidArgument("make_truth: need 1 <= k <= min(d1, d2)");
  Rng rng(seed);
  auto draw = [&](Index d) -> Mat<Scalar> {
    if (kappa_max > 0) {
      Mat<Scalar> g1 = rng.gaussian_matrix<Scalar>(d, k);
      Mat<Scalar> g2 = rng.gaussian_matrix<Scalar>(k, k);
      Eigen::HouseholderQR<Mat<Scalar>> q1(g1), q2(g2);
      Mat<Scalar> P = q1.householderQ() * Mat<Scalar>::Identity(d, k);
      Mat<Scalar> Q = q2.householderQ() * Mat<Scalar>::Identity(k, k);
      Vec<Scalar> s(k);
      for (Index i = 0; i < k; ++i)
        s[i] = k == 1 ? Scalar(kappa_max)
                      : Scalar(kappa_max + (1.0 - kappa_max) * double(i) / double(k - 1));
      if (k == 1) s[0] = 1;
      return P * s.asDiagonal() * Q.transpose();
    }
    Mat<Scalar> g = rng.gaussian_matrix<Scalar>(d, k);
    Eigen::JacobiSVD<Mat<Scalar>> svd(g);
    const Scalar sk = svd.singularValues()(k - 1);
    if (sk <= Scalar(0)) throw NumericError("make_truth: rank-deficient Gaussian draw");
    return g / sk;
  };
  FactorPair<Scalar> fp;
  fp.U = draw(d1);
  fp.V = draw(d2);
  fp.activation = kind;
  return fp;
}

// Random initialization with entries ~ N(0, 1/d), comparable in scale to a
// sigma_k-normalized truth.
template <class Scalar = double>
FactorPair<Scalar> random_init(Index d1, Index d2, Index k, ActivationKind kind, RngSeed seed) {
  Rng rng(seed);
  FactorPair<Scalar> fp;
  fp.U = rng.gaussian_matrix<Scalar>(d1, k) / std::sqrt(double(d1));
  fp.V = rng.gaussian_matrix<Scalar>(d2, k) / std::sqrt(double(d2));
  fp.activation = kind;
  return fp;
}

}  // namespace nimc
