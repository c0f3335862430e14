#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "nimc/moments.hpp"
#include "nimc/rng.hpp"
#include "nimc/tensor3.hpp"
#include "nimc/types.hpp"

namespace nimc {

template <class Scalar = double>
struct MomentTensor3 {
  SymTensor3<Scalar> T;
  std::size_t n_used = 0;
};

// Rank-k decomposition output: unit directions with nonnegative weights,
// T ~ sum_i weights[i] * directions.col(i)^{x3}.
template <class Scalar = double>
struct TensorComponents {
  Mat<Scalar> directions;  // dim x k, unit columns
  Vec<Scalar> weights;     // k, all >= 0
};

template <class Scalar = double>
struct InitEstimate {
  Mat<Scalar> directions;  // d x k unit columns, sign-resolved
  Vec<Scalar> weights;     // recovered rank-one coefficients (signed)
  Vec<Scalar> norms;       // estimated column norms, positive
  Mat<Scalar> factor;      // directions * diag(norms)
};

struct PowerIterationOptions {
  int restarts = 50;
  int iterations = 100;
  double tolerance = 1e-10;
};

// ---------------------------------------------------------------------------
// Third-moment score tensor
// ---------------------------------------------------------------------------

// (1/|obs|) sum a * (x^{x3} - x (~x) I) over observed triples, where
// (x (~x) I)_{pqr} = x_p d_{qr} + x_q d_{pr} + x_r d_{pq}.
template <class Scalar>
MomentTensor3<Scalar> empirical_m3(const FeatureSet<Scalar>& fs, const ObservationSet<Scalar>& obs) {
  if (obs.empty()) throw InvalidArgument("empirical_m3: empty observation set");
  check_observations(obs, fs.n1(), fs.n2());
  const Index d = fs.d1();
  MomentTensor3<Scalar> out;
  out.T = SymTensor3<Scalar>(d);
  out.n_used = obs.size();
  Vec<Scalar> s = Vec<Scalar>::Zero(d);  // sum of a * x for the correction term
  auto& T = out.T;
  for (const auto& o : obs) {
    Vec<Scalar> x = fs.X.row(o.row).transpose();
    const Scalar a = o.value;
    s += a * x;
    // Cube part: rank-one update of the unfolding by (a x) vec(x x^T)^T.
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> M(
        T.data().data(), d, d * d);
    Mat<Scalar> xxT = x * x.transpose();
    Eigen::Map<Vec<Scalar>> flat(xxT.data(), d * d);
    M.noalias() += (a * x) * flat.transpose();
  }
  const Scalar inv_m = Scalar(1) / Scalar(obs.size());
  T *= inv_m;
  s *= inv_m;
  for (Index p = 0; p < d; ++p)
    for (Index q = 0; q < d; ++q) {
      T(p, q, q) -= s[p];
      T(q, p, q) -= s[p];
      T(q, q, p) -= s[p];
    }
  T.symmetrize();
  return out;
}

// The mirrored tensor in y: swap the roles of the two feature sides.
template <class Scalar>
MomentTensor3<Scalar> empirical_m3_cols(const FeatureSet<Scalar>& fs,
                                        const ObservationSet<Scalar>& obs) {
  FeatureSet<Scalar> swapped{fs.Y, fs.X};
  ObservationSet<Scalar> tobs;
  tobs.reserve(obs.size());
  for (const auto& o : obs) tobs.push_back({o.col, o.row, o.value});
  return empirical_m3(swapped, tobs);
}

// ---------------------------------------------------------------------------
// Whitening + tensor power iteration
// ---------------------------------------------------------------------------

namespace detail {

// One robust power-iteration extraction: best of `restarts` random starts,
// scored by |T(v,v,v)|. Convergence is judged up to sign, since components
// with negative weights make the power map alternate.
template <class Scalar>
std::pair<Vec<Scalar>, Scalar> dominant_component(const SymTensor3<Scalar>& T, Rng& rng,
                                                  const PowerIterationOptions& opt) {
  const Index k = T.dim();
  Vec<Scalar> best = Vec<Scalar>::Zero(k);
  Scalar best_score = -1;
  for (int r = 0; r < opt.restarts; ++r) {
    Vec<Scalar> v = rng.unit_vector<Scalar>(k);
    for (int it = 0; it < opt.iterations; ++it) {
      Vec<Scalar> w = T.contract2(v, v);
      const Scalar nrm = w.norm();
      if (nrm == Scalar(0)) break;
      w /= nrm;
      const bool converged = std::abs(std::abs(w.dot(v)) - Scalar(1)) <= opt.tolerance;
      v = w;
      if (converged) break;
    }
    const Scalar score = std::abs(T.contract3(v, v, v));
    if (score > best_score) {
      best_score = score;
      best = v;
    }
  }
  return {best, T.contract3(best, best, best)};
}

}  // namespace detail

// Whitens through the top-k eigenspace of the unfolding Gram matrix
// T1 T1^T, extracts components by deflated power iteration in the whitened
// space, maps them back, and re-fits the weights by least squares on
// T(d_i, d_i, d_i). Weights are reported nonnegative; the sign lives in the
// direction (odd order makes that convention exact).
template <class Scalar>
TensorComponents<Scalar> decompose_rank_k(const MomentTensor3<Scalar>& mt, Index k, RngSeed seed,
                                          const PowerIterationOptions& opt = {}) {
  const auto& T = mt.T;
  const Index d = T.dim();
  if (k < 1 || k > d) throw InvalidArgument("decompose_rank_k: need 1 <= k <= dim");
  auto M = T.unfold1();
  Mat<Scalar> B = M * M.transpose();
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(B);
  if (es.info() != Eigen::Success) throw NumericError("decompose_rank_k: eigensolver failed");
  const Vec<Scalar> evals = es.eigenvalues();  // ascending
  const Scalar top = evals(d - 1);
  if (top <= Scalar(0) || evals(d - k) <= Scalar(1e-12) * top)
    throw DegenerateSpectrum("decompose_rank_k: whitening matrix has rank < k");

  Mat<Scalar> P(d, k);
  Vec<Scalar> s(k);
  for (Index i = 0; i < k; ++i) {
    P.col(i) = es.eigenvectors().col(d - 1 - i);
    s[i] = evals(d - 1 - i);
  }
  // W^T B W = I, so near-rank-k tensors become near-orthogonally
  // decomposable in the whitened coordinates.
  Vec<Scalar> scale = s.array().sqrt();
  Mat<Scalar> W = P * scale.cwiseInverse().asDiagonal();
  Mat<Scalar> W_back = P * scale.asDiagonal();

  SymTensor3<Scalar> Tw = T.change_basis(W);
  Rng rng(seed);
  Mat<Scalar> dirs(d, k);
  for (Index c = 0; c < k; ++c) {
    Rng sub(seed.substream(static_cast<std::uint64_t>(c) + 1));
    auto [v, lambda] = detail::dominant_component(Tw, sub, opt);
    if (lambda < 0) {
      v = -v;
      lambda = -lambda;
    }
    Tw -= SymTensor3<Scalar>::rank_one(lambda, v);
    Vec<Scalar> dir = W_back * v;
    const Scalar nrm = dir.norm();
    if (nrm == Scalar(0)) throw NumericError("decompose_rank_k: zero component");
    dirs.col(c) = dir / nrm;
  }

  // Weight re-fit: T(d_i,d_i,d_i) = sum_j w_j (d_j^T d_i)^3.
  Mat<Scalar> A(k, k);
  Vec<Scalar> t(k);
  for (Index i = 0; i < k; ++i) {
    t[i] = T.contract3(dirs.col(i), dirs.col(i), dirs.col(i));
    for (Index j = 0; j < k; ++j) {
      const Scalar c = dirs.col(j).dot(dirs.col(i));
      A(i, j) = c * c * c;
    }
  }
  Vec<Scalar> w = A.fullPivLu().solve(t);
  for (Index i = 0; i < k; ++i) {
    if (w[i] < 0) {
      w[i] = -w[i];
      dirs.col(i) = -dirs.col(i);
    }
  }
  return {std::move(dirs), std::move(w)};
}

// ---------------------------------------------------------------------------
// Norm recovery
// ---------------------------------------------------------------------------

// Solves gamma0_v * (gamma_3(sigma) - 3 gamma_1(sigma)) = alpha for sigma.
// The sigmoid forward map is strictly decreasing from 0, so bisection on
// (0, sigma_max] inverts it; alpha outside the attainable range is rejected.
inline double invert_alpha_to_norm(ActivationKind kind, double alpha, double gamma0_v,
                                   double sigma_max = 10.0, double tol = 1e-8) {
  if (kind == ActivationKind::ReLU)
    throw InvalidArgument(
        "invert_alpha_to_norm: ReLU has gamma_3 - 3 gamma_1 = 0, the map is not invertible");
  if (kind != ActivationKind::Sigmoid)
    throw InvalidArgument("invert_alpha_to_norm: only sigmoid is supported");
  if (gamma0_v == 0) throw InvalidArgument("invert_alpha_to_norm: gamma0_v must be nonzero");
  auto forward = [&](double sigma) {
    return gamma0_v * (gamma_sigma(kind, 3, sigma) - 3 * gamma_sigma(kind, 1, sigma));
  };
  const double at_max = forward(sigma_max);
  const double lo_val = 0;  // limit as sigma -> 0+
  const double a = std::min(lo_val, at_max), b = std::max(lo_val, at_max);
  if (!(alpha > a && alpha < b))
    throw OutOfRange("invert_alpha_to_norm: alpha " + std::to_string(alpha) +
                     " outside attainable range (" + std::to_string(a) + ", " +
                     std::to_string(b) + ")");
  double lo = 0, hi = sigma_max;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double f = forward(mid);
    const bool same_side_as_lo = (f - alpha) * (lo_val - alpha) > 0;
    (same_side_as_lo ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// End-to-end initialization
// ---------------------------------------------------------------------------

// Column norms of a sigmoid model enter the tensor weights as
// alpha_i = gamma_0 * (gamma_3 - 3 gamma_1)(|u_i|) with gamma_0 = 1/2, which
// is negative for every positive norm; that fixes both the sign of the
// recovered direction and the norm.
template <class Scalar>
InitEstimate<Scalar> estimate_from_tensor(const MomentTensor3<Scalar>& mt, Index k, RngSeed seed,
                                          const PowerIterationOptions& opt = {}) {
  TensorComponents<Scalar> tc = decompose_rank_k(mt, k, seed, opt);
  InitEstimate<Scalar> est;
  est.directions.resize(mt.T.dim(), k);
  est.weights.resize(k);
  est.norms.resize(k);
  for (Index i = 0; i < k; ++i) {
    est.weights[i] = -tc.weights[i];
    est.directions.col(i) = -tc.directions.col(i);
    est.norms[i] =
        Scalar(invert_alpha_to_norm(ActivationKind::Sigmoid, double(est.weights[i]), 0.5));
  }
  est.factor = est.directions * est.norms.asDiagonal();
  return est;
}

namespace detail {

// Both variance reductions below leave the population moments untouched:
// E[x^{x3} - x (~x) I] = 0 makes the tensor invariant to shifting every
// rating by a constant, and E[x] = E[y] = 0 does the same for the cross
// moment sum a x y^T.
template <class Scalar>
ObservationSet<Scalar> centered_ratings(const ObservationSet<Scalar>& obs) {
  Scalar mean = 0;
  for (const auto& o : obs) mean += o.value;
  mean /= Scalar(obs.size());
  ObservationSet<Scalar> out = obs;
  for (auto& o : out) o.value -= mean;
  return out;
}

template <class Scalar>
Mat<Scalar> cross_moment(const FeatureSet<Scalar>& fs, const ObservationSet<Scalar>& obs) {
  Mat<Scalar> cross = Mat<Scalar>::Zero(fs.d1(), fs.d2());
  for (const auto& o : obs)
    cross.noalias() += o.value * fs.X.row(o.row).transpose() * fs.Y.row(o.col);
  return cross / Scalar(obs.size());
}

// Rank-k estimate of one side. The signal subspace comes from the cross
// moment (it averages over both feature sides, so it is far less noisy than
// the tensor itself); the tensor is decomposed inside that subspace.
template <class Scalar>
InitEstimate<Scalar> initialize_side(const FeatureSet<Scalar>& fs,
                                     const ObservationSet<Scalar>& obs,
                                     const Mat<Scalar>& subspace, Index k, RngSeed seed,
                                     const PowerIterationOptions& opt) {
  MomentTensor3<Scalar> mt = empirical_m3(fs, obs);
  MomentTensor3<Scalar> projected{mt.T.change_basis(subspace), mt.n_used};
  TensorComponents<Scalar> tc = decompose_rank_k(projected, k, seed, opt);
  InitEstimate<Scalar> est;
  est.directions.resize(fs.d1(), k);
  est.weights.resize(k);
  est.norms.resize(k);
  for (Index i = 0; i < k; ++i) {
    Vec<Scalar> dir = subspace * tc.directions.col(i);
    dir.normalize();
    est.weights[i] = -tc.weights[i];
    est.directions.col(i) = -dir;
    est.norms[i] =
        Scalar(invert_alpha_to_norm(ActivationKind::Sigmoid, double(est.weights[i]), 0.5));
  }
  est.factor = est.directions * est.norms.asDiagonal();
  return est;
}

}  // namespace detail

template <class Scalar>
InitEstimate<Scalar> tensor_initialize(const FeatureSet<Scalar>& fs,
                                       const ObservationSet<Scalar>& obs, Index k,
                                       ActivationKind kind, RngSeed seed,
                                       const PowerIterationOptions& opt = {}) {
  if (kind != ActivationKind::Sigmoid)
    throw InvalidArgument("tensor_initialize: only sigmoid is supported");
  ObservationSet<Scalar> centered = detail::centered_ratings(obs);
  Mat<Scalar> cross = detail::cross_moment(fs, centered);
  Eigen::JacobiSVD<Mat<Scalar>> svd(cross, Eigen::ComputeThinU);
  if (svd.singularValues()(k - 1) <= Scalar(1e-12) * svd.singularValues()(0))
    throw DegenerateSpectrum("tensor_initialize: cross moment has rank < k");
  const Mat<Scalar> Pk = svd.matrixU().leftCols(k);
  return detail::initialize_side(fs, centered, Pk, k, seed, opt);
}

// Greedy maximum-|cosine| column matching of B against A. Returns for each
// column of A the matched column index of B and the absolute cosine.
template <class Scalar>
std::pair<std::vector<Index>, Vec<Scalar>> greedy_match_columns(const Mat<Scalar>& A,
                                                                const Mat<Scalar>& B) {
  const Index k = A.cols();
  if (B.cols() != k) throw InvalidArgument("greedy_match_columns: column count mismatch");
  Mat<Scalar> C(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j)
      C(i, j) = std::abs(A.col(i).normalized().dot(B.col(j).normalized()));
  std::vector<Index> match(k, -1);
  std::vector<bool> used(k, false);
  Vec<Scalar> cosines(k);
  for (Index step = 0; step < k; ++step) {
    Index bi = -1, bj = -1;
    Scalar best = -1;
    for (Index i = 0; i < k; ++i) {
      if (match[i] >= 0) continue;
      for (Index j = 0; j < k; ++j) {
        if (used[j]) continue;
        if (C(i, j) > best) {
          best = C(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    match[bi] = bj;
    used[bj] = true;
    cosines[bi] = best;
  }
  return {match, cosines};
}

// Joint initialization of both factors. Each side is recovered from its own
// third-moment tensor; the rating-weighted cross moment sum a x y^T pairs the
// columns, since its population value is sum_i c_i u_i v_i^T with c_i > 0.
template <class Scalar>
FactorPair<Scalar> tensor_initialize_pair(const FeatureSet<Scalar>& fs,
                                          const ObservationSet<Scalar>& obs, Index k,
                                          ActivationKind kind, RngSeed seed,
                                          const PowerIterationOptions& opt = {}) {
  if (kind != ActivationKind::Sigmoid)
    throw InvalidArgument("tensor_initialize_pair: only sigmoid is supported");
  ObservationSet<Scalar> centered = detail::centered_ratings(obs);
  Mat<Scalar> cross = detail::cross_moment(fs, centered);
  Eigen::JacobiSVD<Mat<Scalar>> svd(cross, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.singularValues()(k - 1) <= Scalar(1e-12) * svd.singularValues()(0))
    throw DegenerateSpectrum("tensor_initialize_pair: cross moment has rank < k");

  const Mat<Scalar> Pu = svd.matrixU().leftCols(k);
  const Mat<Scalar> Pv = svd.matrixV().leftCols(k);
  InitEstimate<Scalar> eu = detail::initialize_side(fs, centered, Pu, k, seed.substream(1), opt);
  FeatureSet<Scalar> swapped{fs.Y, fs.X};
  ObservationSet<Scalar> tobs;
  tobs.reserve(centered.size());
  for (const auto& o : centered) tobs.push_back({o.col, o.row, o.value});
  InitEstimate<Scalar> ev = detail::initialize_side(swapped, tobs, Pv, k, seed.substream(2), opt);

  Mat<Scalar> S = eu.directions.transpose() * cross * ev.directions;  // k x k
  std::vector<Index> match(k, -1);
  std::vector<bool> used(k, false);
  for (Index step = 0; step < k; ++step) {
    Index bi = -1, bj = -1;
    Scalar best = -1;
    for (Index i = 0; i < k; ++i) {
      if (match[i] >= 0) continue;
      for (Index j = 0; j < k; ++j) {
        if (used[j]) continue;
        if (std::abs(S(i, j)) > best) {
          best = std::abs(S(i, j));
          bi = i;
          bj = j;
        }
      }
    }
    match[bi] = bj;
    used[bj] = true;
  }
  FactorPair<Scalar> fp;
  fp.U = eu.factor;
  fp.V.resize(fs.d2(), k);
  for (Index i = 0; i < k; ++i) fp.V.col(i) = ev.factor.col(match[i]);
  fp.activation = kind;
  return fp;
}

}  // namespace nimc
