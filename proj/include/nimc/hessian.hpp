#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nimc/activation.hpp"
#include "nimc/model.hpp"
#include "nimc/moments.hpp"
#include "nimc/parallel.hpp"
#include "nimc/rng.hpp"
#include "nimc/types.hpp"

namespace nimc {

// Symmetric Hessian over the stacked coordinates (u_1..u_k, v_1..v_k):
// u_i occupies rows [i*d1, (i+1)*d1), v_j rows [k*d1 + j*d2, ...).
template <class Scalar = double>
struct HessianMatrix {
  Mat<Scalar> H;
  ActivationKind activation = ActivationKind::Sigmoid;
  Index d1 = 0, d2 = 0, k = 0;
  std::size_t n_samples = 0;          // |obs| or Monte-Carlo count
  Scalar max_abs_residual = 0;        // 0 when assembled at the ground truth
  std::optional<Mat<Scalar>> entry_se;

  bool at_ground_truth() const { return max_abs_residual == Scalar(0); }

  // Conservative operator-norm bound on the Monte-Carlo error.
  Scalar se_operator_bound() const {
    return entry_se ? entry_se->norm() : Scalar(0);
  }
};

struct SpectrumProbe {
  double lambda_min = 0;
  double lambda_max = 0;
  std::optional<double> theoretical_lower_bound;
};

// lambda(U) = sigma_1^k / prod(sigma_i) and kappa(U) = sigma_1 / sigma_k,
// both >= 1 for any full-column-rank matrix.
struct ConditionReport {
  double lambda_u = 1, lambda_v = 1;
  double kappa_u = 1, kappa_v = 1;
  double lambda_max_pair = 1, kappa_max_pair = 1;
};

template <class Scalar = double>
struct McEstimate {
  Scalar value = 0;
  Scalar se = 0;
};

namespace detail {

// Per-sample score of the squared loss: the stacked first derivative of the
// prediction with respect to (u_1..u_k, v_1..v_k).
template <class Scalar>
void prediction_score(ActivationKind kind, const Mat<Scalar>& U, const Mat<Scalar>& V,
                      const Vec<Scalar>& x, const Vec<Scalar>& y, Vec<Scalar>& zu,
                      Vec<Scalar>& zv, Vec<Scalar>& s) {
  const Index d1 = U.rows(), d2 = V.rows(), k = U.cols();
  zu.noalias() = U.transpose() * x;
  zv.noalias() = V.transpose() * y;
  for (Index i = 0; i < k; ++i) {
    s.segment(i * d1, d1) = (phi_prime(kind, zu[i]) * phi(kind, zv[i])) * x;
    s.segment(k * d1 + i * d2, d2) = (phi_prime(kind, zv[i]) * phi(kind, zu[i])) * y;
  }
}

}  // namespace detail

// Exact Hessian of loss() at fp. All blocks carry the Gauss-Newton outer
// product; the residual-weighted diagonal terms follow the activation: the
// phi'' term exists only for smooth activations, while the cross phi'phi'
// term is part of the almost-everywhere second derivative for ReLU as well.
template <class Scalar>
HessianMatrix<Scalar> assemble_empirical_hessian(const FactorPair<Scalar>& fp,
                                                 const FeatureSet<Scalar>& fs,
                                                 const ObservationSet<Scalar>& obs) {
  if (fp.activation == ActivationKind::Linear)
    throw InvalidArgument("assemble_empirical_hessian: linear activation is unsupported");
  detail::check_loss_args(fp, fs, obs);
  const Index d1 = fp.d1(), d2 = fp.d2(), k = fp.k();
  const Index D = k * (d1 + d2);
  const bool smooth = fp.activation != ActivationKind::ReLU;

  struct Acc {
    Mat<Scalar> H;
    Scalar max_res;
  };
  Acc init{Mat<Scalar>::Zero(D, D), 0};
  Acc acc = chunked_reduce(
      static_cast<std::ptrdiff_t>(obs.size()), init,
      [&](std::ptrdiff_t b, std::ptrdiff_t e, Acc& a) {
        Vec<Scalar> zu(k), zv(k), s(D), terms(k);
        for (std::ptrdiff_t t = b; t < e; ++t) {
          const auto& o = obs[t];
          Vec<Scalar> x = fs.X.row(o.row).transpose();
          Vec<Scalar> y = fs.Y.row(o.col).transpose();
          detail::prediction_score(fp.activation, fp.U, fp.V, x, y, zu, zv, s);
          for (Index i = 0; i < k; ++i)
            terms[i] = phi(fp.activation, zu[i]) * phi(fp.activation, zv[i]);
          const Scalar r = detail::canonical_sum(terms) - o.value;
          a.max_res = std::max(a.max_res, std::abs(r));
          a.H.noalias() += s * s.transpose();
          for (Index i = 0; i < k; ++i) {
            const Scalar du = phi_prime(fp.activation, zu[i]);
            const Scalar dv = phi_prime(fp.activation, zv[i]);
            const Scalar pu = phi(fp.activation, zu[i]);
            const Scalar pv = phi(fp.activation, zv[i]);
            auto uv = a.H.block(i * d1, k * d1 + i * d2, d1, d2);
            uv.noalias() += (r * du * dv) * (x * y.transpose());
            auto vu = a.H.block(k * d1 + i * d2, i * d1, d2, d1);
            vu.noalias() += (r * du * dv) * (y * x.transpose());
            if (smooth) {
              const Scalar ddu = phi_second(fp.activation, zu[i]);
              const Scalar ddv = phi_second(fp.activation, zv[i]);
              auto uu = a.H.block(i * d1, i * d1, d1, d1);
              uu.noalias() += (r * ddu * pv) * (x * x.transpose());
              auto vv = a.H.block(k * d1 + i * d2, k * d1 + i * d2, d2, d2);
              vv.noalias() += (r * ddv * pu) * (y * y.transpose());
            }
          }
        }
      },
      [](Acc& a, const Acc& b) {
        a.H += b.H;
        a.max_res = std::max(a.max_res, b.max_res);
      });

  HessianMatrix<Scalar> out;
  out.H = (acc.H + acc.H.transpose()) / (Scalar(2) * Scalar(obs.size()));
  out.activation = fp.activation;
  out.d1 = d1;
  out.d2 = d2;
  out.k = k;
  out.n_samples = obs.size();
  out.max_abs_residual = acc.max_res;
  return out;
}

namespace detail {

inline std::vector<int> fixed_row_free_indices(Index d1, Index d2, Index k) {
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(k * (d1 - 1 + d2)));
  for (Index i = 0; i < k; ++i)
    for (Index r = 1; r < d1; ++r) keep.push_back(static_cast<int>(i * d1 + r));
  for (Index j = 0; j < k * d2; ++j) keep.push_back(static_cast<int>(k * d1 + j));
  return keep;
}

}  // namespace detail

// Hessian of the fixed-row ReLU objective: the full-parameter Hessian with the
// pinned coordinates (first row of U) removed.
template <class Scalar>
HessianMatrix<Scalar> assemble_relu_fixed_hessian(const ReluFixedRow<Scalar>& rf,
                                                  const FeatureSet<Scalar>& fs,
                                                  const ObservationSet<Scalar>& obs) {
  HessianMatrix<Scalar> full = assemble_empirical_hessian(embed(rf), fs, obs);
  const auto keep = detail::fixed_row_free_indices(full.d1, full.d2, full.k);
  HessianMatrix<Scalar> out = full;
  out.H = full.H(keep, keep).eval();
  return out;
}

namespace detail {

template <class Scalar>
struct McAcc {
  Mat<Scalar> sum;
  Mat<Scalar> sumsq;
};

// Monte-Carlo mean of s s^T over fresh Gaussian pairs, with entrywise
// standard errors. Chunks own disjoint substreams, so results are identical
// for any thread count.
template <class Scalar>
HessianMatrix<Scalar> population_outer_mc(const FactorPair<Scalar>& truth, Index D,
                                          const std::vector<int>* keep, std::size_t n_mc,
                                          RngSeed seed) {
  const Index d1 = truth.d1(), d2 = truth.d2(), k = truth.k();
  const Index Df = keep ? static_cast<Index>(keep->size()) : D;
  McAcc<Scalar> init{Mat<Scalar>::Zero(Df, Df), Mat<Scalar>::Zero(Df, Df)};
  constexpr std::ptrdiff_t kChunk = 2048;
  McAcc<Scalar> acc = chunked_reduce(
      static_cast<std::ptrdiff_t>(n_mc), init,
      [&](std::ptrdiff_t b, std::ptrdiff_t e, McAcc<Scalar>& a) {
        Rng rng(seed.substream(static_cast<std::uint64_t>(b / kChunk)));
        Vec<Scalar> zu(k), zv(k), s(D), sf(Df);
        Mat<Scalar> outer(Df, Df);
        for (std::ptrdiff_t t = b; t < e; ++t) {
          Vec<Scalar> x = rng.gaussian_matrix<Scalar>(d1, 1);
          Vec<Scalar> y = rng.gaussian_matrix<Scalar>(d2, 1);
          prediction_score(truth.activation, truth.U, truth.V, x, y, zu, zv, s);
          if (keep) {
            for (Index i = 0; i < Df; ++i) sf[i] = s[(*keep)[i]];
          } else {
            sf = s;
          }
          outer.noalias() = sf * sf.transpose();
          a.sum += outer;
          a.sumsq += outer.cwiseProduct(outer);
        }
      },
      [](McAcc<Scalar>& a, const McAcc<Scalar>& b) {
        a.sum += b.sum;
        a.sumsq += b.sumsq;
      },
      kChunk);

  const Scalar n = Scalar(n_mc);
  HessianMatrix<Scalar> out;
  out.H = acc.sum / n;
  out.H = ((out.H + out.H.transpose()) / Scalar(2)).eval();
  out.activation = truth.activation;
  out.d1 = d1;
  out.d2 = d2;
  out.k = k;
  out.n_samples = n_mc;
  out.max_abs_residual = 0;
  if (n_mc > 1) {
    Mat<Scalar> var = (acc.sumsq / n - out.H.cwiseProduct(out.H)).cwiseMax(Scalar(0));
    out.entry_se = (var / (n - 1)).cwiseSqrt();
  }
  return out;
}

}  // namespace detail

// Population Hessian at the ground truth, where the residual terms vanish and
// every block is an expectation of score outer products.
template <class Scalar>
HessianMatrix<Scalar> population_hessian_mc(const FactorPair<Scalar>& truth, std::size_t n_mc,
                                            RngSeed seed) {
  if (truth.activation == ActivationKind::Linear)
    throw InvalidArgument("population_hessian_mc: linear activation is unsupported");
  if (n_mc < 1) throw InvalidArgument("population_hessian_mc: n_mc must be >= 1");
  const Index D = truth.k() * (truth.d1() + truth.d2());
  return detail::population_outer_mc(truth, D, nullptr, n_mc, seed);
}

template <class Scalar>
HessianMatrix<Scalar> population_relu_fixed_hessian_mc(const FactorPair<Scalar>& truth,
                                                       std::size_t n_mc, RngSeed seed) {
  if (truth.activation != ActivationKind::ReLU)
    throw InvalidArgument("population_relu_fixed_hessian_mc: ReLU only");
  split_fixed_row(truth);  // validates the pinned row
  const Index D = truth.k() * (truth.d1() + truth.d2());
  const auto keep = detail::fixed_row_free_indices(truth.d1(), truth.d2(), truth.k());
  return detail::population_outer_mc(truth, D, &keep, n_mc, seed);
}

template <class Scalar>
SpectrumProbe spectrum(const HessianMatrix<Scalar>& hm) {
  if (!hm.H.allFinite()) throw NumericError("spectrum: non-finite Hessian entries");
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(hm.H, Eigen::EigenvaluesOnly);
  SpectrumProbe p;
  p.lambda_min = es.eigenvalues()(0);
  p.lambda_max = es.eigenvalues()(hm.H.rows() - 1);
  return p;
}

namespace detail {

inline std::pair<double, double> lambda_kappa(const Matd& M, const char* name) {
  Eigen::JacobiSVD<Matd> svd(M);
  const auto& s = svd.singularValues();
  const Index k = M.cols();
  if (s(k - 1) <= 0 || s(k - 1) < 1e-13 * s(0))
    throw InvalidArgument(std::string("condition_numbers: rank-deficient factor ") + name);
  double log_lambda = 0;
  for (Index i = 0; i < k; ++i) log_lambda += std::log(s(0)) - std::log(s(i));
  return {std::exp(log_lambda), s(0) / s(k - 1)};
}

}  // namespace detail

template <class Scalar>
ConditionReport condition_numbers(const FactorPair<Scalar>& fp) {
  ConditionReport r;
  std::tie(r.lambda_u, r.kappa_u) = detail::lambda_kappa(Matd(fp.U.template cast<double>()), "U");
  std::tie(r.lambda_v, r.kappa_v) = detail::lambda_kappa(Matd(fp.V.template cast<double>()), "V");
  r.lambda_max_pair = std::max(r.lambda_u, r.lambda_v);
  r.kappa_max_pair = std::max(r.kappa_u, r.kappa_v);
  return r;
}

// Closed-form lower bounds on the population Hessian's smallest eigenvalue at
// the ground truth. Sigmoid/tanh: rho / (lambda_U lambda_V max(kappa)), valid
// under the sigma_k = 1 normalization. ReLU (fixed-row objective):
//   (1/200) / (lambda_U lambda_V) * (u0 / ((1+|u^(1)|) max(|U|,|V|)))^2,
// u0 the smallest magnitude in the pinned first row; 1/200 is the explicit
// constant of the underlying bound.
inline constexpr double kReluBoundConstant = 1.0 / 200.0;

template <class Scalar>
double theoretical_lambda_min_bound(const FactorPair<Scalar>& truth, ActivationKind kind) {
  const ConditionReport cr = condition_numbers(truth);
  switch (kind) {
    case ActivationKind::Sigmoid:
    case ActivationKind::Tanh: {
      const double rho = moment_table(kind).rho;
      return rho / (cr.lambda_u * cr.lambda_v * cr.kappa_max_pair);
    }
    case ActivationKind::ReLU: {
      const Vecd first_row = truth.U.row(0).transpose().template cast<double>();
      const double u0 = first_row.cwiseAbs().minCoeff();
      if (u0 == 0)
        throw InvalidArgument("theoretical_lambda_min_bound: zero entry in the first row of U");
      const double norm_u1 = first_row.norm();
      const double op = std::max(truth.U.template cast<double>().operatorNorm(),
                                 truth.V.template cast<double>().operatorNorm());
      const double ratio = u0 / ((1.0 + norm_u1) * op);
      return kReluBoundConstant / (cr.lambda_u * cr.lambda_v) * ratio * ratio;
    }
    case ActivationKind::Linear:
      throw InvalidArgument("theoretical_lambda_min_bound: linear activation has no bound");
  }
  return 0;
}

// Monte-Carlo quadratic form of the population Hessian at the truth along a
// unit direction laid out like HessianMatrix coordinates.
template <class Scalar>
McEstimate<Scalar> min_eig_quadratic_form(const FactorPair<Scalar>& truth,
                                          const Vec<Scalar>& direction, std::size_t n_mc,
                                          RngSeed seed) {
  const Index d1 = truth.d1(), d2 = truth.d2(), k = truth.k();
  const Index D = k * (d1 + d2);
  if (direction.size() != D)
    throw InvalidArgument("min_eig_quadratic_form: direction has wrong size");
  if (std::abs(direction.norm() - Scalar(1)) > Scalar(1e-12))
    throw InvalidArgument("min_eig_quadratic_form: direction must be unit norm");
  struct Acc {
    Scalar sum = 0, sumsq = 0;
  };
  constexpr std::ptrdiff_t kChunk = 4096;
  Acc acc = chunked_reduce(
      static_cast<std::ptrdiff_t>(n_mc), Acc{},
      [&](std::ptrdiff_t b, std::ptrdiff_t e, Acc& a) {
        Rng rng(seed.substream(static_cast<std::uint64_t>(b / kChunk)));
        Vec<Scalar> zu(k), zv(k), s(D);
        for (std::ptrdiff_t t = b; t < e; ++t) {
          Vec<Scalar> x = rng.gaussian_matrix<Scalar>(d1, 1);
          Vec<Scalar> y = rng.gaussian_matrix<Scalar>(d2, 1);
          detail::prediction_score(truth.activation, truth.U, truth.V, x, y, zu, zv, s);
          const Scalar q = s.dot(direction);
          a.sum += q * q;
          a.sumsq += q * q * q * q;
        }
      },
      [](Acc& a, const Acc& b) {
        a.sum += b.sum;
        a.sumsq += b.sumsq;
      },
      kChunk);
  const Scalar n = Scalar(n_mc);
  McEstimate<Scalar> est;
  est.value = acc.sum / n;
  if (n_mc > 1) {
    const Scalar var = std::max(Scalar(0), acc.sumsq / n - est.value * est.value);
    est.se = std::sqrt(var / (n - 1));
  }
  return est;
}

// Unit tangent of the ReLU rescaling curve (U diag(e^{t l}), V diag(e^{-t l}))
// at t = 0: the direction (u_i l_i, -v_i l_i), stacked and normalized.
template <class Scalar>
Vec<Scalar> scaling_tangent(const FactorPair<Scalar>& truth, const Vec<Scalar>& lambda) {
  const Index d1 = truth.d1(), d2 = truth.d2(), k = truth.k();
  if (lambda.size() != k) throw InvalidArgument("scaling_tangent: lambda must have k entries");
  Vec<Scalar> dir(k * (d1 + d2));
  for (Index i = 0; i < k; ++i) {
    dir.segment(i * d1, d1) = lambda[i] * truth.U.col(i);
    dir.segment(k * d1 + i * d2, d2) = -lambda[i] * truth.V.col(i);
  }
  const Scalar nrm = dir.norm();
  if (nrm == 0) throw InvalidArgument("scaling_tangent: zero direction");
  return dir / nrm;
}

}  // namespace nimc
