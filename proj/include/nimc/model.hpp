#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <unordered_set>

#include "nimc/activation.hpp"
#include "nimc/parallel.hpp"
#include "nimc/types.hpp"

namespace nimc {

enum class LossNorm { MeanHalf, SumHalf };

template <class Scalar = double>
struct LossValue {
  Scalar value = 0;
  LossNorm normalization = LossNorm::MeanHalf;
};

template <class Scalar = double>
struct GradientPair {
  Mat<Scalar> gU;
  Mat<Scalar> gV;
};

namespace detail {

// Accumulates in descending order, so the result does not depend on the
// column order of the factors. Destroys `terms`.
template <class Scalar>
Scalar canonical_sum(Vec<Scalar>& terms) {
  std::sort(terms.data(), terms.data() + terms.size(), std::greater<Scalar>());
  Scalar acc = 0;
  for (Index i = 0; i < terms.size(); ++i) acc += terms[i];
  return acc;
}

template <class Scalar>
Scalar predict_pre(ActivationKind kind, const Vec<Scalar>& zu, const Vec<Scalar>& zv,
                   Vec<Scalar>& terms) {
  for (Index i = 0; i < zu.size(); ++i) terms[i] = phi(kind, zu[i]) * phi(kind, zv[i]);
  return canonical_sum(terms);
}

}  // namespace detail

template <class Scalar>
Scalar predict(const FactorPair<Scalar>& fp, const Vec<Scalar>& x, const Vec<Scalar>& y) {
  if (x.size() != fp.d1() || y.size() != fp.d2())
    throw InvalidArgument("predict: feature dimension mismatch");
  Vec<Scalar> zu = fp.U.transpose() * x;
  Vec<Scalar> zv = fp.V.transpose() * y;
  Vec<Scalar> terms(fp.k());
  return detail::predict_pre(fp.activation, zu, zv, terms);
}

// h_{x,y}: prediction gap between the current parameters and the truth.
template <class Scalar>
Scalar residual_h(const FactorPair<Scalar>& fp, const FactorPair<Scalar>& truth,
                  const Vec<Scalar>& x, const Vec<Scalar>& y) {
  return predict(fp, x, y) - predict(truth, x, y);
}

namespace detail {

template <class Scalar>
void check_loss_args(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                     const ObservationSet<Scalar>& obs) {
  if (fp.d1() != fs.d1() || fp.d2() != fs.d2())
    throw InvalidArgument("loss: factor/feature dimension mismatch");
  if (obs.empty()) throw InvalidArgument("loss: empty observation set");
  check_observations(obs, fs.n1(), fs.n2());
}

}  // namespace detail

// (1 / (2|obs|)) * sum of squared residuals; duplicates count with multiplicity.
template <class Scalar>
LossValue<Scalar> loss(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                       const ObservationSet<Scalar>& obs) {
  detail::check_loss_args(fp, fs, obs);
  const Index k = fp.k();
  const Scalar total = chunked_reduce(
      static_cast<std::ptrdiff_t>(obs.size()), Scalar(0),
      [&](std::ptrdiff_t b, std::ptrdiff_t e, Scalar& acc) {
        Vec<Scalar> terms(k);
        for (std::ptrdiff_t t = b; t < e; ++t) {
          const auto& o = obs[t];
          Vec<Scalar> zu = fp.U.transpose() * fs.X.row(o.row).transpose();
          Vec<Scalar> zv = fp.V.transpose() * fs.Y.row(o.col).transpose();
          const Scalar r = detail::predict_pre(fp.activation, zu, zv, terms) - o.value;
          acc += r * r;
        }
      },
      [](Scalar& a, const Scalar& b) { a += b; });
  return {total / (Scalar(2) * Scalar(obs.size())), LossNorm::MeanHalf};
}

// Analytic gradient of loss():
//   d/du_i = (1/|obs|) sum r * phi'(u_i^T x) phi(v_i^T y) x, symmetric in v.
template <class Scalar>
GradientPair<Scalar> gradient(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                              const ObservationSet<Scalar>& obs) {
  detail::check_loss_args(fp, fs, obs);
  const Index k = fp.k();
  GradientPair<Scalar> zero{Mat<Scalar>::Zero(fp.d1(), k), Mat<Scalar>::Zero(fp.d2(), k)};
  GradientPair<Scalar> g = chunked_reduce(
      static_cast<std::ptrdiff_t>(obs.size()), zero,
      [&](std::ptrdiff_t b, std::ptrdiff_t e, GradientPair<Scalar>& acc) {
        Vec<Scalar> terms(k), pu(k), pv(k), du(k), dv(k);
        for (std::ptrdiff_t t = b; t < e; ++t) {
          const auto& o = obs[t];
          Vec<Scalar> x = fs.X.row(o.row).transpose();
          Vec<Scalar> y = fs.Y.row(o.col).transpose();
          Vec<Scalar> zu = fp.U.transpose() * x;
          Vec<Scalar> zv = fp.V.transpose() * y;
          for (Index i = 0; i < k; ++i) {
            pu[i] = phi(fp.activation, zu[i]);
            pv[i] = phi(fp.activation, zv[i]);
            du[i] = phi_prime(fp.activation, zu[i]);
            dv[i] = phi_prime(fp.activation, zv[i]);
            terms[i] = pu[i] * pv[i];
          }
          const Scalar r = detail::canonical_sum(terms) - o.value;
          acc.gU.noalias() += x * (r * du.cwiseProduct(pv)).transpose();
          acc.gV.noalias() += y * (r * dv.cwiseProduct(pu)).transpose();
        }
      },
      [](GradientPair<Scalar>& a, const GradientPair<Scalar>& b) {
        a.gU += b.gU;
        a.gV += b.gV;
      });
  g.gU /= Scalar(obs.size());
  g.gV /= Scalar(obs.size());
  return g;
}

// ---------------------------------------------------------------------------
// Positive-unlabeled objective: observed cells carry their labels, every
// unobserved cell of the full grid is pulled toward zero with weight beta.
// No 1/|obs| normalization here; the objective is
//   (1/2) (sum_obs (pred - a)^2 + beta * sum_complement pred^2).
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kDefaultCellBudget = 10'000'000;

namespace detail {

template <class Scalar>
std::vector<bool> observed_mask(const FeatureSet<Scalar>& fs, const ObservationSet<Scalar>& obs,
                                std::uint64_t cell_budget) {
  const std::uint64_t cells =
      static_cast<std::uint64_t>(fs.n1()) * static_cast<std::uint64_t>(fs.n2());
  if (cells > cell_budget)
    throw ResourceLimit("pu objective: grid exceeds the cell budget of " +
                        std::to_string(cell_budget) + " cells");
  std::vector<bool> seen(cells, false);
  for (const auto& o : obs) seen[static_cast<std::uint64_t>(o.row) * fs.n2() + o.col] = true;
  return seen;
}

}  // namespace detail

template <class Scalar>
LossValue<Scalar> loss_pu(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                          const ObservationSet<Scalar>& obs, Scalar beta,
                          std::uint64_t cell_budget = kDefaultCellBudget) {
  detail::check_loss_args(fp, fs, obs);
  if (beta < 0) throw InvalidArgument("loss_pu: beta must be nonnegative");
  const auto seen = detail::observed_mask(fs, obs, cell_budget);
  const Index k = fp.k();
  Scalar total = 0;
  {
    Vec<Scalar> terms(k);
    for (const auto& o : obs) {
      Vec<Scalar> zu = fp.U.transpose() * fs.X.row(o.row).transpose();
      Vec<Scalar> zv = fp.V.transpose() * fs.Y.row(o.col).transpose();
      const Scalar r = detail::predict_pre(fp.activation, zu, zv, terms) - o.value;
      total += r * r;
    }
  }
  if (beta > 0) {
    // Activations of every row/column are reused across the grid sweep.
    Mat<Scalar> PU = phi_array(fp.activation, (fs.X * fp.U).eval());
    Mat<Scalar> PV = phi_array(fp.activation, (fs.Y * fp.V).eval());
    Vec<Scalar> terms(k);
    for (Index i = 0; i < fs.n1(); ++i)
      for (Index j = 0; j < fs.n2(); ++j) {
        if (seen[static_cast<std::uint64_t>(i) * fs.n2() + j]) continue;
        terms = PU.row(i).cwiseProduct(PV.row(j)).transpose();
        const Scalar p = detail::canonical_sum(terms);
        total += beta * p * p;
      }
  }
  return {total / Scalar(2), LossNorm::SumHalf};
}

template <class Scalar>
GradientPair<Scalar> gradient_pu(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                                 const ObservationSet<Scalar>& obs, Scalar beta,
                                 std::uint64_t cell_budget = kDefaultCellBudget) {
  detail::check_loss_args(fp, fs, obs);
  if (beta < 0) throw InvalidArgument("gradient_pu: beta must be nonnegative");
  const auto seen = detail::observed_mask(fs, obs, cell_budget);
  const Index k = fp.k();
  GradientPair<Scalar> g{Mat<Scalar>::Zero(fp.d1(), k), Mat<Scalar>::Zero(fp.d2(), k)};
  Vec<Scalar> terms(k), pu(k), pv(k), du(k), dv(k);
  auto add_cell = [&](Index i, Index j, Scalar target, Scalar weight) {
    Vec<Scalar> x = fs.X.row(i).transpose();
    Vec<Scalar> y = fs.Y.row(j).transpose();
    Vec<Scalar> zu = fp.U.transpose() * x;
    Vec<Scalar> zv = fp.V.transpose() * y;
    for (Index c = 0; c < k; ++c) {
      pu[c] = phi(fp.activation, zu[c]);
      pv[c] = phi(fp.activation, zv[c]);
      du[c] = phi_prime(fp.activation, zu[c]);
      dv[c] = phi_prime(fp.activation, zv[c]);
      terms[c] = pu[c] * pv[c];
    }
    const Scalar r = detail::canonical_sum(terms) - target;
    g.gU.noalias() += x * (weight * r * du.cwiseProduct(pv)).transpose();
    g.gV.noalias() += y * (weight * r * dv.cwiseProduct(pu)).transpose();
  };
  for (const auto& o : obs) add_cell(o.row, o.col, o.value, Scalar(1));
  if (beta > 0) {
    for (Index i = 0; i < fs.n1(); ++i)
      for (Index j = 0; j < fs.n2(); ++j) {
        if (seen[static_cast<std::uint64_t>(i) * fs.n2() + j]) continue;
        add_cell(i, j, Scalar(0), beta);
      }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU with the first row of U pinned. Removes the diagonal-rescaling
// degeneracy (UD, VD^{-1}); the free parameters are W ((d1-1) x k) and V.
// ---------------------------------------------------------------------------

template <class Scalar = double>
struct ReluFixedRow {
  Mat<Scalar> W;          // rows 2..d1 of U
  Vec<Scalar> fixed_row;  // pinned first row; every entry must be nonzero
  Mat<Scalar> V;

  Index d1() const { return W.rows() + 1; }
  Index d2() const { return V.rows(); }
  Index k() const { return W.cols(); }

  void validate() const {
    if (W.cols() != V.cols() || fixed_row.size() != W.cols())
      throw InvalidArgument("ReluFixedRow: inconsistent column counts");
    for (Index i = 0; i < fixed_row.size(); ++i)
      if (fixed_row[i] == Scalar(0))
        throw InvalidArgument("ReluFixedRow: fixed row entries must be nonzero");
  }
};

template <class Scalar>
FactorPair<Scalar> embed(const ReluFixedRow<Scalar>& rf) {
  rf.validate();
  FactorPair<Scalar> fp;
  fp.U.resize(rf.d1(), rf.k());
  fp.U.row(0) = rf.fixed_row.transpose();
  fp.U.bottomRows(rf.W.rows()) = rf.W;
  fp.V = rf.V;
  fp.activation = ActivationKind::ReLU;
  return fp;
}

template <class Scalar>
ReluFixedRow<Scalar> split_fixed_row(const FactorPair<Scalar>& fp) {
  ReluFixedRow<Scalar> rf;
  rf.fixed_row = fp.U.row(0).transpose();
  rf.W = fp.U.bottomRows(fp.d1() - 1);
  rf.V = fp.V;
  rf.validate();
  return rf;
}

template <class Scalar>
LossValue<Scalar> loss_relu_fixed(const ReluFixedRow<Scalar>& rf, const FeatureSet<Scalar>& fs,
                                  const ObservationSet<Scalar>& obs) {
  return loss(embed(rf), fs, obs);
}

// Gradient over the free parameters only; the pinned row contributes none.
template <class Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> gradient_relu_fixed(const ReluFixedRow<Scalar>& rf,
                                                        const FeatureSet<Scalar>& fs,
                                                        const ObservationSet<Scalar>& obs) {
  GradientPair<Scalar> g = gradient(embed(rf), fs, obs);
  return {g.gU.bottomRows(rf.W.rows()).eval(), std::move(g.gV)};
}

}  // namespace nimc
