#pragma once

// Test-only oracles, all deliberately independent of the library's own
// computation paths: scalar loops instead of matrix expressions, finite
// differences instead of analytic derivatives.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "nimc/activation.hpp"
#include "nimc/model.hpp"
#include "nimc/types.hpp"

namespace oracle {

using nimc::ActivationKind;
using nimc::FactorPaird;
using nimc::FeatureSetd;
using nimc::Index;
using nimc::Matd;
using nimc::ObservationSetd;
using nimc::Vecd;

// Plain scalar-loop prediction.
inline double predict(const FactorPaird& fp, const Vecd& x, const Vecd& y) {
  double acc = 0;
  for (Index i = 0; i < fp.k(); ++i) {
    double zu = 0, zv = 0;
    for (Index r = 0; r < fp.d1(); ++r) zu += fp.U(r, i) * x[r];
    for (Index r = 0; r < fp.d2(); ++r) zv += fp.V(r, i) * y[r];
    acc += nimc::phi(fp.activation, zu) * nimc::phi(fp.activation, zv);
  }
  return acc;
}

inline double loss(const FactorPaird& fp, const FeatureSetd& fs, const ObservationSetd& obs) {
  double acc = 0;
  for (const auto& o : obs) {
    const double r =
        predict(fp, fs.X.row(o.row).transpose(), fs.Y.row(o.col).transpose()) - o.value;
    acc += r * r;
  }
  return acc / (2.0 * double(obs.size()));
}

// Central finite differences of an arbitrary scalar function of (U, V).
template <class F>
std::pair<Matd, Matd> fd_gradient(const FactorPaird& fp, F&& f, double h = 1e-6) {
  FactorPaird p = fp;
  Matd gU(fp.d1(), fp.k()), gV(fp.d2(), fp.k());
  for (Index c = 0; c < fp.k(); ++c)
    for (Index r = 0; r < fp.d1(); ++r) {
      const double keep = p.U(r, c);
      p.U(r, c) = keep + h;
      const double up = f(p);
      p.U(r, c) = keep - h;
      const double dn = f(p);
      p.U(r, c) = keep;
      gU(r, c) = (up - dn) / (2 * h);
    }
  for (Index c = 0; c < fp.k(); ++c)
    for (Index r = 0; r < fp.d2(); ++r) {
      const double keep = p.V(r, c);
      p.V(r, c) = keep + h;
      const double up = f(p);
      p.V(r, c) = keep - h;
      const double dn = f(p);
      p.V(r, c) = keep;
      gV(r, c) = (up - dn) / (2 * h);
    }
  return {gU, gV};
}

// Flat (u_1..u_k, v_1..v_k) coordinate access matching the Hessian layout.
inline double* flat_coord(FactorPaird& fp, Index idx) {
  const Index d1 = fp.d1(), d2 = fp.d2(), k = fp.k();
  if (idx < k * d1) return &fp.U(idx % d1, idx / d1);
  idx -= k * d1;
  return &fp.V(idx % d2, idx / d2);
}

template <class F>
Matd fd_hessian(const FactorPaird& fp, F&& f, double h = 1e-4) {
  const Index D = fp.k() * (fp.d1() + fp.d2());
  Matd H(D, D);
  FactorPaird p = fp;
  for (Index a = 0; a < D; ++a)
    for (Index b = a; b < D; ++b) {
      double* pa = flat_coord(p, a);
      double* pb = flat_coord(p, b);
      const double ka = *pa, kb = *pb;
      auto eval = [&](double da, double db) {
        *pa = ka + da;
        *pb += db;  // works for a == b as well
        const double v = f(p);
        *pa = ka;
        *pb = kb;
        return v;
      };
      const double v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4 * h * h);
      H(a, b) = v;
      H(b, a) = v;
    }
  return H;
}

// Smallest activation-argument magnitude over the observed cells; used to
// keep ReLU finite differences away from kinks.
inline double min_arg_magnitude(const FactorPaird& fp, const FeatureSetd& fs,
                                const ObservationSetd& obs) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& o : obs) {
    Vecd zu = fp.U.transpose() * fs.X.row(o.row).transpose();
    Vecd zv = fp.V.transpose() * fs.Y.row(o.col).transpose();
    m = std::min({m, zu.cwiseAbs().minCoeff(), zv.cwiseAbs().minCoeff()});
  }
  return m;
}

// Spearman rank correlation; average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (double(i) + double(j)) / 2.0 + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0 || db == 0) return 0;
  return num / std::sqrt(da * db);
}

}  // namespace oracle
