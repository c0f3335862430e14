#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "nimc/data.hpp"
#include "nimc/hessian.hpp"
#include "nimc/model.hpp"
#include "nimc/rng.hpp"
#include "nimc/types.hpp"

namespace nimc {

enum class ResampleMode { None, FreshPerIter };

struct TrainConfig {
  double step_size = 0;  // <= 0 probes 1/(2 lambda_max) at the start point
  int max_iters = 500;
  ResampleMode resample = ResampleMode::None;
  Index resample_m = 0;     // fresh observations per iteration
  double tolerance = 1e-3;  // stop once relative test error falls below this
  RngSeed seed;
  Index n_test = 200;  // rows of the held-out test features
  int eval_every = 10; // cadence of test-error evaluation
};

struct TraceRecord {
  int iter = 0;
  double loss = 0;
  double grad_norm = 0;
  std::optional<double> param_error;  // |U-U*|_F^2 + |V-V*|_F^2
  std::optional<double> test_error;
  std::uint64_t obs_hash = 0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  double step_size_used = 0;
};

template <class Scalar = double>
struct TrainResult {
  FactorPair<Scalar> fp;
  TrainTrace trace;
};

// Order-independent hash of the observation multiset.
template <class Scalar>
std::uint64_t obs_multiset_hash(const ObservationSet<Scalar>& obs) {
  auto mix = [](std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t acc = 0;
  for (const auto& o : obs) {
    std::uint64_t v;
    static_assert(sizeof(double) == sizeof(std::uint64_t));
    const double d = static_cast<double>(o.value);
    std::memcpy(&v, &d, sizeof(v));
    acc += mix(static_cast<std::uint64_t>(o.row) * 0x9e3779b97f4a7c15ULL +
               static_cast<std::uint64_t>(o.col) + mix(v));
  }
  return acc;
}

template <class Scalar>
FactorPair<Scalar> gd_step(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                           const ObservationSet<Scalar>& obs, double eta) {
  if (!(eta >= 0)) throw InvalidArgument("gd_step: eta must be nonnegative");
  GradientPair<Scalar> g = gradient(fp, fs, obs);
  if (!g.gU.allFinite() || !g.gV.allFinite())
    throw NumericError("gd_step: non-finite gradient (loss " +
                       std::to_string(double(loss(fp, fs, obs).value)) + ")");
  FactorPair<Scalar> out = fp;
  out.U -= Scalar(eta) * g.gU;
  out.V -= Scalar(eta) * g.gV;
  return out;
}

// Spectral-radius estimate by power iteration; used only to pick a step size.
template <class Scalar>
double power_lambda_max(const Mat<Scalar>& H, int iters = 64) {
  Vec<Scalar> v = Vec<Scalar>::Ones(H.rows()).normalized();
  Scalar lam = 0;
  for (int t = 0; t < iters; ++t) {
    Vec<Scalar> w = H * v;
    const Scalar nrm = w.norm();
    if (nrm == Scalar(0)) return 0;
    v = w / nrm;
    lam = nrm;
  }
  return double(lam);
}

template <class Scalar>
double auto_step_size(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                      const ObservationSet<Scalar>& obs) {
  const double lmax = power_lambda_max(assemble_empirical_hessian(fp, fs, obs).H);
  if (!(lmax > 1e-12)) return 1.0;
  return std::min(0.5 / lmax, 1e3);
}

// Two-sided relative test error on explicit test features:
//   |phi(Xt U) phi(Yt V)^T - phi(Xt U*) phi(Yt V*)^T|_F / |truth|_F.
template <class Scalar>
double relative_test_error_on(const FactorPair<Scalar>& fp, const FactorPair<Scalar>& truth,
                              const Mat<Scalar>& Xt, const Mat<Scalar>& Yt) {
  Mat<Scalar> G = phi_array(fp.activation, (Xt * fp.U).eval()) *
                  phi_array(fp.activation, (Yt * fp.V).eval()).transpose();
  Mat<Scalar> Gs = phi_array(truth.activation, (Xt * truth.U).eval()) *
                   phi_array(truth.activation, (Yt * truth.V).eval()).transpose();
  const Scalar denom = Gs.norm();
  if (denom == Scalar(0))
    throw NumericError("relative_test_error: ground-truth prediction matrix is zero");
  return double((G - Gs).norm() / denom);
}

template <class Scalar>
double relative_test_error(const FactorPair<Scalar>& fp, const FactorPair<Scalar>& truth,
                           Index n_test, RngSeed seed) {
  if (n_test < 1) throw InvalidArgument("relative_test_error: n_test must be >= 1");
  Rng rng(seed);
  Mat<Scalar> Xt = rng.gaussian_matrix<Scalar>(n_test, fp.d1());
  Mat<Scalar> Yt = rng.gaussian_matrix<Scalar>(n_test, fp.d2());
  return relative_test_error_on(fp, truth, Xt, Yt);
}

// One-factor form for weight-tied models: |phi(Xt U) phi(Xt U)^T - .|_F / |.|_F.
template <class Scalar>
double relative_test_error_tied(const Mat<Scalar>& U, const Mat<Scalar>& U_truth,
                                ActivationKind kind, Index n_test, RngSeed seed) {
  Rng rng(seed);
  Mat<Scalar> Xt = rng.gaussian_matrix<Scalar>(n_test, U.rows());
  Mat<Scalar> P = phi_array(kind, (Xt * U).eval());
  Mat<Scalar> Ps = phi_array(kind, (Xt * U_truth).eval());
  Mat<Scalar> G = P * P.transpose();
  Mat<Scalar> Gs = Ps * Ps.transpose();
  const Scalar denom = Gs.norm();
  if (denom == Scalar(0)) throw NumericError("relative_test_error_tied: zero truth matrix");
  return double((G - Gs).norm() / denom);
}

// Full-batch gradient descent. With FreshPerIter a new observation multiset is
// drawn each iteration and labeled through the truth (required in that mode).
// The trace records the state before each step plus the final state; test
// error is evaluated on a fixed test draw every eval_every iterations and the
// run stops once it reaches cfg.tolerance.
template <class Scalar>
TrainResult<Scalar> train(const FactorPair<Scalar>& fp0, const FactorPair<Scalar>* truth,
                          const FeatureSet<Scalar>& fs, const ObservationSet<Scalar>& obs,
                          const TrainConfig& cfg) {
  fp0.validate();
  const bool fresh = cfg.resample == ResampleMode::FreshPerIter;
  if (fresh && truth == nullptr)
    throw InvalidArgument("train: fresh resampling requires the ground truth for labels");
  if (fresh && cfg.resample_m < 1)
    throw InvalidArgument("train: fresh resampling requires resample_m >= 1");
  if (!fresh && obs.empty()) throw InvalidArgument("train: empty observation set");

  Mat<Scalar> Xt, Yt;
  if (truth) {
    Rng rng(cfg.seed.substream(0));
    Xt = rng.gaussian_matrix<Scalar>(cfg.n_test, fp0.d1());
    Yt = rng.gaussian_matrix<Scalar>(cfg.n_test, fp0.d2());
  }

  TrainResult<Scalar> res{fp0, {}};
  double eta = cfg.step_size;
  ObservationSet<Scalar> cur = fresh ? sample_observations(fs, *truth, cfg.resample_m,
                                                           cfg.seed.substream(1))
                                     : obs;
  if (eta <= 0) eta = auto_step_size(res.fp, fs, cur);
  res.trace.step_size_used = eta;

  auto record = [&](int iter, const ObservationSet<Scalar>& o, bool eval_test) {
    TraceRecord rec;
    rec.iter = iter;
    rec.loss = double(loss(res.fp, fs, o).value);
    GradientPair<Scalar> g = gradient(res.fp, fs, o);
    rec.grad_norm = std::sqrt(double(g.gU.squaredNorm() + g.gV.squaredNorm()));
    if (truth) {
      rec.param_error =
          double((res.fp.U - truth->U).squaredNorm() + (res.fp.V - truth->V).squaredNorm());
      if (eval_test) rec.test_error = relative_test_error_on(res.fp, *truth, Xt, Yt);
    }
    if (fresh) rec.obs_hash = obs_multiset_hash(o);
    res.trace.records.push_back(rec);
    return rec;
  };

  for (int c = 0; c < cfg.max_iters; ++c) {
    if (fresh && c > 0)
      cur = sample_observations(fs, *truth, cfg.resample_m, cfg.seed.substream(c + 1));
    const bool eval_test = truth && (c % cfg.eval_every == 0);
    TraceRecord rec = record(c, cur, eval_test);
    if (rec.test_error && *rec.test_error <= cfg.tolerance) return res;
    res.fp = gd_step(res.fp, fs, cur, eta);
  }
  record(cfg.max_iters, cur, truth != nullptr);
  return res;
}

// Empirical per-step contraction factor: least-squares slope of
// log(param_error) against the iteration counter, exponentiated.
inline double contraction_rate(const TrainTrace& trace) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : trace.records)
    if (r.param_error && *r.param_error > 0)
      pts.emplace_back(double(r.iter), std::log(*r.param_error));
  if (pts.size() < 5)
    throw InvalidArgument("contraction_rate: need at least 5 records with positive error");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = double(pts.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return std::exp(slope);
}

}  // namespace nimc
