#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "nimc/data.hpp"
#include "nimc/model.hpp"
#include "nimc/optimizer.hpp"
#include "nimc/parallel.hpp"
#include "nimc/rng.hpp"
#include "nimc/types.hpp"

namespace nimc {

// ---------------------------------------------------------------------------
// Synthetic recovery grid
// ---------------------------------------------------------------------------

struct RecoveryGridResult {
  std::vector<Index> n_values;
  std::vector<Index> m_values;
  Matd success_rate;  // |n_values| x |m_values|, fraction of successful trials
  int trials_per_cell = 0;
};

inline constexpr double kRecoverySuccessThreshold = 1e-3;

// Per trial: fresh sigma_k-normalized truth, fresh Gaussian features, m
// observations, gradient descent from a random N(0, 1/d) initialization.
// A trial succeeds when the relative test error reaches 1e-3.
inline RecoveryGridResult recovery_grid(ActivationKind kind, Index d, Index k,
                                        const std::vector<Index>& n_values,
                                        const std::vector<Index>& m_values, int trials,
                                        const TrainConfig& base_cfg, RngSeed seed) {
  if (kind == ActivationKind::Linear)
    throw InvalidArgument("recovery_grid: linear activation is not trainable");
  if (trials < 1) throw InvalidArgument("recovery_grid: trials must be >= 1");
  if (n_values.empty() || m_values.empty())
    throw InvalidArgument("recovery_grid: empty grid axes");
  for (Index n : n_values)
    if (n < 1) throw InvalidArgument("recovery_grid: n values must be >= 1");
  for (Index m : m_values)
    if (m < 1) throw InvalidArgument("recovery_grid: m values must be >= 1");

  RecoveryGridResult out;
  out.n_values = n_values;
  out.m_values = m_values;
  out.trials_per_cell = trials;
  const Index N = static_cast<Index>(n_values.size());
  const Index M = static_cast<Index>(m_values.size());
  out.success_rate.setZero(N, M);

  std::vector<int> success(static_cast<std::size_t>(N * M * trials), 0);
  parallel_for(N * M * trials, [&](std::ptrdiff_t job) {
    const Index t = static_cast<Index>(job % trials);
    const Index cell = static_cast<Index>(job / trials);
    const Index j = cell % M;
    const Index i = cell / M;
    RngSeed sub = seed.substream(static_cast<std::uint64_t>(job) + 1);
    try {
      FactorPaird truth = make_truth<double>(d, d, k, kind, sub.substream(0));
      FeatureSetd fs =
          gen_gaussian_features<double>(n_values[i], n_values[i], d, d, sub.substream(1));
      ObservationSetd obs = sample_observations(fs, truth, m_values[j], sub.substream(2));
      FactorPaird fp0 = random_init<double>(d, d, k, kind, sub.substream(3));
      TrainConfig cfg = base_cfg;
      cfg.seed = sub.substream(4);
      cfg.tolerance = kRecoverySuccessThreshold;
      TrainResult<double> res = train(fp0, &truth, fs, obs, cfg);
      for (const auto& rec : res.trace.records)
        if (rec.test_error && *rec.test_error <= kRecoverySuccessThreshold) {
          success[job] = 1;
          break;
        }
    } catch (const NumericError&) {
      // divergent trial counts as a failure
    }
  });
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < M; ++j) {
      int s = 0;
      for (int t = 0; t < trials; ++t) s += success[(i * M + j) * trials + t];
      out.success_rate(i, j) = double(s) / double(trials);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Pair-counting clustering error
// ---------------------------------------------------------------------------

// (2 / (n(n-1))) * (pairs together in pi_star but split by pi
//                   + pairs split by pi_star but together in pi).
// Computed from the contingency table; invariant under relabeling.
inline double clustering_error(const std::vector<int>& pi_star, const std::vector<int>& pi) {
  if (pi_star.size() != pi.size()) throw InvalidArgument("clustering_error: length mismatch");
  const std::size_t n = pi_star.size();
  if (n < 2) throw InvalidArgument("clustering_error: need at least 2 points");
  auto compress = [](const std::vector<int>& v) {
    std::vector<int> ids = v;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::vector<int> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      out[i] = int(std::lower_bound(ids.begin(), ids.end(), v[i]) - ids.begin());
    return std::make_pair(out, int(ids.size()));
  };
  auto [a, ca] = compress(pi_star);
  auto [b, cb] = compress(pi);
  Matd table = Matd::Zero(ca, cb);
  for (std::size_t i = 0; i < n; ++i) table(a[i], b[i]) += 1;
  auto choose2 = [](double m) { return m * (m - 1) / 2; };
  double same_both = 0;
  for (Index i = 0; i < table.rows(); ++i)
    for (Index j = 0; j < table.cols(); ++j) same_both += choose2(table(i, j));
  double same_star = 0, same_pi = 0;
  for (Index i = 0; i < table.rows(); ++i) same_star += choose2(table.row(i).sum());
  for (Index j = 0; j < table.cols(); ++j) same_pi += choose2(table.col(j).sum());
  const double total = choose2(double(n));
  return ((same_star - same_both) + (same_pi - same_both)) / total;
}

// ---------------------------------------------------------------------------
// Random Fourier features
// ---------------------------------------------------------------------------

// r(x) = (1/sqrt(q)) [sin(Qx); cos(Qx)] with one shared Q; every output row
// has unit norm. E[r(x)^T r(x')] approximates exp(-sigma^2 |x-x'|^2 / 2).
inline Matd rff_transform(const Matd& X, const Matd& Q) {
  const Index q = Q.rows();
  Matd Z = X * Q.transpose();  // n x q
  Matd out(X.rows(), 2 * q);
  out.leftCols(q) = Z.array().sin();
  out.rightCols(q) = Z.array().cos();
  return out / std::sqrt(double(q));
}

inline Matd rff(const Matd& X, Index q, double sigma, RngSeed seed) {
  if (q < 1) throw InvalidArgument("rff: q must be >= 1");
  if (!(sigma > 0)) throw InvalidArgument("rff: sigma must be positive");
  Rng rng(seed);
  Matd Q = sigma * rng.gaussian_matrix<double>(q, X.cols());
  return rff_transform(X, Q);
}

// ---------------------------------------------------------------------------
// k-means (k-means++ seeding, Lloyd refinement, best-of-restarts)
// ---------------------------------------------------------------------------

inline std::vector<int> kmeans(const Matd& points, int k, RngSeed seed, int restarts = 10,
                               int iters = 100) {
  const Index n = points.rows();
  if (k < 1 || n < k) throw InvalidArgument("kmeans: need 1 <= k <= n");
  std::vector<int> best_labels(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Rng rng(seed.substream(r));
    Matd centers(k, points.cols());
    Vecd dist2 = Vecd::Constant(n, std::numeric_limits<double>::infinity());
    centers.row(0) = points.row(static_cast<Index>(rng.below(n)));
    for (int c = 1; c < k; ++c) {
      for (Index i = 0; i < n; ++i)
        dist2[i] = std::min(dist2[i], (points.row(i) - centers.row(c - 1)).squaredNorm());
      const double total = dist2.sum();
      Index pick = 0;
      if (total > 0) {
        double u = rng.uniform() * total, acc = 0;
        for (Index i = 0; i < n; ++i) {
          acc += dist2[i];
          if (acc >= u) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<Index>(rng.below(n));
      }
      centers.row(c) = points.row(pick);
    }
    std::vector<int> labels(n, 0);
    for (int it = 0; it < iters; ++it) {
      bool changed = false;
      for (Index i = 0; i < n; ++i) {
        int arg = 0;
        double best = (points.row(i) - centers.row(0)).squaredNorm();
        for (int c = 1; c < k; ++c) {
          const double d = (points.row(i) - centers.row(c)).squaredNorm();
          if (d < best) {
            best = d;
            arg = c;
          }
        }
        if (labels[i] != arg) {
          labels[i] = arg;
          changed = true;
        }
      }
      Matd sums = Matd::Zero(k, points.cols());
      Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
      for (Index i = 0; i < n; ++i) {
        sums.row(labels[i]) += points.row(i);
        counts[labels[i]] += 1;
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) {
          // reseed an empty cluster at the point farthest from its center
          Index far = 0;
          double fd = -1;
          for (Index i = 0; i < n; ++i) {
            const double d = (points.row(i) - centers.row(labels[i])).squaredNorm();
            if (d > fd) {
              fd = d;
              far = i;
            }
          }
          centers.row(c) = points.row(far);
          changed = true;
        } else {
          centers.row(c) = sums.row(c) / double(counts[c]);
        }
      }
      if (!changed) break;
    }
    double inertia = 0;
    for (Index i = 0; i < n; ++i) inertia += (points.row(i) - centers.row(labels[i])).squaredNorm();
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

// ---------------------------------------------------------------------------
// Semi-supervised clustering pipeline
// ---------------------------------------------------------------------------

struct ClusterTask {
  Matd X;                      // n x d item features
  std::vector<int> labels;     // ground-truth cluster ids
  ObservationSetd omega;       // sampled entries of the similarity matrix
  int k = 0;                   // cluster count

  Index n() const { return X.rows(); }
};

// Similarity ratings come from the label partition: 1 if same cluster else 0.
inline ClusterTask make_cluster_task(Matd X, std::vector<int> labels, Index m, int k,
                                     RngSeed seed) {
  if (static_cast<Index>(labels.size()) != X.rows())
    throw InvalidArgument("make_cluster_task: label count != rows");
  ClusterTask task;
  task.X = std::move(X);
  task.labels = std::move(labels);
  task.k = k;
  Rng rng(seed);
  const Index n = task.X.rows();
  task.omega.reserve(m);
  for (Index t = 0; t < m; ++t) {
    const Index i = static_cast<Index>(rng.below(n));
    const Index j = static_cast<Index>(rng.below(n));
    task.omega.push_back({i, j, task.labels[i] == task.labels[j] ? 1.0 : 0.0});
  }
  return task;
}

struct ClusterResult {
  std::vector<int> labels;
  double error = 0;
  Matd factor;  // trained tied factor U
};

// Trains the model with both factors tied to one shared parameter (the
// gradient is the sum of the two partials), embeds items as the top-k left
// singular vectors of phi(X U), and clusters them with k-means.
inline ClusterResult cluster_pipeline(const ClusterTask& task, const TrainConfig& cfg,
                                      Index k_latent, RngSeed seed) {
  if (task.k < 1) throw InvalidArgument("cluster_pipeline: cluster count must be >= 1");
  const Index n = task.n(), d = task.X.cols();
  FeatureSetd fs{task.X, task.X};
  Rng rng(seed.substream(0));
  Matd U = rng.gaussian_matrix<double>(d, k_latent) / std::sqrt(double(d));
  const ActivationKind kind = ActivationKind::ReLU;

  double eta = cfg.step_size;
  if (eta <= 0) {
    FactorPaird probe{U, U, kind};
    eta = auto_step_size(probe, fs, task.omega);
  }
  for (int it = 0; it < cfg.max_iters; ++it) {
    FactorPaird tied{U, U, kind};
    GradientPair<double> g = gradient(tied, fs, task.omega);
    if (!g.gU.allFinite() || !g.gV.allFinite())
      throw NumericError("cluster_pipeline: non-finite gradient");
    U -= eta * (g.gU + g.gV);
  }

  // Truncated SVD of phi(X U) through the k_latent-sized Gram matrix.
  Matd E = phi_array(kind, (task.X * U).eval());
  Matd G = E.transpose() * E;
  Eigen::SelfAdjointEigenSolver<Matd> es(G);
  const Index kc = std::min<Index>(task.k, k_latent);
  Matd embed(n, kc);
  for (Index c = 0; c < kc; ++c) {
    const Index col = k_latent - 1 - c;  // eigenvalues ascend
    const double ev = std::max(es.eigenvalues()(col), 0.0);
    const double sigma = std::sqrt(ev);
    if (sigma > 1e-300)
      embed.col(c) = E * es.eigenvectors().col(col) / sigma;
    else
      embed.col(c).setZero();
  }

  ClusterResult res;
  res.labels = kmeans(embed, task.k, seed.substream(1));
  res.error = clustering_error(task.labels, res.labels);
  res.factor = std::move(U);
  return res;
}

// Well-separated Gaussian blobs for clustering demos and tests.
inline std::pair<Matd, std::vector<int>> make_blobs(Index n_per_cluster, int k, Index d,
                                                    double separation, RngSeed seed) {
  Rng rng(seed);
  Matd centers = separation * rng.gaussian_matrix<double>(k, d);
  Matd X(n_per_cluster * k, d);
  std::vector<int> labels(n_per_cluster * k);
  for (int c = 0; c < k; ++c)
    for (Index i = 0; i < n_per_cluster; ++i) {
      const Index row = c * n_per_cluster + i;
      X.row(row) = centers.row(c) + rng.gaussian_matrix<double>(1, d);
      labels[row] = c;
    }
  return {std::move(X), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Recommendation / PU evaluation
// ---------------------------------------------------------------------------

template <class Scalar>
double rmse_eval(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs_test,
                 const ObservationSet<Scalar>& obs_test) {
  detail::check_loss_args(fp, fs_test, obs_test);
  double acc = 0;
  for (const auto& o : obs_test) {
    const double r = double(predict(fp, Vec<Scalar>(fs_test.X.row(o.row).transpose()),
                                    Vec<Scalar>(fs_test.Y.row(o.col).transpose())) -
                            o.value);
    acc += r * r;
  }
  return std::sqrt(acc / double(obs_test.size()));
}

struct PuEvalResult {
  std::vector<Index> r_values;
  Vecd cumulative;  // P(top-r of a query column contains a true positive)
  std::vector<std::pair<double, double>> precision_recall;
};

// Score-matrix form: rows are ranked per query column, ties broken by row
// index. Columns without any positive are excluded from the rank curve.
inline PuEvalResult pu_eval_scores(const Matd& scores,
                                   const std::vector<std::pair<Index, Index>>& positives,
                                   const std::vector<Index>& r_values) {
  if (positives.empty()) throw InvalidArgument("pu_eval: no positives given");
  const Index n1 = scores.rows(), n2 = scores.cols();
  std::vector<std::vector<Index>> pos_by_col(n2);
  for (auto [i, j] : positives) {
    if (i < 0 || i >= n1 || j < 0 || j >= n2)
      throw InvalidArgument("pu_eval: positive index out of range");
    pos_by_col[j].push_back(i);
  }

  PuEvalResult out;
  out.r_values = r_values;
  out.cumulative = Vecd::Zero(static_cast<Index>(r_values.size()));
  Index counted_cols = 0;
  std::vector<Index> order(n1);
  for (Index j = 0; j < n2; ++j) {
    if (pos_by_col[j].empty()) continue;
    ++counted_cols;
    std::iota(order.begin(), order.end(), Index(0));
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
      if (scores(a, j) != scores(b, j)) return scores(a, j) > scores(b, j);
      return a < b;
    });
    std::vector<Index> rank(n1);
    for (Index r = 0; r < n1; ++r) rank[order[r]] = r + 1;
    Index best = n1 + 1;
    for (Index i : pos_by_col[j]) best = std::min(best, rank[i]);
    for (std::size_t t = 0; t < r_values.size(); ++t)
      if (best <= r_values[t]) out.cumulative[static_cast<Index>(t)] += 1;
  }
  if (counted_cols > 0) out.cumulative /= double(counted_cols);

  // Global threshold sweep for precision/recall.
  std::vector<std::tuple<double, Index, Index>> cells;
  cells.reserve(static_cast<std::size_t>(n1 * n2));
  for (Index j = 0; j < n2; ++j)
    for (Index i = 0; i < n1; ++i) cells.emplace_back(scores(i, j), i, j);
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<std::vector<bool>> is_pos(n2, std::vector<bool>(n1, false));
  for (auto [i, j] : positives) is_pos[j][i] = true;
  const double total_pos = double(positives.size());
  double tp = 0;
  for (std::size_t t = 0; t < cells.size(); ++t) {
    auto [s, i, j] = cells[t];
    if (is_pos[j][i]) tp += 1;
    const bool boundary = t + 1 == cells.size() || std::get<0>(cells[t + 1]) != s;
    if (boundary)
      out.precision_recall.emplace_back(tp / double(t + 1), tp / total_pos);
  }
  return out;
}

template <class Scalar>
PuEvalResult pu_eval(const FactorPair<Scalar>& fp, const FeatureSet<Scalar>& fs,
                     const std::vector<std::pair<Index, Index>>& positives,
                     const std::vector<Index>& r_values) {
  Matd scores = (phi_array(fp.activation, (fs.X * fp.U).eval()) *
                 phi_array(fp.activation, (fs.Y * fp.V).eval()).transpose())
                    .template cast<double>();
  return pu_eval_scores(scores, positives, r_values);
}

}  // namespace nimc
