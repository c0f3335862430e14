#include <doctest.h>

#include <cmath>

#include "nimc/data.hpp"
#include "nimc/tensor_init.hpp"
#include "test_util.hpp"

using namespace nimc;

namespace {

MomentTensor3<double> synthetic_tensor(const Matd& dirs, const Vecd& weights) {
  MomentTensor3<double> mt;
  mt.T = SymTensor3<double>(dirs.rows());
  for (Index i = 0; i < dirs.cols(); ++i) mt.T.add_rank_one(weights[i], Vecd(dirs.col(i)));
  mt.n_used = 1;
  return mt;
}

Matd orthonormal_columns(Index d, Index k, RngSeed seed) {
  Rng rng(seed);
  Matd g = rng.gaussian_matrix<double>(d, k);
  Eigen::HouseholderQR<Matd> qr(g);
  return qr.householderQ() * Matd::Identity(d, k);
}

}  // namespace

TEST_CASE("empirical_m3: zero ratings give the zero tensor") {
  auto fs = gen_gaussian_features<double>(4, 4, 3, 3, {100, 0});
  ObservationSetd obs{{0, 0, 0.0}, {1, 2, 0.0}, {3, 3, 0.0}};
  auto mt = empirical_m3(fs, obs);
  CHECK(mt.T.norm() == 0.0);
}

TEST_CASE("empirical_m3: hand-expanded single observation in d = 2") {
  // a = 1, x = (1, 0): T = x^{x3} - x (~x) I.
  FeatureSetd fs;
  fs.X.resize(1, 2);
  fs.X << 1.0, 0.0;
  fs.Y = Matd::Ones(1, 2);
  ObservationSetd obs{{0, 0, 1.0}};
  auto mt = empirical_m3(fs, obs);
  CHECK(mt.T(0, 0, 0) == doctest::Approx(-2.0).epsilon(1e-14));
  CHECK(mt.T(0, 1, 1) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(mt.T(1, 1, 1) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(mt.T(1, 0, 1) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("empirical_m3: permutation symmetry and linearity in ratings") {
  auto fs = gen_gaussian_features<double>(6, 6, 4, 4, {101, 0});
  auto truth = make_truth<double>(4, 4, 2, ActivationKind::Sigmoid, {102, 0});
  auto obs = sample_observations(fs, truth, 200, {103, 0});
  auto mt = empirical_m3(fs, obs);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j)
      for (Index l = 0; l < 4; ++l) {
        CHECK(mt.T(i, j, l) == mt.T(j, i, l));
        CHECK(mt.T(i, j, l) == mt.T(l, j, i));
      }
  ObservationSetd scaled = obs;
  for (auto& o : scaled) o.value *= -2.5;
  auto mt2 = empirical_m3(fs, scaled);
  CHECK((mt2.T.data() + 2.5 * mt.T.data()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("empirical_m3: converges to the population rank-k form") {
  // alpha_i = gamma_0(|v_i|) (gamma_3 - 3 gamma_1)(|u_i|) on unit directions.
  // The raw tensor estimate is very noisy (the score has heavy tails and the
  // rank-one weights are small), so the check runs on a large fresh sample.
  const Index d = 4, k = 2, m = 500000;
  auto truth = make_truth<double>(d, d, k, ActivationKind::Sigmoid, {104, 0}, 4.0);
  auto fs = gen_gaussian_features<double>(m, m, d, d, {105, 0});
  auto obs = sample_observations(fs, truth, m, {106, 0});
  auto mt = empirical_m3(fs, obs);

  SymTensor3<double> pop(d);
  for (Index i = 0; i < k; ++i) {
    const double nu = truth.U.col(i).norm();
    const double nv = truth.V.col(i).norm();
    const double alpha = gamma_sigma(ActivationKind::Sigmoid, 0, nv) *
                         (gamma_sigma(ActivationKind::Sigmoid, 3, nu) -
                          3 * gamma_sigma(ActivationKind::Sigmoid, 1, nu));
    pop.add_rank_one(alpha, Vecd(truth.U.col(i) / nu));
  }
  const double rel = (mt.T.data() - pop.data()).norm() / pop.data().norm();
  CHECK(rel <= 0.1);  // measured 0.065 at this instance
}

TEST_CASE("decompose_rank_k: exact recovery of an orthonormal pair") {
  Matd W = orthonormal_columns(6, 2, {107, 0});
  Vecd alpha(2);
  alpha << 1.0, 0.5;
  auto mt = synthetic_tensor(W, alpha);
  auto tc = decompose_rank_k(mt, 2, {108, 0});
  auto [match, cos] = greedy_match_columns(W, tc.directions);
  CHECK(cos.minCoeff() >= 1.0 - 1e-8);
  for (Index i = 0; i < 2; ++i)
    CHECK(std::abs(tc.weights[match[i]] - alpha[i]) <= 1e-8);
  CHECK(tc.weights.minCoeff() >= 0.0);
}

TEST_CASE("decompose_rank_k: robust to 1% Frobenius noise") {
  Matd W = orthonormal_columns(8, 3, {109, 0});
  Vecd alpha(3);
  alpha << 1.0, 0.7, 0.4;
  auto mt = synthetic_tensor(W, alpha);
  Rng rng({110, 0});
  SymTensor3<double> noise(8);
  for (Index i = 0; i < noise.data().size(); ++i) noise.data()[i] = rng.normal();
  noise.symmetrize();
  noise *= 0.01 * mt.T.norm() / noise.norm();
  mt.T += noise;
  auto tc = decompose_rank_k(mt, 3, {111, 0});
  auto [match, cos] = greedy_match_columns(W, tc.directions);
  CHECK(cos.minCoeff() >= 0.99);
}

TEST_CASE("decompose_rank_k: k = 1 fixed point") {
  Rng rng({112, 0});
  Vecd w = rng.unit_vector<double>(5);
  auto mt = synthetic_tensor(Matd(w), Vecd(Vecd::Ones(1)));
  auto tc = decompose_rank_k(mt, 1, {113, 0});
  CHECK(std::abs(tc.weights[0] - 1.0) <= 1e-10);
  CHECK(std::abs(std::abs(tc.directions.col(0).dot(w)) - 1.0) <= 1e-10);
  // odd order: the sign is pinned, not just the axis
  CHECK(tc.directions.col(0).dot(w) >= 1.0 - 1e-10);
}

TEST_CASE("decompose_rank_k: signed weights fold into directions") {
  Matd W = orthonormal_columns(6, 2, {114, 0});
  Vecd alpha(2);
  alpha << -1.0, -0.5;  // negative weights, as the sigmoid score tensor produces
  auto mt = synthetic_tensor(W, alpha);
  auto tc = decompose_rank_k(mt, 2, {115, 0});
  CHECK(tc.weights.minCoeff() >= 0.0);
  auto [match, cos] = greedy_match_columns(W, tc.directions);
  CHECK(cos.minCoeff() >= 1.0 - 1e-8);
  for (Index i = 0; i < 2; ++i) {
    // recovered direction must be the negated original column
    CHECK(tc.directions.col(match[i]).dot(W.col(i)) <= -(1.0 - 1e-8));
    CHECK(std::abs(tc.weights[match[i]] + alpha[i]) <= 1e-8);
  }
}

TEST_CASE("decompose_rank_k: non-orthogonal components, small residual") {
  Matd D(10, 3);
  Matd Q = orthonormal_columns(10, 3, {117, 0});
  D.col(0) = Q.col(0);
  D.col(1) = (Q.col(1) + 0.4 * Q.col(0)).normalized();
  D.col(2) = (Q.col(2) - 0.35 * Q.col(1)).normalized();
  Vecd alpha(3);
  alpha << 1.2, 0.8, 0.5;
  auto mt = synthetic_tensor(D, alpha);
  auto tc = decompose_rank_k(mt, 3, {118, 0});
  SymTensor3<double> recon(10);
  for (Index i = 0; i < 3; ++i) recon.add_rank_one(tc.weights[i], Vecd(tc.directions.col(i)));
  CHECK((mt.T.data() - recon.data()).norm() / mt.T.data().norm() <= 0.05);
}

TEST_CASE("decompose_rank_k: degenerate whitening spectrum is reported") {
  MomentTensor3<double> mt;
  mt.T = SymTensor3<double>(4);  // zero tensor
  CHECK_THROWS_AS(decompose_rank_k(mt, 2, {119, 0}), DegenerateSpectrum);

  Rng rng({120, 0});
  Vecd w = rng.unit_vector<double>(4);
  auto rank1 = synthetic_tensor(Matd(w), Vecd(Vecd::Ones(1)));
  CHECK_THROWS_AS(decompose_rank_k(rank1, 2, {121, 0}), DegenerateSpectrum);
}

TEST_CASE("invert_alpha_to_norm: round trip through the forward map") {
  auto forward = [](double sigma) {
    return 0.5 * (gamma_sigma(ActivationKind::Sigmoid, 3, sigma) -
                  3 * gamma_sigma(ActivationKind::Sigmoid, 1, sigma));
  };
  for (double sigma : {0.05, 0.3, 1.3, 2.0, 4.9}) {
    const double alpha = forward(sigma);
    const double back = invert_alpha_to_norm(ActivationKind::Sigmoid, alpha, 0.5);
    CHECK(std::abs(back - sigma) <= 1e-6);
  }
}

TEST_CASE("invert_alpha_to_norm: forward map is monotone decreasing through 0") {
  auto forward = [](double sigma) {
    return 0.5 * (gamma_sigma(ActivationKind::Sigmoid, 3, sigma) -
                  3 * gamma_sigma(ActivationKind::Sigmoid, 1, sigma));
  };
  double prev = 0;
  for (double sigma = 1e-3; sigma <= 10.0; sigma *= 1.6) {
    const double a = forward(sigma);
    CHECK(a < prev);
    prev = a;
  }
  // alpha -> 0- maps to sigma -> 0+
  const double tiny = invert_alpha_to_norm(ActivationKind::Sigmoid, forward(1e-2), 0.5);
  CHECK(tiny <= 0.02);
}

TEST_CASE("invert_alpha_to_norm: rejects ReLU and out-of-range alpha") {
  CHECK_THROWS_AS(invert_alpha_to_norm(ActivationKind::ReLU, -0.1, 0.5), InvalidArgument);
  CHECK_THROWS_AS(invert_alpha_to_norm(ActivationKind::Tanh, -0.1, 0.5), InvalidArgument);
  CHECK_THROWS_AS(invert_alpha_to_norm(ActivationKind::Sigmoid, 0.1, 0.5), OutOfRange);
  CHECK_THROWS_AS(invert_alpha_to_norm(ActivationKind::Sigmoid, -10.0, 0.5), OutOfRange);
  try {
    invert_alpha_to_norm(ActivationKind::Sigmoid, 0.1, 0.5);
  } catch (const OutOfRange& e) {
    CHECK(std::string(e.what()).find("range") != std::string::npos);
  }
}

TEST_CASE("tensor_initialize: deterministic and well-formed") {
  const Index d = 6, k = 2;
  auto truth = make_truth<double>(d, d, k, ActivationKind::Sigmoid, {122, 0}, 1.5);
  auto fs = gen_gaussian_features<double>(2000, 2000, d, d, {123, 0});
  auto obs = sample_observations(fs, truth, 100000, {124, 0});
  auto a = tensor_initialize(fs, obs, k, ActivationKind::Sigmoid, {125, 0});
  auto b = tensor_initialize(fs, obs, k, ActivationKind::Sigmoid, {125, 0});
  CHECK(a.factor == b.factor);
  for (Index i = 0; i < k; ++i) {
    CHECK(std::abs(a.directions.col(i).norm() - 1.0) <= 1e-12);
    CHECK(a.norms[i] > 0.0);
    CHECK((a.factor.col(i) - a.norms[i] * a.directions.col(i)).cwiseAbs().maxCoeff() <= 1e-14);
  }
  CHECK_THROWS_AS(tensor_initialize(fs, obs, k, ActivationKind::ReLU, {126, 0}),
                  InvalidArgument);
}

TEST_CASE("tensor_initialize_pair: recovers directions on a clean instance") {
  const Index d = 10, k = 3;
  auto truth = make_truth<double>(d, d, k, ActivationKind::Sigmoid, {127, 0}, 2.0);
  auto fs = gen_gaussian_features<double>(500, 500, d, d, {128, 0});
  auto obs = sample_observations(fs, truth, 100000, {129, 0});
  auto fp0 = tensor_initialize_pair(fs, obs, k, ActivationKind::Sigmoid, {130, 0});

  auto [mu, cu] = greedy_match_columns(truth.U, fp0.U);
  auto [mv, cv] = greedy_match_columns(truth.V, fp0.V);
  CHECK(cu.minCoeff() >= 0.9);
  CHECK(cv.minCoeff() >= 0.9);
  // the pairing must map u_i and v_i through the same permutation
  for (Index i = 0; i < k; ++i) CHECK(mu[i] == mv[i]);
  // signed directions: cosine without absolute value should also be positive
  for (Index i = 0; i < k; ++i) {
    CHECK(truth.U.col(i).normalized().dot(fp0.U.col(mu[i]).normalized()) >= 0.9);
    CHECK(truth.V.col(i).normalized().dot(fp0.V.col(mv[i]).normalized()) >= 0.9);
  }
}
