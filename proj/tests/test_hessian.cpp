#include <doctest.h>

#include <cmath>

#include "nimc/data.hpp"
#include "nimc/hessian.hpp"
#include "test_util.hpp"

using namespace nimc;

namespace {

struct Instance {
  FactorPaird fp;
  FeatureSetd fs;
  ObservationSetd obs;
};

Instance perturbed_instance(Index d1, Index d2, Index k, Index n, Index m, ActivationKind kind,
                            RngSeed seed, double perturb) {
  Instance in;
  auto truth = make_truth<double>(d1, d2, k, kind, seed.substream(0));
  in.fs = gen_gaussian_features<double>(n, n, d1, d2, seed.substream(1));
  in.obs = sample_observations(in.fs, truth, m, seed.substream(2));
  Rng rng(seed.substream(3));
  in.fp = truth;
  in.fp.U += perturb * rng.gaussian_matrix<double>(d1, k);
  in.fp.V += perturb * rng.gaussian_matrix<double>(d2, k);
  return in;
}

}  // namespace

TEST_CASE("empirical hessian: single observation matches finite differences") {
  auto in = perturbed_instance(2, 2, 1, 3, 1, ActivationKind::Sigmoid, {40, 0}, 0.3);
  auto H = assemble_empirical_hessian(in.fp, in.fs, in.obs);
  Matd fd = oracle::fd_hessian(
      in.fp, [&](const FactorPaird& p) { return loss(p, in.fs, in.obs).value; });
  CHECK((H.H - fd).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("empirical hessian: matches finite differences on larger smooth instances") {
  for (std::uint64_t t = 0; t < 4; ++t) {
    const auto kind = t % 2 ? ActivationKind::Tanh : ActivationKind::Sigmoid;
    auto in = perturbed_instance(4, 3, 2, 6, 25, kind, {41 + t, 0}, 0.2);
    auto H = assemble_empirical_hessian(in.fp, in.fs, in.obs);
    Matd fd = oracle::fd_hessian(
        in.fp, [&](const FactorPaird& p) { return loss(p, in.fs, in.obs).value; });
    CHECK((H.H - fd).cwiseAbs().maxCoeff() <= 1e-4);
    CHECK((H.H - H.H.transpose()).cwiseAbs().maxCoeff() == 0.0);  // symmetrized exactly
  }
}

TEST_CASE("empirical hessian: residual terms vanish at the ground truth") {
  auto truth = make_truth<double>(3, 4, 2, ActivationKind::Sigmoid, {50, 0});
  auto fs = gen_gaussian_features<double>(5, 5, 3, 4, {51, 0});
  auto obs = sample_observations(fs, truth, 20, {52, 0});
  auto H = assemble_empirical_hessian(truth, fs, obs);
  CHECK(H.max_abs_residual == 0.0);
  CHECK(H.at_ground_truth());

  // Gauss-Newton oracle: (1/m) sum s s^T with scalar-loop scores.
  const Index d1 = 3, d2 = 4, k = 2, D = k * (d1 + d2);
  Matd gn = Matd::Zero(D, D);
  for (const auto& o : obs) {
    Vecd x = fs.X.row(o.row).transpose(), y = fs.Y.row(o.col).transpose();
    Vecd s(D);
    for (Index i = 0; i < k; ++i) {
      const double zu = truth.U.col(i).dot(x), zv = truth.V.col(i).dot(y);
      s.segment(i * d1, d1) =
          phi_prime(ActivationKind::Sigmoid, zu) * phi(ActivationKind::Sigmoid, zv) * x;
      s.segment(k * d1 + i * d2, d2) =
          phi_prime(ActivationKind::Sigmoid, zv) * phi(ActivationKind::Sigmoid, zu) * y;
    }
    gn += s * s.transpose();
  }
  gn /= double(obs.size());
  CHECK((H.H - gn).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("empirical hessian: linear activation rejected") {
  auto in = perturbed_instance(3, 3, 2, 4, 10, ActivationKind::Sigmoid, {53, 0}, 0.1);
  in.fp.activation = ActivationKind::Linear;
  CHECK_THROWS_AS(assemble_empirical_hessian(in.fp, in.fs, in.obs), InvalidArgument);
}

TEST_CASE("relu hessian at truth: rescaling tangent is a flat direction") {
  auto truth = make_truth<double>(4, 4, 3, ActivationKind::ReLU, {54, 0});
  auto fs = gen_gaussian_features<double>(6, 6, 4, 4, {55, 0});
  auto obs = sample_observations(fs, truth, 40, {56, 0});
  auto H = assemble_empirical_hessian(truth, fs, obs);
  Rng rng({57, 0});
  Vecd lambda = rng.gaussian_matrix<double>(3, 1);
  Vecd t = scaling_tangent(truth, lambda);
  const double q = t.dot(H.H * t);
  CHECK(std::abs(q) <= 1e-8);
  const double lmax = spectrum(H).lambda_max;
  CHECK(std::abs(q) <= 1e-6 * lmax);
}

TEST_CASE("relu fixed-row hessian: shape and finite-difference agreement") {
  int done = 0;
  for (std::uint64_t t = 0; done < 3 && t < 60; ++t) {
    auto in = perturbed_instance(4, 3, 2, 5, 12, ActivationKind::ReLU, {58 + t, 0}, 0.15);
    if (oracle::min_arg_magnitude(in.fp, in.fs, in.obs) < 5e-3) continue;
    ++done;
    auto rf = split_fixed_row(in.fp);
    auto H = assemble_relu_fixed_hessian(rf, in.fs, in.obs);
    const Index Df = 2 * ((4 - 1) + 3);
    REQUIRE(H.H.rows() == Df);
    REQUIRE(H.H.cols() == Df);

    // FD over the free parameters through the embedded loss.
    const double h = 1e-4;
    auto f = [&](const ReluFixedRow<double>& r) { return loss_relu_fixed(r, in.fs, in.obs).value; };
    ReluFixedRow<double> p = rf;
    auto coord = [&](Index idx) -> double* {
      const Index dW = p.W.rows();
      if (idx < 2 * dW) return &p.W(idx % dW, idx / dW);
      idx -= 2 * dW;
      return &p.V(idx % 3, idx / 3);
    };
    Matd fd(Df, Df);
    for (Index a = 0; a < Df; ++a)
      for (Index b = a; b < Df; ++b) {
        double* pa = coord(a);
        double* pb = coord(b);
        const double ka = *pa, kb = *pb;
        auto eval = [&](double da, double db) {
          *pa = ka + da;
          *pb += db;
          const double v = f(p);
          *pa = ka;
          *pb = kb;
          return v;
        };
        const double v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4 * h * h);
        fd(a, b) = v;
        fd(b, a) = v;
      }
    CHECK((H.H - fd).cwiseAbs().maxCoeff() <= 1e-4);
  }
  CHECK(done == 3);
}

TEST_CASE("population hessian mc: psd at truth and self-consistent across runs") {
  auto truth = make_truth<double>(3, 3, 2, ActivationKind::Sigmoid, {60, 0});
  const std::size_t n_mc = 200000;
  auto a = population_hessian_mc(truth, n_mc, {61, 0});
  auto b = population_hessian_mc(truth, n_mc, {62, 0});
  REQUIRE(a.entry_se.has_value());
  const double diff = (a.H - b.H).operatorNorm();
  CHECK(diff <= 3 * (a.se_operator_bound() + b.se_operator_bound()));
  CHECK(spectrum(a).lambda_min >= 0.0);
}

TEST_CASE("population hessian mc: orthogonal sigmoid bound lambda_min >= rho - 3 se") {
  FactorPaird truth{Matd::Identity(4, 4), Matd::Identity(4, 4), ActivationKind::Sigmoid};
  auto H = population_hessian_mc(truth, 200000, {63, 0});
  const double rho = moment_table(ActivationKind::Sigmoid).rho;
  const double lmin = spectrum(H).lambda_min;
  CHECK(lmin >= rho - 3 * H.se_operator_bound());
}

TEST_CASE("population hessian mc: agrees with the empirical hessian at truth") {
  auto truth = make_truth<double>(3, 3, 2, ActivationKind::Sigmoid, {64, 0});
  auto fs = gen_gaussian_features<double>(400, 400, 3, 3, {65, 0});
  auto obs = sample_observations(fs, truth, 30000, {66, 0});
  auto He = assemble_empirical_hessian(truth, fs, obs);
  auto Hp = population_hessian_mc(truth, 200000, {67, 0});
  const double rel = (He.H - Hp.H).operatorNorm() / Hp.H.operatorNorm();
  CHECK(rel <= 0.1);
}

TEST_CASE("spectrum: diagonal and iterative oracle") {
  HessianMatrix<double> hm;
  hm.H = Vecd::LinSpaced(3, 1, 3).asDiagonal();
  auto p = spectrum(hm);
  CHECK(p.lambda_min == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(p.lambda_max == doctest::Approx(3.0).epsilon(1e-14));

  // Power-iteration oracle on a random symmetric matrix: run on a PSD shift
  // of H for the top eigenvalue and on (shift I - H) for the bottom one.
  Rng rng({68, 0});
  Matd A = rng.gaussian_matrix<double>(50, 50);
  HessianMatrix<double> hs;
  hs.H = 0.5 * (A + A.transpose());
  auto ps = spectrum(hs);
  auto power = [&](const Matd& M) {
    Vecd v = Vecd::Ones(M.rows()).normalized();
    double lam = 0;
    for (int t = 0; t < 20000; ++t) {
      Vecd w = M * v;
      lam = v.dot(w);
      const double nrm = w.norm();
      if (nrm == 0) break;
      v = w / nrm;
    }
    return lam;
  };
  const double shift = hs.H.cwiseAbs().rowwise().sum().maxCoeff();  // Gershgorin radius
  const double top = power(hs.H + shift * Matd::Identity(50, 50)) - shift;
  const double bot = shift - power(shift * Matd::Identity(50, 50) - hs.H);
  CHECK(std::abs(top - ps.lambda_max) <= 1e-8);
  CHECK(std::abs(bot - ps.lambda_min) <= 1e-8);
}

TEST_CASE("spectrum: non-finite entries rejected") {
  HessianMatrix<double> hm;
  hm.H = Matd::Constant(2, 2, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(spectrum(hm), NumericError);
}

TEST_CASE("condition numbers: closed forms and svd oracle") {
  FactorPaird id{Matd::Identity(5, 3), Matd::Identity(5, 3), ActivationKind::Sigmoid};
  auto r = condition_numbers(id);
  CHECK(r.lambda_u == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.kappa_u == doctest::Approx(1.0).epsilon(1e-12));

  Matd D = Matd::Zero(2, 2);
  D(0, 0) = 2;
  D(1, 1) = 1;
  FactorPaird diag{D, D, ActivationKind::Sigmoid};
  auto rd = condition_numbers(diag);
  CHECK(rd.lambda_u == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rd.kappa_u == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng({70, 0});
  Matd M = rng.gaussian_matrix<double>(10, 3);
  FactorPaird fp{M, M, ActivationKind::Sigmoid};
  auto rr = condition_numbers(fp);
  Eigen::JacobiSVD<Matd> svd(M);
  const Vecd s = svd.singularValues();
  const double lam = std::pow(s(0), 3) / (s(0) * s(1) * s(2));
  CHECK(std::abs(rr.lambda_u - lam) <= 1e-10 * lam);
  CHECK(std::abs(rr.kappa_u - s(0) / s(2)) <= 1e-10 * rr.kappa_u);
  CHECK(rr.lambda_u >= 1.0);
  CHECK(rr.kappa_u >= 1.0);
}

TEST_CASE("condition numbers: rank-deficient factor is named") {
  FactorPaird fp{Matd::Identity(4, 2), Matd::Zero(4, 2), ActivationKind::Sigmoid};
  try {
    condition_numbers(fp);
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("V") != std::string::npos);
  }
}

TEST_CASE("lambda and kappa are >= 1 for random full-rank factors") {
  for (std::uint64_t t = 0; t < 50; ++t) {
    Rng rng({71 + t, 0});
    FactorPaird fp{rng.gaussian_matrix<double>(8, 3), rng.gaussian_matrix<double>(6, 3),
                   ActivationKind::Sigmoid};
    auto r = condition_numbers(fp);
    CHECK(r.lambda_u >= 1.0 - 1e-12);
    CHECK(r.lambda_v >= 1.0 - 1e-12);
    CHECK(r.kappa_u >= 1.0);
    CHECK(r.kappa_v >= 1.0);
  }
}

TEST_CASE("theoretical bound: sigmoid and tanh plug-ins") {
  FactorPaird id{Matd::Identity(4, 4), Matd::Identity(4, 4), ActivationKind::Sigmoid};
  const double rho_s = moment_table(ActivationKind::Sigmoid).rho;
  CHECK(theoretical_lambda_min_bound(id, ActivationKind::Sigmoid) ==
        doctest::Approx(rho_s).epsilon(1e-10));

  // singular values (2, 1) on both factors: lambda = 2 each, max kappa = 2.
  Matd U = Matd::Zero(3, 2);
  U(0, 0) = 2;
  U(1, 1) = 1;
  FactorPaird fp{U, U, ActivationKind::Tanh};
  const double rho_t = moment_table(ActivationKind::Tanh).rho;
  CHECK(theoretical_lambda_min_bound(fp, ActivationKind::Tanh) ==
        doctest::Approx(rho_t / 8.0).epsilon(1e-10));
}

TEST_CASE("theoretical bound: ReLU closed form") {
  // k = 1 with unit factors: ratio = 1/2, bound = (1/200) * 1/4 = 1/800.
  FactorPaird one{Matd::Ones(1, 1), Matd::Ones(1, 1), ActivationKind::ReLU};
  CHECK(theoretical_lambda_min_bound(one, ActivationKind::ReLU) ==
        doctest::Approx(1.0 / 800.0).epsilon(1e-12));

  FactorPaird id{Matd::Identity(3, 3), Matd::Identity(3, 3), ActivationKind::ReLU};
  CHECK_THROWS_AS(theoretical_lambda_min_bound(id, ActivationKind::ReLU), InvalidArgument);
}

TEST_CASE("quadratic form: equals the matrix form within monte-carlo error") {
  auto truth = make_truth<double>(3, 3, 2, ActivationKind::Sigmoid, {80, 0});
  auto H = population_hessian_mc(truth, 100000, {81, 0});
  Rng rng({82, 0});
  Vecd dir = rng.unit_vector<double>(2 * (3 + 3));
  auto est = min_eig_quadratic_form(truth, dir, 100000, {83, 0});
  const double matrix_form = dir.dot(H.H * dir);
  CHECK(std::abs(est.value - matrix_form) <= 3 * (est.se + H.se_operator_bound()));
  CHECK(est.value >= -3 * est.se);
}

TEST_CASE("quadratic form: ReLU scaling tangent sits in the kernel") {
  auto truth = make_truth<double>(4, 4, 2, ActivationKind::ReLU, {84, 0});
  Rng rng({85, 0});
  Vecd lambda = rng.gaussian_matrix<double>(2, 1);
  Vecd t = scaling_tangent(truth, lambda);
  auto est = min_eig_quadratic_form(truth, t, 50000, {86, 0});
  CHECK(std::abs(est.value) <= std::max(3 * est.se, 1e-12));
}

TEST_CASE("quadratic form: direction validation") {
  auto truth = make_truth<double>(3, 3, 1, ActivationKind::Sigmoid, {87, 0});
  Vecd bad = Vecd::Ones(6);
  CHECK_THROWS_AS(min_eig_quadratic_form(truth, bad, 10, {88, 0}), InvalidArgument);
}
