#pragma once

#include <algorithm>
#include <cmath>

#include "nimc/activation.hpp"
#include "nimc/quadrature.hpp"
#include "nimc/types.hpp"

namespace nimc {

// Gaussian moments of an activation:
//   alpha_ij = E[phi(z)^i  z^j],   beta_ij = E[phi'(z)^i z^j],
//   gamma_cross = E[phi(z) phi'(z) z],  z ~ N(0,1),
// and the spectral floor
//   rho = min(a20 b20 - a10^2 b10^2 - b10^2 a11^2,
//             a20 b22 - a10^2 b12^2 - gamma_cross^2).
struct MomentTable {
  ActivationKind kind = ActivationKind::Sigmoid;
  double alpha10 = 0, alpha11 = 0, alpha20 = 0;
  double beta10 = 0, beta11 = 0, beta12 = 0, beta20 = 0, beta22 = 0;
  double gamma_cross = 0;
  double rho = 0;

  void finalize_rho() {
    const double r1 = alpha20 * beta20 - alpha10 * alpha10 * beta10 * beta10 -
                      beta10 * beta10 * alpha11 * alpha11;
    const double r2 = alpha20 * beta22 - alpha10 * alpha10 * beta12 * beta12 -
                      gamma_cross * gamma_cross;
    rho = std::min(r1, r2);
  }
};

namespace detail {

// E[z^q 1_{z>0}] for q = 1..5: half-Gaussian moments.
inline double half_gaussian_moment(int q) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
  switch (q) {
    case 1: return inv_sqrt_2pi;
    case 2: return 0.5;
    case 3: return 2.0 * inv_sqrt_2pi;
    case 4: return 1.5;
    case 5: return 8.0 * inv_sqrt_2pi;
  }
  throw InvalidArgument("half_gaussian_moment: q out of range");
}

}  // namespace detail

inline MomentTable moment_table(ActivationKind kind, bool allow_linear = false,
                                int quadrature_nodes = GaussHermite::kDefaultNodes) {
  MomentTable t;
  t.kind = kind;
  switch (kind) {
    case ActivationKind::ReLU: {
      const double c = detail::half_gaussian_moment(1);  // 1/sqrt(2*pi)
      t.alpha10 = c;
      t.alpha11 = 0.5;
      t.alpha20 = 0.5;
      t.beta10 = 0.5;
      t.beta11 = c;
      t.beta12 = 0.5;
      t.beta20 = 0.5;
      t.beta22 = 0.5;
      t.gamma_cross = 0.5;
      break;
    }
    case ActivationKind::Linear: {
      if (!allow_linear)
        throw InvalidArgument("moment_table: linear activation requires opt-in");
      t.alpha10 = 0;
      t.alpha11 = 1;
      t.alpha20 = 1;
      t.beta10 = 1;
      t.beta11 = 0;
      t.beta12 = 1;
      t.beta20 = 1;
      t.beta22 = 1;
      t.gamma_cross = 1;
      break;
    }
    case ActivationKind::Sigmoid:
    case ActivationKind::Tanh: {
      const GaussHermite rule(quadrature_nodes);
      auto f = [kind](double z) { return phi(kind, z); };
      auto fp = [kind](double z) { return phi_prime(kind, z); };
      t.alpha10 = rule.expect([&](double z) { return f(z); });
      t.alpha11 = rule.expect([&](double z) { return f(z) * z; });
      t.alpha20 = rule.expect([&](double z) { return f(z) * f(z); });
      t.beta10 = rule.expect([&](double z) { return fp(z); });
      t.beta11 = rule.expect([&](double z) { return fp(z) * z; });
      t.beta12 = rule.expect([&](double z) { return fp(z) * z * z; });
      t.beta20 = rule.expect([&](double z) { return fp(z) * fp(z); });
      t.beta22 = rule.expect([&](double z) { return fp(z) * fp(z) * z * z; });
      t.gamma_cross = rule.expect([&](double z) { return f(z) * fp(z) * z; });
      break;
    }
  }
  t.finalize_rho();
  return t;
}

// gamma_q(sigma) = E_{z~N(0,1)}[phi(sigma z) z^q], q in {0,...,4}.
// ReLU and Linear are homogeneous in sigma and evaluated in closed form;
// sigmoid/tanh go through quadrature.
inline double gamma_sigma(ActivationKind kind, int q, double sigma,
                          int quadrature_nodes = GaussHermite::kDefaultNodes) {
  if (q < 0 || q > 4) throw InvalidArgument("gamma_sigma: q must be in {0,...,4}");
  if (!(sigma > 0)) throw InvalidArgument("gamma_sigma: sigma must be positive");
  switch (kind) {
    case ActivationKind::ReLU:
      return sigma * detail::half_gaussian_moment(q + 1);
    case ActivationKind::Linear: {
      // E[z^{q+1}]: odd moments vanish, E[z^2] = 1, E[z^4] = 3.
      static const double m[] = {0, 1, 0, 3, 0};
      return sigma * m[q];
    }
    case ActivationKind::Sigmoid:
    case ActivationKind::Tanh: {
      const GaussHermite rule(quadrature_nodes);
      return rule.expect([&](double z) { return phi(kind, sigma * z) * std::pow(z, q); });
    }
  }
  return 0;
}

}  // namespace nimc
