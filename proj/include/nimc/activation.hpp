#pragma once

#include <cmath>

#include "nimc/types.hpp"

namespace nimc {

template <class Scalar>
Scalar phi(ActivationKind kind, Scalar z) {
  switch (kind) {
    case ActivationKind::Sigmoid: return Scalar(1) / (Scalar(1) + std::exp(-z));
    case ActivationKind::Tanh: return std::tanh(z);
    case ActivationKind::ReLU: return z > Scalar(0) ? z : Scalar(0);
    case ActivationKind::Linear: return z;
  }
  return Scalar(0);
}

// ReLU derivative at the kink is pinned to 0 so results are deterministic.
template <class Scalar>
Scalar phi_prime(ActivationKind kind, Scalar z) {
  switch (kind) {
    case ActivationKind::Sigmoid: {
      const Scalar s = phi(kind, z);
      return s * (Scalar(1) - s);
    }
    case ActivationKind::Tanh: {
      const Scalar t = std::tanh(z);
      return Scalar(1) - t * t;
    }
    case ActivationKind::ReLU: return z > Scalar(0) ? Scalar(1) : Scalar(0);
    case ActivationKind::Linear: return Scalar(1);
  }
  return Scalar(0);
}

// ReLU second derivative is 0 almost everywhere and is defined as 0 here.
template <class Scalar>
Scalar phi_second(ActivationKind kind, Scalar z) {
  switch (kind) {
    case ActivationKind::Sigmoid: {
      const Scalar s = phi(kind, z);
      return s * (Scalar(1) - s) * (Scalar(1) - Scalar(2) * s);
    }
    case ActivationKind::Tanh: {
      const Scalar t = std::tanh(z);
      return Scalar(-2) * t * (Scalar(1) - t * t);
    }
    case ActivationKind::ReLU: return Scalar(0);
    case ActivationKind::Linear: return Scalar(0);
  }
  return Scalar(0);
}

// Entry-wise application; preserves the expression shape of `m`.
template <class Derived>
auto phi_array(ActivationKind kind, const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return m.unaryExpr([kind](Scalar z) { return phi(kind, z); });
}

template <class Derived>
auto phi_prime_array(ActivationKind kind, const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return m.unaryExpr([kind](Scalar z) { return phi_prime(kind, z); });
}

}  // namespace nimc
