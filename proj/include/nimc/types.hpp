#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nimc {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matd = Mat<double>;
using Vecd = Vec<double>;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

// File parsing failure; `line` is 1-based.
struct ParseError : Error {
  ParseError(const std::string& path, long line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what),
        path(path),
        line(line) {}
  std::string path;
  long line;
};

struct ResourceLimit : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct DegenerateSpectrum : Error {
  using Error::Error;
};

struct OutOfRange : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

// Linear is supported only for degeneracy studies; training pipelines reject it.
enum class ActivationKind { Sigmoid, Tanh, ReLU, Linear };

inline const char* to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Linear: return "linear";
  }
  return "?";
}

inline ActivationKind parse_activation(const std::string& s) {
  if (s == "sigmoid") return ActivationKind::Sigmoid;
  if (s == "tanh") return ActivationKind::Tanh;
  if (s == "relu") return ActivationKind::ReLU;
  if (s == "linear") return ActivationKind::Linear;
  throw InvalidArgument("unknown activation: " + s);
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// Parameter pair of the bilinear-through-activation model
//   A(x, y) = phi(U^T x)^T phi(V^T y).
// U is d1 x k, V is d2 x k; both factors share the column count k.
template <class Scalar = double>
struct FactorPair {
  Mat<Scalar> U;
  Mat<Scalar> V;
  ActivationKind activation = ActivationKind::Sigmoid;

  Index d1() const { return U.rows(); }
  Index d2() const { return V.rows(); }
  Index k() const { return U.cols(); }

  void validate() const {
    if (U.cols() != V.cols()) throw InvalidArgument("FactorPair: U and V must share the column count");
    if (U.cols() < 1) throw InvalidArgument("FactorPair: k must be >= 1");
    if (U.cols() > U.rows() || V.cols() > V.rows())
      throw InvalidArgument("FactorPair: k must not exceed min(d1, d2)");
    if (!U.allFinite() || !V.allFinite()) throw InvalidArgument("FactorPair: non-finite entries");
  }
};

template <class S>
FactorPair(Mat<S>, Mat<S>, ActivationKind) -> FactorPair<S>;

// Row-wise feature matrices: X holds n1 feature vectors of dimension d1,
// Y holds n2 of dimension d2.
template <class Scalar = double>
struct FeatureSet {
  Mat<Scalar> X;
  Mat<Scalar> Y;

  Index n1() const { return X.rows(); }
  Index n2() const { return Y.rows(); }
  Index d1() const { return X.cols(); }
  Index d2() const { return Y.cols(); }

  void validate() const {
    if (X.rows() < 1 || Y.rows() < 1) throw InvalidArgument("FeatureSet: need at least one row per side");
    if (!X.allFinite() || !Y.allFinite()) throw InvalidArgument("FeatureSet: non-finite entries");
  }
};

template <class S>
FeatureSet(Mat<S>, Mat<S>) -> FeatureSet<S>;

// One observed rating for the grid cell (row, col). Observation multisets are
// sampled with replacement, so duplicates are legitimate and carry weight.
template <class Scalar = double>
struct Observation {
  Index row = 0;
  Index col = 0;
  Scalar value = 0;
};

template <class Scalar = double>
using ObservationSet = std::vector<Observation<Scalar>>;

using FactorPaird = FactorPair<double>;
using FeatureSetd = FeatureSet<double>;
using Observationd = Observation<double>;
using ObservationSetd = ObservationSet<double>;

template <class Scalar>
void check_observations(const ObservationSet<Scalar>& obs, Index n1, Index n2) {
  for (const auto& o : obs) {
    if (o.row < 0 || o.row >= n1 || o.col < 0 || o.col >= n2)
      throw InvalidArgument("observation index out of range");
  }
}

}  // namespace nimc
