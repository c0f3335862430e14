#pragma once

#include <cstdint>
#include <random>

#include "nimc/types.hpp"

namespace nimc {

// Seed plus substream id. Identical (seed, stream) pairs reproduce identical
// sequences; parallel trials draw from disjoint substreams of one base seed.
struct RngSeed {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  RngSeed substream(std::uint64_t id) const {
    // SplitMix64 finalizer keeps derived streams well separated.
    std::uint64_t z = stream + 0x9e3779b97f4a7c15ULL * (id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return {seed, z ^ (z >> 31)};
  }
};

class Rng {
 public:
  explicit Rng(RngSeed s) {
    std::seed_seq sq{static_cast<std::uint32_t>(s.seed),
                     static_cast<std::uint32_t>(s.seed >> 32),
                     static_cast<std::uint32_t>(s.stream),
                     static_cast<std::uint32_t>(s.stream >> 32)};
    eng_.seed(sq);
  }

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_);
  }

  std::mt19937_64& engine() { return eng_; }

  template <class Scalar = double>
  Mat<Scalar> gaussian_matrix(Index rows, Index cols) {
    Mat<Scalar> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(normal());
    return m;
  }

  template <class Scalar = double>
  Vec<Scalar> unit_vector(Index n) {
    Vec<Scalar> v = gaussian_matrix<Scalar>(n, 1);
    double nrm = v.norm();
    while (nrm == 0) {
      v = gaussian_matrix<Scalar>(n, 1);
      nrm = v.norm();
    }
    return v / nrm;
  }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace nimc
