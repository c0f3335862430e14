#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "nimc/types.hpp"

namespace nimc {

// Dense symmetric 3-way array with entries T(i,j,l), i,j,l < dim. Dense
// storage is fine at the dimensions this library targets.
template <class Scalar = double>
class SymTensor3 {
 public:
  SymTensor3() = default;
  explicit SymTensor3(Index dim) : dim_(dim), data_(Vec<Scalar>::Zero(dim * dim * dim)) {}

  Index dim() const { return dim_; }

  Scalar& operator()(Index i, Index j, Index l) { return data_[(i * dim_ + j) * dim_ + l]; }
  Scalar operator()(Index i, Index j, Index l) const { return data_[(i * dim_ + j) * dim_ + l]; }

  const Vec<Scalar>& data() const { return data_; }
  Vec<Scalar>& data() { return data_; }

  Scalar norm() const { return data_.norm(); }

  // Mode-1 unfolding, dim x dim^2; row i holds the slice T(i,:,:).
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  unfold1() const {
    return {data_.data(), dim_, dim_ * dim_};
  }

  void add_rank_one(Scalar weight, const Vec<Scalar>& v) {
    for (Index i = 0; i < dim_; ++i)
      for (Index j = 0; j < dim_; ++j)
        for (Index l = 0; l < dim_; ++l) (*this)(i, j, l) += weight * v[i] * v[j] * v[l];
  }

  static SymTensor3 rank_one(Scalar weight, const Vec<Scalar>& v) {
    SymTensor3 t(v.size());
    t.add_rank_one(weight, v);
    return t;
  }

  // T(I, u, v): contraction over the last two modes.
  Vec<Scalar> contract2(const Vec<Scalar>& u, const Vec<Scalar>& v) const {
    Vec<Scalar> out = Vec<Scalar>::Zero(dim_);
    for (Index i = 0; i < dim_; ++i) {
      Scalar acc = 0;
      for (Index j = 0; j < dim_; ++j) {
        const Scalar uj = u[j];
        if (uj == Scalar(0)) continue;
        const Index base = (i * dim_ + j) * dim_;
        Scalar inner = 0;
        for (Index l = 0; l < dim_; ++l) inner += data_[base + l] * v[l];
        acc += uj * inner;
      }
      out[i] = acc;
    }
    return out;
  }

  Scalar contract3(const Vec<Scalar>& u, const Vec<Scalar>& v, const Vec<Scalar>& w) const {
    return contract2(v, w).dot(u);
  }

  // T(W, W, W): multilinear change of basis, result is cols x cols x cols.
  SymTensor3 change_basis(const Mat<Scalar>& W) const {
    const Index k = W.cols();
    SymTensor3 out(k);
    // Successive mode products through the first index.
    std::vector<Mat<Scalar>> slices(dim_);  // slice i of T after mode-2/3 products
    for (Index i = 0; i < dim_; ++i) {
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
          Ti(data_.data() + i * dim_ * dim_, dim_, dim_);
      slices[i] = W.transpose() * Ti * W;  // k x k
    }
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b)
        for (Index c = 0; c < k; ++c) {
          Scalar acc = 0;
          for (Index i = 0; i < dim_; ++i) acc += W(i, a) * slices[i](b, c);
          out(a, b, c) = acc;
        }
    return out;
  }

  void symmetrize() {
    for (Index i = 0; i < dim_; ++i)
      for (Index j = i; j < dim_; ++j)
        for (Index l = j; l < dim_; ++l) {
          const Scalar m = ((*this)(i, j, l) + (*this)(i, l, j) + (*this)(j, i, l) +
                            (*this)(j, l, i) + (*this)(l, i, j) + (*this)(l, j, i)) /
                           Scalar(6);
          (*this)(i, j, l) = m;
          (*this)(i, l, j) = m;
          (*this)(j, i, l) = m;
          (*this)(j, l, i) = m;
          (*this)(l, i, j) = m;
          (*this)(l, j, i) = m;
        }
  }

  SymTensor3& operator+=(const SymTensor3& o) {
    data_ += o.data_;
    return *this;
  }
  SymTensor3& operator-=(const SymTensor3& o) {
    data_ -= o.data_;
    return *this;
  }
  SymTensor3& operator*=(Scalar c) {
    data_ *= c;
    return *this;
  }

 private:
  Index dim_ = 0;
  Vec<Scalar> data_;
};

}  // namespace nimc
