#ifndef FBSEG_TENSOR_HPP
#define FBSEG_TENSOR_HPP

#include <cstddef>
#include <string>

#include <Eigen/Core>

#include "fbseg/image.hpp"

namespace fbseg {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Dense NCHW tensor.
template <typename Scalar>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  Vector<Scalar> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(Vector<Scalar>::Zero(size())) {}

  Eigen::Index size() const { return static_cast<Eigen::Index>(n) * c * h * w; }
  Eigen::Index sample_size() const { return static_cast<Eigen::Index>(c) * h * w; }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }

  Scalar* sample(int i) { return data.data() + i * sample_size(); }
  const Scalar* sample(int i) const { return data.data() + i * sample_size(); }

  /// Sample i viewed as a (channels x pixels) matrix.
  Eigen::Map<RowMatrix<Scalar>> matrix(int i) { return {sample(i), c, plane()}; }
  Eigen::Map<const RowMatrix<Scalar>> matrix(int i) const { return {sample(i), c, plane()}; }

  Scalar& operator()(int ni, int ci, int y, int x) { return data[((static_cast<Eigen::Index>(ni) * c + ci) * h + y) * w + x]; }
  Scalar operator()(int ni, int ci, int y, int x) const {
    return data[((static_cast<Eigen::Index>(ni) * c + ci) * h + y) * w + x];
  }

  /// Channel ci of sample ni as an image.
  Image<Scalar> channel_image(int ni, int ci) const {
    return Eigen::Map<const Image<Scalar>>(sample(ni) + ci * plane(), h, w);
  }
  void set_channel_image(int ni, int ci, const Image<Scalar>& img) {
    Eigen::Map<Image<Scalar>>(sample(ni) + ci * plane(), h, w) = img;
  }

  std::string shape_string() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
};

using TensorF = Tensor<float>;

}  // namespace fbseg

#endif  // FBSEG_TENSOR_HPP
