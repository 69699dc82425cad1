#ifndef FBSEG_IMAGE_HPP
#define FBSEG_IMAGE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace fbseg {

/// Row-major 2D raster; (row, col) indexing matches image coordinates.
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageF = Image<float>;
using ImageD = Image<double>;
/// 8-bit raster used for class codes, binary targets and outlines.
using Mask = Image<std::uint8_t>;

/// Raised for contract violations in inputs (bad config, schema, shapes).
/// The CLI maps it to exit code 1; every other exception maps to 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename A, typename B>
bool same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                        const std::string& what) {
  if (!same_shape(a, b)) {
    throw ValidationError(what + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
  }
}

}  // namespace fbseg

#endif  // FBSEG_IMAGE_HPP
