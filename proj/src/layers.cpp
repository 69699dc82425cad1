#include "fbseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fbseg/tensor.hpp"

namespace fbseg::layers {
namespace {

// Upper bound on im2col buffer elements; rows are processed in chunks.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

template <typename S>
using MapRM = Eigen::Map<RowMatrix<S>>;
template <typename S>
using CMapRM = Eigen::Map<const RowMatrix<S>>;
template <typename S>
using StridedMap = Eigen::Map<RowMatrix<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using CStridedMap = Eigen::Map<const RowMatrix<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
std::vector<S>& scratch(int slot) {
  static thread_local std::vector<S> buffers[2];
  return buffers[slot];
}

int chunk_rows(int cin, int w, int h) {
  const std::size_t per_row = static_cast<std::size_t>(cin) * 9 * w;
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1, h));
}

// Fills col[(ci*9 + ky*3 + kx), (y - r0)*w + x] = in[ci, y+ky-1, x+kx-1] (0 outside).
template <typename S>
void im2col(const S* in, int cin, int h, int w, int r0, int r1, S* col) {
  const std::size_t ncol = static_cast<std::size_t>(r1 - r0) * w;
  for (int ci = 0; ci < cin; ++ci) {
    const S* plane = in + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* dst_row = col + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * ncol;
        for (int y = r0; y < r1; ++y) {
          S* dst = dst_row + static_cast<std::size_t>(y - r0) * w;
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, S(0));
            continue;
          }
          const S* src = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 1) {
            std::copy(src, src + w, dst);
          } else if (kx == 0) {
            dst[0] = S(0);
            std::copy(src, src + w - 1, dst + 1);
          } else {
            std::copy(src + 1, src + w, dst);
            dst[w - 1] = S(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: din[ci, y+ky-1, x+kx-1] += col[...].
template <typename S>
void col2im_add(const S* col, int cin, int h, int w, int r0, int r1, S* din) {
  const std::size_t ncol = static_cast<std::size_t>(r1 - r0) * w;
  for (int ci = 0; ci < cin; ++ci) {
    S* plane = din + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* src_row = col + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * ncol;
        for (int y = r0; y < r1; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const S* src = src_row + static_cast<std::size_t>(y - r0) * w;
          S* dst = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 1) {
            for (int x = 0; x < w; ++x) dst[x] += src[x];
          } else if (kx == 0) {
            for (int x = 1; x < w; ++x) dst[x - 1] += src[x];
          } else {
            for (int x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename S>
void conv3x3_forward(const S* in, int cin, int h, int w, const S* weight, const S* bias, int cout, S* out) {
  const int step = chunk_rows(cin, w, h);
  auto& col = scratch<S>(0);
  CMapRM<S> wm(weight, cout, cin * 9);
  Eigen::Map<const ColVec<S>> b(bias, cout);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  for (int r0 = 0; r0 < h; r0 += step) {
    const int r1 = std::min(h, r0 + step);
    const Eigen::Index ncol = static_cast<Eigen::Index>(r1 - r0) * w;
    col.resize(static_cast<std::size_t>(cin) * 9 * ncol);
    im2col(in, cin, h, w, r0, r1, col.data());
    StridedMap<S> o(out + static_cast<Eigen::Index>(r0) * w, cout, ncol, Eigen::OuterStride<>(hw));
    o.noalias() = wm * CMapRM<S>(col.data(), cin * 9, ncol);
    o.colwise() += b;
  }
}

template <typename S>
void conv3x3_backward(const S* in, int cin, int h, int w, const S* weight, int cout, const S* dout, S* dweight,
                      S* dbias, S* din) {
  const int step = chunk_rows(cin, w, h);
  auto& col = scratch<S>(0);
  auto& dcol = scratch<S>(1);
  CMapRM<S> wm(weight, cout, cin * 9);
  MapRM<S> dw(dweight, cout, cin * 9);
  Eigen::Map<ColVec<S>> db(dbias, cout);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  if (din) std::fill(din, din + static_cast<std::size_t>(cin) * hw, S(0));
  for (int r0 = 0; r0 < h; r0 += step) {
    const int r1 = std::min(h, r0 + step);
    const Eigen::Index ncol = static_cast<Eigen::Index>(r1 - r0) * w;
    col.resize(static_cast<std::size_t>(cin) * 9 * ncol);
    im2col(in, cin, h, w, r0, r1, col.data());
    CStridedMap<S> g(dout + static_cast<Eigen::Index>(r0) * w, cout, ncol, Eigen::OuterStride<>(hw));
    CMapRM<S> cm(col.data(), cin * 9, ncol);
    dw.noalias() += g * cm.transpose();
    db += g.rowwise().sum();
    if (din) {
      dcol.resize(col.size());
      MapRM<S>(dcol.data(), cin * 9, ncol).noalias() = wm.transpose() * g;
      col2im_add(dcol.data(), cin, h, w, r0, r1, din);
    }
  }
}

template <typename S>
void maxpool2_forward(const S* in, int c, int h, int w, S* out, std::uint8_t* arg) {
  const int oh = h / 2, ow = w / 2;
  for (int ci = 0; ci < c; ++ci) {
    const S* p = in + static_cast<std::size_t>(ci) * h * w;
    S* o = out + static_cast<std::size_t>(ci) * oh * ow;
    std::uint8_t* a = arg + static_cast<std::size_t>(ci) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const S* r0 = p + static_cast<std::size_t>(2 * y) * w;
      const S* r1 = r0 + w;
      for (int x = 0; x < ow; ++x) {
        const S v[4] = {r0[2 * x], r0[2 * x + 1], r1[2 * x], r1[2 * x + 1]};
        std::uint8_t best = 0;
        for (std::uint8_t k = 1; k < 4; ++k)
          if (v[k] > v[best]) best = k;
        o[y * ow + x] = v[best];
        a[y * ow + x] = best;
      }
    }
  }
}

template <typename S>
void maxpool2_backward(const S* dout, const std::uint8_t* arg, int c, int h, int w, S* din) {
  const int oh = h / 2, ow = w / 2;
  std::fill(din, din + static_cast<std::size_t>(c) * h * w, S(0));
  for (int ci = 0; ci < c; ++ci) {
    S* d = din + static_cast<std::size_t>(ci) * h * w;
    const S* g = dout + static_cast<std::size_t>(ci) * oh * ow;
    const std::uint8_t* a = arg + static_cast<std::size_t>(ci) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const int k = a[y * ow + x];
        d[static_cast<std::size_t>(2 * y + k / 2) * w + 2 * x + k % 2] += g[y * ow + x];
      }
  }
}

template <typename S>
void upconv2_forward(const S* in, int cin, int h, int w, const S* weight, const S* bias, int cout, S* out) {
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  auto& buf = scratch<S>(0);
  buf.resize(static_cast<std::size_t>(cout) * 4 * hw);
  MapRM<S> y(buf.data(), cout * 4, hw);
  y.noalias() = CMapRM<S>(weight, cout * 4, cin) * CMapRM<S>(in, cin, hw);
  const int oh = 2 * h, ow = 2 * w;
  for (int co = 0; co < cout; ++co) {
    S* o = out + static_cast<std::size_t>(co) * oh * ow;
    for (int k = 0; k < 4; ++k) {
      const S* src = buf.data() + (static_cast<std::size_t>(co) * 4 + k) * hw;
      const int dy = k / 2, dx = k % 2;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) o[static_cast<std::size_t>(2 * i + dy) * ow + 2 * j + dx] = src[i * w + j] + bias[co];
    }
  }
}

template <typename S>
void upconv2_backward(const S* in, int cin, int h, int w, const S* weight, int cout, const S* dout, S* dweight,
                      S* dbias, S* din) {
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const int oh = 2 * h, ow = 2 * w;
  auto& buf = scratch<S>(0);
  buf.resize(static_cast<std::size_t>(cout) * 4 * hw);
  for (int co = 0; co < cout; ++co) {
    const S* g = dout + static_cast<std::size_t>(co) * oh * ow;
    S acc = 0;
    for (int k = 0; k < 4; ++k) {
      S* dst = buf.data() + (static_cast<std::size_t>(co) * 4 + k) * hw;
      const int dy = k / 2, dx = k % 2;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const S v = g[static_cast<std::size_t>(2 * i + dy) * ow + 2 * j + dx];
          dst[i * w + j] = v;
          acc += v;
        }
    }
    dbias[co] += acc;
  }
  CMapRM<S> gm(buf.data(), cout * 4, hw);
  CMapRM<S> x(in, cin, hw);
  MapRM<S>(dweight, cout * 4, cin).noalias() += gm * x.transpose();
  if (din) MapRM<S>(din, cin, hw).noalias() = CMapRM<S>(weight, cout * 4, cin).transpose() * gm;
}

template <typename S>
void conv1x1_forward(const S* in, int cin, int hw, const S* weight, const S* bias, int cout, S* out) {
  MapRM<S> o(out, cout, hw);
  o.noalias() = CMapRM<S>(weight, cout, cin) * CMapRM<S>(in, cin, hw);
  o.colwise() += Eigen::Map<const ColVec<S>>(bias, cout);
}

template <typename S>
void conv1x1_backward(const S* in, int cin, int hw, const S* weight, int cout, const S* dout, S* dweight, S* dbias,
                      S* din) {
  CMapRM<S> g(dout, cout, hw);
  MapRM<S>(dweight, cout, cin).noalias() += g * CMapRM<S>(in, cin, hw).transpose();
  Eigen::Map<ColVec<S>>(dbias, cout) += g.rowwise().sum();
  if (din) MapRM<S>(din, cin, hw).noalias() = CMapRM<S>(weight, cout, cin).transpose() * g;
}

constexpr double kNormEpsilon = 1e-5;

template <typename S>
void instance_norm_forward(S* z, int c, int hw, const S* gamma, const S* beta, S* xhat, S* invstd) {
  for (int ci = 0; ci < c; ++ci) {
    Eigen::Map<Vector<S>> v(z + static_cast<std::size_t>(ci) * hw, hw);
    Eigen::Map<Vector<S>> xh(xhat + static_cast<std::size_t>(ci) * hw, hw);
    const double mean = v.template cast<double>().mean();
    const double var = (v.template cast<double>() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + kNormEpsilon);
    invstd[ci] = static_cast<S>(is);
    xh = ((v.template cast<double>() - mean) * is).template cast<S>();
    v = gamma[ci] * xh + beta[ci];
  }
}

template <typename S>
void instance_norm_backward(S* dy, const S* xhat, const S* invstd, const S* gamma, int c, int hw, S* dgamma, S* dbeta) {
  for (int ci = 0; ci < c; ++ci) {
    Eigen::Map<Vector<S>> g(dy + static_cast<std::size_t>(ci) * hw, hw);
    Eigen::Map<const Vector<S>> xh(xhat + static_cast<std::size_t>(ci) * hw, hw);
    const double sum_g = g.template cast<double>().sum();
    const double sum_gx = (g.template cast<double>() * xh.template cast<double>()).sum();
    dgamma[ci] += static_cast<S>(sum_gx);
    dbeta[ci] += static_cast<S>(sum_g);
    const double scale = static_cast<double>(gamma[ci]) * invstd[ci] / hw;
    g = (scale * (hw * g.template cast<double>() - sum_g - xh.template cast<double>() * sum_gx)).template cast<S>();
  }
}

#define FBSEG_INSTANTIATE_LAYERS(S)                                                                             \
  template void conv3x3_forward<S>(const S*, int, int, int, const S*, const S*, int, S*);                      \
  template void conv3x3_backward<S>(const S*, int, int, int, const S*, int, const S*, S*, S*, S*);             \
  template void maxpool2_forward<S>(const S*, int, int, int, S*, std::uint8_t*);                               \
  template void maxpool2_backward<S>(const S*, const std::uint8_t*, int, int, int, S*);                        \
  template void upconv2_forward<S>(const S*, int, int, int, const S*, const S*, int, S*);                      \
  template void upconv2_backward<S>(const S*, int, int, int, const S*, int, const S*, S*, S*, S*);             \
  template void conv1x1_forward<S>(const S*, int, int, const S*, const S*, int, S*);                           \
  template void conv1x1_backward<S>(const S*, int, int, const S*, int, const S*, S*, S*, S*);                  \
  template void instance_norm_forward<S>(S*, int, int, const S*, const S*, S*, S*);                            \
  template void instance_norm_backward<S>(S*, const S*, const S*, const S*, int, int, S*, S*);

FBSEG_INSTANTIATE_LAYERS(float)
FBSEG_INSTANTIATE_LAYERS(double)

}  // namespace fbseg::layers
