#ifndef FBSEG_LAYERS_HPP
#define FBSEG_LAYERS_HPP

// Per-sample convolution kernels on contiguous CHW buffers. Backward passes
// accumulate into parameter gradients (+=) and overwrite input gradients.

#include <cstdint>

namespace fbseg::layers {

/// 3x3 convolution, stride 1, zero padding 1. weight: [cout, cin, 3, 3].
template <typename S>
void conv3x3_forward(const S* in, int cin, int h, int w, const S* weight, const S* bias, int cout, S* out);

template <typename S>
void conv3x3_backward(const S* in, int cin, int h, int w, const S* weight, int cout, const S* dout, S* dweight,
                      S* dbias, S* din);

/// 2x2 max pooling, stride 2; arg records the winning offset (dy * 2 + dx).
template <typename S>
void maxpool2_forward(const S* in, int c, int h, int w, S* out, std::uint8_t* arg);

/// h, w are the input (pre-pooling) dims.
template <typename S>
void maxpool2_backward(const S* dout, const std::uint8_t* arg, int c, int h, int w, S* din);

/// 2x2 transposed convolution, stride 2. weight: [cout, 2, 2, cin].
template <typename S>
void upconv2_forward(const S* in, int cin, int h, int w, const S* weight, const S* bias, int cout, S* out);

/// h, w are the input (low-resolution) dims.
template <typename S>
void upconv2_backward(const S* in, int cin, int h, int w, const S* weight, int cout, const S* dout, S* dweight,
                      S* dbias, S* din);

/// 1x1 convolution. weight: [cout, cin].
template <typename S>
void conv1x1_forward(const S* in, int cin, int hw, const S* weight, const S* bias, int cout, S* out);

template <typename S>
void conv1x1_backward(const S* in, int cin, int hw, const S* weight, int cout, const S* dout, S* dweight, S* dbias,
                      S* din);

/// Per-channel instance normalization in place: z -> gamma * xhat + beta.
template <typename S>
void instance_norm_forward(S* z, int c, int hw, const S* gamma, const S* beta, S* xhat, S* invstd);

/// dy -> dz in place.
template <typename S>
void instance_norm_backward(S* dy, const S* xhat, const S* invstd, const S* gamma, int c, int hw, S* dgamma, S* dbeta);

}  // namespace fbseg::layers

#endif  // FBSEG_LAYERS_HPP
