#ifndef FBSEG_UNET_HPP
#define FBSEG_UNET_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fbseg/rng.hpp"
#include "fbseg/tensor.hpp"

namespace fbseg {

enum class Normalization { None, Instance };

struct UNetConfig {
  int levels = 9;  // resolution stages, i.e. levels - 1 downsamplings
  int base_channels = 32;
  int max_channels = 512;
  int in_channels = 1;
  int out_channels = 1;
  std::string activation = "relu";
  bool skip_connections = true;
  Normalization normalization = Normalization::None;

  void validate() const;
  /// min(base * 2^level, max)
  int width(int level) const;
  std::vector<int> widths() const;
  /// Input spatial dims must be divisible by 2^(levels - 1).
  int divisor() const { return 1 << (levels - 1); }
  /// Same encoder/decoder geometry (levels, widths, input channels, norm).
  bool transfer_compatible(const UNetConfig& other) const;
  bool operator==(const UNetConfig&) const = default;
};

/// Where a checkpoint came from.
struct TrainingProvenance {
  std::string task = "segmentation";  // or "reconstruction"
  std::string loss_mode;
  int epochs = 0;
  std::uint64_t seed = 0;
  bool pretrained = false;
  int fold = -1;
  bool operator==(const TrainingProvenance&) const = default;
};

template <typename Scalar>
struct BasicParameter {
  std::string name;
  std::vector<int> shape;
  Vector<Scalar> value;
};

/// Network configuration plus named parameters, in a fixed order derived
/// from the configuration.
template <typename Scalar>
struct BasicModelState {
  UNetConfig config;
  std::vector<BasicParameter<Scalar>> params;
  TrainingProvenance provenance;

  int index_of(const std::string& name) const;
  std::size_t parameter_count() const;

  template <typename T>
  BasicModelState<T> cast() const {
    BasicModelState<T> out{config, {}, provenance};
    for (const auto& p : params) out.params.push_back({p.name, p.shape, p.value.template cast<T>()});
    return out;
  }
};

using ModelState = BasicModelState<float>;

template <typename Scalar>
using Gradients = std::vector<Vector<Scalar>>;

template <typename Scalar>
Gradients<Scalar> zero_gradients(const BasicModelState<Scalar>& model);

/// Activations retained for the backward pass.
template <typename Scalar>
struct Tape {
  struct Unit {
    Tensor<Scalar> out;  // post-activation
    Tensor<Scalar> xhat;
    std::vector<Scalar> invstd;
  };
  Tensor<Scalar> input;
  std::vector<Unit> enc1, enc2;  // per level
  std::vector<Tensor<Scalar>> pooled;
  std::vector<std::vector<std::uint8_t>> pool_arg;
  std::vector<Tensor<Scalar>> dec_in;  // upsampled (+ skip) input per level
  std::vector<Unit> dec1, dec2;
  Tensor<Scalar> logits;
};

/// Encoder of `levels` double-conv stages joined by 2x2 max pooling;
/// decoder of 2x2 transposed convolutions, optional skip concatenation and
/// double-conv blocks; 1x1 output head. He-normal weights, zero biases.
template <typename Scalar = float>
BasicModelState<Scalar> build_unet(const UNetConfig& cfg, Rng& rng);

/// Throws ValidationError naming the required divisor.
void check_input_shape(const UNetConfig& cfg, int channels, int h, int w);

template <typename Scalar>
Tensor<Scalar> forward(const BasicModelState<Scalar>& model, const Tensor<Scalar>& batch);

template <typename Scalar>
Tensor<Scalar> forward(const BasicModelState<Scalar>& model, const Tensor<Scalar>& batch, Tape<Scalar>& tape);

/// Accumulates parameter gradients for dL/dlogits into grads.
template <typename Scalar>
void backward(const BasicModelState<Scalar>& model, const Tape<Scalar>& tape, const Tensor<Scalar>& grad_logits,
              Gradients<Scalar>& grads);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& logits);

/// Elementwise logistic of forward().
template <typename Scalar>
Tensor<Scalar> predict_probabilities(const BasicModelState<Scalar>& model, const Tensor<Scalar>& batch);

/// Closed-form parameter count for a configuration.
std::size_t unet_parameter_count(const UNetConfig& cfg);

// Checkpoint file (version 1):
//   8 bytes   magic "FBSEGCKP"
//   u32 LE    format version
//   u64 LE    header length in bytes
//   header    UTF-8 JSON {config, provenance, tensors: [{name, shape, offset, count}]}
//   payload   float32 little-endian values, tensors back to back (offset in floats)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace fbseg

#endif  // FBSEG_UNET_HPP
