#include "fbseg/unet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "fbseg/config.hpp"
#include "fbseg/layers.hpp"

namespace fbseg {
namespace {

struct UnitIndex {
  int weight = -1, bias = -1, gamma = -1, beta = -1;
  int cin = 0, cout = 0;
};

struct BlockIndex {
  UnitIndex first, second;
};

struct Layout {
  std::vector<BlockIndex> enc, dec;  // indexed by level
  std::vector<int> up_weight, up_bias;
  int head_weight = -1, head_bias = -1;
};

enum class ParamKind { Weight, Bias, Gamma, Beta };

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  ParamKind kind;
  int fan_in;
};

std::vector<ParamSpec> make_specs(const UNetConfig& cfg, Layout& layout) {
  std::vector<ParamSpec> specs;
  const bool norm = cfg.normalization == Normalization::Instance;
  auto unit = [&](const std::string& prefix, int cin, int cout) {
    UnitIndex u;
    u.cin = cin;
    u.cout = cout;
    u.weight = static_cast<int>(specs.size());
    specs.push_back({prefix + ".weight", {cout, cin, 3, 3}, ParamKind::Weight, cin * 9});
    u.bias = static_cast<int>(specs.size());
    specs.push_back({prefix + ".bias", {cout}, ParamKind::Bias, 0});
    if (norm) {
      u.gamma = static_cast<int>(specs.size());
      specs.push_back({prefix + ".norm.gamma", {cout}, ParamKind::Gamma, 0});
      u.beta = static_cast<int>(specs.size());
      specs.push_back({prefix + ".norm.beta", {cout}, ParamKind::Beta, 0});
    }
    return u;
  };

  const int levels = cfg.levels;
  layout.enc.resize(levels);
  layout.dec.resize(levels - 1);
  layout.up_weight.assign(levels - 1, -1);
  layout.up_bias.assign(levels - 1, -1);
  for (int l = 0; l < levels; ++l) {
    const int cin = l == 0 ? cfg.in_channels : cfg.width(l - 1);
    const std::string p = "enc" + std::to_string(l);
    layout.enc[l].first = unit(p + ".conv1", cin, cfg.width(l));
    layout.enc[l].second = unit(p + ".conv2", cfg.width(l), cfg.width(l));
  }
  for (int l = levels - 2; l >= 0; --l) {
    const int w = cfg.width(l), deep = cfg.width(l + 1);
    const std::string up = "up" + std::to_string(l);
    layout.up_weight[l] = static_cast<int>(specs.size());
    specs.push_back({up + ".weight", {w, 2, 2, deep}, ParamKind::Weight, deep});
    layout.up_bias[l] = static_cast<int>(specs.size());
    specs.push_back({up + ".bias", {w}, ParamKind::Bias, 0});
    const std::string p = "dec" + std::to_string(l);
    layout.dec[l].first = unit(p + ".conv1", cfg.skip_connections ? 2 * w : w, w);
    layout.dec[l].second = unit(p + ".conv2", w, w);
  }
  layout.head_weight = static_cast<int>(specs.size());
  specs.push_back({"head.weight", {cfg.out_channels, cfg.width(0)}, ParamKind::Weight, cfg.width(0)});
  layout.head_bias = static_cast<int>(specs.size());
  specs.push_back({"head.bias", {cfg.out_channels}, ParamKind::Bias, 0});
  return specs;
}

Layout make_layout(const UNetConfig& cfg) {
  Layout layout;
  make_specs(cfg, layout);
  return layout;
}

std::size_t shape_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

template <typename S>
void unit_forward(const BasicModelState<S>& m, const UnitIndex& u, const Tensor<S>& in, typename Tape<S>::Unit& out) {
  const int n = in.n, h = in.h, w = in.w;
  out.out = Tensor<S>(n, u.cout, h, w);
  const bool norm = u.gamma >= 0;
  if (norm) {
    out.xhat = Tensor<S>(n, u.cout, h, w);
    out.invstd.assign(static_cast<std::size_t>(n) * u.cout, S(0));
  }
  for (int i = 0; i < n; ++i) {
    layers::conv3x3_forward(in.sample(i), u.cin, h, w, m.params[u.weight].value.data(), m.params[u.bias].value.data(),
                            u.cout, out.out.sample(i));
    if (norm) {
      layers::instance_norm_forward(out.out.sample(i), u.cout, h * w, m.params[u.gamma].value.data(),
                                    m.params[u.beta].value.data(), out.xhat.sample(i),
                                    out.invstd.data() + static_cast<std::size_t>(i) * u.cout);
    }
  }
  out.out.data = out.out.data.max(S(0));
}

// dout is consumed (overwritten). din may be null.
template <typename S>
void unit_backward(const BasicModelState<S>& m, const UnitIndex& u, const typename Tape<S>::Unit& cache,
                   const Tensor<S>& in, Tensor<S>& dout, Gradients<S>& grads, Tensor<S>* din) {
  const int n = in.n, h = in.h, w = in.w;
  dout.data = (cache.out.data > S(0)).select(dout.data, S(0));
  if (din) *din = Tensor<S>(n, u.cin, h, w);
  for (int i = 0; i < n; ++i) {
    if (u.gamma >= 0) {
      layers::instance_norm_backward(dout.sample(i), cache.xhat.sample(i),
                                     cache.invstd.data() + static_cast<std::size_t>(i) * u.cout,
                                     m.params[u.gamma].value.data(), u.cout, h * w, grads[u.gamma].data(),
                                     grads[u.beta].data());
    }
    layers::conv3x3_backward(in.sample(i), u.cin, h, w, m.params[u.weight].value.data(), u.cout, dout.sample(i),
                             grads[u.weight].data(), grads[u.bias].data(), din ? din->sample(i) : nullptr);
  }
}

}  // namespace

void UNetConfig::validate() const {
  if (levels < 2) throw ValidationError("unet.levels must be >= 2");
  if (levels > 16) throw ValidationError("unet.levels must be <= 16");
  if (base_channels < 1) throw ValidationError("unet.base_channels must be >= 1");
  if (max_channels < base_channels) throw ValidationError("unet.max_channels must be >= unet.base_channels");
  if (in_channels < 1) throw ValidationError("unet.in_channels must be >= 1");
  if (out_channels < 1) throw ValidationError("unet.out_channels must be >= 1");
  if (activation != "relu") throw ValidationError("unet.activation: only 'relu' is supported");
}

int UNetConfig::width(int level) const {
  long long w = base_channels;
  for (int i = 0; i < level && w < max_channels; ++i) w *= 2;
  return static_cast<int>(std::min<long long>(w, max_channels));
}

std::vector<int> UNetConfig::widths() const {
  std::vector<int> out;
  for (int l = 0; l < levels; ++l) out.push_back(width(l));
  return out;
}

bool UNetConfig::transfer_compatible(const UNetConfig& o) const {
  return levels == o.levels && base_channels == o.base_channels && max_channels == o.max_channels &&
         in_channels == o.in_channels && normalization == o.normalization && activation == o.activation;
}

template <typename S>
int BasicModelState<S>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return static_cast<int>(i);
  return -1;
}

template <typename S>
std::size_t BasicModelState<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename S>
Gradients<S> zero_gradients(const BasicModelState<S>& model) {
  Gradients<S> g;
  g.reserve(model.params.size());
  for (const auto& p : model.params) g.push_back(Vector<S>::Zero(p.value.size()));
  return g;
}

template <typename S>
BasicModelState<S> build_unet(const UNetConfig& cfg, Rng& rng) {
  cfg.validate();
  Layout layout;
  const auto specs = make_specs(cfg, layout);
  BasicModelState<S> m;
  m.config = cfg;
  for (const auto& spec : specs) {
    const auto count = static_cast<Eigen::Index>(shape_count(spec.shape));
    Vector<S> v(count);
    switch (spec.kind) {
      case ParamKind::Weight: {
        const double std = std::sqrt(2.0 / spec.fan_in);
        for (Eigen::Index i = 0; i < count; ++i) v[i] = static_cast<S>(rng.normal() * std);
        break;
      }
      case ParamKind::Bias:
      case ParamKind::Beta: v.setZero(); break;
      case ParamKind::Gamma: v.setOnes(); break;
    }
    m.params.push_back({spec.name, spec.shape, std::move(v)});
  }
  return m;
}

void check_input_shape(const UNetConfig& cfg, int channels, int h, int w) {
  if (channels != cfg.in_channels) {
    throw ValidationError("unet input has " + std::to_string(channels) + " channels, expected " +
                          std::to_string(cfg.in_channels));
  }
  const int d = cfg.divisor();
  if (h <= 0 || w <= 0 || h % d != 0 || w % d != 0) {
    throw ValidationError("unet input spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                          " must be divisible by " + std::to_string(d) + " (2^" + std::to_string(cfg.levels - 1) +
                          ")");
  }
}

template <typename S>
Tensor<S> forward(const BasicModelState<S>& m, const Tensor<S>& batch, Tape<S>& t) {
  const auto& cfg = m.config;
  check_input_shape(cfg, batch.c, batch.h, batch.w);
  const Layout layout = make_layout(cfg);
  const int levels = cfg.levels, n = batch.n;

  t = Tape<S>{};
  t.input = batch;
  t.enc1.resize(levels);
  t.enc2.resize(levels);
  t.pooled.resize(levels - 1);
  t.pool_arg.resize(levels - 1);
  t.dec_in.resize(levels - 1);
  t.dec1.resize(levels - 1);
  t.dec2.resize(levels - 1);

  const Tensor<S>* cur = &t.input;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      const auto& src = t.enc2[l - 1].out;
      t.pooled[l - 1] = Tensor<S>(n, src.c, src.h / 2, src.w / 2);
      t.pool_arg[l - 1].resize(static_cast<std::size_t>(t.pooled[l - 1].size()));
      for (int i = 0; i < n; ++i) {
        layers::maxpool2_forward(src.sample(i), src.c, src.h, src.w, t.pooled[l - 1].sample(i),
                                 t.pool_arg[l - 1].data() + i * t.pooled[l - 1].sample_size());
      }
      cur = &t.pooled[l - 1];
    }
    unit_forward(m, layout.enc[l].first, *cur, t.enc1[l]);
    unit_forward(m, layout.enc[l].second, t.enc1[l].out, t.enc2[l]);
  }

  const Tensor<S>* deep = &t.enc2[levels - 1].out;
  for (int l = levels - 2; l >= 0; --l) {
    const auto& skip = t.enc2[l].out;
    const int w = cfg.width(l);
    auto& din = t.dec_in[l];
    din = Tensor<S>(n, cfg.skip_connections ? 2 * w : w, skip.h, skip.w);
    for (int i = 0; i < n; ++i) {
      layers::upconv2_forward(deep->sample(i), deep->c, deep->h, deep->w, m.params[layout.up_weight[l]].value.data(),
                              m.params[layout.up_bias[l]].value.data(), w, din.sample(i));
      if (cfg.skip_connections) std::copy_n(skip.sample(i), skip.sample_size(), din.sample(i) + skip.sample_size());
    }
    unit_forward(m, layout.dec[l].first, din, t.dec1[l]);
    unit_forward(m, layout.dec[l].second, t.dec1[l].out, t.dec2[l]);
    deep = &t.dec2[l].out;
  }

  t.logits = Tensor<S>(n, cfg.out_channels, batch.h, batch.w);
  for (int i = 0; i < n; ++i) {
    layers::conv1x1_forward(deep->sample(i), deep->c, batch.h * batch.w, m.params[layout.head_weight].value.data(),
                            m.params[layout.head_bias].value.data(), cfg.out_channels, t.logits.sample(i));
  }
  return t.logits;
}

template <typename S>
Tensor<S> forward(const BasicModelState<S>& m, const Tensor<S>& batch) {
  check_input_shape(m.config, batch.c, batch.h, batch.w);
  Tensor<S> out(batch.n, m.config.out_channels, batch.h, batch.w);
  Tape<S> tape;
  // One sample at a time bounds activation memory for large tiles.
  for (int i = 0; i < batch.n; ++i) {
    Tensor<S> one(1, batch.c, batch.h, batch.w);
    std::copy_n(batch.sample(i), batch.sample_size(), one.sample(0));
    const auto logits = forward(m, one, tape);
    std::copy_n(logits.sample(0), logits.sample_size(), out.sample(i));
  }
  return out;
}

template <typename S>
void backward(const BasicModelState<S>& m, const Tape<S>& t, const Tensor<S>& grad_logits, Gradients<S>& grads) {
  const auto& cfg = m.config;
  const Layout layout = make_layout(cfg);
  const int levels = cfg.levels, n = t.input.n;
  if (grad_logits.size() != t.logits.size()) throw ValidationError("backward: gradient shape mismatch");

  // Head.
  const Tensor<S>& head_in = t.dec2[0].out;
  Tensor<S> dcur(n, head_in.c, head_in.h, head_in.w);
  for (int i = 0; i < n; ++i) {
    layers::conv1x1_backward(head_in.sample(i), head_in.c, head_in.h * head_in.w,
                             m.params[layout.head_weight].value.data(), cfg.out_channels, grad_logits.sample(i),
                             grads[layout.head_weight].data(), grads[layout.head_bias].data(), dcur.sample(i));
  }

  // Decoder, shallow to deep. dcur is the gradient w.r.t. dec2[l].out.
  std::vector<Tensor<S>> d_enc2(levels);
  for (int l = 0; l <= levels - 2; ++l) {
    Tensor<S> d_mid, d_in;
    unit_backward(m, layout.dec[l].second, t.dec2[l], t.dec1[l].out, dcur, grads, &d_mid);
    unit_backward(m, layout.dec[l].first, t.dec1[l], t.dec_in[l], d_mid, grads, &d_in);
    const int w = cfg.width(l);
    const Tensor<S>& deep = l == levels - 2 ? t.enc2[levels - 1].out : t.dec2[l + 1].out;
    Tensor<S> d_deep(n, deep.c, deep.h, deep.w);
    const Eigen::Index up_size = static_cast<Eigen::Index>(w) * d_in.plane();
    if (cfg.skip_connections) {
      d_enc2[l] = Tensor<S>(n, w, d_in.h, d_in.w);
      for (int i = 0; i < n; ++i) std::copy_n(d_in.sample(i) + up_size, up_size, d_enc2[l].sample(i));
    }
    for (int i = 0; i < n; ++i) {
      layers::upconv2_backward(deep.sample(i), deep.c, deep.h, deep.w, m.params[layout.up_weight[l]].value.data(), w,
                               d_in.sample(i), grads[layout.up_weight[l]].data(), grads[layout.up_bias[l]].data(),
                               d_deep.sample(i));
    }
    dcur = std::move(d_deep);
  }

  // Encoder, deep to shallow.
  d_enc2[levels - 1] = std::move(dcur);
  for (int l = levels - 1; l >= 0; --l) {
    Tensor<S>& d_out = d_enc2[l];
    if (d_out.size() == 0) d_out = Tensor<S>(n, t.enc2[l].out.c, t.enc2[l].out.h, t.enc2[l].out.w);
    Tensor<S> d_mid, d_in;
    unit_backward(m, layout.enc[l].second, t.enc2[l], t.enc1[l].out, d_out, grads, &d_mid);
    const Tensor<S>& in = l == 0 ? t.input : t.pooled[l - 1];
    unit_backward(m, layout.enc[l].first, t.enc1[l], in, d_mid, grads, l == 0 ? nullptr : &d_in);
    if (l > 0) {
      const auto& src = t.enc2[l - 1].out;
      Tensor<S> d_src(n, src.c, src.h, src.w);
      for (int i = 0; i < n; ++i) {
        layers::maxpool2_backward(d_in.sample(i), t.pool_arg[l - 1].data() + i * d_in.sample_size(), src.c, src.h,
                                  src.w, d_src.sample(i));
      }
      if (d_enc2[l - 1].size() == 0) {
        d_enc2[l - 1] = std::move(d_src);
      } else {
        d_enc2[l - 1].data += d_src.data;
      }
    }
  }
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& logits) {
  Tensor<S> p = logits;
  p.data = (S(1) / (S(1) + (-logits.data).exp()));
  return p;
}

template <typename S>
Tensor<S> predict_probabilities(const BasicModelState<S>& model, const Tensor<S>& batch) {
  return sigmoid(forward(model, batch));
}

std::size_t unet_parameter_count(const UNetConfig& cfg) {
  cfg.validate();
  const std::size_t norm = cfg.normalization == Normalization::Instance ? 2 : 0;
  auto conv = [&](std::size_t cin, std::size_t cout) { return cout * cin * 9 + cout + norm * cout; };
  std::size_t total = 0;
  for (int l = 0; l < cfg.levels; ++l) {
    const std::size_t w = cfg.width(l);
    total += conv(l == 0 ? cfg.in_channels : cfg.width(l - 1), w) + conv(w, w);
  }
  for (int l = 0; l + 1 < cfg.levels; ++l) {
    const std::size_t w = cfg.width(l), deep = cfg.width(l + 1);
    total += 4 * deep * w + w;
    total += conv(cfg.skip_connections ? 2 * w : w, w) + conv(w, w);
  }
  total += static_cast<std::size_t>(cfg.out_channels) * cfg.width(0) + cfg.out_channels;
  return total;
}

namespace {

constexpr char kMagic[8] = {'F', 'B', 'S', 'E', 'G', 'C', 'K', 'P'};

void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("checkpoint: truncated header");
    v |= static_cast<std::uint64_t>(c & 0xff) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "fbseg-checkpoint";
  header["version"] = kCheckpointVersion;
  header["config"] = to_json(model.config);
  header["provenance"] = to_json(model.provenance);
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.params) {
    header["tensors"].push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}, {"count", p.value.size()}});
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  const std::string text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(kMagic, sizeof kMagic);
  put_le(f, kCheckpointVersion, 4);
  put_le(f, text.size(), 8);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_le(f, std::bit_cast<std::uint32_t>(p.value[i]), 4);
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint " + path.string());
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ValidationError(path.string() + ": not an fbseg checkpoint");
  }
  const auto version = get_le(f, 4);
  if (version != kCheckpointVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le(f, 8);
  std::string text(header_len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!f) throw ValidationError(path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(text);

  ModelState m;
  m.config = unet_config_from_json(header.at("config"));
  m.provenance = provenance_from_json(header.at("provenance"));
  Layout layout;
  const auto specs = make_specs(m.config, layout);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != specs.size()) throw ValidationError(path.string() + ": tensor count does not match config");
  std::vector<float> payload;
  {
    const auto start = f.tellg();
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(f.tellg() - start);
    f.seekg(start);
    if (bytes % 4 != 0) throw ValidationError(path.string() + ": payload is not a whole number of floats");
    payload.resize(bytes / 4);
    for (auto& v : payload) v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(f, 4)));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& t = tensors[i];
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<int>>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    if (name != specs[i].name || shape != specs[i].shape || count != shape_count(shape)) {
      throw ValidationError(path.string() + ": tensor '" + name + "' does not match config layout");
    }
    if (offset + count > payload.size()) throw ValidationError(path.string() + ": tensor '" + name + "' out of range");
    Vector<float> v = Eigen::Map<const Vector<float>>(payload.data() + offset, static_cast<Eigen::Index>(count));
    m.params.push_back({name, shape, std::move(v)});
  }
  return m;
}

template struct BasicModelState<float>;
template struct BasicModelState<double>;
template Gradients<float> zero_gradients(const BasicModelState<float>&);
template Gradients<double> zero_gradients(const BasicModelState<double>&);
template BasicModelState<float> build_unet<float>(const UNetConfig&, Rng&);
template BasicModelState<double> build_unet<double>(const UNetConfig&, Rng&);
template Tensor<float> forward(const BasicModelState<float>&, const Tensor<float>&);
template Tensor<double> forward(const BasicModelState<double>&, const Tensor<double>&);
template Tensor<float> forward(const BasicModelState<float>&, const Tensor<float>&, Tape<float>&);
template Tensor<double> forward(const BasicModelState<double>&, const Tensor<double>&, Tape<double>&);
template void backward(const BasicModelState<float>&, const Tape<float>&, const Tensor<float>&, Gradients<float>&);
template void backward(const BasicModelState<double>&, const Tape<double>&, const Tensor<double>&, Gradients<double>&);
template Tensor<float> sigmoid(const Tensor<float>&);
template Tensor<double> sigmoid(const Tensor<double>&);
template Tensor<float> predict_probabilities(const BasicModelState<float>&, const Tensor<float>&);
template Tensor<double> predict_probabilities(const BasicModelState<double>&, const Tensor<double>&);

}  // namespace fbseg
