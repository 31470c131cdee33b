#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eeseg/errors.hpp"
#include "eeseg/rng.hpp"
#include "eeseg/tensor.hpp"

namespace eeseg {

// Two-block U-Net with an early-exit branch hanging off the second encoder
// block. Widths/channels/classes/resolution are the only knobs; the topology
// is fixed.
struct ModelConfig {
  int in_channels = 9;
  int classes = 11;
  std::array<int, 3> widths{16, 32, 64};
  int resolution = 100;  // H == W

  void validate() const {
    if (in_channels < 1) throw ConfigError("config: in_channels must be >= 1");
    if (classes < 2) throw ConfigError("config: classes must be >= 2");
    if (!(widths[0] < widths[1] && widths[1] < widths[2]))
      throw ConfigError("config: widths must be strictly increasing");
    if (resolution < 4 || resolution % 4 != 0) throw ConfigError("config: resolution must be divisible by 4");
  }

  bool operator==(const ModelConfig& o) const {
    return in_channels == o.in_channels && classes == o.classes && widths == o.widths && resolution == o.resolution;
  }
};

enum class PathKind { Early, Full, Dual };
enum class ParamScope { Baseline, WithEE, EEOnly };
enum class MacPath { EarlyPath, FullPathWithEE, BaselineNoEE };

enum class LayerKind { Conv3, Conv1, TConv2 };

struct LayerSpec {
  std::string name;
  LayerKind kind;
  int in_ch;
  int out_ch;
  int stage;  // 0 = full resolution, 1 = half, 2 = quarter (MAC accounting resolution)
  bool ee;    // early-exit branch layer
};

// Fixed layer table; names are the persistence keys.
inline std::vector<LayerSpec> architecture(const ModelConfig& cfg) {
  cfg.validate();
  const int r = cfg.in_channels, c = cfg.classes;
  const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
  return {
      {"enc1a", LayerKind::Conv3, r, w0, 0, false},
      {"enc1b", LayerKind::Conv3, w0, w0, 0, false},
      {"enc2a", LayerKind::Conv3, w0, w1, 1, false},
      {"enc2b", LayerKind::Conv3, w1, w1, 1, false},
      {"bott_a", LayerKind::Conv3, w1, w2, 2, false},
      {"bott_b", LayerKind::Conv3, w2, w2, 2, false},
      {"up2", LayerKind::TConv2, w2, w1, 2, false},  // tconv MACs charged at the input stage
      {"dec2a", LayerKind::Conv3, w1 + w1, w1, 1, false},
      {"dec2b", LayerKind::Conv3, w1, w1, 1, false},
      {"up1", LayerKind::TConv2, w1, w0, 1, false},
      {"dec1a", LayerKind::Conv3, w0 + w0, w0, 0, false},
      {"dec1b", LayerKind::Conv3, w0, w0, 0, false},
      {"head", LayerKind::Conv1, w0, c, 0, false},
      {"ee_up", LayerKind::TConv2, w1, w0, 1, true},
      {"ee_a", LayerKind::Conv3, w0 + w0, w0, 0, true},
      {"ee_b", LayerKind::Conv3, w0, w0, 0, true},
      {"ee_head", LayerKind::Conv1, w0, c, 0, true},
  };
}

inline int kernel_taps(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3: return 9;
    case LayerKind::Conv1: return 1;
    case LayerKind::TConv2: return 4;
  }
  return 0;
}

inline std::int64_t layer_params(const LayerSpec& l) {
  return static_cast<std::int64_t>(kernel_taps(l.kind)) * l.in_ch * l.out_ch + l.out_ch;
}

inline std::int64_t layer_macs(const LayerSpec& l, int resolution) {
  const std::int64_t side = resolution >> l.stage;
  return side * side * kernel_taps(l.kind) * l.in_ch * l.out_ch;
}

inline std::int64_t param_count(const ModelConfig& cfg, ParamScope scope) {
  std::int64_t n = 0;
  for (const auto& l : architecture(cfg)) {
    const bool take = scope == ParamScope::WithEE || (scope == ParamScope::Baseline && !l.ee) ||
                      (scope == ParamScope::EEOnly && l.ee);
    if (take) n += layer_params(l);
  }
  return n;
}

// Multiplication count of one inference along the given path. The full path
// includes the EE branch: the gate has to run before it can decline.
inline std::int64_t mac_count(const ModelConfig& cfg, MacPath path) {
  static const std::vector<std::string> early_layers = {"enc1a", "enc1b", "enc2a", "enc2b",
                                                        "ee_up", "ee_a",  "ee_b",  "ee_head"};
  std::int64_t n = 0;
  for (const auto& l : architecture(cfg)) {
    bool take = false;
    switch (path) {
      case MacPath::EarlyPath:
        take = std::find(early_layers.begin(), early_layers.end(), l.name) != early_layers.end();
        break;
      case MacPath::FullPathWithEE: take = true; break;
      case MacPath::BaselineNoEE: take = !l.ee; break;
    }
    if (take) n += layer_macs(l, cfg.resolution);
  }
  return n;
}

template <typename S>
struct LayerT {
  std::string name;
  TensorT<S> kernel;
  VecT<S> bias;
};

template <typename S>
struct ParameterSetT {
  std::vector<LayerT<S>> layers;

  LayerT<S>& at(const std::string& name) {
    for (auto& l : layers)
      if (l.name == name) return l;
    throw ShapeError("parameter set: no layer named " + name);
  }
  const LayerT<S>& at(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return l;
    throw ShapeError("parameter set: no layer named " + name);
  }
};

using ParameterSet = ParameterSetT<float>;

template <typename S>
inline std::vector<int> kernel_dims(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv3: return {l.out_ch, l.in_ch, 3, 3};
    case LayerKind::Conv1: return {l.out_ch, l.in_ch, 1, 1};
    case LayerKind::TConv2: return {l.in_ch, l.out_ch, 2, 2};
  }
  return {};
}

// He-normal kernels (stddev sqrt(2/fan_in), fan_in = Cin * k^2), zero biases.
// Deterministic in the seed.
template <typename S>
ParameterSetT<S> build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParameterSetT<S> ps;
  for (const auto& spec : architecture(cfg)) {
    LayerT<S> layer;
    layer.name = spec.name;
    layer.kernel = TensorT<S>(kernel_dims<S>(spec));
    const double stddev = std::sqrt(2.0 / (static_cast<double>(spec.in_ch) * kernel_taps(spec.kind)));
    for (Eigen::Index i = 0; i < layer.kernel.size(); ++i)
      layer.kernel.data()[i] = static_cast<S>(rng.normal() * stddev);
    layer.bias = VecT<S>::Zero(spec.out_ch);
    ps.layers.push_back(std::move(layer));
  }
  return ps;
}

template <typename S>
ParameterSetT<S> zeros_like(const ParameterSetT<S>& ps) {
  ParameterSetT<S> z;
  z.layers.reserve(ps.layers.size());
  for (const auto& l : ps.layers) z.layers.push_back({l.name, TensorT<S>(l.kernel.dims()), VecT<S>::Zero(l.bias.size())});
  return z;
}

// Optional per-layer kernel and per-site activation transforms, used for
// quantization simulation and range calibration. Absent hooks are identity.
template <typename S>
struct GraphHooksT {
  std::function<TensorT<S>(const std::string& layer, const TensorT<S>& kernel)> kernel;
  std::function<TensorT<S>(const std::string& site, const TensorT<S>& value)> site;
};

using GraphHooks = GraphHooksT<float>;

// Shared encoder activations: s1 at full resolution (skip source), e2 at half
// resolution (branch point). Both heads consume these unchanged.
template <typename S>
struct TrunkT {
  TensorT<S> s1;
  TensorT<S> e2;
};

namespace detail {

template <typename S>
TensorT<S> apply_site(const GraphHooksT<S>* hooks, const char* name, TensorT<S> t) {
  if (hooks && hooks->site) return hooks->site(name, t);
  return t;
}

template <typename S>
TensorT<S> conv_block(const ParameterSetT<S>& ps, const GraphHooksT<S>* hooks, const char* name,
                      const TensorT<S>& x) {
  const auto& l = ps.at(name);
  TensorT<S> z = (hooks && hooks->kernel) ? conv2d(x, hooks->kernel(l.name, l.kernel), l.bias)
                                          : conv2d(x, l.kernel, l.bias);
  return apply_site(hooks, name, relu(z));
}

template <typename S>
TensorT<S> tconv_block(const ParameterSetT<S>& ps, const GraphHooksT<S>* hooks, const char* name,
                       const TensorT<S>& x) {
  const auto& l = ps.at(name);
  TensorT<S> z = (hooks && hooks->kernel) ? tconv2d(x, hooks->kernel(l.name, l.kernel), l.bias)
                                          : tconv2d(x, l.kernel, l.bias);
  return apply_site(hooks, name, relu(z));
}

template <typename S>
TensorT<S> head_conv(const ParameterSetT<S>& ps, const GraphHooksT<S>* hooks, const char* name,
                     const TensorT<S>& x) {
  const auto& l = ps.at(name);
  TensorT<S> z = (hooks && hooks->kernel) ? conv2d(x, hooks->kernel(l.name, l.kernel), l.bias)
                                          : conv2d(x, l.kernel, l.bias);
  return apply_site(hooks, name, std::move(z));  // logits, no activation
}

}  // namespace detail

template <typename S>
TrunkT<S> run_trunk(const ParameterSetT<S>& ps, const ModelConfig& cfg, const TensorT<S>& input,
                    const GraphHooksT<S>* hooks = nullptr) {
  if (input.rank() != 3 || input.dim(0) != cfg.in_channels || input.dim(1) != cfg.resolution ||
      input.dim(2) != cfg.resolution)
    throw ShapeError("forward: input dims do not match the model config");
  TensorT<S> x = detail::apply_site(hooks, "input", input);
  TensorT<S> a1a = detail::conv_block(ps, hooks, "enc1a", x);
  TensorT<S> s1 = detail::conv_block(ps, hooks, "enc1b", a1a);
  TensorT<S> p1 = maxpool2(s1).value;
  TensorT<S> a2a = detail::conv_block(ps, hooks, "enc2a", p1);
  TensorT<S> e2 = detail::conv_block(ps, hooks, "enc2b", a2a);
  return {std::move(s1), std::move(e2)};
}

// Early head: up-sample the branch point, concatenate the full-resolution
// skip, decode, 1x1 head.
template <typename S>
TensorT<S> run_ee_branch(const ParameterSetT<S>& ps, const TrunkT<S>& trunk,
                         const GraphHooksT<S>* hooks = nullptr) {
  TensorT<S> up = detail::tconv_block(ps, hooks, "ee_up", trunk.e2);
  TensorT<S> cat = concat_channels(up, trunk.s1);
  TensorT<S> a = detail::conv_block(ps, hooks, "ee_a", cat);
  TensorT<S> b = detail::conv_block(ps, hooks, "ee_b", a);
  return detail::head_conv(ps, hooks, "ee_head", b);
}

// Deep head: continue from the branch point through the bottleneck and the
// two decoder stages.
template <typename S>
TensorT<S> run_deep_path(const ParameterSetT<S>& ps, const TrunkT<S>& trunk,
                         const GraphHooksT<S>* hooks = nullptr) {
  TensorT<S> p2 = maxpool2(trunk.e2).value;
  TensorT<S> ba = detail::conv_block(ps, hooks, "bott_a", p2);
  TensorT<S> bb = detail::conv_block(ps, hooks, "bott_b", ba);
  TensorT<S> u2 = detail::tconv_block(ps, hooks, "up2", bb);
  TensorT<S> cat2 = concat_channels(u2, trunk.e2);
  TensorT<S> d2a = detail::conv_block(ps, hooks, "dec2a", cat2);
  TensorT<S> d2b = detail::conv_block(ps, hooks, "dec2b", d2a);
  TensorT<S> u1 = detail::tconv_block(ps, hooks, "up1", d2b);
  TensorT<S> cat1 = concat_channels(u1, trunk.s1);
  TensorT<S> d1a = detail::conv_block(ps, hooks, "dec1a", cat1);
  TensorT<S> d1b = detail::conv_block(ps, hooks, "dec1b", d1a);
  return detail::head_conv(ps, hooks, "head", d1b);
}

template <typename S>
struct ForwardOut {
  std::optional<TensorT<S>> early;
  std::optional<TensorT<S>> full;
};

// The shared encoder runs exactly once; Dual feeds both heads from the same
// trunk activations.
template <typename S>
ForwardOut<S> forward(const ParameterSetT<S>& ps, const ModelConfig& cfg, const TensorT<S>& input, PathKind path,
                      const GraphHooksT<S>* hooks = nullptr) {
  TrunkT<S> trunk = run_trunk(ps, cfg, input, hooks);
  ForwardOut<S> out;
  if (path == PathKind::Early || path == PathKind::Dual) out.early = run_ee_branch(ps, trunk, hooks);
  if (path == PathKind::Full || path == PathKind::Dual) out.full = run_deep_path(ps, trunk, hooks);
  return out;
}

// Every intermediate needed to backpropagate through both heads and the
// shared encoder. z* are pre-activation, a*/s1/e2 post-activation.
template <typename S>
struct DualTraceT {
  TensorT<S> input;
  TensorT<S> z1a, a1a, z1b, s1;
  TensorT<S> p1;
  std::vector<std::int32_t> m1;
  TensorT<S> z2a, a2a, z2b, e2;
  // deep head
  TensorT<S> p2;
  std::vector<std::int32_t> m2;
  TensorT<S> zba, aba, zbb, abb;
  TensorT<S> zu2, au2, cat2, zd2a, ad2a, zd2b, ad2b;
  TensorT<S> zu1, au1, cat1, zd1a, ad1a, zd1b, ad1b;
  TensorT<S> logits_full;
  // early head
  TensorT<S> zeu, aeu, cate, zea, aea, zeb, aeb;
  TensorT<S> logits_early;
};

template <typename S>
DualTraceT<S> dual_forward(const ParameterSetT<S>& ps, const ModelConfig& cfg, const TensorT<S>& input) {
  if (input.rank() != 3 || input.dim(0) != cfg.in_channels || input.dim(1) != cfg.resolution ||
      input.dim(2) != cfg.resolution)
    throw ShapeError("dual_forward: input dims do not match the model config");
  DualTraceT<S> t;
  t.input = input;
  t.z1a = conv2d(t.input, ps.at("enc1a").kernel, ps.at("enc1a").bias);
  t.a1a = relu(t.z1a);
  t.z1b = conv2d(t.a1a, ps.at("enc1b").kernel, ps.at("enc1b").bias);
  t.s1 = relu(t.z1b);
  {
    Pooled<S> p = maxpool2(t.s1);
    t.p1 = std::move(p.value);
    t.m1 = std::move(p.argmax);
  }
  t.z2a = conv2d(t.p1, ps.at("enc2a").kernel, ps.at("enc2a").bias);
  t.a2a = relu(t.z2a);
  t.z2b = conv2d(t.a2a, ps.at("enc2b").kernel, ps.at("enc2b").bias);
  t.e2 = relu(t.z2b);

  {
    Pooled<S> p = maxpool2(t.e2);
    t.p2 = std::move(p.value);
    t.m2 = std::move(p.argmax);
  }
  t.zba = conv2d(t.p2, ps.at("bott_a").kernel, ps.at("bott_a").bias);
  t.aba = relu(t.zba);
  t.zbb = conv2d(t.aba, ps.at("bott_b").kernel, ps.at("bott_b").bias);
  t.abb = relu(t.zbb);
  t.zu2 = tconv2d(t.abb, ps.at("up2").kernel, ps.at("up2").bias);
  t.au2 = relu(t.zu2);
  t.cat2 = concat_channels(t.au2, t.e2);
  t.zd2a = conv2d(t.cat2, ps.at("dec2a").kernel, ps.at("dec2a").bias);
  t.ad2a = relu(t.zd2a);
  t.zd2b = conv2d(t.ad2a, ps.at("dec2b").kernel, ps.at("dec2b").bias);
  t.ad2b = relu(t.zd2b);
  t.zu1 = tconv2d(t.ad2b, ps.at("up1").kernel, ps.at("up1").bias);
  t.au1 = relu(t.zu1);
  t.cat1 = concat_channels(t.au1, t.s1);
  t.zd1a = conv2d(t.cat1, ps.at("dec1a").kernel, ps.at("dec1a").bias);
  t.ad1a = relu(t.zd1a);
  t.zd1b = conv2d(t.ad1a, ps.at("dec1b").kernel, ps.at("dec1b").bias);
  t.ad1b = relu(t.zd1b);
  t.logits_full = conv2d(t.ad1b, ps.at("head").kernel, ps.at("head").bias);

  t.zeu = tconv2d(t.e2, ps.at("ee_up").kernel, ps.at("ee_up").bias);
  t.aeu = relu(t.zeu);
  t.cate = concat_channels(t.aeu, t.s1);
  t.zea = conv2d(t.cate, ps.at("ee_a").kernel, ps.at("ee_a").bias);
  t.aea = relu(t.zea);
  t.zeb = conv2d(t.aea, ps.at("ee_b").kernel, ps.at("ee_b").bias);
  t.aeb = relu(t.zeb);
  t.logits_early = conv2d(t.aeb, ps.at("ee_head").kernel, ps.at("ee_head").bias);
  return t;
}

// Adjoint of dual_forward for the given output cotangents. Encoder gradients
// accumulate contributions from both heads (and the skip connections).
template <typename S>
ParameterSetT<S> dual_backward(const ParameterSetT<S>& ps, const ModelConfig& cfg, const DualTraceT<S>& t,
                               const TensorT<S>& g_early, const TensorT<S>& g_full) {
  (void)cfg;
  ParameterSetT<S> grads = zeros_like(ps);
  auto conv_back = [&](const char* name, const TensorT<S>& x, const TensorT<S>& g) {
    Conv2dGrads<S> cg = conv2d_backward(x, ps.at(name).kernel, g);
    auto& gl = grads.at(name);
    gl.kernel.array() += cg.d_kernel.array();
    gl.bias += cg.d_bias;
    return std::move(cg.d_input);
  };
  auto tconv_back = [&](const char* name, const TensorT<S>& x, const TensorT<S>& g) {
    TConv2dGrads<S> cg = tconv2d_backward(x, ps.at(name).kernel, g);
    auto& gl = grads.at(name);
    gl.kernel.array() += cg.d_kernel.array();
    gl.bias += cg.d_bias;
    return std::move(cg.d_input);
  };

  // Deep head.
  TensorT<S> d_ad1b = conv_back("head", t.ad1b, g_full);
  TensorT<S> d_ad1a = conv_back("dec1b", t.ad1a, relu_backward(t.zd1b, d_ad1b));
  TensorT<S> d_cat1 = conv_back("dec1a", t.cat1, relu_backward(t.zd1a, d_ad1a));
  auto [d_au1, d_s1_deep] = split_channels(d_cat1, t.au1.dim(0));
  TensorT<S> d_ad2b = tconv_back("up1", t.ad2b, relu_backward(t.zu1, d_au1));
  TensorT<S> d_ad2a = conv_back("dec2b", t.ad2a, relu_backward(t.zd2b, d_ad2b));
  TensorT<S> d_cat2 = conv_back("dec2a", t.cat2, relu_backward(t.zd2a, d_ad2a));
  auto [d_au2, d_e2_skip] = split_channels(d_cat2, t.au2.dim(0));
  TensorT<S> d_abb = tconv_back("up2", t.abb, relu_backward(t.zu2, d_au2));
  TensorT<S> d_aba = conv_back("bott_b", t.aba, relu_backward(t.zbb, d_abb));
  TensorT<S> d_p2 = conv_back("bott_a", t.p2, relu_backward(t.zba, d_aba));
  TensorT<S> d_e2_pool = maxpool2_backward(t.m2, d_p2, t.e2.dims());

  // Early head.
  TensorT<S> d_aeb = conv_back("ee_head", t.aeb, g_early);
  TensorT<S> d_aea = conv_back("ee_b", t.aea, relu_backward(t.zeb, d_aeb));
  TensorT<S> d_cate = conv_back("ee_a", t.cate, relu_backward(t.zea, d_aea));
  auto [d_aeu, d_s1_ee] = split_channels(d_cate, t.aeu.dim(0));
  TensorT<S> d_e2_ee = tconv_back("ee_up", t.e2, relu_backward(t.zeu, d_aeu));

  // Shared encoder.
  TensorT<S> d_e2(t.e2.dims());
  d_e2.array() = d_e2_skip.array() + d_e2_pool.array() + d_e2_ee.array();
  TensorT<S> d_a2a = conv_back("enc2b", t.a2a, relu_backward(t.z2b, d_e2));
  TensorT<S> d_p1 = conv_back("enc2a", t.p1, relu_backward(t.z2a, d_a2a));
  TensorT<S> d_s1_pool = maxpool2_backward(t.m1, d_p1, t.s1.dims());

  TensorT<S> d_s1(t.s1.dims());
  d_s1.array() = d_s1_deep.array() + d_s1_ee.array() + d_s1_pool.array();
  TensorT<S> d_a1a = conv_back("enc1b", t.a1a, relu_backward(t.z1b, d_s1));
  conv_back("enc1a", t.input, relu_backward(t.z1a, d_a1a));
  return grads;
}

}  // namespace eeseg
