#pragma once

#include <array>
#include <string>
#include <vector>

#include "swtr/config.hpp"
#include "swtr/swin.hpp"
#include "swtr/volume.hpp"

namespace swtr {

// Architecture record. The encoder always downsamples by 16: stem conv
// (stride 2), max pool (stride 2), then three residual stages at strides
// 1, 2, 2. Skip taps sit at 1/2, 1/4 and 1/8 resolution.
struct SwtrConfig {
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t in_channels = 1;
  std::size_t num_classes = 3;
  // stem, stage 1 (1/4), stage 2 (1/8), stage 3 (1/16)
  std::vector<std::size_t> encoder_channels{32, 64, 128, 256};
  std::size_t blocks_per_stage = 1;
  std::size_t d_model = 96;
  std::size_t num_transformer_layers = 12;
  std::size_t heads = 3;
  std::size_t window_size = 7;
  std::size_t mlp_ratio = 4;
  bool rel_pos_bias = true;
  bool shift_mask = true;
  std::size_t num_skip_connections = 3;
  // decoder stages at 1/8, 1/4, 1/2, 1/1
  std::vector<std::size_t> decoder_channels{128, 64, 32, 16};
  std::uint64_t seed = 1;

  template <typename V>
  void visit(V& v) {
    v("input_height", input_height);
    v("input_width", input_width);
    v("in_channels", in_channels);
    v("num_classes", num_classes);
    v("encoder_channels", encoder_channels);
    v("blocks_per_stage", blocks_per_stage);
    v("d_model", d_model);
    v("num_transformer_layers", num_transformer_layers);
    v("heads", heads);
    v("window_size", window_size);
    v("mlp_ratio", mlp_ratio);
    v("rel_pos_bias", rel_pos_bias);
    v("shift_mask", shift_mask);
    v("num_skip_connections", num_skip_connections);
    v("decoder_channels", decoder_channels);
    v("seed", seed);
  }

  static constexpr std::size_t kDownsampling = 16;

  std::size_t grid_height() const { return input_height / kDownsampling; }
  std::size_t grid_width() const { return input_width / kDownsampling; }

  // Whether decoder stage i (0 = 1/8, 1 = 1/4, 2 = 1/2) concatenates its skip.
  // With k skips the k deepest taps stay, 1/8 first.
  bool skip_enabled(std::size_t decoder_stage) const { return decoder_stage < 3 && decoder_stage < num_skip_connections; }

  void validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
      fail(ErrorCode::kConfig, "model." + field + ": " + why);
    };
    if (input_height == 0 || input_height % kDownsampling != 0) bad("input_height", "must be a positive multiple of 16");
    if (input_width == 0 || input_width % kDownsampling != 0) bad("input_width", "must be a positive multiple of 16");
    if (in_channels == 0) bad("in_channels", "must be positive");
    if (num_classes < 2) bad("num_classes", "must be at least 2");
    if (encoder_channels.size() != 4) bad("encoder_channels", "needs 4 entries (stem, 1/4, 1/8, 1/16)");
    if (decoder_channels.size() != 4) bad("decoder_channels", "needs 4 entries (1/8, 1/4, 1/2, 1/1)");
    for (auto c : encoder_channels)
      if (c == 0) bad("encoder_channels", "entries must be positive");
    for (auto c : decoder_channels)
      if (c == 0) bad("decoder_channels", "entries must be positive");
    if (blocks_per_stage == 0) bad("blocks_per_stage", "must be positive");
    if (num_transformer_layers == 0 || num_transformer_layers % 2 != 0)
      bad("num_transformer_layers", "must be a positive even number (W-MSA/SW-MSA pairs)");
    if (heads == 0 || d_model % heads != 0) bad("heads", "must divide d_model");
    if (window_size == 0) bad("window_size", "must be positive");
    if (mlp_ratio == 0) bad("mlp_ratio", "must be positive");
    if (num_skip_connections > 3) bad("num_skip_connections", "must be at most 3");
  }

  SwinOptions swin_options() const {
    return {d_model, heads, window_size, mlp_ratio, rel_pos_bias, shift_mask};
  }
};

// Small configuration used for desk-scale phantom experiments.
inline SwtrConfig toy_config() {
  SwtrConfig c;
  c.input_height = 64;
  c.input_width = 64;
  c.encoder_channels = {16, 24, 32, 48};
  c.decoder_channels = {48, 32, 16, 16};
  return c;
}

template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, shortcut;  // shortcut undefined when shapes match

  static ResidualBlock make(ParameterStore<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                            std::size_t stride, Rng& rng) {
    ResidualBlock b;
    b.conv1 = Conv2d<T>::make(ps, name + ".conv1", in, out, 3, stride, 1, rng);
    b.conv2 = Conv2d<T>::make(ps, name + ".conv2", out, out, 3, 1, 1, rng);
    // Halved residual-branch init keeps activations bounded without normalization layers.
    for (auto& v : b.conv2.weight.data()) v *= T(0.5);
    if (in != out || stride != 1) b.shortcut = Conv2d<T>::make(ps, name + ".shortcut", in, out, 1, stride, 0, rng);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = conv2(relu(conv1(x)));
    Tensor<T> s = shortcut.weight.defined() ? shortcut(x) : x;
    return relu(add(y, s));
  }
};

// Intermediate activations of one forward pass.
template <typename T>
struct ForwardTrace {
  std::array<Tensor<T>, 3> skips;  // 1/2, 1/4, 1/8
  Tensor<T> encoder_out;           // 1/16
  TokenGrid<T> bottleneck;         // after the transformer stack and final norm
  Tensor<T> logits;
};

template <typename T>
class SwtrModel {
 public:
  explicit SwtrModel(SwtrConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.seed, 0x5377'7472ULL));
    const auto& ec = cfg_.encoder_channels;
    const auto& dc = cfg_.decoder_channels;
    stem_ = Conv2d<T>::make(params_, "encoder.stem", cfg_.in_channels, ec[0], 7, 2, 3, rng);
    const std::array<std::size_t, 3> strides{1, 2, 2};
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        const std::size_t in = b == 0 ? ec[s] : ec[s + 1];
        stages_[s].push_back(ResidualBlock<T>::make(params_,
                                                    "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                                                    in, ec[s + 1], b == 0 ? strides[s] : 1, rng));
      }
    projection_ = PatchProjection<T>::make(params_, "bottleneck.projection", ec[3], cfg_.d_model, rng);
    const SwinOptions so = cfg_.swin_options();
    for (std::size_t p = 0; p < cfg_.num_transformer_layers / 2; ++p)
      pairs_.push_back(SwinBlockPair<T>::make(params_, "bottleneck.pair" + std::to_string(p), so, rng));
    final_norm_ = LayerNorm<T>::make(params_, "bottleneck.norm", cfg_.d_model);

    // Decoder stage i upsamples to 1/8, 1/4, 1/2, 1/1 and may concatenate the
    // skip at that scale (stem 1/2 -> ec[0], stage1 1/4 -> ec[1], stage2 1/8 -> ec[2]).
    const std::array<std::size_t, 3> skip_ch{ec[2], ec[1], ec[0]};
    std::size_t in_ch = cfg_.d_model;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t cat = cfg_.skip_enabled(i) ? skip_ch[i] : 0;
      decoder_[i] = Conv2d<T>::make(params_, "decoder.stage" + std::to_string(i + 1) + ".conv", in_ch + cat, dc[i], 3, 1,
                                    1, rng);
      in_ch = dc[i];
    }
    head_ = Conv2d<T>::make(params_, "head.conv", in_ch, cfg_.num_classes, 1, 1, 0, rng);
    {
      Tensor<T> w = init::trunc_normal<T>(head_.weight.shape(), 0.02, rng);
      std::copy(w.vec().begin(), w.vec().end(), head_.weight.vec().begin());
    }
  }

  // Parameters are shared handles, so a copy would alias the weights.
  SwtrModel(const SwtrModel&) = delete;
  SwtrModel& operator=(const SwtrModel&) = delete;
  SwtrModel(SwtrModel&&) noexcept = default;
  SwtrModel& operator=(SwtrModel&&) noexcept = default;

  const SwtrConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }

  // Logits [b, num_classes, H, W] for input [b, in_channels, H, W].
  Tensor<T> forward(const Tensor<T>& x) const { return forward_trace(x).logits; }

  ForwardTrace<T> forward_trace(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.input_height ||
        x.dim(3) != cfg_.input_width)
      fail(ErrorCode::kDimension, "forward: input " + shape_str(x.shape()) + " does not match configured [b," +
                                      std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.input_height) +
                                      "," + std::to_string(cfg_.input_width) + "]");
    ForwardTrace<T> tr;
    Tensor<T> h = relu(stem_(x));
    tr.skips[0] = h;
    h = maxpool2d(h, 3, 2, 1);
    for (std::size_t s = 0; s < 3; ++s) {
      for (const auto& blk : stages_[s]) h = blk(h);
      if (s < 2) tr.skips[s + 1] = h;
    }
    tr.encoder_out = h;
    TokenGrid<T> g = projection_(h);
    g = run_transformer(g);
    g.tokens = final_norm_(g.tokens);
    tr.bottleneck = g;

    const std::size_t b = x.dim(0);
    Tensor<T> f = reshape(permute(g.tokens, {0, 2, 1}), {b, cfg_.d_model, g.height, g.width});
    for (std::size_t i = 0; i < 4; ++i) {
      f = upsample2x(f);
      if (cfg_.skip_enabled(i)) f = concat_channels(f, tr.skips[2 - i]);
      f = relu(decoder_[i](f));
    }
    tr.logits = head_(f);
    return tr;
  }

  TokenGrid<T> run_transformer(TokenGrid<T> g) const {
    for (const auto& p : pairs_) g = p(g);
    return g;
  }

  const PatchProjection<T>& projection() const { return projection_; }
  const Conv2d<T>& head() const { return head_; }
  const std::vector<SwinBlockPair<T>>& pairs() const { return pairs_; }

 private:
  SwtrConfig cfg_;
  ParameterStore<T> params_;
  Conv2d<T> stem_;
  std::array<std::vector<ResidualBlock<T>>, 3> stages_;
  PatchProjection<T> projection_;
  std::vector<SwinBlockPair<T>> pairs_;
  LayerNorm<T> final_norm_;
  std::array<Conv2d<T>, 4> decoder_;
  Conv2d<T> head_;
};

template <typename T>
SwtrModel<T> build(const SwtrConfig& cfg) {
  return SwtrModel<T>(cfg);
}

// FNV-1a over every parameter's bytes in registration order.
template <typename T>
std::uint64_t parameter_checksum(const ParameterStore<T>& ps) {
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const auto& [name, t] : ps.items()) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.vec().data(), t.size() * sizeof(T), h);
  }
  return h;
}

// Per-pixel argmax over classes; ties go to the lowest class index.
template <typename T>
std::vector<std::uint8_t> argmax_classes(const Tensor<T>& logits, std::size_t item) {
  const std::size_t c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<std::uint8_t> out(hw, 0);
  const T* base = logits.vec().data() + item * c * hw;
  for (std::size_t p = 0; p < hw; ++p) {
    T best = base[p];
    std::uint8_t arg = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (base[k * hw + p] > best) {
        best = base[k * hw + p];
        arg = static_cast<std::uint8_t>(k);
      }
    out[p] = arg;
  }
  return out;
}

// Slice-wise prediction stacked into a labeled 3D mask. Softmax is monotone,
// so the argmax is taken on logits directly.
template <typename T>
VoxelMask predict_mask(const SwtrModel<T>& model, const VolumeImage& volume, std::size_t batch = 8) {
  const auto& cfg = model.config();
  if (volume.dims.ny != cfg.input_height || volume.dims.nx != cfg.input_width)
    fail(ErrorCode::kDimension, "predict_mask: slices are " + std::to_string(volume.dims.ny) + "x" +
                                    std::to_string(volume.dims.nx) + ", model expects " +
                                    std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
  NoGradGuard no_grad;
  VoxelMask mask(volume.dims, volume.spacing);
  const std::size_t hw = volume.slice_size();
  batch = std::max<std::size_t>(1, batch);
  for (std::size_t z0 = 0; z0 < volume.dims.nz; z0 += batch) {
    const std::size_t nb = std::min(batch, volume.dims.nz - z0);
    std::vector<T> in(nb * hw);
    for (std::size_t i = 0; i < nb * hw; ++i) in[i] = static_cast<T>(volume.data[z0 * hw + i]);
    Tensor<T> logits = model.forward(Tensor<T>::from({nb, 1, cfg.input_height, cfg.input_width}, std::move(in)));
    for (std::size_t i = 0; i < nb; ++i) {
      auto labels = argmax_classes(logits, i);
      std::copy(labels.begin(), labels.end(), mask.data.begin() + static_cast<std::ptrdiff_t>((z0 + i) * hw));
    }
  }
  return mask;
}

}  // namespace swtr
