#pragma once

#include <atomic>
#include <cmath>
#include <optional>
#include <string>

#include "swtr/nn.hpp"

namespace swtr {

// Token sequence laid out on a 2D grid: tokens[b, height * width, d_model].
template <typename T>
struct TokenGrid {
  Tensor<T> tokens;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t d_model() const { return tokens.dim(2); }
};

// Windows produced by window_partition: tokens[b * num_windows, w * w, d].
template <typename T>
struct WindowBatch {
  Tensor<T> tokens;
  std::size_t batch = 0;
  std::size_t height = 0;  // unpadded grid
  std::size_t width = 0;
  std::size_t window = 0;

  std::size_t padded_height() const { return (height + window - 1) / window * window; }
  std::size_t padded_width() const { return (width + window - 1) / window * window; }
  std::size_t num_windows() const { return padded_height() / window * (padded_width() / window); }
};

inline void check_window(std::size_t w) {
  require(w > 0, ErrorCode::kConfig, "window size must be positive");
}

// ---------------------------------------------------------------------------
// Data-movement index maps on [b, H*W, d] grids.

// Torus roll by (-s, -s): output cell (r, c) reads input cell ((r+s) % H, (c+s) % W).
// A negative shift rolls the other way.
inline IndexMap roll_map(std::size_t b, std::size_t h, std::size_t w, std::size_t d, std::int64_t s) {
  IndexMap m{{b, h * w, d}, std::vector<std::int64_t>(b * h * w * d)};
  const auto hh = static_cast<std::int64_t>(h), ww = static_cast<std::int64_t>(w);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::int64_t r = 0; r < hh; ++r)
      for (std::int64_t c = 0; c < ww; ++c) {
        const std::int64_t sr = ((r + s) % hh + hh) % hh;
        const std::int64_t sc = ((c + s) % ww + ww) % ww;
        const std::size_t dst = ((bi * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(c)) * d;
        const std::size_t src = ((bi * h + static_cast<std::size_t>(sr)) * w + static_cast<std::size_t>(sc)) * d;
        for (std::size_t k = 0; k < d; ++k) m.index[dst + k] = static_cast<std::int64_t>(src + k);
      }
  return m;
}

// [b, H*W, d] -> [b * nW, w*w, d]; cells outside the unpadded grid map to -1 (zero).
inline IndexMap partition_map(std::size_t b, std::size_t h, std::size_t w, std::size_t d, std::size_t win) {
  check_window(win);
  const std::size_t hp = (h + win - 1) / win * win, wp = (w + win - 1) / win * win;
  const std::size_t nwy = hp / win, nwx = wp / win, n = win * win;
  IndexMap m{{b * nwy * nwx, n, d}, std::vector<std::int64_t>(b * nwy * nwx * n * d)};
  std::size_t out = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t wy = 0; wy < nwy; ++wy)
      for (std::size_t wx = 0; wx < nwx; ++wx)
        for (std::size_t t = 0; t < n; ++t) {
          const std::size_t r = wy * win + t / win, c = wx * win + t % win;
          for (std::size_t k = 0; k < d; ++k, ++out)
            m.index[out] = (r < h && c < w) ? static_cast<std::int64_t>(((bi * h + r) * w + c) * d + k) : -1;
        }
  return m;
}

// Inverse of partition_map: crops the padding.
inline IndexMap reverse_map(std::size_t b, std::size_t h, std::size_t w, std::size_t d, std::size_t win) {
  check_window(win);
  const std::size_t wp = (w + win - 1) / win * win;
  const std::size_t nwx = wp / win, n = win * win;
  IndexMap m{{b, h * w, d}, std::vector<std::int64_t>(b * h * w * d)};
  const std::size_t nw = ((h + win - 1) / win) * nwx;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t win_idx = bi * nw + (r / win) * nwx + c / win;
        const std::size_t t = (r % win) * win + c % win;
        for (std::size_t k = 0; k < d; ++k)
          m.index[((bi * h + r) * w + c) * d + k] = static_cast<std::int64_t>((win_idx * n + t) * d + k);
      }
  return m;
}

template <typename T>
TokenGrid<T> cyclic_shift(const TokenGrid<T>& g, std::size_t s) {
  if (s == 0) return g;
  return {gather(g.tokens, roll_map(g.batch(), g.height, g.width, g.d_model(), static_cast<std::int64_t>(s))),
          g.height, g.width};
}

template <typename T>
TokenGrid<T> cyclic_unshift(const TokenGrid<T>& g, std::size_t s) {
  if (s == 0) return g;
  return {gather(g.tokens, roll_map(g.batch(), g.height, g.width, g.d_model(), -static_cast<std::int64_t>(s))),
          g.height, g.width};
}

template <typename T>
WindowBatch<T> window_partition(const TokenGrid<T>& g, std::size_t w) {
  check_window(w);
  return {gather(g.tokens, partition_map(g.batch(), g.height, g.width, g.d_model(), w)), g.batch(), g.height,
          g.width, w};
}

template <typename T>
TokenGrid<T> window_reverse(const WindowBatch<T>& wb) {
  const std::size_t d = wb.tokens.dim(2);
  return {gather(wb.tokens, reverse_map(wb.batch, wb.height, wb.width, d, wb.window)), wb.height, wb.width};
}

// ---------------------------------------------------------------------------
// Masks

inline constexpr double kMaskedScore = -1e9;

// Additive mask [nW, w*w, w*w] for windows over a (possibly shifted) grid of
// unpadded size h x w. Keys on padding cells are masked. With shift s > 0,
// cells that wrapped around during the roll (row >= h - s or col >= w - s)
// may only attend to cells that wrapped the same way.
template <typename T>
Tensor<T> build_attention_mask(std::size_t h, std::size_t w, std::size_t win, std::size_t s) {
  check_window(win);
  const std::size_t hp = (h + win - 1) / win * win, wp = (w + win - 1) / win * win;
  const std::size_t nwy = hp / win, nwx = wp / win, n = win * win;
  // Region label per padded cell; -1 marks padding.
  auto label = [&](std::size_t r, std::size_t c) -> int {
    if (r >= h || c >= w) return -1;
    const int ry = (s > 0 && r + s >= h) ? 1 : 0;
    const int rx = (s > 0 && c + s >= w) ? 1 : 0;
    return ry * 2 + rx;
  };
  std::vector<T> m(nwy * nwx * n * n, T(0));
  for (std::size_t wy = 0; wy < nwy; ++wy)
    for (std::size_t wx = 0; wx < nwx; ++wx) {
      T* mw = m.data() + (wy * nwx + wx) * n * n;
      for (std::size_t q = 0; q < n; ++q) {
        const int lq = label(wy * win + q / win, wx * win + q % win);
        for (std::size_t k = 0; k < n; ++k) {
          const int lk = label(wy * win + k / win, wx * win + k % win);
          const bool blocked = lk < 0 || (lq >= 0 && lq != lk);
          if (blocked && q != k) mw[q * n + k] = static_cast<T>(kMaskedScore);
        }
      }
    }
  return Tensor<T>::from({nwy * nwx, n, n}, std::move(m));
}

inline bool mask_is_trivial(std::size_t h, std::size_t w, std::size_t win, std::size_t s) {
  return s == 0 && h % win == 0 && w % win == 0;
}

// Relative offset index for a w x w window: [n, n] entries in [0, (2w-1)^2).
inline std::vector<std::size_t> relative_position_index(std::size_t win) {
  const std::size_t n = win * win, span = 2 * win - 1;
  std::vector<std::size_t> idx(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t dy = a / win + win - 1 - b / win;
      const std::size_t dx = a % win + win - 1 - b % win;
      idx[a * n + b] = dy * span + dx;
    }
  return idx;
}

// ---------------------------------------------------------------------------
// Windowed multi-head self-attention

struct SwinOptions {
  std::size_t d_model = 96;
  std::size_t heads = 3;
  std::size_t window = 7;
  std::size_t mlp_ratio = 4;
  bool rel_pos_bias = true;
  bool shift_mask = true;  // SW-MSA region masking; disabled only for equivariance probes
};

// Number of attention score entries computed (per head), summed over calls.
inline std::atomic<std::uint64_t>& attention_score_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

template <typename T>
struct WindowAttention {
  Linear<T> qkv;   // d -> 3d
  Linear<T> proj;  // d -> d
  Tensor<T> rel_bias_table;  // [(2w-1)^2, heads] or undefined
  std::size_t heads = 1;
  std::size_t window = 7;

  static WindowAttention make(ParameterStore<T>& ps, const std::string& name, const SwinOptions& o, Rng& rng) {
    require(o.heads > 0 && o.d_model % o.heads == 0, ErrorCode::kConfig,
            "d_model (" + std::to_string(o.d_model) + ") must be divisible by heads (" + std::to_string(o.heads) + ")");
    check_window(o.window);
    WindowAttention a;
    a.qkv = Linear<T>::make(ps, name + ".qkv", o.d_model, 3 * o.d_model, rng);
    a.proj = Linear<T>::make(ps, name + ".proj", o.d_model, o.d_model, rng);
    if (o.rel_pos_bias) {
      const std::size_t span = 2 * o.window - 1;
      a.rel_bias_table = ps.add(name + ".rel_pos_bias", init::trunc_normal<T>({span * span, o.heads}, 0.02, rng));
    }
    a.heads = o.heads;
    a.window = o.window;
    return a;
  }

  // Bias gathered to [heads, n, n].
  Tensor<T> relative_bias() const {
    const std::size_t n = window * window;
    const auto rel = relative_position_index(window);
    IndexMap m{{heads, n, n}, std::vector<std::int64_t>(heads * n * n)};
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n * n; ++i) m.index[h * n * n + i] = static_cast<std::int64_t>(rel[i] * heads + h);
    return gather(rel_bias_table, m);
  }
};

template <typename T>
struct AttentionOutput {
  Tensor<T> out;      // [B', n, d]
  Tensor<T> weights;  // [B', heads, n, n]
};

namespace detail {

// q, k, v: [B', heads, n, hd]. mask: [nW, n, n] or undefined, with B' = batch * nW.
template <typename T>
AttentionOutput<T> attend(const WindowAttention<T>& attn, const Tensor<T>& q, const Tensor<T>& k,
                          const Tensor<T>& v, const Tensor<T>& mask, std::size_t batch) {
  const std::size_t bw = q.dim(0), heads = q.dim(1), n = q.dim(2), hd = q.dim(3);
  attention_score_counter() += static_cast<std::uint64_t>(bw * n * n);
  Tensor<T> scores = scale(matmul(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  if (attn.rel_bias_table.defined()) scores = add_broadcast(scores, attn.relative_bias());
  if (mask.defined()) {
    const std::size_t nw = mask.dim(0);
    require(bw == batch * nw, ErrorCode::kDimension, "attention mask window count mismatch");
    std::vector<T> expanded(nw * heads * n * n);
    for (std::size_t w = 0; w < nw; ++w)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(mask.vec().data() + w * n * n, n * n, expanded.data() + (w * heads + h) * n * n);
    Tensor<T> m = Tensor<T>::from({nw, heads, n, n}, std::move(expanded));
    scores = reshape(add_broadcast(reshape(scores, {batch, nw, heads, n, n}), m), {bw, heads, n, n});
  }
  Tensor<T> weights = softmax(scores, 3);
  Tensor<T> ctx = matmul(weights, v);  // [B', heads, n, hd]
  Tensor<T> merged = gather(ctx, permute_map(ctx.shape(), {0, 2, 1, 3}));
  merged = reshape(merged, {bw, n, heads * hd});
  return {attn.proj(merged), weights};
}

// Splits qkv[B', n, 3d] into q, k, v of shape [B', heads, n, hd].
inline IndexMap qkv_split_map(std::size_t bw, std::size_t n, std::size_t d, std::size_t heads, std::size_t part) {
  const std::size_t hd = d / heads;
  IndexMap m{{bw, heads, n, hd}, std::vector<std::int64_t>(bw * n * d)};
  std::size_t out = 0;
  for (std::size_t b = 0; b < bw; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < hd; ++j, ++out)
          m.index[out] = static_cast<std::int64_t>((b * n + t) * 3 * d + part * d + h * hd + j);
  return m;
}

}  // namespace detail

// Multi-head attention inside each window: softmax(QK^T / sqrt(d/heads) + bias + mask) V,
// heads concatenated and output-projected.
template <typename T>
AttentionOutput<T> window_msa_with_weights(const WindowBatch<T>& wb, const WindowAttention<T>& attn,
                                           const Tensor<T>& mask) {
  const std::size_t bw = wb.tokens.dim(0), n = wb.tokens.dim(1), d = wb.tokens.dim(2);
  require(d % attn.heads == 0, ErrorCode::kConfig, "d_model must be divisible by heads");
  require(n == attn.window * attn.window || !attn.rel_bias_table.defined(), ErrorCode::kDimension,
          "window token count does not match the attention window");
  Tensor<T> qkv = attn.qkv(wb.tokens);
  Tensor<T> q = gather(qkv, detail::qkv_split_map(bw, n, d, attn.heads, 0));
  Tensor<T> k = gather(qkv, detail::qkv_split_map(bw, n, d, attn.heads, 1));
  Tensor<T> v = gather(qkv, detail::qkv_split_map(bw, n, d, attn.heads, 2));
  return detail::attend(attn, q, k, v, mask, wb.batch);
}

template <typename T>
WindowBatch<T> window_msa(const WindowBatch<T>& wb, const WindowAttention<T>& attn, const Tensor<T>& mask) {
  WindowBatch<T> out = wb;
  out.tokens = window_msa_with_weights(wb, attn, mask).out;
  return out;
}

// Shift -> partition -> attention -> reverse -> unshift over a normalized grid.
// The qkv projection runs on the grid and a single composed gather places
// q/k/v into windows, which is equivalent to partitioning first because
// padded keys are masked and padded queries are cropped.
template <typename T>
Tensor<T> shifted_window_attention(const TokenGrid<T>& g, const WindowAttention<T>& attn, std::size_t shift,
                                   bool use_mask) {
  const std::size_t b = g.batch(), h = g.height, w = g.width, d = g.d_model(), win = attn.window;
  const std::size_t hp = (h + win - 1) / win * win, wp = (w + win - 1) / win * win;
  const std::size_t nw = (hp / win) * (wp / win), n = win * win, bw = b * nw;
  Tensor<T> qkv = attn.qkv(g.tokens);  // [b, h*w, 3d]

  IndexMap to_windows = partition_map(b, h, w, 3 * d, win);
  if (shift > 0) to_windows = compose(roll_map(b, h, w, 3 * d, static_cast<std::int64_t>(shift)), to_windows);
  Tensor<T> qkv_win = gather(qkv, to_windows);  // [bw, n, 3d]
  Tensor<T> q = gather(qkv_win, detail::qkv_split_map(bw, n, d, attn.heads, 0));
  Tensor<T> k = gather(qkv_win, detail::qkv_split_map(bw, n, d, attn.heads, 1));
  Tensor<T> v = gather(qkv_win, detail::qkv_split_map(bw, n, d, attn.heads, 2));

  Tensor<T> mask;
  if (!mask_is_trivial(h, w, win, shift)) mask = build_attention_mask<T>(h, w, win, use_mask ? shift : 0);
  Tensor<T> out = detail::attend(attn, q, k, v, mask, b).out;  // [bw, n, d]

  IndexMap back = reverse_map(b, h, w, d, win);
  if (shift > 0) back = compose(back, roll_map(b, h, w, d, -static_cast<std::int64_t>(shift)));
  return gather(out, back);
}

// One W-MSA or SW-MSA transformer sub-block:
//   x = x + MSA(LN(x)); x = x + MLP(LN(x)), MLP = Linear(d, r*d) -> GELU -> Linear(r*d, d).
template <typename T>
struct SwinBlock {
  LayerNorm<T> norm1, norm2;
  WindowAttention<T> attn;
  Linear<T> fc1, fc2;
  std::size_t shift = 0;
  bool shift_mask = true;

  static SwinBlock make(ParameterStore<T>& ps, const std::string& name, const SwinOptions& o, std::size_t shift,
                        Rng& rng) {
    require(shift < o.window, ErrorCode::kConfig, "shift must be smaller than the window size");
    SwinBlock b;
    b.norm1 = LayerNorm<T>::make(ps, name + ".norm1", o.d_model);
    b.attn = WindowAttention<T>::make(ps, name + ".attn", o, rng);
    b.norm2 = LayerNorm<T>::make(ps, name + ".norm2", o.d_model);
    b.fc1 = Linear<T>::make(ps, name + ".mlp.fc1", o.d_model, o.mlp_ratio * o.d_model, rng);
    b.fc2 = Linear<T>::make(ps, name + ".mlp.fc2", o.mlp_ratio * o.d_model, o.d_model, rng);
    b.shift = shift;
    b.shift_mask = o.shift_mask;
    return b;
  }

  TokenGrid<T> operator()(const TokenGrid<T>& g) const {
    TokenGrid<T> normed{norm1(g.tokens), g.height, g.width};
    Tensor<T> x = add(g.tokens, shifted_window_attention(normed, attn, shift, shift_mask));
    Tensor<T> y = fc2(gelu(fc1(norm2(x))));
    return {add(x, y), g.height, g.width};
  }
};

// The two-sub-block SWIN unit: W-MSA block followed by an SW-MSA block.
template <typename T>
struct SwinBlockPair {
  SwinBlock<T> regular, shifted;

  static SwinBlockPair make(ParameterStore<T>& ps, const std::string& name, const SwinOptions& o, Rng& rng) {
    return {SwinBlock<T>::make(ps, name + ".wmsa", o, 0, rng),
            SwinBlock<T>::make(ps, name + ".swmsa", o, o.window / 2, rng)};
  }

  TokenGrid<T> operator()(const TokenGrid<T>& g) const { return shifted(regular(g)); }
};

// Per-cell linear map of an encoder feature map [b, c, H, W] to tokens [b, H*W, d].
template <typename T>
struct PatchProjection {
  Linear<T> proj;

  static PatchProjection make(ParameterStore<T>& ps, const std::string& name, std::size_t channels,
                              std::size_t d_model, Rng& rng) {
    return {Linear<T>::make(ps, name, channels, d_model, rng)};
  }

  TokenGrid<T> operator()(const Tensor<T>& feat) const {
    require(feat.rank() == 4, ErrorCode::kDimension, "linear_projection: expected [b,c,H,W], got " + shape_str(feat.shape()));
    const std::size_t b = feat.dim(0), c = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
    Tensor<T> seq = reshape(permute(reshape(feat, {b, c, h * w}), {0, 2, 1}), {b, h * w, c});
    return {proj(seq), h, w};
  }
};

template <typename T>
TokenGrid<T> linear_projection(const Tensor<T>& feat, const PatchProjection<T>& p) {
  return p(feat);
}

}  // namespace swtr
