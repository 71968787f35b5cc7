// Copyright 2026 The pastssm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "pastssm/autodiff/ops.hpp"
#include "pastssm/autodiff/optim.hpp"
#include "pastssm/autodiff/scan_op.hpp"
#include "pastssm/error.hpp"

namespace pastssm::ssm {

struct ModelConfig {
  std::string preset = "tiny";
  std::size_t layers = 24;
  std::size_t dim = 192;
  std::size_t patch = 16;
  std::size_t frames = 8;  // selected frames per sample
  std::size_t classes = 10;
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t state = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;

  std::size_t inner() const noexcept { return expand * dim; }
  std::size_t dt_rank() const noexcept { return (dim + 15) / 16; }
  std::size_t grid_h() const noexcept { return height / patch; }
  std::size_t grid_w() const noexcept { return width / patch; }
  std::size_t tokens_per_frame() const noexcept { return grid_h() * grid_w(); }
  std::size_t sequence_length() const noexcept { return 1 + frames * tokens_per_frame(); }

  void validate() const {
    if (patch == 0 || height % patch != 0 || width % patch != 0 || height == 0 || width == 0) {
      throw ShapeError("model: frame " + std::to_string(height) + "x" + std::to_string(width) +
                       " not divisible by patch size " + std::to_string(patch));
    }
    if (layers == 0 || dim == 0 || frames == 0 || classes == 0 || state == 0 || expand == 0 ||
        conv_width == 0) {
      throw ArgumentError("model: layers, dim, frames, classes, state, expand and conv width must be positive");
    }
  }

  /// Named size presets: tiny (24 x 192), small (24 x 384), middle (32 x 576).
  static ModelConfig from_preset(const std::string& name, std::size_t classes, std::size_t frames,
                                 std::size_t height = 224, std::size_t width = 224) {
    ModelConfig c;
    c.preset = name;
    c.classes = classes;
    c.frames = frames;
    c.height = height;
    c.width = width;
    if (name == "tiny") {
      c.layers = 24, c.dim = 192;
    } else if (name == "small") {
      c.layers = 24, c.dim = 384;
    } else if (name == "middle") {
      c.layers = 32, c.dim = 576;
    } else {
      throw ArgumentError("unknown model preset '" + name + "' (tiny, small, middle)");
    }
    return c;
  }
};

namespace detail {

/// Truncated normal on [-2 std, 2 std].
template <typename T>
std::vector<T> trunc_normal(std::size_t n, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(n);
  for (T& x : v) {
    double s;
    do s = dist(rng);
    while (std::abs(s) > 2.0);
    x = static_cast<T>(s * std);
  }
  return v;
}

template <typename T>
std::vector<T> uniform(std::size_t n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(dist(rng));
  return v;
}

}  // namespace detail

/// Input-dependent projections and continuous parameters of one scan
/// direction.
template <typename T>
struct SsmParams {
  ad::Tensor<T> x_proj;   // [inner, dt_rank + 2 * state]
  ad::Tensor<T> dt_proj;  // [dt_rank, inner]
  ad::Tensor<T> dt_bias;  // [inner]
  ad::Tensor<T> a_log;    // [inner, state], A = -exp(a_log)
  ad::Tensor<T> d;        // [inner]
};

/// Selective scan with input-derived step sizes and maps:
/// (dt, B, C) = x W_x;  delta = softplus(dt W_dt + b_dt);  y = scan(x).
template <typename T>
ad::Tensor<T> selective_scan(const ad::Tensor<T>& x, const SsmParams<T>& p) {
  const std::size_t rank = p.dt_proj.dim(0), ns = p.a_log.dim(1);
  const ad::Tensor<T> dbc = ad::matmul(x, p.x_proj);
  const ad::Tensor<T> dt = ad::slice_cols(dbc, 0, rank);
  const ad::Tensor<T> b = ad::slice_cols(dbc, rank, rank + ns);
  const ad::Tensor<T> c = ad::slice_cols(dbc, rank + ns, rank + 2 * ns);
  const ad::Tensor<T> delta = ad::softplus(ad::add_row_bias(ad::matmul(dt, p.dt_proj), p.dt_bias));
  return ad::selective_scan(x, delta, p.a_log, b, c, p.d);
}

template <typename T>
struct DirectionParams {
  ad::Tensor<T> conv_w;  // [inner, conv_width]
  ad::Tensor<T> conv_b;  // [inner]
  SsmParams<T> ssm;
};

template <typename T>
struct MambaBlockParams {
  ad::Tensor<T> norm;      // [dim]
  ad::Tensor<T> in_proj;   // [dim, 2 * inner]
  ad::Tensor<T> out_proj;  // [inner, dim]
  DirectionParams<T> forward, backward;
};

template <typename T>
ad::Tensor<T> direction_branch(const ad::Tensor<T>& x, const DirectionParams<T>& p) {
  return selective_scan(ad::silu(ad::depthwise_conv1d(x, p.conv_w, p.conv_b)), p.ssm);
}

/// Block output before the residual add: the scan branch runs over the
/// sequence in both directions with separate parameters, the two results
/// are averaged and gated by SiLU of the second half of the input projection.
template <typename T>
ad::Tensor<T> mamba_mixer(const ad::Tensor<T>& x, const MambaBlockParams<T>& p) {
  const std::size_t inner = p.out_proj.dim(0);
  const ad::Tensor<T> xz = ad::matmul(ad::rms_norm(x, p.norm), p.in_proj);
  const ad::Tensor<T> xs = ad::slice_cols(xz, 0, inner);
  const ad::Tensor<T> z = ad::slice_cols(xz, inner, 2 * inner);
  const ad::Tensor<T> fwd = direction_branch(xs, p.forward);
  const ad::Tensor<T> bwd = ad::reverse_rows(direction_branch(ad::reverse_rows(xs), p.backward));
  const ad::Tensor<T> merged = ad::scale(ad::add(fwd, bwd), T(0.5));
  return ad::matmul(ad::mul(merged, ad::silu(z)), p.out_proj);
}

template <typename T>
ad::Tensor<T> mamba_block(const ad::Tensor<T>& x, const MambaBlockParams<T>& p) {
  return ad::add(x, mamba_mixer(x, p));
}

/// Position-embedding row indices for a sequence [CLS, frame 0 tokens, ...]:
/// spatial slot i of every frame reads row 1 + i, CLS reads row 0; frame k
/// reads temporal row k and CLS reads none (-1).
inline std::pair<std::vector<std::ptrdiff_t>, std::vector<std::ptrdiff_t>> position_rows(std::size_t frames,
                                                                                         std::size_t hw) {
  std::vector<std::ptrdiff_t> spatial{0}, temporal{-1};
  for (std::size_t k = 0; k < frames; ++k)
    for (std::size_t i = 0; i < hw; ++i) {
      spatial.push_back(static_cast<std::ptrdiff_t>(1 + i));
      temporal.push_back(static_cast<std::ptrdiff_t>(k));
    }
  return {spatial, temporal};
}

/// [x_cls ; tokens] + spatial + temporal embeddings.
template <typename T>
ad::Tensor<T> assemble_sequence(const ad::Tensor<T>& tokens, const ad::Tensor<T>& cls,
                                const ad::Tensor<T>& pos_spatial, const ad::Tensor<T>& pos_temporal) {
  const std::size_t frames = pos_temporal.dim(0);
  const std::size_t hw = pos_spatial.dim(0) - 1;
  if (tokens.rank() != 2 || tokens.dim(0) != frames * hw || cls.shape() != ad::Shape{1, tokens.dim(1)} ||
      pos_spatial.dim(1) != tokens.dim(1) || pos_temporal.dim(1) != tokens.dim(1)) {
    throw ShapeError("assemble_sequence: tokens " + ad::to_string(tokens.shape()) + ", cls " +
                     ad::to_string(cls.shape()) + ", spatial " + ad::to_string(pos_spatial.shape()) +
                     ", temporal " + ad::to_string(pos_temporal.shape()));
  }
  auto [srows, trows] = position_rows(frames, hw);
  const ad::Tensor<T> pos = ad::add(ad::gather_rows(pos_spatial, std::move(srows)),
                                    ad::gather_rows(pos_temporal, std::move(trows)));
  return ad::add(ad::concat_rows(cls, tokens), pos);
}

/// Patch tokens of frames [K, H, W, 3] -> [K * (H/p) * (W/p), dim]; a
/// per-frame convolution with kernel and stride p written as a matmul.
template <typename T>
ad::Tensor<T> patch_embed(const ad::Tensor<T>& frames, const ad::Tensor<T>& weight, const ad::Tensor<T>& bias,
                          std::size_t patch) {
  if (frames.rank() != 4) throw ShapeError("patch_embed: expected [K,H,W,C], got " + ad::to_string(frames.shape()));
  return ad::add_row_bias(ad::matmul(ad::patchify(frames, patch), weight), bias);
}

/// Spatiotemporal classifier: patch embedding, class token, position
/// embeddings, bidirectional selective-scan blocks and a normalized linear
/// head read from the class token.
template <typename T>
class Classifier {
 public:
  Classifier(ad::ParamStore<T>& store, ModelConfig cfg, std::uint64_t seed, const std::string& prefix = "")
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.dim, e = cfg_.inner(), n = cfg_.state, r = cfg_.dt_rank();
    const std::size_t feat = cfg_.patch * cfg_.patch * 3;
    const auto add = [&](const std::string& name, ad::Shape shape, std::vector<T> v, bool decay) {
      return store.add(prefix + name, ad::Tensor<T>(std::move(shape), std::move(v)), decay);
    };
    patch_w_ = add("patch.weight", {feat, d}, detail::trunc_normal<T>(feat * d, 0.02, rng), true);
    patch_b_ = add("patch.bias", {d}, std::vector<T>(d, T(0)), false);
    cls_ = add("cls", {1, d}, detail::trunc_normal<T>(d, 0.02, rng), false);
    pos_s_ = add("pos.spatial", {1 + cfg_.tokens_per_frame(), d},
                 detail::trunc_normal<T>((1 + cfg_.tokens_per_frame()) * d, 0.02, rng), false);
    pos_t_ = add("pos.temporal", {cfg_.frames, d}, detail::trunc_normal<T>(cfg_.frames * d, 0.02, rng), false);
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string b = "blocks." + std::to_string(l) + ".";
      MambaBlockParams<T> p;
      p.norm = add(b + "norm", {d}, std::vector<T>(d, T(1)), false);
      p.in_proj = add(b + "in_proj", {d, 2 * e}, detail::uniform<T>(d * 2 * e, 1.0 / std::sqrt(double(d)), rng), true);
      const double out_bound = 1.0 / std::sqrt(double(e)) / std::sqrt(double(cfg_.layers));
      p.out_proj = add(b + "out_proj", {e, d}, detail::uniform<T>(e * d, out_bound, rng), true);
      for (auto* dir : {&p.forward, &p.backward}) {
        const std::string q = b + (dir == &p.forward ? "fwd." : "bwd.");
        const double conv_bound = 1.0 / std::sqrt(double(cfg_.conv_width));
        dir->conv_w = add(q + "conv.weight", {e, cfg_.conv_width},
                          detail::uniform<T>(e * cfg_.conv_width, conv_bound, rng), true);
        dir->conv_b = add(q + "conv.bias", {e}, detail::uniform<T>(e, conv_bound, rng), false);
        dir->ssm.x_proj = add(q + "x_proj", {e, r + 2 * n},
                              detail::uniform<T>(e * (r + 2 * n), 1.0 / std::sqrt(double(e)), rng), true);
        dir->ssm.dt_proj = add(q + "dt_proj", {r, e}, detail::uniform<T>(r * e, 1.0 / std::sqrt(double(r)), rng), true);
        std::vector<T> dt_bias(e);
        for (T& v : dt_bias) {
          const double dt = std::exp(log_dt(rng));
          v = static_cast<T>(dt + std::log(-std::expm1(-dt)));  // inverse softplus
        }
        dir->ssm.dt_bias = add(q + "dt_bias", {e}, std::move(dt_bias), false);
        std::vector<T> a_log(e * n);
        for (std::size_t i = 0; i < e; ++i)
          for (std::size_t j = 0; j < n; ++j) a_log[i * n + j] = static_cast<T>(std::log(double(j + 1)));
        dir->ssm.a_log = add(q + "a_log", {e, n}, std::move(a_log), false);
        dir->ssm.d = add(q + "d", {e}, std::vector<T>(e, T(1)), false);
      }
      blocks_.push_back(std::move(p));
    }
    head_norm_w_ = add("head.norm.weight", {d}, std::vector<T>(d, T(1)), false);
    head_norm_b_ = add("head.norm.bias", {d}, std::vector<T>(d, T(0)), false);
    head_w_ = add("head.weight", {d, cfg_.classes}, detail::trunc_normal<T>(d * cfg_.classes, 0.02, rng), true);
    head_b_ = add("head.bias", {cfg_.classes}, std::vector<T>(cfg_.classes, T(0)), false);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<MambaBlockParams<T>>& blocks() const noexcept { return blocks_; }
  std::vector<MambaBlockParams<T>>& blocks() noexcept { return blocks_; }

  ad::Tensor<T> embed(const ad::Tensor<T>& frames) const {
    check_frames(frames);
    return assemble_sequence(patch_embed(frames, patch_w_, patch_b_, cfg_.patch), cls_, pos_s_, pos_t_);
  }

  /// frames [K, H, W, 3] -> logits [1, classes]
  ad::Tensor<T> forward(const ad::Tensor<T>& frames) const {
    ad::Tensor<T> x = embed(frames);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      try {
        x = mamba_block(x, blocks_[l]);
      } catch (const NumericError& e) {
        throw NumericError("layer " + std::to_string(l) + ": " + e.what());
      }
    }
    const ad::Tensor<T> cls = ad::layer_norm(ad::slice_rows(x, 0, 1), head_norm_w_, head_norm_b_);
    return ad::add_row_bias(ad::matmul(cls, head_w_), head_b_);
  }

  /// Gradient-free logits for several samples, spread over `threads` workers.
  /// Each sample is computed independently, so the result does not depend on
  /// the thread count.
  std::vector<std::vector<T>> forward_batch(const std::vector<ad::Tensor<T>>& batch, std::size_t threads = 1) const {
    std::vector<std::vector<T>> out(batch.size());
    const auto work = [&](std::size_t begin, std::size_t step) {
      ad::NoGradScope<T> off;
      for (std::size_t i = begin; i < batch.size(); i += step) {
        const ad::Tensor<T> z = forward(batch[i]);
        out[i].assign(z.data().begin(), z.data().end());
      }
    };
    threads = std::max<std::size_t>(1, std::min(threads, batch.size()));
    if (threads == 1) {
      work(0, 1);
      return out;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
    return out;
  }

 private:
  void check_frames(const ad::Tensor<T>& frames) const {
    if (frames.rank() != 4 || frames.dim(0) != cfg_.frames || frames.dim(1) != cfg_.height ||
        frames.dim(2) != cfg_.width || frames.dim(3) != 3) {
      throw ShapeError("classifier: expected frames [" + std::to_string(cfg_.frames) + "," +
                       std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + ",3], got " +
                       ad::to_string(frames.shape()));
    }
  }

  ModelConfig cfg_;
  ad::Tensor<T> patch_w_, patch_b_, cls_, pos_s_, pos_t_;
  std::vector<MambaBlockParams<T>> blocks_;
  ad::Tensor<T> head_norm_w_, head_norm_b_, head_w_, head_b_;
};

/// Number of trainable scalars of a classifier built from `cfg`.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim, e = cfg.inner(), n = cfg.state, r = cfg.dt_rank();
  const std::size_t direction = e * cfg.conv_width + e + e * (r + 2 * n) + r * e + e + e * n + e;
  const std::size_t block = d + d * 2 * e + e * d + 2 * direction;
  const std::size_t embed = cfg.patch * cfg.patch * 3 * d + d + d + (1 + cfg.tokens_per_frame()) * d + cfg.frames * d;
  const std::size_t head = 2 * d + d * cfg.classes + cfg.classes;
  return embed + cfg.layers * block + head;
}

}  // namespace pastssm::ssm
