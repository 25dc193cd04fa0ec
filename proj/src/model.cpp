// Copyright 2026 The l2vit Authors.
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

#include "l2vit/model.hpp"

#include <cmath>
#include <set>

#include "l2vit/numerics.hpp"
#include "l2vit/parallel.hpp"
#include "l2vit/random.hpp"

namespace l2vit {

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::small() {
  ModelConfig cfg;
  cfg.stage_pairs = {1, 1, 9, 1};
  return cfg;
}

ModelConfig ModelConfig::base() {
  ModelConfig cfg;
  cfg.stem_dims = {64, 128};
  cfg.stage_dims = {128, 256, 512, 1024};
  cfg.stage_heads = {4, 8, 16, 32};
  cfg.stage_pairs = {1, 1, 9, 1};
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); };
  if (stem_dims[0] == 0 || stem_dims[1] != stage_dims[0]) {
    fail("stem output width must equal the stage-1 dim");
  }
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (stage_dims[i] == 0 || stage_heads[i] == 0 || stage_pairs[i] == 0) {
      fail("stage dims, heads and pair counts must be positive");
    }
    if (stage_dims[i] % stage_heads[i] != 0) {
      fail("stage " + std::to_string(i + 1) + ": heads must divide dim");
    }
    if (i + 1 < kNumStages && (stage_dims[i + 1] != 2 * stage_dims[i] ||
                               stage_heads[i + 1] != 2 * stage_heads[i])) {
      fail("stage dims and heads must double from one stage to the next");
    }
  }
  if (window == 0) fail("window must be positive");
  if (lcm_kernel == 0 || lcm_kernel % 2 == 0) fail("LCM kernel must be odd");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (num_classes == 0) fail("num_classes must be positive");
  if (!(clamp_floor >= kMinClampFloor)) fail("clamp floor must be >= 1e-6");
  if (drop_path_rate != 0.0) fail("drop_path_rate must be 0 at inference");
}

std::size_t ModelConfig::mlp_hidden(std::size_t stage) const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(stage_dims[stage]) * mlp_ratio));
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (auto p : stage_pairs) n += 2 * p;
  return n;
}

LwaBlockParams LwaBlockParams::zeros(std::size_t dim, std::size_t hidden) {
  LwaBlockParams p;
  p.cpe = CpeParams::zeros(dim);
  p.norm1 = NormParams::identity(dim);
  p.qkv = LinearParams::zeros(dim, 3 * dim);
  p.proj = LinearParams::zeros(dim, dim);
  p.norm2 = NormParams::identity(dim);
  p.mlp.fc1 = LinearParams::zeros(dim, hidden);
  p.mlp.fc2 = LinearParams::zeros(hidden, dim);
  return p;
}

LgaBlockParams LgaBlockParams::zeros(std::size_t dim, std::size_t hidden, std::size_t lcm_kernel) {
  LgaBlockParams p;
  p.cpe = CpeParams::zeros(dim);
  p.norm1 = NormParams::identity(dim);
  p.qkv = LinearParams::zeros(dim, 3 * dim);
  p.proj = LinearParams::zeros(dim, dim);
  p.scale = Tensor({1}, AttentionConfig::initial_scale(dim));
  p.lcm = LcmParams::zeros(dim, lcm_kernel);
  p.norm2 = NormParams::identity(dim);
  p.mlp.fc1 = LinearParams::zeros(dim, hidden);
  p.mlp.fc2 = LinearParams::zeros(hidden, dim);
  return p;
}

ModelParams ModelParams::allocate(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams m;
  const auto [d1, c0] = cfg.stem_dims;
  m.stem.conv1 = ConvParams::zeros(ConvSpec{3, d1, 3, 3, 2, 1, 1});
  m.stem.conv2 = ConvParams::zeros(ConvSpec{d1, c0, 3, 3, 2, 1, 1});
  m.stem.norm = NormParams::identity(c0);
  m.stages.resize(kNumStages);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t dim = cfg.stage_dims[s];
    auto& stage = m.stages[s];
    if (s > 0) {
      MergeParams merge;
      merge.conv = ConvParams::zeros(ConvSpec{cfg.stage_dims[s - 1], dim, 2, 2, 2, 0, 1});
      merge.norm = NormParams::identity(dim);
      stage.merge = std::move(merge);
    }
    for (std::size_t i = 0; i < cfg.stage_pairs[s]; ++i) {
      stage.pairs.push_back(BlockPair{LwaBlockParams::zeros(dim, cfg.mlp_hidden(s)),
                                      LgaBlockParams::zeros(dim, cfg.mlp_hidden(s), cfg.lcm_kernel)});
    }
  }
  m.norm = NormParams::identity(cfg.stage_dims.back());
  m.head = LinearParams::zeros(cfg.stage_dims.back(), cfg.num_classes);
  return m;
}

void WeightStore::insert(const std::string& name, Tensor tensor) {
  if (name.empty()) throw Error(ErrorCode::kInvalidArgument, "weight store: empty tensor name");
  if (!tensors_.emplace(name, std::move(tensor)).second) {
    throw Error(ErrorCode::kInvalidArgument, "weight store: duplicate tensor '" + name + "'");
  }
}

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw Error(ErrorCode::kMissingWeight, "weight store: missing tensor '" + name + "'");
  }
  return it->second;
}

WeightStore to_store(const ModelParams& params) {
  WeightStore store;
  params.visit("", [&](const std::string& name, const Tensor& t, ParamKind) {
    store.insert(name, t);
  });
  return store;
}

ModelParams from_store(const ModelConfig& cfg, const WeightStore& store) {
  ModelParams params = ModelParams::allocate(cfg);
  std::set<std::string> used;
  params.visit("", [&](const std::string& name, Tensor& t, ParamKind) {
    const Tensor& src = store.get(name);
    if (src.shape() != t.shape()) {
      throw Error(ErrorCode::kDimension, "weight '" + name + "': expected " +
                                             shape_string(t.shape()) + ", found " +
                                             shape_string(src.shape()));
    }
    t = src;
    used.insert(name);
  });
  if (used.size() != store.size()) {
    for (const auto& [name, t] : store) {
      if (!used.count(name)) {
        throw Error(ErrorCode::kInvalidArgument, "weight store: unexpected tensor '" + name + "'");
      }
    }
  }
  return params;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Conv and linear weights are the rank >= 2 tensors named "*.weight".
bool is_matrix_weight(const std::string& name, const Tensor& t) {
  return t.rank() >= 2 && ends_with(name, ".weight");
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams params = ModelParams::allocate(cfg);
  Rng rng(seed);
  params.visit("", [&](const std::string& name, Tensor& t, ParamKind) {
    if (is_matrix_weight(name, t)) {
      for (auto& v : t.data()) v = rng.truncated_normal(0.02);
    }
    for (auto& v : t.data()) v = round_to_float(v);
  });
  return params;
}

WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  return to_store(init_model_params(cfg, seed));
}

std::uint64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t d1 = cfg.stem_dims[0], c0 = cfg.stem_dims[1];
  const std::uint64_t k2 = cfg.lcm_kernel * cfg.lcm_kernel;
  auto linear = [](std::uint64_t in, std::uint64_t out) { return in * out + out; };
  auto norm = [](std::uint64_t c) { return 2 * c; };
  auto dwconv = [](std::uint64_t c, std::uint64_t taps) { return c * taps + c; };

  std::uint64_t total = 3 * d1 * 9 + d1 + d1 * c0 * 9 + c0 + norm(c0);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::uint64_t c = cfg.stage_dims[s], hidden = cfg.mlp_hidden(s);
    if (s > 0) total += cfg.stage_dims[s - 1] * c * 4 + c + norm(c);
    const std::uint64_t shared = dwconv(c, 9) + norm(c) + linear(c, 3 * c) + linear(c, c) +
                                 norm(c) + linear(c, hidden) + linear(hidden, c);
    const std::uint64_t lcm = norm(c) + dwconv(c, k2) + 2 * c + dwconv(c, k2);
    total += cfg.stage_pairs[s] * (2 * shared + lcm + 1);
  }
  const std::uint64_t last = cfg.stage_dims.back();
  return total + norm(last) + linear(last, cfg.num_classes);
}

BlockOptions block_options(const ModelConfig& cfg, std::size_t stage) {
  return BlockOptions{cfg.stage_heads[stage], cfg.window, cfg.feature_map, cfg.clamp_floor};
}

Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  const Tensor hidden = activation(linear(x, p.fc1.weight, p.fc1.bias), Activation::kGelu);
  return linear(hidden, p.fc2.weight, p.fc2.bias);
}

Tensor window_attention(const Tensor& x, GridSize hw, const LinearParams& qkv,
                        const LinearParams& proj, std::size_t num_heads, std::size_t window) {
  const WindowLayout layout{hw.height, hw.width, window};
  const std::size_t c = x.dim(1);
  if (c % num_heads != 0) throw Error(ErrorCode::kDimension, "window_attention: heads must divide C");
  const Tensor windows = window_partition(x, layout);
  const std::size_t nw = layout.num_windows(), t = layout.window_tokens();
  const Tensor qkv_out = linear(windows.reshaped({nw * t, c}), qkv.weight, qkv.bias);
  const double qk_scale = 1.0 / std::sqrt(static_cast<double>(c / num_heads));
  const HeadOp op = [qk_scale](const Tensor& q, const Tensor& k, const Tensor& v) {
    return softmax_attention(q, k, v, qk_scale);
  };

  Tensor attended({nw * t, c});
  parallel_for(nw, [&](std::size_t w) {
    Tensor rows({t, 3 * c});
    std::copy(qkv_out.raw() + w * t * 3 * c, qkv_out.raw() + (w + 1) * t * 3 * c, rows.raw());
    const Tensor out = multi_head(op, slice_columns(rows, 0, c), slice_columns(rows, c, 2 * c),
                                  slice_columns(rows, 2 * c, 3 * c), num_heads);
    std::copy(out.raw(), out.raw() + t * c, attended.raw() + w * t * c);
  });
  const Tensor projected = linear(attended, proj.weight, proj.bias);
  return window_reverse(projected.reshaped({nw, t, c}), layout);
}

namespace {

AttentionConfig lga_attention_config(std::size_t channels, const Tensor& scale,
                                     const BlockOptions& opts) {
  AttentionConfig cfg;
  cfg.num_heads = opts.num_heads;
  cfg.head_dim = channels / opts.num_heads;
  cfg.feature_map = opts.feature_map;
  cfg.clamp_floor = opts.clamp_floor;
  cfg.scale = scale[0];
  return cfg;
}

}  // namespace

Tensor linear_global_attention(const Tensor& x, const LinearParams& qkv, const LinearParams& proj,
                               const Tensor& scale, const BlockOptions& opts) {
  const std::size_t c = x.dim(1);
  const AttentionConfig cfg = lga_attention_config(c, scale, opts);
  const Tensor qkv_out = linear(x, qkv.weight, qkv.bias);
  const HeadOp op = [&cfg](const Tensor& q, const Tensor& k, const Tensor& v) {
    return linear_attention_factored(q, k, v, cfg);
  };
  return multi_head(op, slice_columns(qkv_out, 0, c), slice_columns(qkv_out, c, 2 * c),
                    slice_columns(qkv_out, 2 * c, 3 * c), opts.num_heads, proj.weight, proj.bias);
}

Tensor lwa_block(const Tensor& x, GridSize hw, const LwaBlockParams& p, const BlockOptions& opts) {
  Tensor y = cpe_forward(x, hw, p.cpe);
  add_inplace(y, window_attention(layer_norm(y, p.norm1.gamma, p.norm1.beta), hw, p.qkv, p.proj,
                                  opts.num_heads, opts.window));
  add_inplace(y, mlp_forward(layer_norm(y, p.norm2.gamma, p.norm2.beta), p.mlp));
  return y;
}

Tensor lga_block(const Tensor& x, GridSize hw, const LgaBlockParams& p, const BlockOptions& opts,
                 LgaCapture* capture) {
  Tensor y = cpe_forward(x, hw, p.cpe);
  const Tensor normed = layer_norm(y, p.norm1.gamma, p.norm1.beta);
  if (capture) {
    const std::size_t c = y.dim(1);
    const Tensor qkv_out = linear(normed, p.qkv.weight, p.qkv.bias);
    capture->hw = hw;
    capture->attention = lga_attention_config(c, p.scale, opts);
    capture->q = slice_columns(qkv_out, 0, c);
    capture->k = slice_columns(qkv_out, c, 2 * c);
    capture->lcm = p.lcm;
  }
  add_inplace(y, linear_global_attention(normed, p.qkv, p.proj, p.scale, opts));
  y = lcm_residual(y, hw, p.lcm);
  add_inplace(y, mlp_forward(layer_norm(y, p.norm2.gamma, p.norm2.beta), p.mlp));
  return y;
}

Tensor stem_forward(const Tensor& image, const StemParams& p, GridSize* out_hw) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw Error(ErrorCode::kDimension, "stem: expected a [3, H, W] image, got " +
                                           shape_string(image.shape()));
  }
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0) {
    throw Error(ErrorCode::kDimension, "stem: H and W must be divisible by 4");
  }
  Tensor h = activation(conv2d(image, p.conv1.weight, p.conv1.bias, p.conv1.spec), Activation::kGelu);
  h = conv2d(h, p.conv2.weight, p.conv2.bias, p.conv2.spec);
  const GridSize hw{h.dim(1), h.dim(2)};
  if (out_hw) *out_hw = hw;
  return layer_norm(image_to_tokens(h), p.norm.gamma, p.norm.beta);
}

Tensor patch_merge(const Tensor& x, GridSize hw, const MergeParams& p, GridSize* out_hw) {
  if (hw.height % 2 != 0 || hw.width % 2 != 0) {
    throw Error(ErrorCode::kDimension, "patch_merge: H and W must be even");
  }
  const Tensor merged =
      conv2d(tokens_to_image(x, hw.height, hw.width), p.conv.weight, p.conv.bias, p.conv.spec);
  if (out_hw) *out_hw = GridSize{merged.dim(1), merged.dim(2)};
  return layer_norm(image_to_tokens(merged), p.norm.gamma, p.norm.beta);
}

Tensor forward(const Tensor& image, const ModelConfig& cfg, const ModelParams& params,
               ForwardTrace* trace) {
  cfg.validate();
  GridSize hw;
  Tensor x = stem_forward(image, params.stem, &hw);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto& stage = params.stages.at(s);
    if (stage.merge) x = patch_merge(x, hw, *stage.merge, &hw);
    const BlockOptions opts = block_options(cfg, s);
    for (std::size_t i = 0; i < stage.pairs.size(); ++i) {
      x = lwa_block(x, hw, stage.pairs[i].local, opts);
      LgaCapture* capture = nullptr;
      if (trace) {
        trace->blocks.push_back("LWA");
        trace->blocks.push_back("LGA");
        if (trace->capture_attention) {
          trace->captures.push_back(LgaCapture{});
          capture = &trace->captures.back();
          capture->name = "stages." + std::to_string(s) + ".blocks." + std::to_string(2 * i + 1);
        }
      }
      x = lga_block(x, hw, stage.pairs[i].global, opts, capture);
    }
  }
  const Tensor pooled = global_avg_pool(layer_norm(x, params.norm.gamma, params.norm.beta));
  return linear(pooled.reshaped({1, pooled.size()}), params.head.weight, params.head.bias)
      .reshaped({cfg.num_classes});
}

Tensor forward(const Tensor& image, const ModelConfig& cfg, const WeightStore& store) {
  return forward(image, cfg, from_store(cfg, store));
}

}  // namespace l2vit
