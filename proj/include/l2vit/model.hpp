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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "l2vit/attention.hpp"
#include "l2vit/locality.hpp"
#include "l2vit/params.hpp"
#include "l2vit/tensor.hpp"

namespace l2vit {

inline constexpr std::size_t kNumStages = 4;

/// Architecture of an L2ViT backbone and classifier.
struct ModelConfig {
  std::array<std::size_t, 2> stem_dims{48, 96};
  std::array<std::size_t, kNumStages> stage_dims{96, 192, 384, 768};
  std::array<std::size_t, kNumStages> stage_heads{3, 6, 12, 24};
  /// Number of (LWA, LGA) pairs per stage.
  std::array<std::size_t, kNumStages> stage_pairs{1, 1, 3, 1};
  std::size_t window = 7;
  std::size_t lcm_kernel = 7;
  double mlp_ratio = 4.0;
  std::size_t num_classes = 1000;
  double clamp_floor = kDefaultClampFloor;
  FeatureMap feature_map = FeatureMap::kRelu;
  double drop_path_rate = 0.0;

  static ModelConfig tiny();
  static ModelConfig small();
  static ModelConfig base();

  void validate() const;
  std::size_t mlp_hidden(std::size_t stage) const;
  std::size_t total_blocks() const;
};

struct MlpParams : Visitable<MlpParams> {
  LinearParams fc1;
  LinearParams fc2;

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    fc1.visit(join_name(prefix, "fc1"), fn);
    fc2.visit(join_name(prefix, "fc2"), fn);
  }
};

/// Local window attention block: CPE, pre-norm window softmax attention, MLP.
struct LwaBlockParams : Visitable<LwaBlockParams> {
  CpeParams cpe;
  NormParams norm1;
  LinearParams qkv;
  LinearParams proj;
  NormParams norm2;
  MlpParams mlp;

  static LwaBlockParams zeros(std::size_t dim, std::size_t hidden);

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    cpe.visit(join_name(prefix, "cpe"), fn);
    norm1.visit(join_name(prefix, "norm1"), fn);
    qkv.visit(join_name(prefix, "attn.qkv"), fn);
    proj.visit(join_name(prefix, "attn.proj"), fn);
    norm2.visit(join_name(prefix, "norm2"), fn);
    mlp.visit(join_name(prefix, "mlp"), fn);
  }
};

/// Linear global attention block: CPE, pre-norm multi-head linear attention,
/// residual LCM, MLP.
struct LgaBlockParams : Visitable<LgaBlockParams> {
  CpeParams cpe;
  NormParams norm1;
  LinearParams qkv;
  LinearParams proj;
  Tensor scale;  // [1], the learnable s
  LcmParams lcm;
  NormParams norm2;
  MlpParams mlp;

  static LgaBlockParams zeros(std::size_t dim, std::size_t hidden, std::size_t lcm_kernel);

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    cpe.visit(join_name(prefix, "cpe"), fn);
    norm1.visit(join_name(prefix, "norm1"), fn);
    qkv.visit(join_name(prefix, "attn.qkv"), fn);
    proj.visit(join_name(prefix, "attn.proj"), fn);
    fn(join_name(prefix, "attn.scale"), scale, ParamKind::kLearnable);
    lcm.visit(join_name(prefix, "lcm"), fn);
    norm2.visit(join_name(prefix, "norm2"), fn);
    mlp.visit(join_name(prefix, "mlp"), fn);
  }
};

/// Non-parameter settings shared by the blocks of one stage.
struct BlockOptions {
  std::size_t num_heads = 1;
  std::size_t window = 7;
  FeatureMap feature_map = FeatureMap::kRelu;
  double clamp_floor = kDefaultClampFloor;
};

struct StemParams : Visitable<StemParams> {
  ConvParams conv1;
  ConvParams conv2;
  NormParams norm;

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    conv1.visit(join_name(prefix, "conv1"), fn);
    conv2.visit(join_name(prefix, "conv2"), fn);
    norm.visit(join_name(prefix, "norm"), fn);
  }
};

struct MergeParams : Visitable<MergeParams> {
  ConvParams conv;
  NormParams norm;

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    conv.visit(join_name(prefix, "conv"), fn);
    norm.visit(join_name(prefix, "norm"), fn);
  }
};

struct BlockPair {
  LwaBlockParams local;
  LgaBlockParams global;
};

struct StageParams : Visitable<StageParams> {
  std::optional<MergeParams> merge;
  std::vector<BlockPair> pairs;

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    if (merge) merge->visit(join_name(prefix, "downsample"), fn);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      pairs[i].local.visit(join_name(prefix, "blocks." + std::to_string(2 * i)), fn);
      pairs[i].global.visit(join_name(prefix, "blocks." + std::to_string(2 * i + 1)), fn);
    }
  }
};

struct ModelParams : Visitable<ModelParams> {
  StemParams stem;
  std::vector<StageParams> stages;
  NormParams norm;
  LinearParams head;

  /// Zero weights, identity norms, s = sqrt(stage dim).
  static ModelParams allocate(const ModelConfig& cfg);

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    stem.visit(join_name(prefix, "stem"), fn);
    for (std::size_t i = 0; i < stages.size(); ++i)
      stages[i].visit(join_name(prefix, "stages." + std::to_string(i)), fn);
    norm.visit(join_name(prefix, "norm"), fn);
    head.visit(join_name(prefix, "head"), fn);
  }
};

/// Named tensors in lexicographic order.
class WeightStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void insert(const std::string& name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  Map tensors_;
};

WeightStore to_store(const ModelParams& params);
/// Builds structured parameters; every tensor the config needs must be present
/// with the exact shape, and no extra tensors are allowed.
ModelParams from_store(const ModelConfig& cfg, const WeightStore& store);

/// Deterministic initialization: truncated normal (std 0.02, cut at 2 std) for
/// conv and linear weights, norm/bias defaults, s = sqrt(C). Values are
/// rounded to float precision so they survive the on-disk format unchanged.
ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed);
WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed);

/// Exact number of learnable scalars (batch-norm statistics excluded).
std::uint64_t param_count(const ModelConfig& cfg);

BlockOptions block_options(const ModelConfig& cfg, std::size_t stage);

Tensor mlp_forward(const Tensor& x, const MlpParams& p);

/// Window-partitioned multi-head softmax attention on already-normalized
/// tokens, including the qkv and output projections.
Tensor window_attention(const Tensor& x, GridSize hw, const LinearParams& qkv,
                        const LinearParams& proj, std::size_t num_heads, std::size_t window);

/// Multi-head factored linear attention with projections; s is read from `scale`.
Tensor linear_global_attention(const Tensor& x, const LinearParams& qkv, const LinearParams& proj,
                               const Tensor& scale, const BlockOptions& opts);

/// What an LGA block sees, recorded for attention-map analysis.
struct LgaCapture {
  std::string name;
  GridSize hw;
  AttentionConfig attention;
  Tensor q;  // [N, C] before the feature map
  Tensor k;
  LcmParams lcm;
};

struct ForwardTrace {
  bool capture_attention = false;
  std::vector<std::string> blocks;  // "LWA" / "LGA" in execution order
  std::vector<LgaCapture> captures;
};

Tensor lwa_block(const Tensor& x, GridSize hw, const LwaBlockParams& p, const BlockOptions& opts);
Tensor lga_block(const Tensor& x, GridSize hw, const LgaBlockParams& p, const BlockOptions& opts,
                 LgaCapture* capture = nullptr);

/// Conv stem: [3, H, W] -> ([H/4 * W/4, C], (H/4, W/4)).
Tensor stem_forward(const Tensor& image, const StemParams& p, GridSize* out_hw);
/// 2x2 stride-2 conv + LN: [N, C] -> [N/4, 2C].
Tensor patch_merge(const Tensor& x, GridSize hw, const MergeParams& p, GridSize* out_hw);

/// Logits for one [3, H, W] image.
Tensor forward(const Tensor& image, const ModelConfig& cfg, const ModelParams& params,
               ForwardTrace* trace = nullptr);
Tensor forward(const Tensor& image, const ModelConfig& cfg, const WeightStore& store);

}  // namespace l2vit
