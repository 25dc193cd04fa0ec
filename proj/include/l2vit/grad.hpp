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

// Reverse-mode vector-Jacobian products, one closed-form adjoint per forward
// operation. Each *_backward takes the forward inputs and the output cotangent
// `dy`, recomputes whatever intermediates it needs, accumulates parameter
// gradients into `grad` (same layout as the parameters, see zeros_like) and
// returns the input cotangent.

#include <cstddef>
#include <limits>

#include "l2vit/attention.hpp"
#include "l2vit/locality.hpp"
#include "l2vit/model.hpp"
#include "l2vit/params.hpp"
#include "l2vit/tensor.hpp"

namespace l2vit {

/// Records how close the evaluation point sits to a non-differentiable point:
/// relu/leaky-relu inputs near zero and linear-attention denominators near the
/// clamp floor.
struct KinkTracker {
  double min_gap = std::numeric_limits<double>::infinity();
  void observe(double gap) {
    if (gap < min_gap) min_gap = gap;
  }
};

Tensor linear_backward(const Tensor& x, const LinearParams& p, const Tensor& dy, LinearParams* grad);
Tensor layer_norm_backward(const Tensor& x, const NormParams& p, const Tensor& dy, NormParams* grad);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);
Tensor conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy, ConvParams* grad);
Tensor batch_norm_backward(const Tensor& x, const BatchNormParams& p, const Tensor& dy,
                           BatchNormParams* grad);
Tensor feature_map_backward(const Tensor& x, FeatureMap kind, const Tensor& dy,
                            KinkTracker* kinks = nullptr);

struct AttentionGrads {
  Tensor dq;
  Tensor dk;
  Tensor dv;
  double ds = 0.0;  // d/ds, factored linear attention only
};

AttentionGrads softmax_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                                          double qk_scale, const Tensor& dy);
/// Single-head adjoint of linear_attention_factored, including the scale s.
AttentionGrads linear_attention_factored_backward(const Tensor& q, const Tensor& k,
                                                  const Tensor& v, const AttentionConfig& cfg,
                                                  const Tensor& dy, KinkTracker* kinks = nullptr);

Tensor lcm_backward(const Tensor& x, GridSize hw, const LcmParams& p, const Tensor& dy,
                    LcmParams* grad);
Tensor lcm_residual_backward(const Tensor& x, GridSize hw, const LcmParams& p, const Tensor& dy,
                             LcmParams* grad);
Tensor cpe_backward(const Tensor& x, GridSize hw, const CpeParams& p, const Tensor& dy,
                    CpeParams* grad);
Tensor mlp_backward(const Tensor& x, const MlpParams& p, const Tensor& dy, MlpParams* grad);

Tensor window_attention_backward(const Tensor& x, GridSize hw, const LinearParams& qkv,
                                 const LinearParams& proj, std::size_t num_heads,
                                 std::size_t window, const Tensor& dy, LinearParams* grad_qkv,
                                 LinearParams* grad_proj);
Tensor linear_global_attention_backward(const Tensor& x, const LinearParams& qkv,
                                        const LinearParams& proj, const Tensor& scale,
                                        const BlockOptions& opts, const Tensor& dy,
                                        LinearParams* grad_qkv, LinearParams* grad_proj,
                                        Tensor* grad_scale, KinkTracker* kinks = nullptr);

Tensor lwa_block_backward(const Tensor& x, GridSize hw, const LwaBlockParams& p,
                          const BlockOptions& opts, const Tensor& dy, LwaBlockParams* grad);
Tensor lga_block_backward(const Tensor& x, GridSize hw, const LgaBlockParams& p,
                          const BlockOptions& opts, const Tensor& dy, LgaBlockParams* grad,
                          KinkTracker* kinks = nullptr);

Tensor stem_backward(const Tensor& image, const StemParams& p, const Tensor& dy, StemParams* grad);
Tensor patch_merge_backward(const Tensor& x, GridSize hw, const MergeParams& p, const Tensor& dy,
                            MergeParams* grad);

/// Adjoint of forward(): accumulates into `grad` and returns d(image).
Tensor model_backward(const Tensor& image, const ModelConfig& cfg, const ModelParams& params,
                      const Tensor& dlogits, ModelParams* grad, KinkTracker* kinks = nullptr);

}  // namespace l2vit
