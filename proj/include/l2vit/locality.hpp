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

#include <cstddef>
#include <string>

#include "l2vit/attention.hpp"
#include "l2vit/params.hpp"
#include "l2vit/tensor.hpp"

namespace l2vit {

/// Spatial size of a token grid; tokens are stored row-major, N = height * width.
struct GridSize {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t tokens() const noexcept { return height * width; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

/// Local concentration module: two depth-wise k x k convolutions with GELU and
/// inference batch norm between them, plus the layer norm applied in front of
/// it by the residual form.
struct LcmParams : Visitable<LcmParams> {
  std::size_t channels = 0;
  std::size_t kernel = 7;
  ConvParams dw1;
  BatchNormParams bn;
  ConvParams dw2;
  NormParams norm;

  /// Zero convolutions, identity batch norm and layer norm.
  static LcmParams zeros(std::size_t channels, std::size_t kernel = 7);
  void validate() const;

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    norm.visit(join_name(prefix, "norm"), fn);
    dw1.visit(join_name(prefix, "dwconv1"), fn);
    bn.visit(join_name(prefix, "bn"), fn);
    dw2.visit(join_name(prefix, "dwconv2"), fn);
  }
};

/// Conditional positional encoding: a shape-preserving depth-wise 3x3 conv.
struct CpeParams : Visitable<CpeParams> {
  ConvParams conv;

  static CpeParams zeros(std::size_t channels);
  void validate() const;

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    conv.visit(prefix, fn);
  }
};

/// Rearrange [N, C] -> [C, H, W], DWConv1 -> GELU -> BN -> DWConv2, rearrange back.
Tensor lcm_forward(const Tensor& x, GridSize hw, const LcmParams& p);

/// lcm_forward(layer_norm(x)) + x.
Tensor lcm_residual(const Tensor& x, GridSize hw, const LcmParams& p);

/// Multi-head factored linear attention over q, k, v followed by lcm_residual.
Tensor enhanced_linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, GridSize hw,
                                 const AttentionConfig& cfg, const LcmParams& p);

/// x + DWConv3x3(x), computed on the [C, H, W] rearrangement.
Tensor cpe_forward(const Tensor& x, GridSize hw, const CpeParams& p);

}  // namespace l2vit
