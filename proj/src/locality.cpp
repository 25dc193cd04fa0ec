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

#include "l2vit/locality.hpp"

#include "l2vit/numerics.hpp"

namespace l2vit {

namespace {

void require_grid(const Tensor& x, GridSize hw, const char* what) {
  if (x.rank() != 2 || x.dim(0) != hw.tokens()) {
    throw Error(ErrorCode::kDimension, std::string(what) + ": " + shape_string(x.shape()) +
                                           " is not a token grid of " +
                                           std::to_string(hw.height) + "x" +
                                           std::to_string(hw.width));
  }
}

}  // namespace

LcmParams LcmParams::zeros(std::size_t channels, std::size_t kernel) {
  LcmParams p;
  p.channels = channels;
  p.kernel = kernel;
  const auto spec = ConvSpec::depthwise(channels, kernel, (kernel - 1) / 2);
  p.dw1 = ConvParams::zeros(spec);
  p.bn = BatchNormParams::identity(channels);
  p.dw2 = ConvParams::zeros(spec);
  p.norm = NormParams::identity(channels);
  p.validate();
  return p;
}

void LcmParams::validate() const {
  if (channels == 0 || kernel == 0 || kernel % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument, "LCM: kernel must be odd and channels positive");
  }
  for (const ConvParams* conv : {&dw1, &dw2}) {
    if (!conv->spec.is_depthwise() || conv->spec.in_channels != channels ||
        conv->spec.kernel_h != kernel || conv->spec.kernel_w != kernel ||
        conv->spec.stride != 1 || conv->spec.padding != (kernel - 1) / 2) {
      throw Error(ErrorCode::kInvalidArgument,
                  "LCM: convolutions must be shape-preserving depth-wise k x k");
    }
  }
}

CpeParams CpeParams::zeros(std::size_t channels) {
  CpeParams p;
  p.conv = ConvParams::zeros(ConvSpec::depthwise(channels, 3, 1));
  return p;
}

void CpeParams::validate() const {
  const auto& s = conv.spec;
  if (!s.is_depthwise() || s.kernel_h != 3 || s.kernel_w != 3 || s.padding != 1 || s.stride != 1) {
    throw Error(ErrorCode::kInvalidArgument, "CPE: expected depth-wise 3x3, stride 1, padding 1");
  }
}

Tensor lcm_forward(const Tensor& x, GridSize hw, const LcmParams& p) {
  p.validate();
  require_grid(x, hw, "lcm_forward");
  Tensor img = tokens_to_image(x, hw.height, hw.width);
  img = activation(conv2d(img, p.dw1.weight, p.dw1.bias, p.dw1.spec), Activation::kGelu);
  img = batch_norm_inference(img, p.bn.running_mean, p.bn.running_var, p.bn.gamma, p.bn.beta);
  img = conv2d(img, p.dw2.weight, p.dw2.bias, p.dw2.spec);
  return image_to_tokens(img);
}

Tensor lcm_residual(const Tensor& x, GridSize hw, const LcmParams& p) {
  Tensor y = lcm_forward(layer_norm(x, p.norm.gamma, p.norm.beta), hw, p);
  add_inplace(y, x);
  return y;
}

Tensor enhanced_linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, GridSize hw,
                                 const AttentionConfig& cfg, const LcmParams& p) {
  const HeadOp op = [&cfg](const Tensor& qh, const Tensor& kh, const Tensor& vh) {
    return linear_attention_factored(qh, kh, vh, cfg);
  };
  return lcm_residual(multi_head(op, q, k, v, cfg.num_heads), hw, p);
}

Tensor cpe_forward(const Tensor& x, GridSize hw, const CpeParams& p) {
  p.validate();
  require_grid(x, hw, "cpe_forward");
  const Tensor img = tokens_to_image(x, hw.height, hw.width);
  Tensor y = image_to_tokens(conv2d(img, p.conv.weight, p.conv.bias, p.conv.spec));
  add_inplace(y, x);
  return y;
}

}  // namespace l2vit
