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

#include "l2vit/tensor.hpp"

namespace l2vit {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.01;

enum class Activation { kIdentity, kRelu, kLeakyRelu, kGelu };

/// Geometry of a 2-D convolution. Weights are laid out
/// [out_channels, in_channels / groups, kernel_h, kernel_w].
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  static ConvSpec depthwise(std::size_t channels, std::size_t kernel, std::size_t padding);

  bool is_depthwise() const noexcept {
    return groups == in_channels && groups == out_channels;
  }
  void validate() const;
  /// floor((in + 2p - k) / s) + 1; throws if the window does not fit.
  std::size_t out_height(std::size_t in_h) const;
  std::size_t out_width(std::size_t in_w) const;
  Shape weight_shape() const;
};

// Products. `matmul_nt` computes a * b^T, `matmul_tn` computes a^T * b.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);

/// x * w^T + bias with w stored [out, in] and x stored [N, in].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax_rows(const Tensor& a);

double gelu(double x);
double gelu_derivative(double x);
double activate(double x, Activation kind);
Tensor activation(const Tensor& a, Activation kind);

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kNormEps);

Tensor batch_norm_inference(const Tensor& x, const Tensor& mean, const Tensor& var,
                            const Tensor& gamma, const Tensor& beta, double eps = kNormEps);

Tensor global_avg_pool(const Tensor& x);

// Layout changes between token sequences [H*W, C] and feature maps [C, H, W].
Tensor tokens_to_image(const Tensor& tokens, std::size_t height, std::size_t width);
Tensor image_to_tokens(const Tensor& image);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double factor);

/// Copies columns [begin, end) of a rank-2 tensor; `write_columns` is the inverse.
Tensor slice_columns(const Tensor& a, std::size_t begin, std::size_t end);
void write_columns(Tensor& dst, const Tensor& src, std::size_t begin);

}  // namespace l2vit
