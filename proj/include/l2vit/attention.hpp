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

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>

#include "l2vit/tensor.hpp"

namespace l2vit {

enum class FeatureMap { kNone, kRelu, kL1Norm, kLeakyRelu };

const char* to_string(FeatureMap fm);
FeatureMap parse_feature_map(const std::string& text);

inline constexpr double kDefaultClampFloor = 1e2;
inline constexpr double kMinClampFloor = 1e-6;

/// Hyper-parameters of one attention layer. `scale` is the learnable s that
/// divides both factored accumulators; the denominator floor is applied as
/// clamp_floor / s on that path so it matches the direct form exactly.
struct AttentionConfig {
  std::size_t num_heads = 1;
  std::size_t head_dim = 1;
  FeatureMap feature_map = FeatureMap::kRelu;
  double clamp_floor = kDefaultClampFloor;
  double scale = 1.0;

  std::size_t channels() const noexcept { return num_heads * head_dim; }
  double qk_scale() const noexcept { return 1.0 / std::sqrt(static_cast<double>(head_dim)); }
  void validate() const;

  /// Initial value of s for a layer with `channels` total channels.
  static double initial_scale(std::size_t channels) {
    return std::sqrt(static_cast<double>(channels));
  }
};

/// softmax(q k^T * qk_scale) v.
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, double qk_scale);

/// Row-wise or element-wise phi. kL1Norm divides each row by its L1 norm and
/// keeps the sign; an all-zero row is a degenerate-input error.
Tensor feature_map(const Tensor& x, FeatureMap kind);

/// Normalized linear-attention matrix: A[i, j] = phi(q_i).phi(k_j) / max(sum_k phi(q_i).phi(k_k), C_min).
Tensor linear_attention_matrix(const Tensor& q, const Tensor& k, const AttentionConfig& cfg);

/// Quadratic evaluation order: forms phi(q) phi(k)^T (in row blocks) before
/// touching v. O(N^2 d).
Tensor linear_attention_direct(const Tensor& q, const Tensor& k, const Tensor& v,
                               const AttentionConfig& cfg);

/// Associative evaluation order: M = phi(k)^T v / s, z = phi(k)^T 1 / s,
/// O_i = phi(q_i) M / max(phi(q_i) z, C_min / s). O(N d^2).
Tensor linear_attention_factored(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const AttentionConfig& cfg);

enum class AttentionOrder { kDirect, kFactored };

/// Picks the cheaper multiplication order for N tokens of head width d.
/// Factored costs 2 N d^2 and direct 2 N^2 d, so factored wins iff d < N; ties
/// go to factored.
AttentionOrder select_attention_order(std::size_t tokens, std::size_t head_dim);

/// Non-overlapping window tiling of an H x W token grid. When the window does
/// not divide a side, the grid is zero-padded on the right/bottom.
struct WindowLayout {
  std::size_t feature_h = 1;
  std::size_t feature_w = 1;
  std::size_t window = 1;

  void validate() const;
  std::size_t padded_h() const noexcept { return (feature_h + window - 1) / window * window; }
  std::size_t padded_w() const noexcept { return (feature_w + window - 1) / window * window; }
  std::size_t windows_h() const noexcept { return padded_h() / window; }
  std::size_t windows_w() const noexcept { return padded_w() / window; }
  std::size_t num_windows() const noexcept { return windows_h() * windows_w(); }
  std::size_t window_tokens() const noexcept { return window * window; }
};

/// [H*W, C] -> [num_windows, window^2, C], windows in row-major order.
Tensor window_partition(const Tensor& x, const WindowLayout& layout);
/// Inverse of window_partition; padding rows are cropped.
Tensor window_reverse(const Tensor& windows, const WindowLayout& layout);

using HeadOp = std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>;

/// Splits [N, C] inputs into `num_heads` column blocks, applies `op` to each
/// and concatenates the results.
Tensor multi_head(const HeadOp& op, const Tensor& q, const Tensor& k, const Tensor& v,
                  std::size_t num_heads);

/// As above, followed by the output projection x W_o^T + b_o.
Tensor multi_head(const HeadOp& op, const Tensor& q, const Tensor& k, const Tensor& v,
                  std::size_t num_heads, const Tensor& w_o, const Tensor& b_o);

}  // namespace l2vit
