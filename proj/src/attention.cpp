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

#include "l2vit/attention.hpp"

#include <algorithm>
#include <cmath>

#include "l2vit/numerics.hpp"

namespace l2vit {

namespace {

void require_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const char* what) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw Error(ErrorCode::kDimension, std::string(what) + ": q, k, v must be rank 2");
  }
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw Error(ErrorCode::kDimension, std::string(what) + ": shapes disagree: q " +
                                           shape_string(q.shape()) + ", k " +
                                           shape_string(k.shape()) + ", v " +
                                           shape_string(v.shape()));
  }
}

Tensor column_sums(const Tensor& a) {
  Tensor s({a.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) s[j] += a.at(i, j);
  return s;
}

}  // namespace

const char* to_string(FeatureMap fm) {
  switch (fm) {
    case FeatureMap::kNone: return "none";
    case FeatureMap::kRelu: return "relu";
    case FeatureMap::kL1Norm: return "l1_norm";
    case FeatureMap::kLeakyRelu: return "leaky_relu";
  }
  return "?";
}

FeatureMap parse_feature_map(const std::string& text) {
  if (text == "none") return FeatureMap::kNone;
  if (text == "relu") return FeatureMap::kRelu;
  if (text == "l1_norm") return FeatureMap::kL1Norm;
  if (text == "leaky_relu") return FeatureMap::kLeakyRelu;
  throw Error(ErrorCode::kInvalidArgument, "unknown feature map '" + text + "'");
}

void AttentionConfig::validate() const {
  if (num_heads == 0 || head_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "attention: heads and head_dim must be positive");
  }
  if (!(clamp_floor >= kMinClampFloor)) {
    throw Error(ErrorCode::kInvalidArgument, "attention: clamp floor must be >= 1e-6");
  }
  if (!(scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "attention: scale s must be > 0");
}

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, double qk_scale) {
  require_qkv(q, k, v, "softmax_attention");
  Tensor logits = matmul_nt(q, k);
  for (auto& x : logits.data()) x *= qk_scale;
  return matmul(softmax_rows(logits), v);
}

Tensor feature_map(const Tensor& x, FeatureMap kind) {
  switch (kind) {
    case FeatureMap::kNone: return x;
    case FeatureMap::kRelu: return activation(x, Activation::kRelu);
    case FeatureMap::kLeakyRelu: return activation(x, Activation::kLeakyRelu);
    case FeatureMap::kL1Norm: {
      if (x.rank() != 2) throw Error(ErrorCode::kDimension, "l1_norm feature map needs rank 2");
      Tensor out = x;
      const std::size_t c = x.dim(1);
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < c; ++j) norm += std::abs(x.at(i, j));
        if (norm == 0.0) {
          throw Error(ErrorCode::kDegenerateInput,
                      "l1_norm feature map: row " + std::to_string(i) + " is all zeros");
        }
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= norm;
      }
      return out;
    }
  }
  return x;
}

Tensor linear_attention_matrix(const Tensor& q, const Tensor& k, const AttentionConfig& cfg) {
  cfg.validate();
  require_qkv(q, k, k, "linear_attention_matrix");
  Tensor a = matmul_nt(feature_map(q, cfg.feature_map), feature_map(k, cfg.feature_map));
  const std::size_t n = a.dim(1);
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) den += a.at(i, j);
    den = std::max(den, cfg.clamp_floor);
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) /= den;
  }
  return a;
}

Tensor linear_attention_direct(const Tensor& q, const Tensor& k, const Tensor& v,
                               const AttentionConfig& cfg) {
  cfg.validate();
  require_qkv(q, k, v, "linear_attention_direct");
  const Tensor fq = feature_map(q, cfg.feature_map);
  const Tensor fk = feature_map(k, cfg.feature_map);
  const std::size_t n = q.dim(0), m = k.dim(0), dv = v.dim(1), d = q.dim(1);

  // Materialize phi(q) phi(k)^T a block of query rows at a time so that large
  // N does not need an N x N buffer.
  constexpr std::size_t kRows = 64;
  Tensor fk_t({d, m});
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < d; ++c) fk_t.at(c, j) = fk.at(j, c);

  Tensor out({n, dv});
  for (std::size_t r0 = 0; r0 < n; r0 += kRows) {
    const std::size_t rows = std::min(kRows, n - r0);
    Tensor block({rows, d});
    std::copy(fq.raw() + r0 * d, fq.raw() + (r0 + rows) * d, block.raw());
    const Tensor scores = matmul(block, fk_t);
    const Tensor num = matmul(scores, v);
    for (std::size_t i = 0; i < rows; ++i) {
      double den = 0.0;
      for (std::size_t j = 0; j < m; ++j) den += scores.at(i, j);
      den = std::max(den, cfg.clamp_floor);
      for (std::size_t c = 0; c < dv; ++c) out.at(r0 + i, c) = num.at(i, c) / den;
    }
  }
  return out;
}

Tensor linear_attention_factored(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const AttentionConfig& cfg) {
  cfg.validate();
  require_qkv(q, k, v, "linear_attention_factored");
  const Tensor fq = feature_map(q, cfg.feature_map);
  const Tensor fk = feature_map(k, cfg.feature_map);
  const double s = cfg.scale;

  Tensor kv = matmul_tn(fk, v);
  for (auto& x : kv.data()) x /= s;
  Tensor z = column_sums(fk);
  for (auto& x : z.data()) x /= s;

  Tensor out = matmul(fq, kv);
  const std::size_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  const double floor = cfg.clamp_floor / s;
  for (std::size_t i = 0; i < n; ++i) {
    double den = 0.0;
    for (std::size_t c = 0; c < d; ++c) den += fq.at(i, c) * z[c];
    den = std::max(den, floor);
    for (std::size_t c = 0; c < dv; ++c) out.at(i, c) /= den;
  }
  return out;
}

AttentionOrder select_attention_order(std::size_t tokens, std::size_t head_dim) {
  if (tokens == 0 || head_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "select_attention_order: N and d must be >= 1");
  }
  // 2 N d^2 <= 2 N^2 d  <=>  d <= N
  return head_dim <= tokens ? AttentionOrder::kFactored : AttentionOrder::kDirect;
}

void WindowLayout::validate() const {
  if (feature_h == 0 || feature_w == 0 || window == 0) {
    throw Error(ErrorCode::kInvalidArgument, "window layout: sizes must be positive");
  }
}

Tensor window_partition(const Tensor& x, const WindowLayout& layout) {
  layout.validate();
  if (x.rank() != 2 || x.dim(0) != layout.feature_h * layout.feature_w) {
    throw Error(ErrorCode::kDimension, "window_partition: expected " +
                                           std::to_string(layout.feature_h * layout.feature_w) +
                                           " tokens, got " + shape_string(x.shape()));
  }
  const std::size_t c = x.dim(1), w = layout.window, nw = layout.windows_w();
  Tensor out({layout.num_windows(), layout.window_tokens(), c});
  for (std::size_t h = 0; h < layout.feature_h; ++h) {
    for (std::size_t col = 0; col < layout.feature_w; ++col) {
      const std::size_t win = (h / w) * nw + col / w;
      const std::size_t slot = (h % w) * w + col % w;
      const double* src = x.raw() + (h * layout.feature_w + col) * c;
      std::copy(src, src + c, out.raw() + (win * layout.window_tokens() + slot) * c);
    }
  }
  return out;
}

Tensor window_reverse(const Tensor& windows, const WindowLayout& layout) {
  layout.validate();
  if (windows.rank() != 3 || windows.dim(0) != layout.num_windows() ||
      windows.dim(1) != layout.window_tokens()) {
    throw Error(ErrorCode::kDimension,
                "window_reverse: bad window tensor " + shape_string(windows.shape()));
  }
  const std::size_t c = windows.dim(2), w = layout.window, nw = layout.windows_w();
  Tensor out({layout.feature_h * layout.feature_w, c});
  for (std::size_t h = 0; h < layout.feature_h; ++h) {
    for (std::size_t col = 0; col < layout.feature_w; ++col) {
      const std::size_t win = (h / w) * nw + col / w;
      const std::size_t slot = (h % w) * w + col % w;
      const double* src = windows.raw() + (win * layout.window_tokens() + slot) * c;
      std::copy(src, src + c, out.raw() + (h * layout.feature_w + col) * c);
    }
  }
  return out;
}

Tensor multi_head(const HeadOp& op, const Tensor& q, const Tensor& k, const Tensor& v,
                  std::size_t num_heads) {
  require_qkv(q, k, v, "multi_head");
  if (num_heads == 0 || q.dim(1) % num_heads != 0 || v.dim(1) % num_heads != 0) {
    throw Error(ErrorCode::kDimension, "multi_head: " + std::to_string(num_heads) +
                                           " heads do not divide channel count " +
                                           std::to_string(q.dim(1)));
  }
  const std::size_t dq = q.dim(1) / num_heads, dv = v.dim(1) / num_heads;
  Tensor out({q.dim(0), v.dim(1)});
  for (std::size_t h = 0; h < num_heads; ++h) {
    const Tensor head = op(slice_columns(q, h * dq, (h + 1) * dq),
                           slice_columns(k, h * dq, (h + 1) * dq),
                           slice_columns(v, h * dv, (h + 1) * dv));
    write_columns(out, head, h * dv);
  }
  return out;
}

Tensor multi_head(const HeadOp& op, const Tensor& q, const Tensor& k, const Tensor& v,
                  std::size_t num_heads, const Tensor& w_o, const Tensor& b_o) {
  return linear(multi_head(op, q, k, v, num_heads), w_o, b_o);
}

}  // namespace l2vit
