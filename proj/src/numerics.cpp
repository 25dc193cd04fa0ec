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

#include "l2vit/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <string>

#include "l2vit/parallel.hpp"

namespace l2vit {

namespace {

std::atomic<int> g_num_threads{1};

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::kDimension, std::string(what) + ": expected rank " +
                                           std::to_string(rank) + ", got " +
                                           shape_string(t.shape()));
  }
}

Tensor transpose2d(const Tensor& a) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

// c[M x P] += a[M x K] * b[K x P]. Blocked over rows, columns and the inner
// dimension; each c[i, j] still accumulates k = 0, 1, ..., K-1 in order.
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t p) {
  constexpr std::size_t kRowBlock = 32;
  constexpr std::size_t kInnerBlock = 128;
  constexpr std::size_t kColBlock = 512;
  const std::size_t row_blocks = (m + kRowBlock - 1) / kRowBlock;
  parallel_for(row_blocks, [&](std::size_t rb) {
    const std::size_t i0 = rb * kRowBlock, i1 = std::min(m, i0 + kRowBlock);
    for (std::size_t j0 = 0; j0 < p; j0 += kColBlock) {
      const std::size_t j1 = std::min(p, j0 + kColBlock);
      for (std::size_t k0 = 0; k0 < k; k0 += kInnerBlock) {
        const std::size_t k1 = std::min(k, k0 + kInnerBlock);
        for (std::size_t i = i0; i < i1; ++i) {
          double* crow = c + i * p;
          const double* arow = a + i * k;
          for (std::size_t kk = k0; kk < k1; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * p;
            for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
          }
        }
      }
    }
  });
}

}  // namespace

void set_num_threads(int n) { g_num_threads.store(std::max(1, n)); }
int num_threads() { return g_num_threads.load(); }

ConvSpec ConvSpec::depthwise(std::size_t channels, std::size_t kernel, std::size_t padding) {
  return ConvSpec{channels, channels, kernel, kernel, 1, padding, channels};
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 ||
      groups == 0) {
    throw Error(ErrorCode::kInvalidArgument, "conv spec: sizes, stride and groups must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw Error(ErrorCode::kInvalidArgument, "conv spec: groups must divide both channel counts");
  }
}

std::size_t ConvSpec::out_height(std::size_t in_h) const {
  if (in_h + 2 * padding < kernel_h) {
    throw Error(ErrorCode::kDimension, "conv: kernel taller than padded input");
  }
  return (in_h + 2 * padding - kernel_h) / stride + 1;
}

std::size_t ConvSpec::out_width(std::size_t in_w) const {
  if (in_w + 2 * padding < kernel_w) {
    throw Error(ErrorCode::kDimension, "conv: kernel wider than padded input");
  }
  return (in_w + 2 * padding - kernel_w) / stride + 1;
}

Shape ConvSpec::weight_shape() const {
  return {out_channels, in_channels / groups, kernel_h, kernel_w};
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw Error(ErrorCode::kDimension, "matmul: inner dimensions differ: " +
                                           shape_string(a.shape()) + " x " +
                                           shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm_accumulate(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(b, 2, "matmul_nt rhs");
  return matmul(a, transpose2d(b));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn lhs");
  return matmul(transpose2d(a), b);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_shape(bias, {weight.dim(0)}, "linear bias");
  if (x.dim(1) != weight.dim(1)) {
    throw Error(ErrorCode::kDimension, "linear: input " + shape_string(x.shape()) +
                                           " vs weight " + shape_string(weight.shape()));
  }
  const std::size_t n = x.dim(0), out = weight.dim(0);
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(bias.raw(), bias.raw() + out, y.raw() + i * out);
  const Tensor wt = transpose2d(weight);
  gemm_accumulate(x.raw(), wt.raw(), y.raw(), n, x.dim(1), out);
  return y;
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out(a.shape());
  parallel_for(m, [&](std::size_t i) {
    const double* row = a.raw() + i * n;
    double* dst = out.raw() + i * n;
    const double mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(row[j] - mx);
      sum += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= sum;
  });
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

double activate(double x, Activation kind) {
  switch (kind) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kLeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::kGelu: return gelu(x);
  }
  return x;
}

Tensor activation(const Tensor& a, Activation kind) {
  Tensor out = a;
  for (auto& v : out.data()) v = activate(v, kind);
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  spec.validate();
  require_rank(x, 3, "conv2d input");
  if (x.dim(0) != spec.in_channels) {
    throw Error(ErrorCode::kDimension, "conv2d: input has " + std::to_string(x.dim(0)) +
                                           " channels, spec expects " +
                                           std::to_string(spec.in_channels));
  }
  require_shape(weight, spec.weight_shape(), "conv2d weight");
  require_shape(bias, {spec.out_channels}, "conv2d bias");

  const std::size_t in_h = x.dim(1), in_w = x.dim(2);
  const std::size_t out_h = spec.out_height(in_h), out_w = spec.out_width(in_w);
  const std::size_t cin_per_group = spec.in_channels / spec.groups;
  const std::size_t cout_per_group = spec.out_channels / spec.groups;
  const auto pad = static_cast<long>(spec.padding);
  const auto stride = static_cast<long>(spec.stride);

  Tensor y({spec.out_channels, out_h, out_w});
  parallel_for(spec.out_channels, [&](std::size_t oc) {
    double* out = y.raw() + oc * out_h * out_w;
    std::fill(out, out + out_h * out_w, bias[oc]);
    const std::size_t group = oc / cout_per_group;
    for (std::size_t ci = 0; ci < cin_per_group; ++ci) {
      const std::size_t ic = group * cin_per_group + ci;
      const double* in = x.raw() + ic * in_h * in_w;
      for (std::size_t kh = 0; kh < spec.kernel_h; ++kh) {
        for (std::size_t kw = 0; kw < spec.kernel_w; ++kw) {
          const double wv =
              weight[((oc * cin_per_group + ci) * spec.kernel_h + kh) * spec.kernel_w + kw];
          for (std::size_t oh = 0; oh < out_h; ++oh) {
            const long ih = static_cast<long>(oh) * stride + static_cast<long>(kh) - pad;
            if (ih < 0 || ih >= static_cast<long>(in_h)) continue;
            const double* in_row = in + static_cast<std::size_t>(ih) * in_w;
            double* out_row = out + oh * out_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
              const long iw = static_cast<long>(ow) * stride + static_cast<long>(kw) - pad;
              if (iw < 0 || iw >= static_cast<long>(in_w)) continue;
              out_row[ow] += wv * in_row[iw];
            }
          }
        }
      }
    }
  });
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm input");
  const std::size_t n = x.dim(0), c = x.dim(1);
  require_shape(gamma, {c}, "layer_norm gamma");
  require_shape(beta, {c}, "layer_norm beta");
  if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "layer_norm: eps must be positive");
  Tensor y(x.shape());
  parallel_for(n, [&](std::size_t i) {
    const double* row = x.raw() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    double* dst = y.raw() + i * c;
    for (std::size_t j = 0; j < c; ++j) dst[j] = (row[j] - mean) * inv * gamma[j] + beta[j];
  });
  return y;
}

Tensor batch_norm_inference(const Tensor& x, const Tensor& mean, const Tensor& var,
                            const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 3, "batch_norm input");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  require_shape(mean, {c}, "batch_norm mean");
  require_shape(var, {c}, "batch_norm variance");
  require_shape(gamma, {c}, "batch_norm gamma");
  require_shape(beta, {c}, "batch_norm beta");
  if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "batch_norm: eps must be positive");
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (var[ch] < 0.0) throw Error(ErrorCode::kInvalidArgument, "batch_norm: negative variance");
    const double scale = gamma[ch] / std::sqrt(var[ch] + eps);
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t idx = ch * plane + p;
      y[idx] = (x[idx] - mean[ch]) * scale + beta[ch];
    }
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.empty()) throw Error(ErrorCode::kDegenerateInput, "global_avg_pool: empty input");
  require_rank(x, 2, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor y({c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += x.at(i, j);
  for (auto& v : y.data()) v /= static_cast<double>(n);
  return y;
}

Tensor tokens_to_image(const Tensor& tokens, std::size_t height, std::size_t width) {
  require_rank(tokens, 2, "tokens_to_image");
  if (tokens.dim(0) != height * width) {
    throw Error(ErrorCode::kDimension, "token count " + std::to_string(tokens.dim(0)) +
                                           " does not equal H*W = " +
                                           std::to_string(height * width));
  }
  const std::size_t c = tokens.dim(1), n = tokens.dim(0);
  Tensor img({c, height, width});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t ch = 0; ch < c; ++ch) img[ch * n + t] = tokens.at(t, ch);
  return img;
}

Tensor image_to_tokens(const Tensor& image) {
  require_rank(image, 3, "image_to_tokens");
  const std::size_t c = image.dim(0), n = image.dim(1) * image.dim(2);
  Tensor tokens({n, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < n; ++t) tokens.at(t, ch) = image[ch * n + t];
  return tokens;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Tensor scaled(const Tensor& a, double factor) {
  Tensor out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

Tensor slice_columns(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_columns");
  if (begin >= end || end > a.dim(1)) {
    throw Error(ErrorCode::kDimension, "slice_columns: bad column range");
  }
  const std::size_t n = a.dim(0), w = end - begin;
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(a.raw() + i * a.dim(1) + begin, a.raw() + i * a.dim(1) + end, out.raw() + i * w);
  return out;
}

void write_columns(Tensor& dst, const Tensor& src, std::size_t begin) {
  require_rank(dst, 2, "write_columns dst");
  require_rank(src, 2, "write_columns src");
  if (src.dim(0) != dst.dim(0) || begin + src.dim(1) > dst.dim(1)) {
    throw Error(ErrorCode::kDimension, "write_columns: block does not fit");
  }
  const std::size_t w = src.dim(1);
  for (std::size_t i = 0; i < src.dim(0); ++i)
    std::copy(src.raw() + i * w, src.raw() + (i + 1) * w, dst.raw() + i * dst.dim(1) + begin);
}

}  // namespace l2vit
