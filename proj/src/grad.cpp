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

#include "l2vit/grad.hpp"

#include <algorithm>
#include <cmath>

#include "l2vit/numerics.hpp"
#include "l2vit/parallel.hpp"

namespace l2vit {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kDimension, std::string(what) + ": cotangent shape " +
                                           shape_string(b.shape()) + " does not match " +
                                           shape_string(a.shape()));
  }
}

// Splits a rank-2 tensor into per-head column blocks.
Tensor head_columns(const Tensor& a, std::size_t head, std::size_t width) {
  return slice_columns(a, head * width, (head + 1) * width);
}

}  // namespace

Tensor linear_backward(const Tensor& x, const LinearParams& p, const Tensor& dy, LinearParams* grad) {
  if (dy.rank() != 2 || dy.dim(0) != x.dim(0) || dy.dim(1) != p.out_features()) {
    throw Error(ErrorCode::kDimension, "linear_backward: bad cotangent " + shape_string(dy.shape()));
  }
  if (grad) {
    add_inplace(grad->weight, matmul_tn(dy, x));
    for (std::size_t i = 0; i < dy.dim(0); ++i)
      for (std::size_t o = 0; o < dy.dim(1); ++o) grad->bias[o] += dy.at(i, o);
  }
  return matmul(dy, p.weight);
}

Tensor layer_norm_backward(const Tensor& x, const NormParams& p, const Tensor& dy, NormParams* grad) {
  require_same_shape(x, dy, "layer_norm_backward");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const double inv_c = 1.0 / static_cast<double>(c);
  Tensor dx(x.shape());
  std::vector<double> xhat(c), g(c);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x.at(i, j);
    mean *= inv_c;
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var *= inv_c;
    const double inv_std = 1.0 / std::sqrt(var + kNormEps);
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[j] = (x.at(i, j) - mean) * inv_std;
      g[j] = dy.at(i, j) * p.gamma[j];
      mean_g += g[j];
      mean_gx += g[j] * xhat[j];
      if (grad) {
        grad->gamma[j] += dy.at(i, j) * xhat[j];
        grad->beta[j] += dy.at(i, j);
      }
    }
    mean_g *= inv_c;
    mean_gx *= inv_c;
    for (std::size_t j = 0; j < c; ++j) dx.at(i, j) = inv_std * (g[j] - mean_g - xhat[j] * mean_gx);
  }
  return dx;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "gelu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_derivative(x[i]);
  return dx;
}

Tensor conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy, ConvParams* grad) {
  const ConvSpec& s = p.spec;
  s.validate();
  const std::size_t h = x.dim(1), w = x.dim(2);
  const std::size_t oh = s.out_height(h), ow = s.out_width(w);
  if (dy.shape() != Shape{s.out_channels, oh, ow}) {
    throw Error(ErrorCode::kDimension, "conv2d_backward: bad cotangent " + shape_string(dy.shape()));
  }
  const std::size_t cpg = s.in_channels / s.groups, opg = s.out_channels / s.groups;
  const std::size_t kh = s.kernel_h, kw = s.kernel_w;
  Tensor dx(x.shape());
  // Input gradients are gathered per input channel so each output element has
  // one writer and a fixed summation order.
  parallel_for(s.in_channels, [&](std::size_t ic) {
    const std::size_t g = ic / cpg, c = ic % cpg;
    for (std::size_t o = g * opg; o < (g + 1) * opg; ++o)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          const double wv = p.weight[((o * cpg + c) * kh + i) * kw + j];
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * s.stride + i) - static_cast<long>(s.padding);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t z = 0; z < ow; ++z) {
              const long ix = static_cast<long>(z * s.stride + j) - static_cast<long>(s.padding);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              dx.at(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                  wv * dy.at(o, y, z);
            }
          }
        }
  });
  if (grad) {
    parallel_for(s.out_channels, [&](std::size_t o) {
      const std::size_t g = o / opg;
      double bias = 0.0;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) bias += dy.at(o, y, z);
      grad->bias[o] += bias;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ic = g * cpg + c;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            double acc = 0.0;
            for (std::size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y * s.stride + i) - static_cast<long>(s.padding);
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t z = 0; z < ow; ++z) {
                const long ix = static_cast<long>(z * s.stride + j) - static_cast<long>(s.padding);
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                acc += dy.at(o, y, z) *
                       x.at(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
            grad->weight[((o * cpg + c) * kh + i) * kw + j] += acc;
          }
      }
    });
  }
  return dx;
}

Tensor batch_norm_backward(const Tensor& x, const BatchNormParams& p, const Tensor& dy,
                           BatchNormParams* grad) {
  require_same_shape(x, dy, "batch_norm_backward");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor dx(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv_std = 1.0 / std::sqrt(p.running_var[ch] + kNormEps);
    const double* xs = x.raw() + ch * plane;
    const double* gs = dy.raw() + ch * plane;
    double* out = dx.raw() + ch * plane;
    double dgamma = 0.0, dbeta = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = gs[i] * p.gamma[ch] * inv_std;
      dgamma += gs[i] * (xs[i] - p.running_mean[ch]) * inv_std;
      dbeta += gs[i];
    }
    if (grad) {
      grad->gamma[ch] += dgamma;
      grad->beta[ch] += dbeta;
    }
  }
  return dx;
}

Tensor feature_map_backward(const Tensor& x, FeatureMap kind, const Tensor& dy, KinkTracker* kinks) {
  require_same_shape(x, dy, "feature_map_backward");
  Tensor dx(x.shape());
  switch (kind) {
    case FeatureMap::kNone:
      return dy;
    case FeatureMap::kRelu:
    case FeatureMap::kLeakyRelu: {
      const double neg = kind == FeatureMap::kRelu ? 0.0 : kLeakySlope;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (kinks) kinks->observe(std::abs(x[i]));
        dx[i] = dy[i] * (x[i] > 0.0 ? 1.0 : neg);
      }
      return dx;
    }
    case FeatureMap::kL1Norm: {
      // y = x / |x|_1  =>  dx_j = (g_j - sign(x_j) * <g, y>) / |x|_1
      const std::size_t c = x.dim(1);
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          norm += std::abs(x.at(i, j));
          if (kinks) kinks->observe(std::abs(x.at(i, j)));
        }
        double gy = 0.0;
        for (std::size_t j = 0; j < c; ++j) gy += dy.at(i, j) * x.at(i, j) / norm;
        for (std::size_t j = 0; j < c; ++j) {
          const double sign = x.at(i, j) > 0.0 ? 1.0 : (x.at(i, j) < 0.0 ? -1.0 : 0.0);
          dx.at(i, j) = (dy.at(i, j) - sign * gy) / norm;
        }
      }
      return dx;
    }
  }
  return dx;
}

AttentionGrads softmax_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                                          double qk_scale, const Tensor& dy) {
  Tensor logits = matmul_nt(q, k);
  for (auto& x : logits.data()) x *= qk_scale;
  const Tensor probs = softmax_rows(logits);
  AttentionGrads g;
  g.dv = matmul_tn(probs, dy);
  Tensor dp = matmul_nt(dy, v);
  // dS = P o (dP - rowsum(dP o P))
  for (std::size_t i = 0; i < dp.dim(0); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < dp.dim(1); ++j) dot += dp.at(i, j) * probs.at(i, j);
    for (std::size_t j = 0; j < dp.dim(1); ++j)
      dp.at(i, j) = probs.at(i, j) * (dp.at(i, j) - dot) * qk_scale;
  }
  g.dq = matmul(dp, k);
  g.dk = matmul_tn(dp, q);
  return g;
}

AttentionGrads linear_attention_factored_backward(const Tensor& q, const Tensor& k,
                                                  const Tensor& v, const AttentionConfig& cfg,
                                                  const Tensor& dy, KinkTracker* kinks) {
  cfg.validate();
  const Tensor fq = feature_map(q, cfg.feature_map);
  const Tensor fk = feature_map(k, cfg.feature_map);
  const double s = cfg.scale, floor = cfg.clamp_floor / s;
  const std::size_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);

  const Tensor kv_raw = matmul_tn(fk, v);  // phi(k)^T v
  Tensor kv = scaled(kv_raw, 1.0 / s);
  Tensor z_raw({d});
  for (std::size_t j = 0; j < fk.dim(0); ++j)
    for (std::size_t c = 0; c < d; ++c) z_raw[c] += fk.at(j, c);
  const Tensor z = scaled(z_raw, 1.0 / s);
  const Tensor num = matmul(fq, kv);

  AttentionGrads g;
  Tensor dnum({n, dv});
  Tensor dfq({n, d});
  Tensor dz({d});
  double ds = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double raw_den = 0.0;
    for (std::size_t c = 0; c < d; ++c) raw_den += fq.at(i, c) * z[c];
    if (kinks) kinks->observe(std::abs(raw_den - floor) / floor);
    const bool clamped = raw_den < floor;
    const double den = clamped ? floor : raw_den;
    double dden = 0.0;
    for (std::size_t e = 0; e < dv; ++e) {
      dnum.at(i, e) = dy.at(i, e) / den;
      dden -= dy.at(i, e) * num.at(i, e) / (den * den);
    }
    if (clamped) {
      ds += dden * (-cfg.clamp_floor / (s * s));
    } else {
      for (std::size_t c = 0; c < d; ++c) {
        dfq.at(i, c) += dden * z[c];
        dz[c] += dden * fq.at(i, c);
      }
    }
  }
  add_inplace(dfq, matmul_nt(dnum, kv));
  const Tensor dkv = matmul_tn(fq, dnum);  // [d, dv]
  for (std::size_t i = 0; i < dkv.size(); ++i) ds -= dkv[i] * kv[i] / s;
  for (std::size_t c = 0; c < d; ++c) ds -= dz[c] * z[c] / s;
  const Tensor dkv_raw = scaled(dkv, 1.0 / s);
  Tensor dfk = matmul_nt(v, dkv_raw);  // [N, d]
  for (std::size_t j = 0; j < dfk.dim(0); ++j)
    for (std::size_t c = 0; c < d; ++c) dfk.at(j, c) += dz[c] / s;
  g.dv = matmul(fk, dkv_raw);
  g.dq = feature_map_backward(q, cfg.feature_map, dfq, kinks);
  g.dk = feature_map_backward(k, cfg.feature_map, dfk, kinks);
  g.ds = ds;
  return g;
}

Tensor lcm_backward(const Tensor& x, GridSize hw, const LcmParams& p, const Tensor& dy,
                    LcmParams* grad) {
  p.validate();
  const Tensor img = tokens_to_image(x, hw.height, hw.width);
  const Tensor h1 = conv2d(img, p.dw1.weight, p.dw1.bias, p.dw1.spec);
  const Tensor h2 = activation(h1, Activation::kGelu);
  const Tensor h3 =
      batch_norm_inference(h2, p.bn.running_mean, p.bn.running_var, p.bn.gamma, p.bn.beta);
  Tensor d = tokens_to_image(dy, hw.height, hw.width);
  d = conv2d_backward(h3, p.dw2, d, grad ? &grad->dw2 : nullptr);
  d = batch_norm_backward(h2, p.bn, d, grad ? &grad->bn : nullptr);
  d = gelu_backward(h1, d);
  d = conv2d_backward(img, p.dw1, d, grad ? &grad->dw1 : nullptr);
  return image_to_tokens(d);
}

Tensor lcm_residual_backward(const Tensor& x, GridSize hw, const LcmParams& p, const Tensor& dy,
                             LcmParams* grad) {
  const Tensor normed = layer_norm(x, p.norm.gamma, p.norm.beta);
  const Tensor dn = lcm_backward(normed, hw, p, dy, grad);
  return add(dy, layer_norm_backward(x, p.norm, dn, grad ? &grad->norm : nullptr));
}

Tensor cpe_backward(const Tensor& x, GridSize hw, const CpeParams& p, const Tensor& dy,
                    CpeParams* grad) {
  const Tensor img = tokens_to_image(x, hw.height, hw.width);
  const Tensor dimg = conv2d_backward(img, p.conv, tokens_to_image(dy, hw.height, hw.width),
                                      grad ? &grad->conv : nullptr);
  return add(dy, image_to_tokens(dimg));
}

Tensor mlp_backward(const Tensor& x, const MlpParams& p, const Tensor& dy, MlpParams* grad) {
  const Tensor pre = linear(x, p.fc1.weight, p.fc1.bias);
  const Tensor hidden = activation(pre, Activation::kGelu);
  Tensor d = linear_backward(hidden, p.fc2, dy, grad ? &grad->fc2 : nullptr);
  d = gelu_backward(pre, d);
  return linear_backward(x, p.fc1, d, grad ? &grad->fc1 : nullptr);
}

Tensor window_attention_backward(const Tensor& x, GridSize hw, const LinearParams& qkv,
                                 const LinearParams& proj, std::size_t num_heads,
                                 std::size_t window, const Tensor& dy, LinearParams* grad_qkv,
                                 LinearParams* grad_proj) {
  const WindowLayout layout{hw.height, hw.width, window};
  const std::size_t c = x.dim(1), hd = c / num_heads;
  const std::size_t nw = layout.num_windows(), t = layout.window_tokens();
  const Tensor flat = window_partition(x, layout).reshaped({nw * t, c});
  const Tensor qkv_out = linear(flat, qkv.weight, qkv.bias);
  const double qk_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  auto window_rows = [&](const Tensor& src, std::size_t w, std::size_t width) {
    Tensor rows({t, width});
    std::copy(src.raw() + w * t * width, src.raw() + (w + 1) * t * width, rows.raw());
    return rows;
  };

  // Recompute the concatenated head outputs for the projection adjoint.
  Tensor attended({nw * t, c});
  parallel_for(nw, [&](std::size_t w) {
    const Tensor rows = window_rows(qkv_out, w, 3 * c);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const Tensor out = softmax_attention(head_columns(rows, h, hd),
                                           head_columns(slice_columns(rows, c, 2 * c), h, hd),
                                           head_columns(slice_columns(rows, 2 * c, 3 * c), h, hd),
                                           qk_scale);
      for (std::size_t i = 0; i < t; ++i)
        std::copy(out.raw() + i * hd, out.raw() + (i + 1) * hd,
                  attended.raw() + (w * t + i) * c + h * hd);
    }
  });

  const Tensor dproj_out = window_partition(dy, layout).reshaped({nw * t, c});
  const Tensor dattended = linear_backward(attended, proj, dproj_out, grad_proj);
  Tensor dqkv({nw * t, 3 * c});
  parallel_for(nw, [&](std::size_t w) {
    const Tensor rows = window_rows(qkv_out, w, 3 * c);
    const Tensor drows = window_rows(dattended, w, c);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const AttentionGrads g = softmax_attention_backward(
          head_columns(rows, h, hd), head_columns(slice_columns(rows, c, 2 * c), h, hd),
          head_columns(slice_columns(rows, 2 * c, 3 * c), h, hd), qk_scale,
          head_columns(drows, h, hd));
      for (std::size_t i = 0; i < t; ++i) {
        double* dst = dqkv.raw() + (w * t + i) * 3 * c;
        std::copy(g.dq.raw() + i * hd, g.dq.raw() + (i + 1) * hd, dst + h * hd);
        std::copy(g.dk.raw() + i * hd, g.dk.raw() + (i + 1) * hd, dst + c + h * hd);
        std::copy(g.dv.raw() + i * hd, g.dv.raw() + (i + 1) * hd, dst + 2 * c + h * hd);
      }
    }
  });
  const Tensor dflat = linear_backward(flat, qkv, dqkv, grad_qkv);
  return window_reverse(dflat.reshaped({nw, t, c}), layout);
}

Tensor linear_global_attention_backward(const Tensor& x, const LinearParams& qkv,
                                        const LinearParams& proj, const Tensor& scale,
                                        const BlockOptions& opts, const Tensor& dy,
                                        LinearParams* grad_qkv, LinearParams* grad_proj,
                                        Tensor* grad_scale, KinkTracker* kinks) {
  const std::size_t c = x.dim(1), heads = opts.num_heads, hd = c / heads;
  AttentionConfig cfg;
  cfg.num_heads = 1;
  cfg.head_dim = hd;
  cfg.feature_map = opts.feature_map;
  cfg.clamp_floor = opts.clamp_floor;
  cfg.scale = scale[0];
  const Tensor qkv_out = linear(x, qkv.weight, qkv.bias);
  const Tensor q = slice_columns(qkv_out, 0, c), k = slice_columns(qkv_out, c, 2 * c),
               v = slice_columns(qkv_out, 2 * c, 3 * c);
  Tensor attended({x.dim(0), c});
  for (std::size_t h = 0; h < heads; ++h) {
    write_columns(attended,
                  linear_attention_factored(head_columns(q, h, hd), head_columns(k, h, hd),
                                            head_columns(v, h, hd), cfg),
                  h * hd);
  }
  const Tensor dattended = linear_backward(attended, proj, dy, grad_proj);
  Tensor dqkv({x.dim(0), 3 * c});
  double ds = 0.0;
  for (std::size_t h = 0; h < heads; ++h) {
    const AttentionGrads g = linear_attention_factored_backward(
        head_columns(q, h, hd), head_columns(k, h, hd), head_columns(v, h, hd), cfg,
        head_columns(dattended, h, hd), kinks);
    write_columns(dqkv, g.dq, h * hd);
    write_columns(dqkv, g.dk, c + h * hd);
    write_columns(dqkv, g.dv, 2 * c + h * hd);
    ds += g.ds;
  }
  if (grad_scale) (*grad_scale)[0] += ds;
  return linear_backward(x, qkv, dqkv, grad_qkv);
}

Tensor lwa_block_backward(const Tensor& x, GridSize hw, const LwaBlockParams& p,
                          const BlockOptions& opts, const Tensor& dy, LwaBlockParams* grad) {
  const Tensor y1 = cpe_forward(x, hw, p.cpe);
  const Tensor n1 = layer_norm(y1, p.norm1.gamma, p.norm1.beta);
  const Tensor y2 =
      add(y1, window_attention(n1, hw, p.qkv, p.proj, opts.num_heads, opts.window));
  const Tensor n2 = layer_norm(y2, p.norm2.gamma, p.norm2.beta);

  const Tensor dn2 = mlp_backward(n2, p.mlp, dy, grad ? &grad->mlp : nullptr);
  const Tensor dy2 = add(dy, layer_norm_backward(y2, p.norm2, dn2, grad ? &grad->norm2 : nullptr));
  const Tensor dn1 =
      window_attention_backward(n1, hw, p.qkv, p.proj, opts.num_heads, opts.window, dy2,
                                grad ? &grad->qkv : nullptr, grad ? &grad->proj : nullptr);
  const Tensor dy1 = add(dy2, layer_norm_backward(y1, p.norm1, dn1, grad ? &grad->norm1 : nullptr));
  return cpe_backward(x, hw, p.cpe, dy1, grad ? &grad->cpe : nullptr);
}

Tensor lga_block_backward(const Tensor& x, GridSize hw, const LgaBlockParams& p,
                          const BlockOptions& opts, const Tensor& dy, LgaBlockParams* grad,
                          KinkTracker* kinks) {
  const Tensor y1 = cpe_forward(x, hw, p.cpe);
  const Tensor n1 = layer_norm(y1, p.norm1.gamma, p.norm1.beta);
  const Tensor y2 = add(y1, linear_global_attention(n1, p.qkv, p.proj, p.scale, opts));
  const Tensor y3 = lcm_residual(y2, hw, p.lcm);
  const Tensor n3 = layer_norm(y3, p.norm2.gamma, p.norm2.beta);

  const Tensor dn3 = mlp_backward(n3, p.mlp, dy, grad ? &grad->mlp : nullptr);
  const Tensor dy3 = add(dy, layer_norm_backward(y3, p.norm2, dn3, grad ? &grad->norm2 : nullptr));
  const Tensor dy2 = lcm_residual_backward(y2, hw, p.lcm, dy3, grad ? &grad->lcm : nullptr);
  const Tensor dn1 = linear_global_attention_backward(
      n1, p.qkv, p.proj, p.scale, opts, dy2, grad ? &grad->qkv : nullptr,
      grad ? &grad->proj : nullptr, grad ? &grad->scale : nullptr, kinks);
  const Tensor dy1 = add(dy2, layer_norm_backward(y1, p.norm1, dn1, grad ? &grad->norm1 : nullptr));
  return cpe_backward(x, hw, p.cpe, dy1, grad ? &grad->cpe : nullptr);
}

Tensor stem_backward(const Tensor& image, const StemParams& p, const Tensor& dy, StemParams* grad) {
  const Tensor h1 = conv2d(image, p.conv1.weight, p.conv1.bias, p.conv1.spec);
  const Tensor h2 = activation(h1, Activation::kGelu);
  const Tensor h3 = conv2d(h2, p.conv2.weight, p.conv2.bias, p.conv2.spec);
  const Tensor tokens = image_to_tokens(h3);
  Tensor d = layer_norm_backward(tokens, p.norm, dy, grad ? &grad->norm : nullptr);
  d = conv2d_backward(h2, p.conv2, tokens_to_image(d, h3.dim(1), h3.dim(2)),
                      grad ? &grad->conv2 : nullptr);
  d = gelu_backward(h1, d);
  return conv2d_backward(image, p.conv1, d, grad ? &grad->conv1 : nullptr);
}

Tensor patch_merge_backward(const Tensor& x, GridSize hw, const MergeParams& p, const Tensor& dy,
                            MergeParams* grad) {
  const Tensor img = tokens_to_image(x, hw.height, hw.width);
  const Tensor merged = conv2d(img, p.conv.weight, p.conv.bias, p.conv.spec);
  const Tensor tokens = image_to_tokens(merged);
  const Tensor d = layer_norm_backward(tokens, p.norm, dy, grad ? &grad->norm : nullptr);
  const Tensor dimg = conv2d_backward(img, p.conv, tokens_to_image(d, merged.dim(1), merged.dim(2)),
                                      grad ? &grad->conv : nullptr);
  return image_to_tokens(dimg);
}

Tensor model_backward(const Tensor& image, const ModelConfig& cfg, const ModelParams& params,
                      const Tensor& dlogits, ModelParams* grad, KinkTracker* kinks) {
  cfg.validate();
  if (dlogits.size() != cfg.num_classes) {
    throw Error(ErrorCode::kDimension, "model_backward: expected " +
                                           std::to_string(cfg.num_classes) + " logit cotangents");
  }
  // Forward sweep, keeping every block input.
  struct Step {
    enum Kind { kMerge, kLocal, kGlobal } kind;
    std::size_t stage, pair;
    GridSize hw;
    Tensor input;
  };
  std::vector<Step> steps;
  GridSize hw;
  Tensor x = stem_forward(image, params.stem, &hw);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto& stage = params.stages.at(s);
    const BlockOptions opts = block_options(cfg, s);
    if (stage.merge) {
      steps.push_back({Step::kMerge, s, 0, hw, x});
      x = patch_merge(x, hw, *stage.merge, &hw);
    }
    for (std::size_t i = 0; i < stage.pairs.size(); ++i) {
      steps.push_back({Step::kLocal, s, i, hw, x});
      x = lwa_block(x, hw, stage.pairs[i].local, opts);
      steps.push_back({Step::kGlobal, s, i, hw, x});
      x = lga_block(x, hw, stage.pairs[i].global, opts);
    }
  }

  // Head: logits = W mean_rows(LN(x)) + b.
  const Tensor normed = layer_norm(x, params.norm.gamma, params.norm.beta);
  const Tensor pooled = global_avg_pool(normed).reshaped({1, normed.dim(1)});
  const Tensor dpooled = linear_backward(pooled, params.head, dlogits.reshaped({1, cfg.num_classes}),
                                         grad ? &grad->head : nullptr);
  Tensor dnormed(normed.shape());
  const double inv_n = 1.0 / static_cast<double>(normed.dim(0));
  for (std::size_t i = 0; i < normed.dim(0); ++i)
    for (std::size_t c = 0; c < normed.dim(1); ++c) dnormed.at(i, c) = dpooled[c] * inv_n;
  Tensor d = layer_norm_backward(x, params.norm, dnormed, grad ? &grad->norm : nullptr);

  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    const auto& stage = params.stages[it->stage];
    StageParams* gstage = grad ? &grad->stages[it->stage] : nullptr;
    const BlockOptions opts = block_options(cfg, it->stage);
    switch (it->kind) {
      case Step::kMerge:
        d = patch_merge_backward(it->input, it->hw, *stage.merge, d,
                                 gstage ? &*gstage->merge : nullptr);
        break;
      case Step::kLocal:
        d = lwa_block_backward(it->input, it->hw, stage.pairs[it->pair].local, opts, d,
                               gstage ? &gstage->pairs[it->pair].local : nullptr);
        break;
      case Step::kGlobal:
        d = lga_block_backward(it->input, it->hw, stage.pairs[it->pair].global, opts, d,
                               gstage ? &gstage->pairs[it->pair].global : nullptr, kinks);
        break;
    }
  }
  return stem_backward(image, params.stem, d, grad ? &grad->stem : nullptr);
}

}  // namespace l2vit
