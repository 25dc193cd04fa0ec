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

// Shared fixtures and scalar reference implementations for tests. The oracles
// here use plain nested loops and deliberately share no code with src/.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "l2vit/random.hpp"
#include "l2vit/tensor.hpp"

namespace l2vit::testing {

inline Tensor random_uniform(std::uint64_t seed, Shape shape, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return rng.uniform_tensor(std::move(shape), lo, hi);
}

inline Tensor oracle_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a.data()[i * k + t] * b.data()[t * p + j];
      out[i * p + j] = acc;
    }
  return Tensor({m, p}, out);
}

/// Direct evaluation of a zero-padded cross-correlation, one output at a time.
inline Tensor oracle_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                            std::size_t pad, std::size_t groups) {
  const long cin = static_cast<long>(x.shape()[0]), h = static_cast<long>(x.shape()[1]),
             wd = static_cast<long>(x.shape()[2]);
  const long cout = static_cast<long>(w.shape()[0]), cpg = static_cast<long>(w.shape()[1]),
             kh = static_cast<long>(w.shape()[2]), kw = static_cast<long>(w.shape()[3]);
  const long s = static_cast<long>(stride), p = static_cast<long>(pad);
  const long oh = (h + 2 * p - kh) / s + 1, ow = (wd + 2 * p - kw) / s + 1;
  const long opg = cout / static_cast<long>(groups);
  (void)cin;
  std::vector<double> out(static_cast<std::size_t>(cout * oh * ow));
  for (long o = 0; o < cout; ++o)
    for (long y = 0; y < oh; ++y)
      for (long xx = 0; xx < ow; ++xx) {
        double acc = b.data()[static_cast<std::size_t>(o)];
        const long g = o / opg;
        for (long c = 0; c < cpg; ++c)
          for (long i = 0; i < kh; ++i)
            for (long j = 0; j < kw; ++j) {
              const long iy = y * s + i - p, ix = xx * s + j - p;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              const long ic = g * cpg + c;
              acc += w.data()[static_cast<std::size_t>(((o * cpg + c) * kh + i) * kw + j)] *
                     x.data()[static_cast<std::size_t>((ic * h + iy) * wd + ix)];
            }
        out[static_cast<std::size_t>((o * oh + y) * ow + xx)] = acc;
      }
  return Tensor({static_cast<std::size_t>(cout), static_cast<std::size_t>(oh),
                 static_cast<std::size_t>(ow)},
                out);
}

inline Tensor oracle_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  std::vector<double> y(n * out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b.data()[o];
      for (std::size_t t = 0; t < in; ++t) acc += x.data()[i * in + t] * w.data()[o * in + t];
      y[i * out + o] = acc;
    }
  return Tensor({n, out}, y);
}

/// Two-pass mean and biased variance per row, eps = 1e-5.
inline Tensor oracle_layer_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  Tensor out(x.shape());
  const std::size_t c = x.shape()[1];
  for (std::size_t i = 0; i < x.shape()[0]; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x.at(i, j) / static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) var += std::pow(x.at(i, j) - mean, 2) / static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j)
      out.at(i, j) = (x.at(i, j) - mean) / std::sqrt(var + 1e-5) * g.data()[j] + b.data()[j];
  }
  return out;
}

inline Tensor to_image(const Tensor& tokens, std::size_t h, std::size_t w) {
  const std::size_t c = tokens.shape()[1];
  Tensor img({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) img.at(ch, y, x) = tokens.at(y * w + x, ch);
  return img;
}

inline Tensor to_tokens(const Tensor& img) {
  const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  Tensor t({h * w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) t.at(y * w + x, ch) = img.at(ch, y, x);
  return t;
}

inline double oracle_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace l2vit::testing
