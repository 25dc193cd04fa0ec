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

// Parameter holders shared by the locality and model layers. Each holder
// exposes visit(prefix, fn), calling fn(name, tensor, kind) for every tensor
// it owns in a fixed order; names are dot-separated paths.

#include <cstddef>
#include <string>
#include <utility>

#include "l2vit/numerics.hpp"
#include "l2vit/tensor.hpp"

namespace l2vit {

enum class ParamKind { kLearnable, kBuffer };

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// Adds the const overload of visit() on top of a mutable visit_mut().
template <class Derived>
struct Visitable {
  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    static_cast<Derived&>(*this).visit_mut(prefix, fn);
  }
  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    auto& self = const_cast<Derived&>(static_cast<const Derived&>(*this));
    self.visit_mut(prefix, [&](const std::string& name, Tensor& t, ParamKind kind) {
      fn(name, std::as_const(t), kind);
    });
  }
};

struct LinearParams : Visitable<LinearParams> {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static LinearParams zeros(std::size_t in, std::size_t out) {
    LinearParams p;
    p.weight = Tensor({out, in});
    p.bias = Tensor({out});
    return p;
  }
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    fn(join_name(prefix, "weight"), weight, ParamKind::kLearnable);
    fn(join_name(prefix, "bias"), bias, ParamKind::kLearnable);
  }
};

/// Affine parameters of a layer norm (gamma, beta).
struct NormParams : Visitable<NormParams> {
  Tensor gamma;
  Tensor beta;

  static NormParams identity(std::size_t channels) {
    NormParams p;
    p.gamma = Tensor({channels}, 1.0);
    p.beta = Tensor({channels});
    return p;
  }

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    fn(join_name(prefix, "weight"), gamma, ParamKind::kLearnable);
    fn(join_name(prefix, "bias"), beta, ParamKind::kLearnable);
  }
};

struct ConvParams : Visitable<ConvParams> {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  static ConvParams zeros(const ConvSpec& spec) {
    spec.validate();
    ConvParams p;
    p.spec = spec;
    p.weight = Tensor(spec.weight_shape());
    p.bias = Tensor({spec.out_channels});
    return p;
  }

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    fn(join_name(prefix, "weight"), weight, ParamKind::kLearnable);
    fn(join_name(prefix, "bias"), bias, ParamKind::kLearnable);
  }
};

/// Inference-mode batch norm: stored statistics are buffers, not parameters.
struct BatchNormParams : Visitable<BatchNormParams> {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  static BatchNormParams identity(std::size_t channels) {
    BatchNormParams p;
    p.gamma = Tensor({channels}, 1.0);
    p.beta = Tensor({channels});
    p.running_mean = Tensor({channels});
    p.running_var = Tensor({channels}, 1.0);
    return p;
  }

  template <class Fn>
  void visit_mut(const std::string& prefix, Fn&& fn) {
    fn(join_name(prefix, "weight"), gamma, ParamKind::kLearnable);
    fn(join_name(prefix, "bias"), beta, ParamKind::kLearnable);
    fn(join_name(prefix, "running_mean"), running_mean, ParamKind::kBuffer);
    fn(join_name(prefix, "running_var"), running_var, ParamKind::kBuffer);
  }
};

/// Copy of `p` with every tensor zero-filled; used as a gradient accumulator.
template <class P>
P zeros_like(const P& p) {
  P out = p;
  out.visit("", [](const std::string&, Tensor& t, ParamKind) { t.fill(0.0); });
  return out;
}

template <class P>
std::size_t count_learnable(const P& p) {
  std::size_t n = 0;
  p.visit("", [&](const std::string&, const Tensor& t, ParamKind kind) {
    if (kind == ParamKind::kLearnable) n += t.size();
  });
  return n;
}

}  // namespace l2vit
