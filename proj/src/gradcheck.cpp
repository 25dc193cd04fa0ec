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

#include <cmath>
#include <functional>
#include <memory>

#include "l2vit/analysis.hpp"
#include "l2vit/grad.hpp"
#include "l2vit/numerics.hpp"
#include "l2vit/random.hpp"

namespace l2vit {

const char* to_string(GradTarget target) {
  switch (target) {
    case GradTarget::kLinear: return "linear";
    case GradTarget::kAttention: return "attn";
    case GradTarget::kLcm: return "lcm";
    case GradTarget::kCpe: return "cpe";
    case GradTarget::kLwaBlock: return "lwa";
    case GradTarget::kLgaBlock: return "lga";
    case GradTarget::kModel: return "model";
  }
  return "?";
}

GradTarget parse_grad_target(const std::string& text) {
  for (GradTarget t : {GradTarget::kLinear, GradTarget::kAttention, GradTarget::kLcm,
                       GradTarget::kCpe, GradTarget::kLwaBlock, GradTarget::kLgaBlock,
                       GradTarget::kModel}) {
    if (text == to_string(t)) return t;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown gradcheck target '" + text + "'");
}

namespace {

// A differentiable function of a flat set of variables (learnable parameters
// and inputs). backward() returns gradients aligned with `vars`.
struct Problem {
  std::vector<Tensor*> vars;
  std::function<Tensor()> forward;
  std::function<std::vector<Tensor>(const Tensor& dy, KinkTracker* kinks)> backward;
  std::shared_ptr<void> owner;
};

template <class P>
void collect_learnable(P& p, std::vector<Tensor*>& out) {
  p.visit("", [&](const std::string&, Tensor& t, ParamKind kind) {
    if (kind == ParamKind::kLearnable) out.push_back(&t);
  });
}

template <class P>
void append_learnable(const P& p, std::vector<Tensor>& out) {
  p.visit("", [&](const std::string&, const Tensor& t, ParamKind kind) {
    if (kind == ParamKind::kLearnable) out.push_back(t);
  });
}

// Random evaluation point: uniform weights, positive scales and variances.
template <class P>
void randomize(P& p, Rng& rng, double spread) {
  p.visit("", [&](const std::string& name, Tensor& t, ParamKind) {
    const bool positive = name.find("running_var") != std::string::npos;
    const bool scale = name.size() >= 5 && name.compare(name.size() - 5, 5, "scale") == 0;
    for (auto& v : t.data()) {
      if (positive) {
        v = rng.uniform(0.5, 2.0);
      } else if (scale) {
        v = rng.uniform(1.0, 4.0);
      } else {
        v = rng.uniform(-spread, spread);
      }
    }
  });
}

template <class State>
std::shared_ptr<State> own(Problem& prob) {
  auto st = std::make_shared<State>();
  prob.owner = st;
  return st;
}

Problem linear_problem(Rng& rng) {
  struct State {
    LinearParams p;
    Tensor x;
  };
  Problem prob;
  auto st = own<State>(prob);
  st->p = LinearParams::zeros(5, 4);
  randomize(st->p, rng, 1.0);
  st->x = rng.uniform_tensor({6, 5}, -1.0, 1.0);
  collect_learnable(st->p, prob.vars);
  prob.vars.push_back(&st->x);
  State* s = st.get();
  prob.forward = [s] { return linear(s->x, s->p.weight, s->p.bias); };
  prob.backward = [s](const Tensor& dy, KinkTracker*) {
    LinearParams g = zeros_like(s->p);
    Tensor dx = linear_backward(s->x, s->p, dy, &g);
    std::vector<Tensor> out;
    append_learnable(g, out);
    out.push_back(std::move(dx));
    return out;
  };
  return prob;
}

Problem attention_problem(Rng& rng) {
  struct State {
    Tensor q, k, v, s;
    AttentionConfig cfg;
  };
  Problem prob;
  auto st = own<State>(prob);
  st->q = rng.uniform_tensor({12, 6}, -1.0, 1.0);
  st->k = rng.uniform_tensor({12, 6}, -1.0, 1.0);
  st->v = rng.uniform_tensor({12, 6}, -1.0, 1.0);
  st->s = Tensor({1}, rng.uniform(1.0, 4.0));
  st->cfg.head_dim = 6;
  // Floor near the typical row sum so both clamp branches occur.
  st->cfg.clamp_floor = 2.0;
  prob.vars = {&st->q, &st->k, &st->v, &st->s};
  State* s = st.get();
  prob.forward = [s] {
    AttentionConfig cfg = s->cfg;
    cfg.scale = s->s[0];
    return linear_attention_factored(s->q, s->k, s->v, cfg);
  };
  prob.backward = [s](const Tensor& dy, KinkTracker* kinks) {
    AttentionConfig cfg = s->cfg;
    cfg.scale = s->s[0];
    AttentionGrads g = linear_attention_factored_backward(s->q, s->k, s->v, cfg, dy, kinks);
    return std::vector<Tensor>{g.dq, g.dk, g.dv, Tensor({1}, g.ds)};
  };
  return prob;
}

Problem lcm_problem(Rng& rng) {
  struct State {
    LcmParams p;
    Tensor x;
  };
  const GridSize hw{5, 6};
  Problem prob;
  auto st = own<State>(prob);
  st->p = LcmParams::zeros(6, 7);
  randomize(st->p, rng, 0.5);
  st->x = rng.uniform_tensor({hw.tokens(), 6}, -1.0, 1.0);
  collect_learnable(st->p, prob.vars);
  prob.vars.push_back(&st->x);
  State* s = st.get();
  prob.forward = [s, hw] { return lcm_residual(s->x, hw, s->p); };
  prob.backward = [s, hw](const Tensor& dy, KinkTracker*) {
    LcmParams g = zeros_like(s->p);
    Tensor dx = lcm_residual_backward(s->x, hw, s->p, dy, &g);
    std::vector<Tensor> out;
    append_learnable(g, out);
    out.push_back(std::move(dx));
    return out;
  };
  return prob;
}

Problem cpe_problem(Rng& rng) {
  struct State {
    CpeParams p;
    Tensor x;
  };
  const GridSize hw{4, 5};
  Problem prob;
  auto st = own<State>(prob);
  st->p = CpeParams::zeros(4);
  randomize(st->p, rng, 0.5);
  st->x = rng.uniform_tensor({hw.tokens(), 4}, -1.0, 1.0);
  collect_learnable(st->p, prob.vars);
  prob.vars.push_back(&st->x);
  State* s = st.get();
  prob.forward = [s, hw] { return cpe_forward(s->x, hw, s->p); };
  prob.backward = [s, hw](const Tensor& dy, KinkTracker*) {
    CpeParams g = zeros_like(s->p);
    Tensor dx = cpe_backward(s->x, hw, s->p, dy, &g);
    std::vector<Tensor> out;
    append_learnable(g, out);
    out.push_back(std::move(dx));
    return out;
  };
  return prob;
}

// The block problems use a 5 x 6 grid with window 3 so the bottom row of
// windows is padded.
Problem lwa_problem(Rng& rng) {
  struct State {
    LwaBlockParams p;
    Tensor x;
  };
  const GridSize hw{5, 6};
  const BlockOptions opts{2, 3, FeatureMap::kRelu, kDefaultClampFloor};
  Problem prob;
  auto st = own<State>(prob);
  st->p = LwaBlockParams::zeros(8, 32);
  randomize(st->p, rng, 0.3);
  st->x = rng.uniform_tensor({hw.tokens(), 8}, -1.0, 1.0);
  collect_learnable(st->p, prob.vars);
  prob.vars.push_back(&st->x);
  State* s = st.get();
  prob.forward = [s, hw, opts] { return lwa_block(s->x, hw, s->p, opts); };
  prob.backward = [s, hw, opts](const Tensor& dy, KinkTracker*) {
    LwaBlockParams g = zeros_like(s->p);
    Tensor dx = lwa_block_backward(s->x, hw, s->p, opts, dy, &g);
    std::vector<Tensor> out;
    append_learnable(g, out);
    out.push_back(std::move(dx));
    return out;
  };
  return prob;
}

Problem lga_problem(Rng& rng) {
  struct State {
    LgaBlockParams p;
    Tensor x;
  };
  const GridSize hw{5, 6};
  const BlockOptions opts{2, 3, FeatureMap::kRelu, 1.0};
  Problem prob;
  auto st = own<State>(prob);
  st->p = LgaBlockParams::zeros(8, 32, 3);
  randomize(st->p, rng, 0.3);
  st->x = rng.uniform_tensor({hw.tokens(), 8}, -1.0, 1.0);
  collect_learnable(st->p, prob.vars);
  prob.vars.push_back(&st->x);
  State* s = st.get();
  prob.forward = [s, hw, opts] { return lga_block(s->x, hw, s->p, opts); };
  prob.backward = [s, hw, opts](const Tensor& dy, KinkTracker* kinks) {
    LgaBlockParams g = zeros_like(s->p);
    Tensor dx = lga_block_backward(s->x, hw, s->p, opts, dy, &g, kinks);
    std::vector<Tensor> out;
    append_learnable(g, out);
    out.push_back(std::move(dx));
    return out;
  };
  return prob;
}

/// Tiny widths with one block pair per stage on a 64 x 64 image.
ModelConfig model_check_config() {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.stage_pairs = {1, 1, 1, 1};
  return cfg;
}

Problem model_problem(Rng& rng) {
  struct State {
    ModelConfig cfg;
    ModelParams p;
    Tensor image;
  };
  Problem prob;
  auto st = own<State>(prob);
  st->cfg = model_check_config();
  st->p = init_model_params(st->cfg, rng.next_u64());
  // Move away from the initialization so biases, norms and BN statistics are
  // generic.
  st->p.visit("", [&](const std::string& name, Tensor& t, ParamKind) {
    if (name.find("running_var") != std::string::npos) {
      for (auto& v : t.data()) v = rng.uniform(0.5, 2.0);
    } else if (name.find("attn.scale") != std::string::npos) {
      t[0] *= rng.uniform(0.5, 2.0);
    } else {
      for (auto& v : t.data()) v += rng.uniform(-0.05, 0.05);
    }
  });
  st->image = rng.uniform_tensor({3, 64, 64}, -1.0, 1.0);
  collect_learnable(st->p, prob.vars);
  prob.vars.push_back(&st->image);
  State* s = st.get();
  prob.forward = [s] { return forward(s->image, s->cfg, s->p); };
  prob.backward = [s](const Tensor& dy, KinkTracker* kinks) {
    ModelParams g = zeros_like(s->p);
    Tensor dimage = model_backward(s->image, s->cfg, s->p, dy, &g, kinks);
    std::vector<Tensor> out;
    append_learnable(g, out);
    out.push_back(std::move(dimage));
    return out;
  };
  return prob;
}

Problem make_problem(GradTarget target, Rng& rng) {
  switch (target) {
    case GradTarget::kLinear: return linear_problem(rng);
    case GradTarget::kAttention: return attention_problem(rng);
    case GradTarget::kLcm: return lcm_problem(rng);
    case GradTarget::kCpe: return cpe_problem(rng);
    case GradTarget::kLwaBlock: return lwa_problem(rng);
    case GradTarget::kLgaBlock: return lga_problem(rng);
    case GradTarget::kModel: return model_problem(rng);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown gradcheck target");
}

double contract(const Tensor& g, const Tensor& y) {
  if (!y.all_finite()) throw Error(ErrorCode::kNonFinite, "gradcheck: non-finite forward value");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += g[i] * y[i];
  return acc;
}

}  // namespace

GradCheckResult grad_check(GradTarget target, std::uint64_t seed, const GradCheckOptions& opts) {
  if (opts.points == 0 || opts.directions == 0 || !(opts.step > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "gradcheck: points, directions and step must be positive");
  }
  GradCheckResult result;
  result.target = target;
  Rng rng(seed);
  for (std::size_t point = 0; point < opts.points; ++point) {
    Problem prob;
    Tensor cotangent;
    std::vector<Tensor> grads;
    for (std::size_t attempt = 0;; ++attempt) {
      prob = make_problem(target, rng);
      const Tensor y = prob.forward();
      cotangent = rng.uniform_tensor(y.shape(), -1.0, 1.0);
      KinkTracker kinks;
      grads = prob.backward(cotangent, &kinks);
      if (kinks.min_gap >= opts.kink_margin) break;
      if (attempt + 1 >= opts.max_resamples) {
        throw Error(ErrorCode::kDegenerateInput, "gradcheck: no point away from kinks found");
      }
      ++result.resamples;
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].all_finite()) throw Error(ErrorCode::kNonFinite, "gradcheck: non-finite gradient");
      count += prob.vars[i]->size();
    }
    result.variables = count;

    for (std::size_t dir = 0; dir < opts.directions; ++dir) {
      std::vector<Tensor> u;
      double norm = 0.0;
      for (Tensor* v : prob.vars) {
        u.push_back(rng.normal_tensor(v->shape()));
        for (double x : u.back().data()) norm += x * x;
      }
      norm = std::sqrt(norm);
      double analytic = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        for (auto& x : u[i].data()) x /= norm;
        for (std::size_t j = 0; j < u[i].size(); ++j) analytic += grads[i][j] * u[i][j];
      }
      std::vector<Tensor> saved;
      for (Tensor* v : prob.vars) saved.push_back(*v);
      auto evaluate = [&](double h) {
        for (std::size_t i = 0; i < u.size(); ++i)
          for (std::size_t j = 0; j < u[i].size(); ++j) (*prob.vars[i])[j] = saved[i][j] + h * u[i][j];
        return contract(cotangent, prob.forward());
      };
      const double plus = evaluate(opts.step);
      const double minus = evaluate(-opts.step);
      for (std::size_t i = 0; i < u.size(); ++i) *prob.vars[i] = saved[i];
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-8);
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
    ++result.points;
    result.directions += opts.directions;
  }
  return result;
}

}  // namespace l2vit
