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

// Acceptance checks. Prints one "PASS [n] ..." or "FAIL [n] ..." line per
// criterion followed by a summary line.
//
// Usage: l2vit_acceptance [--only N[,N...]] [--known-failure N[,N...]]
//                         [--readme PATH]
//
// The exit code is 0 when every criterion that ran passed, apart from those
// listed with --known-failure, which are still reported as FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "l2vit/analysis.hpp"
#include "l2vit/attention.hpp"
#include "l2vit/io.hpp"
#include "l2vit/model.hpp"
#include "l2vit/parallel.hpp"
#include "l2vit/random.hpp"

namespace l2vit {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

bool within(double value, double target, double rel) {
  return std::abs(value - target) <= rel * target;
}

// 1. Parameter counts.
Outcome params() {
  struct Row {
    const char* name;
    ModelConfig cfg;
    double millions;
  };
  const Row rows[] = {{"tiny", ModelConfig::tiny(), 29.0},
                      {"small", ModelConfig::small(), 50.0},
                      {"base", ModelConfig::base(), 89.0}};
  Outcome o{true, ""};
  for (const auto& r : rows) {
    const double m = static_cast<double>(param_count(r.cfg)) / 1e6;
    o.pass &= within(m, r.millions, 0.03);
    o.detail += std::string(r.name) + " " + fmt(m) + "M/" + fmt(r.millions) + "M ";
  }
  o.detail += "(+-3%)";
  return o;
}

// 2. FLOP counts.
Outcome flops() {
  struct Row {
    const char* name;
    ModelConfig cfg;
    std::size_t size;
    double gflops;
  };
  const Row rows[] = {{"tiny@224", ModelConfig::tiny(), 224, 4.7},
                      {"small@224", ModelConfig::small(), 224, 9.0},
                      {"base@224", ModelConfig::base(), 224, 15.9},
                      {"base@384", ModelConfig::base(), 384, 47.5}};
  Outcome o{true, ""};
  for (const auto& r : rows) {
    const double g = flop_count(r.cfg, {r.size, r.size}).gflops();
    o.pass &= within(g, r.gflops, 0.05);
    o.detail += std::string(r.name) + " " + fmt(g) + "G/" + fmt(r.gflops) + "G ";
  }
  o.detail += "(+-5%)";
  return o;
}

// 3. Direct and factored orders agree, clamp inactive and clamp active.
Outcome order_identity() {
  Rng rng(3);
  double worst_free = 0.0, worst_clamped = 0.0;
  std::size_t clamped_rows = 0, redraws = 0;
  for (int instance = 0; instance < 100; ++instance) {
    const auto n = static_cast<std::size_t>(rng.uniform(1.0, 65.0));
    const auto d = static_cast<std::size_t>(rng.uniform(1.0, 33.0));
    Tensor q, k, v, a;
    AttentionConfig cfg;
    cfg.head_dim = d;
    cfg.clamp_floor = kMinClampFloor;
    cfg.scale = 1.0;
    std::vector<double> den;
    // Rows whose relu features vanish would engage the floor; they are
    // redrawn so the unclamped comparison stays unclamped.
    auto draw = [&] {
      Tensor t = rng.uniform_tensor({n, d}, -1.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (;;) {
          bool positive = false;
          for (std::size_t c = 0; c < d; ++c) positive |= t.at(i, c) > 0.0;
          if (positive) break;
          for (std::size_t c = 0; c < d; ++c) t.at(i, c) = rng.uniform(-1.0, 1.0);
          ++redraws;
        }
      }
      return t;
    };
    for (;;) {
      q = draw();
      k = draw();
      v = rng.uniform_tensor({n, d}, -1.0, 1.0);
      a = linear_attention_matrix(q, k, cfg);
      den.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) den[i] += a.at(i, j);
      if (*std::min_element(den.begin(), den.end()) > cfg.clamp_floor) break;
      ++redraws;
    }
    worst_free = std::max(worst_free, max_abs_diff(linear_attention_direct(q, k, v, cfg),
                                                   linear_attention_factored(q, k, v, cfg)));
    // A floor at the median denominator clamps about half the rows.
    std::vector<double> sorted = den;
    std::sort(sorted.begin(), sorted.end());
    cfg.clamp_floor = std::max(kMinClampFloor, sorted[n / 2]);
    for (double s : {0.5, 1.0, 8.0}) {
      cfg.scale = s;
      worst_clamped = std::max(worst_clamped, max_abs_diff(linear_attention_direct(q, k, v, cfg),
                                                           linear_attention_factored(q, k, v, cfg)));
    }
    for (double x : den) clamped_rows += x < cfg.clamp_floor;
  }
  return {worst_free <= 1e-9 && worst_clamped <= 1e-9 && clamped_rows > 0,
          "100 instances N<=64 d<=32: unclamped max diff " + fmt(worst_free) +
              ", clamped max diff " + fmt(worst_clamped) + " over " +
              std::to_string(clamped_rows) + " clamped rows (<= 1e-9), " + std::to_string(redraws) +
              " redraws"};
}

// 4. Non-negativity of the relu map; other maps go negative.
Outcome non_negativity() {
  std::size_t relu_neg = 0, l1_neg = 0, leaky_neg = 0;
  Rng rng(4);
  for (int instance = 0; instance < 100; ++instance) {
    const auto n = static_cast<std::size_t>(rng.uniform(2.0, 65.0));
    const auto d = static_cast<std::size_t>(rng.uniform(2.0, 33.0));
    const Tensor q = rng.uniform_tensor({n, d}, -1.0, 1.0);
    const Tensor k = rng.uniform_tensor({n, d}, -1.0, 1.0);
    AttentionConfig cfg;
    cfg.head_dim = d;
    auto negatives = [&](FeatureMap fm) {
      cfg.feature_map = fm;
      const Tensor a = linear_attention_matrix(q, k, cfg);
      return static_cast<std::size_t>(
          std::count_if(a.data().begin(), a.data().end(), [](double x) { return x < 0.0; }));
    };
    relu_neg += negatives(FeatureMap::kRelu);
    l1_neg += negatives(FeatureMap::kL1Norm);
    leaky_neg += negatives(FeatureMap::kLeakyRelu);
  }
  return {relu_neg == 0 && l1_neg > 0 && leaky_neg > 0,
          "negative entries over 100 instances: relu " + std::to_string(relu_neg) + ", l1_norm " +
              std::to_string(l1_neg) + ", leaky_relu " + std::to_string(leaky_neg)};
}

// 5. Gradient checks.
Outcome gradients() {
  const GradTarget targets[] = {GradTarget::kAttention, GradTarget::kLcm,
                                GradTarget::kCpe,       GradTarget::kLwaBlock,
                                GradTarget::kLgaBlock,  GradTarget::kModel};
  const auto start = std::chrono::steady_clock::now();
  Outcome o{true, ""};
  for (auto t : targets) {
    const GradCheckResult r = grad_check(t, 2026);
    o.pass &= r.max_rel_error <= 1e-4 && r.points == 5;
    o.detail += std::string(to_string(t)) + " " + fmt(r.max_rel_error, 2) + " ";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.pass &= secs < 300.0;
  o.detail += "(max rel error <= 1e-4, 5 points x 3 directions, " + fmt(secs, 3) + " s)";
  return o;
}

// 6. Runtime scaling of the two orders and the order rule.
Outcome complexity() {
  bool rule = true;
  for (std::size_t n = 1; n <= 64; ++n)
    for (std::size_t d = 1; d <= 64; ++d) {
      const bool factored = select_attention_order(n, d) == AttentionOrder::kFactored;
      rule &= d == n ? factored : factored == (d < n);
    }
  BenchOptions opts;
  opts.head_dim = 32;
  opts.repetitions = 5;
  opts.warmups = 1;
  const auto start = std::chrono::steady_clock::now();
  const auto rows = bench_orders({1024, 2048, 4096, 8192, 16384}, opts);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::vector<double> n, td, tf;
  for (const auto& r : rows) {
    n.push_back(static_cast<double>(r.tokens));
    td.push_back(r.direct_seconds);
    tf.push_back(r.factored_seconds);
  }
  const double sd = loglog_slope(n, td), sf = loglog_slope(n, tf);
  return {rule && sd >= 1.7 && sf <= 1.3 && secs < 300.0,
          "slope direct " + fmt(sd, 3) + " (>= 1.7), factored " + fmt(sf, 3) +
              " (<= 1.3), N=1024..16384 d=32 in " + fmt(secs, 3) +
              " s; order rule factored iff d < N (ties factored) " + (rule ? "holds" : "broken")};
}

// 7. Clamp floor behavior.
Outcome clamp() {
  const auto rows = clamp_sweep({1e-6, 1e-1, 1.0, 1e1, 1e2, 1e3}, {});
  const auto big = clamp_sweep({1e9}, {});
  const bool monotone = max_activation_non_increasing(rows);
  std::string acts;
  for (const auto& r : rows) acts += fmt(r.max_activation) + " ";
  return {monotone && big[0].max_activation < 1e-3,
          "max activation over C_min 1e-6..1e3: " + acts + (monotone ? "(non-increasing)" : "(INCREASES)") +
              "; C_min=1e9 max-abs " + fmt(big[0].max_activation) + " (< 1e-3)"};
}

// 8. Local concentration after row aggregation.
Outcome concentration() {
  const ModelConfig cfg = ModelConfig::tiny();
  const ModelParams params = init_model_params(cfg, 0);
  ForwardTrace trace;
  trace.capture_attention = true;
  Rng rng(1);
  forward(rng.uniform_tensor({3, 224, 224}, -1.0, 1.0), cfg, params, &trace);
  const ConcentrationStats stats = concentration_stats(trace);
  const double wins = stats.enhanced_win_fraction();
  std::size_t won = 0;
  for (const auto& l : stats.layers) won += l.enhanced.neighborhood_mass > l.plain.neighborhood_mass;
  return {wins >= 0.9 && stats.total_negative() == 0,
          "tiny@224 init seed 0: aggregation raises r=1 neighborhood mass on " +
              std::to_string(won) + "/" + std::to_string(stats.layers.size()) + " layers (" +
              fmt(wins, 3) + ", need >= 0.9); relu negatives " +
              std::to_string(stats.total_negative())};
}

// 9. Determinism and weight round trip.
Outcome determinism() {
  const ModelConfig cfg = ModelConfig::tiny();
  Rng rng(9);
  const Tensor image = rng.uniform_tensor({3, 224, 224}, -1.0, 1.0);
  const WeightStore a = init_weights(cfg, 42);
  const WeightStore b = init_weights(cfg, 42);
  const bool same_init = a == b;
  Tensor serial, parallel;
  {
    ThreadCountGuard guard(1);
    serial = forward(image, cfg, a);
  }
  {
    ThreadCountGuard guard(4);
    parallel = forward(image, cfg, b);
  }
  const std::string first = serialize_weights(a);
  const WeightStore loaded = deserialize_weights(first);
  const bool round_trip = serialize_weights(loaded) == first;
  const bool reload_logits = forward(image, cfg, loaded) == serial;
  return {same_init && serial == parallel && round_trip && reload_logits,
          std::string("same-seed stores ") + (same_init ? "identical" : "DIFFER") +
              ", 1-thread vs 4-thread logits " + (serial == parallel ? "bit-identical" : "DIFFER") +
              ", save/load/save " + (round_trip ? "byte-identical" : "DIFFERS") +
              ", reloaded logits " + (reload_logits ? "bit-identical" : "DIFFER")};
}

// 10. The non-reproducible figures are documented.
Outcome reproducibility_note(const std::string& readme) {
  std::ifstream in(readme);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const bool ok = !text.empty() && text.find("not reproducible") != std::string::npos &&
                  text.find("83.1") != std::string::npos && text.find("mIoU") != std::string::npos;
  return {ok, "ImageNet top-1 (83.1/84.1/84.4/87.0), COCO AP and ADE20K mIoU need training at a "
              "scale outside this repository; they are replaced by criteria 1-9. Note " +
                  std::string(ok ? "present in " : "MISSING from ") + readme};
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace
}  // namespace l2vit

int main(int argc, char** argv) {
  using namespace l2vit;
  std::set<int> only, known;
  std::string readme = L2VIT_README_PATH;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--only") {
      only = parse_list(argv[i + 1]);
    } else if (flag == "--known-failure") {
      known = parse_list(argv[i + 1]);
    } else if (flag == "--readme") {
      readme = argv[i + 1];
    } else {
      std::fprintf(stderr, "unknown flag %s\n", flag.c_str());
      return 2;
    }
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"parameter counts", params},
      {"FLOP counts", flops},
      {"evaluation-order identity", order_identity},
      {"non-negativity", non_negativity},
      {"gradient checks", gradients},
      {"complexity crossover", complexity},
      {"clamp behavior", clamp},
      {"concentration property", concentration},
      {"determinism and round trip", determinism},
      {"non-reproducibility note", [&] { return reproducibility_note(readme); }},
  };

  int passed = 0, failed = 0, unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s [%d] %s: %s%s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), !o.pass && known.count(id) ? " (known failure)" : "");
    std::fflush(stdout);
    if (o.pass) {
      ++passed;
    } else {
      ++failed;
      if (!known.count(id)) ++unexpected;
    }
  }
  std::printf("SUMMARY %d passed, %d failed (%d unexpected)\n", passed, failed, unexpected);
  return unexpected == 0 ? 0 : 1;
}
