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

#include "l2vit/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "l2vit/csv.hpp"
#include "l2vit/numerics.hpp"
#include "l2vit/parallel.hpp"
#include "l2vit/random.hpp"

namespace l2vit {

std::uint64_t FlopReport::total() const {
  std::uint64_t t = 0;
  for (const auto& r : records) t += r.macs;
  return t;
}

std::uint64_t FlopReport::total_with_suffix(const std::string& suffix) const {
  std::uint64_t t = 0;
  for (const auto& r : records) {
    if (r.name.size() >= suffix.size() &&
        r.name.compare(r.name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      t += r.macs;
    }
  }
  return t;
}

std::uint64_t attention_core_macs(AttentionOrder order, std::uint64_t tokens,
                                  std::uint64_t head_dim) {
  return order == AttentionOrder::kDirect ? 2 * tokens * tokens * head_dim
                                          : 2 * tokens * head_dim * head_dim;
}

FlopReport flop_count(const ModelConfig& cfg, GridSize input) {
  cfg.validate();
  if (input.height % 4 != 0 || input.width % 4 != 0 || input.height == 0 || input.width == 0) {
    throw Error(ErrorCode::kDimension, "flop_count: input sides must be positive multiples of 4");
  }
  FlopReport report;
  auto add = [&](std::string name, std::uint64_t macs) {
    report.records.push_back({std::move(name), macs});
  };
  const std::uint64_t d1 = cfg.stem_dims[0], c0 = cfg.stem_dims[1];
  std::uint64_t h = input.height / 2, w = input.width / 2;
  add("stem.conv1", d1 * 3 * 9 * h * w);
  h /= 2;
  w /= 2;
  add("stem.conv2", c0 * d1 * 9 * h * w);

  const std::uint64_t k2 = cfg.lcm_kernel * cfg.lcm_kernel;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::string stage = "stages." + std::to_string(s);
    const std::uint64_t c = cfg.stage_dims[s], heads = cfg.stage_heads[s];
    const std::uint64_t hidden = cfg.mlp_hidden(s), hd = c / heads;
    if (s > 0) {
      if (h % 2 != 0 || w % 2 != 0) {
        throw Error(ErrorCode::kDimension, "flop_count: odd grid before " + stage);
      }
      h /= 2;
      w /= 2;
      add(stage + ".downsample.conv", c * cfg.stage_dims[s - 1] * 4 * h * w);
    }
    const std::uint64_t n = h * w;
    const WindowLayout layout{h, w, cfg.window};
    const std::uint64_t padded = layout.num_windows() * layout.window_tokens();
    for (std::size_t i = 0; i < cfg.stage_pairs[s]; ++i) {
      for (std::size_t b = 0; b < 2; ++b) {
        const std::string blk = stage + ".blocks." + std::to_string(2 * i + b);
        add(blk + ".cpe", 9 * c * n);
        if (b == 0) {
          // Padded tokens go through the projection and take part in attention.
          add(blk + ".attn.qkv", padded * c * 3 * c);
          add(blk + ".attn.core", layout.num_windows() * heads *
                                      attention_core_macs(AttentionOrder::kDirect,
                                                          layout.window_tokens(), hd));
          add(blk + ".attn.proj", padded * c * c);
        } else {
          add(blk + ".attn.qkv", n * c * 3 * c);
          add(blk + ".attn.core", heads * attention_core_macs(AttentionOrder::kFactored, n, hd));
          add(blk + ".attn.proj", n * c * c);
          add(blk + ".lcm", 2 * k2 * c * n);
        }
        add(blk + ".mlp.fc1", n * c * hidden);
        add(blk + ".mlp.fc2", n * hidden * c);
      }
    }
  }
  add("head", cfg.stage_dims.back() * cfg.num_classes);
  return report;
}

// ---------------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <class Fn>
double time_median(Fn&& fn, std::size_t warmups, std::size_t reps) {
  volatile double sink = 0.0;
  for (std::size_t i = 0; i < warmups; ++i) sink = sink + fn();
  std::vector<double> times;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = sink + fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return median(times);
}

}  // namespace

std::vector<BenchRow> bench_orders(const std::vector<std::size_t>& tokens,
                                   const BenchOptions& opts) {
  if (tokens.empty()) throw Error(ErrorCode::kInvalidArgument, "bench: empty token list");
  if (!std::is_sorted(tokens.begin(), tokens.end()) || tokens.front() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "bench: token counts must be positive and ascending");
  }
  if (opts.repetitions == 0 || opts.head_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "bench: repetitions and head_dim must be positive");
  }
  ThreadCountGuard single(1);
  AttentionConfig cfg;
  cfg.head_dim = opts.head_dim;
  cfg.scale = AttentionConfig::initial_scale(opts.head_dim);
  std::vector<BenchRow> rows;
  for (std::size_t n : tokens) {
    Rng rng(opts.seed + n);
    const Tensor q = rng.uniform_tensor({n, opts.head_dim}, -1.0, 1.0);
    const Tensor k = rng.uniform_tensor({n, opts.head_dim}, -1.0, 1.0);
    const Tensor v = rng.uniform_tensor({n, opts.head_dim}, -1.0, 1.0);
    BenchRow row;
    row.tokens = n;
    row.direct_seconds = time_median(
        [&] { return linear_attention_direct(q, k, v, cfg)[0]; }, opts.warmups, opts.repetitions);
    row.factored_seconds = time_median(
        [&] { return linear_attention_factored(q, k, v, cfg)[0]; }, opts.warmups, opts.repetitions);
    rows.push_back(row);
  }
  return rows;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "loglog_slope: need at least two matched points");
  }
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "loglog_slope: values must be positive");
    }
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  CsvTable table({"n", "t_direct_s", "t_factored_s"});
  for (const auto& r : rows) {
    table.row()
        .add(static_cast<std::uint64_t>(r.tokens))
        .add(r.direct_seconds)
        .add(r.factored_seconds);
  }
  return table.str();
}

// ---------------------------------------------------------------------------

Tensor clamp_sweep_forward(double clamp_floor, const ClampSweepOptions& opts) {
  const std::size_t n = opts.tokens, c = opts.channels;
  if (n == 0 || opts.num_heads == 0 || c % opts.num_heads != 0) {
    throw Error(ErrorCode::kInvalidArgument, "clamp_sweep: heads must divide channels");
  }
  Rng rng(opts.seed);
  Tensor x = rng.normal_tensor({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const double gain = std::pow(10.0, rng.uniform(-1.0, 1.0));
    for (std::size_t j = 0; j < c; ++j) x.at(i, j) *= gain;
  }
  const double init = 1.0 / std::sqrt(static_cast<double>(c));
  const Tensor bias({c});
  const Tensor q = linear(x, rng.normal_tensor({c, c}, init), bias);
  const Tensor k = linear(x, rng.normal_tensor({c, c}, init), bias);
  const Tensor v = linear(x, rng.normal_tensor({c, c}, init), bias);
  AttentionConfig cfg;
  cfg.num_heads = 1;
  cfg.head_dim = c / opts.num_heads;
  cfg.clamp_floor = clamp_floor;
  cfg.scale = AttentionConfig::initial_scale(c);
  const HeadOp op = [&cfg](const Tensor& a, const Tensor& b, const Tensor& e) {
    return linear_attention_factored(a, b, e, cfg);
  };
  return multi_head(op, q, k, v, opts.num_heads);
}

std::vector<ClampSweepRow> clamp_sweep(const std::vector<double>& floors,
                                       const ClampSweepOptions& opts) {
  if (floors.empty()) throw Error(ErrorCode::kInvalidArgument, "clamp_sweep: empty floor list");
  const Tensor reference = clamp_sweep_forward(kDefaultClampFloor, opts);
  std::vector<ClampSweepRow> rows;
  for (double f : floors) {
    if (!(f > 0.0)) throw Error(ErrorCode::kInvalidArgument, "clamp_sweep: floors must be positive");
    const Tensor out = clamp_sweep_forward(f, opts);
    if (!out.all_finite()) throw Error(ErrorCode::kNonFinite, "clamp_sweep: non-finite output");
    rows.push_back({f, max_abs_diff(out, reference), out.max_abs()});
  }
  return rows;
}

bool max_activation_non_increasing(std::vector<ClampSweepRow> rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.clamp_floor < b.clamp_floor; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].max_activation > rows[i - 1].max_activation) return false;
  }
  return true;
}

std::string clamp_sweep_csv(const std::vector<ClampSweepRow>& rows) {
  CsvTable table({"c_min", "output_divergence", "max_activation"});
  for (const auto& r : rows) table.row().add(r.clamp_floor).add(r.divergence).add(r.max_activation);
  return table.str();
}

// ---------------------------------------------------------------------------

MapSummary summarize_attention_map(const Tensor& map, GridSize hw, std::size_t radius) {
  const std::size_t n = hw.tokens();
  if (map.shape() != Shape{n, n}) {
    throw Error(ErrorCode::kDimension, "attention map " + shape_string(map.shape()) +
                                           " does not match a " + std::to_string(n) + "-token grid");
  }
  MapSummary out;
  std::size_t rows = 0;
  const long r = static_cast<long>(radius);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      total += std::abs(map.at(i, j));
      if (map.at(i, j) < 0.0) ++out.negative_count;
    }
    if (total == 0.0) continue;
    ++rows;
    double entropy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::abs(map.at(i, j)) / total;
      if (p > 0.0) entropy -= p * std::log(p);
    }
    const long yi = static_cast<long>(i / hw.width), xi = static_cast<long>(i % hw.width);
    double mass = 0.0;
    for (long y = std::max(0L, yi - r); y <= std::min<long>(hw.height - 1, yi + r); ++y)
      for (long x = std::max(0L, xi - r); x <= std::min<long>(hw.width - 1, xi + r); ++x)
        mass += std::abs(map.at(i, static_cast<std::size_t>(y) * hw.width + static_cast<std::size_t>(x)));
    out.entropy += entropy;
    out.neighborhood_mass += mass / total;
  }
  if (rows > 0) {
    out.entropy /= static_cast<double>(rows);
    out.neighborhood_mass /= static_cast<double>(rows);
  }
  return out;
}

Tensor aggregate_rows(const Tensor& map, GridSize hw, const Tensor& kernel) {
  const std::size_t n = hw.tokens();
  if (map.shape() != Shape{n, n}) {
    throw Error(ErrorCode::kDimension, "aggregate_rows: map does not match grid");
  }
  if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0) {
    throw Error(ErrorCode::kDimension, "aggregate_rows: kernel must be odd and square");
  }
  const long k = static_cast<long>(kernel.dim(0)), half = k / 2;
  Tensor out({n, n});
  parallel_for(n, [&](std::size_t i) {
    const long yi = static_cast<long>(i / hw.width), xi = static_cast<long>(i % hw.width);
    double* dst = out.raw() + i * n;
    for (long dy = -half; dy <= half; ++dy)
      for (long dx = -half; dx <= half; ++dx) {
        const long y = yi + dy, x = xi + dx;
        if (y < 0 || y >= static_cast<long>(hw.height) || x < 0 || x >= static_cast<long>(hw.width))
          continue;
        const double w = kernel.at(static_cast<std::size_t>(dy + half), static_cast<std::size_t>(dx + half));
        const double* src = map.raw() + (static_cast<std::size_t>(y) * hw.width + static_cast<std::size_t>(x)) * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += w * src[j];
      }
  });
  return out;
}

double ConcentrationStats::enhanced_win_fraction() const {
  if (layers.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& l : layers) wins += l.enhanced.neighborhood_mass > l.plain.neighborhood_mass;
  return static_cast<double>(wins) / static_cast<double>(layers.size());
}

std::size_t ConcentrationStats::total_negative() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.plain.negative_count;
  return n;
}

ConcentrationStats concentration_stats(const ForwardTrace& trace, const ConcentrationOptions& opts) {
  if (!trace.capture_attention) {
    throw Error(ErrorCode::kCaptureDisabled,
                "concentration_stats: forward pass ran without attention capture");
  }
  ConcentrationStats stats;
  for (const auto& cap : trace.captures) {
    const std::size_t heads = cap.attention.num_heads, hd = cap.attention.head_dim;
    const std::size_t k = cap.lcm.kernel;
    AttentionConfig single = cap.attention;
    single.num_heads = 1;
    LayerConcentration layer;
    layer.name = cap.name;
    layer.hw = cap.hw;
    layer.heads = heads;
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor a = linear_attention_matrix(slice_columns(cap.q, h * hd, (h + 1) * hd),
                                               slice_columns(cap.k, h * hd, (h + 1) * hd), single);
      // Channels of one head share its map, so their first-conv kernels are
      // averaged into a single aggregation kernel for that head.
      Tensor kernel({k, k});
      for (std::size_t c = h * hd; c < (h + 1) * hd; ++c)
        for (std::size_t t = 0; t < k * k; ++t)
          kernel[t] += cap.lcm.dw1.weight[c * k * k + t] / static_cast<double>(hd);
      const Tensor enhanced = aggregate_rows(a, cap.hw, kernel);
      const MapSummary p = summarize_attention_map(a, cap.hw, opts.radius);
      const MapSummary e = summarize_attention_map(enhanced, cap.hw, opts.radius);
      const double w = 1.0 / static_cast<double>(heads);
      layer.plain.entropy += p.entropy * w;
      layer.plain.neighborhood_mass += p.neighborhood_mass * w;
      layer.plain.negative_count += p.negative_count;
      layer.enhanced.entropy += e.entropy * w;
      layer.enhanced.neighborhood_mass += e.neighborhood_mass * w;
      layer.enhanced.negative_count += e.negative_count;
      if (opts.keep_maps && h == 0) {
        stats.maps.emplace_back(cap.name + ".plain", a);
        stats.maps.emplace_back(cap.name + ".enhanced", enhanced);
      }
    }
    stats.layers.push_back(std::move(layer));
  }
  return stats;
}

std::string concentration_csv(const ConcentrationStats& stats) {
  CsvTable table({"layer", "height", "width", "heads", "plain_entropy", "plain_neighborhood_mass",
                  "plain_negative_count", "enhanced_entropy", "enhanced_neighborhood_mass",
                  "enhanced_negative_count"});
  for (const auto& l : stats.layers) {
    table.row()
        .add(l.name)
        .add(static_cast<std::uint64_t>(l.hw.height))
        .add(static_cast<std::uint64_t>(l.hw.width))
        .add(static_cast<std::uint64_t>(l.heads))
        .add(l.plain.entropy)
        .add(l.plain.neighborhood_mass)
        .add(static_cast<std::uint64_t>(l.plain.negative_count))
        .add(l.enhanced.entropy)
        .add(l.enhanced.neighborhood_mass)
        .add(static_cast<std::uint64_t>(l.enhanced.negative_count));
  }
  return table.str();
}

}  // namespace l2vit
