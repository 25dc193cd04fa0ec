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
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "l2vit/attention.hpp"
#include "l2vit/locality.hpp"
#include "l2vit/model.hpp"
#include "l2vit/tensor.hpp"

namespace l2vit {

// ---------------------------------------------------------------------------
// FLOP accounting. One multiply-accumulate counts as one FLOP; norms,
// activations and softmax are not counted.

struct FlopRecord {
  std::string name;
  std::uint64_t macs = 0;
};

struct FlopReport {
  std::vector<FlopRecord> records;

  std::uint64_t total() const;
  /// Sum over records whose name ends with `suffix`.
  std::uint64_t total_with_suffix(const std::string& suffix) const;
  double gflops() const { return static_cast<double>(total()) / 1e9; }
};

/// MACs of the attention core (score and value products) for one head.
/// Direct: 2 N^2 d. Factored: 2 N d^2.
std::uint64_t attention_core_macs(AttentionOrder order, std::uint64_t tokens,
                                  std::uint64_t head_dim);

/// Per-layer MACs of forward() for an input of the given spatial size.
FlopReport flop_count(const ModelConfig& cfg, GridSize input);

// ---------------------------------------------------------------------------
// Evaluation-order benchmark.

struct BenchOptions {
  std::size_t head_dim = 32;
  std::size_t repetitions = 9;
  std::size_t warmups = 2;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::size_t tokens = 0;
  double direct_seconds = 0.0;    // median wall time
  double factored_seconds = 0.0;  // median wall time
};

/// Times linear_attention_direct and linear_attention_factored on random
/// single-head inputs, single-threaded. `tokens` must be ascending.
std::vector<BenchRow> bench_orders(const std::vector<std::size_t>& tokens,
                                   const BenchOptions& opts);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string bench_csv(const std::vector<BenchRow>& rows);

// ---------------------------------------------------------------------------
// Finite-difference gradient checks.

enum class GradTarget { kLinear, kAttention, kLcm, kCpe, kLwaBlock, kLgaBlock, kModel };

const char* to_string(GradTarget target);
/// Accepts linear, attn, lcm, cpe, lwa, lga, model.
GradTarget parse_grad_target(const std::string& text);

struct GradCheckOptions {
  std::size_t points = 5;
  std::size_t directions = 3;
  double step = 1e-5;
  /// A point is redrawn when a relu input or clamped denominator lies closer
  /// than this to its kink.
  double kink_margin = 1e-6;
  std::size_t max_resamples = 20;
};

struct GradCheckResult {
  GradTarget target = GradTarget::kLinear;
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t points = 0;
  std::size_t directions = 0;  // total over all points
  std::size_t resamples = 0;
  std::size_t variables = 0;  // scalars perturbed per direction
};

/// Compares <g, J u> from the closed-form adjoints against central differences
/// of <g, f(theta)> along random unit directions u over all learnable
/// parameters and inputs of the target. Throws kNonFinite on NaN/Inf.
GradCheckResult grad_check(GradTarget target, std::uint64_t seed,
                           const GradCheckOptions& opts = {});

// ---------------------------------------------------------------------------
// Clamp-floor sweep.

struct ClampSweepOptions {
  std::size_t tokens = 196;
  std::size_t channels = 64;
  std::size_t num_heads = 2;
  std::uint64_t seed = 0;
};

struct ClampSweepRow {
  double clamp_floor = 0.0;
  double divergence = 0.0;      // max-abs difference from the C_min = 1e2 output
  double max_activation = 0.0;  // max-abs attention output
};

/// Multi-head factored linear attention (s = sqrt(C)) on a fixed random token
/// set whose rows span several orders of magnitude.
Tensor clamp_sweep_forward(double clamp_floor, const ClampSweepOptions& opts);
std::vector<ClampSweepRow> clamp_sweep(const std::vector<double>& floors,
                                       const ClampSweepOptions& opts);
/// True when max_activation never increases along rows sorted by clamp floor.
bool max_activation_non_increasing(std::vector<ClampSweepRow> rows);
std::string clamp_sweep_csv(const std::vector<ClampSweepRow>& rows);

// ---------------------------------------------------------------------------
// Attention concentration statistics.

struct MapSummary {
  double entropy = 0.0;            // mean row entropy in nats
  double neighborhood_mass = 0.0;  // mean fraction of row weight within the window
  std::size_t negative_count = 0;
};

/// Row statistics of an N x N map over an H x W token grid. Each row is
/// normalized by the sum of its absolute values; all-zero rows are skipped.
/// The neighborhood of token i is every token within Chebyshev distance
/// `radius` on the grid.
MapSummary summarize_attention_map(const Tensor& map, GridSize hw, std::size_t radius = 1);

/// A'[i, :] = sum_{j in window(i)} w[j - i] A[j, :], a k x k kernel sliding
/// over query positions with zero padding.
Tensor aggregate_rows(const Tensor& map, GridSize hw, const Tensor& kernel);

struct LayerConcentration {
  std::string name;
  GridSize hw;
  std::size_t heads = 0;
  MapSummary plain;     // head-averaged
  MapSummary enhanced;  // after row aggregation with the LCM's first kernel
};

struct ConcentrationOptions {
  std::size_t radius = 1;
  bool keep_maps = false;  // keep head-0 maps for export
};

struct ConcentrationStats {
  std::vector<LayerConcentration> layers;
  std::vector<std::pair<std::string, Tensor>> maps;

  /// Fraction of layers where enhanced neighborhood mass > plain.
  double enhanced_win_fraction() const;
  std::size_t total_negative() const;
};

/// Needs a trace recorded with capture_attention = true (kCaptureDisabled
/// otherwise).
ConcentrationStats concentration_stats(const ForwardTrace& trace,
                                       const ConcentrationOptions& opts = {});
std::string concentration_csv(const ConcentrationStats& stats);

}  // namespace l2vit
