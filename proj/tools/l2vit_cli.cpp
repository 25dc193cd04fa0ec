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

// Command-line front end. Talks to the library only through the C API.
//
// Exit codes: 0 success, 1 validation failure (bad flags, config, files or
// library errors), 2 check failure (a measured value is outside tolerance).

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iostream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "l2vit/l2vit.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitCheck = 2;

/// Library failure; carries the C status and message to main().
struct ApiError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(l2vit_status status, const char* what) {
  if (status != L2VIT_OK) {
    throw ApiError(std::string(what) + ": " + l2vit_status_string(status) + ": " +
                   l2vit_last_error());
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct ConfigDeleter {
  void operator()(l2vit_config* c) const { l2vit_config_free(c); }
};
struct WeightsDeleter {
  void operator()(l2vit_weights* w) const { l2vit_weights_free(w); }
};
struct StringDeleter {
  void operator()(char* s) const { l2vit_string_free(s); }
};
using ConfigPtr = std::unique_ptr<l2vit_config, ConfigDeleter>;
using WeightsPtr = std::unique_ptr<l2vit_weights, WeightsDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

ConfigPtr load_config(const std::string& path) {
  l2vit_config* cfg = nullptr;
  check(l2vit_config_load(path.c_str(), &cfg), "config");
  return ConfigPtr(cfg);
}

l2vit_config_info info_of(const l2vit_config* cfg) {
  l2vit_config_info info{};
  check(l2vit_config_get_info(cfg, &info), "config");
  return info;
}

/// Weights from --weights, else the config's `weights` path, else a fresh
/// initialization from the config seed.
WeightsPtr obtain_weights(const l2vit_config* cfg, const std::string& flag) {
  const auto info = info_of(cfg);
  const std::string path = !flag.empty() ? flag : info.weights_path;
  l2vit_weights* w = nullptr;
  if (!path.empty()) {
    check(l2vit_weights_load(path.c_str(), &w), "weights");
  } else {
    check(l2vit_weights_init(cfg, info.seed, &w), "weights");
  }
  return WeightsPtr(w);
}

std::vector<double> obtain_image(const l2vit_config* cfg, const std::string& input,
                                 std::optional<std::uint64_t> random_seed) {
  const auto info = info_of(cfg);
  const std::size_t s = info.input_size;
  std::vector<double> image(3 * s * s);
  if (!input.empty()) {
    check(l2vit_read_image(input.c_str(), s, image.data(), image.size()), "input");
  } else {
    check(l2vit_random_image(random_seed.value_or(info.seed), s, image.data(), image.size()),
          "input");
  }
  return image;
}

// ---------------------------------------------------------------------------

struct TableRow {
  const char* variant;
  std::size_t input_size;
  double params_m;  // 0 when the table gives no figure
  double gflops;
};

constexpr TableRow kReference[] = {{"tiny", 224, 29.0, 4.7},
                                   {"small", 224, 50.0, 9.0},
                                   {"base", 224, 89.0, 15.9},
                                   {"base", 384, 0.0, 47.5}};

int run_describe(const std::string& config_path) {
  const auto cfg = load_config(config_path);
  const auto info = info_of(cfg.get());
  char* raw = nullptr;
  check(l2vit_describe(cfg.get(), &raw), "describe");
  const StringPtr csv(raw);
  std::cout << csv.get();

  std::uint64_t params = 0;
  check(l2vit_param_count(cfg.get(), &params), "describe");
  // gflops is the fifth row of the report.
  const std::string text(csv.get());
  const auto pos = text.find("\r\ngflops,");
  const double gflops = std::stod(text.substr(pos + 9));

  int rc = kExitOk;
  for (const auto& ref : kReference) {
    if (std::strcmp(ref.variant, info.variant) != 0 || ref.input_size != info.input_size) continue;
    if (ref.params_m > 0.0) {
      const double m = static_cast<double>(params) / 1e6;
      const bool ok = std::abs(m - ref.params_m) <= 0.03 * ref.params_m;
      std::cerr << "params " << fmt(m) << "M vs " << fmt(ref.params_m) << "M +-3%: "
                << (ok ? "ok" : "MISMATCH") << "\n";
      if (!ok) rc = kExitCheck;
    }
    const bool ok = std::abs(gflops - ref.gflops) <= 0.05 * ref.gflops;
    std::cerr << "gflops " << fmt(gflops) << " vs " << fmt(ref.gflops) << " +-5%: "
              << (ok ? "ok" : "MISMATCH") << "\n";
    if (!ok) rc = kExitCheck;
  }
  return rc;
}

int run_init(const std::string& config_path, const std::string& out,
             std::optional<std::uint64_t> seed) {
  const auto cfg = load_config(config_path);
  const auto info = info_of(cfg.get());
  const std::string path = !out.empty() ? out : info.weights_path;
  if (path.empty()) throw CLI::ValidationError("--out", "no output path given or configured");
  l2vit_weights* raw = nullptr;
  check(l2vit_weights_init(cfg.get(), seed.value_or(info.seed), &raw), "init");
  const WeightsPtr w(raw);
  check(l2vit_weights_save(w.get(), path.c_str()), "init");
  std::size_t tensors = 0;
  std::uint64_t scalars = 0;
  check(l2vit_weights_size(w.get(), &tensors, &scalars), "init");
  std::cout << "tensors,scalars\r\n" << tensors << "," << scalars << "\r\n";
  return kExitOk;
}

int run_forward(const std::string& config_path, const std::string& weights,
                const std::string& input, std::optional<std::uint64_t> random_seed) {
  const auto cfg = load_config(config_path);
  const auto info = info_of(cfg.get());
  const auto w = obtain_weights(cfg.get(), weights);
  const auto image = obtain_image(cfg.get(), input, random_seed);
  std::vector<double> logits(info.num_classes);
  check(l2vit_forward(cfg.get(), w.get(), image.data(), image.size(), logits.data(), logits.size()),
        "forward");
  std::cout << "class,logit\r\n";
  for (std::size_t i = 0; i < logits.size(); ++i) std::cout << i << "," << fmt(logits[i]) << "\r\n";
  return kExitOk;
}

int run_equiv(std::size_t n, std::size_t d, std::uint64_t seed, double floor, double tol) {
  double diff = 0.0;
  check(l2vit_equiv_check(n, d, seed, floor, &diff), "equiv-check");
  int factored = 0;
  check(l2vit_select_order(n, d, &factored), "equiv-check");
  std::cout << "n,d,seed,selected_order,max_abs_diff\r\n"
            << n << "," << d << "," << seed << "," << (factored ? "factored" : "direct") << ","
            << fmt(diff) << "\r\n";
  return diff <= tol ? kExitOk : kExitCheck;
}

int run_gradcheck(const std::string& target, std::uint64_t seed, std::size_t points, double tol) {
  // "block" covers both block types.
  std::vector<std::string> targets = {target};
  if (target == "block") targets = {"lwa", "lga"};
  std::cout << "target,seed,points,directions,variables,resamples,max_rel_error\r\n";
  int rc = kExitOk;
  for (const auto& t : targets) {
    l2vit_gradcheck_result r{};
    check(l2vit_gradcheck(t.c_str(), seed, points, &r), "gradcheck");
    std::cout << t << "," << seed << "," << r.points << "," << r.directions << "," << r.variables
              << "," << r.resamples << "," << fmt(r.max_rel_error) << "\r\n";
    if (!(r.max_rel_error <= tol)) rc = kExitCheck;
  }
  return rc;
}

int run_bench(const std::vector<std::size_t>& tokens, std::size_t d, std::size_t reps,
              std::uint64_t seed, bool enforce) {
  char* raw = nullptr;
  double sd = 0.0, sf = 0.0;
  const bool slopes = tokens.size() >= 2;
  check(l2vit_bench(tokens.data(), tokens.size(), d, reps, seed, &raw, slopes ? &sd : nullptr,
                    slopes ? &sf : nullptr),
        "bench");
  const StringPtr csv(raw);
  std::cout << csv.get();
  if (!slopes) return kExitOk;
  std::cerr << "slope direct " << fmt(sd) << ", factored " << fmt(sf) << "\n";
  if (enforce && !(sd >= 1.7 && sf <= 1.3)) return kExitCheck;
  return kExitOk;
}

int run_clamp_sweep(const std::vector<double>& values, std::uint64_t seed) {
  char* raw = nullptr;
  int monotone = 0;
  check(l2vit_clamp_sweep(values.data(), values.size(), seed, &raw, &monotone), "clamp-sweep");
  const StringPtr csv(raw);
  std::cout << csv.get();
  if (!monotone) std::cerr << "max activation increases with the clamp floor\n";
  return monotone ? kExitOk : kExitCheck;
}

int run_attnmap(const std::string& config_path, const std::string& weights,
                const std::string& input, std::optional<std::uint64_t> random_seed,
                const std::string& out_dir) {
  const auto cfg = load_config(config_path);
  const auto info = info_of(cfg.get());
  const auto w = obtain_weights(cfg.get(), weights);
  const auto image = obtain_image(cfg.get(), input, random_seed);
  char* raw = nullptr;
  l2vit_attnmap_summary summary{};
  check(l2vit_attnmap(cfg.get(), w.get(), image.data(), image.size(),
                      out_dir.empty() ? nullptr : out_dir.c_str(), &raw, &summary),
        "attnmap");
  const StringPtr csv(raw);
  std::cout << csv.get();
  std::cerr << "layers " << summary.layers << ", enhanced wins "
            << fmt(summary.enhanced_win_fraction) << ", negative entries "
            << summary.negative_count << "\n";
  if (std::strcmp(info.feature_map, "relu") == 0 && summary.negative_count != 0) return kExitCheck;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"l2vit: linear global attention vision backbone toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);

  std::string config, weights, input, out;
  std::optional<std::uint64_t> random_seed, seed_override;

  auto* describe = app.add_subcommand("describe", "Parameter count and per-layer FLOPs");
  describe->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);

  auto* init = app.add_subcommand("init", "Write deterministically initialized weights");
  init->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  init->add_option("--out", out, "Output weight file (default: config 'weights')");
  init->add_option("--seed", seed_override, "Initialization seed (default: config 'seed')");

  auto* forward = app.add_subcommand("forward", "Classifier logits as CSV");
  forward->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  forward->add_option("--weights", weights, "Weight file (default: config, else init)");
  auto* fwd_input = forward->add_option("--input", input, "Raw f32 CHW image")
                        ->check(CLI::ExistingFile);
  forward->add_option("--random", random_seed, "Uniform(-1,1) image seed")->excludes(fwd_input);

  std::size_t n = 64, d = 32, points = 5, reps = 9;
  std::uint64_t seed = 0;
  double floor = 1e-6, tol = 1e-9;
  auto* equiv = app.add_subcommand("equiv-check", "Direct vs factored linear attention");
  equiv->add_option("--n", n, "Tokens")->check(CLI::PositiveNumber);
  equiv->add_option("--d", d, "Head dim")->check(CLI::PositiveNumber);
  equiv->add_option("--seed", seed, "Seed");
  equiv->add_option("--clamp", floor, "Clamp floor C_min")->check(CLI::Range(1e-6, 1e300));
  equiv->add_option("--tol", tol, "Max-abs tolerance");

  std::string target = "attn";
  double grad_tol = 1e-4;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  grad->add_option("--target", target, "Target")
      ->check(CLI::IsMember({"attn", "lcm", "cpe", "block", "lwa", "lga", "linear", "model"}));
  grad->add_option("--seed", seed, "Seed");
  grad->add_option("--points", points, "Random points")->check(CLI::PositiveNumber);
  grad->add_option("--tol", grad_tol, "Relative error tolerance");

  std::vector<std::size_t> n_list = {1024, 2048, 4096, 8192, 16384};
  bool orders = false, enforce = false;
  auto* bench = app.add_subcommand("bench", "Evaluation-order timing");
  bench->add_flag("--orders", orders, "Time both evaluation orders (the only mode)");
  bench->add_option("--n-list", n_list, "Token counts, ascending")->delimiter(',');
  bench->add_option("--d", d, "Head dim")->check(CLI::PositiveNumber);
  bench->add_option("--reps", reps, "Timed repetitions (median)")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "Seed");
  bench->add_flag("--check", enforce, "Exit 2 unless slopes are >= 1.7 direct, <= 1.3 factored");

  std::vector<double> values = {1e-6, 1e-1, 1.0, 1e1, 1e2, 1e3};
  auto* sweep = app.add_subcommand("clamp-sweep", "Clamp floor sweep");
  sweep->add_option("--values", values, "Clamp floors")->delimiter(',');
  sweep->add_option("--seed", seed, "Seed");

  auto* attnmap = app.add_subcommand("attnmap", "Attention maps and concentration statistics");
  attnmap->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  attnmap->add_option("--weights", weights, "Weight file (default: config, else init)");
  auto* map_input = attnmap->add_option("--input", input, "Raw f32 CHW image")
                        ->check(CLI::ExistingFile);
  attnmap->add_option("--random", random_seed, "Uniform(-1,1) image seed")->excludes(map_input);
  attnmap->add_option("--out", out, "Directory for map tensors and CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (threads > 0) check(l2vit_set_num_threads(threads), "threads");
    if (*describe) return run_describe(config);
    if (*init) return run_init(config, out, seed_override);
    if (*forward) return run_forward(config, weights, input, random_seed);
    if (*equiv) return run_equiv(n, d, seed, floor, tol);
    if (*grad) return run_gradcheck(target, seed, points, grad_tol);
    if (*bench) return run_bench(n_list, d, reps, seed, enforce);
    if (*sweep) return run_clamp_sweep(values, seed);
    if (*attnmap) return run_attnmap(config, weights, input, random_seed, out);
  } catch (const CLI::Error& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}
