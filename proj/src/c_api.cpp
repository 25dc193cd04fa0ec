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

#include "l2vit/l2vit.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>
#include <vector>

#include "l2vit/analysis.hpp"
#include "l2vit/attention.hpp"
#include "l2vit/config.hpp"
#include "l2vit/csv.hpp"
#include "l2vit/io.hpp"
#include "l2vit/model.hpp"
#include "l2vit/parallel.hpp"
#include "l2vit/random.hpp"

struct l2vit_config {
  l2vit::RunConfig run;
};

struct l2vit_weights {
  l2vit::WeightStore store;
};

namespace {

thread_local std::string g_last_error;

l2vit_status to_status(l2vit::ErrorCode code) {
  using l2vit::ErrorCode;
  switch (code) {
    case ErrorCode::kDimension:
      return L2VIT_ERR_DIMENSION;
    case ErrorCode::kDegenerateInput:
      return L2VIT_ERR_DEGENERATE_INPUT;
    case ErrorCode::kInvalidArgument:
      return L2VIT_ERR_INVALID_ARGUMENT;
    case ErrorCode::kParse:
      return L2VIT_ERR_PARSE;
    case ErrorCode::kIo:
      return L2VIT_ERR_IO;
    case ErrorCode::kFormat:
      return L2VIT_ERR_FORMAT;
    case ErrorCode::kChecksum:
      return L2VIT_ERR_CHECKSUM;
    case ErrorCode::kMissingWeight:
      return L2VIT_ERR_MISSING_WEIGHT;
    case ErrorCode::kNonFinite:
      return L2VIT_ERR_NON_FINITE;
    case ErrorCode::kCaptureDisabled:
      return L2VIT_ERR_CAPTURE_DISABLED;
  }
  return L2VIT_ERR_INTERNAL;
}

l2vit_status fail(l2vit_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

/// Runs `fn`, translating exceptions into status codes and the thread-local
/// error message.
template <class Fn>
l2vit_status guarded(Fn&& fn) {
  try {
    fn();
    return L2VIT_OK;
  } catch (const l2vit::Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(L2VIT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(L2VIT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(L2VIT_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* message) {
  if (!ok) throw l2vit::Error(l2vit::ErrorCode::kInvalidArgument, message);
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

l2vit::Tensor image_tensor(const l2vit::RunConfig& run, const double* image, std::size_t len) {
  const std::size_t s = run.input_size;
  require(image != nullptr, "image is NULL");
  if (len != 3 * s * s) {
    throw l2vit::Error(l2vit::ErrorCode::kDimension,
                       "image has " + std::to_string(len) + " values, expected 3x" +
                           std::to_string(s) + "x" + std::to_string(s));
  }
  l2vit::Tensor t({3, s, s}, std::vector<double>(image, image + len));
  if (!t.all_finite()) throw l2vit::Error(l2vit::ErrorCode::kNonFinite, "image is not finite");
  return t;
}

}  // namespace

extern "C" {

const char* l2vit_version(void) { return "1.0.0"; }

const char* l2vit_status_string(l2vit_status status) {
  switch (status) {
    case L2VIT_OK:
      return "ok";
    case L2VIT_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case L2VIT_ERR_DIMENSION:
      return "dimension mismatch";
    case L2VIT_ERR_DEGENERATE_INPUT:
      return "degenerate input";
    case L2VIT_ERR_PARSE:
      return "parse error";
    case L2VIT_ERR_IO:
      return "i/o error";
    case L2VIT_ERR_FORMAT:
      return "format error";
    case L2VIT_ERR_CHECKSUM:
      return "checksum mismatch";
    case L2VIT_ERR_MISSING_WEIGHT:
      return "missing weight";
    case L2VIT_ERR_NON_FINITE:
      return "non-finite value";
    case L2VIT_ERR_CAPTURE_DISABLED:
      return "attention capture disabled";
    case L2VIT_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

const char* l2vit_last_error(void) { return g_last_error.c_str(); }

void l2vit_string_free(char* s) { std::free(s); }

l2vit_status l2vit_set_num_threads(int n) {
  return guarded([&] {
    require(n > 0, "thread count must be positive");
    l2vit::set_num_threads(n);
  });
}

l2vit_status l2vit_config_parse(const char* text, l2vit_config** out) {
  return guarded([&] {
    require(text != nullptr && out != nullptr, "text and out must be non-NULL");
    *out = new l2vit_config{l2vit::parse_config(text)};
  });
}

l2vit_status l2vit_config_load(const char* path, l2vit_config** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "path and out must be non-NULL");
    *out = new l2vit_config{l2vit::load_config(path)};
  });
}

void l2vit_config_free(l2vit_config* cfg) { delete cfg; }

l2vit_status l2vit_config_get_info(const l2vit_config* cfg, l2vit_config_info* out) {
  return guarded([&] {
    require(cfg != nullptr && out != nullptr, "cfg and out must be non-NULL");
    const auto& run = cfg->run;
    out->variant = l2vit::to_string(run.variant);
    out->input_size = run.input_size;
    out->seed = run.seed;
    out->num_classes = run.model.num_classes;
    out->clamp_floor = run.model.clamp_floor;
    out->feature_map = l2vit::to_string(run.model.feature_map);
    out->weights_path = run.weights_path.c_str();
    out->output_path = run.output_path.c_str();
  });
}

l2vit_status l2vit_weights_init(const l2vit_config* cfg, uint64_t seed, l2vit_weights** out) {
  return guarded([&] {
    require(cfg != nullptr && out != nullptr, "cfg and out must be non-NULL");
    *out = new l2vit_weights{l2vit::init_weights(cfg->run.model, seed)};
  });
}

l2vit_status l2vit_weights_load(const char* path, l2vit_weights** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "path and out must be non-NULL");
    *out = new l2vit_weights{l2vit::load_weights(path)};
  });
}

l2vit_status l2vit_weights_save(const l2vit_weights* w, const char* path) {
  return guarded([&] {
    require(w != nullptr && path != nullptr, "weights and path must be non-NULL");
    l2vit::save_weights(w->store, path);
  });
}

void l2vit_weights_free(l2vit_weights* w) { delete w; }

l2vit_status l2vit_weights_size(const l2vit_weights* w, size_t* tensors, uint64_t* scalars) {
  return guarded([&] {
    require(w != nullptr, "weights must be non-NULL");
    std::uint64_t n = 0;
    for (const auto& [name, t] : w->store) n += t.size();
    if (tensors) *tensors = w->store.size();
    if (scalars) *scalars = n;
  });
}

l2vit_status l2vit_param_count(const l2vit_config* cfg, uint64_t* out) {
  return guarded([&] {
    require(cfg != nullptr && out != nullptr, "cfg and out must be non-NULL");
    *out = l2vit::param_count(cfg->run.model);
  });
}

l2vit_status l2vit_describe(const l2vit_config* cfg, char** csv) {
  return guarded([&] {
    require(cfg != nullptr && csv != nullptr, "cfg and csv must be non-NULL");
    const auto& run = cfg->run;
    const auto report = l2vit::flop_count(run.model, {run.input_size, run.input_size});
    l2vit::CsvTable table({"item", "value"});
    table.row().add(std::string("variant")).add(std::string(l2vit::to_string(run.variant)));
    table.row().add(std::string("input_size")).add(static_cast<std::uint64_t>(run.input_size));
    table.row().add(std::string("params")).add(l2vit::param_count(run.model));
    table.row().add(std::string("macs")).add(report.total());
    table.row().add(std::string("gflops")).add(report.gflops());
    for (const auto& r : report.records) table.row().add("macs:" + r.name).add(r.macs);
    *csv = copy_string(table.str());
  });
}

l2vit_status l2vit_random_image(uint64_t seed, size_t size, double* out, size_t len) {
  return guarded([&] {
    require(out != nullptr && size > 0, "out must be non-NULL and size positive");
    require(len == 3 * size * size, "len must equal 3*size*size");
    l2vit::Rng rng(seed);
    const auto t = rng.uniform_tensor({3, size, size}, -1.0, 1.0);
    std::memcpy(out, t.raw(), len * sizeof(double));
  });
}

l2vit_status l2vit_read_image(const char* path, size_t size, double* out, size_t len) {
  return guarded([&] {
    require(path != nullptr && out != nullptr && size > 0, "path and out must be non-NULL");
    require(len == 3 * size * size, "len must equal 3*size*size");
    const auto t = l2vit::read_raw_f32(path, {3, size, size});
    std::memcpy(out, t.raw(), len * sizeof(double));
  });
}

l2vit_status l2vit_forward(const l2vit_config* cfg, const l2vit_weights* w, const double* image,
                           size_t image_len, double* logits, size_t logits_len) {
  return guarded([&] {
    require(cfg != nullptr && w != nullptr && logits != nullptr,
            "cfg, weights and logits must be non-NULL");
    const auto& run = cfg->run;
    if (logits_len != run.model.num_classes) {
      throw l2vit::Error(l2vit::ErrorCode::kDimension,
                         "logits buffer holds " + std::to_string(logits_len) + " values, model has " +
                             std::to_string(run.model.num_classes) + " classes");
    }
    const auto out = l2vit::forward(image_tensor(run, image, image_len), run.model, w->store);
    if (!out.all_finite()) throw l2vit::Error(l2vit::ErrorCode::kNonFinite, "non-finite logits");
    std::memcpy(logits, out.raw(), logits_len * sizeof(double));
  });
}

l2vit_status l2vit_select_order(size_t n, size_t d, int* factored) {
  return guarded([&] {
    require(factored != nullptr, "factored must be non-NULL");
    *factored = l2vit::select_attention_order(n, d) == l2vit::AttentionOrder::kFactored ? 1 : 0;
  });
}

l2vit_status l2vit_equiv_check(size_t n, size_t d, uint64_t seed, double clamp_floor,
                               double* max_abs_diff) {
  return guarded([&] {
    require(max_abs_diff != nullptr, "max_abs_diff must be non-NULL");
    require(n > 0 && d > 0, "n and d must be positive");
    l2vit::AttentionConfig cfg;
    cfg.head_dim = d;
    cfg.clamp_floor = clamp_floor;
    cfg.scale = 1.0;
    cfg.validate();
    l2vit::Rng rng(seed);
    const auto q = rng.uniform_tensor({n, d}, -1.0, 1.0);
    const auto k = rng.uniform_tensor({n, d}, -1.0, 1.0);
    const auto v = rng.uniform_tensor({n, d}, -1.0, 1.0);
    *max_abs_diff = l2vit::max_abs_diff(l2vit::linear_attention_direct(q, k, v, cfg),
                                        l2vit::linear_attention_factored(q, k, v, cfg));
  });
}

l2vit_status l2vit_gradcheck(const char* target, uint64_t seed, size_t points,
                             l2vit_gradcheck_result* out) {
  return guarded([&] {
    require(target != nullptr && out != nullptr, "target and out must be non-NULL");
    l2vit::GradCheckOptions opts;
    opts.points = points;
    const auto r = l2vit::grad_check(l2vit::parse_grad_target(target), seed, opts);
    out->max_rel_error = r.max_rel_error;
    out->worst_analytic = r.worst_analytic;
    out->worst_numeric = r.worst_numeric;
    out->points = r.points;
    out->directions = r.directions;
    out->resamples = r.resamples;
    out->variables = r.variables;
  });
}

l2vit_status l2vit_bench(const size_t* tokens, size_t count, size_t head_dim, size_t repetitions,
                         uint64_t seed, char** csv, double* slope_direct,
                         double* slope_factored) {
  return guarded([&] {
    require(tokens != nullptr && csv != nullptr && count > 0, "tokens and csv must be non-NULL");
    require(head_dim > 0 && repetitions > 0, "head_dim and repetitions must be positive");
    l2vit::BenchOptions opts;
    opts.head_dim = head_dim;
    opts.repetitions = repetitions;
    opts.seed = seed;
    const auto rows = l2vit::bench_orders(std::vector<std::size_t>(tokens, tokens + count), opts);
    if (slope_direct || slope_factored) {
      require(count >= 2, "slopes need at least two token counts");
      std::vector<double> n, td, tf;
      for (const auto& r : rows) {
        n.push_back(static_cast<double>(r.tokens));
        td.push_back(r.direct_seconds);
        tf.push_back(r.factored_seconds);
      }
      if (slope_direct) *slope_direct = l2vit::loglog_slope(n, td);
      if (slope_factored) *slope_factored = l2vit::loglog_slope(n, tf);
    }
    *csv = copy_string(l2vit::bench_csv(rows));
  });
}

l2vit_status l2vit_clamp_sweep(const double* floors, size_t count, uint64_t seed, char** csv,
                               int* monotone) {
  return guarded([&] {
    require(floors != nullptr && csv != nullptr && count > 0, "floors and csv must be non-NULL");
    l2vit::ClampSweepOptions opts;
    opts.seed = seed;
    const auto rows = l2vit::clamp_sweep(std::vector<double>(floors, floors + count), opts);
    if (monotone) *monotone = l2vit::max_activation_non_increasing(rows) ? 1 : 0;
    *csv = copy_string(l2vit::clamp_sweep_csv(rows));
  });
}

l2vit_status l2vit_attnmap(const l2vit_config* cfg, const l2vit_weights* w, const double* image,
                           size_t image_len, const char* out_dir, char** csv,
                           l2vit_attnmap_summary* summary) {
  return guarded([&] {
    require(cfg != nullptr && w != nullptr && csv != nullptr, "cfg, weights and csv must be non-NULL");
    const auto& run = cfg->run;
    const auto params = l2vit::from_store(run.model, w->store);
    l2vit::ForwardTrace trace;
    trace.capture_attention = true;
    l2vit::forward(image_tensor(run, image, image_len), run.model, params, &trace);
    l2vit::ConcentrationOptions opts;
    opts.keep_maps = out_dir != nullptr;
    const auto stats = l2vit::concentration_stats(trace, opts);
    const std::string table = l2vit::concentration_csv(stats);
    if (out_dir) {
      std::error_code ec;
      std::filesystem::create_directories(out_dir, ec);
      if (ec) {
        throw l2vit::Error(l2vit::ErrorCode::kIo,
                           std::string("cannot create '") + out_dir + "': " + ec.message());
      }
      const std::filesystem::path dir(out_dir);
      for (const auto& [name, map] : stats.maps) {
        l2vit::write_raw_f32(map, (dir / (name + ".f32")).string());
      }
      l2vit::write_file((dir / "concentration.csv").string(), table);
    }
    if (summary) {
      summary->layers = stats.layers.size();
      summary->enhanced_win_fraction = stats.enhanced_win_fraction();
      summary->negative_count = stats.total_negative();
    }
    *csv = copy_string(table);
  });
}

}  // extern "C"
