/*
 * Copyright 2026 The l2vit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/*
 * C interface to the l2vit library.
 *
 * Every fallible function returns an l2vit_status. On failure the message of
 * the most recent error on the calling thread is available from
 * l2vit_last_error() until the next failing call on that thread. Output
 * parameters are written only on success.
 *
 * Strings returned through `char**` are heap allocated by the library and
 * must be released with l2vit_string_free(). Handles are released with their
 * matching *_free function; passing NULL to a free function is a no-op.
 *
 * Handles are immutable after creation and may be shared across threads.
 */

#ifndef L2VIT_L2VIT_H_
#define L2VIT_L2VIT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define L2VIT_API __declspec(dllexport)
#else
#define L2VIT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum l2vit_status {
  L2VIT_OK = 0,
  L2VIT_ERR_INVALID_ARGUMENT = 1,
  L2VIT_ERR_DIMENSION = 2,
  L2VIT_ERR_DEGENERATE_INPUT = 3,
  L2VIT_ERR_PARSE = 4,
  L2VIT_ERR_IO = 5,
  L2VIT_ERR_FORMAT = 6,
  L2VIT_ERR_CHECKSUM = 7,
  L2VIT_ERR_MISSING_WEIGHT = 8,
  L2VIT_ERR_NON_FINITE = 9,
  L2VIT_ERR_CAPTURE_DISABLED = 10,
  L2VIT_ERR_INTERNAL = 11
} l2vit_status;

typedef struct l2vit_config l2vit_config;
typedef struct l2vit_weights l2vit_weights;

L2VIT_API const char* l2vit_version(void);
L2VIT_API const char* l2vit_status_string(l2vit_status status);
/* Message of the last failure on this thread, or "" when there was none. */
L2VIT_API const char* l2vit_last_error(void);
L2VIT_API void l2vit_string_free(char* s);

/* Worker threads for parallel loops. Results do not depend on this value. */
L2VIT_API l2vit_status l2vit_set_num_threads(int n);

/* ---- Configuration ---------------------------------------------------- */

L2VIT_API l2vit_status l2vit_config_parse(const char* text, l2vit_config** out);
L2VIT_API l2vit_status l2vit_config_load(const char* path, l2vit_config** out);
L2VIT_API void l2vit_config_free(l2vit_config* cfg);

typedef struct l2vit_config_info {
  const char* variant; /* "tiny", "small", "base" or "custom"; static storage */
  size_t input_size;
  uint64_t seed;
  size_t num_classes;
  double clamp_floor;
  const char* feature_map; /* "relu", "l1_norm", "leaky_relu" or "none"; static */
  const char* weights_path; /* "" when unset; owned by the config handle */
  const char* output_path;  /* "" when unset; owned by the config handle */
} l2vit_config_info;

L2VIT_API l2vit_status l2vit_config_get_info(const l2vit_config* cfg, l2vit_config_info* out);

/* ---- Weights ---------------------------------------------------------- */

L2VIT_API l2vit_status l2vit_weights_init(const l2vit_config* cfg, uint64_t seed,
                                          l2vit_weights** out);
L2VIT_API l2vit_status l2vit_weights_load(const char* path, l2vit_weights** out);
L2VIT_API l2vit_status l2vit_weights_save(const l2vit_weights* w, const char* path);
L2VIT_API void l2vit_weights_free(l2vit_weights* w);
/* Number of stored tensors and total scalar count (buffers included). */
L2VIT_API l2vit_status l2vit_weights_size(const l2vit_weights* w, size_t* tensors,
                                          uint64_t* scalars);

/* ---- Model ------------------------------------------------------------ */

/* Exact learnable-parameter count of the configured architecture. */
L2VIT_API l2vit_status l2vit_param_count(const l2vit_config* cfg, uint64_t* out);

/*
 * Parameter and FLOP report at the configured input size as CSV with header
 * "item,value": rows variant, input_size, params, macs, gflops, then one
 * "macs:<layer>" row per layer.
 */
L2VIT_API l2vit_status l2vit_describe(const l2vit_config* cfg, char** csv);

/* Uniform(-1, 1) image of shape [3, size, size] drawn from `seed`. */
L2VIT_API l2vit_status l2vit_random_image(uint64_t seed, size_t size, double* out, size_t len);
/* Headerless little-endian f32 image of shape [3, size, size]. */
L2VIT_API l2vit_status l2vit_read_image(const char* path, size_t size, double* out, size_t len);

/*
 * Classifier logits for one [3, S, S] image where S is the configured input
 * size. `image_len` must be 3*S*S and `logits_len` the number of classes.
 */
L2VIT_API l2vit_status l2vit_forward(const l2vit_config* cfg, const l2vit_weights* w,
                                     const double* image, size_t image_len, double* logits,
                                     size_t logits_len);

/* ---- Analysis --------------------------------------------------------- */

/* 1 when the factored order is chosen for (n tokens, d head dim), else 0. */
L2VIT_API l2vit_status l2vit_select_order(size_t n, size_t d, int* factored);

/*
 * Direct and factored linear attention (relu, s = 1) on uniform(-1, 1)
 * q, k, v of shape [n, d] drawn from `seed`; writes their max-abs difference.
 */
L2VIT_API l2vit_status l2vit_equiv_check(size_t n, size_t d, uint64_t seed, double clamp_floor,
                                         double* max_abs_diff);

typedef struct l2vit_gradcheck_result {
  double max_rel_error;
  double worst_analytic;
  double worst_numeric;
  size_t points;
  size_t directions;
  size_t resamples;
  size_t variables;
} l2vit_gradcheck_result;

/* Targets: linear, attn, lcm, cpe, lwa, lga, model. */
L2VIT_API l2vit_status l2vit_gradcheck(const char* target, uint64_t seed, size_t points,
                                       l2vit_gradcheck_result* out);

/*
 * Median single-threaded wall time of both evaluation orders for every token
 * count (ascending). CSV header "n,t_direct_s,t_factored_s". Slopes are the
 * log-log least-squares fits and may be NULL.
 */
L2VIT_API l2vit_status l2vit_bench(const size_t* tokens, size_t count, size_t head_dim,
                                   size_t repetitions, uint64_t seed, char** csv,
                                   double* slope_direct, double* slope_factored);

/*
 * Clamp-floor sweep on a fixed random token set. CSV header
 * "c_min,output_divergence,max_activation". `monotone` is 1 when the max
 * activation never increases with the floor.
 */
L2VIT_API l2vit_status l2vit_clamp_sweep(const double* floors, size_t count, uint64_t seed,
                                         char** csv, int* monotone);

typedef struct l2vit_attnmap_summary {
  size_t layers;
  double enhanced_win_fraction; /* layers where aggregation raises local mass */
  size_t negative_count;        /* negative entries of the plain maps */
} l2vit_attnmap_summary;

/*
 * Runs the model with attention capture and writes per-layer statistics as
 * CSV. When `out_dir` is non-NULL, head-0 maps are written there as
 * "<layer>.plain.f32" and "<layer>.enhanced.f32" (raw f32, N x N) together
 * with "concentration.csv".
 */
L2VIT_API l2vit_status l2vit_attnmap(const l2vit_config* cfg, const l2vit_weights* w,
                                     const double* image, size_t image_len, const char* out_dir,
                                     char** csv, l2vit_attnmap_summary* summary);

#ifdef __cplusplus
}
#endif

#endif /* L2VIT_L2VIT_H_ */
