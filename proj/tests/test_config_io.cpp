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

#include <gtest/gtest.h>

#include <unistd.h>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>

#include "l2vit/config.hpp"
#include "l2vit/io.hpp"
#include "l2vit/model.hpp"
#include "test_util.hpp"

namespace l2vit {
namespace {

using testing::random_uniform;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kInvalidArgument;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected an error";
  return {};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() /
         ("l2vit_test_" + std::to_string(::getpid()) + "_" + name);
}

// ---------------------------------------------------------------------------
// Config parsing.

TEST(Config, TinyDefaults) {
  const RunConfig cfg = parse_config("variant = tiny\n");
  EXPECT_EQ(cfg.variant, Variant::kTiny);
  EXPECT_EQ(cfg.model.stage_dims, (std::array<std::size_t, 4>{96, 192, 384, 768}));
  EXPECT_EQ(cfg.model.stage_heads, (std::array<std::size_t, 4>{3, 6, 12, 24}));
  EXPECT_EQ(cfg.model.window, 7u);
  EXPECT_EQ(cfg.input_size, 224u);
  EXPECT_EQ(cfg.model.clamp_floor, 1e2);
}

TEST(Config, RunKeysCommentsAndWhitespace) {
  const RunConfig cfg = parse_config(
      "# run settings\n"
      "  variant=base   # trailing comment\n"
      "\n"
      "seed = 18446744073709551615\n"
      "input_size = 384\n"
      "clamp_floor = 1e-1\r\n"
      "feature_map = l1_norm\n"
      "weights = /tmp/w.l2vt\n"
      "output = out.csv\n");
  EXPECT_EQ(cfg.variant, Variant::kBase);
  EXPECT_EQ(cfg.seed, 18446744073709551615ull);
  EXPECT_EQ(cfg.input_size, 384u);
  EXPECT_EQ(cfg.model.clamp_floor, 0.1);
  EXPECT_EQ(cfg.model.feature_map, FeatureMap::kL1Norm);
  EXPECT_EQ(cfg.weights_path, "/tmp/w.l2vt");
  EXPECT_EQ(cfg.output_path, "out.csv");
  EXPECT_EQ(cfg.model.stage_dims[0], 128u);
}

TEST(Config, CustomRequiresEveryArchitectureKey) {
  const std::string full =
      "variant = custom\nstem_dims = 8,16\nstage_dims = 16,32,64,128\n"
      "stage_heads = 1,2,4,8\nstage_pairs = 1,1,2,1\nwindow = 7\nlcm_kernel = 5\n"
      "mlp_ratio = 2\nnum_classes = 10\n";
  const RunConfig cfg = parse_config(full);
  EXPECT_EQ(cfg.model.lcm_kernel, 5u);
  EXPECT_EQ(cfg.model.mlp_ratio, 2.0);
  EXPECT_EQ(cfg.model.stage_pairs[2], 2u);
  const std::string missing = full.substr(0, full.find("num_classes"));
  EXPECT_NE(message_of([&] { parse_config(missing); }).find("num_classes"), std::string::npos);
}

TEST(Config, Errors) {
  EXPECT_EQ(message_of([] { parse_config(""); }), "variant required");
  EXPECT_EQ(code_of([] { parse_config("# only a comment\n"); }), ErrorCode::kParse);

  const std::string override_msg =
      message_of([] { parse_config("variant = tiny\nstage_dims = 1,2,3,4\n"); });
  EXPECT_NE(override_msg.find("line 2"), std::string::npos);
  EXPECT_NE(override_msg.find("stage_dims"), std::string::npos);

  const std::string unknown = message_of([] { parse_config("variant = tiny\ncolour = red\n"); });
  EXPECT_NE(unknown.find("line 2"), std::string::npos);
  EXPECT_NE(unknown.find("colour"), std::string::npos);

  const std::string dup = message_of([] { parse_config("seed = 1\nvariant = tiny\nseed = 2\n"); });
  EXPECT_NE(dup.find("line 3"), std::string::npos);
  EXPECT_NE(dup.find("duplicate"), std::string::npos);

  EXPECT_EQ(code_of([] { parse_config("variant = huge\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse_config("variant tiny\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse_config("variant = tiny\nseed = -1\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse_config("variant = tiny\nseed = 12x\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse_config("variant = tiny\ninput_size = 112\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse_config("variant = tiny\nclamp_floor = 1e-9\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse_config("variant = tiny\nfeature_map = tanh\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse_config("variant = tiny\nweights =\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { load_config("/nonexistent/l2vit.cfg"); }), ErrorCode::kIo);
}

TEST(Config, CustomArchitectureIsValidated) {
  const std::string text =
      "variant = custom\nstem_dims = 8,16\nstage_dims = 16,32,64,100\n"
      "stage_heads = 1,2,4,8\nstage_pairs = 1,1,2,1\nwindow = 7\nlcm_kernel = 7\n"
      "mlp_ratio = 4\nnum_classes = 10\n";
  EXPECT_NE(message_of([&] { parse_config(text); }).find("double"), std::string::npos);
  std::string short_list = text;
  short_list.replace(short_list.find("8,16"), 4, "8");
  EXPECT_NE(message_of([&] { parse_config(short_list); }).find("line 2"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Weight serialization.

TEST(Weights, EmptyStoreIsHeaderPlusCrc) {
  const std::string bytes = serialize_weights(WeightStore{});
  ASSERT_EQ(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "L2VT");
  std::uint32_t version, count, crc;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&count, bytes.data() + 8, 4);
  std::memcpy(&crc, bytes.data() + 12, 4);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(count, 0u);
  EXPECT_EQ(crc, static_cast<std::uint32_t>(crc32(0L, Z_NULL, 0)));
  EXPECT_TRUE(deserialize_weights(bytes).empty());
}

TEST(Weights, LayoutOfOneTensor) {
  WeightStore store;
  store.insert("ab", Tensor({2}, std::vector<double>{1.5, -2.0}));
  const std::string bytes = serialize_weights(store);
  // header 12 + name len 2 + name 2 + rank 1 + dims 8 + payload 8 + crc 4
  ASSERT_EQ(bytes.size(), 37u);
  std::uint16_t len;
  std::memcpy(&len, bytes.data() + 12, 2);
  EXPECT_EQ(len, 2u);
  EXPECT_EQ(bytes.substr(14, 2), "ab");
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1u);
  std::uint64_t dim;
  std::memcpy(&dim, bytes.data() + 17, 8);
  EXPECT_EQ(dim, 2u);
  float v[2];
  std::memcpy(v, bytes.data() + 25, 8);
  EXPECT_EQ(v[0], 1.5f);
  EXPECT_EQ(v[1], -2.0f);
  std::uint32_t crc;
  std::memcpy(&crc, bytes.data() + 33, 4);
  EXPECT_EQ(crc, static_cast<std::uint32_t>(
                     crc32(0L, reinterpret_cast<const Bytef*>(bytes.data() + 12), 21)));
}

TEST(Weights, RoundsToFloatAndIsIdempotent) {
  WeightStore store;
  store.insert("x", random_uniform(1, {3, 4}));
  store.insert("scalar", Tensor({1}, std::vector<double>{0.1}));
  const std::string first = serialize_weights(store);
  const WeightStore loaded = deserialize_weights(first);
  EXPECT_EQ(loaded.get("scalar")[0], static_cast<double>(0.1f));
  EXPECT_EQ(serialize_weights(loaded), first);
}

TEST(Weights, InitializedModelRoundTripsBitExactly) {
  ModelConfig cfg;
  cfg.stem_dims = {8, 16};
  cfg.stage_dims = {16, 32, 64, 128};
  cfg.stage_heads = {1, 2, 4, 8};
  cfg.stage_pairs = {1, 1, 1, 1};
  cfg.num_classes = 5;
  const WeightStore store = init_weights(cfg, 3);
  const auto path = temp_path("roundtrip.l2vt");
  save_weights(store, path.string());
  const WeightStore loaded = load_weights(path.string());
  EXPECT_TRUE(loaded == store);
  const Tensor image = random_uniform(4, {3, 64, 64});
  EXPECT_TRUE(forward(image, cfg, loaded) == forward(image, cfg, store));
  const auto path2 = temp_path("roundtrip2.l2vt");
  save_weights(loaded, path2.string());
  EXPECT_EQ(read_file(path.string()), read_file(path2.string()));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST(Weights, CorruptionIsDetected) {
  WeightStore store;
  store.insert("w", random_uniform(2, {4, 4}));
  const std::string good = serialize_weights(store);

  std::string payload = good;
  payload[good.size() - 10] ^= 0x01;
  EXPECT_EQ(code_of([&] { deserialize_weights(payload); }), ErrorCode::kChecksum);

  std::string magic = good;
  magic[0] = 'X';
  EXPECT_NE(message_of([&] { deserialize_weights(magic); }).find("magic"), std::string::npos);

  std::string version = good;
  version[4] = 2;
  EXPECT_NE(message_of([&] { deserialize_weights(version); }).find("version"), std::string::npos);

  for (std::size_t cut : {std::size_t{3}, std::size_t{14}, good.size() - 20, good.size() - 1}) {
    const std::string truncated = good.substr(0, cut);
    EXPECT_NE(message_of([&] { deserialize_weights(truncated); }).find("truncated"),
              std::string::npos)
        << cut;
  }
  EXPECT_EQ(code_of([] { load_weights("/nonexistent/w.l2vt"); }), ErrorCode::kIo);
}

TEST(RawImage, ReadsLittleEndianF32) {
  const auto path = temp_path("image.f32");
  std::string bytes;
  for (int i = 0; i < 12; ++i) {
    const float v = 0.25f * static_cast<float>(i) - 1.0f;
    bytes.append(reinterpret_cast<const char*>(&v), 4);
  }
  write_file(path.string(), bytes);
  const Tensor t = read_raw_f32(path.string(), {3, 2, 2});
  EXPECT_EQ(t.at(0, 0, 0), -1.0);
  EXPECT_EQ(t.at(2, 1, 1), 1.75);
  EXPECT_EQ(code_of([&] { read_raw_f32(path.string(), {3, 3, 3}); }), ErrorCode::kFormat);
  write_raw_f32(t, path.string());
  EXPECT_EQ(read_file(path.string()), bytes);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace l2vit
