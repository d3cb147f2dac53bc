#include <gtest/gtest.h>

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "clustergnn/io.h"
#include "clustergnn/model.h"
#include "clustergnn/synthetic.h"

namespace clustergnn {
namespace {

KeypointSet sample_keypoints() {
  PairOptions opt;
  opt.n_keypoints = 10;
  return generate_pair(1, opt, DescriptorModel::make(1, 8, 0.5)).a;
}

void put_f32(std::vector<std::uint8_t>& b, std::size_t at, float v) {
  std::memcpy(b.data() + at, &v, 4);
}

template <typename Fn>
std::uint64_t format_error_offset(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected FormatError";
  return ~0ull;
}

TEST(KeypointsFile, RoundTripIsBitIdentical) {
  const KeypointSet kp = sample_keypoints();
  const auto bytes = encode_keypoints_file(kp);
  EXPECT_EQ(bytes.size(), 20u + 10u * 4u * (3u + 8u));
  const KeypointSet back = decode_keypoints_file(bytes, "kp");
  EXPECT_EQ(back, kp);
  EXPECT_EQ(encode_keypoints_file(back), bytes);
}

TEST(KeypointsFile, ErrorsCarryPathAndOffset) {
  const auto good = encode_keypoints_file(sample_keypoints());
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file({}, "x"); }), 0u);
  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file(bad, "x"); }), 0u);
  bad = good;
  bad[4] = 9;
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file(bad, "x"); }), 4u);
  bad = good;
  std::fill(bad.begin() + 6, bad.begin() + 10, 0);
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file(bad, "x"); }), 6u);
  bad = good;
  bad.pop_back();
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file(bad, "x"); }), 20u);
  // Keypoint 2: x outside the image, then a score outside [0, 1].
  const std::size_t rec2 = 20 + 2 * 44;
  bad = good;
  put_f32(bad, rec2, 1e6f);
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file(bad, "x"); }), rec2);
  bad = good;
  put_f32(bad, rec2 + 8, 1.5f);
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file(bad, "x"); }),
            rec2 + 8);
  bad = good;
  put_f32(bad, rec2 + 12 + 4 * 3, NAN);
  EXPECT_EQ(format_error_offset([&] { decode_keypoints_file(bad, "x"); }),
            rec2 + 24);
  try {
    decode_keypoints_file({}, "some/path.kp");
  } catch (const FormatError& e) {
    EXPECT_EQ(std::string(e.what()), "some/path.kp: byte offset 0: empty file");
  }
}

ModelWeights<float> sample_weights() {
  ModelConfig c = ModelConfig::tiny();
  c.descriptor_dim = 16;
  auto w = ModelWeights<float>::init(c, 9);
  PairOptions opt;
  opt.n_keypoints = 20;
  const std::vector<SyntheticPair> pairs{
      generate_pair(2, opt, DescriptorModel::make(1, 16, 0.5))};
  initialize_centers(w, std::span<const SyntheticPair>(pairs), 3);
  return w;
}

std::vector<std::vector<float>> all_values(ModelWeights<float> w) {
  std::vector<std::vector<float>> out;
  w.visit_trainable([&](const std::string&, MatrixF& m) { out.push_back(m.storage()); });
  w.visit_centers([&](const std::string&, ClusterState<float>& s) {
    out.push_back(s.centers.storage());
    out.push_back({s.initialized ? 1.0f : 0.0f});
  });
  return out;
}

TEST(WeightsFile, RoundTripIsBitIdentical) {
  const auto w = sample_weights();
  const auto bytes = encode_weights_file(w);
  const auto back = decode_weights_file(bytes, "w");
  EXPECT_EQ(all_values(back), all_values(w));
  EXPECT_EQ(back.config.schedule, w.config.schedule);
  EXPECT_TRUE(back.centers_initialized());
  EXPECT_EQ(encode_weights_file(back), bytes);
}

TEST(WeightsFile, CorruptionIsDetected) {
  const auto good = encode_weights_file(sample_weights());
  auto bad = good;
  bad[good.size() / 2] ^= 0x40;
  const std::uint64_t at =
      format_error_offset([&] { decode_weights_file(bad, "w"); });
  EXPECT_EQ(at, good.size() - 4);  // reported at the checksum
  bad = good;
  bad.resize(good.size() - 100);
  format_error_offset([&] { decode_weights_file(bad, "w"); });
  EXPECT_EQ(format_error_offset([&] {
              decode_weights_file(std::vector<std::uint8_t>(3), "w");
            }),
            0u);
}

TEST(WeightsFile, ShapeMismatchFromConfigIsRejected) {
  // A valid checksum over a body whose config disagrees with the blobs.
  auto w = sample_weights();
  auto other = w;
  other.config.descriptor_dim = 8;
  other.config.heads = 2;
  auto bytes = encode_weights_file(w);
  const auto other_bytes = encode_weights_file(ModelWeights<float>::init(other.config, 1));
  // Splice the smaller config header (same length) into w's file.
  std::copy(other_bytes.begin() + 6, other_bytes.begin() + 14, bytes.begin() + 6);
  bytes.resize(bytes.size() - 4);
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), bytes.data(), bytes.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  try {
    decode_weights_file(bytes, "w");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("config implies"), std::string::npos);
  }
}

TEST(KeyValues, ParsesCommentsAndOffsets) {
  const KeyValues kv = parse_key_values("# header\nd = 32\n\nlr=0.5 # note\n", "c");
  ASSERT_EQ(kv.entries.size(), 2u);
  EXPECT_EQ(kv.entries.at("d").value, "32");
  EXPECT_EQ(kv.entries.at("d").offset, 9u);
  EXPECT_EQ(kv.entries.at("lr").value, "0.5");
  EXPECT_EQ(format_error_offset([] { parse_key_values("a = 1\nbogus\n", "c"); }),
            6u);
  EXPECT_EQ(format_error_offset([] { parse_key_values("a = 1\na = 2\n", "c"); }),
            6u);
}

const char* kFullConfig =
    "d = 32\nheads = 4\ninit_depth = 1\nschedule = 4,8\nlayers_per_stage = 2\n"
    "lr = 0.003\nepochs = 2\nsteps_per_epoch = 5\nbatch_size = 4\n"
    "n_keypoints = 64\noutlier_frac = 0.2\nnoise_px = 1.0\n";

TEST(TrainConfigFrom, ReadsAllRequiredKeys) {
  const TrainConfig c = train_config_from(parse_key_values(kFullConfig, "c"), "c");
  EXPECT_EQ(c.model.descriptor_dim, 32u);
  EXPECT_EQ(c.model.schedule, (std::vector<std::size_t>{4, 8}));
  EXPECT_DOUBLE_EQ(c.lr, 0.003);
  EXPECT_EQ(c.batch_size, 4u);
  EXPECT_DOUBLE_EQ(c.gamma, 0.1);
}

TEST(TrainConfigFrom, MissingKeyIsNamed) {
  std::string text = kFullConfig;
  text.erase(text.find("lr = 0.003\n"), 11);
  try {
    train_config_from(parse_key_values(text, "c"), "c");
    FAIL();
  } catch (const MissingKeyError& e) {
    EXPECT_EQ(e.key, "lr");
  }
}

TEST(TrainConfigFrom, BadValuesAreFormatErrors) {
  EXPECT_THROW(train_config_from(parse_key_values(std::string(kFullConfig) +
                                                      "colour = red\n",
                                                  "c"),
                                 "c"),
               FormatError);
  std::string text = kFullConfig;
  text.replace(text.find("0.003"), 5, "fast!");
  EXPECT_THROW(train_config_from(parse_key_values(text, "c"), "c"), FormatError);
}

TEST(MatchTsv, Layout) {
  MatchResult r;
  r.pairs = {{0, 2, 0.5}, {3, 1, 0.25}};
  r.unmatched_a = {1, 2};
  r.unmatched_b = {0};
  std::ostringstream out;
  write_match_tsv(out, r);
  EXPECT_EQ(out.str(),
            "0\t2\t0.500000\n3\t1\t0.250000\n# matches=2\n# mean_score=0.375000\n"
            "# unmatched_a=2\n# unmatched_b=1\n");
}

}  // namespace
}  // namespace clustergnn
