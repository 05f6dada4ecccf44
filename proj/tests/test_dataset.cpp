#include "gpam/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace gpam;
using namespace gpam::sim;
namespace fs = std::filesystem;

namespace {

SimConfig small_cm0() {
  SimConfig cfg;
  cfg.scheme = Scheme::CM0;
  cfg.trace_length = 128;
  cfg.scalar_bytes = 4;
  cfg.leak_model = LeakModel::Bits;
  cfg.noise_sigma = 0.0;
  cfg.seed = 11;
  return cfg;
}

std::string temp_dir(const std::string& tag) {
  const fs::path p = fs::path(::testing::TempDir()) / ("gpds-" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Threshold decoder for noiseless `bits` leakage.
uint8_t decode_bits(const std::vector<float>& trace, const LeakPoint& lp) {
  uint8_t b = 0;
  for (int j = 0; j < 8; ++j) {
    const bool one = trace[size_t(lp.time_offset + j)] > lp.baseline + lp.amplitude / 2;
    b = uint8_t((b << 1) | (one ? 1 : 0));
  }
  return b;
}

}  // namespace

TEST(SynthTrace, NoiselessLeakValues) {
  SimConfig cfg = small_cm0();
  cfg.leak_points = {LeakPoint{"k", 0, 10, LeakModel::Hw, 2.0, 0.5},
                     LeakPoint{"k", 1, 20, LeakModel::Bits, 1.0, 0.0},
                     LeakPoint{"k", 2, 40, LeakModel::Hw, 1.0, 0.0},
                     LeakPoint{"k", 3, 50, LeakModel::Value, 1.0, 0.0}};
  validate_config(cfg);
  std::map<std::string, std::vector<uint8_t>> views{{"k", {0x00, 0xFF, 0x0F, 0xFF}}};
  Rng rng(1);
  const auto trace = synth_trace(views, cfg, rng);
  EXPECT_FLOAT_EQ(trace[10], 0.5f);  // hw of 0x00 -> baseline
  for (int j = 0; j < 8; ++j) EXPECT_FLOAT_EQ(trace[size_t(20 + j)], 1.0f);  // bits of 0xFF
  EXPECT_FLOAT_EQ(trace[40], 4.0f);  // HW(0x0F) = 4
  EXPECT_FLOAT_EQ(trace[50], 1.0f);  // value 255/255
  EXPECT_FLOAT_EQ(trace[0], 0.0f);
}

TEST(SynthTrace, BitsDecodeExactlyWhenNoiseless) {
  SimConfig cfg = small_cm0();
  validate_config(cfg);
  const BigInt modulus = resolve_modulus(cfg);
  for (uint64_t i = 0; i < 20; ++i) {
    const auto ex = make_example(cfg, modulus, mix_seed(99, i));
    for (const auto& lp : cfg.leak_points)
      EXPECT_EQ(decode_bits(ex.trace, lp), ex.labels.at(lp.attack_point)[size_t(lp.byte_index)]);
  }
}

TEST(SynthTrace, NonLeakSampleMean) {
  SimConfig cfg = small_cm0();
  cfg.baseline = 0.25;
  cfg.noise_sigma = 0.5;
  validate_config(cfg);
  const BigInt modulus = resolve_modulus(cfg);
  double sum = 0;
  int64_t n = 0;
  const int last_leak = cfg.leak_points.back().time_offset + 8;
  for (uint64_t i = 0; i < 400; ++i) {
    const auto ex = make_example(cfg, modulus, mix_seed(5, i));
    for (int t = last_leak + 1; t < cfg.trace_length; ++t) {
      sum += ex.trace[size_t(t)];
      ++n;
    }
  }
  EXPECT_NEAR(sum / double(n), 0.25, 3.0 * 0.5 / std::sqrt(double(n)));
}

TEST(SynthTrace, JitterShiftsRightZeroPadded) {
  SimConfig cfg = small_cm0();
  cfg.jitter_max = 16;
  cfg.baseline = 1.0;
  validate_config(cfg);
  Rng rng(3);
  std::map<std::string, std::vector<uint8_t>> views{{"k", {0xFF, 0xFF, 0xFF, 0xFF}}};
  const auto trace = synth_trace(views, cfg, rng);
  // leading zero padding up to the jitter shift, then the shifted baseline
  int lead = 0;
  while (lead < cfg.trace_length && trace[size_t(lead)] == 0.0f) ++lead;
  EXPECT_LE(lead, 16);
  EXPECT_FLOAT_EQ(trace[size_t(lead)], 1.0f);
}

TEST(Config, JitterCannotDropLeaks) {
  SimConfig cfg = small_cm0();
  cfg.leak_points = {LeakPoint{"k", 0, 124, LeakModel::Bits, 1.0, 0.0}};
  EXPECT_THROW(validate_config(cfg), ConfigOutOfRange);  // 124+8 > 128
  cfg.leak_points = {LeakPoint{"k", 0, 118, LeakModel::Bits, 1.0, 0.0}};
  cfg.jitter_max = 4;
  EXPECT_THROW(validate_config(cfg), ConfigOutOfRange);  // 118+8+4 > 128
  cfg.jitter_max = 2;
  EXPECT_NO_THROW(validate_config(cfg));
}

TEST(Config, Validation) {
  SimConfig cfg = small_cm0();
  cfg.noise_sigma = -1;
  EXPECT_THROW(validate_config(cfg), ConfigOutOfRange);
  cfg = small_cm0();
  cfg.scalar_bytes = 3;
  EXPECT_THROW(validate_config(cfg), ConfigOutOfRange);
  cfg = small_cm0();
  cfg.leak_points = {LeakPoint{"nope", 0, 8, LeakModel::Bits, 1, 0}};
  EXPECT_THROW(validate_config(cfg), ConfigOutOfRange);
}

TEST(DefaultSplit, Ratios) {
  const auto c = default_split(1000);
  EXPECT_EQ(c.test, 62);
  EXPECT_EQ(c.holdout, 62);
  EXPECT_EQ(c.train, 876);
  EXPECT_EQ(c.total(), 1000);
}

TEST(GenDataset, DeterministicBytes) {
  const auto dir1 = temp_dir("det1");
  const auto dir2 = temp_dir("det2");
  SimConfig cfg = small_cm0();
  cfg.noise_sigma = 0.3;
  cfg.jitter_max = 4;
  gen_dataset(cfg, SplitCounts{40, 8, 8}, dir1);
  gen_dataset(cfg, SplitCounts{40, 8, 8}, dir2);
  for (const auto& entry : fs::directory_iterator(dir1)) {
    const auto other = fs::path(dir2) / entry.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(entry.path()), slurp(other)) << entry.path();
  }
}

TEST(GenDataset, KeySetsDisjointAcrossSplits) {
  const auto dir = temp_dir("disjoint");
  SimConfig cfg = small_cm0();
  cfg.scalar_bytes = 2;  // tiny keyspace to make collisions likely
  cfg.trace_length = 64;
  gen_dataset(cfg, SplitCounts{120, 40, 40}, dir);
  std::set<std::vector<uint8_t>> train_keys, holdout_keys, test_keys;
  for (auto ex = SplitReader(dir, "train"); auto e = ex.next();)
    train_keys.insert(e->labels.at("k"));
  for (auto ex = SplitReader(dir, "test"); auto e = ex.next();)
    test_keys.insert(e->labels.at("k"));
  for (auto ex = SplitReader(dir, "holdout"); auto e = ex.next();)
    holdout_keys.insert(e->labels.at("k"));
  for (const auto& k : holdout_keys) {
    EXPECT_FALSE(train_keys.count(k));
    EXPECT_FALSE(test_keys.count(k));
  }
  for (const auto& k : test_keys) EXPECT_FALSE(train_keys.count(k));
}

TEST(GenDataset, RoundTripMatchesInMemory) {
  const auto dir = temp_dir("roundtrip");
  SimConfig cfg = small_cm0();
  cfg.noise_sigma = 0.1;
  auto mf = gen_dataset(cfg, SplitCounts{12, 3, 3}, dir);
  // Re-derive the expected examples: no collisions expected at 32-bit keys.
  SplitReader reader(dir, "test");
  for (int64_t i = 0; i < 3; ++i) {
    const auto ex = reader.next();
    ASSERT_TRUE(ex.has_value());
    SimConfig derived = sim_config_from_json(mf.sim_config);
    const auto expect =
        make_example(derived, resolve_modulus(derived), mix_seed(mix_seed(cfg.seed, 2), uint64_t(i)));
    EXPECT_EQ(ex->trace, expect.trace);
    EXPECT_EQ(ex->labels, expect.labels);
  }
  EXPECT_FALSE(reader.next().has_value());
}

TEST(GenDataset, ManifestCountsMatchShards) {
  const auto dir = temp_dir("counts");
  gen_dataset(small_cm0(), SplitCounts{33, 5, 5}, dir);
  for (const char* split : {"train", "test", "holdout"}) {
    SplitReader reader(dir, split);
    int64_t n = 0;
    while (reader.next()) ++n;
    EXPECT_EQ(n, reader.manifest().split_counts.at(split));
  }
}

TEST(SplitReader, TruncatedShardRejected) {
  const auto dir = temp_dir("trunc");
  gen_dataset(small_cm0(), SplitCounts{8, 2, 2}, dir);
  const auto shard = fs::path(dir) / "train-0.shard";
  fs::resize_file(shard, fs::file_size(shard) - 9);
  SplitReader reader(dir, "train");
  EXPECT_THROW(
      {
        while (reader.next()) {
        }
      },
      CorruptShard);
}

TEST(SplitReader, CorruptCrcRejected) {
  const auto dir = temp_dir("crc");
  gen_dataset(small_cm0(), SplitCounts{8, 2, 2}, dir);
  const auto shard = fs::path(dir) / "train-0.shard";
  auto bytes = slurp(shard);
  bytes[40] = char(bytes[40] ^ 0x20);  // flip a bit inside the first record
  std::ofstream(shard, std::ios::binary | std::ios::trunc).write(bytes.data(), long(bytes.size()));
  SplitReader reader(dir, "train");
  EXPECT_THROW(reader.next(), CorruptShard);
}

TEST(SplitReader, UnknownVersionRejected) {
  const auto dir = temp_dir("ver");
  gen_dataset(small_cm0(), SplitCounts{8, 2, 2}, dir);
  const auto shard = fs::path(dir) / "train-0.shard";
  auto bytes = slurp(shard);
  bytes[4] = 9;  // version field
  std::ofstream(shard, std::ios::binary | std::ios::trunc).write(bytes.data(), long(bytes.size()));
  SplitReader reader(dir, "train");
  EXPECT_THROW(reader.next(), UnknownVersion);
}

TEST(SplitReader, HoldoutDoesNotTouchTrainShards) {
  const auto dir = temp_dir("isolate");
  gen_dataset(small_cm0(), SplitCounts{8, 2, 2}, dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("train-", 0) == 0) fs::remove(entry.path());
  }
  SplitReader reader(dir, "holdout");
  int64_t n = 0;
  while (reader.next()) ++n;
  EXPECT_EQ(n, 2);
}

TEST(Ascadv2Sim, GeneratesAndReads) {
  const auto dir = temp_dir("aes");
  SimConfig cfg;
  cfg.scheme = Scheme::AscadV2Sim;
  cfg.trace_length = 1024;
  cfg.shuffle = false;
  cfg.seed = 5;
  gen_dataset(cfg, SplitCounts{6, 2, 2}, dir);
  SplitReader reader(dir, "train");
  auto ex = reader.next();
  ASSERT_TRUE(ex.has_value());
  EXPECT_EQ(ex->labels.at("key").size(), 16u);
  EXPECT_EQ(ex->labels.at("c").size(), 16u);
  EXPECT_EQ(ex->labels.at("rm").size(), 1u);
  // no shuffling: perm must be the identity
  for (int i = 0; i < 16; ++i) EXPECT_EQ(ex->labels.at("perm")[size_t(i)], i);
}
