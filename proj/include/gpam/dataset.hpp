#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpam/bigint.hpp"
#include "gpam/crc32.hpp"
#include "gpam/errors.hpp"
#include "gpam/masking.hpp"
#include "gpam/parallel.hpp"
#include "gpam/rng.hpp"

namespace gpam::sim {

using json = nlohmann::ordered_json;
using masking::Scheme;

enum class LeakModel { Bits, Hw, Value };

inline const char* leak_model_name(LeakModel m) {
  switch (m) {
    case LeakModel::Bits: return "bits";
    case LeakModel::Hw: return "hw";
    case LeakModel::Value: return "value";
  }
  return "?";
}

inline LeakModel parse_leak_model(const std::string& s) {
  if (s == "bits") return LeakModel::Bits;
  if (s == "hw") return LeakModel::Hw;
  if (s == "value") return LeakModel::Value;
  throw ConfigError("unknown leak model: " + s);
}

// One leaking byte: where in the trace it shows up and how.
struct LeakPoint {
  std::string attack_point;
  int byte_index = 0;
  int time_offset = 0;
  LeakModel model = LeakModel::Bits;
  double amplitude = 1.0;  // alpha
  double baseline = 0.0;   // beta

  int footprint() const { return model == LeakModel::Bits ? 8 : 1; }
};

struct SimConfig {
  Scheme scheme = Scheme::CM0;
  int trace_length = 4096;
  int scalar_bytes = 4;  // ECC schemes only
  bool shuffle = true;   // AES scheme only
  LeakModel leak_model = LeakModel::Bits;
  double amplitude = 1.0;
  double baseline = 0.0;
  double noise_sigma = 0.0;
  int jitter_max = 0;
  int leak_repeats = 1;  // layout places each leaking byte this many times
  uint64_t seed = 1;
  std::string curve;  // "", "toy17", "p256", or config path; "" = desk prime
  std::vector<LeakPoint> leak_points;  // filled by default_layout when empty
};

// Label layout per scheme: ordered (attack point, byte count). Byte 0 of a
// label is the most significant byte of the big-endian encoding.
inline std::vector<std::pair<std::string, int>> attack_points_for(Scheme scheme,
                                                                  int scalar_bytes) {
  const int b = scalar_bytes;
  const int h = scalar_bytes / 2;
  switch (scheme) {
    case Scheme::CM0:
      return {{"k", b}};
    case Scheme::CM1:
      return {{"k", b}, {"km", b}, {"r", b}};
    case Scheme::CM2:
      return {{"k", b}, {"km", b}, {"rem", h}, {"r", h}};
    case Scheme::CM3:
      return {{"k", b},   {"km1", b},  {"km2", b}, {"rem2", h}, {"km3", b},
              {"rem3", h}, {"r1", b},  {"r2", h},  {"r3", h}};
    case Scheme::AscadV2Sim:
      return {{"key", 16}, {"pt", 16}, {"rm", 1}, {"rout", 1}, {"perm", 16}, {"c", 16}};
  }
  throw ConfigError("bad scheme");
}

// The values an attacker's probe can see: operands of on-chip computation.
// The raw secret never leaks under a masked scheme.
inline std::vector<std::string> leaking_points_for(Scheme scheme) {
  switch (scheme) {
    case Scheme::CM0: return {"k"};
    case Scheme::CM1: return {"km", "r"};
    case Scheme::CM2: return {"km", "rem", "r"};
    case Scheme::CM3: return {"km2", "rem2", "km3", "rem3", "r2", "r3"};
    case Scheme::AscadV2Sim: return {"c", "rm", "rout", "perm"};
  }
  throw ConfigError("bad scheme");
}

// Sequential placement: footprint plus a 4-sample gap per leaking byte.
inline std::vector<LeakPoint> default_layout(const SimConfig& cfg) {
  const auto points = attack_points_for(cfg.scheme, cfg.scalar_bytes);
  std::map<std::string, int> widths;
  for (const auto& [n, w] : points) widths[n] = w;
  std::vector<LeakPoint> out;
  int offset = 8;
  const int footprint = cfg.leak_model == LeakModel::Bits ? 8 : 1;
  for (const auto& name : leaking_points_for(cfg.scheme)) {
    for (int byte = 0; byte < widths.at(name); ++byte) {
      for (int rep = 0; rep < cfg.leak_repeats; ++rep) {
        out.push_back(LeakPoint{name, byte, offset, cfg.leak_model, cfg.amplitude,
                                cfg.baseline});
        offset += footprint + 4;
      }
    }
  }
  return out;
}

inline void validate_config(SimConfig& cfg) {
  if (cfg.trace_length < 1) throw ConfigOutOfRange("trace_length < 1");
  if (cfg.noise_sigma < 0) throw ConfigOutOfRange("noise_sigma < 0");
  if (cfg.jitter_max < 0) throw ConfigOutOfRange("jitter_max < 0");
  if (cfg.leak_repeats < 1) throw ConfigOutOfRange("leak_repeats < 1");
  if (cfg.scheme != Scheme::AscadV2Sim) {
    if (cfg.scalar_bytes < 2 || cfg.scalar_bytes % 2 != 0)
      throw ConfigOutOfRange("scalar_bytes must be even and >= 2");
  }
  if (cfg.leak_points.empty()) cfg.leak_points = default_layout(cfg);
  const auto points = attack_points_for(cfg.scheme, cfg.scalar_bytes);
  std::map<std::string, int> widths;
  for (const auto& [n, w] : points) widths[n] = w;
  for (const auto& lp : cfg.leak_points) {
    if (!widths.count(lp.attack_point))
      throw ConfigOutOfRange("leak point names unknown attack point: " + lp.attack_point);
    if (lp.byte_index < 0 || lp.byte_index >= widths.at(lp.attack_point))
      throw ConfigOutOfRange("leak point byte index out of range");
    // Jitter shifts right, so the footprint plus the worst shift must fit.
    if (lp.time_offset < 0 ||
        lp.time_offset + lp.footprint() + cfg.jitter_max > cfg.trace_length)
      throw ConfigOutOfRange("leak point does not fit in trace (with jitter)");
  }
}

// Modulus used by the masking schedules: the curve order when a curve is
// named, otherwise the largest prime below 2^(8*scalar_bytes).
inline BigInt resolve_modulus(const SimConfig& cfg) {
  if (!cfg.curve.empty()) return ec::resolve_curve(cfg.curve).n;
  return masking::largest_prime_below_pow2(size_t(cfg.scalar_bytes) * 8);
}

struct TraceExample {
  std::vector<float> trace;
  std::map<std::string, std::vector<uint8_t>> labels;
};

// Renders one power trace from a set of labelled byte values. Draw order is
// fixed (jitter, then one noise value per sample) so traces are reproducible
// from the per-example seed.
inline std::vector<float> synth_trace(
    const std::map<std::string, std::vector<uint8_t>>& byte_views, const SimConfig& cfg,
    Rng& rng) {
  std::vector<float> trace(size_t(cfg.trace_length), float(cfg.baseline));
  for (const auto& lp : cfg.leak_points) {
    const auto it = byte_views.find(lp.attack_point);
    if (it == byte_views.end()) throw ConfigOutOfRange("no view for " + lp.attack_point);
    const uint8_t b = it->second.at(size_t(lp.byte_index));
    float* s = &trace[size_t(lp.time_offset)];
    switch (lp.model) {
      case LeakModel::Bits:
        for (int j = 0; j < 8; ++j)  // MSB first
          s[j] = float(lp.baseline + lp.amplitude * ((b >> (7 - j)) & 1));
        break;
      case LeakModel::Hw:
        s[0] = float(lp.baseline + lp.amplitude * std::popcount(b));
        break;
      case LeakModel::Value:
        s[0] = float(lp.baseline + lp.amplitude * (double(b) / 255.0));
        break;
    }
  }
  const int jitter = cfg.jitter_max > 0 ? int(rng.below(uint64_t(cfg.jitter_max) + 1)) : 0;
  if (cfg.noise_sigma > 0) {
    for (auto& s : trace) s += float(rng.normal(0.0, cfg.noise_sigma));
  }
  if (jitter > 0) {
    std::memmove(trace.data() + jitter, trace.data(),
                 (trace.size() - size_t(jitter)) * sizeof(float));
    std::fill(trace.begin(), trace.begin() + jitter, 0.0f);
  }
  return trace;
}

// Full example derivation from one seed: secret first (so the key-disjointness
// pass can re-derive it cheaply), then masks, then the trace.
inline TraceExample make_example(const SimConfig& cfg, const BigInt& modulus,
                                 uint64_t example_seed) {
  Rng rng(example_seed);
  TraceExample ex;
  if (cfg.scheme == Scheme::AscadV2Sim) {
    auto st = masking::sample_aes_state(rng, cfg.shuffle);
    auto put = [&](const std::string& name, const uint8_t* p, size_t len) {
      ex.labels[name] = std::vector<uint8_t>(p, p + len);
    };
    put("key", st.key.data(), 16);
    put("pt", st.pt.data(), 16);
    ex.labels["rm"] = {st.r_m};
    ex.labels["rout"] = {st.r_out};
    put("perm", st.perm.data(), 16);
    put("c", st.c.data(), 16);
  } else {
    const size_t bits = size_t(cfg.scalar_bytes) * 8;
    const size_t half_bits = bits / 2;
    const BigInt k = masking::random_scalar(bits, rng);
    auto nonzero = [&](size_t nbits) {
      BigInt v;
      do {
        v = masking::random_scalar(nbits, rng);
      } while (v == 0);
      return v;
    };
    masking::EccMaskTrace sched;
    switch (cfg.scheme) {
      case Scheme::CM0:
        sched = masking::cm0_schedule(k, size_t(cfg.scalar_bytes));
        break;
      case Scheme::CM1:
        sched = masking::cm1_schedule(k, masking::random_scalar(bits, rng), modulus,
                                      size_t(cfg.scalar_bytes));
        break;
      case Scheme::CM2:
        sched = masking::cm2_schedule(k, nonzero(half_bits), size_t(cfg.scalar_bytes));
        break;
      case Scheme::CM3:
        sched = masking::cm3_schedule(k, masking::random_scalar(bits, rng),
                                      nonzero(half_bits), nonzero(half_bits), modulus,
                                      size_t(cfg.scalar_bytes));
        break;
      default:
        throw ConfigError("bad scheme");
    }
    for (auto& [name, view] : sched.byte_views) ex.labels[name] = view;
  }
  ex.trace = synth_trace(ex.labels, cfg, rng);
  return ex;
}

// The per-example secret whose reuse across splits is forbidden.
inline std::vector<uint8_t> example_key(const SimConfig& cfg, const BigInt& modulus,
                                        uint64_t example_seed) {
  Rng rng(example_seed);
  if (cfg.scheme == Scheme::AscadV2Sim) {
    std::vector<uint8_t> key(16);
    for (auto& b : key) b = rng.byte();
    return key;
  }
  (void)modulus;
  return to_bytes_be(masking::random_scalar(size_t(cfg.scalar_bytes) * 8, rng),
                     size_t(cfg.scalar_bytes));
}

struct SplitCounts {
  int64_t train = 0, test = 0, holdout = 0;
  int64_t total() const { return train + test + holdout; }
};

// Default 87.5 / 6.25 / 6.25 split.
inline SplitCounts default_split(int64_t total) {
  SplitCounts c;
  c.test = total / 16;
  c.holdout = total / 16;
  c.train = total - c.test - c.holdout;
  return c;
}

constexpr const char* kSplitNames[3] = {"train", "test", "holdout"};
constexpr uint32_t kShardMagic = 0x53445047;  // "GPDS" little-endian
constexpr uint32_t kFormatVersion = 1;
constexpr int64_t kRecordsPerShard = 1024;

struct DatasetManifest {
  std::string name;
  Scheme scheme = Scheme::CM0;
  int trace_length = 0;
  std::map<std::string, int64_t> split_counts;
  std::vector<std::pair<std::string, int>> attack_points;  // manifest order
  std::string key_attack_point;
  json sim_config;  // full echo

  int64_t record_bytes() const {
    int64_t labels = 0;
    for (const auto& [n, w] : attack_points) labels += w;
    return int64_t(trace_length) * 4 + labels + 4;
  }
};

inline json sim_config_to_json(const SimConfig& cfg, const BigInt& modulus) {
  json j;
  j["scheme"] = masking::scheme_name(cfg.scheme);
  j["trace_length"] = cfg.trace_length;
  j["scalar_bytes"] = cfg.scalar_bytes;
  j["shuffle"] = cfg.shuffle;
  j["leak_model"] = leak_model_name(cfg.leak_model);
  j["amplitude"] = cfg.amplitude;
  j["baseline"] = cfg.baseline;
  j["noise_sigma"] = cfg.noise_sigma;
  j["jitter_max"] = cfg.jitter_max;
  j["leak_repeats"] = cfg.leak_repeats;
  j["seed"] = cfg.seed;
  j["curve"] = cfg.curve;
  j["modulus"] = to_hex(modulus);
  j["byte_order"] = "big-endian-msb-first";
  json lps = json::array();
  for (const auto& lp : cfg.leak_points) {
    lps.push_back(json{{"attack_point", lp.attack_point},
                       {"byte_index", lp.byte_index},
                       {"time_offset", lp.time_offset},
                       {"model", leak_model_name(lp.model)},
                       {"amplitude", lp.amplitude},
                       {"baseline", lp.baseline}});
  }
  j["leak_points"] = lps;
  return j;
}

inline SimConfig sim_config_from_json(const json& j) {
  SimConfig cfg;
  cfg.scheme = masking::parse_scheme(j.at("scheme").get<std::string>());
  cfg.trace_length = j.at("trace_length").get<int>();
  cfg.scalar_bytes = j.at("scalar_bytes").get<int>();
  cfg.shuffle = j.at("shuffle").get<bool>();
  cfg.leak_model = parse_leak_model(j.at("leak_model").get<std::string>());
  cfg.amplitude = j.at("amplitude").get<double>();
  cfg.baseline = j.at("baseline").get<double>();
  cfg.noise_sigma = j.at("noise_sigma").get<double>();
  cfg.jitter_max = j.at("jitter_max").get<int>();
  cfg.leak_repeats = j.at("leak_repeats").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.curve = j.at("curve").get<std::string>();
  for (const auto& lj : j.at("leak_points")) {
    LeakPoint lp;
    lp.attack_point = lj.at("attack_point").get<std::string>();
    lp.byte_index = lj.at("byte_index").get<int>();
    lp.time_offset = lj.at("time_offset").get<int>();
    lp.model = parse_leak_model(lj.at("model").get<std::string>());
    lp.amplitude = lj.at("amplitude").get<double>();
    lp.baseline = lj.at("baseline").get<double>();
    cfg.leak_points.push_back(lp);
  }
  return cfg;
}

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);  // little-endian host assumed (x86)
  buf.append(b, 4);
}

inline void append_record(std::string& buf, const TraceExample& ex,
                          const DatasetManifest& mf) {
  const size_t start = buf.size();
  buf.append(reinterpret_cast<const char*>(ex.trace.data()), ex.trace.size() * 4);
  for (const auto& [name, width] : mf.attack_points) {
    const auto& label = ex.labels.at(name);
    if (int(label.size()) != width) throw IoFailure("label width mismatch: " + name);
    buf.append(reinterpret_cast<const char*>(label.data()), label.size());
  }
  const uint32_t crc = crc32(buf.data() + start, buf.size() - start);
  put_u32(buf, crc);
}

inline uint64_t final_example_seed(const SimConfig& cfg, int split_idx, int64_t index,
                                   uint64_t bump) {
  const uint64_t base = mix_seed(cfg.seed, uint64_t(split_idx) + 1, uint64_t(index));
  return bump == 0 ? base : mix_seed(base, bump);
}

}  // namespace detail

// Writes shards plus manifest.json. Every example stores the trace and labels
// for all intermediates; a black-box consumer simply ignores non-key labels.
// Per-example seeds derive from (seed, split, index), so generation is
// reproducible and parallel across examples. Keys never repeat across splits
// (colliding examples are deterministically re-derived).
inline DatasetManifest gen_dataset(SimConfig cfg, const SplitCounts& counts,
                                   const std::string& out_dir,
                                   const std::string& name = "dataset") {
  validate_config(cfg);
  const BigInt modulus = resolve_modulus(cfg);

  DatasetManifest mf;
  mf.name = name;
  mf.scheme = cfg.scheme;
  mf.trace_length = cfg.trace_length;
  mf.attack_points = attack_points_for(cfg.scheme, cfg.scalar_bytes);
  mf.key_attack_point = cfg.scheme == Scheme::AscadV2Sim ? "key" : "k";
  mf.sim_config = sim_config_to_json(cfg, modulus);
  const int64_t split_totals[3] = {counts.train, counts.test, counts.holdout};
  for (int s = 0; s < 3; ++s) mf.split_counts[kSplitNames[s]] = split_totals[s];

  // Pass 1: final per-example seeds with cross-split key disjointness.
  std::vector<std::vector<uint64_t>> seeds(3);
  std::set<std::vector<uint8_t>> prev_split_keys;
  std::set<std::vector<uint8_t>> this_split_keys;
  for (int s = 0; s < 3; ++s) {
    this_split_keys.clear();
    seeds[s].resize(size_t(split_totals[s]));
    for (int64_t i = 0; i < split_totals[s]; ++i) {
      uint64_t bump = 0;
      uint64_t seed;
      std::vector<uint8_t> key;
      do {
        seed = detail::final_example_seed(cfg, s, i, bump);
        key = example_key(cfg, modulus, seed);
        ++bump;
      } while (prev_split_keys.count(key));
      seeds[s][size_t(i)] = seed;
      this_split_keys.insert(key);
    }
    prev_split_keys.insert(this_split_keys.begin(), this_split_keys.end());
  }

  // Pass 2: synthesize and write shards.
  namespace fs = std::filesystem;
  std::error_code ec_mkdir;
  fs::create_directories(out_dir, ec_mkdir);
  std::set<std::vector<uint8_t>> seen_keys;  // internal cross-split re-check
  for (int s = 0; s < 3; ++s) {
    const int64_t total = split_totals[s];
    for (int64_t shard = 0, base = 0; base < total; ++shard, base += kRecordsPerShard) {
      const int64_t n = std::min(kRecordsPerShard, total - base);
      std::vector<TraceExample> examples(static_cast<size_t>(n));
      parallel_for(n, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i)
          examples[size_t(i)] = make_example(cfg, modulus, seeds[s][size_t(base + i)]);
      });
      for (int64_t i = 0; i < n; ++i) {
        auto key = examples[size_t(i)].labels.at(mf.key_attack_point);
        if (s > 0 && seen_keys.count(key))
          throw DuplicateKeyAcrossSplits("key reuse across splits detected");
      }
      if (s == 0 || s == 1)  // keys from train and test are forbidden later
        for (int64_t i = 0; i < n; ++i)
          seen_keys.insert(examples[size_t(i)].labels.at(mf.key_attack_point));

      std::string buf;
      buf.reserve(size_t(16 + n * mf.record_bytes()));
      detail::put_u32(buf, kShardMagic);
      detail::put_u32(buf, kFormatVersion);
      detail::put_u32(buf, uint32_t(cfg.trace_length));
      detail::put_u32(buf, uint32_t(n));
      for (int64_t i = 0; i < n; ++i) detail::append_record(buf, examples[size_t(i)], mf);

      const fs::path path = fs::path(out_dir) /
                            (std::string(kSplitNames[s]) + "-" + std::to_string(shard) + ".shard");
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out) throw IoFailure("cannot write " + path.string());
      out.write(buf.data(), std::streamsize(buf.size()));
      if (!out) throw IoFailure("short write: " + path.string());
    }
  }

  json mj;
  mj["format_version"] = kFormatVersion;
  mj["name"] = mf.name;
  mj["scheme"] = masking::scheme_name(mf.scheme);
  mj["trace_length"] = mf.trace_length;
  mj["sample_encoding"] = "f32le";
  json splits;
  for (int s = 0; s < 3; ++s) splits[kSplitNames[s]] = json{{"count", split_totals[s]}};
  mj["splits"] = splits;
  json aps;
  for (const auto& [n, w] : mf.attack_points) aps[n] = w;
  mj["attack_points"] = aps;
  mj["key_attack_point"] = mf.key_attack_point;
  mj["sim_config"] = mf.sim_config;
  std::ofstream mout(fs::path(out_dir) / "manifest.json", std::ios::trunc);
  if (!mout) throw IoFailure("cannot write manifest.json");
  mout << mj.dump(2) << "\n";
  return mf;
}

inline DatasetManifest load_manifest(const std::string& dataset_dir) {
  std::ifstream in(std::filesystem::path(dataset_dir) / "manifest.json");
  if (!in) throw IoFailure("cannot open manifest.json in " + dataset_dir);
  json mj = json::parse(in);
  if (mj.at("format_version").get<uint32_t>() != kFormatVersion)
    throw UnknownVersion("unsupported dataset format_version");
  DatasetManifest mf;
  mf.name = mj.at("name").get<std::string>();
  mf.scheme = masking::parse_scheme(mj.at("scheme").get<std::string>());
  mf.trace_length = mj.at("trace_length").get<int>();
  for (const auto& [k, v] : mj.at("splits").items())
    mf.split_counts[k] = v.at("count").get<int64_t>();
  for (const auto& [k, v] : mj.at("attack_points").items())
    mf.attack_points.emplace_back(k, v.get<int>());
  mf.key_attack_point = mj.at("key_attack_point").get<std::string>();
  mf.sim_config = mj.at("sim_config");
  return mf;
}

// Streams one split in stored order, validating the per-record CRC.
class SplitReader {
 public:
  SplitReader(const std::string& dataset_dir, const std::string& split)
      : dir_(dataset_dir), split_(split), manifest_(load_manifest(dataset_dir)) {
    if (!manifest_.split_counts.count(split))
      throw ConfigError("unknown split: " + split);
    remaining_ = manifest_.split_counts.at(split);
  }

  const DatasetManifest& manifest() const { return manifest_; }

  std::optional<TraceExample> next() {
    if (remaining_ == 0) return std::nullopt;
    if (shard_left_ == 0) open_next_shard();
    TraceExample ex;
    const size_t trace_bytes = size_t(manifest_.trace_length) * 4;
    std::string buf(size_t(manifest_.record_bytes()), '\0');
    if (!in_.read(buf.data(), std::streamsize(buf.size())))
      throw CorruptShard("truncated shard: " + current_path_);
    const uint32_t stored = read_u32(buf.data() + buf.size() - 4);
    if (crc32(buf.data(), buf.size() - 4) != stored)
      throw CorruptShard("record CRC mismatch in " + current_path_);
    ex.trace.resize(size_t(manifest_.trace_length));
    std::memcpy(ex.trace.data(), buf.data(), trace_bytes);
    size_t off = trace_bytes;
    for (const auto& [name, width] : manifest_.attack_points) {
      ex.labels[name] = std::vector<uint8_t>(buf.begin() + long(off),
                                             buf.begin() + long(off + size_t(width)));
      off += size_t(width);
    }
    --remaining_;
    --shard_left_;
    return ex;
  }

 private:
  static uint32_t read_u32(const char* p) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }

  void open_next_shard() {
    const auto path = std::filesystem::path(dir_) /
                      (split_ + "-" + std::to_string(shard_idx_++) + ".shard");
    current_path_ = path.string();
    in_.close();
    in_.clear();
    in_.open(path, std::ios::binary);
    if (!in_) throw CorruptShard("missing shard: " + current_path_);
    char header[16];
    if (!in_.read(header, 16)) throw CorruptShard("short shard header: " + current_path_);
    if (read_u32(header) != kShardMagic) throw CorruptShard("bad magic: " + current_path_);
    if (read_u32(header + 4) != kFormatVersion)
      throw UnknownVersion("unsupported shard version: " + current_path_);
    if (int(read_u32(header + 8)) != manifest_.trace_length)
      throw CorruptShard("trace length mismatch: " + current_path_);
    shard_left_ = read_u32(header + 12);
    if (shard_left_ == 0) throw CorruptShard("empty shard: " + current_path_);
    if (int64_t(shard_left_) > remaining_)
      throw CorruptShard("manifest counts do not match shard contents");
  }

  std::string dir_, split_, current_path_;
  DatasetManifest manifest_;
  std::ifstream in_;
  int64_t remaining_ = 0;
  int64_t shard_left_ = 0;
  int shard_idx_ = 0;
};

inline std::vector<TraceExample> load_split(const std::string& dataset_dir,
                                            const std::string& split) {
  SplitReader reader(dataset_dir, split);
  std::vector<TraceExample> out;
  out.reserve(size_t(reader.manifest().split_counts.at(split)));
  while (auto ex = reader.next()) out.push_back(std::move(*ex));
  return out;
}

}  // namespace gpam::sim
