#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpam/autodiff.hpp"
#include "gpam/errors.hpp"
#include "gpam/rng.hpp"

namespace gpam::model {

using json = nlohmann::ordered_json;

struct HeadSpec {
  std::string name;
  std::string attack_point;
  int byte_index = 0;
  std::vector<std::string> depends_on;
  bool stop_grad_deps = false;
  bool use_trunk = true;
  double loss_weight = 1.0;
};

struct ModelConfig {
  // the eight tunables
  int batch_size = 32;
  int steps_per_epoch = 100;
  int epochs = 10;
  double target_lr = 6e-4;
  int merge_filter_1 = 16;
  int merge_filter_2 = 8;
  int trace_length = 4096;
  int patch_size = 0;  // 0 = square-root rule
  // canonical architecture knobs
  int model_dim = 64;
  int gau_blocks = 3;
  int expansion = 0;  // 0 = 2 * model_dim
  int attn_dim = 64;
  std::vector<int> head_units = {256, 128};
  double dropout_p = 0.05;
  std::vector<HeadSpec> heads;

  int resolved_expansion() const { return expansion > 0 ? expansion : 2 * model_dim; }
  int resolved_patch() const;
  int seq_len() const { return trace_length / resolved_patch(); }
};

// Divisor of trace_length nearest to round(sqrt(trace_length)); ties go to the
// smaller divisor. A prime length degenerates to 1 (warned, configs should
// override).
inline int default_patch_size(int64_t trace_length) {
  if (trace_length < 1) throw ConfigError("trace_length must be positive");
  const int64_t target = llround(std::sqrt(double(trace_length)));
  int64_t best = 1;
  for (int64_t d = 1; d * d <= trace_length; ++d) {
    if (trace_length % d != 0) continue;
    for (const int64_t div : {d, trace_length / d}) {
      if (std::abs(div - target) < std::abs(best - target) ||
          (std::abs(div - target) == std::abs(best - target) && div < best))
        best = div;
    }
  }
  if (best == 1 && trace_length > 4)
    std::cerr << "warning: trace length " << trace_length
              << " has no useful divisors; patch size degenerates to 1\n";
  return int(best);
}

inline int ModelConfig::resolved_patch() const {
  return patch_size > 0 ? patch_size : default_patch_size(trace_length);
}

// Head evaluation order; validates names, dependencies and acyclicity.
inline std::vector<const HeadSpec*> head_topo_order(const std::vector<HeadSpec>& heads) {
  std::map<std::string, const HeadSpec*> by_name;
  for (const auto& h : heads) {
    if (by_name.count(h.name)) throw ConfigError("duplicate head name: " + h.name);
    by_name[h.name] = &h;
  }
  std::vector<const HeadSpec*> order;
  std::map<std::string, int> state;  // 0 new, 1 visiting, 2 done
  std::function<void(const HeadSpec*)> visit = [&](const HeadSpec* h) {
    const int s = state[h->name];
    if (s == 2) return;
    if (s == 1) throw CyclicDag("head dependency cycle through " + h->name);
    state[h->name] = 1;
    for (const auto& dep : h->depends_on) {
      const auto it = by_name.find(dep);
      if (it == by_name.end())
        throw MissingDependency("head " + h->name + " depends on unknown head " + dep);
      visit(it->second);
    }
    state[h->name] = 2;
    order.push_back(h);
  };
  // Visit in name order so the result is independent of declaration order.
  for (const auto& [name, h] : by_name) visit(h);
  return order;
}

inline void validate_config(const ModelConfig& cfg) {
  if (cfg.trace_length < 1) throw ConfigError("trace_length must be positive");
  const int patch = cfg.resolved_patch();
  if (cfg.trace_length % patch != 0)
    throw IndivisibleLength("trace_length not divisible by patch_size");
  if (cfg.model_dim < 1 || cfg.attn_dim < 1 || cfg.gau_blocks < 1)
    throw ConfigError("model dims must be positive");
  if (cfg.merge_filter_1 < 0 || cfg.merge_filter_2 < 0)
    throw ConfigError("merge filters must be >= 0");
  if (cfg.dropout_p < 0 || cfg.dropout_p >= 1) throw ConfigError("dropout_p in [0,1)");
  if (cfg.head_units.empty()) throw ConfigError("head_units must be nonempty");
  if (cfg.batch_size < 1 || cfg.steps_per_epoch < 0 || cfg.epochs < 0)
    throw ConfigError("training schedule values out of range");
  head_topo_order(cfg.heads);
}

// Flattened combiner output length for a given config.
inline int trunk_length(const ModelConfig& cfg) {
  int t = cfg.seq_len();
  int channels = 3 * cfg.model_dim;
  if (cfg.merge_filter_1 > 0) {
    if (t < 3) throw ConfigError("sequence too short for merge filter 1");
    t = (t - 3) / 2 + 1;
    channels = cfg.merge_filter_1;
  }
  if (cfg.merge_filter_2 > 0) {
    if (t < 3) throw ConfigError("sequence too short for merge filter 2");
    t = (t - 3) / 2 + 1;
    channels = cfg.merge_filter_2;
  }
  return t * channels;
}

inline int head_input_length(const ModelConfig& cfg, const HeadSpec& h) {
  int len = h.use_trunk ? trunk_length(cfg) : 0;
  len += 256 * int(h.depends_on.size());
  if (len == 0) throw ConfigError("head " + h.name + " has no inputs");
  return len;
}

// --------------------------------------------------------------------------
// JSON config (exact key names).

inline HeadSpec head_from_json(const json& j) {
  HeadSpec h;
  for (const char* key : {"name", "attack_point", "byte_index"})
    if (!j.contains(key))
      throw ConfigError(std::string("model config head missing key: ") + key);
  h.name = j.at("name").get<std::string>();
  h.attack_point = j.at("attack_point").get<std::string>();
  h.byte_index = j.at("byte_index").get<int>();
  h.depends_on = j.value("depends_on", std::vector<std::string>{});
  h.stop_grad_deps = j.value("stop_grad_deps", false);
  h.use_trunk = j.value("use_trunk", true);
  h.loss_weight = j.value("loss_weight", 1.0);
  return h;
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  for (const char* key : {"batch_size", "steps_per_epoch", "epochs", "target_lr",
                          "merge_filter_1", "merge_filter_2", "trace_length",
                          "patch_size", "heads"})
    if (!j.contains(key)) throw ConfigError(std::string("model config missing key: ") + key);
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.target_lr = j.at("target_lr").get<double>();
  cfg.merge_filter_1 = j.at("merge_filter_1").get<int>();
  cfg.merge_filter_2 = j.at("merge_filter_2").get<int>();
  cfg.trace_length = j.at("trace_length").get<int>();
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.model_dim = j.value("model_dim", 64);
  cfg.gau_blocks = j.value("gau_blocks", 3);
  cfg.expansion = j.value("expansion", 0);
  cfg.attn_dim = j.value("attn_dim", 64);
  cfg.head_units = j.value("head_units", std::vector<int>{256, 128});
  cfg.dropout_p = j.value("dropout_p", 0.05);
  for (const auto& hj : j.at("heads")) cfg.heads.push_back(head_from_json(hj));
  validate_config(cfg);
  return cfg;
}

inline json config_to_json(const ModelConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["steps_per_epoch"] = cfg.steps_per_epoch;
  j["epochs"] = cfg.epochs;
  j["target_lr"] = cfg.target_lr;
  j["merge_filter_1"] = cfg.merge_filter_1;
  j["merge_filter_2"] = cfg.merge_filter_2;
  j["trace_length"] = cfg.trace_length;
  j["patch_size"] = cfg.patch_size;
  j["model_dim"] = cfg.model_dim;
  j["gau_blocks"] = cfg.gau_blocks;
  j["expansion"] = cfg.expansion;
  j["attn_dim"] = cfg.attn_dim;
  j["head_units"] = cfg.head_units;
  j["dropout_p"] = cfg.dropout_p;
  json heads = json::array();
  for (const auto& h : cfg.heads) {
    heads.push_back(json{{"name", h.name},
                         {"attack_point", h.attack_point},
                         {"byte_index", h.byte_index},
                         {"depends_on", h.depends_on},
                         {"stop_grad_deps", h.stop_grad_deps},
                         {"use_trunk", h.use_trunk},
                         {"loss_weight", h.loss_weight}});
  }
  j["heads"] = heads;
  return j;
}

inline ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open model config: " + path);
  return config_from_json(json::parse(in));
}

// --------------------------------------------------------------------------
// Parameters.

template <class T>
struct GpamParams {
  std::map<std::string, ad::Var<T>> by_name;  // ordered, deterministic

  ad::Var<T>& at(const std::string& name) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("no parameter named " + name);
    return it->second;
  }

  std::vector<ad::Var<T>> all() const {
    std::vector<ad::Var<T>> out;
    out.reserve(by_name.size());
    for (const auto& [n, v] : by_name) out.push_back(v);
    return out;
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& [name, v] : by_name) n += v->value.numel();
    return n;
  }
};

namespace detail {

inline uint64_t name_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <class T>
inline ad::Var<T> glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng,
                         const std::string& name) {
  ad::Tensor<T> t(std::move(shape));
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  for (auto& v : t.data) v = T((rng.uniform01() * 2.0 - 1.0) * limit);
  return ad::leaf(std::move(t), true, name);
}

template <class T>
inline ad::Var<T> constant(std::vector<int> shape, double value, const std::string& name) {
  ad::Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = T(value);
  return ad::leaf(std::move(t), true, name);
}

template <class T>
inline ad::Var<T> small_normal(std::vector<int> shape, Rng& rng, const std::string& name) {
  ad::Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = T(rng.normal(0.0, 0.02));
  return ad::leaf(std::move(t), true, name);
}

}  // namespace detail

// Parameter initialization. Seeding is per component name, so head declaration
// order does not change any initial value.
template <class T>
inline GpamParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  validate_config(cfg);
  GpamParams<T> params;
  auto put = [&](ad::Var<T> v) { params.by_name[v->name] = std::move(v); };

  const int P = cfg.resolved_patch();
  const int Tlen = cfg.seq_len();
  const int d = cfg.model_dim;
  const int e = cfg.resolved_expansion();
  const int s = cfg.attn_dim;

  {
    Rng rng(mix_seed(seed, detail::name_hash("stem")));
    put(detail::glorot<T>({P, d}, P, d, rng, "stem.proj"));
    put(detail::small_normal<T>({Tlen, d}, rng, "stem.pos"));
  }
  for (int b = 0; b < cfg.gau_blocks; ++b) {
    const std::string pre = "gau" + std::to_string(b) + ".";
    Rng rng(mix_seed(seed, detail::name_hash(pre)));
    put(detail::constant<T>({d}, 1.0, pre + "ln_gamma"));
    put(detail::constant<T>({d}, 0.0, pre + "ln_beta"));
    put(detail::glorot<T>({d, e}, d, e, rng, pre + "w_u"));
    put(detail::glorot<T>({d, e}, d, e, rng, pre + "w_v"));
    put(detail::glorot<T>({d, s}, d, s, rng, pre + "w_z"));
    put(detail::constant<T>({s}, 1.0, pre + "q_scale"));
    put(detail::constant<T>({s}, 0.0, pre + "q_offset"));
    put(detail::constant<T>({s}, 1.0, pre + "k_scale"));
    put(detail::constant<T>({s}, 0.0, pre + "k_offset"));
    put(detail::glorot<T>({e, d}, e, d, rng, pre + "w_o"));
  }
  {
    Rng rng(mix_seed(seed, detail::name_hash("combiner")));
    if (cfg.merge_filter_1 > 0)
      put(detail::glorot<T>({3, 3 * d, cfg.merge_filter_1}, 9 * d, cfg.merge_filter_1, rng,
                            "combiner.conv1"));
    const int c2_in = cfg.merge_filter_1 > 0 ? cfg.merge_filter_1 : 3 * d;
    if (cfg.merge_filter_2 > 0)
      put(detail::glorot<T>({3, c2_in, cfg.merge_filter_2}, 3 * c2_in, cfg.merge_filter_2,
                            rng, "combiner.conv2"));
  }
  for (const auto& h : cfg.heads) {
    const std::string pre = "head." + h.name + ".";
    Rng rng(mix_seed(seed, detail::name_hash(pre)));
    int in = head_input_length(cfg, h);
    for (size_t li = 0; li < cfg.head_units.size(); ++li) {
      const int out = cfg.head_units[li];
      const std::string tag = std::to_string(li);
      put(detail::glorot<T>({in, out}, in, out, rng, pre + "w" + tag));
      put(detail::constant<T>({out}, 0.0, pre + "b" + tag));
      in = out;
    }
    put(detail::glorot<T>({in, 256}, in, 256, rng, pre + "w_out"));
    put(detail::constant<T>({256}, 0.0, pre + "b_out"));
  }
  return params;
}

// --------------------------------------------------------------------------
// Forward pass.

// Reshapes a trace batch [B, L] (or single [L]) into non-overlapping patches.
template <class T>
inline ad::Var<T> patchify(const ad::Var<T>& trace, int patch_size) {
  const auto& shape = trace->value.shape;
  const int L = shape.back();
  if (patch_size < 1 || L % patch_size != 0)
    throw IndivisibleLength("trace length not divisible by patch size");
  const int Tlen = L / patch_size;
  if (shape.size() == 1) return ad::reshape(trace, {Tlen, patch_size});
  if (shape.size() == 2) return ad::reshape(trace, {shape[0], Tlen, patch_size});
  throw ShapeMismatch("patchify expects [L] or [B, L]");
}

template <class T>
inline ad::Var<T> stem(const ModelConfig& cfg, GpamParams<T>& params,
                       const ad::Var<T>& patches) {
  return ad::add(ad::matmul(patches, params.at("stem.proj")), params.at("stem.pos"));
}

// Gated attention block: shared low-rank Z with per-dim scale/offset for Q/K,
// squared-ReLU attention scaled by 1/T, gated expansion, residual output.
template <class T>
inline ad::Var<T> gau_block(const ModelConfig& cfg, GpamParams<T>& params, int block,
                            const ad::Var<T>& x) {
  const std::string pre = "gau" + std::to_string(block) + ".";
  const int Tlen = x->value.shape[x->value.shape.size() - 2];
  auto normed = ad::layer_norm(x, params.at(pre + "ln_gamma"), params.at(pre + "ln_beta"));
  auto u = ad::swish(ad::matmul(normed, params.at(pre + "w_u")));
  auto v = ad::swish(ad::matmul(normed, params.at(pre + "w_v")));
  auto z = ad::swish(ad::matmul(normed, params.at(pre + "w_z")));
  auto q = ad::add(ad::mul(z, params.at(pre + "q_scale")), params.at(pre + "q_offset"));
  auto k = ad::add(ad::mul(z, params.at(pre + "k_scale")), params.at(pre + "k_offset"));
  auto scores = ad::scale(ad::matmul(q, ad::transpose_last2(k)),
                          1.0 / std::sqrt(double(cfg.attn_dim)));
  auto attn = ad::scale(ad::squared_relu(scores), 1.0 / double(Tlen));
  auto gated = ad::mul(u, ad::matmul(attn, v));
  return ad::add(x, ad::matmul(gated, params.at(pre + "w_o")));
}

// Concatenates the three block outputs on the feature axis and shrinks the
// sequence with strided convolutions; filter value 0 skips that layer.
template <class T>
inline ad::Var<T> combiner(const ModelConfig& cfg, GpamParams<T>& params,
                           const std::vector<ad::Var<T>>& block_outputs) {
  auto x = ad::concat(block_outputs, 2);  // [B, T, 3d]
  if (cfg.merge_filter_1 > 0)
    x = ad::swish(ad::conv1d(x, params.at("combiner.conv1"), 2));
  if (cfg.merge_filter_2 > 0)
    x = ad::swish(ad::conv1d(x, params.at("combiner.conv2"), 2));
  const int batch = x->value.shape[0];
  return ad::reshape(x, {batch, int(x->value.numel() / batch)});
}

template <class T>
inline ad::Var<T> head_forward(const ModelConfig& cfg, GpamParams<T>& params,
                               const HeadSpec& spec, const ad::Var<T>& trunk,
                               const std::vector<ad::Var<T>>& rel_inputs, bool train,
                               Rng& rng) {
  std::vector<ad::Var<T>> parts;
  if (spec.use_trunk) parts.push_back(trunk);
  for (const auto& dep : rel_inputs)
    parts.push_back(spec.stop_grad_deps ? ad::stop_gradient(dep) : dep);
  auto x = parts.size() == 1 ? parts[0] : ad::concat(parts, 1);
  const std::string pre = "head." + spec.name + ".";
  for (size_t li = 0; li < cfg.head_units.size(); ++li) {
    const std::string tag = std::to_string(li);
    x = ad::swish(ad::add(ad::matmul(x, params.at(pre + "w" + tag)),
                          params.at(pre + "b" + tag)));
  }
  x = ad::dropout(x, cfg.dropout_p, train, rng);
  return ad::add(ad::matmul(x, params.at(pre + "w_out")), params.at(pre + "b_out"));
}

template <class T>
struct ForwardResult {
  std::map<std::string, ad::Var<T>> probs;   // head name -> [B, 256] softmax
  std::map<std::string, ad::Var<T>> logits;  // head name -> [B, 256]
  std::map<std::string, double> head_loss;   // per-head cross entropy
  ad::Var<T> total_loss;                     // weighted sum (labels given)
};

// Heads evaluate in dependency order; relational inputs are the dependency
// heads' softmax outputs.
template <class T>
inline ForwardResult<T> model_forward(
    const ModelConfig& cfg, GpamParams<T>& params, const ad::Var<T>& traces, bool train,
    Rng& rng, const std::map<std::string, std::vector<uint8_t>>* labels = nullptr) {
  if (traces->value.shape.size() != 2 || traces->value.shape[1] != cfg.trace_length)
    throw ShapeMismatch("model_forward expects [B, trace_length] traces");
  ForwardResult<T> out;
  auto patches = patchify(traces, cfg.resolved_patch());
  auto x = stem(cfg, params, patches);
  std::vector<ad::Var<T>> block_outputs;
  for (int b = 0; b < cfg.gau_blocks; ++b) {
    x = gau_block(cfg, params, b, x);
    block_outputs.push_back(x);
  }
  // the combiner merges the three deepest blocks (all blocks when fewer)
  if (block_outputs.size() > 3)
    block_outputs.erase(block_outputs.begin(),
                        block_outputs.end() - 3);
  while (block_outputs.size() < 3) block_outputs.push_back(block_outputs.back());
  auto trunk = combiner(cfg, params, block_outputs);

  ad::Var<T> total;
  for (const HeadSpec* spec : head_topo_order(cfg.heads)) {
    std::vector<ad::Var<T>> rel;
    for (const auto& dep : spec->depends_on) rel.push_back(out.probs.at(dep));
    auto logits = head_forward(cfg, params, *spec, trunk, rel, train, rng);
    out.logits[spec->name] = logits;
    out.probs[spec->name] = ad::softmax(logits);
    if (labels) {
      const auto it = labels->find(spec->name);
      if (it == labels->end()) throw MissingLabel("no labels for head " + spec->name);
      auto ce = ad::cross_entropy(logits, it->second);
      out.head_loss[spec->name] = double(ce->value.data[0]);
      auto weighted = ad::scale(ce, spec->loss_weight);
      total = total ? ad::add(total, weighted) : weighted;
    }
  }
  out.total_loss = total;
  return out;
}

// --------------------------------------------------------------------------
// Checkpoints: magic "GPAM", u32 version, length-prefixed config blob, then
// per tensor: length-prefixed name, u8 rank, u32 dims, f32 little-endian data.

constexpr uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoFailure("checkpoint truncated");
  return v;
}
}  // namespace detail

template <class T>
inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const GpamParams<T>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write checkpoint: " + path);
  out.write("GPAM", 4);
  detail::put_u32(out, kCheckpointVersion);
  const std::string blob = config_to_json(cfg).dump();
  detail::put_u32(out, uint32_t(blob.size()));
  out.write(blob.data(), std::streamsize(blob.size()));
  for (const auto& [name, var] : params.by_name) {
    detail::put_u32(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    const uint8_t rank = uint8_t(var->value.shape.size());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int dim : var->value.shape) detail::put_u32(out, uint32_t(dim));
    for (const T v : var->value.data) {
      const float f = float(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw IoFailure("short write: " + path);
}

// Returns the stored config; fills `params` (which must have been built from
// that config). Unknown tensor names are rejected.
template <class T>
inline ModelConfig load_checkpoint(const std::string& path, GpamParams<T>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "GPAM", 4) != 0)
    throw UnknownVersion("not a model checkpoint: " + path);
  if (detail::get_u32(in) != kCheckpointVersion)
    throw UnknownVersion("unsupported checkpoint version");
  const uint32_t blob_len = detail::get_u32(in);
  std::string blob(blob_len, '\0');
  if (!in.read(blob.data(), blob_len)) throw IoFailure("checkpoint truncated");
  const ModelConfig cfg = config_from_json(json::parse(blob));
  params = init_params<T>(cfg, /*seed=*/0);
  std::set<std::string> filled;
  while (true) {
    uint32_t name_len = 0;
    if (!in.read(reinterpret_cast<char*>(&name_len), 4)) break;  // EOF
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoFailure("checkpoint truncated");
    const auto it = params.by_name.find(name);
    if (it == params.by_name.end())
      throw ConfigError("checkpoint contains unknown tensor: " + name);
    uint8_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 1);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = int(detail::get_u32(in));
    if (shape != it->second->value.shape)
      throw ConfigError("checkpoint tensor shape mismatch: " + name);
    for (auto& v : it->second->value.data) {
      float f;
      if (!in.read(reinterpret_cast<char*>(&f), 4)) throw IoFailure("checkpoint truncated");
      v = T(f);
    }
    filled.insert(name);
  }
  if (filled.size() != params.by_name.size())
    throw ConfigError("checkpoint is missing tensors");
  return cfg;
}

}  // namespace gpam::model
