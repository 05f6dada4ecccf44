#include "gpam/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "gpam/rng.hpp"

using namespace gpam;
using namespace gpam::model;
using gpam::ad::Tensor;
using gpam::ad::Var;

namespace {

// Tiny configuration used for structural and gradient tests.
ModelConfig tiny_config(bool relational = true) {
  ModelConfig cfg;
  cfg.trace_length = 32;
  cfg.patch_size = 4;  // T = 8
  cfg.model_dim = 8;
  cfg.attn_dim = 4;
  cfg.expansion = 16;
  cfg.merge_filter_1 = 4;
  cfg.merge_filter_2 = 2;
  cfg.head_units = {8, 4};
  cfg.dropout_p = 0.05;
  cfg.batch_size = 3;
  cfg.steps_per_epoch = 1;
  cfg.epochs = 1;
  cfg.target_lr = 1e-3;
  HeadSpec km{"km0", "km", 0, {}, false, true, 1.0};
  HeadSpec r{"r0", "r", 0, {}, false, true, 1.0};
  HeadSpec k{"k0", "k", 0, {}, false, true, 1.0};
  if (relational) k.depends_on = {"km0", "r0"};
  cfg.heads = {km, r, k};
  return cfg;
}

template <class T>
Var<T> random_traces(int batch, int len, uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t({batch, len});
  for (auto& v : t.data) v = T(rng.normal(0, 1));
  return ad::leaf(std::move(t), false);
}

std::map<std::string, std::vector<uint8_t>> random_labels(const ModelConfig& cfg, int batch,
                                                          uint64_t seed) {
  Rng rng(seed);
  std::map<std::string, std::vector<uint8_t>> labels;
  for (const auto& h : cfg.heads) {
    auto& v = labels[h.name];
    for (int i = 0; i < batch; ++i) v.push_back(rng.byte());
  }
  return labels;
}

}  // namespace

TEST(Patchify, ShapesAndRoundTrip) {
  auto x = random_traces<double>(2, 4096, 1);
  auto p = patchify(x, 64);
  EXPECT_EQ(p->value.shape, (std::vector<int>{2, 64, 64}));
  auto whole = patchify(x, 4096);
  EXPECT_EQ(whole->value.shape, (std::vector<int>{2, 1, 4096}));
  // flatten(patchify(x)) == x
  auto flat = ad::reshape(p, {2, 4096});
  EXPECT_EQ(flat->value.data, x->value.data);
  EXPECT_THROW(patchify(x, 63), IndivisibleLength);
}

TEST(DefaultPatchSize, KnownValues) {
  EXPECT_EQ(default_patch_size(4096), 64);
  EXPECT_EQ(default_patch_size(13), 1);  // prime, degenerate
  // brute-force oracle at 1,620,000: divisor nearest round(sqrt) = 1273
  const int64_t L = 1620000;
  const int64_t target = llround(std::sqrt(double(L)));
  int64_t best = 1;
  for (int64_t d = 1; d <= L; ++d)
    if (L % d == 0 &&
        (std::abs(d - target) < std::abs(best - target) ||
         (std::abs(d - target) == std::abs(best - target) && d < best)))
      best = d;
  EXPECT_EQ(default_patch_size(L), best);
  EXPECT_EQ(best, 1250);
}

TEST(Stem, ZeroTraceGivesPositionalTable) {
  ModelConfig cfg = tiny_config();
  auto params = init_params<double>(cfg, 7);
  auto zeros = ad::leaf(Tensor<double>({1, cfg.trace_length}), false);
  auto out = stem(cfg, params, patchify(zeros, cfg.resolved_patch()));
  const auto& pos = params.at("stem.pos")->value;
  for (int t = 0; t < cfg.seq_len(); ++t)
    for (int j = 0; j < cfg.model_dim; ++j)
      EXPECT_DOUBLE_EQ(out->value.at({0, t, j}), pos.at({t, j}));
}

TEST(Stem, PositionSensitive) {
  ModelConfig cfg = tiny_config();
  auto params = init_params<double>(cfg, 7);
  Rng rng(3);
  Tensor<double> a({1, cfg.trace_length});
  for (auto& v : a.data) v = rng.normal(0, 1);
  Tensor<double> b = a;
  // swap the first two patches
  for (int i = 0; i < 4; ++i) std::swap(b.data[size_t(i)], b.data[size_t(4 + i)]);
  auto oa = stem(cfg, params, patchify(ad::leaf(std::move(a), false), 4));
  auto ob = stem(cfg, params, patchify(ad::leaf(std::move(b), false), 4));
  EXPECT_NE(oa->value.data, ob->value.data);
}

TEST(GauBlock, ZeroOutputWeightsIsIdentity) {
  ModelConfig cfg = tiny_config();
  auto params = init_params<double>(cfg, 9);
  for (auto& v : params.at("gau0.w_o")->value.data) v = 0.0;
  auto x = random_traces<double>(2, cfg.trace_length, 5);
  auto patched = stem(cfg, params, patchify(x, 4));
  auto y = gau_block(cfg, params, 0, patched);
  EXPECT_EQ(y->value.shape, patched->value.shape);
  EXPECT_EQ(y->value.data, patched->value.data);
}

TEST(GauBlock, MatchesNaiveOracle) {
  // Recompute one block with plain scalar loops.
  ModelConfig cfg = tiny_config();
  auto params = init_params<double>(cfg, 11);
  auto x = random_traces<double>(1, cfg.trace_length, 6);
  auto input = stem(cfg, params, patchify(x, 4));
  auto got = gau_block(cfg, params, 0, input);

  const int T = cfg.seq_len(), d = cfg.model_dim, e = cfg.resolved_expansion(),
            s = cfg.attn_dim;
  auto W = [&](const std::string& n) { return params.at("gau0." + n)->value; };
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<std::vector<double>> N(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(d)));
  for (int t = 0; t < T; ++t) {
    double mean = 0, var = 0;
    for (int j = 0; j < d; ++j) mean += input->value.at({0, t, j});
    mean /= d;
    for (int j = 0; j < d; ++j) var += std::pow(input->value.at({0, t, j}) - mean, 2);
    var /= d;
    for (int j = 0; j < d; ++j)
      N[size_t(t)][size_t(j)] = (input->value.at({0, t, j}) - mean) / std::sqrt(var + 1e-5) *
                                    W("ln_gamma").at({j}) +
                                W("ln_beta").at({j});
  }
  auto project = [&](const char* w, int width, int t, int j) {
    double acc = 0;
    for (int i = 0; i < d; ++i) acc += N[size_t(t)][size_t(i)] * W(w).at({i, j});
    (void)width;
    return acc;
  };
  std::vector<std::vector<double>> U(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(e)));
  std::vector<std::vector<double>> V(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(e)));
  std::vector<std::vector<double>> Q(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(s)));
  std::vector<std::vector<double>> K(static_cast<size_t>(T), std::vector<double>(static_cast<size_t>(s)));
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < e; ++j) {
      const double pu = project("w_u", e, t, j);
      U[size_t(t)][size_t(j)] = pu * sigmoid(pu);
      const double pv = project("w_v", e, t, j);
      V[size_t(t)][size_t(j)] = pv * sigmoid(pv);
    }
    for (int j = 0; j < s; ++j) {
      const double pz = project("w_z", s, t, j);
      const double z = pz * sigmoid(pz);
      Q[size_t(t)][size_t(j)] = z * W("q_scale").at({j}) + W("q_offset").at({j});
      K[size_t(t)][size_t(j)] = z * W("k_scale").at({j}) + W("k_offset").at({j});
    }
  }
  for (int t = 0; t < T; ++t) {
    std::vector<double> out(size_t(d), 0.0);
    std::vector<double> av(size_t(e), 0.0);
    for (int t2 = 0; t2 < T; ++t2) {
      double score = 0;
      for (int j = 0; j < s; ++j) score += Q[size_t(t)][size_t(j)] * K[size_t(t2)][size_t(j)];
      score /= std::sqrt(double(s));
      const double a = score > 0 ? score * score / T : 0.0;
      for (int j = 0; j < e; ++j) av[size_t(j)] += a * V[size_t(t2)][size_t(j)];
    }
    for (int j = 0; j < d; ++j) {
      double acc = 0;
      for (int i = 0; i < e; ++i) acc += U[size_t(t)][size_t(i)] * av[size_t(i)] * W("w_o").at({i, j});
      out[size_t(j)] = input->value.at({0, t, j}) + acc;
    }
    for (int j = 0; j < d; ++j) EXPECT_NEAR(got->value.at({0, t, j}), out[size_t(j)], 1e-9);
  }
}

TEST(Combiner, FlattenedLengths) {
  ModelConfig cfg = tiny_config();
  cfg.trace_length = 4096;
  cfg.patch_size = 64;  // T = 64
  cfg.model_dim = 64;
  cfg.merge_filter_1 = 0;
  cfg.merge_filter_2 = 0;
  EXPECT_EQ(trunk_length(cfg), 64 * 3 * 64);  // 3dT
  cfg.merge_filter_1 = 16;
  cfg.merge_filter_2 = 8;
  EXPECT_EQ(trunk_length(cfg), 8 * 15);  // 8 * floor((floor((64-3)/2)+1-3)/2+1)
}

TEST(ModelForward, HeadOutputsAreDistributions) {
  ModelConfig cfg = tiny_config();
  auto params = init_params<float>(cfg, 4);
  Rng rng(8);
  auto traces = random_traces<float>(3, cfg.trace_length, 12);
  auto labels = random_labels(cfg, 3, 13);
  auto fwd = model_forward<float>(cfg, params, traces, true, rng, &labels);
  for (const auto& [head, var] : fwd.probs) {
    for (int i = 0; i < 3; ++i) {
      double sum = 0;
      for (int c = 0; c < 256; ++c) {
        const double p = var->value.at({i, c});
        EXPECT_GE(p, 0.0);
        sum += p;
      }
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
  EXPECT_GT(fwd.total_loss->value.data[0], 0.0);
}

TEST(ModelForward, EvalIsDeterministic) {
  ModelConfig cfg = tiny_config();
  auto params = init_params<float>(cfg, 4);
  auto traces = random_traces<float>(2, cfg.trace_length, 12);
  Rng r1(1), r2(999);  // different rngs must not matter in eval mode
  auto a = model_forward<float>(cfg, params, traces, false, r1);
  auto b = model_forward<float>(cfg, params, traces, false, r2);
  for (const auto& [head, var] : a.probs)
    EXPECT_EQ(var->value.data, b.probs.at(head)->value.data);
}

TEST(ModelForward, DeclarationOrderIrrelevant) {
  ModelConfig cfg = tiny_config();
  ModelConfig permuted = cfg;
  std::swap(permuted.heads[0], permuted.heads[2]);  // k first, km last
  auto p1 = init_params<float>(cfg, 21);
  auto p2 = init_params<float>(permuted, 21);
  ASSERT_EQ(p1.count(), p2.count());
  for (const auto& [name, var] : p1.by_name)
    EXPECT_EQ(var->value.data, p2.at(name)->value.data) << name;
  auto traces = random_traces<float>(2, cfg.trace_length, 3);
  Rng r1(5), r2(5);
  auto a = model_forward<float>(cfg, p1, traces, false, r1);
  auto b = model_forward<float>(permuted, p2, traces, false, r2);
  for (const auto& [head, var] : a.probs)
    EXPECT_EQ(var->value.data, b.probs.at(head)->value.data);
}

TEST(ModelForward, RelationalHeadSeesDependencies) {
  // Dependency head outputs evaluate before the k head: zeroing the k head's
  // first dense weight rows that read the trunk, keeping only dependency
  // inputs, still produces a valid distribution (structure smoke test), and
  // cyclic or unknown dependencies are rejected at validation.
  ModelConfig cfg = tiny_config();
  cfg.heads[2].depends_on = {"km0", "r0"};
  EXPECT_NO_THROW(validate_config(cfg));
  cfg.heads[0].depends_on = {"k0"};  // km0 -> k0 -> km0 cycle
  EXPECT_THROW(validate_config(cfg), CyclicDag);
  cfg = tiny_config();
  cfg.heads[2].depends_on = {"nope"};
  EXPECT_THROW(validate_config(cfg), MissingDependency);
}

TEST(ModelForward, MissingLabelRejected) {
  ModelConfig cfg = tiny_config();
  auto params = init_params<float>(cfg, 4);
  auto traces = random_traces<float>(2, cfg.trace_length, 3);
  Rng rng(1);
  std::map<std::string, std::vector<uint8_t>> labels;  // empty
  EXPECT_THROW(model_forward<float>(cfg, params, traces, true, rng, &labels), MissingLabel);
}

TEST(ModelForward, StopGradIsolatesDependencyHeads) {
  // Loss only on the k head (dep weights 0) with stop_grad_deps and
  // use_trunk=false: dependency head parameters must get exactly zero grad.
  ModelConfig cfg = tiny_config();
  cfg.heads[0].loss_weight = 0.0;
  cfg.heads[1].loss_weight = 0.0;
  cfg.heads[2].stop_grad_deps = true;
  cfg.heads[2].use_trunk = false;
  auto params = init_params<double>(cfg, 31);
  auto traces = random_traces<double>(3, cfg.trace_length, 17);
  Rng rng(2);
  auto labels = random_labels(cfg, 3, 5);
  auto fwd = model_forward<double>(cfg, params, traces, true, rng, &labels);
  ad::backward(fwd.total_loss);
  for (const auto& [name, var] : params.by_name) {
    const bool dep_head = name.rfind("head.km0.", 0) == 0 || name.rfind("head.r0.", 0) == 0;
    const bool trunk_param = name.rfind("head.", 0) != 0;
    if (dep_head || trunk_param) {
      for (double g : var->grad.data) EXPECT_EQ(g, 0.0) << name;
    }
  }
  // k head itself must have nonzero gradients
  double total = 0;
  for (double g : params.at("head.k0.w_out")->grad.data) total += std::abs(g);
  EXPECT_GT(total, 0.0);
}

TEST(ModelForward, TinyConfigGradCheck) {
  ModelConfig cfg = tiny_config();
  auto params = init_params<double>(cfg, 77);
  auto traces = random_traces<double>(2, cfg.trace_length, 23);
  auto labels = random_labels(cfg, 2, 29);
  const auto wrt = params.all();
  const double err = ad::grad_check(
      [&] {
        Rng rng(123);  // frozen dropout mask per rebuild
        auto fwd = model_forward<double>(cfg, params, traces, true, rng, &labels);
        return fwd.total_loss;
      },
      wrt);
  EXPECT_LT(err, 1e-4);
}

TEST(Checkpoint, RoundTripBitIdentical) {
  namespace fs = std::filesystem;
  const auto path = fs::path(::testing::TempDir()) / "model-roundtrip.gpam";
  ModelConfig cfg = tiny_config();
  auto params = init_params<float>(cfg, 99);
  save_checkpoint(path.string(), cfg, params);

  GpamParams<float> loaded;
  const ModelConfig cfg2 = load_checkpoint(path.string(), loaded);
  EXPECT_EQ(config_to_json(cfg2).dump(), config_to_json(cfg).dump());
  for (const auto& [name, var] : params.by_name)
    EXPECT_EQ(var->value.data, loaded.at(name)->value.data) << name;

  // forward agreement and write-again byte identity
  auto traces = random_traces<float>(2, cfg.trace_length, 3);
  Rng r1(0), r2(0);
  auto a = model_forward<float>(cfg, params, traces, false, r1);
  auto b = model_forward<float>(cfg2, loaded, traces, false, r2);
  for (const auto& [head, var] : a.probs)
    EXPECT_EQ(var->value.data, b.probs.at(head)->value.data);

  const auto path2 = fs::path(::testing::TempDir()) / "model-roundtrip2.gpam";
  save_checkpoint(path2.string(), cfg2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  EXPECT_EQ(s1.str(), s2.str());
}

TEST(Checkpoint, UnknownTensorRejected) {
  namespace fs = std::filesystem;
  const auto path = fs::path(::testing::TempDir()) / "model-unknown.gpam";
  ModelConfig cfg = tiny_config();
  auto params = init_params<float>(cfg, 1);
  // sneak in a tensor the config does not describe
  params.by_name["rogue"] = ad::leaf(ad::Tensor<float>({2, 2}), true, "rogue");
  save_checkpoint(path.string(), cfg, params);
  GpamParams<float> loaded;
  EXPECT_THROW(load_checkpoint(path.string(), loaded), ConfigError);
}

TEST(ConfigJson, MissingKeyNamed) {
  json j = config_to_json(tiny_config());
  j.erase("target_lr");
  try {
    config_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("target_lr"), std::string::npos);
  }
}

TEST(ConfigJson, RoundTrip) {
  const ModelConfig cfg = tiny_config();
  const ModelConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back).dump(), config_to_json(cfg).dump());
}
