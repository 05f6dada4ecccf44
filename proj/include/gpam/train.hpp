#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "gpam/autodiff.hpp"
#include "gpam/dataset.hpp"
#include "gpam/errors.hpp"
#include "gpam/metrics.hpp"
#include "gpam/model.hpp"
#include "gpam/rng.hpp"

namespace gpam::train {

// Linear warmup from target/100 over the first 5% of steps, then cosine decay
// to zero. Continuous at the junction.
inline double lr_warmup(int64_t step, int64_t warmup_steps, double target_lr) {
  return target_lr * (0.01 + 0.99 * double(step) / double(warmup_steps));
}

inline double lr_cosine(int64_t step, int64_t warmup_steps, int64_t total_steps,
                        double target_lr) {
  const int64_t span = std::max<int64_t>(1, total_steps - warmup_steps);
  return target_lr * 0.5 * (1.0 + std::cos(M_PI * double(step - warmup_steps) / double(span)));
}

inline int64_t warmup_steps_for(int64_t total_steps) {
  return std::max<int64_t>(1, llround(0.05 * double(total_steps)));
}

inline double lr_at(int64_t step, int64_t total_steps, double target_lr) {
  if (step < 0 || step >= total_steps) throw ConfigError("lr_at: step out of range");
  const int64_t w = warmup_steps_for(total_steps);
  if (step < w) return lr_warmup(step, w, target_lr);
  return lr_cosine(step, w, total_steps, target_lr);
}

// ---------------------------------------------------------------------------
// Batch assembly.

template <class T>
inline ad::Var<T> batch_traces(const std::vector<const sim::TraceExample*>& batch,
                               int trace_length) {
  ad::Tensor<T> t({int(batch.size()), trace_length});
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& trace = batch[i]->trace;
    if (int(trace.size()) != trace_length) throw ShapeMismatch("trace length mismatch");
    for (int j = 0; j < trace_length; ++j)
      t.data[i * size_t(trace_length) + size_t(j)] = T(trace[size_t(j)]);
  }
  return ad::leaf(std::move(t), false);
}

inline uint8_t label_for(const sim::TraceExample& ex, const model::HeadSpec& h) {
  const auto it = ex.labels.find(h.attack_point);
  if (it == ex.labels.end())
    throw MissingLabel("example has no label for attack point " + h.attack_point);
  if (h.byte_index < 0 || size_t(h.byte_index) >= it->second.size())
    throw MissingLabel("byte index out of range for " + h.attack_point);
  return it->second[size_t(h.byte_index)];
}

inline std::map<std::string, std::vector<uint8_t>> batch_labels(
    const std::vector<const sim::TraceExample*>& batch,
    const std::vector<model::HeadSpec>& heads) {
  std::map<std::string, std::vector<uint8_t>> out;
  for (const auto& h : heads) {
    auto& v = out[h.name];
    v.reserve(batch.size());
    for (const auto* ex : batch) v.push_back(label_for(*ex, h));
  }
  return out;
}

// Eval-mode predictions over a set of examples.
template <class T>
inline metrics::PredictionSet evaluate(const model::ModelConfig& cfg,
                                       model::GpamParams<T>& params,
                                       const std::vector<sim::TraceExample>& examples,
                                       std::map<std::string, double>* loss_out = nullptr) {
  metrics::PredictionSet preds;
  Rng rng(0);  // eval mode draws nothing
  std::map<std::string, double> loss_sum;
  int64_t batches = 0;
  for (size_t base = 0; base < examples.size(); base += size_t(cfg.batch_size)) {
    std::vector<const sim::TraceExample*> batch;
    for (size_t i = base; i < std::min(examples.size(), base + size_t(cfg.batch_size)); ++i)
      batch.push_back(&examples[i]);
    const auto labels = batch_labels(batch, cfg.heads);
    auto traces = batch_traces<T>(batch, cfg.trace_length);
    auto fwd = model::model_forward<T>(cfg, params, traces, false, rng, &labels);
    ++batches;
    for (const auto& [head, loss] : fwd.head_loss) loss_sum[head] += loss;
    for (size_t i = 0; i < batch.size(); ++i) {
      std::map<std::string, metrics::ProbVector> probs;
      std::map<std::string, uint8_t> labs;
      for (const auto& [head, var] : fwd.probs) {
        metrics::ProbVector p(256);
        for (int c = 0; c < 256; ++c) p[size_t(c)] = double(var->value.at({int(i), c}));
        probs[head] = std::move(p);
        labs[head] = labels.at(head)[i];
      }
      preds.probs.push_back(std::move(probs));
      preds.labels.push_back(std::move(labs));
    }
  }
  if (loss_out) {
    for (auto& [head, sum] : loss_sum) (*loss_out)[head] = sum / double(batches);
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochStats {
  int epoch = 0;
  double lr_last = 0;
  std::map<std::string, double> train_loss, train_accuracy;
  std::map<std::string, double> test_loss, test_accuracy;
};

struct TrainRun {
  model::ModelConfig config;
  uint64_t seed = 0;
  int64_t train_examples_used = 0;
  std::vector<EpochStats> history;
};

// Runs epochs x steps_per_epoch Adam steps over shuffled train batches,
// recording train/test metrics per epoch. Deterministic per seed.
template <class T>
inline TrainRun train_model(const model::ModelConfig& cfg, model::GpamParams<T>& params,
                            const std::vector<sim::TraceExample>& train_split,
                            const std::vector<sim::TraceExample>& test_split,
                            uint64_t seed, double fraction = 1.0,
                            std::ostream* log = nullptr) {
  model::validate_config(cfg);
  if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("fraction must be in (0, 1]");
  const int64_t usable = std::max<int64_t>(1, int64_t(fraction * double(train_split.size())));
  if (usable > int64_t(train_split.size())) throw ConfigError("not enough train examples");

  TrainRun run;
  run.config = cfg;
  run.seed = seed;
  run.train_examples_used = usable;

  Rng rng(mix_seed(seed, 0x7261696e));  // shuffling + dropout stream
  std::vector<int64_t> pool(size_t(usable));
  for (int64_t i = 0; i < usable; ++i) pool[size_t(i)] = i;
  rng.shuffle(pool);
  size_t cursor = 0;

  ad::AdamState<T> adam;
  const auto param_list = params.all();
  const int64_t total_steps = int64_t(cfg.epochs) * cfg.steps_per_epoch;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    std::map<std::string, double> loss_sum;
    std::map<std::string, int64_t> correct;
    int64_t seen = 0;
    for (int s = 0; s < cfg.steps_per_epoch; ++s, ++step) {
      std::vector<const sim::TraceExample*> batch;
      for (int b = 0; b < cfg.batch_size; ++b) {
        if (cursor >= pool.size()) {
          rng.shuffle(pool);
          cursor = 0;
        }
        batch.push_back(&train_split[size_t(pool[cursor++])]);
      }
      const auto labels = batch_labels(batch, cfg.heads);
      auto traces = batch_traces<T>(batch, cfg.trace_length);
      auto fwd = model::model_forward<T>(cfg, params, traces, true, rng, &labels);
      ad::backward(fwd.total_loss);
      const double lr = lr_at(step, total_steps, cfg.target_lr);
      stats.lr_last = lr;
      ad::adam_step(param_list, adam, lr);

      for (const auto& [head, loss] : fwd.head_loss) loss_sum[head] += loss;
      for (const auto& [head, var] : fwd.probs) {
        const auto& labs = labels.at(head);
        for (size_t i = 0; i < labs.size(); ++i) {
          int argmax = 0;
          for (int c = 1; c < 256; ++c)
            if (var->value.at({int(i), c}) > var->value.at({int(i), argmax})) argmax = c;
          if (argmax == labs[i]) ++correct[head];
        }
      }
      seen += int64_t(batch.size());
    }
    for (const auto& [head, sum] : loss_sum) {
      stats.train_loss[head] = sum / double(cfg.steps_per_epoch);
      stats.train_accuracy[head] = double(correct[head]) / double(seen);
    }
    if (!test_split.empty()) {
      std::map<std::string, double> test_loss;
      const auto preds = evaluate(cfg, params, test_split, &test_loss);
      stats.test_loss = test_loss;
      for (const auto& h : cfg.heads) {
        const auto summary = metrics::metrics_summary(preds, h.name);
        stats.test_accuracy[h.name] = summary.accuracy;
      }
    }
    run.history.push_back(stats);
    if (log) {
      (*log) << "epoch " << epoch << " lr " << stats.lr_last;
      for (const auto& h : cfg.heads) {
        (*log) << "  " << h.name << " loss " << stats.train_loss[h.name] << " acc "
               << stats.train_accuracy[h.name];
        if (!test_split.empty()) (*log) << " test_acc " << stats.test_accuracy[h.name];
      }
      (*log) << "\n";
    }
  }
  return run;
}

}  // namespace gpam::train
