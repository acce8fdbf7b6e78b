#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "npcl/augment.hpp"
#include "npcl/batcher.hpp"
#include "npcl/error.hpp"
#include "npcl/losses.hpp"
#include "npcl/model.hpp"
#include "npcl/random.hpp"

namespace npcl {

struct TrainConfig {
  double base_lr = 0.2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 30;
  int warmup_epochs = 10;
  // Patches per view side: C * (N + 1) with C = floor(budget / (N + 1)).
  int view_budget = 64;
  int nearby = 4;
  double tau = 0.1;
  LossVariant variant = LossVariant::dcl;
  int checkpoint_every = 5;
  std::uint64_t seed = 0;

  int centers() const { return view_budget / (nearby + 1); }
  LossConfig loss() const { return {tau, variant}; }

  void validate() const {
    using detail::require;
    require<config_error>(base_lr > 0, "trainer.base_lr must be positive");
    require<config_error>(momentum >= 0 && momentum < 1, "trainer.momentum must be in [0, 1)");
    require<config_error>(weight_decay >= 0, "trainer.weight_decay must be non-negative");
    require<config_error>(epochs >= 1, "trainer.epochs must be >= 1");
    require<config_error>(warmup_epochs >= 0 && warmup_epochs < epochs, "trainer.warmup_epochs must be in [0, epochs)");
    require<config_error>(nearby >= 0 && nearby <= kMaxNearby, "trainer.nearby must be in [0, 8]");
    require<config_error>(centers() >= 2, "trainer.view_budget leaves fewer than 2 centers per batch");
    require<config_error>(checkpoint_every >= 1, "trainer.checkpoint_every must be >= 1");
    loss().validate();
  }

  // Published full-scale settings.
  static TrainConfig paper(int nearby) {
    TrainConfig c;
    c.epochs = 400;
    c.view_budget = 512;
    c.nearby = nearby;
    return c;
  }
};

// base_lr * BatchSize * (N + 1) / 256, BatchSize being the center count.
inline double scaled_lr(double base_lr, double centers, int nearby) {
  return base_lr * centers * (nearby + 1) / 256.0;
}

// Uses the nominal BatchSize = budget / (N + 1) before flooring, so every N
// shares one peak rate for a given budget.
inline double scaled_lr(const TrainConfig& cfg) {
  return scaled_lr(cfg.base_lr, static_cast<double>(cfg.view_budget) / (cfg.nearby + 1), cfg.nearby);
}

// Linear warmup from scaled_lr / warmup, then cosine decay towards 0.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  detail::require<config_error>(epoch >= 0 && epoch < cfg.epochs,
                                "lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                    std::to_string(cfg.epochs) + ")");
  const double peak = scaled_lr(cfg);
  if (epoch < cfg.warmup_epochs) return peak * (epoch + 1) / cfg.warmup_epochs;
  const double t = static_cast<double>(epoch - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> velocity;
  long long step = 0;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
// A non-finite gradient aborts the step before anything is modified.
template <typename T>
void sgd_step(std::span<Param<T>> params, OptimizerState<T>& state, double lr, const SgdConfig& cfg) {
  for (const auto& p : params)
    for (std::size_t i = 0; i < p.grad.size(); ++i)
      detail::require<numeric_error>(std::isfinite(static_cast<double>(p.grad[i])),
                                     "non-finite gradient in " + p.name + " at index " + std::to_string(i) +
                                         " (step " + std::to_string(state.step) + ")");
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.value.size(), T{});
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& v = state.velocity[k];
    detail::require<data_error>(v.size() == p.value.size() && p.grad.size() == p.value.size(),
                                "sgd_step: shape mismatch for " + p.name);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<T>(cfg.momentum * v[i] + (p.grad[i] + cfg.weight_decay * p.value[i]));
      p.value[i] = static_cast<T>(p.value[i] - lr * v[i]);
    }
  }
  ++state.step;
}

struct TraceRow {
  int epoch = 0;
  long long step = 0;
  double lr = 0;
  double loss = 0;

  bool operator==(const TraceRow&) const = default;
};

struct PretrainHooks {
  // Called after each epoch; `last` marks the final epoch.
  std::function<void(int epoch, bool last, const Model<float>&)> on_epoch_end;
  std::function<void(const TraceRow&)> on_step;
};

// Self-supervised pretraining. Each epoch shuffles the groups, cuts them into
// batches of C groups (dropping the remainder), and per batch runs
// assemble -> encode -> project -> loss -> backward -> SGD at lr_at(epoch).
inline std::vector<TraceRow> pretrain(std::span<const GroupImages> groups, Model<float>& model,
                                      const TrainConfig& cfg, const AugmentPolicy& policy,
                                      const EvalTransform& normalization, const PretrainHooks& hooks = {}) {
  cfg.validate();
  policy.validate();
  for (const auto& g : groups)
    detail::require<data_error>(static_cast<int>(g.nearby.size()) == cfg.nearby,
                                "pretrain: data has groups with " + std::to_string(g.nearby.size()) +
                                    " nearby patches but trainer.nearby = " + std::to_string(cfg.nearby));
  const int c = cfg.centers();
  const auto steps_per_epoch = static_cast<int>(groups.size()) / c;
  detail::require<data_error>(steps_per_epoch >= 1, "pretrain: fewer groups (" + std::to_string(groups.size()) +
                                                        ") than centers per batch (" + std::to_string(c) + ")");
  const LossConfig loss_cfg = cfg.loss();
  const SgdConfig sgd{cfg.momentum, cfg.weight_decay};
  OptimizerState<float> state;
  std::vector<TraceRow> trace;
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Model<float>::Cache cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng shuffler(derive_seed(cfg.seed, {0x5eed, static_cast<std::uint64_t>(epoch)}));
    shuffler.shuffle(order);
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<const GroupImages*> batch_groups;
      for (int k = 0; k < c; ++k) batch_groups.push_back(&groups[order[static_cast<std::size_t>(step * c + k)]]);
      const auto global_step = static_cast<long long>(epoch) * steps_per_epoch + step;
      auto batch = assemble(batch_groups, policy, derive_seed(cfg.seed, {0xa09, static_cast<std::uint64_t>(global_step)}));
      for (auto& v : batch.views) normalize(v, normalization.mean, normalization.stddev);

      model.zero_grad();
      const Matrix<float> z = model.forward(batch.views, cache);
      const auto result = contrastive_loss_with_grad(EmbeddingSet<float>{z, batch.group}, loss_cfg);
      model.backward(cache, result.grad);
      sgd_step<float>(model.params(), state, lr, sgd);

      TraceRow row{epoch, global_step, lr, static_cast<double>(result.value)};
      trace.push_back(row);
      if (hooks.on_step) hooks.on_step(row);
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, epoch + 1 == cfg.epochs, model);
  }
  return trace;
}

}  // namespace npcl
