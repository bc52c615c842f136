#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "airway/model.hpp"

namespace airway::nn {

struct TrainConfig {
  double learning_rate = 5e-4;
  int epochs = 600;
  double label_smoothing = 0.01;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  std::string precision = "f64";
  double w_stage1 = 1, w_stage2 = 1;
  double w_lob = 1, w_seg = 1, w_sub = 1;
  double w_subtree = 1, w_anomaly = 1;
  Variant variant;

  template <typename S>
  LossWeights<S> weights() const {
    LossWeights<S> w;
    w.stage1 = static_cast<S>(w_stage1);
    w.stage2 = static_cast<S>(w_stage2);
    w.lob = static_cast<S>(w_lob);
    w.seg = static_cast<S>(w_seg);
    w.sub = static_cast<S>(w_sub);
    w.subtree = static_cast<S>(w_subtree);
    w.anomaly = static_cast<S>(w_anomaly);
    return w;
  }
};

// Adam with bias correction; slots are created lazily per parameter so
// ablation variants only carry state for the parameters they actually use.
template <typename S>
class AdamOptimizer {
 public:
  struct Slot {
    Matrix<S> m, v;
  };

  explicit AdamOptimizer(ModelState<S>& model, S lr)
      : lr_(lr) {
    model.for_each([&](const std::string& name, Matrix<S>& m) {
      targets_.emplace(name, &m);
    });
  }

  void apply(const Tape<S>& tape) {
    ++step_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(step_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(step_));
    for (const auto& entry : tape.params()) {
      auto target_it = targets_.find(entry.name);
      if (target_it == targets_.end())
        throw ShapeMismatchError("optimizer: unknown parameter " + entry.name);
      Matrix<S>& theta = *target_it->second;
      const Matrix<S>& g = tape.grad(ad::Var<S>{entry.node});
      Slot& slot = slots_
                       .try_emplace(entry.name,
                                    Slot{Matrix<S>::Zero(g.rows(), g.cols()),
                                         Matrix<S>::Zero(g.rows(), g.cols())})
                       .first->second;
      slot.m = beta1_ * slot.m + (S(1) - beta1_) * g;
      slot.v = beta2_ * slot.v + (S(1) - beta2_) * g.cwiseProduct(g);
      theta.array() -= lr_ * (slot.m.array() / bc1) /
                       ((slot.v.array() / bc2).sqrt() + eps_);
    }
  }

  long step_count() const { return step_; }
  const std::unordered_map<std::string, Slot>& slots() const { return slots_; }

  void restore(long step, std::unordered_map<std::string, Slot> slots) {
    step_ = step;
    slots_ = std::move(slots);
  }

 private:
  S lr_;
  S beta1_ = S(0.9);
  S beta2_ = S(0.999);
  S eps_ = S(1e-8);
  long step_ = 0;
  std::unordered_map<std::string, Matrix<S>*> targets_;
  std::unordered_map<std::string, Slot> slots_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double mean_ce_sub = 0;
  double mean_bce_subtree = 0;
  double mean_bce_anomaly = 0;
};

// One optimizer step per tree (node counts vary, so no cross-tree batching);
// epochs iterate a seeded shuffle of the training set. Single-threaded and
// bit-deterministic for a fixed (seed, config, data).
template <typename S>
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const Nomenclature& nom,
          const TrainConfig& train_cfg)
      : cfg_(train_cfg),
        model_(ModelState<S>::init(model_cfg, nom, train_cfg.seed)),
        optimizer_(model_, static_cast<S>(train_cfg.learning_rate)) {}

  double step(const TreeContext<S>& ctx, LossBreakdown* breakdown = nullptr) {
    Tape<S> tape;
    const ForwardVars<S> fwd = forward(tape, ctx, model_, cfg_.variant);
    Var<S> total = loss(tape, fwd, ctx, cfg_.template weights<S>(),
                        static_cast<S>(cfg_.label_smoothing), breakdown);
    const double value = static_cast<double>(tape.val(total)(0, 0));
    if (!std::isfinite(value))
      throw NonFiniteError("training loss is non-finite");
    tape.backward(total);
    optimizer_.apply(tape);
    return value;
  }

  /// Runs all epochs; `on_epoch(epoch_1_based)` fires after each epoch.
  void fit(const std::vector<TreeContext<S>>& contexts,
           const std::function<void(int)>& on_epoch = {}) {
    std::vector<int> order(contexts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      Rng rng(cfg_.seed, static_cast<std::uint64_t>(epoch), "shuffle");
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1],
                  order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
      EpochStats stats;
      stats.epoch = epoch;
      for (int idx : order) {
        LossBreakdown terms;
        stats.mean_loss += step(contexts[idx], &terms);
        stats.mean_ce_sub += terms.ce_sub[0] + terms.ce_sub[1];
        stats.mean_bce_subtree += terms.bce_subtree[0] + terms.bce_subtree[1];
        stats.mean_bce_anomaly += terms.bce_anomaly[0] + terms.bce_anomaly[1];
      }
      const double inv = contexts.empty() ? 0.0 : 1.0 / contexts.size();
      stats.mean_loss *= inv;
      stats.mean_ce_sub *= inv;
      stats.mean_bce_subtree *= inv;
      stats.mean_bce_anomaly *= inv;
      history_.push_back(stats);
      if (on_epoch) on_epoch(epoch);
    }
  }

  ModelState<S>& model() { return model_; }
  const AdamOptimizer<S>& optimizer() const { return optimizer_; }
  AdamOptimizer<S>& optimizer() { return optimizer_; }
  const std::vector<EpochStats>& history() const { return history_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  ModelState<S> model_;
  AdamOptimizer<S> optimizer_;
  std::vector<EpochStats> history_;
};

}  // namespace airway::nn
