#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eeseg/errors.hpp"
#include "eeseg/net.hpp"
#include "eeseg/scenegen.hpp"
#include "eeseg/tensor.hpp"

namespace eeseg {

struct Hyperparams {
  int epochs = 25;
  double lr0 = 3e-4;
  double decay = 0.98;  // per-epoch multiplicative factor
  int batch_size = 1;
  double momentum = 0.97;  // heavy-ball; plain SGD cannot reach useful IoU at this lr in 25 epochs
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("hyperparams: epochs must be >= 1");
    if (!(lr0 > 0)) throw ConfigError("hyperparams: lr0 must be positive");
    if (!(decay > 0) || decay > 1) throw ConfigError("hyperparams: decay must be in (0, 1]");
    if (batch_size < 1) throw ConfigError("hyperparams: batch_size must be >= 1");
    if (momentum < 0 || momentum >= 1) throw ConfigError("hyperparams: momentum must be in [0, 1)");
  }
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_iou_full = 0.0;
  double test_iou_early = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  bool diverged = false;
};

inline double lr_schedule(const Hyperparams& h, int epoch) {
  if (epoch < 0 || epoch >= h.epochs) throw ShapeError("lr_schedule: epoch out of range");
  return h.lr0 * std::pow(h.decay, epoch);
}

// Best epoch = argmax of full-path test IoU, ties to the earliest epoch.
inline int best_epoch(const std::vector<EpochStats>& stats) {
  int best = -1;
  double best_iou = -1.0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (stats[i].test_iou_full > best_iou) {
      best_iou = stats[i].test_iou_full;
      best = static_cast<int>(i);
    }
  }
  return best;
}

template <typename S>
struct DualLoss {
  S loss_early = S(0);
  S loss_full = S(0);
  S combined = S(0);          // (loss_early + loss_full) / 2
  ParameterSetT<S> grads;     // gradient of combined
};

// One dual-path forward and backward: both heads see the encoder exactly
// once, and the encoder gradient is the half-weighted sum of both paths'
// contributions.
template <typename S>
DualLoss<S> dual_loss_and_grads(const ParameterSetT<S>& params, const ModelConfig& cfg, const TensorT<S>& input,
                                const LabelMap& labels) {
  DualTraceT<S> trace = dual_forward(params, cfg, input);
  CeResult<S> early = ce_loss(trace.logits_early, labels);
  CeResult<S> full = ce_loss(trace.logits_full, labels);
  early.grad.array() *= S(0.5);
  full.grad.array() *= S(0.5);
  DualLoss<S> out;
  out.loss_early = early.loss;
  out.loss_full = full.loss;
  out.combined = (early.loss + full.loss) / S(2);
  out.grads = dual_backward(params, cfg, trace, early.grad, full.grad);
  return out;
}

// One SGD step on a batch: loss is the batch mean of per-scene combined
// losses; the returned value is the loss before the update. Throws
// DivergenceError on a non-finite loss (parameters untouched).
double train_step(ParameterSet& params, const ModelConfig& cfg, const std::vector<const Sample*>& batch, double lr,
                  double momentum = 0.0, ParameterSet* velocity = nullptr);

// Full training loop: seeded shuffling, per-epoch decay, dual-path test IoU
// after every epoch, checkpoint of the best full-path epoch. Deterministic in
// (seed, dataset).
std::pair<ParameterSet, TrainHistory> fit(const ModelConfig& cfg, const std::vector<Sample>& train,
                                          const std::vector<Sample>& test, const Hyperparams& h);

// CSV: epoch, lr, train_loss, test_iou_full, test_iou_early.
void write_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace eeseg
