#include "eeseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "eeseg/evalbench.hpp"
#include "eeseg/parallel.hpp"
#include "eeseg/rng.hpp"

namespace eeseg {

double train_step(ParameterSet& params, const ModelConfig& cfg, const std::vector<const Sample*>& batch, double lr,
                  double momentum, ParameterSet* velocity) {
  if (batch.empty()) throw ShapeError("train_step: empty batch");

  // Per-scene forward/backward in parallel; the reduction below runs in
  // scene order so updates are bit-deterministic.
  std::vector<DualLoss<float>> results(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    results[i] = dual_loss_and_grads<float>(params, cfg, batch[i]->input, batch[i]->labels);
  });

  const float inv = 1.0f / static_cast<float>(batch.size());
  double loss = 0.0;
  for (const auto& r : results) loss += static_cast<double>(r.combined);
  loss *= inv;
  if (!std::isfinite(loss)) throw DivergenceError("train_step: non-finite loss");

  ParameterSet& grads = results[0].grads;
  for (std::size_t i = 1; i < results.size(); ++i) {
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
      grads.layers[l].kernel.array() += results[i].grads.layers[l].kernel.array();
      grads.layers[l].bias += results[i].grads.layers[l].bias;
    }
  }

  const float step = static_cast<float>(lr);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& gk = grads.layers[l].kernel;
    auto& gb = grads.layers[l].bias;
    gk.array() *= inv;
    gb *= inv;
    if (momentum > 0.0 && velocity) {
      auto& vk = velocity->layers[l].kernel;
      auto& vb = velocity->layers[l].bias;
      vk.array() = static_cast<float>(momentum) * vk.array() + gk.array();
      vb = static_cast<float>(momentum) * vb + gb;
      params.layers[l].kernel.array() -= step * vk.array();
      params.layers[l].bias -= step * vb;
    } else {
      params.layers[l].kernel.array() -= step * gk.array();
      params.layers[l].bias -= step * gb;
    }
  }
  return loss;
}

namespace {

// Dual-path test evaluation; both heads come from one trunk pass per scene.
std::pair<double, double> test_iou(const ParameterSet& params, const ModelConfig& cfg,
                                   const std::vector<Sample>& test) {
  std::vector<double> full(test.size()), early(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    ForwardOut<float> out = forward(params, cfg, test[i].input, PathKind::Dual);
    full[i] = mean_iou(argmax_map(*out.full), test[i].labels, cfg.classes);
    early[i] = mean_iou(argmax_map(*out.early), test[i].labels, cfg.classes);
  });
  const double n = static_cast<double>(test.size());
  const double f = std::accumulate(full.begin(), full.end(), 0.0) / n;
  const double e = std::accumulate(early.begin(), early.end(), 0.0) / n;
  return {f, e};
}

}  // namespace

std::pair<ParameterSet, TrainHistory> fit(const ModelConfig& cfg, const std::vector<Sample>& train,
                                          const std::vector<Sample>& test, const Hyperparams& h) {
  cfg.validate();
  h.validate();
  if (train.empty() || test.empty()) throw ConfigError("fit: need at least one train and one test scene");

  ParameterSet params = build<float>(cfg, h.seed);
  ParameterSet velocity = h.momentum > 0.0 ? zeros_like(params) : ParameterSet{};
  Rng shuffle_rng(splitmix64(h.seed, 1));

  TrainHistory history;
  ParameterSet best_params = params;
  double best_iou = -1.0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < h.epochs; ++epoch) {
    const double lr = lr_schedule(h, epoch);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    bool diverged = false;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(h.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(h.batch_size));
      std::vector<const Sample*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
      try {
        const double loss = train_step(params, cfg, batch, lr, h.momentum,
                                       h.momentum > 0.0 ? &velocity : nullptr);
        loss_sum += loss * static_cast<double>(batch.size());
        seen += batch.size();
      } catch (const DivergenceError&) {
        diverged = true;
        break;
      }
    }

    const auto [iou_full, iou_early] = test_iou(params, cfg, test);
    history.epochs.push_back({epoch, lr, seen ? loss_sum / static_cast<double>(seen) : 0.0, iou_full, iou_early});
    if (iou_full > best_iou) {
      best_iou = iou_full;
      best_params = params;
      history.best_epoch = epoch;
    }
    if (diverged) {
      history.diverged = true;
      break;
    }
  }
  return {std::move(best_params), std::move(history)};
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("history: cannot open for writing: " + path);
  f << "epoch, lr, train_loss, test_iou_full, test_iou_early\n";
  char buf[160];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof(buf), "%d, %.8g, %.6f, %.6f, %.6f\n", e.epoch, e.lr, e.train_loss, e.test_iou_full,
                  e.test_iou_early);
    f << buf;
  }
  if (!f) throw IoError("history: write failed: " + path);
}

}  // namespace eeseg
