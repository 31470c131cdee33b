#pragma once

#include <cstdint>

#include "eeseg/net.hpp"
#include "eeseg/tensor.hpp"

namespace eeseg {

enum class PathTaken { Early, Full };

struct ExitDecision {
  double confidence = 0.0;  // C_M in [0, 1]
  double threshold = 0.0;   // T in [0, 1]
  PathTaken path = PathTaken::Full;
  std::int64_t macs_spent = 0;
};

struct Prediction {
  LabelMap class_map;
  ExitDecision decision;
  Tensor early_logits;  // retained for analysis
};

// Mean over pixels of the maximum per-pixel softmax probability.
double confidence(const Tensor& logits);

// Early iff c >= t; the boundary exits early. Throws ConfigError for t
// outside [0, 1].
PathTaken decide(double c, double t);

// Confidence-gated inference. The encoder and EE branch always run; if the
// gate declines, the deep path resumes from the cached trunk activations
// (blocks 1-2 are never recomputed). Thresholds only route: logits are
// identical across all t.
Prediction infer(const ParameterSet& params, const ModelConfig& cfg, const Tensor& input, double t,
                 const GraphHooks* hooks = nullptr);

}  // namespace eeseg
