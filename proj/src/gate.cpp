#include "eeseg/gate.hpp"

#include <algorithm>
#include <cmath>

#include "eeseg/errors.hpp"

namespace eeseg {

double confidence(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("confidence: logits must be rank 3 (C,H,W)");
  const int classes = logits.dim(0);
  const Eigen::Index hw = static_cast<Eigen::Index>(logits.dim(1)) * logits.dim(2);
  const float* z = logits.data();
  double acc = 0.0;
  for (Eigen::Index p = 0; p < hw; ++p) {
    float m = z[p];
    for (int c = 1; c < classes; ++c) m = std::max(m, z[c * hw + p]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(z[c * hw + p]) - m);
    acc += 1.0 / denom;  // max softmax prob = exp(m - m) / denom
  }
  return acc / static_cast<double>(hw);
}

PathTaken decide(double c, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("decide: threshold must be in [0, 1]");
  return c >= t ? PathTaken::Early : PathTaken::Full;
}

Prediction infer(const ParameterSet& params, const ModelConfig& cfg, const Tensor& input, double t,
                 const GraphHooks* hooks) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("infer: threshold must be in [0, 1]");
  TrunkT<float> trunk = run_trunk(params, cfg, input, hooks);
  Tensor early_logits = run_ee_branch(params, trunk, hooks);
  const double c = confidence(early_logits);

  Prediction pred;
  pred.decision.confidence = c;
  pred.decision.threshold = t;
  pred.decision.path = decide(c, t);
  if (pred.decision.path == PathTaken::Early) {
    pred.decision.macs_spent = mac_count(cfg, MacPath::EarlyPath);
    pred.class_map = argmax_map(early_logits);
  } else {
    pred.decision.macs_spent = mac_count(cfg, MacPath::FullPathWithEE);
    pred.class_map = argmax_map(run_deep_path(params, trunk, hooks));
  }
  pred.early_logits = std::move(early_logits);
  return pred;
}

}  // namespace eeseg
