#pragma once

#include <string>
#include <vector>

#include "eeseg/gate.hpp"
#include "eeseg/net.hpp"
#include "eeseg/tensor.hpp"

namespace eeseg {

// Post-training int8 scheme: symmetric per-tensor weight scales (zero-point
// 0, codes in [-127, 127]) and affine per-site activation ranges (uint8).
struct WeightScale {
  std::string name;
  float scale = 1.0f;
};

struct SiteRange {
  std::string name;
  float scale = 1.0f;
  int zero_point = 0;
};

struct QuantParams {
  std::vector<WeightScale> weights;  // one per layer, architecture order
  std::vector<SiteRange> sites;      // one per activation site, traversal order

  const WeightScale& weight(const std::string& name) const;
  const SiteRange& site(const std::string& name) const;
};

// Weight scale = max|w| / 127 per layer; activation ranges are running
// min/max observed at every site over dual-path forward passes of the
// calibration scenes. Deterministic.
QuantParams calibrate(const ParameterSet& params, const ModelConfig& cfg, const std::vector<Tensor>& calib_inputs);

// clamp(round(x/scale) + zp, lo, hi) then dequantize; round half away from
// zero. Signed uses [-127, 127] with zero_point 0, unsigned [0, 255].
Tensor fake_quant(const Tensor& t, float scale, int zero_point, bool is_signed);

// Same routing logic as gate::infer, with every kernel and activation site
// passed through fake_quant. Confidence comes from the fake-quantized EE
// logits (softmax itself stays in real arithmetic).
Prediction quantized_infer(const ParameterSet& params, const QuantParams& qp, const ModelConfig& cfg,
                           const Tensor& input, double t);

// Hooks implementing the fake-quantized forward; exposed so sweeps can reuse
// them with cached trunk evaluations.
GraphHooks quant_hooks(const QuantParams& qp);

// JSON sidecar: per-layer {name, w_scale}, per-site {name, scale, zero_point}.
void save_quant_json(const QuantParams& qp, const std::string& path);
QuantParams load_quant_json(const std::string& path);

}  // namespace eeseg
