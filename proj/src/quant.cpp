#include "eeseg/quant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "eeseg/errors.hpp"

namespace eeseg {

namespace {
constexpr float kScaleFloor = 1e-8f;
}

const WeightScale& QuantParams::weight(const std::string& name) const {
  for (const auto& w : weights)
    if (w.name == name) return w;
  throw ConfigError("quant: no weight scale for layer " + name);
}

const SiteRange& QuantParams::site(const std::string& name) const {
  for (const auto& s : sites)
    if (s.name == name) return s;
  throw ConfigError("quant: no range for site " + name);
}

Tensor fake_quant(const Tensor& t, float scale, int zero_point, bool is_signed) {
  if (!(scale > 0.0f)) throw ConfigError("fake_quant: scale must be positive");
  const float lo = is_signed ? -127.0f : 0.0f;
  const float hi = is_signed ? 127.0f : 255.0f;
  const float zp = static_cast<float>(zero_point);
  Tensor out(t.dims());
  const float* src = t.data();
  float* dst = out.data();
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const float q = std::clamp(std::round(src[i] / scale) + zp, lo, hi);
    dst[i] = (q - zp) * scale;
  }
  return out;
}

QuantParams calibrate(const ParameterSet& params, const ModelConfig& cfg, const std::vector<Tensor>& calib_inputs) {
  if (calib_inputs.empty()) throw ConfigError("calibrate: need at least one calibration scene");

  QuantParams qp;
  for (const auto& layer : params.layers) {
    const float amax = layer.kernel.array().abs().maxCoeff();
    qp.weights.push_back({layer.name, std::max(amax / 127.0f, kScaleFloor)});
  }

  // Running min/max per site; the site order is the dual-path traversal order
  // of the first pass.
  std::vector<std::string> order;
  std::map<std::string, std::pair<float, float>> ranges;
  GraphHooks hooks;
  hooks.site = [&](const std::string& name, const Tensor& value) {
    const float lo = value.array().minCoeff();
    const float hi = value.array().maxCoeff();
    auto it = ranges.find(name);
    if (it == ranges.end()) {
      order.push_back(name);
      ranges.emplace(name, std::make_pair(lo, hi));
    } else {
      it->second.first = std::min(it->second.first, lo);
      it->second.second = std::max(it->second.second, hi);
    }
    return value;
  };
  for (const auto& input : calib_inputs) forward(params, cfg, input, PathKind::Dual, &hooks);

  for (const auto& name : order) {
    const auto [lo, hi] = ranges.at(name);
    const float scale = std::max((hi - lo) / 255.0f, kScaleFloor);
    const int zp = std::clamp(static_cast<int>(std::lround(-lo / scale)), 0, 255);
    qp.sites.push_back({name, scale, zp});
  }
  return qp;
}

GraphHooks quant_hooks(const QuantParams& qp) {
  GraphHooks hooks;
  hooks.kernel = [&qp](const std::string& layer, const Tensor& kernel) {
    return fake_quant(kernel, qp.weight(layer).scale, 0, true);
  };
  hooks.site = [&qp](const std::string& site, const Tensor& value) {
    const SiteRange& r = qp.site(site);
    return fake_quant(value, r.scale, r.zero_point, false);
  };
  return hooks;
}

Prediction quantized_infer(const ParameterSet& params, const QuantParams& qp, const ModelConfig& cfg,
                           const Tensor& input, double t) {
  GraphHooks hooks = quant_hooks(qp);
  return infer(params, cfg, input, t, &hooks);
}

void save_quant_json(const QuantParams& qp, const std::string& path) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& w : qp.weights) j["layers"].push_back({{"name", w.name}, {"w_scale", w.scale}});
  j["sites"] = nlohmann::json::array();
  for (const auto& s : qp.sites)
    j["sites"].push_back({{"name", s.name}, {"scale", s.scale}, {"zero_point", s.zero_point}});
  std::ofstream f(path);
  if (!f) throw IoError("quant: cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("quant: write failed: " + path);
}

QuantParams load_quant_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("quant: cannot open: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("quant: invalid JSON: ") + e.what());
  }
  QuantParams qp;
  try {
    for (const auto& w : j.at("layers")) qp.weights.push_back({w.at("name").get<std::string>(), w.at("w_scale").get<float>()});
    for (const auto& s : j.at("sites"))
      qp.sites.push_back({s.at("name").get<std::string>(), s.at("scale").get<float>(), s.at("zero_point").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("quant: missing or mistyped field: ") + e.what());
  }
  return qp;
}

}  // namespace eeseg
