#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "eeseg/quant.hpp"
#include "helpers.hpp"

using namespace eeseg;
using testutil::random_tensor;

namespace {

const ModelConfig kToy{3, 4, {4, 8, 16}, 8};

std::vector<Tensor> toy_inputs(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> set;
  for (int i = 0; i < n; ++i) set.push_back(random_tensor<float>(rng, {3, 8, 8}));
  return set;
}

float scalar_fake_quant(float x, float scale, int zp, bool is_signed) {
  const float lo = is_signed ? -127.0f : 0.0f;
  const float hi = is_signed ? 127.0f : 255.0f;
  float q = std::round(x / scale) + static_cast<float>(zp);
  q = std::min(hi, std::max(lo, q));
  return (q - static_cast<float>(zp)) * scale;
}

}  // namespace

TEST_CASE("calibrate weight scales") {
  ParameterSet ps = build<float>(kToy, 81);
  // force a known span on one layer
  auto& k = ps.at("enc1a").kernel;
  k.array() *= 0.0f;
  k.data()[0] = -1.0f;
  k.data()[1] = 1.0f;
  const QuantParams qp = calibrate(ps, kToy, toy_inputs(1, 81));
  CHECK(qp.weight("enc1a").scale == doctest::Approx(1.0 / 127.0).epsilon(1e-7));
  CHECK(qp.weights.size() == ps.layers.size());
}

TEST_CASE("activation range arithmetic") {
  // observed range [0, 6] -> scale 6/255, zero point 0
  const float scale = (6.0f - 0.0f) / 255.0f;
  CHECK(scale == doctest::Approx(0.02353).epsilon(1e-3));
  const int zp = static_cast<int>(std::lround(-0.0f / scale));
  CHECK(zp == 0);
  // observed range [-1, 3] -> zero point round(1/scale')
  const float scale2 = 4.0f / 255.0f;
  CHECK(static_cast<int>(std::lround(1.0f / scale2)) == 64);
}

TEST_CASE("calibrate is deterministic and covers both paths") {
  const ParameterSet ps = build<float>(kToy, 82);
  const auto inputs = toy_inputs(3, 82);
  const QuantParams a = calibrate(ps, kToy, inputs);
  const QuantParams b = calibrate(ps, kToy, inputs);
  REQUIRE(a.sites.size() == b.sites.size());
  for (std::size_t i = 0; i < a.sites.size(); ++i) {
    CHECK(a.sites[i].name == b.sites[i].name);
    CHECK(a.sites[i].scale == b.sites[i].scale);
    CHECK(a.sites[i].zero_point == b.sites[i].zero_point);
  }
  // one site per layer plus the input site
  CHECK(a.sites.size() == ps.layers.size() + 1);
  CHECK(a.sites.front().name == "input");
  CHECK_THROWS_AS(calibrate(ps, kToy, {}), ConfigError);
}

TEST_CASE("fake_quant bounds, saturation, idempotence, oracle") {
  Rng rng(83);
  const float scale = 0.04f;
  SUBCASE("in-range rounding error is at most scale/2") {
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor t = random_tensor<float>(rng, {2, 4, 4}, 1.5);
      const Tensor q = fake_quant(t, scale, 128, false);
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        const float x = t.data()[i];
        if (x > -128 * scale && x < 127 * scale)  // representable window
          CHECK(std::abs(x - q.data()[i]) <= scale / 2.0f + 1e-7f);
      }
    }
  }
  SUBCASE("values above the range clamp to the top code") {
    Tensor t({1, 1, 1});
    t.data()[0] = 100.0f;
    const Tensor q = fake_quant(t, scale, 0, false);
    CHECK(q.data()[0] == doctest::Approx(255.0f * scale));
    t.data()[0] = -100.0f;
    CHECK(fake_quant(t, scale, 0, true).data()[0] == doctest::Approx(-127.0f * scale));
  }
  SUBCASE("idempotence and scalar oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor t = random_tensor<float>(rng, {3, 5, 5}, 2.0);
      const bool is_signed = trial % 2 == 0;
      const int zp = is_signed ? 0 : 100;
      const Tensor q1 = fake_quant(t, scale, zp, is_signed);
      const Tensor q2 = fake_quant(q1, scale, zp, is_signed);
      CHECK(bit_equal(q1, q2));
      for (Eigen::Index i = 0; i < t.size(); ++i)
        CHECK(q1.data()[i] == scalar_fake_quant(t.data()[i], scale, zp, is_signed));
    }
  }
  SUBCASE("scale must be positive") {
    CHECK_THROWS_AS(fake_quant(Tensor({1, 1, 1}), 0.0f, 0, true), ConfigError);
  }
}

TEST_CASE("quantized_infer with tight ranges reproduces the float prediction") {
  // Small weights keep every activation range narrow; decisive head biases
  // give argmax margins far above the quantization error.
  ParameterSet ps = build<float>(kToy, 84);
  for (auto& layer : ps.layers) layer.kernel.array() *= 0.1f;
  ps.at("ee_head").bias << 0.05f, 0.30f, 0.10f, 0.20f;
  ps.at("head").bias << 0.25f, 0.05f, 0.15f, 0.30f;

  Rng rng(84);
  const Tensor input = random_tensor<float>(rng, {3, 8, 8});
  const QuantParams qp = calibrate(ps, kToy, {input});

  const Prediction fp = infer(ps, kToy, input, 0.0);
  const Prediction qd = quantized_infer(ps, qp, kToy, input, 0.0);
  CHECK(fp.decision.path == PathTaken::Early);
  CHECK(qd.decision.path == PathTaken::Early);
  CHECK(fp.class_map == qd.class_map);
  // routing costs are accounted identically
  CHECK(qd.decision.macs_spent == fp.decision.macs_spent);
}

TEST_CASE("quantized logits differ from float but stay close under calibration") {
  const ParameterSet ps = build<float>(kToy, 85);
  const auto inputs = toy_inputs(2, 85);
  const QuantParams qp = calibrate(ps, kToy, inputs);
  const Prediction fp = infer(ps, kToy, inputs[0], 1.0);
  const Prediction qd = quantized_infer(ps, qp, kToy, inputs[0], 1.0);
  CHECK_FALSE(bit_equal(fp.early_logits, qd.early_logits));
  CHECK(qd.decision.confidence >= 0.0);
  CHECK(qd.decision.confidence <= 1.0);
}

TEST_CASE("quant sidecar JSON roundtrip") {
  const ParameterSet ps = build<float>(kToy, 86);
  const QuantParams qp = calibrate(ps, kToy, toy_inputs(1, 86));
  const auto path = (std::filesystem::temp_directory_path() / "eeseg_qp.json").string();
  save_quant_json(qp, path);
  const QuantParams qp2 = load_quant_json(path);
  REQUIRE(qp2.weights.size() == qp.weights.size());
  REQUIRE(qp2.sites.size() == qp.sites.size());
  for (std::size_t i = 0; i < qp.weights.size(); ++i) {
    CHECK(qp2.weights[i].name == qp.weights[i].name);
    CHECK(qp2.weights[i].scale == qp.weights[i].scale);
  }
  for (std::size_t i = 0; i < qp.sites.size(); ++i) {
    CHECK(qp2.sites[i].name == qp.sites[i].name);
    CHECK(qp2.sites[i].scale == qp.sites[i].scale);
    CHECK(qp2.sites[i].zero_point == qp.sites[i].zero_point);
  }
  std::filesystem::remove(path);
}
