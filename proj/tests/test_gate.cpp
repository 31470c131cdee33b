#include <doctest.h>

#include <cmath>

#include "eeseg/gate.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace eeseg;
using testutil::random_tensor;

namespace {

const ModelConfig kToy{3, 4, {4, 8, 16}, 8};

// Logit column whose softmax max-probability equals p (one hot class against
// C-1 zeros): a = ln((C-1) p / (1-p)).
float logit_for_max_prob(double p, int classes) {
  return static_cast<float>(std::log((classes - 1) * p / (1.0 - p)));
}

}  // namespace

TEST_CASE("confidence of uniform logits is 1/C") {
  Tensor z({11, 4, 4});
  z.array() = 3.0f;
  CHECK(confidence(z) == doctest::Approx(1.0 / 11).epsilon(1e-9));
}

TEST_CASE("confidence is the arithmetic mean of per-pixel max probabilities") {
  Tensor z({11, 1, 2});
  z(0, 0, 0) = logit_for_max_prob(0.6, 11);
  z(0, 0, 1) = logit_for_max_prob(0.8, 11);
  CHECK(confidence(z) == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("confidence matches the scalar oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 32; ++trial) {
    const Tensor z = random_tensor<float>(rng, {11, 8, 8}, 2.0);
    CHECK(std::abs(confidence(z) - oracle::confidence_naive(z)) < 1e-6);
  }
}

TEST_CASE("decide follows c >= t with an inclusive boundary") {
  CHECK(decide(0.95, 0.945) == PathTaken::Early);
  CHECK(decide(0.90, 0.945) == PathTaken::Full);
  CHECK(decide(0.93, 0.93) == PathTaken::Early);
  CHECK_THROWS_AS(decide(0.5, 1.5), ConfigError);
  CHECK_THROWS_AS(decide(0.5, -0.1), ConfigError);
}

TEST_CASE("infer at threshold zero always exits early") {
  const ParameterSet ps = build<float>(kToy, 41);
  Rng rng(41);
  const Tensor input = random_tensor<float>(rng, {3, 8, 8});
  const Prediction pred = infer(ps, kToy, input, 0.0);
  CHECK(pred.decision.path == PathTaken::Early);
  CHECK(pred.decision.macs_spent == mac_count(kToy, MacPath::EarlyPath));

  // class map equals the argmax of a direct early forward
  const ForwardOut<float> fwd = forward(ps, kToy, input, PathKind::Early);
  CHECK(pred.class_map == argmax_map(*fwd.early));
  CHECK(bit_equal(pred.early_logits, *fwd.early));
}

TEST_CASE("infer boundary semantics at t = 1") {
  const ParameterSet ps = build<float>(kToy, 42);
  Rng rng(42);
  const Tensor input = random_tensor<float>(rng, {3, 8, 8});
  CHECK_THROWS_AS(infer(ps, kToy, input, 1.0 + 1e-9), ConfigError);
  const Prediction pred = infer(ps, kToy, input, 1.0);
  // exits early only when the confidence is exactly 1
  const PathTaken want = pred.decision.confidence >= 1.0 ? PathTaken::Early : PathTaken::Full;
  CHECK(pred.decision.path == want);
}

TEST_CASE("infer on the full path reuses the cached trunk and spends full MACs") {
  const ParameterSet ps = build<float>(kToy, 43);
  Rng rng(43);
  const Tensor input = random_tensor<float>(rng, {3, 8, 8});
  const Prediction pred = infer(ps, kToy, input, 1.0);
  if (pred.decision.path == PathTaken::Full) {
    CHECK(pred.decision.macs_spent == mac_count(kToy, MacPath::FullPathWithEE));
    const ForwardOut<float> fwd = forward(ps, kToy, input, PathKind::Full);
    CHECK(pred.class_map == argmax_map(*fwd.full));
  }
}

TEST_CASE("routing is monotone in the threshold and never changes logits") {
  const ParameterSet ps = build<float>(kToy, 44);
  Rng rng(44);
  const Tensor input = random_tensor<float>(rng, {3, 8, 8});

  Prediction prev = infer(ps, kToy, input, 0.0);
  bool gone_full = false;
  for (double t : {0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.99, 1.0}) {
    const Prediction pred = infer(ps, kToy, input, t);
    CHECK(pred.decision.confidence == prev.decision.confidence);
    CHECK(bit_equal(pred.early_logits, prev.early_logits));
    if (gone_full) CHECK(pred.decision.path == PathTaken::Full);
    if (pred.decision.path == PathTaken::Full) gone_full = true;
    // macs_spent takes exactly two values
    const bool early = pred.decision.path == PathTaken::Early;
    CHECK(pred.decision.macs_spent == mac_count(kToy, early ? MacPath::EarlyPath : MacPath::FullPathWithEE));
    prev = pred;
  }
}
