#include <doctest.h>

#include <cmath>
#include <sstream>

#include "eeseg/evalbench.hpp"
#include "eeseg/gate.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace eeseg;
using testutil::random_labels;
using testutil::random_tensor;

namespace {

const ModelConfig kToy{3, 4, {4, 8, 16}, 8};

LabelMap constant_map(int h, int w, std::uint8_t value) {
  LabelMap m(h, w);
  std::fill(m.v.begin(), m.v.end(), value);
  return m;
}

std::vector<Sample> toy_test_set(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> set;
  for (int i = 0; i < n; ++i)
    set.push_back({random_tensor<float>(rng, {3, 8, 8}), random_labels(rng, 8, 8, 4)});
  return set;
}

}  // namespace

TEST_CASE("mean_iou basics") {
  Rng rng(61);
  SUBCASE("perfect prediction with all classes present") {
    LabelMap truth(16, 16);
    for (std::size_t i = 0; i < truth.v.size(); ++i) truth.v[i] = static_cast<std::uint8_t>(i % 11);
    CHECK(mean_iou(truth, truth, 11) == 1.0);
  }
  SUBCASE("disjoint single-class maps") {
    CHECK(mean_iou(constant_map(8, 8, 1), constant_map(8, 8, 2), 11) == 0.0);
  }
  SUBCASE("matches the counting oracle exactly") {
    for (int trial = 0; trial < 64; ++trial) {
      const LabelMap pred = random_labels(rng, 16, 16, 11);
      const LabelMap truth = random_labels(rng, 16, 16, 11);
      CHECK(mean_iou(pred, truth, 11) == oracle::mean_iou_naive(pred, truth, 11));
    }
  }
  SUBCASE("absent classes are excluded, not counted as zero") {
    // classes 0 and 1 only; classes 2..10 appear nowhere
    LabelMap truth = constant_map(4, 4, 0);
    LabelMap pred = constant_map(4, 4, 0);
    pred.v[0] = 1;
    // class 0: tp 15, fp 0, fn 1 -> 15/16; class 1: tp 0, fp 1, fn 0 -> 0
    CHECK(mean_iou(pred, truth, 11) == doctest::Approx((15.0 / 16.0 + 0.0) / 2.0));
  }
  SUBCASE("relabeling symmetry") {
    const LabelMap pred = random_labels(rng, 12, 12, 5);
    const LabelMap truth = random_labels(rng, 12, 12, 5);
    LabelMap pred_r = pred, truth_r = truth;
    const std::uint8_t perm[5] = {3, 0, 4, 1, 2};
    for (auto& v : pred_r.v) v = perm[v];
    for (auto& v : truth_r.v) v = perm[v];
    CHECK(mean_iou(pred, truth, 5) == doctest::Approx(mean_iou(pred_r, truth_r, 5)).epsilon(1e-12));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(mean_iou(LabelMap(4, 4), LabelMap(4, 5), 11), ShapeError);
  }
}

TEST_CASE("dataset_iou") {
  Rng rng(62);
  const LabelMap a_pred = random_labels(rng, 8, 8, 4), a_truth = random_labels(rng, 8, 8, 4);
  SUBCASE("identical scenes give the scene value") {
    const double one = mean_iou(a_pred, a_truth, 4);
    CHECK(dataset_iou({a_pred, a_pred}, {a_truth, a_truth}, 4) == doctest::Approx(one).epsilon(1e-12));
  }
  SUBCASE("macro average of two scenes") {
    // craft scenes with IoU 0.6 and 0.8: one class, pred overlaps truth partially
    // scene 1: truth all 1; pred: 60 of 100 pixels class 1, rest class 0 -> class1 IoU 0.6, class0 0
    LabelMap t1 = constant_map(10, 10, 1);
    LabelMap p1 = constant_map(10, 10, 1);
    for (int i = 0; i < 40; ++i) p1.v[static_cast<std::size_t>(i)] = 0;
    // per-scene classes: class1 tp60 fn40 -> 0.6; class0 fp40 -> 0; mean = 0.3
    LabelMap t2 = constant_map(10, 10, 1);
    LabelMap p2 = constant_map(10, 10, 1);
    for (int i = 0; i < 20; ++i) p2.v[static_cast<std::size_t>(i)] = 0;
    // class1 iou 0.8 -> wait: tp 80, fn 20 -> 80/100 = 0.8; class0 fp 20 -> 0; mean 0.4
    const double want = (0.3 + 0.4) / 2.0;
    CHECK(dataset_iou({p1, p2}, {t1, t2}, 2) == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("macro equals a direct recomputation over a random set") {
    std::vector<LabelMap> preds, truths;
    for (int s = 0; s < 5; ++s) {
      preds.push_back(random_labels(rng, 8, 8, 4));
      truths.push_back(random_labels(rng, 8, 8, 4));
    }
    double sum = 0.0;
    for (int s = 0; s < 5; ++s) sum += oracle::mean_iou_naive(preds[static_cast<std::size_t>(s)], truths[static_cast<std::size_t>(s)], 4);
    CHECK(dataset_iou(preds, truths, 4) == doctest::Approx(sum / 5.0).epsilon(1e-12));
  }
  SUBCASE("micro pools counts before dividing") {
    LabelMap t1 = constant_map(2, 2, 0), p1 = constant_map(2, 2, 0);
    LabelMap t2 = constant_map(2, 2, 1), p2 = constant_map(2, 2, 0);
    // pooled: class0 tp4 fp4 -> 0.5, class1 fn4 -> 0; micro = 0.25
    CHECK(dataset_iou({p1, p2}, {t1, t2}, 2, Aggregation::Micro) == doctest::Approx(0.25).epsilon(1e-12));
    // macro: scene1 = 1.0, scene2 = 0.0 -> 0.5
    CHECK(dataset_iou({p1, p2}, {t1, t2}, 2, Aggregation::Macro) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("empty list is a contract violation") {
    CHECK_THROWS_AS(dataset_iou({}, {}, 4), ShapeError);
  }
}

TEST_CASE("per_class_recall") {
  Rng rng(63);
  SUBCASE("perfect predictions give ones where defined") {
    const LabelMap truth = random_labels(rng, 8, 8, 4);
    const auto recall = per_class_recall({truth}, {truth}, 6);
    for (int c = 0; c < 6; ++c) {
      bool present = false;
      for (auto v : truth.v) present |= v == c;
      if (present)
        CHECK(*recall[static_cast<std::size_t>(c)] == 1.0);
      else
        CHECK_FALSE(recall[static_cast<std::size_t>(c)].has_value());
    }
  }
  SUBCASE("counting oracle") {
    const LabelMap pred = random_labels(rng, 8, 8, 4);
    const LabelMap truth = random_labels(rng, 8, 8, 4);
    const auto recall = per_class_recall({pred}, {truth}, 4);
    for (int c = 0; c < 4; ++c) {
      std::int64_t tp = 0, fn = 0;
      for (std::size_t i = 0; i < truth.v.size(); ++i) {
        if (truth.v[i] != c) continue;
        if (pred.v[i] == c)
          ++tp;
        else
          ++fn;
      }
      if (tp + fn == 0)
        CHECK_FALSE(recall[static_cast<std::size_t>(c)].has_value());
      else
        CHECK(*recall[static_cast<std::size_t>(c)] == doctest::Approx(static_cast<double>(tp) / (tp + fn)));
    }
  }
}

TEST_CASE("class_histogram") {
  Rng rng(64);
  const LabelMap pred = random_labels(rng, 8, 8, 4);
  const LabelMap truth = random_labels(rng, 8, 8, 4);
  SUBCASE("perfect predictor concentrates on the target") {
    const auto hist = class_histogram({truth}, {truth}, 2, 4);
    for (int c = 0; c < 4; ++c)
      if (c != 2) CHECK(hist[static_cast<std::size_t>(c)] == 0);
  }
  SUBCASE("mass conservation and oracle") {
    for (int target = 0; target < 4; ++target) {
      const auto hist = class_histogram({pred}, {truth}, target, 4);
      std::int64_t truth_pixels = 0;
      for (auto v : truth.v) truth_pixels += v == target ? 1 : 0;
      std::int64_t total = 0;
      for (auto n : hist) total += n;
      CHECK(total == truth_pixels);
      for (int c = 0; c < 4; ++c) {
        std::int64_t want = 0;
        for (std::size_t i = 0; i < truth.v.size(); ++i)
          if (truth.v[i] == target && pred.v[i] == c) ++want;
        CHECK(hist[static_cast<std::size_t>(c)] == want);
      }
    }
  }
}

TEST_CASE("avg_macs reproduces the reference cost table arithmetic") {
  CostModel cost;
  cost.baseline_macs = 260'560'000;
  SUBCASE("all early") {
    std::vector<ExitDecision> d(10, {0.9, 0.5, PathTaken::Early, 150'560'000});
    const MacSummary s = avg_macs(d, cost);
    CHECK(s.avg_macs == doctest::Approx(150.56e6));
    CHECK(s.reduction_pct == doctest::Approx(42.22).epsilon(0.001));
  }
  SUBCASE("all full costs more than the baseline") {
    std::vector<ExitDecision> d(10, {0.9, 0.99, PathTaken::Full, 336'400'000});
    const MacSummary s = avg_macs(d, cost);
    CHECK(s.reduction_pct == doctest::Approx(-29.11).epsilon(0.001));
  }
  SUBCASE("half and half at the artifact's own counts") {
    std::vector<ExitDecision> d;
    d.push_back({0.9, 0.5, PathTaken::Early, 146'560'000});
    d.push_back({0.4, 0.5, PathTaken::Full, 331'360'000});
    CHECK(avg_macs(d, cost).avg_macs == doctest::Approx(238.96e6));
  }
}

TEST_CASE("power_estimate") {
  CostModel cost;  // 4.78e-10 W/MAC
  CHECK(power_estimate(425e6, cost) * 1e3 == doctest::Approx(203.15).epsilon(1e-6));
  CHECK(power_estimate(0.0, cost) == 0.0);
  CHECK(power_estimate(150.56e6, cost) * 1e3 == doctest::Approx(71.97).epsilon(1e-4));
  CHECK(power_estimate(336.4e6, cost) * 1e3 == doctest::Approx(160.8).epsilon(1e-4));
  CHECK(power_estimate(261e6, cost) * 1e3 == doctest::Approx(124.8).epsilon(1e-3));
  // linearity
  CHECK(power_estimate(3e6, cost) + power_estimate(4e6, cost) == doctest::Approx(power_estimate(7e6, cost)));
}

TEST_CASE("sweep") {
  const ParameterSet ps = build<float>(kToy, 92);
  const std::vector<Sample> test = toy_test_set(6, 93);
  CostModel cost;
  cost.baseline_macs = mac_count(kToy, MacPath::BaselineNoEE);

  SUBCASE("row count follows the range arithmetic") {
    SweepConfig sc;  // 0.850..0.990 step 0.001
    const auto rows = sweep(ps, nullptr, kToy, test, sc, cost);
    CHECK(rows.size() == 141);
    CHECK(rows.front().threshold == doctest::Approx(0.850));
    CHECK(rows.back().threshold == doctest::Approx(0.990));
    CHECK_FALSE(rows.front().exit_rate_quant.has_value());
  }

  SUBCASE("exit rate non-increasing, avg MACs non-decreasing and in range") {
    SweepConfig sc;
    sc.t_min = 0.0;
    sc.t_max = 1.0;
    sc.t_step = 0.01;
    const auto rows = sweep(ps, nullptr, kToy, test, sc, cost);
    const double early = static_cast<double>(mac_count(kToy, MacPath::EarlyPath));
    const double full = static_cast<double>(mac_count(kToy, MacPath::FullPathWithEE));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].avg_macs >= early);
      CHECK(rows[i].avg_macs <= full);
      // exact mixture identity
      const double r = rows[i].exit_rate_float / 100.0;
      CHECK(rows[i].avg_macs == doctest::Approx(r * early + (1.0 - r) * full).epsilon(1e-12));
      if (i > 0) {
        CHECK(rows[i].exit_rate_float <= rows[i - 1].exit_rate_float);
        CHECK(rows[i].avg_macs >= rows[i - 1].avg_macs);
      }
    }
    CHECK(rows.front().exit_rate_float == 100.0);  // t = 0 takes every scene early
  }

  SUBCASE("cached rows equal per-threshold re-inference") {
    SweepConfig sc;
    sc.t_min = 0.05;
    sc.t_max = 0.95;
    sc.t_step = 0.15;
    const auto rows = sweep(ps, nullptr, kToy, test, sc, cost);
    for (const auto& row : rows) {
      int exits = 0;
      double iou_sum = 0.0;
      double macs_sum = 0.0;
      for (const auto& sample : test) {
        const Prediction pred = infer(ps, kToy, sample.input, row.threshold);
        exits += pred.decision.path == PathTaken::Early ? 1 : 0;
        iou_sum += mean_iou(pred.class_map, sample.labels, kToy.classes);
        macs_sum += static_cast<double>(pred.decision.macs_spent);
      }
      CHECK(row.exit_rate_float == doctest::Approx(100.0 * exits / test.size()).epsilon(1e-12));
      CHECK(row.mean_iou_float == doctest::Approx(iou_sum / test.size()).epsilon(1e-12));
      CHECK(row.avg_macs == doctest::Approx(macs_sum / test.size()).epsilon(1e-12));
    }
  }

  SUBCASE("csv roundtrip with and without quant columns") {
    SweepConfig sc;
    sc.t_min = 0.2;
    sc.t_max = 0.4;
    sc.t_step = 0.1;
    const auto rows = sweep(ps, nullptr, kToy, test, sc, cost);
    std::stringstream buf;
    write_sweep_csv(rows, buf);
    std::string header;
    std::getline(buf, header);
    CHECK(header ==
          "threshold,exit_rate_float,mean_iou_float,exit_rate_quant,mean_iou_quant,avg_macs,"
          "mac_reduction_pct,est_power_mw");
    buf.seekg(0);
    const auto parsed = read_sweep_csv(buf);
    REQUIRE(parsed.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(parsed[i].threshold == doctest::Approx(rows[i].threshold));
      CHECK(parsed[i].exit_rate_float == doctest::Approx(rows[i].exit_rate_float).epsilon(1e-6));
      CHECK_FALSE(parsed[i].exit_rate_quant.has_value());
      CHECK(parsed[i].est_power_w == doctest::Approx(rows[i].est_power_w).epsilon(1e-6));
    }
  }

  SUBCASE("malformed csv reports the line") {
    std::stringstream buf;
    buf << "threshold,exit_rate_float,mean_iou_float,exit_rate_quant,mean_iou_quant,avg_macs,"
           "mac_reduction_pct,est_power_mw\n";
    buf << "0.9,100.0,0.5,,,1000,10.0,0.1\n";
    buf << "0.9,oops,0.5,,,1000,10.0,0.1\n";
    CHECK_THROWS_WITH_AS(read_sweep_csv(buf), doctest::Contains("line 3"), FormatError);
  }
}
