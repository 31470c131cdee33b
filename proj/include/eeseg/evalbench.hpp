#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "eeseg/gate.hpp"
#include "eeseg/net.hpp"
#include "eeseg/quant.hpp"
#include "eeseg/scenegen.hpp"
#include "eeseg/tensor.hpp"

namespace eeseg {

struct ClassCounts {
  std::vector<std::int64_t> tp, fp, fn;

  explicit ClassCounts(int classes = 0)
      : tp(static_cast<std::size_t>(classes), 0),
        fp(static_cast<std::size_t>(classes), 0),
        fn(static_cast<std::size_t>(classes), 0) {}

  void add(const ClassCounts& o);
};

ClassCounts count_classes(const LabelMap& pred, const LabelMap& truth, int classes);

// Mean over classes of TP/(TP+FP+FN). Classes with no pixels on either side
// (TP+FP+FN = 0) are excluded from the mean.
double iou_from_counts(const ClassCounts& counts);
double mean_iou(const LabelMap& pred, const LabelMap& truth, int classes);

enum class Aggregation { Macro, Micro };

// Macro: mean over scenes of per-scene mean IoU. Micro: class counts pooled
// over all scenes first.
double dataset_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths, int classes,
                   Aggregation agg = Aggregation::Macro);

// TP/(TP+FN) pooled over the dataset; classes absent from every truth map get
// no value.
std::vector<std::optional<double>> per_class_recall(const std::vector<LabelMap>& preds,
                                                    const std::vector<LabelMap>& truths, int classes);

// Distribution of predicted classes over pixels whose true class is
// target_class.
std::vector<std::int64_t> class_histogram(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
                                          int target_class, int classes);

struct CostModel {
  double watts_per_mac = 4.78e-10;
  std::int64_t baseline_macs = 0;
};

struct MacSummary {
  double avg_macs = 0.0;
  double reduction_pct = 0.0;  // negative when the average exceeds baseline
};

MacSummary avg_macs(const std::vector<ExitDecision>& decisions, const CostModel& cost);

double power_estimate(double macs, const CostModel& cost);

struct SweepRow {
  double threshold = 0.0;
  double exit_rate_float = 0.0;  // percent
  double mean_iou_float = 0.0;
  std::optional<double> exit_rate_quant;
  std::optional<double> mean_iou_quant;
  double avg_macs = 0.0;  // float-mode routing
  double mac_reduction_pct = 0.0;
  double est_power_w = 0.0;
};

struct SweepConfig {
  double t_min = 0.850;
  double t_max = 0.990;
  double t_step = 0.001;
  Aggregation agg = Aggregation::Macro;
};

// Threshold sweep over the test set. Logits per scene are computed once and
// reused across thresholds (the gate is pure routing); quantized evaluation
// runs alongside when qp is given.
std::vector<SweepRow> sweep(const ParameterSet& params, const QuantParams* qp, const ModelConfig& cfg,
                            const std::vector<Sample>& test, const SweepConfig& sc, const CostModel& cost);

// CSV header (exact):
// threshold,exit_rate_float,mean_iou_float,exit_rate_quant,mean_iou_quant,avg_macs,mac_reduction_pct,est_power_mw
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);
void write_sweep_csv_file(const std::vector<SweepRow>& rows, const std::string& path);
std::vector<SweepRow> read_sweep_csv(std::istream& in);
std::vector<SweepRow> read_sweep_csv_file(const std::string& path);

}  // namespace eeseg
