#pragma once

#include <string>
#include <vector>

#include "eeseg/evalbench.hpp"
#include "eeseg/net.hpp"

namespace eeseg {

struct ReportOptions {
  double iou_margin = 0.03;  // allowed IoU drop below the full-path reference
};

struct ThresholdInterval {
  bool found = false;
  double t_lo = 0.0;
  double t_hi = 0.0;
};

// Largest contiguous threshold interval where MAC reduction is positive and
// float IoU stays within `margin` of the full-path reference (the row with
// the lowest exit rate). Not found when no row qualifies.
ThresholdInterval recommend_interval(const std::vector<SweepRow>& rows, double margin);

// Writes report.md (grouped threshold table + recommendation) and three
// two-column plot-data files: exit_rate.dat, iou.dat, avg_macs.dat.
// `mac_cfg` supplies the early/full/baseline MAC reference counts quoted in
// the report header.
void write_report(const std::vector<SweepRow>& rows, const ModelConfig& mac_cfg, const ReportOptions& opt,
                  const std::string& out_dir);

}  // namespace eeseg
