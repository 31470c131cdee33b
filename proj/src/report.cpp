#include "eeseg/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "eeseg/errors.hpp"

namespace eeseg {

namespace {

// Reference = the most-conservative routing present in the sweep: lowest exit
// rate, ties to the highest threshold.
std::size_t reference_row(const std::vector<SweepRow>& rows) {
  std::size_t ref = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].exit_rate_float <= rows[ref].exit_rate_float) ref = i;
  return ref;
}

bool same_group(const SweepRow& a, const SweepRow& b) {
  auto eq = [](double x, double y) { return std::abs(x - y) < 1e-9; };
  if (!eq(a.exit_rate_float, b.exit_rate_float) || !eq(a.mean_iou_float, b.mean_iou_float)) return false;
  if (a.exit_rate_quant.has_value() != b.exit_rate_quant.has_value()) return false;
  if (a.exit_rate_quant && (!eq(*a.exit_rate_quant, *b.exit_rate_quant) || !eq(*a.mean_iou_quant, *b.mean_iou_quant)))
    return false;
  return true;
}

void write_plot_file(const std::string& path, const std::vector<SweepRow>& rows, double SweepRow::*field) {
  std::ofstream f(path);
  if (!f) throw IoError("report: cannot open for writing: " + path);
  char buf[80];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.3f %.6f\n", r.threshold, r.*field);
    f << buf;
  }
  if (!f) throw IoError("report: write failed: " + path);
}

}  // namespace

ThresholdInterval recommend_interval(const std::vector<SweepRow>& rows, double margin) {
  if (rows.empty()) throw ShapeError("recommend_interval: no rows");
  const double ref_iou = rows[reference_row(rows)].mean_iou_float;

  ThresholdInterval best;
  std::size_t run_start = 0;
  bool in_run = false;
  auto close_run = [&](std::size_t end) {  // [run_start, end)
    const double lo = rows[run_start].threshold, hi = rows[end - 1].threshold;
    if (!best.found || hi - lo > best.t_hi - best.t_lo) best = {true, lo, hi};
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const bool ok = rows[i].mac_reduction_pct > 0.0 && rows[i].mean_iou_float >= ref_iou - margin;
    if (ok && !in_run) {
      run_start = i;
      in_run = true;
    } else if (!ok && in_run) {
      close_run(i);
      in_run = false;
    }
  }
  if (in_run) close_run(rows.size());
  return best;
}

void write_report(const std::vector<SweepRow>& rows, const ModelConfig& mac_cfg, const ReportOptions& opt,
                  const std::string& out_dir) {
  if (rows.empty()) throw ShapeError("write_report: no rows");
  std::filesystem::create_directories(out_dir);

  write_plot_file(out_dir + "/exit_rate.dat", rows, &SweepRow::exit_rate_float);
  write_plot_file(out_dir + "/iou.dat", rows, &SweepRow::mean_iou_float);
  write_plot_file(out_dir + "/avg_macs.dat", rows, &SweepRow::avg_macs);

  std::ofstream f(out_dir + "/report.md");
  if (!f) throw IoError("report: cannot open for writing: " + out_dir + "/report.md");

  const bool has_quant = rows.front().exit_rate_quant.has_value();
  char buf[256];
  f << "# Confidence threshold sweep\n\n";
  std::snprintf(buf, sizeof(buf),
                "Reference MAC counts at %dx%d: early path %.2fM, full path (with EE) %.2fM, "
                "baseline (no EE) %.2fM.\n\n",
                mac_cfg.resolution, mac_cfg.resolution, mac_count(mac_cfg, MacPath::EarlyPath) / 1e6,
                mac_count(mac_cfg, MacPath::FullPathWithEE) / 1e6, mac_count(mac_cfg, MacPath::BaselineNoEE) / 1e6);
  f << buf;

  if (has_quant) {
    f << "| Threshold T | Mean IoU (float) | Exits early % (float) | Mean IoU (int8) | "
         "Exits early % (int8) | Reduction in MACs (%) |\n";
    f << "|---|---|---|---|---|---|\n";
  } else {
    f << "| Threshold T | Mean IoU (float) | Exits early % (float) | Reduction in MACs (%) |\n";
    f << "|---|---|---|---|\n";
  }

  // Rows with identical metrics collapse into threshold ranges.
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    while (j + 1 < rows.size() && same_group(rows[i], rows[j + 1])) ++j;
    std::string label;
    if (j > i) {
      std::snprintf(buf, sizeof(buf), "%.3f - %.3f", rows[i].threshold, rows[j].threshold);
      label = buf;
    } else {
      std::snprintf(buf, sizeof(buf), "%.3f", rows[i].threshold);
      label = buf;
    }
    if (has_quant) {
      std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.2f | %.4f | %.2f | %.2f |\n", label.c_str(),
                    rows[i].mean_iou_float, rows[i].exit_rate_float, *rows[i].mean_iou_quant,
                    *rows[i].exit_rate_quant, rows[i].mac_reduction_pct);
    } else {
      std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.2f | %.2f |\n", label.c_str(), rows[i].mean_iou_float,
                    rows[i].exit_rate_float, rows[i].mac_reduction_pct);
    }
    f << buf;
    i = j + 1;
  }

  f << "\n";
  const ThresholdInterval rec = recommend_interval(rows, opt.iou_margin);
  const double ref_iou = rows[reference_row(rows)].mean_iou_float;
  if (rec.found) {
    std::snprintf(buf, sizeof(buf),
                  "Recommended threshold interval: [%.3f, %.3f] (MAC reduction > 0 and IoU within %.3f of the "
                  "full-path reference %.4f).\n",
                  rec.t_lo, rec.t_hi, opt.iou_margin, ref_iou);
  } else {
    std::snprintf(buf, sizeof(buf),
                  "No beneficial interval: no threshold gives a positive MAC reduction while holding IoU within "
                  "%.3f of the full-path reference %.4f.\n",
                  opt.iou_margin, ref_iou);
  }
  f << buf;
  if (!f) throw IoError("report: write failed: " + out_dir + "/report.md");
}

}  // namespace eeseg
