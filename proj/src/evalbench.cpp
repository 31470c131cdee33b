#include "eeseg/evalbench.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "eeseg/errors.hpp"
#include "eeseg/parallel.hpp"

namespace eeseg {

void ClassCounts::add(const ClassCounts& o) {
  for (std::size_t c = 0; c < tp.size(); ++c) {
    tp[c] += o.tp[c];
    fp[c] += o.fp[c];
    fn[c] += o.fn[c];
  }
}

ClassCounts count_classes(const LabelMap& pred, const LabelMap& truth, int classes) {
  if (pred.h != truth.h || pred.w != truth.w) throw ShapeError("count_classes: pred/truth dims mismatch");
  ClassCounts counts(classes);
  for (std::size_t i = 0; i < truth.v.size(); ++i) {
    const int p = pred.v[i], t = truth.v[i];
    if (p >= classes || t >= classes) throw ShapeError("count_classes: class value out of range");
    if (p == t) {
      ++counts.tp[static_cast<std::size_t>(t)];
    } else {
      ++counts.fp[static_cast<std::size_t>(p)];
      ++counts.fn[static_cast<std::size_t>(t)];
    }
  }
  return counts;
}

double iou_from_counts(const ClassCounts& counts) {
  double sum = 0.0;
  int defined = 0;
  for (std::size_t c = 0; c < counts.tp.size(); ++c) {
    const std::int64_t denom = counts.tp[c] + counts.fp[c] + counts.fn[c];
    if (denom == 0) continue;
    sum += static_cast<double>(counts.tp[c]) / static_cast<double>(denom);
    ++defined;
  }
  return defined > 0 ? sum / defined : 0.0;
}

double mean_iou(const LabelMap& pred, const LabelMap& truth, int classes) {
  return iou_from_counts(count_classes(pred, truth, classes));
}

double dataset_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths, int classes,
                   Aggregation agg) {
  if (preds.empty() || preds.size() != truths.size()) throw ShapeError("dataset_iou: need matching non-empty lists");
  if (agg == Aggregation::Macro) {
    double sum = 0.0;
    for (std::size_t s = 0; s < preds.size(); ++s) sum += mean_iou(preds[s], truths[s], classes);
    return sum / static_cast<double>(preds.size());
  }
  ClassCounts pooled(classes);
  for (std::size_t s = 0; s < preds.size(); ++s) pooled.add(count_classes(preds[s], truths[s], classes));
  return iou_from_counts(pooled);
}

std::vector<std::optional<double>> per_class_recall(const std::vector<LabelMap>& preds,
                                                    const std::vector<LabelMap>& truths, int classes) {
  ClassCounts pooled(classes);
  for (std::size_t s = 0; s < preds.size(); ++s) pooled.add(count_classes(preds[s], truths[s], classes));
  std::vector<std::optional<double>> recall(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const std::int64_t denom = pooled.tp[static_cast<std::size_t>(c)] + pooled.fn[static_cast<std::size_t>(c)];
    if (denom > 0)
      recall[static_cast<std::size_t>(c)] =
          static_cast<double>(pooled.tp[static_cast<std::size_t>(c)]) / static_cast<double>(denom);
  }
  return recall;
}

std::vector<std::int64_t> class_histogram(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
                                          int target_class, int classes) {
  if (target_class < 0 || target_class >= classes) throw ShapeError("class_histogram: target class out of range");
  std::vector<std::int64_t> hist(static_cast<std::size_t>(classes), 0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const LabelMap& p = preds[s];
    const LabelMap& t = truths[s];
    if (p.h != t.h || p.w != t.w) throw ShapeError("class_histogram: pred/truth dims mismatch");
    for (std::size_t i = 0; i < t.v.size(); ++i)
      if (t.v[i] == target_class) ++hist[p.v[i]];
  }
  return hist;
}

MacSummary avg_macs(const std::vector<ExitDecision>& decisions, const CostModel& cost) {
  if (decisions.empty()) throw ShapeError("avg_macs: need at least one decision");
  double sum = 0.0;
  for (const auto& d : decisions) sum += static_cast<double>(d.macs_spent);
  MacSummary s;
  s.avg_macs = sum / static_cast<double>(decisions.size());
  s.reduction_pct = 100.0 * (static_cast<double>(cost.baseline_macs) - s.avg_macs) /
                    static_cast<double>(cost.baseline_macs);
  return s;
}

double power_estimate(double macs, const CostModel& cost) {
  if (macs < 0) throw ShapeError("power_estimate: macs must be >= 0");
  return macs * cost.watts_per_mac;
}

namespace {

// Everything threshold-independent about one scene, computed once.
struct SceneEval {
  double conf_f = 0.0;
  double iou_early_f = 0.0, iou_full_f = 0.0;
  ClassCounts counts_early_f, counts_full_f;
  double conf_q = 0.0;
  double iou_early_q = 0.0, iou_full_q = 0.0;
  ClassCounts counts_early_q, counts_full_q;
};

}  // namespace

std::vector<SweepRow> sweep(const ParameterSet& params, const QuantParams* qp, const ModelConfig& cfg,
                            const std::vector<Sample>& test, const SweepConfig& sc, const CostModel& cost) {
  if (test.empty()) throw ShapeError("sweep: test set is empty");
  if (!(sc.t_min <= sc.t_max) || !(sc.t_step > 0)) throw ConfigError("sweep: bad threshold range");
  const int classes = cfg.classes;

  std::vector<SceneEval> evals(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    SceneEval& e = evals[i];
    ForwardOut<float> out = forward(params, cfg, test[i].input, PathKind::Dual);
    e.conf_f = confidence(*out.early);
    const LabelMap pred_e = argmax_map(*out.early);
    const LabelMap pred_f = argmax_map(*out.full);
    e.counts_early_f = count_classes(pred_e, test[i].labels, classes);
    e.counts_full_f = count_classes(pred_f, test[i].labels, classes);
    e.iou_early_f = iou_from_counts(e.counts_early_f);
    e.iou_full_f = iou_from_counts(e.counts_full_f);
    if (qp) {
      GraphHooks hooks = quant_hooks(*qp);
      ForwardOut<float> qout = forward(params, cfg, test[i].input, PathKind::Dual, &hooks);
      e.conf_q = confidence(*qout.early);
      const LabelMap qpred_e = argmax_map(*qout.early);
      const LabelMap qpred_f = argmax_map(*qout.full);
      e.counts_early_q = count_classes(qpred_e, test[i].labels, classes);
      e.counts_full_q = count_classes(qpred_f, test[i].labels, classes);
      e.iou_early_q = iou_from_counts(e.counts_early_q);
      e.iou_full_q = iou_from_counts(e.counts_full_q);
    }
  });

  const std::int64_t early_macs = mac_count(cfg, MacPath::EarlyPath);
  const std::int64_t full_macs = mac_count(cfg, MacPath::FullPathWithEE);
  const long long n_rows = std::llround((sc.t_max - sc.t_min) / sc.t_step) + 1;

  std::vector<SweepRow> rows;
  rows.reserve(static_cast<std::size_t>(n_rows));
  for (long long r = 0; r < n_rows; ++r) {
    const double t = sc.t_min + static_cast<double>(r) * sc.t_step;
    SweepRow row;
    row.threshold = t;

    std::vector<ExitDecision> decisions;
    decisions.reserve(test.size());
    double iou_sum = 0.0;
    ClassCounts pooled(classes);
    int exits = 0;
    for (const auto& e : evals) {
      const bool early = e.conf_f >= t;
      if (early) ++exits;
      decisions.push_back({e.conf_f, t, early ? PathTaken::Early : PathTaken::Full,
                           early ? early_macs : full_macs});
      if (sc.agg == Aggregation::Macro)
        iou_sum += early ? e.iou_early_f : e.iou_full_f;
      else
        pooled.add(early ? e.counts_early_f : e.counts_full_f);
    }
    row.exit_rate_float = 100.0 * exits / static_cast<double>(evals.size());
    row.mean_iou_float = sc.agg == Aggregation::Macro ? iou_sum / static_cast<double>(evals.size())
                                                      : iou_from_counts(pooled);
    const MacSummary macs = avg_macs(decisions, cost);
    row.avg_macs = macs.avg_macs;
    row.mac_reduction_pct = macs.reduction_pct;
    row.est_power_w = power_estimate(macs.avg_macs, cost);

    if (qp) {
      double qiou_sum = 0.0;
      ClassCounts qpooled(classes);
      int qexits = 0;
      for (const auto& e : evals) {
        const bool early = e.conf_q >= t;
        if (early) ++qexits;
        if (sc.agg == Aggregation::Macro)
          qiou_sum += early ? e.iou_early_q : e.iou_full_q;
        else
          qpooled.add(early ? e.counts_early_q : e.counts_full_q);
      }
      row.exit_rate_quant = 100.0 * qexits / static_cast<double>(evals.size());
      row.mean_iou_quant = sc.agg == Aggregation::Macro ? qiou_sum / static_cast<double>(evals.size())
                                                        : iou_from_counts(qpooled);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << "threshold,exit_rate_float,mean_iou_float,exit_rate_quant,mean_iou_quant,avg_macs,"
         "mac_reduction_pct,est_power_mw\n";
  char buf[256];
  for (const auto& r : rows) {
    std::string quant_cols = ",";
    if (r.exit_rate_quant) {
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f", *r.exit_rate_quant, *r.mean_iou_quant);
      quant_cols = buf;
    }
    std::snprintf(buf, sizeof(buf), "%.3f,%.6f,%.6f,%s,%.1f,%.6f,%.6f\n", r.threshold, r.exit_rate_float,
                  r.mean_iou_float, quant_cols.c_str(), r.avg_macs, r.mac_reduction_pct, r.est_power_w * 1e3);
    out << buf;
  }
}

void write_sweep_csv_file(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("sweep: cannot open for writing: " + path);
  write_sweep_csv(rows, f);
  if (!f) throw IoError("sweep: write failed: " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_field(const std::string& s, int line_no, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("sweep csv: line " + std::to_string(line_no) + ": bad " + what + " value \"" + s + "\"");
  }
}

}  // namespace

std::vector<SweepRow> read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("sweep csv: line 1: missing header");
  if (line.rfind("threshold,exit_rate_float", 0) != 0)
    throw FormatError("sweep csv: line 1: unexpected header \"" + line + "\"");
  std::vector<SweepRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw FormatError("sweep csv: line " + std::to_string(line_no) + ": expected 8 fields");
    SweepRow r;
    r.threshold = parse_field(f[0], line_no, "threshold");
    r.exit_rate_float = parse_field(f[1], line_no, "exit_rate_float");
    r.mean_iou_float = parse_field(f[2], line_no, "mean_iou_float");
    if (!f[3].empty()) r.exit_rate_quant = parse_field(f[3], line_no, "exit_rate_quant");
    if (!f[4].empty()) r.mean_iou_quant = parse_field(f[4], line_no, "mean_iou_quant");
    r.avg_macs = parse_field(f[5], line_no, "avg_macs");
    r.mac_reduction_pct = parse_field(f[6], line_no, "mac_reduction_pct");
    r.est_power_w = parse_field(f[7], line_no, "est_power_mw") * 1e-3;
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("sweep csv: no data rows");
  return rows;
}

std::vector<SweepRow> read_sweep_csv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("sweep: cannot open: " + path);
  return read_sweep_csv(f);
}

}  // namespace eeseg
