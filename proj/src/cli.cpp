#include "eeseg/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eeseg/errors.hpp"
#include "eeseg/evalbench.hpp"
#include "eeseg/gate.hpp"
#include "eeseg/net.hpp"
#include "eeseg/quant.hpp"
#include "eeseg/report.hpp"
#include "eeseg/scenegen.hpp"
#include "eeseg/trainer.hpp"
#include "eeseg/weights_io.hpp"

namespace eeseg::cli {

namespace {

// Every run leaves a JSON echo of its effective flag values next to its
// primary output, enough to reproduce the run byte-identically.
void write_config_echo(const std::string& path, const std::string& subcommand, const nlohmann::json& flags) {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["flags"] = flags;
  std::ofstream f(path);
  if (!f) throw IoError("config echo: cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("config echo: write failed: " + path);
}

struct DatagenArgs {
  std::string out;
  int scenes = 555;
  int res = 100;
  std::uint64_t seed = 42;
  double noise = 0.01;
  double wind_min = 2.0;
  double wind_max = 8.0;
  double a_rough = 0.4;
};

int run_datagen(const DatagenArgs& a) {
  EnvironmentParams env;
  env.u10_min = a.wind_min;
  env.u10_max = a.wind_max;
  env.sigma_noise = a.noise;
  env.a_rough_mm = a.a_rough;
  RadarSpec radar;
  const DatasetManifest m = generate_dataset(env, radar, a.scenes, a.res, a.res, a.seed, a.out);
  write_config_echo(a.out + "/config_echo.json", "datagen",
                    {{"out", a.out},
                     {"scenes", a.scenes},
                     {"res", a.res},
                     {"seed", a.seed},
                     {"noise", a.noise},
                     {"wind_min", a.wind_min},
                     {"wind_max", a.wind_max},
                     {"a_rough", a.a_rough}});
  int n_train = 0;
  for (const auto& s : m.scenes) n_train += s.split == "train" ? 1 : 0;
  std::printf("datagen: wrote %zu scenes (%d train / %zu test) to %s\n", m.scenes.size(), n_train,
              m.scenes.size() - static_cast<std::size_t>(n_train), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  int epochs = 25;
  double lr = 3e-4;
  double lr_decay = 0.98;
  int batch = 1;
  double momentum = 0.97;
  std::uint64_t seed = 42;
  int w0 = 16, w1 = 32, w2 = 64;
};

ModelConfig config_for_dataset(const LoadedDataset& ds, int w0, int w1, int w2) {
  ModelConfig cfg;
  cfg.in_channels = ds.manifest.radar.channels();
  cfg.classes = kThicknessClasses;
  cfg.widths = {w0, w1, w2};
  const Sample& first = ds.train.empty() ? ds.test.front() : ds.train.front();
  if (first.input.dim(1) != first.input.dim(2)) throw ConfigError("train: scenes must be square");
  cfg.resolution = first.input.dim(1);
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& a) {
  const LoadedDataset ds = load_dataset(a.data);
  const ModelConfig cfg = config_for_dataset(ds, a.w0, a.w1, a.w2);
  Hyperparams h;
  h.epochs = a.epochs;
  h.lr0 = a.lr;
  h.decay = a.lr_decay;
  h.batch_size = a.batch;
  h.momentum = a.momentum;
  h.seed = a.seed;
  auto [params, history] = fit(cfg, ds.train, ds.test, h);
  save_weights_file(params, cfg, a.out);
  write_history_csv(history, a.out + ".history.csv");
  write_config_echo(a.out + ".config.json", "train",
                    {{"data", a.data},
                     {"out", a.out},
                     {"epochs", a.epochs},
                     {"lr", a.lr},
                     {"lr_decay", a.lr_decay},
                     {"batch", a.batch},
                     {"momentum", a.momentum},
                     {"seed", a.seed},
                     {"widths", {a.w0, a.w1, a.w2}}});
  if (history.diverged) std::fprintf(stderr, "train: diverged; saved best checkpoint so far\n");
  const EpochStats& best = history.epochs.at(static_cast<std::size_t>(history.best_epoch));
  std::printf("train: %d epochs, best epoch %d (test IoU full %.4f early %.4f), saved %s\n",
              static_cast<int>(history.epochs.size()), history.best_epoch, best.test_iou_full, best.test_iou_early,
              a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out = "eval_metrics.txt";
  std::string split = "test";
};

int run_eval(const EvalArgs& a) {
  auto [cfg, params] = load_weights_file(a.model);
  const LoadedDataset ds = load_dataset(a.data);
  const std::vector<Sample>& samples = a.split == "train" ? ds.train : ds.test;
  if (samples.empty()) throw ConfigError("eval: split \"" + a.split + "\" is empty");

  std::vector<LabelMap> preds_full(samples.size()), preds_early(samples.size()), truths(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ForwardOut<float> out = forward(params, cfg, samples[i].input, PathKind::Dual);
    preds_full[i] = argmax_map(*out.full);
    preds_early[i] = argmax_map(*out.early);
    truths[i] = samples[i].labels;
  }
  const double iou_full = dataset_iou(preds_full, truths, cfg.classes);
  const double iou_early = dataset_iou(preds_early, truths, cfg.classes);
  const auto recall_full = per_class_recall(preds_full, truths, cfg.classes);
  const auto recall_early = per_class_recall(preds_early, truths, cfg.classes);

  std::ofstream f(a.out);
  if (!f) throw IoError("eval: cannot open for writing: " + a.out);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "split %s scenes %zu\n", a.split.c_str(), samples.size());
  f << buf;
  std::snprintf(buf, sizeof(buf), "dataset_iou_full %.6f\ndataset_iou_early %.6f\n", iou_full, iou_early);
  f << buf;
  f << "per_class_recall class full early\n";
  for (int c = 0; c < cfg.classes; ++c) {
    auto fmt = [](const std::optional<double>& v) {
      char b[24];
      if (v)
        std::snprintf(b, sizeof(b), "%.6f", *v);
      else
        std::snprintf(b, sizeof(b), "n/a");
      return std::string(b);
    };
    f << "  " << c << " " << fmt(recall_full[static_cast<std::size_t>(c)]) << " "
      << fmt(recall_early[static_cast<std::size_t>(c)]) << "\n";
  }
  f << "histogram rows: true class -> predicted class counts (full path)\n";
  for (int c = 0; c < cfg.classes; ++c) {
    f << "  " << c << ":";
    for (std::int64_t n : class_histogram(preds_full, truths, c, cfg.classes)) f << " " << n;
    f << "\n";
  }
  if (!f) throw IoError("eval: write failed: " + a.out);
  write_config_echo(a.out + ".config.json", "eval",
                    {{"model", a.model}, {"data", a.data}, {"out", a.out}, {"split", a.split}});
  std::printf("eval: IoU full %.4f early %.4f (%s split), wrote %s\n", iou_full, iou_early, a.split.c_str(),
              a.out.c_str());
  return 0;
}

struct QuantizeArgs {
  std::string model;
  std::string data;
  std::string out;
  int calib = 32;
};

int run_quantize(const QuantizeArgs& a) {
  auto [cfg, params] = load_weights_file(a.model);
  const LoadedDataset ds = load_dataset(a.data);
  if (ds.train.empty()) throw ConfigError("quantize: dataset has no train split");
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, a.calib)), ds.train.size());
  std::vector<Tensor> calib_inputs;
  calib_inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) calib_inputs.push_back(ds.train[i].input);
  const QuantParams qp = calibrate(params, cfg, calib_inputs);
  const std::string out = a.out.empty() ? a.model + ".quant.json" : a.out;
  save_quant_json(qp, out);
  write_config_echo(out + ".config.json", "quantize",
                    {{"model", a.model}, {"data", a.data}, {"out", out}, {"calib", static_cast<int>(n)}});
  std::printf("quantize: calibrated %zu sites over %zu scenes, wrote %s\n", qp.sites.size(), n, out.c_str());
  return 0;
}

struct SweepArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string quant;
  double t_min = 0.850;
  double t_max = 0.990;
  double t_step = 0.001;
  double watts_per_mac = 4.78e-10;
  std::string agg = "macro";
};

int run_sweep(const SweepArgs& a) {
  auto [cfg, params] = load_weights_file(a.model);
  const LoadedDataset ds = load_dataset(a.data);
  if (ds.test.empty()) throw ConfigError("sweep: dataset has no test split");
  std::optional<QuantParams> qp;
  if (!a.quant.empty()) qp = load_quant_json(a.quant);

  SweepConfig sc;
  sc.t_min = a.t_min;
  sc.t_max = a.t_max;
  sc.t_step = a.t_step;
  if (a.agg == "micro")
    sc.agg = Aggregation::Micro;
  else if (a.agg != "macro")
    throw ConfigError("sweep: --agg must be macro or micro");
  CostModel cost;
  cost.watts_per_mac = a.watts_per_mac;
  cost.baseline_macs = mac_count(cfg, MacPath::BaselineNoEE);

  const auto rows = sweep(params, qp ? &*qp : nullptr, cfg, ds.test, sc, cost);
  write_sweep_csv_file(rows, a.out);
  write_config_echo(a.out + ".config.json", "sweep",
                    {{"model", a.model},
                     {"data", a.data},
                     {"out", a.out},
                     {"quant", a.quant},
                     {"t_min", a.t_min},
                     {"t_max", a.t_max},
                     {"t_step", a.t_step},
                     {"watts_per_mac", a.watts_per_mac},
                     {"agg", a.agg}});
  std::printf("sweep: %zu thresholds over %zu scenes, wrote %s\n", rows.size(), ds.test.size(), a.out.c_str());
  return 0;
}

struct ReportArgs {
  std::string sweep_csv;
  std::string out;
  double iou_margin = 0.03;
};

int run_report(const ReportArgs& a) {
  const auto rows = read_sweep_csv_file(a.sweep_csv);
  ReportOptions opt;
  opt.iou_margin = a.iou_margin;
  write_report(rows, ModelConfig{}, opt, a.out);
  write_config_echo(a.out + "/config_echo.json", "report",
                    {{"sweep", a.sweep_csv}, {"out", a.out}, {"iou_margin", a.iou_margin}});
  std::printf("report: %zu rows -> %s/report.md\n", rows.size(), a.out.c_str());
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Early-exit Tiny U-Net benchmark: synthetic nadir-radar oil-slick scenes, dual-path "
               "training, confidence-gated inference, int8 PTQ, threshold sweeps"};
  app.require_subcommand(1);

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic scene dataset");
  datagen->add_option("--out", dg.out, "Output directory")->required();
  datagen->add_option("--scenes", dg.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  datagen->add_option("--res", dg.res, "Scene resolution (H = W)")->check(CLI::PositiveNumber);
  datagen->add_option("--seed", dg.seed, "Root seed");
  datagen->add_option("--noise", dg.noise, "Additive noise sigma");
  datagen->add_option("--wind-min", dg.wind_min, "Minimum wind speed (m/s)");
  datagen->add_option("--wind-max", dg.wind_max, "Maximum wind speed (m/s)");
  datagen->add_option("--a-rough", dg.a_rough, "RMS surface height per (m/s), mm");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the dual-path model");
  train->add_option("--data", tr.data, "Dataset directory")->required();
  train->add_option("--out", tr.out, "Output weight file (TUW1)")->required();
  train->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
  train->add_option("--lr", tr.lr, "Initial learning rate");
  train->add_option("--lr-decay", tr.lr_decay, "Per-epoch decay factor");
  train->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
  train->add_option("--momentum", tr.momentum);
  train->add_option("--seed", tr.seed);
  train->add_option("--w0", tr.w0, "First block width");
  train->add_option("--w1", tr.w1, "Second block width");
  train->add_option("--w2", tr.w2, "Bottleneck width");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a dataset split");
  eval->add_option("--model", ev.model)->required();
  eval->add_option("--data", ev.data)->required();
  eval->add_option("--out", ev.out, "Metrics text file");
  eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test"}));

  QuantizeArgs qz;
  auto* quantize = app.add_subcommand("quantize", "Calibrate int8 quantization parameters");
  quantize->add_option("--model", qz.model)->required();
  quantize->add_option("--data", qz.data)->required();
  quantize->add_option("--out", qz.out, "Sidecar JSON (default <model>.quant.json)");
  quantize->add_option("--calib", qz.calib, "Calibration scene count")->check(CLI::PositiveNumber);

  SweepArgs sw;
  auto* sweepcmd = app.add_subcommand("sweep", "Sweep the confidence threshold");
  sweepcmd->add_option("--model", sw.model)->required();
  sweepcmd->add_option("--data", sw.data)->required();
  sweepcmd->add_option("--out", sw.out, "Output CSV")->required();
  sweepcmd->add_option("--quant", sw.quant, "QuantParams sidecar JSON");
  sweepcmd->add_option("--t-min", sw.t_min);
  sweepcmd->add_option("--t-max", sw.t_max);
  sweepcmd->add_option("--t-step", sw.t_step);
  sweepcmd->add_option("--watts-per-mac", sw.watts_per_mac);
  sweepcmd->add_option("--agg", sw.agg, "IoU aggregation: macro | micro");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Render a sweep CSV into a report");
  report->add_option("--sweep", rp.sweep_csv, "Sweep CSV")->required();
  report->add_option("--out", rp.out, "Output directory")->required();
  report->add_option("--iou-margin", rp.iou_margin, "Allowed IoU drop vs full path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (datagen->parsed()) return run_datagen(dg);
    if (train->parsed()) return run_train(tr);
    if (eval->parsed()) return run_eval(ev);
    if (quantize->parsed()) return run_quantize(qz);
    if (sweepcmd->parsed()) return run_sweep(sw);
    if (report->parsed()) return run_report(rp);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("eeseg");
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace eeseg::cli
