// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. All functionality lives behind the C API in
// libpwtk; this binary only parses arguments, assembles the config
// document, and maps status codes to exit codes (0 ok, 1 usage, 2
// data/format, 3 numerical).
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pwtk.h"

namespace {

using nlohmann::json;

int exit_code(pwtk_status s) {
  switch (s) {
    case PWTK_OK: return 0;
    case PWTK_ERR_USAGE: return 1;
    case PWTK_ERR_NUMERIC: return 3;
    default: return 2;
  }
}

int finish(pwtk_status s) {
  if (s != PWTK_OK) std::fprintf(stderr, "{\"stage\":\"cli\",\"event\":\"error\",\"detail\":{\"message\":\"%s\"}}\n", pwtk_last_error());
  return exit_code(s);
}

// Reads --config (a JSON file) and merges --seed / --threads on top.
std::string assemble_config(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                            int threads) {
  json cfg = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in.good()) {
      std::fprintf(stderr, "cannot open config file: %s\n", config_path.c_str());
      std::exit(1);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = json::parse(ss.str(), nullptr, false);
    if (cfg.is_discarded()) {
      std::fprintf(stderr, "config file is not valid JSON: %s\n", config_path.c_str());
      std::exit(1);
    }
  }
  if (seed) cfg["seed"] = *seed;
  if (threads > 0) cfg["threads"] = threads;
  return cfg.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pwtk: stroke-lesion outcome prediction from perfusion MRI"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (results are identical for any setting)");

  std::string config_path;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline config JSON file");
    sub->add_option("--seed", seed, "seed override (default: config, then PWTK_SEED, then 0)");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic perfusion corpus");
  std::string out_dir;
  int corpus_n = 0;
  synth->add_option("--out", out_dir, "output corpus directory")->required();
  synth->add_option("--n", corpus_n, "number of cases (overrides config)");
  add_common(synth);

  // window
  auto* window = app.add_subcommand("window", "detect the contrast peak and extract the temporal window");
  std::string in_dir, out_file;
  int length = 26;
  window->add_option("--in", in_dir, "case directory")->required();
  window->add_option("--out", out_file, "output .pwt for the windowed PWI")->required();
  window->add_option("--length", length, "window length (default 26)");
  window->add_option("--seed", seed, "seed override");

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "resize, clip, scale, and extract patches");
  std::string case_dir;
  prep->add_option("--case", case_dir, "case directory or corpus root")->required();
  prep->add_option("--out", out_dir, "output directory")->required();
  add_common(prep);

  // train
  auto* train = app.add_subcommand("train", "train an architecture on preprocessed patches");
  std::string data_dir, arch, out_ckpt;
  bool paper_hparams = false;
  train->add_option("--data", data_dir, "preprocessed corpus directory")->required();
  train->add_option("--arch", arch, "standard | data-driven | single | branched")->required();
  train->add_option("--out", out_ckpt, "output checkpoint path")->required();
  train->add_flag("--paper-hparams", paper_hparams, "use the reference learning rate (1e-5)");
  add_common(train);

  // predict
  auto* predict = app.add_subcommand("predict", "full-volume inference with patch tiling");
  std::string model_path, pred_out;
  predict->add_option("--model", model_path, "checkpoint path")->required();
  predict->add_option("--case", case_dir, "case directory or corpus root")->required();
  predict->add_option("--out", pred_out, "output .pwt (single case) or directory (corpus)")->required();
  add_common(predict);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "compute Dice/HD/ASSD/precision/recall against ground truth");
  std::string pred_dir, gt_dir, report_csv;
  eval->add_option("--pred", pred_dir, "directory of <case_id>.pwt predictions")->required();
  eval->add_option("--gt", gt_dir, "corpus directory holding ground truth")->required();
  eval->add_option("--report", report_csv, "output metrics.csv")->required();

  // nmi
  auto* nmi = app.add_subcommand("nmi", "normalized mutual information of learned features vs standard maps");
  std::string nmi_out;
  int bins = 64;
  nmi->add_option("--model", model_path, "branched checkpoint")->required();
  nmi->add_option("--case", case_dir, "case directory")->required();
  nmi->add_option("--out", nmi_out, "output nmi.csv")->required();
  nmi->add_option("--bins", bins, "histogram bins per axis (default 64)");
  add_common(nmi);

  // report
  auto* report = app.add_subcommand("report", "render SVG figures from metric tables");
  std::vector<std::string> metrics_files, labels;
  std::string nmi_csv;
  report->add_option("--metrics", metrics_files, "metrics.csv (repeatable, one point per method)");
  report->add_option("--labels", labels, "labels matching --metrics order");
  report->add_option("--nmi", nmi_csv, "nmi.csv for the heatmap");
  report->add_option("--out", out_dir, "output directory")->required();

  // selftest
  app.add_subcommand("selftest", "run gradient checks and metric oracle cross-checks");

  CLI11_PARSE(app, argc, argv);

  if (threads > 0) pwtk_set_threads(threads);

  if (synth->parsed()) {
    json cfg = json::parse(assemble_config(config_path, seed, threads));
    if (corpus_n > 0) cfg["corpus"]["n"] = corpus_n;
    return finish(pwtk_synth(cfg.dump().c_str(), out_dir.c_str()));
  }
  if (window->parsed()) {
    return finish(pwtk_window(in_dir.c_str(), out_file.c_str(), length, seed.value_or(0), seed.has_value()));
  }
  if (prep->parsed()) {
    const std::string cfg = assemble_config(config_path, seed, threads);
    return finish(pwtk_preprocess(case_dir.c_str(), out_dir.c_str(), cfg.c_str()));
  }
  if (train->parsed()) {
    const std::string cfg = assemble_config(config_path, seed, threads);
    return finish(pwtk_train(data_dir.c_str(), arch.c_str(), cfg.c_str(), out_ckpt.c_str(), paper_hparams));
  }
  if (predict->parsed()) {
    const std::string cfg = assemble_config(config_path, seed, threads);
    return finish(pwtk_predict(model_path.c_str(), case_dir.c_str(), pred_out.c_str(), cfg.c_str()));
  }
  if (eval->parsed()) {
    return finish(pwtk_evaluate(pred_dir.c_str(), gt_dir.c_str(), report_csv.c_str()));
  }
  if (nmi->parsed()) {
    const std::string cfg = assemble_config(config_path, seed, threads);
    return finish(pwtk_nmi(model_path.c_str(), case_dir.c_str(), nmi_out.c_str(), bins, cfg.c_str()));
  }
  if (report->parsed()) {
    std::vector<const char*> csv_ptrs, label_ptrs;
    for (const auto& s : metrics_files) csv_ptrs.push_back(s.c_str());
    labels.resize(metrics_files.size());
    for (const auto& s : labels) label_ptrs.push_back(s.c_str());
    return finish(pwtk_report(csv_ptrs.data(), label_ptrs.data(), static_cast<int>(csv_ptrs.size()),
                              nmi_csv.empty() ? nullptr : nmi_csv.c_str(), out_dir.c_str()));
  }
  // selftest
  return finish(pwtk_selftest());
}
