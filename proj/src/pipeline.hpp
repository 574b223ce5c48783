// SPDX-License-Identifier: Apache-2.0
//
// File-level pipeline stages behind the CLI and the C API. Every stage is
// deterministic given the config seed; the PWTK_SEED environment variable
// supplies the seed when the config omits it.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "model.hpp"
#include "phantom.hpp"
#include "preproc.hpp"
#include "train.hpp"

namespace pwtk {

struct PipelineConfig {
  std::uint64_t seed = 0;
  int corpus_n = 5;
  PhantomConfig phantom;
  bool phantom_lesions_fixed = false;  // lesions listed explicitly in the config
  PreprocConfig preproc;
  ArchConfig arch;
  TrainConfig train;

  std::string preproc_echo_json() const;
};

// Parses and strictly validates the pipeline config document; unknown keys
// are rejected. `text` may be empty for all defaults.
PipelineConfig parse_pipeline_config(const std::string& text);

// Case directory IO. Tensors are .pwt; NIfTI (.nii/.nii.gz) inputs are
// accepted for ingestion.
CaseBundle load_case_dir(const std::string& dir);
void save_case_dir(const std::string& dir, const PhantomCase& pc, std::uint64_t seed,
                   const std::string& config_echo_json);
bool looks_like_case_dir(const std::string& dir);
std::vector<std::string> list_case_dirs(const std::string& root);  // sorted

// Stage drivers.
void run_synth(const std::string& config_json, const std::string& out_dir);
void run_window(const std::string& case_dir, const std::string& out_pwt, int length,
                std::optional<std::uint64_t> seed_override);
void run_preprocess(const std::string& case_or_corpus_dir, const std::string& out_dir,
                    const std::string& config_json);
void run_train(const std::string& data_dir, const std::string& arch_name, const std::string& config_json,
               const std::string& out_ckpt, bool paper_hparams);
void run_predict(const std::string& ckpt_path, const std::string& case_or_corpus_dir, const std::string& out_path,
                 const std::string& config_json);
void run_evaluate(const std::string& pred_dir, const std::string& gt_dir, const std::string& report_csv);
void run_nmi(const std::string& ckpt_path, const std::string& case_dir, const std::string& out_csv, int bins,
             const std::string& config_json);
void run_report(const std::vector<std::string>& metrics_csvs, const std::vector<std::string>& labels,
                const std::string& nmi_csv_path, const std::string& out_dir);

// Full-volume inference by patch tiling with overlap averaging
// (tile stride = patch/2). Probabilities are masked to the brain.
struct InferenceResult {
  Volume3 probabilities;
  std::vector<std::pair<std::string, Volume3>> features;  // when requested
};

InferenceResult tiled_inference(const Checkpoint& ckpt, const PreprocessedCase& pc, bool want_features,
                                const std::string& feature_tag = "dd");

// Patch-set loading for training (reads patches.pwt + patches.json).
CasePatches load_case_patches(const std::string& case_dir);

}  // namespace pwtk
