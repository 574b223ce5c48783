// SPDX-License-Identifier: Apache-2.0
//
// extern "C" surface over the C++ core. Exceptions are caught at the
// boundary and mapped to status codes; messages land in a thread-local
// buffer readable via pwtk_last_error().
#include "pwtk.h"

#include <cstring>
#include <string>

#include "nifti.hpp"
#include "pipeline.hpp"
#include "raw_io.hpp"
#include "selftest.hpp"

namespace {

thread_local std::string g_last_error;

pwtk_status to_status(const pwtk::Error& e) {
  switch (e.exit_code()) {
    case 1: return PWTK_ERR_USAGE;
    case 3: return PWTK_ERR_NUMERIC;
    default: return PWTK_ERR_DATA;
  }
}

template <typename Fn>
pwtk_status guarded(Fn&& fn) {
  try {
    fn();
    return PWTK_OK;
  } catch (const pwtk::Error& e) {
    g_last_error = e.what();
    return to_status(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PWTK_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return PWTK_ERR_INTERNAL;
  }
}

std::string or_empty(const char* s) { return s ? std::string(s) : std::string(); }

}  // namespace

struct pwtk_tensor {
  pwtk::Tensor t;
  pwtk::RawMeta meta;
};

extern "C" {

const char* pwtk_version(void) { return "pwtk 1.0"; }

const char* pwtk_last_error(void) { return g_last_error.c_str(); }

void pwtk_set_threads(int n) { pwtk::set_thread_count(n); }

pwtk_status pwtk_tensor_create(const uint64_t* extents, uint32_t rank, pwtk_tensor** out) {
  return guarded([&] {
    pwtk::require(extents != nullptr && out != nullptr, pwtk::ErrKind::usage, "null argument");
    std::vector<std::size_t> dims(extents, extents + rank);
    *out = new pwtk_tensor{pwtk::Tensor(dims), {}};
  });
}

pwtk_status pwtk_tensor_read(const char* path, pwtk_tensor** out) {
  return guarded([&] {
    pwtk::require(path != nullptr && out != nullptr, pwtk::ErrKind::usage, "null argument");
    pwtk::RawMeta meta;
    pwtk::Tensor t = pwtk::load_raw_file(path, &meta);
    *out = new pwtk_tensor{std::move(t), meta};
  });
}

pwtk_status pwtk_tensor_write(const pwtk_tensor* t, const char* path) {
  return guarded([&] {
    pwtk::require(t != nullptr && path != nullptr, pwtk::ErrKind::usage, "null argument");
    pwtk::save_raw_file(path, t->t, t->meta);
  });
}

pwtk_status pwtk_nifti_read(const char* path, pwtk_tensor** out) {
  return guarded([&] {
    pwtk::require(path != nullptr && out != nullptr, pwtk::ErrKind::usage, "null argument");
    auto v = pwtk::load_nifti(path);
    if (std::holds_alternative<pwtk::Volume3>(v)) {
      auto& vol = std::get<pwtk::Volume3>(v);
      pwtk::RawMeta meta;
      meta.spacing = vol.spacing;
      *out = new pwtk_tensor{std::move(vol.values), meta};
    } else {
      auto& vol = std::get<pwtk::Volume4>(v);
      pwtk::RawMeta meta;
      meta.spacing = vol.spacing;
      meta.dt = vol.dt;
      *out = new pwtk_tensor{std::move(vol.values), meta};
    }
  });
}

uint32_t pwtk_tensor_rank(const pwtk_tensor* t) { return t ? static_cast<uint32_t>(t->t.rank()) : 0; }

uint64_t pwtk_tensor_extent(const pwtk_tensor* t, uint32_t axis) {
  if (!t || axis >= t->t.rank()) return 0;
  return t->t.dim(axis);
}

uint64_t pwtk_tensor_size(const pwtk_tensor* t) { return t ? t->t.size() : 0; }

float* pwtk_tensor_data(pwtk_tensor* t) { return t ? t->t.data() : nullptr; }

void pwtk_tensor_meta(const pwtk_tensor* t, double* spacing_mm, double* dt_s) {
  if (!t) return;
  if (spacing_mm) std::memcpy(spacing_mm, t->meta.spacing.data(), 3 * sizeof(double));
  if (dt_s) *dt_s = t->meta.dt;
}

void pwtk_tensor_set_meta(pwtk_tensor* t, const double* spacing_mm, double dt_s) {
  if (!t) return;
  if (spacing_mm) std::memcpy(t->meta.spacing.data(), spacing_mm, 3 * sizeof(double));
  t->meta.dt = dt_s;
}

void pwtk_tensor_free(pwtk_tensor* t) { delete t; }

pwtk_status pwtk_synth(const char* config_json, const char* out_dir) {
  return guarded([&] {
    pwtk::require(out_dir != nullptr, pwtk::ErrKind::usage, "null out_dir");
    pwtk::run_synth(or_empty(config_json), out_dir);
  });
}

pwtk_status pwtk_window(const char* case_dir, const char* out_pwt, int length, uint64_t seed, int has_seed) {
  return guarded([&] {
    pwtk::require(case_dir != nullptr && out_pwt != nullptr, pwtk::ErrKind::usage, "null argument");
    std::optional<uint64_t> s;
    if (has_seed) s = seed;
    pwtk::run_window(case_dir, out_pwt, length > 0 ? length : pwtk::kDefaultWindowLength, s);
  });
}

pwtk_status pwtk_preprocess(const char* case_or_corpus_dir, const char* out_dir, const char* config_json) {
  return guarded([&] {
    pwtk::require(case_or_corpus_dir != nullptr && out_dir != nullptr, pwtk::ErrKind::usage, "null argument");
    pwtk::run_preprocess(case_or_corpus_dir, out_dir, or_empty(config_json));
  });
}

pwtk_status pwtk_train(const char* data_dir, const char* arch, const char* config_json, const char* out_ckpt,
                       int paper_hparams) {
  return guarded([&] {
    pwtk::require(data_dir != nullptr && arch != nullptr && out_ckpt != nullptr, pwtk::ErrKind::usage,
                  "null argument");
    pwtk::run_train(data_dir, arch, or_empty(config_json), out_ckpt, paper_hparams != 0);
  });
}

pwtk_status pwtk_predict(const char* ckpt, const char* case_or_corpus_dir, const char* out_path,
                         const char* config_json) {
  return guarded([&] {
    pwtk::require(ckpt != nullptr && case_or_corpus_dir != nullptr && out_path != nullptr, pwtk::ErrKind::usage,
                  "null argument");
    pwtk::run_predict(ckpt, case_or_corpus_dir, out_path, or_empty(config_json));
  });
}

pwtk_status pwtk_evaluate(const char* pred_dir, const char* gt_dir, const char* report_csv) {
  return guarded([&] {
    pwtk::require(pred_dir != nullptr && gt_dir != nullptr && report_csv != nullptr, pwtk::ErrKind::usage,
                  "null argument");
    pwtk::run_evaluate(pred_dir, gt_dir, report_csv);
  });
}

pwtk_status pwtk_nmi(const char* ckpt, const char* case_dir, const char* out_csv, int bins,
                     const char* config_json) {
  return guarded([&] {
    pwtk::require(ckpt != nullptr && case_dir != nullptr && out_csv != nullptr, pwtk::ErrKind::usage,
                  "null argument");
    pwtk::run_nmi(ckpt, case_dir, out_csv, bins > 0 ? bins : 64, or_empty(config_json));
  });
}

pwtk_status pwtk_report(const char* const* metrics_csvs, const char* const* labels, int n, const char* nmi_csv,
                        const char* out_dir) {
  return guarded([&] {
    pwtk::require(out_dir != nullptr, pwtk::ErrKind::usage, "null out_dir");
    std::vector<std::string> csvs, labs;
    for (int i = 0; i < n; ++i) {
      pwtk::require(metrics_csvs && metrics_csvs[i], pwtk::ErrKind::usage, "null metrics path");
      csvs.emplace_back(metrics_csvs[i]);
      labs.emplace_back(labels && labels[i] ? labels[i] : "");
    }
    pwtk::run_report(csvs, labs, nmi_csv ? nmi_csv : "", out_dir);
  });
}

pwtk_status pwtk_selftest(void) {
  return guarded([&] {
    pwtk::require(pwtk::run_selftest(), pwtk::ErrKind::numeric, "selftest found failing checks");
  });
}

}  // extern "C"
