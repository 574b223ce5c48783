/* SPDX-License-Identifier: Apache-2.0
 *
 * pwtk: perfusion-weighted imaging toolkit, public C API.
 *
 * The library wraps a C++ core behind an extern "C" surface with opaque
 * handles and status codes. Every function returns PWTK_OK on success;
 * on failure, pwtk_last_error() describes the problem (the message is
 * thread-local and valid until the next failing call on that thread).
 *
 * Pipeline stage functions operate on files and directories and mirror the
 * CLI subcommands one to one. `config_json` arguments take the pipeline
 * configuration document (JSON text, not a path); pass NULL or "" for
 * defaults. When a config omits "seed", the PWTK_SEED environment variable
 * supplies it.
 */
#ifndef PWTK_H
#define PWTK_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef PWTK_API
#define PWTK_API __attribute__((visibility("default")))
#endif

typedef enum pwtk_status {
  PWTK_OK = 0,
  PWTK_ERR_USAGE = 1,   /* bad arguments or config */
  PWTK_ERR_DATA = 2,    /* malformed or inconsistent data/files */
  PWTK_ERR_NUMERIC = 3, /* numerical or degenerate-signal failure */
  PWTK_ERR_INTERNAL = 4
} pwtk_status;

PWTK_API const char* pwtk_version(void);
PWTK_API const char* pwtk_last_error(void);

/* Caps kernel worker threads; results are identical for every setting. */
PWTK_API void pwtk_set_threads(int n);

/* ------------------------------------------------------------------ *
 * Tensors ("PWTK" raw interchange format, single precision)           *
 * ------------------------------------------------------------------ */

typedef struct pwtk_tensor pwtk_tensor;

PWTK_API pwtk_status pwtk_tensor_create(const uint64_t* extents, uint32_t rank, pwtk_tensor** out);
PWTK_API pwtk_status pwtk_tensor_read(const char* path, pwtk_tensor** out);
PWTK_API pwtk_status pwtk_tensor_write(const pwtk_tensor* t, const char* path);
/* Reads a NIfTI-1 volume (.nii, optionally gzip-compressed). */
PWTK_API pwtk_status pwtk_nifti_read(const char* path, pwtk_tensor** out);

PWTK_API uint32_t pwtk_tensor_rank(const pwtk_tensor* t);
PWTK_API uint64_t pwtk_tensor_extent(const pwtk_tensor* t, uint32_t axis);
PWTK_API uint64_t pwtk_tensor_size(const pwtk_tensor* t);
PWTK_API float* pwtk_tensor_data(pwtk_tensor* t);
/* spacing_mm: 3 doubles (sz, sy, sx); dt_s: seconds (0 when rank < 4). */
PWTK_API void pwtk_tensor_meta(const pwtk_tensor* t, double* spacing_mm, double* dt_s);
PWTK_API void pwtk_tensor_set_meta(pwtk_tensor* t, const double* spacing_mm, double dt_s);
PWTK_API void pwtk_tensor_free(pwtk_tensor* t);

/* ------------------------------------------------------------------ *
 * Pipeline stages                                                      *
 * ------------------------------------------------------------------ */

/* Writes one directory per synthetic case under out_dir. */
PWTK_API pwtk_status pwtk_synth(const char* config_json, const char* out_dir);

/* Detects the contrast peak and writes the windowed PWI plus a JSON
 * sidecar (same path with a .json extension). length <= 0 selects the
 * default of 26; seed_env != 0 overrides the seed. */
PWTK_API pwtk_status pwtk_window(const char* case_dir, const char* out_pwt, int length, uint64_t seed,
                                 int has_seed);

PWTK_API pwtk_status pwtk_preprocess(const char* case_or_corpus_dir, const char* out_dir,
                                     const char* config_json);

/* arch: "standard" | "data-driven" | "single" | "branched". Writes the
 * checkpoint and a loss.csv next to it. */
PWTK_API pwtk_status pwtk_train(const char* data_dir, const char* arch, const char* config_json,
                                const char* out_ckpt, int paper_hparams);

/* out_path is a .pwt file for a single case directory, or a directory
 * receiving <case_id>.pwt files for a corpus. */
PWTK_API pwtk_status pwtk_predict(const char* ckpt, const char* case_or_corpus_dir, const char* out_path,
                                  const char* config_json);

PWTK_API pwtk_status pwtk_evaluate(const char* pred_dir, const char* gt_dir, const char* report_csv);

PWTK_API pwtk_status pwtk_nmi(const char* ckpt, const char* case_dir, const char* out_csv, int bins,
                              const char* config_json);

/* metrics_csvs/labels: n parallel arrays (labels entries may be NULL).
 * nmi_csv may be NULL. Writes SVG figures under out_dir. */
PWTK_API pwtk_status pwtk_report(const char* const* metrics_csvs, const char* const* labels, int n,
                                 const char* nmi_csv, const char* out_dir);

/* Gradient checks for every kernel plus metric oracle cross-checks. */
PWTK_API pwtk_status pwtk_selftest(void);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PWTK_H */
