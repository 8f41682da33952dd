#ifndef SSLATTN_H
#define SSLATTN_H

/* C interface to libsslattn. Every call returns a status; on failure
 * sslattn_last_error() describes the problem (thread-local, valid until the
 * next call on the same thread). Strings are copied out with the
 * (buf, cap, needed) convention: *needed receives the length including the
 * terminator, and the call fails with SSLATTN_ERR_BUFFER when cap is short. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SSLATTN_API __declspec(dllexport)
#else
#define SSLATTN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sslattn_status {
  SSLATTN_OK = 0,
  SSLATTN_ERR_CONFIG = 1,
  SSLATTN_ERR_DATASET = 2,
  SSLATTN_ERR_NUMERIC = 3,
  SSLATTN_ERR_CHECKPOINT = 4,
  SSLATTN_ERR_ARGUMENT = 5,
  SSLATTN_ERR_BUFFER = 6,
  SSLATTN_ERR_INTERNAL = 7
} sslattn_status;

SSLATTN_API const char* sslattn_version(void);
SSLATTN_API const char* sslattn_last_error(void);
SSLATTN_API const char* sslattn_status_name(sslattn_status status);

/* 0 debug, 1 info, 2 warn, 3 error, 4 quiet. */
SSLATTN_API void sslattn_set_log_level(int level);

typedef struct sslattn_config sslattn_config;

SSLATTN_API sslattn_status sslattn_config_load(const char* path, sslattn_config** out);
SSLATTN_API sslattn_status sslattn_config_preset(const char* name, sslattn_config** out);
SSLATTN_API sslattn_status sslattn_config_set(sslattn_config* cfg, const char* key, const char* value);
SSLATTN_API sslattn_status sslattn_config_get(const sslattn_config* cfg, const char* key, char* buf, size_t cap,
                                              size_t* needed);
/* Applies SSLATTN__SECTION__KEY variables of the process environment. */
SSLATTN_API sslattn_status sslattn_config_apply_env(sslattn_config* cfg);
SSLATTN_API sslattn_status sslattn_config_validate(const sslattn_config* cfg);
SSLATTN_API sslattn_status sslattn_config_dump(const sslattn_config* cfg, char* buf, size_t cap, size_t* needed);
SSLATTN_API void sslattn_config_free(sslattn_config* cfg);

typedef struct sslattn_trainer sslattn_trainer;

SSLATTN_API sslattn_status sslattn_trainer_create(const sslattn_config* cfg, sslattn_trainer** out);
SSLATTN_API sslattn_status sslattn_trainer_resume(sslattn_trainer* trainer, const char* checkpoint);
/* Trains until stop_after_epoch epochs are complete; <= 0 runs the configured count. */
SSLATTN_API sslattn_status sslattn_trainer_run(sslattn_trainer* trainer, int stop_after_epoch);
SSLATTN_API sslattn_status sslattn_trainer_epochs_completed(const sslattn_trainer* trainer, int* out);
SSLATTN_API sslattn_status sslattn_trainer_last_checkpoint(const sslattn_trainer* trainer, char* buf, size_t cap,
                                                           size_t* needed);
SSLATTN_API void sslattn_trainer_free(sslattn_trainer* trainer);

SSLATTN_API sslattn_status sslattn_export_backbone(const char* checkpoint, const char* out);

typedef struct sslattn_eval_options {
  int64_t train_subset; /* 0 = whole split */
  int64_t test_subset;
  int64_t knn_k;
  double knn_tau;
  int probe_epochs;
  double probe_lr;
  int64_t query_k;
  int64_t export_count;
  uint64_t seed;
  int threads;
  const char* out_dir; /* PNG exports for interpret; may be NULL */
} sslattn_eval_options;

SSLATTN_API void sslattn_eval_options_init(sslattn_eval_options* opts);

typedef struct sslattn_report {
  int has_knn, has_probe, has_interpret;
  double knn_top1;
  double probe_top1;
  double avg_drop;
  double avg_increase;
  double avg_drop_literal;
  double avg_increase_literal;
} sslattn_report;

/* `model` is a full checkpoint or an exported backbone; `data_dir` holds
 * CIFAR-10 binary batches or train/ and val/ image folders. Results are
 * merged into *report (fields of other evaluations are left untouched). */
SSLATTN_API sslattn_status sslattn_eval_knn(const char* model, const char* data_dir, const sslattn_eval_options* opts,
                                            sslattn_report* report);
SSLATTN_API sslattn_status sslattn_eval_probe(const char* model, const char* data_dir,
                                              const sslattn_eval_options* opts, sslattn_report* report);
/* Trains the probe head, then CAM / explanation images / AD and AI on the test split. */
SSLATTN_API sslattn_status sslattn_eval_interpret(const char* model, const char* data_dir,
                                                  const sslattn_eval_options* opts, sslattn_report* report);
/* Nearest-neighbour query over the training split. negative != 0 selects
 * the least similar members of the anchor's top-20 set. Writes up to cap
 * indices; *count receives the number found. csv_out may be NULL. */
SSLATTN_API sslattn_status sslattn_eval_query(const char* model, const char* data_dir,
                                              const sslattn_eval_options* opts, int64_t anchor, int negative,
                                              const char* csv_out, int64_t* indices, size_t cap, size_t* count);

SSLATTN_API sslattn_status sslattn_report_json(const sslattn_report* report, char* buf, size_t cap, size_t* needed);
SSLATTN_API sslattn_status sslattn_report_write(const sslattn_report* report, const char* path);

/* Procedural stand-in for CIFAR-10 in its binary layout. */
SSLATTN_API sslattn_status sslattn_make_synthetic_cifar(const char* dir, int64_t train_count, int64_t test_count,
                                                        uint64_t seed);

#ifdef __cplusplus
}
#endif

#endif
