/*
 * tprune C API: structured channel pruning for UNet-style segmentation models.
 *
 * All objects are opaque handles owned by the caller and released with the
 * matching *_free function. Every call returns a tp_status; on failure the
 * thread-local message from tp_last_error() describes what went wrong.
 */
#ifndef TPRUNE_H
#define TPRUNE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(TPRUNE_BUILDING_LIBRARY)
#    define TP_API __declspec(dllexport)
#  else
#    define TP_API __declspec(dllimport)
#  endif
#else
#  define TP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

#define TP_VERSION_MAJOR 1
#define TP_VERSION_MINOR 0
#define TP_VERSION_PATCH 0

typedef enum tp_status {
  TP_OK = 0,
  TP_ERR_INVALID_ARGUMENT = 1,
  TP_ERR_SHAPE = 2,
  TP_ERR_NUMERIC = 3,
  TP_ERR_IO = 4,
  TP_ERR_FORMAT = 5,
  TP_ERR_CHECKSUM = 6,
  TP_ERR_VERSION = 7,
  TP_ERR_FINGERPRINT = 8,
  TP_ERR_FLOOR = 9,
  TP_ERR_BUDGET = 10,
  TP_ERR_NO_USABLE_SAMPLES = 11,
  TP_ERR_MISSING_COUNTERPART = 12,
  TP_ERR_UNSUPPORTED_DEPTH = 13,
  TP_ERR_OUT_OF_MEMORY = 98,
  TP_ERR_INTERNAL = 99
} tp_status;

typedef struct tp_model tp_model;
typedef struct tp_dataset tp_dataset;
typedef struct tp_report tp_report;

/* Receives one human-readable message (warnings, substitutions, progress). */
typedef void (*tp_message_fn)(const char* message, void* user);

TP_API const char* tp_last_error(void);
TP_API const char* tp_status_name(tp_status status);
TP_API const char* tp_version(void);

/* ---- Models ------------------------------------------------------------ */

typedef struct tp_unet_config {
  int depth;
  int base_channels;
  int channel_multiplier;
  int in_channels;
  int out_channels;
  int height;
  int width;
} tp_unet_config;

TP_API void tp_unet_config_default(tp_unet_config* config);
/* Depth-4, base-32 layout with 2944 prunable channels. */
TP_API void tp_unet_config_reference(tp_unet_config* config);

TP_API tp_status tp_model_build_unet(const tp_unet_config* config, uint64_t seed, tp_model** out);
TP_API tp_status tp_model_load(const char* dir, tp_model** out);
/* Writes dir/manifest.json and dir/weights.bin. `provenance` may be NULL. */
TP_API tp_status tp_model_save(const tp_model* model, const char* dir, const char* provenance);
TP_API void tp_model_free(tp_model* model);

TP_API tp_status tp_model_count_params(const tp_model* model, int64_t* out);
/* height/width <= 0 selects the model's native input size. */
TP_API tp_status tp_model_count_flops(const tp_model* model, int height, int width, int64_t* out);
TP_API tp_status tp_model_prunable_channels(const tp_model* model, int64_t* out);
TP_API tp_status tp_model_prune_budget(const tp_model* model, int64_t* out);
TP_API tp_status tp_model_fingerprint(const tp_model* model, uint64_t* out);
TP_API tp_status tp_model_input_shape(const tp_model* model, int* channels, int* height, int* width);
TP_API tp_status tp_model_output_channels(const tp_model* model, int* out);

/* Logits for `n` images laid out N,C,H,W; `out` must hold n*out_channels*H*W floats. */
TP_API tp_status tp_model_predict(const tp_model* model, const float* images, size_t n, float* out, size_t out_len);

/* ---- Datasets ---------------------------------------------------------- */

TP_API tp_status tp_dataset_generate_blobs(int n, int height, int width, uint64_t seed, tp_dataset** out);
/* Empty directories succeed with an empty dataset and a warning via `warn`. */
TP_API tp_status tp_dataset_load(const char* dir, tp_message_fn warn, void* user, tp_dataset** out);
TP_API tp_status tp_dataset_save(const tp_dataset* data, const char* dir);
TP_API size_t tp_dataset_size(const tp_dataset* data);
/* First `count` samples, as a new dataset. */
TP_API tp_status tp_dataset_head(const tp_dataset* data, size_t count, tp_dataset** out);
/* Seeded shuffle then contiguous partition; any output pointer may be NULL. */
TP_API tp_status tp_dataset_split(const tp_dataset* data, double score_fraction, double eval_fraction,
                                  double train_fraction, uint64_t seed, tp_dataset** score, tp_dataset** eval,
                                  tp_dataset** train);
TP_API void tp_dataset_free(tp_dataset* data);

/* ---- Training ---------------------------------------------------------- */

typedef struct tp_train_options {
  int steps;
  int batch;
  double learning_rate;
  uint64_t seed;
} tp_train_options;

typedef void (*tp_train_step_fn)(int step, double loss, double iou, void* user);

TP_API void tp_train_options_default(tp_train_options* options);
TP_API tp_status tp_train(const tp_model* init, const tp_dataset* data, const tp_train_options* options,
                          tp_train_step_fn on_step, void* user, tp_model** out);

/* ---- Importance -------------------------------------------------------- */

TP_API tp_status tp_importance_compute(const tp_model* model, const tp_dataset* score_data, uint64_t seed,
                                       int workers, tp_report** out);
/* `comments` (may be NULL) holds n_comments provenance lines for the header. */
TP_API tp_status tp_report_save(const tp_report* report, const char* path, const char* const* comments,
                                size_t n_comments);
TP_API tp_status tp_report_load(const char* path, tp_report** out);
TP_API size_t tp_report_size(const tp_report* report);
TP_API size_t tp_report_sample_count(const tp_report* report);
TP_API size_t tp_report_skipped(const tp_report* report);
TP_API uint64_t tp_report_fingerprint(const tp_report* report);
/* Row `index` of the report: layer id (valid while the report lives), filter, score. */
TP_API tp_status tp_report_entry(const tp_report* report, size_t index, const char** layer_id, int* filter_index,
                                 double* score);
TP_API void tp_report_free(tp_report* report);

/* ---- Pruning ----------------------------------------------------------- */

/* Removes the `count` lowest-scoring channels. Floor substitutions are sent to `log`. */
TP_API tp_status tp_prune(const tp_model* model, const tp_report* report, int64_t count, tp_message_fn log,
                          void* user, tp_model** out);

/* ---- Metrics ----------------------------------------------------------- */

typedef struct tp_eval_result {
  double mean_iou;
  double mean_dice;
  size_t n_samples;
  double threshold;
  size_t empty_empty;
} tp_eval_result;

typedef struct tp_bench_options {
  int samples;
  int batch;
  int warmup;
  int reps;
  uint64_t seed;
} tp_bench_options;

typedef struct tp_latency_stats {
  double mean_s;
  double std_s;
  double min_s;
  int batch;
  int samples;
  int reps;
  int warmup;
  int std_defined;
} tp_latency_stats;

TP_API tp_status tp_evaluate(const tp_model* model, const tp_dataset* data, double threshold, tp_eval_result* out);
/* Defaults: 100 samples in batches of 10, 1 warmup pass, 3 timed repetitions. */
TP_API void tp_bench_options_default(tp_bench_options* options);
TP_API tp_status tp_benchmark(const tp_model* model, const tp_bench_options* options, tp_latency_stats* out);

/* ---- Sweep ------------------------------------------------------------- */

typedef struct tp_sweep_record {
  int64_t pruned;
  double iou;
  double iou_ratio;
  int64_t flops;
  double flops_ratio;
  int64_t params;
  double params_ratio;
  double latency_s;
  size_t substitutions;
} tp_sweep_record;

typedef struct tp_sweep_options {
  double threshold;
  int measure_latency;
  tp_bench_options bench;
} tp_sweep_options;

TP_API void tp_sweep_options_default(tp_sweep_options* options);
/* `records` must hold n_schedule entries. The schedule is validated before any work. */
TP_API tp_status tp_sweep(const tp_model* model, const tp_report* report, const tp_dataset* eval,
                          const int64_t* schedule, size_t n_schedule, const tp_sweep_options* options,
                          tp_sweep_record* records);
TP_API tp_status tp_sweep_write_csv(const tp_sweep_record* records, size_t n, const char* path,
                                    const char* const* comments, size_t n_comments);
TP_API tp_status tp_sweep_write_svgs(const tp_sweep_record* records, size_t n, const char* iou_params_path,
                                     const char* time_flops_path, const char* const* comments, size_t n_comments);

#ifdef __cplusplus
}
#endif

#endif /* TPRUNE_H */
