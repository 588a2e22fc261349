#include "tprune/tprune.h"

#include <new>
#include <string>

#include "tprune/dataset.hpp"
#include "tprune/importance.hpp"
#include "tprune/metrics.hpp"
#include "tprune/model_io.hpp"
#include "tprune/surgery.hpp"
#include "tprune/sweep.hpp"
#include "tprune/train.hpp"

struct tp_model {
  tprune::Model model;
};
struct tp_dataset {
  tprune::Dataset data;
};
struct tp_report {
  tprune::ImportanceReport report;
};

namespace {

thread_local std::string g_last_error;

tp_status to_status(tprune::ErrorCode code) {
  using tprune::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return TP_ERR_INVALID_ARGUMENT;
    case ErrorCode::kShape: return TP_ERR_SHAPE;
    case ErrorCode::kNumeric: return TP_ERR_NUMERIC;
    case ErrorCode::kIo: return TP_ERR_IO;
    case ErrorCode::kFormat: return TP_ERR_FORMAT;
    case ErrorCode::kChecksum: return TP_ERR_CHECKSUM;
    case ErrorCode::kVersion: return TP_ERR_VERSION;
    case ErrorCode::kFingerprint: return TP_ERR_FINGERPRINT;
    case ErrorCode::kFloor: return TP_ERR_FLOOR;
    case ErrorCode::kBudget: return TP_ERR_BUDGET;
    case ErrorCode::kNoUsableSamples: return TP_ERR_NO_USABLE_SAMPLES;
    case ErrorCode::kMissingCounterpart: return TP_ERR_MISSING_COUNTERPART;
    case ErrorCode::kUnsupportedDepth: return TP_ERR_UNSUPPORTED_DEPTH;
  }
  return TP_ERR_INTERNAL;
}

template <typename F>
tp_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return TP_OK;
  } catch (const tprune::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return TP_ERR_OUT_OF_MEMORY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return TP_ERR_INTERNAL;
  }
}

template <typename... Ptrs>
void require(Ptrs... ptrs) {
  if (((ptrs == nullptr) || ...)) tprune::fail(tprune::ErrorCode::kInvalidArgument, "null argument");
}

tprune::UNetConfig from_c(const tp_unet_config& c) {
  return {c.depth, c.base_channels, c.channel_multiplier, c.in_channels, c.out_channels, c.height, c.width};
}

void to_c(const tprune::UNetConfig& c, tp_unet_config* out) {
  *out = {c.depth, c.base_channels, c.channel_multiplier, c.in_channels, c.out_channels, c.height, c.width};
}

tprune::BenchmarkOptions from_c(const tp_bench_options& o) { return {o.samples, o.batch, o.warmup, o.reps, o.seed}; }

std::vector<std::string> lines(const char* const* comments, size_t n) {
  std::vector<std::string> out;
  for (size_t i = 0; comments && i < n; ++i) {
    if (comments[i]) out.emplace_back(comments[i]);
  }
  return out;
}

}  // namespace

extern "C" {

const char* tp_last_error(void) { return g_last_error.c_str(); }

const char* tp_status_name(tp_status status) {
  switch (status) {
    case TP_OK: return "ok";
    case TP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case TP_ERR_SHAPE: return "shape mismatch";
    case TP_ERR_NUMERIC: return "numeric error";
    case TP_ERR_IO: return "i/o error";
    case TP_ERR_FORMAT: return "format error";
    case TP_ERR_CHECKSUM: return "checksum mismatch";
    case TP_ERR_VERSION: return "version mismatch";
    case TP_ERR_FINGERPRINT: return "fingerprint mismatch";
    case TP_ERR_FLOOR: return "layer floor violated";
    case TP_ERR_BUDGET: return "prune budget exceeded";
    case TP_ERR_NO_USABLE_SAMPLES: return "no usable samples";
    case TP_ERR_MISSING_COUNTERPART: return "missing counterpart file";
    case TP_ERR_UNSUPPORTED_DEPTH: return "unsupported bit depth";
    case TP_ERR_OUT_OF_MEMORY: return "out of memory";
    case TP_ERR_INTERNAL: return "internal error";
  }
  return "unknown";
}

const char* tp_version(void) { return "1.0.0"; }

void tp_unet_config_default(tp_unet_config* config) {
  if (config) to_c(tprune::UNetConfig{}, config);
}

void tp_unet_config_reference(tp_unet_config* config) {
  if (config) to_c(tprune::reference_config(), config);
}

tp_status tp_model_build_unet(const tp_unet_config* config, uint64_t seed, tp_model** out) {
  return guarded([&] {
    require(config, out);
    *out = new tp_model{tprune::build_unet(from_c(*config), seed)};
  });
}

tp_status tp_model_load(const char* dir, tp_model** out) {
  return guarded([&] {
    require(dir, out);
    *out = new tp_model{tprune::load_model(dir)};
  });
}

tp_status tp_model_save(const tp_model* model, const char* dir, const char* provenance) {
  return guarded([&] {
    require(model, dir);
    if (provenance) {
      tprune::Model copy = model->model;
      copy.provenance = provenance;
      tprune::save_model(copy, dir);
    } else {
      tprune::save_model(model->model, dir);
    }
  });
}

void tp_model_free(tp_model* model) { delete model; }

tp_status tp_model_count_params(const tp_model* model, int64_t* out) {
  return guarded([&] {
    require(model, out);
    *out = tprune::count_params(model->model);
  });
}

tp_status tp_model_count_flops(const tp_model* model, int height, int width, int64_t* out) {
  return guarded([&] {
    require(model, out);
    *out = height > 0 && width > 0 ? tprune::count_flops(model->model, height, width)
                                   : tprune::count_flops(model->model);
  });
}

tp_status tp_model_prunable_channels(const tp_model* model, int64_t* out) {
  return guarded([&] {
    require(model, out);
    *out = model->model.prunable_channel_count();
  });
}

tp_status tp_model_prune_budget(const tp_model* model, int64_t* out) {
  return guarded([&] {
    require(model, out);
    *out = tprune::prune_budget(model->model);
  });
}

tp_status tp_model_fingerprint(const tp_model* model, uint64_t* out) {
  return guarded([&] {
    require(model, out);
    *out = tprune::fingerprint(model->model);
  });
}

tp_status tp_model_input_shape(const tp_model* model, int* channels, int* height, int* width) {
  return guarded([&] {
    require(model, channels, height, width);
    const auto& in = model->model.input_node();
    *channels = in.channels;
    *height = in.height;
    *width = in.width;
  });
}

tp_status tp_model_output_channels(const tp_model* model, int* out) {
  return guarded([&] {
    require(model, out);
    *out = model->model.layer(model->model.output()).channels;
  });
}

tp_status tp_model_predict(const tp_model* model, const float* images, size_t n, float* out, size_t out_len) {
  return guarded([&] {
    require(model, images, out);
    const auto& in = model->model.input_node();
    const auto& head = model->model.layer(model->model.output());
    if (n == 0) tprune::fail(tprune::ErrorCode::kInvalidArgument, "predict: n must be >= 1");
    const size_t per_out = static_cast<size_t>(head.channels) * head.height * head.width;
    if (out_len < n * per_out) tprune::fail(tprune::ErrorCode::kInvalidArgument, "predict: output buffer too small");
    const size_t per_in = static_cast<size_t>(in.channels) * in.height * in.width;
    tprune::Tensor batch({static_cast<int64_t>(n), in.channels, in.height, in.width},
                         std::vector<float>(images, images + n * per_in));
    const tprune::Tensor logits = tprune::predict(model->model, batch);
    std::copy(logits.data().begin(), logits.data().end(), out);
  });
}

tp_status tp_dataset_generate_blobs(int n, int height, int width, uint64_t seed, tp_dataset** out) {
  return guarded([&] {
    require(out);
    *out = new tp_dataset{tprune::generate_blobs(n, height, width, seed)};
  });
}

tp_status tp_dataset_load(const char* dir, tp_message_fn warn, void* user, tp_dataset** out) {
  return guarded([&] {
    require(dir, out);
    std::vector<std::string> warnings;
    auto data = tprune::load_pairs(dir, &warnings);
    if (warn) {
      for (const auto& w : warnings) warn(w.c_str(), user);
    }
    *out = new tp_dataset{std::move(data)};
  });
}

tp_status tp_dataset_save(const tp_dataset* data, const char* dir) {
  return guarded([&] {
    require(data, dir);
    tprune::save_pairs(dir, data->data);
  });
}

size_t tp_dataset_size(const tp_dataset* data) { return data ? data->data.size() : 0; }

tp_status tp_dataset_head(const tp_dataset* data, size_t count, tp_dataset** out) {
  return guarded([&] {
    require(data, out);
    if (count > data->data.size()) {
      tprune::fail(tprune::ErrorCode::kInvalidArgument, "requested " + std::to_string(count) +
                                                            " samples but only " + std::to_string(data->data.size()) +
                                                            " are available");
    }
    *out = new tp_dataset{tprune::Dataset(data->data.begin(), data->data.begin() + static_cast<std::ptrdiff_t>(count))};
  });
}

tp_status tp_dataset_split(const tp_dataset* data, double score_fraction, double eval_fraction, double train_fraction,
                           uint64_t seed, tp_dataset** score, tp_dataset** eval, tp_dataset** train) {
  return guarded([&] {
    require(data);
    auto parts = tprune::split(data->data, {score_fraction, eval_fraction, train_fraction, seed});
    if (score) *score = new tp_dataset{std::move(parts.score)};
    if (eval) *eval = new tp_dataset{std::move(parts.eval)};
    if (train) *train = new tp_dataset{std::move(parts.train)};
  });
}

void tp_dataset_free(tp_dataset* data) { delete data; }

void tp_train_options_default(tp_train_options* options) {
  if (!options) return;
  const tprune::TrainOptions d;
  *options = {d.steps, d.batch, d.learning_rate, d.seed};
}

tp_status tp_train(const tp_model* init, const tp_dataset* data, const tp_train_options* options,
                   tp_train_step_fn on_step, void* user, tp_model** out) {
  return guarded([&] {
    require(init, data, options, out);
    tprune::TrainOptions opt;
    opt.steps = options->steps;
    opt.batch = options->batch;
    opt.learning_rate = options->learning_rate;
    opt.seed = options->seed;
    auto trained = tprune::train(init->model, data->data, opt, [&](const tprune::TrainStep& s) {
      if (on_step) on_step(s.step, s.loss, s.iou, user);
    });
    *out = new tp_model{std::move(trained)};
  });
}

tp_status tp_importance_compute(const tp_model* model, const tp_dataset* score_data, uint64_t seed, int workers,
                                tp_report** out) {
  return guarded([&] {
    require(model, score_data, out);
    tprune::ImportanceOptions opt;
    opt.seed = seed;
    opt.workers = workers;
    *out = new tp_report{tprune::compute_importance(model->model, score_data->data, opt)};
  });
}

tp_status tp_report_save(const tp_report* report, const char* path, const char* const* comments, size_t n_comments) {
  return guarded([&] {
    require(report, path);
    tprune::write_report(report->report, path, lines(comments, n_comments));
  });
}

tp_status tp_report_load(const char* path, tp_report** out) {
  return guarded([&] {
    require(path, out);
    *out = new tp_report{tprune::read_report(path)};
  });
}

size_t tp_report_size(const tp_report* report) { return report ? report->report.scores.size() : 0; }
size_t tp_report_sample_count(const tp_report* report) { return report ? report->report.sample_count : 0; }
size_t tp_report_skipped(const tp_report* report) { return report ? report->report.skipped : 0; }
uint64_t tp_report_fingerprint(const tp_report* report) { return report ? report->report.model_fingerprint : 0; }

tp_status tp_report_entry(const tp_report* report, size_t index, const char** layer_id, int* filter_index,
                          double* score) {
  return guarded([&] {
    require(report, layer_id, filter_index, score);
    if (index >= report->report.scores.size()) tprune::fail(tprune::ErrorCode::kInvalidArgument, "report index out of range");
    const auto& s = report->report.scores[index];
    *layer_id = s.ref.layer_id.c_str();
    *filter_index = s.ref.filter_index;
    *score = s.score;
  });
}

void tp_report_free(tp_report* report) { delete report; }

tp_status tp_prune(const tp_model* model, const tp_report* report, int64_t count, tp_message_fn log, void* user,
                   tp_model** out) {
  return guarded([&] {
    require(model, report, out);
    auto result = tprune::prune_lowest(model->model, report->report, count);
    if (log) {
      for (const auto& s : result.selection.substitutions) log(s.c_str(), user);
    }
    *out = new tp_model{std::move(result.model)};
  });
}

tp_status tp_evaluate(const tp_model* model, const tp_dataset* data, double threshold, tp_eval_result* out) {
  return guarded([&] {
    require(model, data, out);
    const auto r = tprune::evaluate(model->model, data->data, threshold);
    *out = {r.mean_iou, r.mean_dice, r.n_samples, r.threshold, r.empty_empty};
  });
}

void tp_bench_options_default(tp_bench_options* options) {
  if (!options) return;
  const tprune::BenchmarkOptions d;
  *options = {d.samples, d.batch, d.warmup, d.reps, d.seed};
}

tp_status tp_benchmark(const tp_model* model, const tp_bench_options* options, tp_latency_stats* out) {
  return guarded([&] {
    require(model, out);
    tprune::BenchmarkOptions opt;
    if (options) opt = from_c(*options);
    const auto s = tprune::benchmark_latency(model->model, opt);
    *out = {s.mean_s, s.std_s, s.min_s, s.batch, s.samples, s.reps, s.warmup, s.std_defined ? 1 : 0};
  });
}

void tp_sweep_options_default(tp_sweep_options* options) {
  if (!options) return;
  options->threshold = 0.5;
  options->measure_latency = 1;
  tp_bench_options_default(&options->bench);
}

tp_status tp_sweep(const tp_model* model, const tp_report* report, const tp_dataset* eval, const int64_t* schedule,
                   size_t n_schedule, const tp_sweep_options* options, tp_sweep_record* records) {
  return guarded([&] {
    require(model, report, eval, schedule, records);
    tprune::SweepOptions opt;
    if (options) {
      opt.threshold = options->threshold;
      opt.measure_latency = options->measure_latency != 0;
      opt.bench = from_c(options->bench);
    }
    const auto out = tprune::sweep(model->model, report->report, eval->data,
                                   std::span<const int64_t>(schedule, n_schedule), opt);
    for (size_t i = 0; i < out.size(); ++i) {
      const auto& r = out[i];
      records[i] = {r.pruned, r.iou, r.iou_ratio, r.flops, r.flops_ratio, r.params, r.params_ratio, r.latency_s,
                    r.substitutions};
    }
  });
}

namespace {
std::vector<tprune::SweepRecord> from_c(const tp_sweep_record* records, size_t n) {
  std::vector<tprune::SweepRecord> out;
  for (size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    out.push_back({r.pruned, r.iou, r.iou_ratio, r.flops, r.flops_ratio, r.params, r.params_ratio, r.latency_s,
                   r.substitutions});
  }
  return out;
}
}  // namespace

tp_status tp_sweep_write_csv(const tp_sweep_record* records, size_t n, const char* path, const char* const* comments,
                             size_t n_comments) {
  return guarded([&] {
    require(records, path);
    tprune::write_sweep_csv(from_c(records, n), path, lines(comments, n_comments));
  });
}

tp_status tp_sweep_write_svgs(const tp_sweep_record* records, size_t n, const char* iou_params_path,
                              const char* time_flops_path, const char* const* comments, size_t n_comments) {
  return guarded([&] {
    require(records, iou_params_path, time_flops_path);
    tprune::write_sweep_svgs(from_c(records, n), iou_params_path, time_flops_path, lines(comments, n_comments));
  });
}

}  // extern "C"
