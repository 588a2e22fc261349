// Command-line front end. Talks to the engine only through tprune.h.

#include <tprune/tprune.h>

#include <CLI11.hpp>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(tp_status st, const std::string& what) {
  if (st != TP_OK) {
    throw CliError(what + ": " + tp_status_name(st) + ": " + tp_last_error());
  }
}

struct ModelDel {
  void operator()(tp_model* m) const { tp_model_free(m); }
};
struct DataDel {
  void operator()(tp_dataset* d) const { tp_dataset_free(d); }
};
struct ReportDel {
  void operator()(tp_report* r) const { tp_report_free(r); }
};
using ModelPtr = std::unique_ptr<tp_model, ModelDel>;
using DataPtr = std::unique_ptr<tp_dataset, DataDel>;
using ReportPtr = std::unique_ptr<tp_report, ReportDel>;

struct Globals {
  std::uint64_t seed = 0;
  std::string model;
  std::string data;
  std::string out;
  // synthetic data, used when --data is not given
  int n = 512;
  int hw = 64;
  std::uint64_t data_seed = 0;
  // one split shared by every command so that scores, training and eval never overlap
  double train_frac = 0.5;
  double score_frac = 0.25;
  double eval_frac = 0.25;
  std::uint64_t split_seed = 0;
};

Globals g;

// Echo of the resolved configuration. Options that cannot change an
// artifact's content (output path, config file, worker count) are left out.
std::vector<std::string> resolved_config(const CLI::App& app, const CLI::App* sub) {
  std::vector<std::string> lines;
  auto dump = [&](const CLI::App& a, const std::string& prefix) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config" || name == "out" || name == "workers") continue;
      std::string value;
      if (opt->count() > 0) {
        for (const auto& r : opt->results()) value += (value.empty() ? "" : " ") + r;
      } else {
        value = opt->get_default_str();
        if (value.empty() && opt->get_type_size() == 0) value = "false";
      }
      lines.push_back(prefix + name + "=" + value);
    }
  };
  dump(app, "");
  if (sub) dump(*sub, sub->get_name() + ".");
  return lines;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

std::string join(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

fs::path temp_sibling(const fs::path& target) {
  fs::path t = target;
  t += ".partial";
  return t;
}

void remove_quietly(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
}

// Writes via `write` into a temporary sibling and renames it over `target` on
// success. Any failure removes the temporary.
void atomic_output(const fs::path& target, const std::function<void(const fs::path&)>& write) {
  if (target.empty()) throw CliError("--out is required");
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = temp_sibling(target);
  remove_quietly(tmp);
  try {
    write(tmp);
    if (fs::is_directory(target)) fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    remove_quietly(tmp);
    throw;
  }
}

ModelPtr load_model() {
  if (g.model.empty()) throw CliError("--model is required");
  tp_model* m = nullptr;
  check(tp_model_load(g.model.c_str(), &m), "loading model " + g.model);
  return ModelPtr(m);
}

void warn(const char* msg, void*) { std::fprintf(stderr, "warning: %s\n", msg); }

DataPtr load_all_data() {
  tp_dataset* d = nullptr;
  if (!g.data.empty()) {
    check(tp_dataset_load(g.data.c_str(), warn, nullptr, &d), "loading dataset " + g.data);
  } else {
    check(tp_dataset_generate_blobs(g.n, g.hw, g.hw, g.data_seed, &d), "generating blob dataset");
  }
  return DataPtr(d);
}

enum class Part { kTrain, kScore, kEval };

DataPtr load_split(Part part) {
  DataPtr all = load_all_data();
  tp_dataset *score = nullptr, *eval = nullptr, *train = nullptr;
  check(tp_dataset_split(all.get(), g.score_frac, g.eval_frac, g.train_frac, g.split_seed, &score, &eval, &train),
        "splitting dataset");
  DataPtr s(score), e(eval), t(train);
  switch (part) {
    case Part::kTrain: return t;
    case Part::kScore: return s;
    case Part::kEval: return e;
  }
  return nullptr;
}

DataPtr score_subset(int samples) {
  DataPtr score = load_split(Part::kScore);
  if (samples <= 0) return score;
  tp_dataset* head = nullptr;
  check(tp_dataset_head(score.get(), static_cast<size_t>(samples), &head), "selecting scoring samples");
  return DataPtr(head);
}

ReportPtr compute_report(const tp_model* model, int samples, int workers) {
  DataPtr score = score_subset(samples);
  tp_report* r = nullptr;
  check(tp_importance_compute(model, score.get(), g.seed, workers, &r), "computing importance");
  if (tp_report_skipped(r) > 0) {
    std::fprintf(stderr, "warning: %zu scoring samples had a zero output gradient and were skipped\n",
                 tp_report_skipped(r));
  }
  return ReportPtr(r);
}

// ---- commands -----------------------------------------------------------

struct TrainArgs {
  int depth = 2, base = 8, mult = 2;
  int steps = 200, batch = 8;
  double lr = 5e-3;
  std::string log;
};

struct LogSink {
  std::FILE* f = nullptr;
};

void on_train_step(int step, double loss, double iou, void* user) {
  auto* sink = static_cast<LogSink*>(user);
  if (sink->f) std::fprintf(sink->f, "%d,%.17g,%.17g\n", step, loss, iou);
  if (step % 20 == 0) std::fprintf(stderr, "step %d loss %.5f iou %.4f\n", step, loss, iou);
}

void cmd_train(const TrainArgs& a, const std::vector<std::string>& config) {
  ModelPtr init;
  if (!g.model.empty()) {
    init = load_model();
  } else {
    tp_unet_config cfg;
    tp_unet_config_default(&cfg);
    cfg.depth = a.depth;
    cfg.base_channels = a.base;
    cfg.channel_multiplier = a.mult;
    cfg.height = g.hw;
    cfg.width = g.hw;
    tp_model* m = nullptr;
    check(tp_model_build_unet(&cfg, g.seed, &m), "building model");
    init.reset(m);
  }
  DataPtr train = load_split(Part::kTrain);
  tp_train_options opt;
  tp_train_options_default(&opt);
  opt.steps = a.steps;
  opt.batch = a.batch;
  opt.learning_rate = a.lr;
  opt.seed = g.seed;

  const fs::path log_path = a.log.empty() ? fs::path(g.out + ".train_log.csv") : fs::path(a.log);
  const fs::path log_tmp = temp_sibling(log_path);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  LogSink sink{std::fopen(log_tmp.c_str(), "wb")};
  if (!sink.f) throw CliError("cannot write " + log_tmp.string());
  std::fprintf(sink.f, "# schema: tprune.train_log.v1\n");
  for (const auto& c : config) std::fprintf(sink.f, "# %s\n", c.c_str());
  std::fprintf(sink.f, "step,loss,iou\n");

  tp_model* trained = nullptr;
  const tp_status st = tp_train(init.get(), train.get(), &opt, on_train_step, &sink, &trained);
  const bool log_ok = std::fclose(sink.f) == 0;
  if (st != TP_OK || !log_ok) {
    remove_quietly(log_tmp);
    check(st, "training");
    throw CliError("failed writing " + log_tmp.string());
  }
  ModelPtr model(trained);
  try {
    const std::string prov = join(config);
    atomic_output(g.out, [&](const fs::path& tmp) { check(tp_model_save(model.get(), tmp.c_str(), prov.c_str()), "saving model"); });
  } catch (...) {
    remove_quietly(log_tmp);
    throw;
  }
  fs::rename(log_tmp, log_path);
}

struct ImportanceArgs {
  int samples = 0;
  int workers = 1;
};

void cmd_importance(const ImportanceArgs& a, const std::vector<std::string>& config) {
  ModelPtr model = load_model();
  ReportPtr report = compute_report(model.get(), a.samples, a.workers);
  const auto lines = c_strings(config);
  atomic_output(g.out, [&](const fs::path& tmp) {
    check(tp_report_save(report.get(), tmp.c_str(), lines.data(), lines.size()), "writing report");
  });
}

void log_line(const char* msg, void*) { std::fprintf(stderr, "%s\n", msg); }

struct PruneArgs {
  std::string report;
  std::int64_t count = 0;
};

ReportPtr load_report(const std::string& path) {
  tp_report* r = nullptr;
  check(tp_report_load(path.c_str(), &r), "loading report " + path);
  return ReportPtr(r);
}

void cmd_prune(const PruneArgs& a, const std::vector<std::string>& config) {
  ModelPtr model = load_model();
  if (a.report.empty()) throw CliError("--report is required");
  ReportPtr report = load_report(a.report);
  tp_model* pruned = nullptr;
  check(tp_prune(model.get(), report.get(), a.count, log_line, nullptr, &pruned), "pruning");
  ModelPtr out(pruned);
  const std::string prov = join(config);
  atomic_output(g.out, [&](const fs::path& tmp) {
    check(tp_model_save(out.get(), tmp.c_str(), prov.c_str()), "saving pruned model");
    // smoke test: the saved model must load and run
    tp_model* back = nullptr;
    check(tp_model_load(tmp.c_str(), &back), "reloading pruned model");
    ModelPtr reloaded(back);
    int c = 0, h = 0, w = 0;
    int k = 0;
    check(tp_model_input_shape(reloaded.get(), &c, &h, &w), "reading input shape");
    check(tp_model_output_channels(reloaded.get(), &k), "reading output channels");
    std::vector<float> x(static_cast<size_t>(c) * h * w, 0.5f), y(static_cast<size_t>(k) * h * w);
    check(tp_model_predict(reloaded.get(), x.data(), 1, y.data(), y.size()), "smoke-testing pruned model");
  });
}

struct BenchArgs {
  int samples = 100, batch = 10, warmup = 1, reps = 3;
};

tp_bench_options bench_options(const BenchArgs& a) {
  tp_bench_options b;
  tp_bench_options_default(&b);
  b.samples = a.samples;
  b.batch = a.batch;
  b.warmup = a.warmup;
  b.reps = a.reps;
  b.seed = g.seed;
  return b;
}

struct SweepArgs {
  std::string report;
  std::vector<std::int64_t> schedule;
  bool no_latency = false;
  double threshold = 0.5;
  int samples = 0;
  int workers = 1;
  BenchArgs bench;
};

void cmd_sweep(const SweepArgs& a, const std::vector<std::string>& config) {
  ModelPtr model = load_model();
  std::vector<std::int64_t> schedule = a.schedule;
  if (schedule.empty()) {
    std::int64_t n = 0, budget = 0;
    check(tp_model_prunable_channels(model.get(), &n), "counting channels");
    check(tp_model_prune_budget(model.get(), &budget), "computing budget");
    for (int k = 0; k <= 9; ++k) {
      const std::int64_t p = std::min<std::int64_t>(n * k / 10, budget);
      if (schedule.empty() || p > schedule.back()) schedule.push_back(p);
    }
  }
  // validate before any scoring work
  std::int64_t budget = 0;
  check(tp_model_prune_budget(model.get(), &budget), "computing budget");
  for (size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i] < 0 || (i > 0 && schedule[i] <= schedule[i - 1])) {
      throw CliError("--schedule must be non-negative and strictly ascending");
    }
    if (schedule[i] > budget) {
      throw CliError("--schedule entry " + std::to_string(schedule[i]) + " exceeds the prune budget of " +
                     std::to_string(budget));
    }
  }
  ReportPtr report = a.report.empty() ? compute_report(model.get(), a.samples, a.workers) : load_report(a.report);
  DataPtr eval = load_split(Part::kEval);
  tp_sweep_options opt;
  tp_sweep_options_default(&opt);
  opt.threshold = a.threshold;
  opt.measure_latency = a.no_latency ? 0 : 1;
  opt.bench = bench_options(a.bench);
  std::vector<tp_sweep_record> records(schedule.size());
  check(tp_sweep(model.get(), report.get(), eval.get(), schedule.data(), schedule.size(), &opt, records.data()),
        "sweep");

  const fs::path csv = g.out;
  fs::path stem = csv;
  stem.replace_extension();
  const fs::path svg_a = stem.string() + "_iou_params.svg", svg_b = stem.string() + "_time_flops.svg";
  const auto lines = c_strings(config);
  atomic_output(csv, [&](const fs::path& tmp) {
    const fs::path ta = temp_sibling(svg_a), tb = temp_sibling(svg_b);
    try {
      check(tp_sweep_write_csv(records.data(), records.size(), tmp.c_str(), lines.data(), lines.size()), "writing CSV");
      check(tp_sweep_write_svgs(records.data(), records.size(), ta.c_str(), tb.c_str(), lines.data(), lines.size()),
            "writing charts");
      fs::rename(ta, svg_a);
      fs::rename(tb, svg_b);
    } catch (...) {
      remove_quietly(ta);
      remove_quietly(tb);
      throw;
    }
  });
  for (const auto& r : records) {
    std::fprintf(stderr, "P=%" PRId64 " iou=%.4f flops_ratio=%.4f params_ratio=%.4f%s\n", r.pruned, r.iou,
                 r.flops_ratio, r.params_ratio, r.substitutions ? " (substitutions)" : "");
  }
}

void print_header(const char* schema, const std::vector<std::string>& config) {
  std::printf("# schema: %s\n", schema);
  for (const auto& c : config) std::printf("# %s\n", c.c_str());
}

void cmd_eval(double threshold, const std::vector<std::string>& config) {
  ModelPtr model = load_model();
  DataPtr eval = load_split(Part::kEval);
  tp_eval_result r;
  check(tp_evaluate(model.get(), eval.get(), threshold, &r), "evaluating");
  print_header("tprune.eval.v1", config);
  std::printf("iou,dice,n_samples,threshold,empty_empty\n");
  std::printf("%.17g,%.17g,%zu,%.17g,%zu\n", r.mean_iou, r.mean_dice, r.n_samples, r.threshold, r.empty_empty);
}

void cmd_bench(const BenchArgs& a, const std::vector<std::string>& config) {
  ModelPtr model = load_model();
  const tp_bench_options opt = bench_options(a);
  tp_latency_stats s;
  check(tp_benchmark(model.get(), &opt, &s), "benchmarking");
  print_header("tprune.bench.v1", config);
  std::printf("mean_s,std_s,min_s,std_defined,samples,batch,warmup,reps\n");
  std::printf("%.17g,%.17g,%.17g,%d,%d,%d,%d,%d\n", s.mean_s, s.std_s, s.min_s, s.std_defined, s.samples, s.batch,
              s.warmup, s.reps);
}

void cmd_flops(int height, int width, const std::vector<std::string>& config) {
  ModelPtr model = load_model();
  std::int64_t flops = 0, params = 0, channels = 0;
  check(tp_model_count_flops(model.get(), height, width, &flops), "counting FLOPs");
  check(tp_model_count_params(model.get(), &params), "counting parameters");
  check(tp_model_prunable_channels(model.get(), &channels), "counting channels");
  int c = 0, h = 0, w = 0;
  check(tp_model_input_shape(model.get(), &c, &h, &w), "reading input shape");
  if (height > 0 && width > 0) h = height, w = width;
  print_header("tprune.flops.v1", config);
  std::printf("flops,params,prunable_channels,height,width\n");
  std::printf("%" PRId64 ",%" PRId64 ",%" PRId64 ",%d,%d\n", flops, params, channels, h, w);
}

void cmd_gen_data() {
  DataPtr all = load_all_data();
  atomic_output(g.out, [&](const fs::path& tmp) { check(tp_dataset_save(all.get(), tmp.c_str()), "writing dataset"); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tprune: gradient-based channel pruning for UNet segmentation models"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand name
  app.set_config("--config", "", "TOML/INI file with option defaults (flags take precedence)");

  app.add_option("--seed", g.seed, "Seed for initialization, training order, scoring and benchmarks");
  app.add_option("--model", g.model, "Model directory to read");
  app.add_option("--data", g.data, "Dataset directory (images/, masks/); synthetic blobs when omitted");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--n", g.n, "Synthetic dataset size")->check(CLI::PositiveNumber);
  app.add_option("--hw", g.hw, "Synthetic image height and width")->check(CLI::Range(32, 4096));
  app.add_option("--data-seed", g.data_seed, "Seed of the synthetic dataset");
  app.add_option("--train-frac", g.train_frac, "Fraction of samples in the training split")->check(CLI::Range(0.0, 1.0));
  app.add_option("--score-frac", g.score_frac, "Fraction of samples in the scoring split")->check(CLI::Range(0.0, 1.0));
  app.add_option("--eval-frac", g.eval_frac, "Fraction of samples in the evaluation split")->check(CLI::Range(0.0, 1.0));
  app.add_option("--split-seed", g.split_seed, "Seed of the split shuffle");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a UNet on the training split");
  c_train->add_option("--depth", train.depth, "UNet depth (new models)");
  c_train->add_option("--base", train.base, "Channels of the first level (new models)");
  c_train->add_option("--mult", train.mult, "Channel multiplier per level (new models)");
  c_train->add_option("--steps", train.steps, "Optimizer steps");
  c_train->add_option("--batch", train.batch, "Minibatch size");
  c_train->add_option("--lr", train.lr, "Adam learning rate");
  c_train->add_option("--log", train.log, "Training log CSV (default: <out>.train_log.csv)");

  ImportanceArgs imp;
  auto* c_imp = app.add_subcommand("importance", "Score every prunable channel on the scoring split");
  c_imp->add_option("--samples", imp.samples, "Scoring samples to use, e.g. 39 or 235 (0 = whole split)")
      ->check(CLI::NonNegativeNumber);
  c_imp->add_option("--workers", imp.workers, "Worker threads")->check(CLI::PositiveNumber);

  PruneArgs prune;
  auto* c_prune = app.add_subcommand("prune", "Remove the P least important channels");
  c_prune->add_option("--report", prune.report, "Importance report")->required();
  c_prune->add_option("-P,--count", prune.count, "Channels to remove")->required();

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Prune at each count of a schedule and measure the result");
  c_sweep->add_option("--report", sweep.report, "Importance report (computed from the scoring split when omitted)");
  c_sweep->add_option("--schedule", sweep.schedule, "Ascending prune counts")->delimiter(',');
  c_sweep->add_flag("--no-latency", sweep.no_latency, "Skip latency measurement (latency_s is written as 0)");
  c_sweep->add_option("--threshold", sweep.threshold, "Probability threshold for masks");
  c_sweep->add_option("--samples", sweep.samples, "Scoring samples when computing the report");
  c_sweep->add_option("--workers", sweep.workers, "Worker threads when computing the report")->check(CLI::PositiveNumber);
  c_sweep->add_option("--bench-samples", sweep.bench.samples, "Latency: inputs per repetition");
  c_sweep->add_option("--bench-batch", sweep.bench.batch, "Latency: batch size");
  c_sweep->add_option("--bench-warmup", sweep.bench.warmup, "Latency: warmup passes");
  c_sweep->add_option("--bench-reps", sweep.bench.reps, "Latency: timed repetitions");

  double eval_threshold = 0.5;
  auto* c_eval = app.add_subcommand("eval", "Mean IoU and Dice on the evaluation split");
  c_eval->add_option("--threshold", eval_threshold, "Probability threshold for masks");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Wall-clock inference latency");
  c_bench->add_option("--samples", bench.samples, "Inputs per repetition")->check(CLI::PositiveNumber);
  c_bench->add_option("--batch", bench.batch, "Batch size")->check(CLI::PositiveNumber);
  c_bench->add_option("--warmup", bench.warmup, "Warmup passes")->check(CLI::NonNegativeNumber);
  c_bench->add_option("--reps", bench.reps, "Timed repetitions")->check(CLI::PositiveNumber);

  int flops_h = 0, flops_w = 0;
  auto* c_flops = app.add_subcommand("flops", "FLOPs and parameter counts");
  c_flops->add_option("--height", flops_h, "Input height (default: the model's own)");
  c_flops->add_option("--width", flops_w, "Input width (default: the model's own)");

  auto* c_gen = app.add_subcommand("gen-data", "Write the synthetic blob dataset as PPM/PGM pairs");

  CLI11_PARSE(app, argc, argv);
  if (app.get_option("--data-seed")->count() == 0) g.data_seed = g.seed;
  if (app.get_option("--split-seed")->count() == 0) g.split_seed = g.seed;

  CLI::App* sub = app.get_subcommands().front();
  std::vector<std::string> config = resolved_config(app, sub);
  for (auto& line : config) {
    if (line.rfind("data-seed=", 0) == 0) line = "data-seed=" + std::to_string(g.data_seed);
    if (line.rfind("split-seed=", 0) == 0) line = "split-seed=" + std::to_string(g.split_seed);
  }
  try {
    if (sub == c_train) cmd_train(train, config);
    else if (sub == c_imp) cmd_importance(imp, config);
    else if (sub == c_prune) cmd_prune(prune, config);
    else if (sub == c_sweep) cmd_sweep(sweep, config);
    else if (sub == c_eval) cmd_eval(eval_threshold, config);
    else if (sub == c_bench) cmd_bench(bench, config);
    else if (sub == c_flops) cmd_flops(flops_h, flops_w, config);
    else if (sub == c_gen) cmd_gen_data();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tprune %s: %s\n", sub->get_name().c_str(), e.what());
    return 1;
  }
  return 0;
}
