#include "tprune/sweep.hpp"

#include <cstdio>
#include <fstream>

#include "tprune/model_io.hpp"
#include "tprune/surgery.hpp"

namespace tprune {

std::vector<SweepRecord> sweep(const Model& model, const ImportanceReport& report, std::span<const DatasetPair> eval,
                               std::span<const std::int64_t> schedule, const SweepOptions& options) {
  if (schedule.empty()) fail(ErrorCode::kInvalidArgument, "sweep: empty schedule");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i] < 0 || (i > 0 && schedule[i] <= schedule[i - 1])) {
      fail(ErrorCode::kInvalidArgument, "sweep: schedule must be non-negative and strictly ascending");
    }
  }
  if (schedule.back() > prune_budget(model)) {
    fail(ErrorCode::kBudget, "sweep: P = " + std::to_string(schedule.back()) + " exceeds the prunable budget of " +
                                 std::to_string(prune_budget(model)) + " channels");
  }
  if (report.model_fingerprint != fingerprint(model)) {
    fail(ErrorCode::kFingerprint, "sweep: importance report does not belong to this model");
  }
  if (eval.empty()) fail(ErrorCode::kInvalidArgument, "sweep: empty eval split");

  const double base_iou = evaluate(model, eval, options.threshold).mean_iou;
  const auto base_flops = count_flops(model);
  const auto base_params = count_params(model);
  std::vector<SweepRecord> out;
  for (std::int64_t p : schedule) {
    auto pruned = prune_lowest(model, report, p);
    SweepRecord r;
    r.pruned = p;
    r.iou = p == 0 ? base_iou : evaluate(pruned.model, eval, options.threshold).mean_iou;
    r.iou_ratio = base_iou > 0.0 ? r.iou / base_iou : 0.0;
    r.flops = count_flops(pruned.model);
    r.flops_ratio = static_cast<double>(r.flops) / static_cast<double>(base_flops);
    r.params = count_params(pruned.model);
    r.params_ratio = static_cast<double>(r.params) / static_cast<double>(base_params);
    if (options.measure_latency) r.latency_s = benchmark_latency(pruned.model, options.bench).mean_s;
    r.substitutions = pruned.selection.substitutions.size();
    out.push_back(r);
  }
  return out;
}

std::vector<SweepRecord> sweep(const Model& model, std::span<const DatasetPair> score_split,
                               std::span<const DatasetPair> eval_split, std::span<const std::int64_t> schedule,
                               const SweepOptions& options, const ImportanceOptions& importance) {
  if (!schedule.empty() && schedule.back() > prune_budget(model)) {
    fail(ErrorCode::kBudget, "sweep: schedule exceeds the prunable budget");
  }
  return sweep(model, compute_importance(model, score_split, importance), eval_split, schedule, options);
}

namespace {
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_sweep_csv(std::span<const SweepRecord> records, const std::filesystem::path& path,
                     std::span<const std::string> comments) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "# schema: " << kSweepCsvSchema << '\n';
  for (const auto& c : comments) out << "# " << c << '\n';
  out << kSweepCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.pruned << ',' << num(r.iou) << ',' << num(r.iou_ratio) << ',' << r.flops << ',' << num(r.flops_ratio)
        << ',' << r.params << ',' << num(r.params_ratio) << ',' << num(r.latency_s) << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace tprune
