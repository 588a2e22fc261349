#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tprune/importance.hpp"
#include "tprune/metrics.hpp"
#include "tprune/model.hpp"

namespace tprune {

struct SweepRecord {
  std::int64_t pruned = 0;  // P
  double iou = 0.0;
  double iou_ratio = 1.0;
  std::int64_t flops = 0;
  double flops_ratio = 1.0;
  std::int64_t params = 0;
  double params_ratio = 1.0;
  double latency_s = 0.0;
  std::size_t substitutions = 0;
};

struct SweepOptions {
  double threshold = 0.5;
  bool measure_latency = true;
  BenchmarkOptions bench;
};

// Prunes the P lowest-ranked channels from the original model for every P in
// the (strictly ascending) schedule, without any retraining. The ranking is
// computed once from `report`.
std::vector<SweepRecord> sweep(const Model& model, const ImportanceReport& report, std::span<const DatasetPair> eval,
                               std::span<const std::int64_t> schedule, const SweepOptions& options = {});

// Convenience form that scores on `score_split` first.
std::vector<SweepRecord> sweep(const Model& model, std::span<const DatasetPair> score_split,
                               std::span<const DatasetPair> eval_split, std::span<const std::int64_t> schedule,
                               const SweepOptions& options = {}, const ImportanceOptions& importance = {});

inline constexpr const char* kSweepCsvSchema = "tprune.sweep.v1";
inline constexpr const char* kSweepCsvHeader = "P,iou,iou_ratio,flops,flops_ratio,params,params_ratio,latency_s";

void write_sweep_csv(std::span<const SweepRecord> records, const std::filesystem::path& path,
                     std::span<const std::string> comments = {});

// Two SVG 1.1 charts against neurons pruned: IoU with parameter count, and
// time taken with GFLOPs.
void write_sweep_svgs(std::span<const SweepRecord> records, const std::filesystem::path& iou_params_path,
                      const std::filesystem::path& time_flops_path, std::span<const std::string> comments = {});

}  // namespace tprune
