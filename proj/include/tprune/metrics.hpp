#pragma once

#include <cstdint>
#include <span>

#include "tprune/dataset.hpp"
#include "tprune/model.hpp"

namespace tprune {

// Predicted mask = sigmoid(logit) > threshold. Both masks empty scores 1.0;
// exactly one empty scores 0.0. Targets must be exactly 0 or 1.
double iou(const Tensor& pred_logits, const Tensor& target_mask, double threshold = 0.5);
double dice(const Tensor& pred_logits, const Tensor& target_mask, double threshold = 0.5);

struct EvalResult {
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  std::size_t n_samples = 0;
  double threshold = 0.5;
  // Samples where prediction and target were both empty (scored 1.0).
  std::size_t empty_empty = 0;
};

EvalResult evaluate(const Model& model, std::span<const DatasetPair> data, double threshold = 0.5, int batch = 16);

struct BenchmarkOptions {
  int samples = 100;
  int batch = 10;
  int warmup = 1;
  int reps = 3;
  std::uint64_t seed = 0;
};

struct LatencyStats {
  double mean_s = 0.0;
  double std_s = 0.0;
  double min_s = 0.0;
  int batch = 0;
  int samples = 0;
  int reps = 0;
  int warmup = 0;
  bool std_defined = false;  // false when reps == 1; std_s is then 0
};

// Wall-clock time to run `samples` inputs through the model in batches of
// `batch`, per repetition. One fixed random input is reused throughout and
// the measurement runs on the calling thread only.
LatencyStats benchmark_latency(const Model& model, const BenchmarkOptions& options = {});

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace tprune
