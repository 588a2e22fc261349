#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "tprune/dataset.hpp"
#include "tprune/model.hpp"

namespace tprune {

struct TrainOptions {
  int steps = 200;
  int batch = 8;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

struct TrainStep {
  int step = 0;
  double loss = 0.0;
  double iou = 0.0;  // mean IoU of the step's minibatch before the update
};

// Adam on mean BCE-with-logits. Minibatches come from seeded epoch shuffles,
// so the result is a pure function of (model, data, options). A non-finite
// loss or gradient aborts with ErrorCode::kNumeric.
Model train(const Model& init, std::span<const DatasetPair> data, const TrainOptions& options,
            const std::function<void(const TrainStep&)>& on_step = {});

}  // namespace tprune
