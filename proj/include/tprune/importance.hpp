#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tprune/dataset.hpp"
#include "tprune/model.hpp"

namespace tprune {

// Rescales one example's output gradient to unit L2 norm (computed in double,
// then rounded to T). Returns nullopt for an all-zero gradient.
template <typename T>
std::optional<BasicTensor<T>> normalize_grad(const BasicTensor<T>& grad);

struct ChannelScore {
  ChannelRef ref;
  int layer_index = 0;  // position of the layer among prunable convs
  double score = 0.0;
};

struct ImportanceReport {
  std::vector<ChannelScore> scores;  // structural order when produced by compute_importance
  std::size_t sample_count = 0;      // M: samples that contributed
  std::size_t skipped = 0;           // samples dropped for a zero output gradient
  std::uint64_t seed = 0;
  std::uint64_t model_fingerprint = 0;
  // L2 norm of every used sample's normalised seed gradient, dataset order.
  std::vector<double> seed_norms;

  const ChannelScore* find(const ChannelRef& ref) const;
  std::vector<double> values() const;
};

struct ImportanceOptions {
  std::uint64_t seed = 0;
  int workers = 1;
  int chunk = 8;  // samples per forward/backward pass
  // Test hook: may rewrite the raw loss gradient of sample `index` before it
  // is normalised. The gradient is held in double at this point.
  std::function<void(std::size_t index, TensorD& raw_grad)> raw_grad_hook;
};

// Squared first-order importance per prunable channel:
//   score_i = 1/M * sum_n ( sum_{h,w} x_i * dx_i )^2
// where x_i is the channel's pre-activation and dx_i its gradient when the
// unit-normalised d(BCE)/d(logits) of sample n is backpropagated. Per-sample
// terms are reduced in dataset order, so the result is independent of
// `workers` and `chunk`.
ImportanceReport compute_importance(const Model& model, std::span<const DatasetPair> data,
                                    const ImportanceOptions& options = {});

// Ascending by score; ties by (layer order, filter index).
std::vector<ChannelRef> rank_channels(const ImportanceReport& report);

void write_report(const ImportanceReport& report, const std::filesystem::path& path,
                  std::span<const std::string> comments = {});
ImportanceReport read_report(const std::filesystem::path& path);

// ---- Ablation oracle ------------------------------------------------------

// Copy of `model` with the listed channels' incoming weights and biases set to 0.
Model zero_channels(const Model& model, std::span<const ChannelRef> channels);

// Mean over samples of ||f_a(x) - f_b(x)||^2, evaluated in double precision.
double output_deviation(const Model& a, const Model& b, std::span<const DatasetPair> data);

// Output deviation caused by zeroing `channel`.
double brute_force_importance(const Model& model, std::span<const DatasetPair> data, const ChannelRef& channel);

// brute_force_importance for every prunable channel, structural order.
std::vector<double> brute_force_importance_all(const Model& model, std::span<const DatasetPair> data);

}  // namespace tprune
