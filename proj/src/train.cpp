#include "tprune/train.hpp"

#include <cmath>

#include "tprune/metrics.hpp"
#include "tprune/rng.hpp"

namespace tprune {

Model train(const Model& init, std::span<const DatasetPair> data, const TrainOptions& opt,
            const std::function<void(const TrainStep&)>& on_step) {
  if (data.empty()) fail(ErrorCode::kInvalidArgument, "train: empty dataset");
  if (opt.steps < 0 || opt.batch < 1) fail(ErrorCode::kInvalidArgument, "train: steps must be >= 0 and batch >= 1");

  Model model = init;
  const auto convs = model.conv_layers();
  ParamSet<float> params = params_as<float>(model);
  std::vector<std::vector<double>> m1, m2;
  auto init_moments = [](const std::vector<Tensor>& ts, std::vector<std::vector<double>>& into) {
    for (const auto& t : ts) into.emplace_back(t.numel(), 0.0);
  };
  init_moments(params.weights, m1);
  init_moments(params.biases, m1);
  init_moments(params.weights, m2);
  init_moments(params.biases, m2);

  Rng rng(opt.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  for (int step = 1; step <= opt.steps; ++step) {
    Dataset batch;
    for (int b = 0; b < opt.batch; ++b) batch.push_back(data[next_index()]);
    const Tensor images = stack_images(batch);
    const Tensor masks = stack_masks(batch);
    auto trace = trace_forward<float>(model, images, &params, TraceOptions{true, false});
    const VarId targets = trace.tape.leaf(masks, false);
    const VarId loss = trace.tape.bce_with_logits(trace.logits, targets);
    const Tensor& logits = trace.tape.value(trace.logits);

    TrainStep log{step, trace.tape.value(loss)[0], 0.0};
    const std::size_t per = logits.numel() / batch.size();
    const Shape sample{1, logits.dim(1), logits.dim(2), logits.dim(3)};
    for (std::size_t j = 0; j < batch.size(); ++j) {
      std::vector<float> y(logits.data().begin() + static_cast<std::ptrdiff_t>(j * per),
                           logits.data().begin() + static_cast<std::ptrdiff_t>((j + 1) * per));
      log.iou += iou(Tensor(sample, std::move(y)), batch[j].mask.reshaped(sample));
    }
    log.iou /= static_cast<double>(batch.size());

    const GradStore<float> grads = trace.tape.backward(loss, Tensor({1}, 1.0f));
    const double bc1 = 1.0 - std::pow(opt.beta1, step);
    const double bc2 = 1.0 - std::pow(opt.beta2, step);
    auto update = [&](Tensor& p, const Tensor& g, std::vector<double>& m, std::vector<double>& v) {
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = g[i];
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
        const double step_size = opt.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.epsilon);
        p[i] = static_cast<float>(p[i] - step_size);
      }
      require_finite(p, "train: parameter update");
    };
    const std::size_t nconv = convs.size();
    for (std::size_t c = 0; c < nconv; ++c) {
      update(params.weights[c], grads.at(trace.weight_vars[c]), m1[c], m2[c]);
      update(params.biases[c], grads.at(trace.bias_vars[c]), m1[nconv + c], m2[nconv + c]);
    }
    if (on_step) on_step(log);
  }
  for (std::size_t c = 0; c < convs.size(); ++c) {
    model.layer(convs[c]).weight = params.weights[c];
    model.layer(convs[c]).bias = params.biases[c];
  }
  return model;
}

}  // namespace tprune
