#include <doctest.h>

#include "support.hpp"
#include "tprune/metrics.hpp"

using namespace tprune;
using testing::catch_error;

namespace {

// Logits that threshold to `mask` at 0.5.
Tensor logits_for(const Tensor& mask) {
  Tensor l(mask.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) l[i] = mask[i] > 0.5f ? 8.0f : -8.0f;
  return l;
}

Tensor square(int y0, int x0, int size, int hw = 4) {
  Tensor m({1, hw, hw});
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) m[static_cast<std::size_t>(y * hw + x)] = 1.0f;
  return m;
}

}  // namespace

TEST_CASE("iou and dice hand counts") {
  const Tensor a = square(0, 0, 2), b = square(0, 1, 2), far = square(2, 2, 2);
  CHECK(iou(logits_for(a), a) == 1.0);
  CHECK(dice(logits_for(a), a) == 1.0);
  CHECK(iou(logits_for(a), far) == 0.0);
  CHECK(dice(logits_for(a), far) == 0.0);
  CHECK(iou(logits_for(a), b) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
  CHECK(dice(logits_for(a), b) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("empty-mask conventions and threshold") {
  const Tensor empty({1, 4, 4}), a = square(1, 1, 2);
  CHECK(iou(logits_for(empty), empty) == 1.0);
  CHECK(dice(logits_for(empty), empty) == 1.0);
  CHECK(iou(logits_for(a), empty) == 0.0);
  CHECK(iou(logits_for(empty), a) == 0.0);

  // sigmoid(0) = 0.5 is not above a 0.5 threshold
  const Tensor zeros({1, 4, 4});
  CHECK(iou(zeros, a, 0.5) == 0.0);
  CHECK(iou(zeros, Tensor({1, 4, 4}, 1.0f), 0.4) == 1.0);
}

TEST_CASE("metric errors") {
  const Tensor a = square(0, 0, 2);
  Tensor soft = a;
  soft[5] = 0.5f;
  CHECK(catch_error([&] { iou(logits_for(a), soft); }).code == ErrorCode::kInvalidArgument);
  CHECK(catch_error([&] { dice(logits_for(a), soft); }).code == ErrorCode::kInvalidArgument);
  CHECK(catch_error([&] { iou(Tensor({1, 2, 2}), a); }).code == ErrorCode::kShape);
}

TEST_CASE("evaluate reports means and empty-empty count") {
  // A 1x1 conv that copies a 1-channel image scaled by 100 with bias -50.
  Model m;
  m.add_conv("head", m.add_input("input", 1, 4, 4), 1, 1, false);
  m.layer(1).weight[0] = 100.0f;
  m.layer(1).bias[0] = -50.0f;
  Dataset data;
  for (const Tensor& mask : {square(0, 0, 2), Tensor({1, 4, 4}), square(1, 2, 2)}) {
    data.push_back({mask, mask, "s" + std::to_string(data.size())});
  }
  const auto r = evaluate(m, data);
  CHECK(r.mean_iou == 1.0);
  CHECK(r.mean_dice == 1.0);
  CHECK(r.n_samples == 3);
  CHECK(r.empty_empty == 1);

  // shift one prediction: IoU of that sample drops to 2/6
  data[0].image = square(0, 1, 2);
  CHECK(evaluate(m, data).mean_iou == doctest::Approx((2.0 / 6.0 + 2.0) / 3.0).epsilon(1e-15));
  CHECK(catch_error([&] { evaluate(m, Dataset{}); }).code == ErrorCode::kInvalidArgument);
}

TEST_CASE("spearman matches the definition") {
  CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}) == doctest::Approx(-1.0));
  Rng rng(2);
  std::vector<double> a, b;
  for (int i = 0; i < 40; ++i) {
    a.push_back(static_cast<double>(rng.below(6)));  // plenty of ties
    b.push_back(rng.uniform());
  }
  CHECK(spearman(a, b) == doctest::Approx(testing::spearman_oracle(a, b)).epsilon(1e-12));
}

TEST_CASE("benchmark harness") {
  const BenchmarkOptions defaults;
  CHECK(defaults.samples == 100);
  CHECK(defaults.batch == 10);

  UNetConfig cfg;
  cfg.depth = 1;
  cfg.base_channels = 2;
  cfg.height = cfg.width = 16;
  const Model m = build_unet(cfg, 1);
  BenchmarkOptions one;
  one.samples = 4;
  one.batch = 2;
  one.reps = 1;
  const auto s = benchmark_latency(m, one);
  CHECK_FALSE(s.std_defined);
  CHECK(s.std_s == 0.0);
  CHECK(s.mean_s > 0.0);
  CHECK(s.reps == 1);

  BenchmarkOptions three = one;
  three.reps = 3;
  const auto t = benchmark_latency(m, three);
  CHECK(t.std_defined);
  CHECK(t.min_s <= t.mean_s);
  CHECK(t.samples == 4);
  CHECK(t.batch == 2);
}
