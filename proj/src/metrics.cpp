#include "tprune/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tprune/rng.hpp"

namespace tprune {
namespace {

struct Overlap {
  std::int64_t inter = 0, pred = 0, target = 0;
};

Overlap overlap(std::span<const float> logits, std::span<const float> target, double threshold) {
  Overlap o;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double y = logits[i];
    const double prob = y >= 0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y));
    const bool p = prob > threshold;
    if (target[i] != 0.0f && target[i] != 1.0f) fail(ErrorCode::kInvalidArgument, "target mask is not binary");
    const bool t = target[i] == 1.0f;
    o.inter += p && t;
    o.pred += p;
    o.target += t;
  }
  return o;
}

void check_pair(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    fail(ErrorCode::kShape, "prediction " + shape_str(pred.shape()) + " and target " + shape_str(target.shape()) +
                                " differ");
  }
}

double iou_of(const Overlap& o) {
  const auto uni = o.pred + o.target - o.inter;
  return uni == 0 ? 1.0 : static_cast<double>(o.inter) / static_cast<double>(uni);
}

double dice_of(const Overlap& o) {
  const auto denom = o.pred + o.target;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(o.inter) / static_cast<double>(denom);
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double iou(const Tensor& pred_logits, const Tensor& target_mask, double threshold) {
  check_pair(pred_logits, target_mask);
  return iou_of(overlap(pred_logits.data(), target_mask.data(), threshold));
}

double dice(const Tensor& pred_logits, const Tensor& target_mask, double threshold) {
  check_pair(pred_logits, target_mask);
  return dice_of(overlap(pred_logits.data(), target_mask.data(), threshold));
}

EvalResult evaluate(const Model& model, std::span<const DatasetPair> data, double threshold, int batch) {
  EvalResult r;
  r.threshold = threshold;
  if (data.empty()) fail(ErrorCode::kInvalidArgument, "evaluate: empty dataset");
  double iou_sum = 0.0, dice_sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch)) {
    const auto chunk = data.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(batch), data.size() - start));
    const Tensor logits = forward(model, stack_images(chunk), false).logits;
    const std::size_t per = logits.numel() / chunk.size();
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      if (chunk[j].mask.numel() != per) fail(ErrorCode::kShape, chunk[j].id + ": mask does not match model output");
      const Overlap o = overlap(logits.data().subspan(j * per, per), chunk[j].mask.data(), threshold);
      if (o.pred == 0 && o.target == 0) ++r.empty_empty;
      iou_sum += iou_of(o);
      dice_sum += dice_of(o);
    }
  }
  r.n_samples = data.size();
  r.mean_iou = iou_sum / static_cast<double>(data.size());
  r.mean_dice = dice_sum / static_cast<double>(data.size());
  return r;
}

LatencyStats benchmark_latency(const Model& model, const BenchmarkOptions& opt) {
  if (opt.samples < 1 || opt.batch < 1 || opt.reps < 1 || opt.warmup < 0) {
    fail(ErrorCode::kInvalidArgument, "benchmark: samples, batch and reps must be >= 1");
  }
  const auto& in = model.input_node();
  Tensor batch({opt.batch, in.channels, in.height, in.width});
  Rng rng(opt.seed);
  for (float& v : batch.data()) v = static_cast<float>(rng.uniform());
  const int full = opt.samples / opt.batch;
  const int rest = opt.samples % opt.batch;
  Tensor tail;
  if (rest) {
    std::vector<float> part(batch.data().begin(), batch.data().begin() + rest * in.channels * in.height * in.width);
    tail = Tensor({rest, in.channels, in.height, in.width}, std::move(part));
  }
  volatile float sink = 0.0f;
  auto run_once = [&] {
    for (int b = 0; b < full; ++b) sink = sink + forward(model, batch, false).logits[0];
    if (rest) sink = sink + forward(model, tail, false).logits[0];
  };
  for (int w = 0; w < opt.warmup; ++w) run_once();
  std::vector<double> times;
  for (int r = 0; r < opt.reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    run_once();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  LatencyStats s;
  s.batch = opt.batch;
  s.samples = opt.samples;
  s.reps = opt.reps;
  s.warmup = opt.warmup;
  s.mean_s = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  s.min_s = *std::min_element(times.begin(), times.end());
  s.std_defined = times.size() > 1;
  if (s.std_defined) {
    double ss = 0.0;
    for (double t : times) ss += (t - s.mean_s) * (t - s.mean_s);
    s.std_s = std::sqrt(ss / static_cast<double>(times.size() - 1));
  }
  return s;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) fail(ErrorCode::kInvalidArgument, "spearman: need two equal-length series");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace tprune
