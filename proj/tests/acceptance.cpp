// Acceptance suite. Run with no arguments for every criterion, or with a list
// of criterion numbers. Prints one PASS/FAIL line per criterion and exits
// non-zero if any failed.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "tprune/importance.hpp"
#include "tprune/metrics.hpp"
#include "tprune/model_io.hpp"
#include "tprune/surgery.hpp"
#include "tprune/sweep.hpp"
#include "tprune/train.hpp"

using namespace tprune;
using testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_report(const ImportanceReport& a, const ImportanceReport& b) {
  if (a.scores.size() != b.scores.size() || a.sample_count != b.sample_count || a.skipped != b.skipped) return false;
  for (std::size_t i = 0; i < a.scores.size(); ++i) {
    if (!(a.scores[i].ref == b.scores[i].ref)) return false;
  }
  return same_bits(a.values(), b.values());
}

// ---- 1 -------------------------------------------------------------------
// Tolerances: rel. error <= 1e-3 with central differences of step 1e-5 in
// double. The denominator is floored at 1e-7 so gradients that are zero up to
// rounding compare on an absolute scale.
Outcome gradient_correctness() {
  Rng rng(20261016);
  const int base_choices[] = {2, 3, 4, 6};
  std::ostringstream detail;
  bool pass = true;
  for (int m = 0; m < 3; ++m) {
    UNetConfig cfg;
    cfg.depth = m == 0 ? 1 : m == 1 ? 2 : 1 + static_cast<int>(rng.below(2));
    cfg.base_channels = base_choices[rng.below(4)];
    cfg.height = cfg.width = 8;
    const Model model = build_unet(cfg, rng.next());
    const auto data = generate_blobs(2, 32, 32, rng.next());
    // 8x8 crops keep the check fast; masks stay binary.
    TensorD images({2, 3, 8, 8}), masks({2, 1, 8, 8});
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const std::size_t src = static_cast<std::size_t>((y + 12) * 32 + x + 12);
          for (int c = 0; c < 3; ++c) images.at(n, c, y, x) = data[n].image[static_cast<std::size_t>(c) * 32 * 32 + src];
          masks.at(n, 0, y, x) = data[n].mask[src];
        }
    const auto r = testing::check_all_gradients(model, images, masks, 1e-5, 1e-3, 1e-7);
    pass = pass && r.failed == 0;
    detail << (m ? "; " : "") << "depth " << cfg.depth << " base " << cfg.base_channels << ": " << r.checked
           << " params, " << r.failed << " over tol, worst " << fmt("%.2e", r.worst) << " at " << r.worst_where;
  }
  return {pass, detail.str()};
}

// ---- 2 -------------------------------------------------------------------
Outcome normalization_contract() {
  UNetConfig cfg;
  cfg.depth = 1;
  cfg.base_channels = 4;
  cfg.height = cfg.width = 32;
  const Model model = build_unet(cfg, 7);
  const auto data = generate_blobs(16, 32, 32, 8);
  ImportanceOptions opt;
  opt.seed = 3;
  const ImportanceReport base = compute_importance(model, data, opt);

  double worst_norm = 0.0;
  for (double n : base.seed_norms) worst_norm = std::max(worst_norm, std::abs(n - 1.0));
  bool norms_ok = base.seed_norms.size() == base.sample_count && base.sample_count == data.size() && worst_norm <= 1e-6;

  int identical = 0, runs = 0;
  auto scaled_run = [&](std::function<bool(std::size_t)> which) {
    ImportanceOptions o = opt;
    o.raw_grad_hook = [&](std::size_t i, TensorD& g) {
      if (which(i)) {
        for (double& v : g.data()) v *= 1000.0;
      }
    };
    ++runs;
    if (same_report(base, compute_importance(model, data, o))) ++identical;
  };
  for (std::size_t k = 0; k < data.size(); ++k) scaled_run([k](std::size_t i) { return i == k; });
  scaled_run([](std::size_t) { return true; });
  return {norms_ok && identical == runs,
          fmt("max |norm-1| = %.2e over %zu samples; %d/%d reports bitwise identical after x1000 scaling", worst_norm,
              base.sample_count, identical, runs)};
}

// ---- 3 -------------------------------------------------------------------
Outcome zero_signal() {
  UNetConfig cfg;
  cfg.depth = 1;
  cfg.base_channels = 4;
  cfg.height = cfg.width = 32;
  Model model = build_unet(cfg, 11);
  auto conv = [&](const std::string& id) -> LayerNode& { return model.layer(model.require(id)); };
  auto zero_rows = [&](const std::string& id, int f) {
    LayerNode& n = conv(id);
    const std::size_t row = n.weight.numel() / static_cast<std::size_t>(n.weight.dim(0));
    std::fill_n(n.weight.data().begin() + static_cast<std::ptrdiff_t>(row * f), row, 0.0f);
    n.bias[static_cast<std::size_t>(f)] = 0.0f;
  };
  auto zero_inputs = [&](const std::string& id, int in) {
    LayerNode& n = conv(id);
    for (std::int64_t o = 0; o < n.weight.dim(0); ++o)
      for (std::int64_t y = 0; y < n.weight.dim(2); ++y)
        for (std::int64_t x = 0; x < n.weight.dim(3); ++x) n.weight.at(o, in, y, x) = 0.0f;
  };
  // Zero incoming: the filter's own weights and bias.
  zero_rows("enc0.conv0", 1);
  zero_rows("dec0.conv0", 0);
  // Zero outgoing, traced by hand: enc0.conv1 feeds bottleneck.conv0 through the
  // pool and dec0.conv0 through the skip, which sits after the 8 upsampled
  // channels in dec0.cat. bottleneck.conv1 feeds dec0.conv0 at its own index.
  zero_inputs("bottleneck.conv0", 2);
  zero_inputs("dec0.conv0", 8 + 2);
  zero_inputs("dec0.conv0", 3);

  const std::vector<ChannelRef> zeroed = {
      {"enc0.conv0", 1}, {"dec0.conv0", 0}, {"enc0.conv1", 2}, {"bottleneck.conv1", 3}};
  const auto data = generate_blobs(16, 32, 32, 12);
  const ImportanceReport report = compute_importance(model, data);
  bool exact = true;
  std::string scores;
  for (const auto& ref : zeroed) {
    const double s = report.find(ref)->score;
    exact = exact && s == 0.0;
    scores += fmt("%s%s=%g", scores.empty() ? "" : " ", to_string(ref).c_str(), s);
  }
  // Other channels may also score 0 (a ReLU that never fires); they are only counted.
  int other_zero = 0;
  for (const auto& s : report.scores) {
    if (s.score == 0.0 && std::find(zeroed.begin(), zeroed.end(), s.ref) == zeroed.end()) ++other_zero;
  }
  const Model pruned = apply_surgery(model, build_surgery_plan(model, zeroed));
  const Tensor probe = stack_images(data);
  const double diff = testing::max_abs_diff(predict(model, probe), predict(pruned, probe));
  return {exact && diff <= 1e-6,
          fmt("scores [%s]; %d of %zu other channels also 0; surgery max |dlogit| = %.2e", scores.c_str(), other_zero,
              report.scores.size() - zeroed.size(), diff)};
}

// ---- 4 -------------------------------------------------------------------
Outcome oracle_agreement() {
  struct Case {
    int depth, base, train_steps;
    std::uint64_t seed;
  };
  const Case cases[] = {{1, 8, 0, 101}, {1, 8, 60, 102}, {2, 4, 60, 103}};
  std::ostringstream detail;
  bool pass = true;
  for (const auto& c : cases) {
    UNetConfig cfg;
    cfg.depth = c.depth;
    cfg.base_channels = c.base;
    cfg.height = cfg.width = 32;
    Model model = build_unet(cfg, c.seed);
    if (c.train_steps > 0) {
      TrainOptions t;
      t.steps = c.train_steps;
      t.seed = c.seed;
      model = train(model, generate_blobs(128, 32, 32, c.seed + 1000), t);
    }
    const auto scoring = generate_blobs(16, 32, 32, c.seed + 2000);
    const auto taylor = compute_importance(model, scoring).values();
    const auto oracle = brute_force_importance_all(model, scoring);
    const double rho = testing::spearman_oracle(taylor, oracle);
    pass = pass && rho >= 0.8;
    detail << (detail.tellp() ? "; " : "") << "depth " << c.depth << " base " << c.base
           << (c.train_steps ? " trained" : " untrained") << " N=" << taylor.size() << ": rho " << fmt("%.4f", rho);
  }
  return {pass, detail.str()};
}

// ---- 5 -------------------------------------------------------------------
Outcome counter_exactness() {
  Model single;
  single.add_conv("conv", single.add_input("input", 3, 32, 32), 8, 3, true);
  Rng init(1);
  for (auto& v : single.layer(1).weight.data()) v = static_cast<float>(init.uniform());
  const bool fixture = count_params(single) == 224 && count_flops(single) == 450560;

  Rng rng(5);
  int ok = 0;
  std::string first_bad;
  for (int i = 0; i < 20; ++i) {
    UNetConfig cfg;
    cfg.depth = 1 + static_cast<int>(rng.below(4));
    cfg.base_channels = 1 + static_cast<int>(rng.below(16));
    cfg.channel_multiplier = 1 + static_cast<int>(rng.below(3));
    cfg.in_channels = 1 + static_cast<int>(rng.below(4));
    cfg.out_channels = 1 + static_cast<int>(rng.below(3));
    const int unit = 1 << cfg.depth;
    cfg.height = unit * (1 + static_cast<int>(rng.below(64 / unit + 2)));
    cfg.width = unit * (1 + static_cast<int>(rng.below(64 / unit + 2)));
    const Model m = build_unet(cfg, rng.next());
    const auto want = testing::closed_form_unet(cfg);
    const bool good = count_params(m) == want.params && count_flops(m) == want.flops &&
                      m.prunable_channel_count() == want.prunable && prunable_channel_count(cfg) == want.prunable;
    if (good) ++ok;
    else if (first_bad.empty()) first_bad = fmt(" (first mismatch: config %d)", i);
  }
  return {fixture && ok == 20,
          fmt("conv 3->8 fixture: %lld params, %lld FLOPs; %d/20 random UNet configs exact%s",
              static_cast<long long>(count_params(single)), static_cast<long long>(count_flops(single)), ok,
              first_bad.c_str())};
}

// ---- 6 and 7 share one trained model ---------------------------------------
struct Trained {
  Model model;
  Splits splits;
  ImportanceReport report;
};

const Trained& trained_fixture() {
  static std::optional<Trained> cache;
  if (!cache) {
    UNetConfig cfg;  // depth 2, base 8, 64x64: N = 160
    const auto all = generate_blobs(512, 64, 64, 1);
    Splits s = split(all, {0.25, 0.25, 0.5, 2});
    TrainOptions t;  // 200 steps, batch 8, Adam 5e-3
    t.seed = 3;
    Model model = train(build_unet(cfg, 4), s.train, t);
    const std::span<const DatasetPair> scoring(s.score.data(), kScoreSamplesSmall);
    ImportanceOptions opt;
    opt.seed = 5;
    ImportanceReport report = compute_importance(model, scoring, opt);
    cache = Trained{std::move(model), std::move(s), std::move(report)};
  }
  return *cache;
}

Outcome desk_sweep() {
  const Trained& t = trained_fixture();
  const std::int64_t n = t.model.prunable_channel_count();
  const std::int64_t p30 = (n * 3 + 5) / 10;
  const std::vector<std::int64_t> schedule = {0, p30 / 2, p30, n / 2};
  SweepOptions opt;
  opt.measure_latency = false;
  const auto rows = sweep(t.model, t.report, t.splits.eval, schedule, opt);
  const SweepRecord& base = rows[0];
  const SweepRecord& r30 = rows[2];
  const bool pass = base.iou >= 0.8 && std::abs(r30.iou - base.iou) <= 0.05 && r30.flops_ratio <= 0.75;
  return {pass, fmt("baseline IoU %.4f (N=%lld, %zu eval samples); P=%lld (30%%): IoU %.4f (delta %+.4f), "
                    "flops_ratio %.4f, params_ratio %.4f; P=%lld (50%%): IoU %.4f, flops_ratio %.4f",
                    base.iou, static_cast<long long>(n), t.splits.eval.size(), static_cast<long long>(r30.pruned),
                    r30.iou, r30.iou - base.iou, r30.flops_ratio, r30.params_ratio,
                    static_cast<long long>(rows[3].pruned), rows[3].iou, rows[3].flops_ratio)};
}

Outcome latency_direction() {
  const Trained& t = trained_fixture();
  const std::int64_t p30 = (t.model.prunable_channel_count() * 3 + 5) / 10;
  const Model pruned = prune_lowest(t.model, t.report, p30).model;
  const BenchmarkOptions bench;  // 100 samples, batch 10
  // Rounds alternate which model goes first so a burst of machine load
  // cannot land on only one side.
  constexpr int kRounds = 4;
  double before = 0.0, after = 0.0;
  std::string rounds;
  for (int r = 0; r < kRounds; ++r) {
    LatencyStats a, b;
    if (r % 2 == 0) {
      a = benchmark_latency(t.model, bench);
      b = benchmark_latency(pruned, bench);
    } else {
      b = benchmark_latency(pruned, bench);
      a = benchmark_latency(t.model, bench);
    }
    before += a.mean_s / kRounds;
    after += b.mean_s / kRounds;
    rounds += fmt(" %.3f/%.3f", a.mean_s, b.mean_s);
  }
  return {after < before && bench.samples == 100 && bench.batch == 10,
          fmt("100 samples / batch 10 / %d reps x %d interleaved rounds: unpruned %.4f s, 30%% pruned %.4f s, "
              "ratio %.3f; rounds (unpruned/pruned):",
              bench.reps, kRounds, before, after, after / before) +
              rounds};
}

// ---- 8 -------------------------------------------------------------------
Outcome determinism() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failures.emplace_back(what);
  };
  auto bits_equal = [](const Dataset& a, const Dataset& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(a[i].image == b[i].image) || !(a[i].mask == b[i].mask) || a[i].id != b[i].id) return false;
    }
    return true;
  };
  expect(bits_equal(generate_blobs(64, 48, 48, 9), generate_blobs(64, 48, 48, 9)), "dataset");

  UNetConfig cfg;
  cfg.depth = 1;
  cfg.height = cfg.width = 32;
  expect(fingerprint(build_unet(cfg, 3)) == fingerprint(build_unet(cfg, 3)), "init weights");

  const auto all = generate_blobs(96, 32, 32, 10);
  const Splits s = split(all, {0.25, 0.25, 0.5, 11});
  TrainOptions t;
  t.steps = 30;
  t.seed = 12;
  const Model a = train(build_unet(cfg, 3), s.train, t);
  const Model b = train(build_unet(cfg, 3), s.train, t);
  expect(fingerprint(a) == fingerprint(b), "trained weights");

  TempDir dir;
  ImportanceOptions o1;
  o1.seed = 13;
  ImportanceOptions o3 = o1;
  o3.workers = 3;
  o3.chunk = 5;
  const auto r1 = compute_importance(a, s.score, o1);
  const auto r1b = compute_importance(a, s.score, o1);
  const auto r3 = compute_importance(a, s.score, o3);
  write_report(r1, dir / "r1.csv");
  write_report(r1b, dir / "r1b.csv");
  write_report(r3, dir / "r3.csv");
  const std::string rep = testing::slurp(dir / "r1.csv");
  expect(rep == testing::slurp(dir / "r1b.csv"), "report rerun");
  expect(rep == testing::slurp(dir / "r3.csv"), "report across worker counts");

  SweepOptions so;
  so.measure_latency = false;
  const std::vector<std::int64_t> schedule = {0, 8, 16, 24};
  write_sweep_csv(sweep(a, r1, s.eval, schedule, so), dir / "s1.csv");
  write_sweep_csv(sweep(a, r1b, s.eval, schedule, so), dir / "s2.csv");
  write_sweep_csv(sweep(b, s.score, s.eval, schedule, so, o3), dir / "s3.csv");
  const std::string sw = testing::slurp(dir / "s1.csv");
  expect(sw == testing::slurp(dir / "s2.csv"), "sweep CSV rerun");
  expect(sw == testing::slurp(dir / "s3.csv"), "sweep CSV across worker counts");

  const Model pruned = prune_lowest(a, r1, 20).model;
  for (const Model* m : {&a, &pruned}) {
    save_model(*m, dir / "m1");
    save_model(load_model(dir / "m1"), dir / "m2");
    for (const char* f : {kManifestFile, kWeightsFile}) {
      expect(testing::slurp(dir / "m1" / f) == testing::slurp(dir / "m2" / f), "save-load-save");
    }
  }
  std::string failed;
  for (const auto& f : failures) failed += (failed.empty() ? "" : ", ") + f;
  return {failures.empty(),
          failures.empty() ? "datasets, init and trained weights, reports (1 and 3 workers), sweep CSVs and "
                             "save-load-save bytes all identical"
                           : "differences in: " + failed};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0 = none
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient correctness", 120, gradient_correctness},
      {2, "normalization contract", 0, normalization_contract},
      {3, "zero-signal soundness", 0, zero_signal},
      {4, "oracle agreement", 300, oracle_agreement},
      {5, "counter exactness", 0, counter_exactness},
      {6, "desk-scale sweep", 900, desk_sweep},
      {7, "latency direction", 0, latency_direction},
      {8, "determinism and round-trips", 0, determinism},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s budget]", c.budget_s);
    }
    std::printf("[%s] criterion %d (%s): %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
