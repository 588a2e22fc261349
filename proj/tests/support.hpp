#pragma once

// Oracles and fixtures shared by the test binaries. Everything here is written
// independently of the engine code it checks.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <unistd.h>
#include <vector>

#include "tprune/dataset.hpp"
#include "tprune/error.hpp"
#include "tprune/model.hpp"
#include "tprune/ops.hpp"
#include "tprune/rng.hpp"
#include "tprune/tensor.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("tprune_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
tprune::BasicTensor<T> random_tensor(const tprune::Shape& shape, tprune::Rng& rng, double lo = -1.0, double hi = 1.0) {
  tprune::BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Direct 7-loop convolution.
template <typename T>
tprune::BasicTensor<T> naive_conv(const tprune::BasicTensor<T>& x, const tprune::BasicTensor<T>& w,
                                  const tprune::BasicTensor<T>& b, int stride, int pad) {
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto cout = w.dim(0), k = w.dim(2);
  const auto ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  tprune::BasicTensor<T> y({n, cout, ho, wo});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t r = 0; r < ho; ++r)
        for (std::int64_t c = 0; c < wo; ++c) {
          double acc = b[static_cast<std::size_t>(o)];
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t kr = 0; kr < k; ++kr)
              for (std::int64_t kc = 0; kc < k; ++kc) {
                const auto yy = r * stride + kr - pad, xx = c * stride + kc - pad;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += static_cast<double>(x.at(i, ci, yy, xx)) * static_cast<double>(w.at(o, ci, kr, kc));
              }
          y.at(i, o, r, c) = static_cast<T>(acc);
        }
  return y;
}

template <typename T>
double max_abs_diff(const tprune::BasicTensor<T>& a, const tprune::BasicTensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <typename T>
double max_rel_err(const tprune::BasicTensor<T>& got, const tprune::BasicTensor<T>& want, double floor = 1e-12) {
  double m = 0.0;
  for (std::size_t i = 0; i < got.numel(); ++i) {
    const double g = got[i], w = want[i];
    m = std::max(m, std::abs(g - w) / std::max({std::abs(g), std::abs(w), floor}));
  }
  return m;
}

// Relative error used for gradient checks: |a - n| / max(|a|, |n|, floor).
// The floor keeps entries that are zero up to rounding from dominating.
inline double grad_rel_err(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Parameter and FLOP totals of the UNet layout, derived from the config alone.
struct UNetCounts {
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t prunable = 0;
};

inline UNetCounts closed_form_unet(const tprune::UNetConfig& c) {
  UNetCounts out;
  auto conv = [&](std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t h, std::int64_t w, bool prunable,
                  bool relu) {
    out.params += cout * cin * k * k + cout;
    const std::int64_t elems = cout * h * w;
    out.flops += 2 * elems * cin * k * k + elems;
    if (relu) out.flops += elems;
    if (prunable) out.prunable += cout;
  };
  std::vector<std::int64_t> width(static_cast<std::size_t>(c.depth) + 1);
  width[0] = c.base_channels;
  for (int l = 1; l <= c.depth; ++l) width[l] = width[l - 1] * c.channel_multiplier;
  auto h_at = [&](int l) { return static_cast<std::int64_t>(c.height >> l); };
  auto w_at = [&](int l) { return static_cast<std::int64_t>(c.width >> l); };

  std::int64_t cin = c.in_channels;
  for (int l = 0; l < c.depth; ++l) {
    conv(cin, width[l], 3, h_at(l), w_at(l), true, true);
    conv(width[l], width[l], 3, h_at(l), w_at(l), true, true);
    out.flops += width[l] * h_at(l + 1) * w_at(l + 1);  // pool
    cin = width[l];
  }
  conv(cin, width[c.depth], 3, h_at(c.depth), w_at(c.depth), true, true);
  conv(width[c.depth], width[c.depth], 3, h_at(c.depth), w_at(c.depth), true, true);
  std::int64_t below = width[c.depth];
  for (int l = c.depth - 1; l >= 0; --l) {
    out.flops += below * h_at(l) * w_at(l);  // upsample
    conv(below + width[l], width[l], 3, h_at(l), w_at(l), true, true);
    conv(width[l], width[l], 3, h_at(l), w_at(l), true, true);
    below = width[l];
  }
  conv(below, c.out_channels, 1, h_at(0), w_at(0), false, false);
  return out;
}

// Runs `fn` and returns the Error it throws (code and message).
struct Caught {
  bool thrown = false;
  tprune::ErrorCode code{};
  std::string message;
};

template <typename F>
Caught catch_error(F&& fn) {
  try {
    fn();
  } catch (const tprune::Error& e) {
    return {true, e.code(), e.what()};
  }
  return {};
}

// Mean BCE of the model in double precision with explicit parameters.
inline double loss_double(const tprune::Model& model, const tprune::ParamSet<double>& params,
                          const tprune::TensorD& images, const tprune::TensorD& masks) {
  const tprune::TensorD logits = [&] {
    auto tr = tprune::trace_forward<double>(model, images, &params);
    return tr.tape.value(tr.logits);
  }();
  return tprune::ops::bce_with_logits(logits, masks)[0];
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
  std::string worst_where;
};

// Compares every weight and bias gradient of the double-precision tape with a
// central difference of step h.
inline GradCheck check_all_gradients(const tprune::Model& model, const tprune::TensorD& images,
                                     const tprune::TensorD& masks, double h, double tol, double floor) {
  using namespace tprune;
  ParamSet<double> params = params_as<double>(model);
  auto tr = trace_forward<double>(model, images, &params, TraceOptions{true, false});
  const VarId t = tr.tape.leaf(masks, false);
  const VarId loss = tr.tape.bce_with_logits(tr.logits, t);
  const GradStore<double> grads = tr.tape.backward(loss, TensorD({1}, 1.0));

  GradCheck result;
  const auto convs = model.conv_layers();
  auto check_tensor = [&](std::vector<TensorD>& set, std::size_t li, VarId var, const char* what) {
    const TensorD& analytic = grads.at(var);
    TensorD& p = set[li];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = loss_double(model, params, images, masks);
      p[i] = saved - h;
      const double down = loss_double(model, params, images, masks);
      p[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = grad_rel_err(analytic[i], numeric, floor);
      ++result.checked;
      if (err > tol) ++result.failed;
      if (err > result.worst) {
        result.worst = err;
        result.worst_where = model.layer(convs[li]).id + "." + what + "[" + std::to_string(i) + "]";
      }
    }
  };
  for (std::size_t li = 0; li < convs.size(); ++li) {
    check_tensor(params.weights, li, tr.weight_vars[li], "weight");
    check_tensor(params.biases, li, tr.bias_vars[li], "bias");
  }
  return result;
}

// Spearman correlation with average ranks, written from the definition.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
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

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(average_ranks(a), average_ranks(b));
}

}  // namespace testing
