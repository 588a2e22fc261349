#include "tprune/importance.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "tprune/model_io.hpp"
#include "tprune/ops.hpp"

namespace tprune {

template <typename T>
std::optional<BasicTensor<T>> normalize_grad(const BasicTensor<T>& grad) {
  double ss = 0.0;
  for (T v : grad.data()) ss += static_cast<double>(v) * static_cast<double>(v);
  if (ss == 0.0) return std::nullopt;
  if (!std::isfinite(ss)) fail(ErrorCode::kNumeric, "normalize_grad: non-finite gradient norm");
  const double norm = std::sqrt(ss);
  BasicTensor<T> out(grad.shape());
  for (std::size_t i = 0; i < grad.numel(); ++i) out[i] = static_cast<T>(static_cast<double>(grad[i]) / norm);
  return out;
}

template std::optional<Tensor> normalize_grad(const Tensor&);
template std::optional<TensorD> normalize_grad(const TensorD&);

const ChannelScore* ImportanceReport::find(const ChannelRef& ref) const {
  for (const auto& s : scores) {
    if (s.ref == ref) return &s;
  }
  return nullptr;
}

std::vector<double> ImportanceReport::values() const {
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& s : scores) v.push_back(s.score);
  return v;
}

namespace {

struct SampleTerms {
  bool used = false;
  double seed_norm = 0.0;
  std::vector<double> contrib;  // per channel, structural order
};

void score_chunk(const Model& model, std::span<const DatasetPair> data, std::size_t begin, std::size_t end,
                 const ImportanceOptions& opt, std::span<const std::size_t> channel_offset, std::size_t n_channels,
                 std::vector<SampleTerms>& out) {
  const auto chunk = data.subspan(begin, end - begin);
  const Tensor images = stack_images(chunk);
  auto trace = trace_forward<float>(model, images, nullptr, TraceOptions{false, true});
  const Tensor& logits = trace.tape.value(trace.logits);
  const std::size_t per = logits.numel() / chunk.size();
  const Shape sample_shape{1, logits.dim(1), logits.dim(2), logits.dim(3)};

  Tensor seed(logits.shape());
  bool any_used = false;
  for (std::size_t j = 0; j < chunk.size(); ++j) {
    std::vector<float> y(logits.data().begin() + static_cast<std::ptrdiff_t>(j * per),
                         logits.data().begin() + static_cast<std::ptrdiff_t>((j + 1) * per));
    const Tensor sample_logits(sample_shape, std::move(y));
    const Tensor target = chunk[j].mask.reshaped(sample_shape);
    // the raw gradient stays in double until normalised, so rescaling it is exact
    TensorD raw = ops::bce_with_logits_grad(sample_logits.cast<double>(), target.cast<double>());
    if (opt.raw_grad_hook) opt.raw_grad_hook(begin + j, raw);
    const auto unit = normalize_grad(raw);
    SampleTerms& terms = out[begin + j];
    if (!unit) continue;
    terms.used = true;
    any_used = true;
    double ss = 0.0;
    float* dst = seed.data().data() + j * per;
    for (std::size_t i = 0; i < per; ++i) {
      dst[i] = static_cast<float>((*unit)[i]);
      ss += static_cast<double>(dst[i]) * dst[i];
    }
    terms.seed_norm = std::sqrt(ss);
  }
  if (!any_used) return;

  const GradStore<float> grads = trace.tape.backward(trace.logits, seed);
  for (std::size_t j = 0; j < chunk.size(); ++j) {
    if (out[begin + j].used) out[begin + j].contrib.assign(n_channels, 0.0);
  }
  for (std::size_t li = 0; li < trace.preacts.size(); ++li) {
    const Tensor& x = trace.tape.value(trace.preacts[li]);
    const Tensor* dx = grads.find(trace.preacts[li]);
    if (!dx) continue;
    const std::int64_t channels = x.dim(1);
    const std::int64_t hw = x.dim(2) * x.dim(3);
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      SampleTerms& terms = out[begin + j];
      if (!terms.used) continue;
      for (std::int64_t c = 0; c < channels; ++c) {
        const std::size_t base = static_cast<std::size_t>((static_cast<std::int64_t>(j) * channels + c) * hw);
        double s = 0.0;
        for (std::int64_t p = 0; p < hw; ++p) {
          s += static_cast<double>(x[base + static_cast<std::size_t>(p)]) *
               static_cast<double>((*dx)[base + static_cast<std::size_t>(p)]);
        }
        terms.contrib[channel_offset[li] + static_cast<std::size_t>(c)] = s * s;
      }
    }
  }
}

}  // namespace

ImportanceReport compute_importance(const Model& model, std::span<const DatasetPair> data,
                                    const ImportanceOptions& opt) {
  if (data.empty()) fail(ErrorCode::kInvalidArgument, "compute_importance: empty dataset");
  if (opt.workers < 1 || opt.chunk < 1) fail(ErrorCode::kInvalidArgument, "compute_importance: workers and chunk must be >= 1");

  const auto prunable = model.prunable_layers();
  std::vector<std::size_t> offset;
  std::size_t n_channels = 0;
  for (int li : prunable) {
    offset.push_back(n_channels);
    n_channels += static_cast<std::size_t>(model.layer(li).channels);
  }

  std::vector<SampleTerms> terms(data.size());
  const std::size_t chunk = static_cast<std::size_t>(opt.chunk);
  const std::size_t n_chunks = (data.size() + chunk - 1) / chunk;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t c = next++; c < n_chunks; c = next++) {
      try {
        score_chunk(model, data, c * chunk, std::min(data.size(), (c + 1) * chunk), opt, offset, n_channels, terms);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n_chunks;
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(opt.workers), n_chunks);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  ImportanceReport report;
  report.seed = opt.seed;
  report.model_fingerprint = fingerprint(model);
  std::vector<double> sum(n_channels, 0.0);
  for (const auto& t : terms) {
    if (!t.used) {
      ++report.skipped;
      continue;
    }
    ++report.sample_count;
    report.seed_norms.push_back(t.seed_norm);
    for (std::size_t i = 0; i < n_channels; ++i) sum[i] += t.contrib[i];
  }
  if (report.sample_count == 0) fail(ErrorCode::kNoUsableSamples, "compute_importance: no usable samples (every output gradient is zero)");

  const double inv_m = 1.0 / static_cast<double>(report.sample_count);
  for (std::size_t li = 0; li < prunable.size(); ++li) {
    const auto& node = model.layer(prunable[li]);
    for (int f = 0; f < node.channels; ++f) {
      report.scores.push_back({{node.id, f}, static_cast<int>(li), sum[offset[li] + static_cast<std::size_t>(f)] * inv_m});
    }
  }
  return report;
}

std::vector<ChannelRef> rank_channels(const ImportanceReport& report) {
  std::vector<const ChannelScore*> order;
  for (const auto& s : report.scores) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const ChannelScore* a, const ChannelScore* b) {
    if (a->score != b->score) return a->score < b->score;
    if (a->layer_index != b->layer_index) return a->layer_index < b->layer_index;
    return a->ref.filter_index < b->ref.filter_index;
  });
  std::vector<ChannelRef> out;
  out.reserve(order.size());
  for (const auto* s : order) out.push_back(s->ref);
  return out;
}

namespace {
constexpr const char* kReportMagic = "# tprune importance report v1";

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_report(const ImportanceReport& report, const std::filesystem::path& path,
                  std::span<const std::string> comments) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << kReportMagic << '\n';
  out << "# model_fingerprint=" << hex64(report.model_fingerprint) << '\n';
  out << "# sample_count=" << report.sample_count << '\n';
  out << "# seed=" << report.seed << '\n';
  out << "# skipped=" << report.skipped << '\n';
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "layer_id,filter_index,score\n";
  for (const auto& s : report.scores) out << s.ref.layer_id << ',' << s.ref.filter_index << ',' << fmt17(s.score) << '\n';
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

ImportanceReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kReportMagic) fail(ErrorCode::kFormat, path.string() + ": not an importance report");
  ImportanceReport r;
  std::map<std::string, int> layer_order;
  bool have_fp = false, have_header = false;
  std::size_t lineno = 1;
  auto bad = [&](const std::string& why) {
    fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (line.rfind("# ", 0) != 0 || eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "model_fingerprint") {
          r.model_fingerprint = std::stoull(value, nullptr, 16);
          have_fp = true;
        } else if (key == "sample_count") {
          r.sample_count = std::stoull(value);
        } else if (key == "seed") {
          r.seed = std::stoull(value);
        } else if (key == "skipped") {
          r.skipped = std::stoull(value);
        }
      } catch (const std::exception&) {
        bad("bad header value for " + key);
      }
      continue;
    }
    if (!have_header) {
      if (line != "layer_id,filter_index,score") bad("expected column header");
      have_header = true;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) bad("expected layer_id,filter_index,score");
    ChannelScore s;
    s.ref.layer_id = line.substr(0, c1);
    try {
      std::size_t used = 0;
      const std::string idx = line.substr(c1 + 1, c2 - c1 - 1);
      s.ref.filter_index = std::stoi(idx, &used);
      if (used != idx.size()) bad("bad filter index");
      const std::string score = line.substr(c2 + 1);
      s.score = std::stod(score, &used);
      if (used != score.size()) bad("bad score");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      bad("unparseable row");
    }
    if (!(s.score >= 0.0) || !std::isfinite(s.score)) bad("scores must be finite and non-negative");
    auto it = layer_order.emplace(s.ref.layer_id, static_cast<int>(layer_order.size())).first;
    s.layer_index = it->second;
    r.scores.push_back(std::move(s));
  }
  if (!have_fp || !have_header) fail(ErrorCode::kFormat, path.string() + ": incomplete report header");
  return r;
}

Model zero_channels(const Model& model, std::span<const ChannelRef> channels) {
  Model out = model;
  for (const auto& ref : channels) {
    LayerNode& node = out.layer(model.resolve(ref));
    const std::size_t row = node.weight.numel() / static_cast<std::size_t>(node.weight.dim(0));
    std::fill_n(node.weight.data().begin() + static_cast<std::ptrdiff_t>(row * ref.filter_index), row, 0.0f);
    node.bias[static_cast<std::size_t>(ref.filter_index)] = 0.0f;
  }
  return out;
}

namespace {

constexpr std::size_t kOracleChunk = 16;

std::vector<TensorD> logits_double(const ParamSet<double>& params, const Model& model,
                                   std::span<const DatasetPair> data) {
  std::vector<TensorD> out;
  for (std::size_t start = 0; start < data.size(); start += kOracleChunk) {
    const auto chunk = data.subspan(start, std::min(kOracleChunk, data.size() - start));
    const TensorD batch = stack_images(chunk).cast<double>();
    auto trace = trace_forward<double>(model, batch, &params);
    out.push_back(trace.tape.value(trace.logits));
  }
  return out;
}

double deviation(const std::vector<TensorD>& a, const std::vector<TensorD>& b, std::size_t n_samples) {
  double total = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].shape() != b[k].shape()) fail(ErrorCode::kShape, "output_deviation: models produce different output shapes");
    for (std::size_t i = 0; i < a[k].numel(); ++i) {
      const double d = a[k][i] - b[k][i];
      total += d * d;
    }
  }
  return total / static_cast<double>(n_samples);
}

}  // namespace

double output_deviation(const Model& a, const Model& b, std::span<const DatasetPair> data) {
  if (data.empty()) fail(ErrorCode::kInvalidArgument, "output_deviation: empty dataset");
  return deviation(logits_double(params_as<double>(a), a, data), logits_double(params_as<double>(b), b, data),
                   data.size());
}

double brute_force_importance(const Model& model, std::span<const DatasetPair> data, const ChannelRef& channel) {
  model.resolve(channel);
  return output_deviation(model, zero_channels(model, std::span(&channel, 1)), data);
}

std::vector<double> brute_force_importance_all(const Model& model, std::span<const DatasetPair> data) {
  if (data.empty()) fail(ErrorCode::kInvalidArgument, "brute_force_importance: empty dataset");
  ParamSet<double> params = params_as<double>(model);
  const auto baseline = logits_double(params, model, data);
  const auto convs = model.conv_layers();
  std::vector<double> out;
  for (std::size_t ci = 0; ci < convs.size(); ++ci) {
    const LayerNode& node = model.layer(convs[ci]);
    if (!node.prunable) continue;
    TensorD& w = params.weights[ci];
    TensorD& b = params.biases[ci];
    const std::size_t row = w.numel() / static_cast<std::size_t>(w.dim(0));
    for (int f = 0; f < node.channels; ++f) {
      const std::vector<double> saved_w(w.data().begin() + static_cast<std::ptrdiff_t>(row * f),
                                        w.data().begin() + static_cast<std::ptrdiff_t>(row * (f + 1)));
      const double saved_b = b[static_cast<std::size_t>(f)];
      std::fill_n(w.data().begin() + static_cast<std::ptrdiff_t>(row * f), row, 0.0);
      b[static_cast<std::size_t>(f)] = 0.0;
      out.push_back(deviation(baseline, logits_double(params, model, data), data.size()));
      std::copy(saved_w.begin(), saved_w.end(), w.data().begin() + static_cast<std::ptrdiff_t>(row * f));
      b[static_cast<std::size_t>(f)] = saved_b;
    }
  }
  return out;
}

}  // namespace tprune
