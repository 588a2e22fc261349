#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tprune/sweep.hpp"

namespace tprune {
namespace {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> values;
};

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 70, kTop = 50, kBottom = 55;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(std::string s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo, hi;
  double map(double v, double px_lo, double px_hi) const {
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

Range range_of(const std::vector<double>& v) {
  double lo = *std::min_element(v.begin(), v.end());
  double hi = *std::max_element(v.begin(), v.end());
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5 * std::max(1e-9, std::abs(lo));
    hi += 0.5 * std::max(1e-9, std::abs(hi));
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string chart(const std::string& title, const std::vector<double>& xs, const Series& left, const Series& right,
                  std::span<const std::string> comments) {
  std::ostringstream s;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const Range rx = range_of(xs), rl = range_of(left.values), rr = range_of(right.values);
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  for (auto c : comments) {
    std::replace(c.begin(), c.end(), '-', '_');
    s << "<!-- " << c << " -->\n";
  }
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << escape(title) << "</text>\n";
  s << "<g stroke=\"#333\" stroke-width=\"1\" fill=\"none\">\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\"/>\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\"/>\n"
    << "<line x1=\"" << x1 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y1 << "\"/>\n</g>\n";
  s << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int t = 0; t <= 4; ++t) {
    const double f = t / 4.0;
    const double xv = rx.lo + f * (rx.hi - rx.lo);
    const double px = x0 + f * (x1 - x0);
    s << "<text x=\"" << px << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
    const double py = y0 + f * (y1 - y0);
    s << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\" fill=\"" << left.color << "\">"
      << fmt(rl.lo + f * (rl.hi - rl.lo)) << "</text>\n";
    s << "<text x=\"" << x1 + 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"start\" fill=\"" << right.color << "\">"
      << fmt(rr.lo + f * (rr.hi - rr.lo)) << "</text>\n";
  }
  s << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 14
    << "\" text-anchor=\"middle\" font-size=\"13\">Number of neurons pruned</text>\n";
  s << "<text transform=\"translate(16," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\" fill=\""
    << left.color << "\">" << escape(left.label) << "</text>\n";
  s << "<text transform=\"translate(" << kWidth - 14 << ',' << (y0 + y1) / 2
    << ") rotate(90)\" text-anchor=\"middle\" font-size=\"13\" fill=\"" << right.color << "\">" << escape(right.label)
    << "</text>\n</g>\n";
  for (const auto* series : {&left, &right}) {
    const Range& ry = series == &left ? rl : rr;
    s << "<polyline fill=\"none\" stroke=\"" << series->color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      s << (i ? " " : "") << fmt(rx.map(xs[i], x0, x1)) << ',' << fmt(ry.map(series->values[i], y0, y1));
    }
    s << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      s << "<circle cx=\"" << fmt(rx.map(xs[i], x0, x1)) << "\" cy=\"" << fmt(ry.map(series->values[i], y0, y1))
        << "\" r=\"3\" fill=\"" << series->color << "\"/>\n";
    }
  }
  s << "<g font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect x=\"" << x0 + 10 << "\" y=\"" << y1 + 6 << "\" width=\"12\" height=\"3\" fill=\"" << left.color << "\"/>\n"
    << "<text x=\"" << x0 + 28 << "\" y=\"" << y1 + 12 << "\">" << escape(left.label) << "</text>\n"
    << "<rect x=\"" << x0 + 10 << "\" y=\"" << y1 + 22 << "\" width=\"12\" height=\"3\" fill=\"" << right.color << "\"/>\n"
    << "<text x=\"" << x0 + 28 << "\" y=\"" << y1 + 28 << "\">" << escape(right.label) << "</text>\n</g>\n";
  s << "</svg>\n";
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace

void write_sweep_svgs(std::span<const SweepRecord> records, const std::filesystem::path& iou_params_path,
                      const std::filesystem::path& time_flops_path, std::span<const std::string> comments) {
  if (records.empty()) fail(ErrorCode::kInvalidArgument, "no sweep records to plot");
  std::vector<double> xs;
  Series iou{"IoU", "#1f77b4", {}}, params{"Parameters (M)", "#d62728", {}};
  Series time{"Time taken (s)", "#2ca02c", {}}, gflops{"GFLOPs", "#9467bd", {}};
  for (const auto& r : records) {
    xs.push_back(static_cast<double>(r.pruned));
    iou.values.push_back(r.iou);
    params.values.push_back(static_cast<double>(r.params) / 1e6);
    time.values.push_back(r.latency_s);
    gflops.values.push_back(static_cast<double>(r.flops) / 1e9);
  }
  write_text(iou_params_path, chart("Neurons pruned vs IoU and parameters", xs, iou, params, comments));
  write_text(time_flops_path, chart("Neurons pruned vs time taken and GFLOPs", xs, time, gflops, comments));
}

}  // namespace tprune
