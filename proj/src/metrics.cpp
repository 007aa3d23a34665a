#include "xvfg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace xvfg {

double psnr(const Tensor& a, const Tensor& b, double max_value) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: " + a.shape().str() + " vs " + b.shape().str());
  if (a.empty()) throw ShapeError("psnr: empty image");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = sq / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrInfinite;
  return 10.0 * std::log10(max_value * max_value / mse);
}

Tensor to_luma(const Tensor& image) {
  const Shape s = image.shape();
  if (s.c == 1) return image;
  if (s.c != 3) throw ShapeError("to_luma: expected 1 or 3 channels, got " + s.str());
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        out.at(n, 0, y, x) = 0.299 * image.at(n, 0, y, x) + 0.587 * image.at(n, 1, y, x) +
                             0.114 * image.at(n, 2, y, x);
      }
  return out;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double centre = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - centre;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& v : k) v /= total;
  return k;
}

namespace {

// Valid-mode separable Gaussian filter of an HxW plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& k) {
  const int win = static_cast<int>(k.size());
  const int oh = h - win + 1;
  const int ow = w - win + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int j = 0; j < win; ++j) s += k[static_cast<std::size_t>(j)] * plane[static_cast<std::size_t>(y) * w + x + j];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < win; ++i) s += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double max_value, const SsimOptions& opt) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: " + a.shape().str() + " vs " + b.shape().str());
  if (a.n() != 1) throw ShapeError("ssim: expected a single image, got " + a.shape().str());
  const Tensor la = to_luma(a);
  const Tensor lb = to_luma(b);
  const int h = la.h();
  const int w = la.w();
  if (h < opt.window || w < opt.window) {
    throw ShapeError("ssim: image " + a.shape().str() + " smaller than the " +
                     std::to_string(opt.window) + "x" + std::to_string(opt.window) + " window");
  }
  const auto k = gaussian_kernel(opt.window, opt.sigma);
  const std::size_t count = static_cast<std::size_t>(h) * w;
  std::vector<double> x(la.data().begin(), la.data().end());
  std::vector<double> y(lb.data().begin(), lb.data().end());
  std::vector<double> xx(count), yy(count), xy(count);
  for (std::size_t i = 0; i < count; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k);
  const auto my = filter_valid(y, h, w, k);
  const auto exx = filter_valid(xx, h, w, k);
  const auto eyy = filter_valid(yy, h, w, k);
  const auto exy = filter_valid(xy, h, w, k);
  const double c1 = (opt.k1 * max_value) * (opt.k1 * max_value);
  const double c2 = (opt.k2 * max_value) * (opt.k2 * max_value);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double sx = exx[i] - mx[i] * mx[i];
    const double sy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (sx + sy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::max(p[i], kProbabilityFloor);
    const double qi = std::max(q[i], kProbabilityFloor);
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

KlScore kl_score(ProbeClassifier& probe, std::span<const Tensor> generated,
                 std::span<const Tensor> reference) {
  if (generated.empty() || reference.empty()) {
    throw std::invalid_argument("kl_score: image sets must be non-empty");
  }
  const int k = probe.classes();
  std::vector<double> ref_mean(static_cast<std::size_t>(k), 0.0);
  for (const Tensor& img : reference) {
    const auto p = probe.probabilities(img);
    for (int i = 0; i < k; ++i) ref_mean[static_cast<std::size_t>(i)] += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : ref_mean) v /= static_cast<double>(reference.size());
  std::vector<double> scores;
  scores.reserve(generated.size());
  for (const Tensor& img : generated) scores.push_back(std::max(0.0, kl_divergence(probe.probabilities(img), ref_mean)));  // rounding can dip below 0
  KlScore out;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - out.mean) * (s - out.mean);
  out.std = std::sqrt(var / static_cast<double>(scores.size()));
  return out;
}

std::vector<int> top_k_classes(std::span<const double> probs, int k) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(std::clamp(k, 0, static_cast<int>(probs.size()))));
  return order;
}

double topk_accuracy(ProbeClassifier& probe, std::span<const Tensor> generated,
                     std::span<const int> labels, int k) {
  if (generated.size() != labels.size()) {
    throw std::invalid_argument("topk_accuracy: image and label counts differ");
  }
  if (generated.empty()) throw std::invalid_argument("topk_accuracy: empty image set");
  const int classes = probe.classes();
  if (k < 1 || k > classes) {
    throw std::invalid_argument("topk_accuracy: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(classes) + "]");
  }
  int hits = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= classes) {
      throw std::out_of_range("topk_accuracy: label " + std::to_string(label) + " out of range");
    }
    const auto best = top_k_classes(probe.probabilities(generated[i]), k);
    if (std::find(best.begin(), best.end(), label) != best.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(generated.size());
}

std::string metric_csv_header() { return "method,direction,size,ssim,psnr,kl_mean,kl_std,top1,top5"; }

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string metric_csv_row(const MetricRow& r) {
  return r.method + "," + r.direction + "," + std::to_string(r.size) + "," + format_metric(r.ssim) +
         "," + format_metric(r.psnr) + "," + format_metric(r.kl_mean) + "," +
         format_metric(r.kl_std) + "," + format_metric(r.top1) + "," + format_metric(r.top5);
}

}  // namespace xvfg
