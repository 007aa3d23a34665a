#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xvfg/tensor.hpp"

namespace xvfg {

/// PSNR of identical images. Rendered as "inf" in reports.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

/// 10 log10(max^2 / MSE) over all elements.
double psnr(const Tensor& a, const Tensor& b, double max_value);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// ITU-R 601 luma of a [N,3,H,W] image; single-channel input is returned as is.
Tensor to_luma(const Tensor& image);

/// Normalised 1-D Gaussian; the 2-D window is its outer product.
std::vector<double> gaussian_kernel(int size, double sigma);

/// Mean of the local SSIM map over valid window positions, computed on
/// luma for colour input. Both images are [1,C,H,W] with values in
/// [0, max_value]. Throws ShapeError when the image is smaller than the window.
double ssim(const Tensor& a, const Tensor& b, double max_value, const SsimOptions& opt = {});

/// Deterministic image -> class distribution.
class ProbeClassifier {
 public:
  virtual ~ProbeClassifier() = default;
  virtual int classes() const = 0;
  /// `image` is [1,3,H,W] in [-1,1]. Result sums to 1.
  virtual std::vector<double> probabilities(const Tensor& image) = 0;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// KL(p || q) with both distributions floored at kProbabilityFloor.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct KlScore {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

/// Mean and std over generated images of KL(probe(gen) || mean probe(ref)).
KlScore kl_score(ProbeClassifier& probe, std::span<const Tensor> generated,
                 std::span<const Tensor> reference);

/// Classes ordered by descending probability, ties by ascending index;
/// the first k are returned.
std::vector<int> top_k_classes(std::span<const double> probs, int k);

/// Fraction of images whose label is among the probe's k best classes.
double topk_accuracy(ProbeClassifier& probe, std::span<const Tensor> generated,
                     std::span<const int> labels, int k);

/// One row of the metric report.
struct MetricRow {
  std::string method;
  std::string direction;
  int size = 0;
  double ssim = 0.0;
  double psnr = 0.0;
  double kl_mean = 0.0;
  double kl_std = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
};

/// "method,direction,size,ssim,psnr,kl_mean,kl_std,top1,top5"
std::string metric_csv_header();
std::string metric_csv_row(const MetricRow& row);
/// Fixed six decimals; infinities as "inf" / "-inf".
std::string format_metric(double v);

}  // namespace xvfg
