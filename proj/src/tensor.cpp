#include "xvfg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace xvfg {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative dimension in shape " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape.str());
  }
}

double Tensor::item() const {
  if (!shape_.is_scalar()) {
    throw ShapeError("item() on non-scalar tensor of shape " + shape_.str());
  }
  return data_[0];
}

Tensor Tensor::sample(int i) const {
  if (i < 0 || i >= shape_.n) {
    throw ShapeError("sample index " + std::to_string(i) + " out of range for batch " +
                     std::to_string(shape_.n));
  }
  Shape s{1, shape_.c, shape_.h, shape_.w};
  const std::size_t stride = s.numel();
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(i * stride),
                        data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  return Tensor(s, std::move(d));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("in-place add of " + other.shape_.str() + " into " + shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor stack_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack_batch of zero tensors");
  Shape s = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("stack_batch: " + ps.str() + " incompatible with " + s.str());
    }
    total += ps.n;
  }
  s.n = total;
  std::vector<double> d;
  d.reserve(s.numel());
  for (const auto& p : parts) d.insert(d.end(), p.data().begin(), p.data().end());
  return Tensor(s, std::move(d));
}

Tensor cat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("cat_channels of zero tensors");
  Shape s = parts[0].shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n) throw ShapeError("cat_channels: batch " + ps.str() + " vs " + s.str());
    if (ps.h != s.h) throw ShapeError("cat_channels: height " + ps.str() + " vs " + s.str());
    if (ps.w != s.w) throw ShapeError("cat_channels: width " + ps.str() + " vs " + s.str());
    channels += ps.c;
  }
  s.c = channels;
  Tensor out(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    double* dst = out.ptr() + static_cast<std::size_t>(n) * s.c * plane;
    for (const auto& p : parts) {
      const std::size_t chunk = static_cast<std::size_t>(p.c()) * plane;
      std::memcpy(dst, p.ptr() + n * chunk, chunk * sizeof(double));
      dst += chunk;
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace xvfg
