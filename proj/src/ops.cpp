#include "xvfg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

#include "xvfg/parallel.hpp"

namespace xvfg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return *a.tape();
}

// ---- broadcasting -------------------------------------------------------

struct Strides {
  std::size_t n, c, h, w;
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto dim = [&](int x, int y, const char* name) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": cannot broadcast " + name + " of " + a.str() + " with " +
                     b.str());
  };
  return Shape{dim(a.n, b.n, "batch"), dim(a.c, b.c, "channels"), dim(a.h, b.h, "height"),
               dim(a.w, b.w, "width")};
}

Strides strides_for(const Shape& s, const Shape& out) {
  const std::size_t sw = 1;
  const std::size_t sh = static_cast<std::size_t>(s.w);
  const std::size_t sc = sh * s.h;
  const std::size_t sn = sc * s.c;
  return Strides{s.n == 1 && out.n > 1 ? 0 : sn, s.c == 1 && out.c > 1 ? 0 : sc,
                 s.h == 1 && out.h > 1 ? 0 : sh, s.w == 1 && out.w > 1 ? 0 : sw};
}

// Calls fn(out_index, a_index, b_index) over the broadcast output.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Strides& sa, const Strides& sb, Fn&& fn) {
  std::size_t o = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int h = 0; h < out.h; ++h) {
        const std::size_t ba = n * sa.n + c * sa.c + h * sa.h;
        const std::size_t bb = n * sb.n + c * sb.c + h * sb.h;
        for (int w = 0; w < out.w; ++w, ++o) fn(o, ba + w * sa.w, bb + w * sb.w);
      }
}

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(const Var& a, const Var& b, BinaryKind kind, const char* name) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape(), name);
  const Strides sa = strides_for(av.shape(), out_shape);
  const Strides sb = strides_for(bv.shape(), out_shape);
  Tensor out(out_shape);
  for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::kAdd: out[o] = av[ia] + bv[ib]; break;
      case BinaryKind::kSub: out[o] = av[ia] - bv[ib]; break;
      case BinaryKind::kMul: out[o] = av[ia] * bv[ib]; break;
    }
  });
  const int ida = a.id();
  const int idb = b.id();
  return tape.record(std::move(out), {ida, idb},
                     [ida, idb, kind, out_shape, sa, sb](Tape& t, const Tensor& g) {
                       const Tensor& av = t.value(ida);
                       const Tensor& bv = t.value(idb);
                       const bool need_a = t.requires_grad(ida);
                       const bool need_b = t.requires_grad(idb);
                       Tensor ga(av.shape());
                       Tensor gb(bv.shape());
                       for_each_broadcast(out_shape, sa, sb,
                                          [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                            switch (kind) {
                                              case BinaryKind::kAdd:
                                                ga[ia] += g[o];
                                                gb[ib] += g[o];
                                                break;
                                              case BinaryKind::kSub:
                                                ga[ia] += g[o];
                                                gb[ib] -= g[o];
                                                break;
                                              case BinaryKind::kMul:
                                                ga[ia] += g[o] * bv[ib];
                                                gb[ib] += g[o] * av[ia];
                                                break;
                                            }
                                          });
                       if (need_a) t.accumulate(ida, ga);
                       if (need_b) t.accumulate(idb, gb);
                     });
}

// ---- convolution geometry ----------------------------------------------

struct ConvGeom {
  int cin, h, w, kh, kw, stride, pad, hout, wout;
  int rows() const { return cin * kh * kw; }
  int cols() const { return hout * wout; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + kj lies inside [0, w).
std::pair<int, int> valid_columns(const ConvGeom& g, int kj) {
  const int off = kj - g.pad;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = g.w - off <= 0 ? 0 : (g.w - off + g.stride - 1) / g.stride;
  hi = std::min(hi, g.wout);
  lo = std::min(lo, hi);
  return {lo, hi};
}

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int p = g.cols();
  for (int c = 0; c < g.cin; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * p;
        const double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        const auto [lo, hi] = valid_columns(g, kj);
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          double* dst = row + static_cast<std::size_t>(oy) * g.wout;
          if (iy < 0 || iy >= g.h) {
            for (int ox = 0; ox < g.wout; ++ox) dst[ox] = 0.0;
            continue;
          }
          for (int ox = 0; ox < lo; ++ox) dst[ox] = 0.0;
          for (int ox = hi; ox < g.wout; ++ox) dst[ox] = 0.0;
          const int base = iy * g.w + kj - g.pad;
          if (g.stride == 1) {
            std::copy(plane + base + lo, plane + base + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = plane[base + ox * g.stride];
          }
        }
      }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
  const int p = g.cols();
  for (int c = 0; c < g.cin; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * p;
        double* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
        const auto [lo, hi] = valid_columns(g, kj);
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.wout;
          const int base = iy * g.w + kj - g.pad;
          for (int ox = lo; ox < hi; ++ox) plane[base + ox * g.stride] += src[ox];
        }
      }
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  const int id = a.id();
  return a.tape()->record(std::move(out), {id}, [id, s](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (auto& v : ga.data()) v *= s;
    t.accumulate(id, ga);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  const int id = a.id();
  return a.tape()->record(std::move(out), {id},
                          [id](Tape& t, const Tensor& g) { t.accumulate(id, g); });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::abs(v);
  const int id = a.id();
  return a.tape()->record(std::move(out), {id}, [id](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(id);
    Tensor ga(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      ga[i] = x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
    }
    t.accumulate(id, ga);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const int id = a.id();
  return a.tape()->record(Tensor::scalar(s), {id}, [id](Tape& t, const Tensor& g) {
    t.accumulate(id, Tensor(t.value(id).shape(), g.item()));
  });
}

Var mean(const Var& a) {
  const std::size_t count = a.value().size();
  if (count == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const int id = a.id();
  const double inv = 1.0 / static_cast<double>(count);
  return a.tape()->record(Tensor::scalar(s * inv), {id}, [id, inv](Tape& t, const Tensor& g) {
    t.accumulate(id, Tensor(t.value(id).shape(), g.item() * inv));
  });
}

Var activation(Activation kind, const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) {
    switch (kind) {
      case Activation::kLeakyRelu: v = v > 0.0 ? v : kLeakySlope * v; break;
      case Activation::kRelu: v = v > 0.0 ? v : 0.0; break;
      case Activation::kSigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
      case Activation::kTanh: v = std::tanh(v); break;
    }
  }
  const int id = x.id();
  return x.tape()->record(std::move(out), {id}, [id, kind](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(id);
    Tensor gx(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Activation::kLeakyRelu: d = in[i] > 0.0 ? 1.0 : kLeakySlope; break;
        case Activation::kRelu: d = in[i] > 0.0 ? 1.0 : 0.0; break;
        case Activation::kSigmoid: {
          const double y = 1.0 / (1.0 + std::exp(-in[i]));
          d = y * (1.0 - y);
          break;
        }
        case Activation::kTanh: {
          const double y = std::tanh(in[i]);
          d = 1.0 - y * y;
          break;
        }
      }
      gx[i] = g[i] * d;
    }
    t.accumulate(id, gx);
  });
}

Var log_sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v)));
  const int id = x.id();
  return x.tape()->record(std::move(out), {id}, [id](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(id);
    Tensor gx(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double v = in[i];
      // d/dx log sigmoid(x) = sigmoid(-x)
      const double s = v >= 0.0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
      gx[i] = g[i] * s;
    }
    t.accumulate(id, gx);
  });
}

int conv_output_size(int in, int kernel, int stride, int padding, const char* dim) {
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
  if (padding < 0) throw ShapeError("conv2d: padding must be non-negative");
  const int span = in + 2 * padding - kernel;
  if (span < 0 || span % stride != 0) {
    throw ShapeError(std::string("conv2d: ") + dim + " " + std::to_string(in) + " with kernel " +
                     std::to_string(kernel) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(padding) +
                     " does not give an integral output size");
  }
  return span / stride + 1;
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding) {
  Tape& tape = same_tape(input, weight);
  same_tape(input, bias);
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs.c) +
                     " do not match weight Cin " + std::to_string(ws.c));
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("conv2d: bias shape " + bias.shape().str() + " expected 1x" +
                     std::to_string(ws.n) + "x1x1 (Cout)");
  }
  ConvGeom g{xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding, 0, 0};
  g.hout = conv_output_size(xs.h, ws.h, stride, padding, "height");
  g.wout = conv_output_size(xs.w, ws.w, stride, padding, "width");
  const int cout = ws.n;
  const int k = g.rows();
  const int p = g.cols();

  Tensor out(Shape{xs.n, cout, g.hout, g.wout});
  // Column buffers are only kept when the weight gradient will need them.
  const bool keep = weight.requires_grad();
  auto cols = std::make_shared<std::vector<std::unique_ptr<double[]>>>(static_cast<std::size_t>(xs.n));
  const Tensor& xv = input.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  parallel_for(xs.n, [&](int n) {
    std::unique_ptr<double[]> c(new double[static_cast<std::size_t>(k) * p]);
    im2col(xv.ptr() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w, g, c.get());
    MatMap o(out.ptr() + static_cast<std::size_t>(n) * cout * p, cout, p);
    o.noalias() = ConstMatMap(wv.ptr(), cout, k) * ConstMatMap(c.get(), k, p);
    for (int co = 0; co < cout; ++co) o.row(co).array() += bv[static_cast<std::size_t>(co)];
    if (keep) (*cols)[static_cast<std::size_t>(n)] = std::move(c);
  });

  const int idx = input.id();
  const int idw = weight.id();
  const int idb = bias.id();
  return tape.record(std::move(out), {idx, idw, idb},
                     [idx, idw, idb, g, cout, k, p, cols](Tape& t, const Tensor& grad) {
                       const int batch = grad.n();
                       const bool need_x = t.requires_grad(idx);
                       const bool need_w = t.requires_grad(idw);
                       const bool need_b = t.requires_grad(idb);
                       const Tensor& wv = t.value(idw);
                       std::vector<RowMat> dw(static_cast<std::size_t>(batch));
                       Tensor dx(need_x ? t.value(idx).shape() : Shape{});
                       parallel_for(batch, [&](int n) {
                         ConstMatMap go(grad.ptr() + static_cast<std::size_t>(n) * cout * p, cout,
                                        p);
                         if (need_w) {
                           const double* c = (*cols)[static_cast<std::size_t>(n)].get();
                           dw[static_cast<std::size_t>(n)].noalias() =
                               go * ConstMatMap(c, k, p).transpose();
                         }
                         if (need_x) {
                           RowMat dcols = ConstMatMap(wv.ptr(), cout, k).transpose() * go;
                           col2im(dcols.data(), g,
                                  dx.ptr() + static_cast<std::size_t>(n) * g.cin * g.h * g.w);
                         }
                       });
                       if (need_w) {
                         Tensor gw(wv.shape());
                         MatMap acc(gw.ptr(), cout, k);
                         for (const auto& part : dw) acc += part;
                         t.accumulate(idw, gw);
                       }
                       if (need_b) {
                         Tensor gb(Shape{1, cout, 1, 1});
                         for (int n = 0; n < batch; ++n)
                           for (int co = 0; co < cout; ++co) {
                             const double* row =
                                 grad.ptr() + (static_cast<std::size_t>(n) * cout + co) * p;
                             double s = 0.0;
                             for (int i = 0; i < p; ++i) s += row[i];
                             gb[static_cast<std::size_t>(co)] += s;
                           }
                         t.accumulate(idb, gb);
                       }
                       if (need_x) t.accumulate(idx, dx);
                     });
}

Var batch_norm(const Var& input, const Var& gamma, const Var& beta, double eps) {
  Tape& tape = same_tape(input, gamma);
  same_tape(input, beta);
  const Shape s = input.shape();
  if (gamma.shape() != Shape{1, s.c, 1, 1}) {
    throw ShapeError("batch_norm: gamma shape " + gamma.shape().str() + " does not match C=" +
                     std::to_string(s.c));
  }
  if (beta.shape() != Shape{1, s.c, 1, 1}) {
    throw ShapeError("batch_norm: beta shape " + beta.shape().str() + " does not match C=" +
                     std::to_string(s.c));
  }
  const std::size_t plane = s.plane();
  const double m = static_cast<double>(static_cast<std::size_t>(s.n) * plane);
  const Tensor& x = input.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat(s);
  std::vector<double> inv_std(static_cast<std::size_t>(s.c));
  Tensor out(s);
  for (int c = 0; c < s.c; ++c) {
    double total = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* px = x.ptr() + x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) total += px[i];
    }
    const double mu = total / m;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* px = x.ptr() + x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) sq += (px[i] - mu) * (px[i] - mu);
    }
    const double inv = 1.0 / std::sqrt(sq / m + eps);
    inv_std[static_cast<std::size_t>(c)] = inv;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[base + i] - mu) * inv;
        xhat[base + i] = xh;
        out[base + i] = gv[static_cast<std::size_t>(c)] * xh + bv[static_cast<std::size_t>(c)];
      }
    }
  }
  const int idx = input.id();
  const int idg = gamma.id();
  const int idb = beta.id();
  return tape.record(
      std::move(out), {idx, idg, idb},
      [idx, idg, idb, xhat = std::move(xhat), inv_std = std::move(inv_std), m](
          Tape& t, const Tensor& g) {
        const Shape s = xhat.shape();
        const std::size_t plane = s.plane();
        const Tensor& gv = t.value(idg);
        Tensor dgamma(Shape{1, s.c, 1, 1});
        Tensor dbeta(Shape{1, s.c, 1, 1});
        Tensor dx(s);
        for (int c = 0; c < s.c; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t base = xhat.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[base + i];
              sum_gx += g[base + i] * xhat[base + i];
            }
          }
          const auto cc = static_cast<std::size_t>(c);
          dgamma[cc] = sum_gx;
          dbeta[cc] = sum_g;
          // dxhat = g * gamma; sums of dxhat factor out gamma.
          const double k = gv[cc] * inv_std[cc] / m;
          for (int n = 0; n < s.n; ++n) {
            const std::size_t base = xhat.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
              dx[base + i] = k * (m * g[base + i] - sum_g - xhat[base + i] * sum_gx);
            }
          }
        }
        t.accumulate(idx, dx);
        t.accumulate(idg, dgamma);
        t.accumulate(idb, dbeta);
      });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  Tape& tape = *parts[0].tape();
  std::vector<Tensor> values;
  std::vector<int> ids;
  std::vector<int> channels;
  values.reserve(parts.size());
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw std::invalid_argument("concat_channels: mixed tapes");
    values.push_back(p.value());
    ids.push_back(p.id());
    channels.push_back(p.shape().c);
  }
  Tensor out = cat_channels(values);
  return tape.record(std::move(out), ids, [ids, channels](Tape& t, const Tensor& g) {
    const Shape s = g.shape();
    const std::size_t plane = s.plane();
    int offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const int ck = channels[k];
      if (t.requires_grad(ids[k])) {
        Tensor part(Shape{s.n, ck, s.h, s.w});
        for (int n = 0; n < s.n; ++n) {
          std::memcpy(part.ptr() + static_cast<std::size_t>(n) * ck * plane,
                      g.ptr() + g.index(n, offset, 0, 0),
                      static_cast<std::size_t>(ck) * plane * sizeof(double));
        }
        t.accumulate(ids[k], part);
      }
      offset += ck;
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape s = x.shape();
  const Tensor& xv = x.value();
  Tensor out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < 2 * s.h; ++y)
        for (int xx = 0; xx < 2 * s.w; ++xx) out.at(n, c, y, xx) = xv.at(n, c, y / 2, xx / 2);
  const int id = x.id();
  return x.tape()->record(std::move(out), {id}, [id, s](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < 2 * s.h; ++y)
          for (int xx = 0; xx < 2 * s.w; ++xx) gx.at(n, c, y / 2, xx / 2) += g.at(n, c, y, xx);
    t.accumulate(id, gx);
  });
}

Var spatial_mean(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, s.c, 1, 1});
  const Tensor& xv = x.value();
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += xv[nc * plane + i];
    out[nc] = total / static_cast<double>(plane);
  }
  const int id = x.id();
  return x.tape()->record(std::move(out), {id}, [id, s, plane](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (std::size_t nc = 0; nc < g.size(); ++nc) {
      const double v = g[nc] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] = v;
    }
    t.accumulate(id, gx);
  });
}

Var spatial_max(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, s.c, 1, 1});
  std::vector<std::size_t> arg(out.size());
  const Tensor& xv = x.value();
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    std::size_t best = nc * plane;
    for (std::size_t i = 1; i < plane; ++i) {
      if (xv[nc * plane + i] > xv[best]) best = nc * plane + i;
    }
    arg[nc] = best;
    out[nc] = xv[best];
  }
  const int id = x.id();
  return x.tape()->record(std::move(out), {id},
                          [id, s, arg = std::move(arg)](Tape& t, const Tensor& g) {
                            Tensor gx(s);
                            for (std::size_t nc = 0; nc < g.size(); ++nc) gx[arg[nc]] += g[nc];
                            t.accumulate(id, gx);
                          });
}

Var channel_mean(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  const Tensor& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      double total = 0.0;
      for (int c = 0; c < s.c; ++c) total += xv[(static_cast<std::size_t>(n) * s.c + c) * plane + i];
      out[static_cast<std::size_t>(n) * plane + i] = total / s.c;
    }
  const int id = x.id();
  return x.tape()->record(std::move(out), {id}, [id, s, plane](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = g[static_cast<std::size_t>(n) * plane + i] / s.c;
        for (int c = 0; c < s.c; ++c) gx[(static_cast<std::size_t>(n) * s.c + c) * plane + i] = v;
      }
    t.accumulate(id, gx);
  });
}

Var channel_max(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  std::vector<std::size_t> arg(out.size());
  const Tensor& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = static_cast<std::size_t>(n) * s.c * plane + i;
      for (int c = 1; c < s.c; ++c) {
        const std::size_t j = (static_cast<std::size_t>(n) * s.c + c) * plane + i;
        if (xv[j] > xv[best]) best = j;
      }
      arg[static_cast<std::size_t>(n) * plane + i] = best;
      out[static_cast<std::size_t>(n) * plane + i] = xv[best];
    }
  const int id = x.id();
  return x.tape()->record(std::move(out), {id},
                          [id, s, arg = std::move(arg)](Tape& t, const Tensor& g) {
                            Tensor gx(s);
                            for (std::size_t k = 0; k < g.size(); ++k) gx[arg[k]] += g[k];
                            t.accumulate(id, gx);
                          });
}

Tensor softmax_channels(const Tensor& logits) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("softmax_channels expects [N,K,1,1], got " + s.str());
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    const double* z = logits.ptr() + static_cast<std::size_t>(n) * s.c;
    const double zmax = *std::max_element(z, z + s.c);
    double total = 0.0;
    for (int k = 0; k < s.c; ++k) total += std::exp(z[k] - zmax);
    for (int k = 0; k < s.c; ++k) {
      out[static_cast<std::size_t>(n) * s.c + k] = std::exp(z[k] - zmax) / total;
    }
  }
  return out;
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) {
    throw ShapeError("softmax_cross_entropy expects [N,K,1,1], got " + s.str());
  }
  if (static_cast<int>(labels.size()) != s.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(s.n));
  }
  Tensor probs = softmax_channels(logits.value());
  double loss = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (int n = 0; n < s.n; ++n) {
    const int y = lab[static_cast<std::size_t>(n)];
    if (y < 0 || y >= s.c) throw std::out_of_range("softmax_cross_entropy: label out of range");
    const double* z = logits.value().ptr() + static_cast<std::size_t>(n) * s.c;
    const double zmax = *std::max_element(z, z + s.c);
    double total = 0.0;
    for (int k = 0; k < s.c; ++k) total += std::exp(z[k] - zmax);
    loss += -(z[y] - zmax - std::log(total));
  }
  loss /= s.n;
  const int id = logits.id();
  return logits.tape()->record(
      Tensor::scalar(loss), {id},
      [id, probs = std::move(probs), lab = std::move(lab)](Tape& t, const Tensor& g) {
        const Shape s = probs.shape();
        Tensor gx = probs;
        for (int n = 0; n < s.n; ++n) gx[static_cast<std::size_t>(n) * s.c + lab[n]] -= 1.0;
        const double k = g.item() / s.n;
        for (auto& v : gx.data()) v *= k;
        t.accumulate(id, gx);
      });
}

}  // namespace xvfg
