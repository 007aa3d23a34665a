#include "xvfg/deform.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "xvfg/ops.hpp"
#include "xvfg/parallel.hpp"

namespace xvfg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Four neighbours of one sampling point: flat plane index (-1 when outside
// the map), interpolation weight, and weight derivatives w.r.t. y and x.
struct Tap {
  int idx[4];
  double w[4];
  double wy[4];
  double wx[4];
};

Tap make_tap(double y, double x, int h, int w) {
  const double fy0 = std::floor(y);
  const double fx0 = std::floor(x);
  const double fy = y - fy0;
  const double fx = x - fx0;
  const int y0 = static_cast<int>(fy0);
  const int x0 = static_cast<int>(fx0);
  Tap t{};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  t.w[0] = (1.0 - fy) * (1.0 - fx);
  t.w[1] = (1.0 - fy) * fx;
  t.w[2] = fy * (1.0 - fx);
  t.w[3] = fy * fx;
  t.wy[0] = -(1.0 - fx);
  t.wy[1] = -fx;
  t.wy[2] = 1.0 - fx;
  t.wy[3] = fx;
  t.wx[0] = -(1.0 - fy);
  t.wx[1] = 1.0 - fy;
  t.wx[2] = -fy;
  t.wx[3] = fy;
  for (int k = 0; k < 4; ++k) {
    const bool inside = ys[k] >= 0 && ys[k] < h && xs[k] >= 0 && xs[k] < w;
    t.idx[k] = inside ? ys[k] * w + xs[k] : -1;
  }
  return t;
}

inline double tap_value(const Tap& t, const double* plane) {
  double v = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (t.idx[k] >= 0) v += t.w[k] * plane[t.idx[k]];
  }
  return v;
}

}  // namespace

BilinearSample bilinear_sample(const Tensor& map, double y, double x, int n) {
  const Shape s = map.shape();
  const Tap t = make_tap(y, x, s.h, s.w);
  BilinearSample out;
  out.value.resize(static_cast<std::size_t>(s.c));
  out.d_dy.resize(static_cast<std::size_t>(s.c));
  out.d_dx.resize(static_cast<std::size_t>(s.c));
  for (int c = 0; c < s.c; ++c) {
    const double* plane = map.ptr() + map.index(n, c, 0, 0);
    double v = 0.0;
    double dy = 0.0;
    double dx = 0.0;
    for (int k = 0; k < 4; ++k) {
      if (t.idx[k] < 0) continue;
      v += t.w[k] * plane[t.idx[k]];
      dy += t.wy[k] * plane[t.idx[k]];
      dx += t.wx[k] * plane[t.idx[k]];
    }
    out.value[static_cast<std::size_t>(c)] = v;
    out.d_dy[static_cast<std::size_t>(c)] = dy;
    out.d_dx[static_cast<std::size_t>(c)] = dx;
  }
  return out;
}

Var sample_points(const Var& map, const Var& coords) {
  if (map.tape() != coords.tape()) throw std::invalid_argument("sample_points: mixed tapes");
  const Shape ms = map.shape();
  const Shape cs = coords.shape();
  if (cs.n != ms.n || cs.c != 2 || cs.w != 1) {
    throw ShapeError("sample_points: coords " + cs.str() + " must be [" + std::to_string(ms.n) +
                     ",2,P,1]");
  }
  const int points = cs.h;
  const Tensor& mv = map.value();
  const Tensor& cv = coords.value();
  Tensor out(Shape{ms.n, ms.c, points, 1});
  std::vector<Tap> taps(static_cast<std::size_t>(ms.n) * points);
  for (int n = 0; n < ms.n; ++n)
    for (int p = 0; p < points; ++p) {
      const Tap t = make_tap(cv.at(n, 0, p, 0), cv.at(n, 1, p, 0), ms.h, ms.w);
      taps[static_cast<std::size_t>(n) * points + p] = t;
      for (int c = 0; c < ms.c; ++c) out.at(n, c, p, 0) = tap_value(t, mv.ptr() + mv.index(n, c, 0, 0));
    }
  const int idm = map.id();
  const int idc = coords.id();
  return map.tape()->record(
      std::move(out), {idm, idc},
      [idm, idc, points, taps = std::move(taps)](Tape& t, const Tensor& g) {
        const Tensor& mv = t.value(idm);
        const Shape ms = mv.shape();
        Tensor gm(ms);
        Tensor gc(t.value(idc).shape());
        for (int n = 0; n < ms.n; ++n)
          for (int p = 0; p < points; ++p) {
            const Tap& tp = taps[static_cast<std::size_t>(n) * points + p];
            for (int c = 0; c < ms.c; ++c) {
              const double go = g.at(n, c, p, 0);
              const std::size_t base = mv.index(n, c, 0, 0);
              for (int k = 0; k < 4; ++k) {
                if (tp.idx[k] < 0) continue;
                gm[base + tp.idx[k]] += tp.w[k] * go;
                gc.at(n, 0, p, 0) += tp.wy[k] * mv[base + tp.idx[k]] * go;
                gc.at(n, 1, p, 0) += tp.wx[k] * mv[base + tp.idx[k]] * go;
              }
            }
          }
        t.accumulate(idm, gm);
        t.accumulate(idc, gc);
      });
}

Var deform_conv2d(const Var& input, const Var& offsets, const Var& weight, const Var& bias,
                  int stride, int padding) {
  Tape& tape = *input.tape();
  if (offsets.tape() != &tape || weight.tape() != &tape || bias.tape() != &tape) {
    throw std::invalid_argument("deform_conv2d: mixed tapes");
  }
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("deform_conv2d: input channels " + std::to_string(xs.c) +
                     " do not match weight Cin " + std::to_string(ws.c));
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("deform_conv2d: bias shape " + bias.shape().str() + " expected Cout=" +
                     std::to_string(ws.n));
  }
  const int kh = ws.h;
  const int kw = ws.w;
  const int taps_per_point = kh * kw;
  const int hout = conv_output_size(xs.h, kh, stride, padding, "height");
  const int wout = conv_output_size(xs.w, kw, stride, padding, "width");
  const Shape expect_off{xs.n, 2 * taps_per_point, hout, wout};
  if (offsets.shape() != expect_off) {
    throw ShapeError("deform_conv2d: offset map " + offsets.shape().str() +
                     " does not match output grid " + expect_off.str());
  }
  const int cin = xs.c;
  const int cout = ws.n;
  const int k = cin * taps_per_point;
  const int p = hout * wout;
  const std::size_t in_plane = xs.plane();

  struct Saved {
    std::vector<std::vector<Tap>> taps;
    std::vector<std::unique_ptr<double[]>> cols;  // only when the weight needs a gradient
  };
  const bool keep_cols = weight.requires_grad();
  auto saved = std::make_shared<Saved>();
  saved->taps.resize(static_cast<std::size_t>(xs.n));
  saved->cols.resize(static_cast<std::size_t>(xs.n));

  const Tensor& xv = input.value();
  const Tensor& ov = offsets.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  Tensor out(Shape{xs.n, cout, hout, wout});
  parallel_for(xs.n, [&](int n) {
    auto& taps = saved->taps[static_cast<std::size_t>(n)];
    std::unique_ptr<double[]> cols(new double[static_cast<std::size_t>(k) * p]);
    taps.resize(static_cast<std::size_t>(taps_per_point) * p);
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const int t = ki * kw + kj;
        for (int oy = 0; oy < hout; ++oy)
          for (int ox = 0; ox < wout; ++ox) {
            const double y = oy * stride - padding + ki + ov.at(n, 2 * t, oy, ox);
            const double x = ox * stride - padding + kj + ov.at(n, 2 * t + 1, oy, ox);
            taps[static_cast<std::size_t>(t) * p + oy * wout + ox] = make_tap(y, x, xs.h, xs.w);
          }
      }
    const double* xn = xv.ptr() + static_cast<std::size_t>(n) * cin * in_plane;
    for (int c = 0; c < cin; ++c)
      for (int t = 0; t < taps_per_point; ++t) {
        double* row = cols.get() + static_cast<std::size_t>(c * taps_per_point + t) * p;
        const Tap* tp = taps.data() + static_cast<std::size_t>(t) * p;
        const double* plane = xn + c * in_plane;
        for (int q = 0; q < p; ++q) row[q] = tap_value(tp[q], plane);
      }
    MatMap o(out.ptr() + static_cast<std::size_t>(n) * cout * p, cout, p);
    o.noalias() = ConstMatMap(wv.ptr(), cout, k) * ConstMatMap(cols.get(), k, p);
    for (int co = 0; co < cout; ++co) o.row(co).array() += bv[static_cast<std::size_t>(co)];
    if (keep_cols) saved->cols[static_cast<std::size_t>(n)] = std::move(cols);
  });

  const int idx = input.id();
  const int ido = offsets.id();
  const int idw = weight.id();
  const int idb = bias.id();
  return tape.record(
      std::move(out), {idx, ido, idw, idb},
      [=](Tape& t, const Tensor& grad) {
        const int batch = grad.n();
        const bool need_x = t.requires_grad(idx);
        const bool need_o = t.requires_grad(ido);
        const bool need_w = t.requires_grad(idw);
        const bool need_b = t.requires_grad(idb);
        const Tensor& xv = t.value(idx);
        const Tensor& wv = t.value(idw);
        Tensor dx(xv.shape());
        Tensor doff(t.value(ido).shape());
        std::vector<RowMat> dw(static_cast<std::size_t>(batch));
        parallel_for(batch, [&](int n) {
          ConstMatMap go(grad.ptr() + static_cast<std::size_t>(n) * cout * p, cout, p);
          const auto& taps = saved->taps[static_cast<std::size_t>(n)];
          if (need_w) {
            const double* cols = saved->cols[static_cast<std::size_t>(n)].get();
            dw[static_cast<std::size_t>(n)].noalias() = go * ConstMatMap(cols, k, p).transpose();
          }
          if (!need_x && !need_o) return;
          const RowMat dcols = ConstMatMap(wv.ptr(), cout, k).transpose() * go;
          const double* xn = xv.ptr() + static_cast<std::size_t>(n) * cin * in_plane;
          double* dxn = dx.ptr() + static_cast<std::size_t>(n) * cin * in_plane;
          for (int c = 0; c < cin; ++c)
            for (int tt = 0; tt < taps_per_point; ++tt) {
              const double* drow = dcols.data() + static_cast<std::size_t>(c * taps_per_point + tt) * p;
              const Tap* tp = taps.data() + static_cast<std::size_t>(tt) * p;
              const double* plane = xn + c * in_plane;
              double* dplane = dxn + c * in_plane;
              double* dy_plane = doff.ptr() + doff.index(n, 2 * tt, 0, 0);
              double* dx_plane = doff.ptr() + doff.index(n, 2 * tt + 1, 0, 0);
              for (int q = 0; q < p; ++q) {
                const double d = drow[q];
                const Tap& tap = tp[q];
                double gy = 0.0;
                double gx = 0.0;
                for (int j = 0; j < 4; ++j) {
                  if (tap.idx[j] < 0) continue;
                  dplane[tap.idx[j]] += tap.w[j] * d;
                  gy += tap.wy[j] * plane[tap.idx[j]];
                  gx += tap.wx[j] * plane[tap.idx[j]];
                }
                dy_plane[q] += gy * d;
                dx_plane[q] += gx * d;
              }
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
              const double* row = grad.ptr() + (static_cast<std::size_t>(n) * cout + co) * p;
              double s = 0.0;
              for (int i = 0; i < p; ++i) s += row[i];
              gb[static_cast<std::size_t>(co)] += s;
            }
          t.accumulate(idb, gb);
        }
        if (need_x) t.accumulate(idx, dx);
        if (need_o) t.accumulate(ido, doff);
      });
}

DeformConvLayer DeformConvLayer::create(const std::string& name, int cin, int cout, int kernel,
                                        int stride, int padding, Rng& rng, double init_std) {
  DeformConvLayer layer;
  layer.weight = Parameter(name + ".weight", random_normal(Shape{cout, cin, kernel, kernel}, rng, init_std));
  layer.bias = Parameter(name + ".bias", Tensor(Shape{1, cout, 1, 1}));
  const int off = 2 * kernel * kernel;
  layer.offset_weight = Parameter(name + ".offset.weight", Tensor(Shape{off, cin, kernel, kernel}));
  layer.offset_bias = Parameter(name + ".offset.bias", Tensor(Shape{1, off, 1, 1}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Var DeformConvLayer::offsets(Tape& tape, const Var& input) {
  return conv2d(input, tape.param(offset_weight), tape.param(offset_bias), stride, padding);
}

Var DeformConvLayer::forward(Tape& tape, const Var& input) {
  const Var off = offsets(tape, input);
  return deform_conv2d(input, off, tape.param(weight), tape.param(bias), stride, padding);
}

std::vector<Parameter*> DeformConvLayer::parameters() {
  return {&weight, &bias, &offset_weight, &offset_bias};
}

std::vector<Parameter*> DeformConvLayer::offset_parameters() { return {&offset_weight, &offset_bias}; }

}  // namespace xvfg
