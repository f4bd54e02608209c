#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "nmsr/error.hpp"
#include "nmsr/tensor.hpp"

namespace nmsr {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw InvalidShape(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                       ", got shape " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidShape(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
}

Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  Tensor out(std::move(shape));
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) {
      out.set_requires_grad(true);
      break;
    }
  }
  return out;
}

struct ConvGeometry {
  std::int64_t n, c, h, w, k, kh, kw, ho, wo;
  int stride, padding;
  std::int64_t patch() const { return c * kh * kw; }
  std::int64_t out_pixels() const { return ho * wo; }
};

void im2col(const double* in, const ConvGeometry& g, double* cols) {
  const auto hw_out = g.out_pixels();
  for (std::int64_t ci = 0; ci < g.c; ++ci) {
    const double* plane = in + ci * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((ci * g.kh + i) * g.kw + j) * hw_out;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + i;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + j;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* in_grad) {
  const auto hw_out = g.out_pixels();
  for (std::int64_t ci = 0; ci < g.c; ++ci) {
    double* plane = in_grad + ci * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((ci * g.kh + i) * g.kw + j) * hw_out;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + i;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          double* dst = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + j;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct BilinearTap {
  std::int64_t x0, x1, y0, y1;
  double wx, wy;
  bool inside_x, inside_y;
};

BilinearTap bilinear_tap(std::int64_t height, std::int64_t width, double x, double y) {
  BilinearTap t{};
  const double xmax = static_cast<double>(width - 1);
  const double ymax = static_cast<double>(height - 1);
  t.inside_x = x >= 0.0 && x <= xmax;
  t.inside_y = y >= 0.0 && y <= ymax;
  const double xc = std::clamp(x, 0.0, xmax);
  const double yc = std::clamp(y, 0.0, ymax);
  t.x0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(xc)),
                                std::max<std::int64_t>(width - 2, 0));
  t.y0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(yc)),
                                std::max<std::int64_t>(height - 2, 0));
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.wx = width > 1 ? xc - static_cast<double>(t.x0) : 0.0;
  t.wy = height > 1 ? yc - static_cast<double>(t.y0) : 0.0;
  if (width == 1) t.inside_x = false;
  if (height == 1) t.inside_y = false;
  return t;
}

}  // namespace

double sample_bilinear(std::span<const double> plane, std::int64_t height, std::int64_t width,
                       double x, double y) {
  const auto t = bilinear_tap(height, width, x, y);
  const double v00 = plane[t.y0 * width + t.x0];
  const double v01 = plane[t.y0 * width + t.x1];
  const double v10 = plane[t.y1 * width + t.x0];
  const double v11 = plane[t.y1 * width + t.x1];
  return (1.0 - t.wy) * ((1.0 - t.wx) * v00 + t.wx * v01) +
         t.wy * ((1.0 - t.wx) * v10 + t.wx * v11);
}

namespace ops {

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride < 1) throw InvalidShape("conv2d: stride must be >= 1");
  if (padding < 0) throw InvalidShape("conv2d: padding must be >= 0");
  ConvGeometry geo{};
  geo.n = input.dim(0);
  geo.c = input.dim(1);
  geo.h = input.dim(2);
  geo.w = input.dim(3);
  geo.k = kernel.dim(0);
  geo.kh = kernel.dim(2);
  geo.kw = kernel.dim(3);
  geo.stride = stride;
  geo.padding = padding;
  if (kernel.dim(1) != geo.c) {
    throw InvalidShape("conv2d: kernel channel dim (dim 1) is " + std::to_string(kernel.dim(1)) +
                       " but input has " + std::to_string(geo.c) + " channels");
  }
  if (bias.dim(0) != geo.k) {
    throw InvalidShape("conv2d: bias length (dim 0) is " + std::to_string(bias.dim(0)) +
                       " but kernel has " + std::to_string(geo.k) + " filters");
  }
  if (geo.kh % 2 == 0 || geo.kw % 2 == 0) {
    throw InvalidShape("conv2d: kernel height/width (dims 2,3) must be odd, got " +
                       shape_str(kernel.shape()));
  }
  const auto span_h = geo.h + 2 * padding - geo.kh;
  const auto span_w = geo.w + 2 * padding - geo.kw;
  if (span_h < 0) {
    throw InvalidShape("conv2d: input height (dim 2) " + std::to_string(geo.h) +
                       " smaller than the kernel after padding");
  }
  if (span_w < 0) {
    throw InvalidShape("conv2d: input width (dim 3) " + std::to_string(geo.w) +
                       " smaller than the kernel after padding");
  }
  geo.ho = span_h / stride + 1;
  geo.wo = span_w / stride + 1;

  Tensor out = make_output({geo.n, geo.k, geo.ho, geo.wo}, {&input, &kernel, &bias});
  const auto patch = geo.patch();
  const auto hw_out = geo.out_pixels();
  auto cols = std::make_shared<AlignedBuffer>(
      static_cast<std::size_t>(geo.n * patch * hw_out));

  ConstRowMap wmat(kernel.data().data(), geo.k, patch);
  const double* in = input.data().data();
  double* dst = out.data().data();
  for (std::int64_t n = 0; n < geo.n; ++n) {
    double* col = cols->data() + n * patch * hw_out;
    im2col(in + n * geo.c * geo.h * geo.w, geo, col);
    RowMap omat(dst + n * geo.k * hw_out, geo.k, hw_out);
    omat.noalias() = wmat * ConstRowMap(col, patch, hw_out);
    for (std::int64_t k = 0; k < geo.k; ++k) omat.row(k).array() += bias.data()[k];
  }

  g.record("conv2d", {input, kernel, bias}, out,
           [input, kernel, bias, out, cols, geo]() mutable {
             const auto patch = geo.patch();
             const auto hw_out = geo.out_pixels();
             const double* dout = out.grad().data();
             ConstRowMap wmat(kernel.data().data(), geo.k, patch);
             const bool corrupt = fault_injection::active("conv2d");
             AlignedBuffer dcols;
             if (input.requires_grad()) dcols.resize(static_cast<std::size_t>(patch * hw_out));
             for (std::int64_t n = 0; n < geo.n; ++n) {
               ConstRowMap dmat(dout + n * geo.k * hw_out, geo.k, hw_out);
               ConstRowMap col(cols->data() + n * patch * hw_out, patch, hw_out);
               if (kernel.requires_grad()) {
                 RowMap dw(kernel.grad_mut().data(), geo.k, patch);
                 if (corrupt) {
                   dw.noalias() += 1.05 * (dmat * col.transpose());
                 } else {
                   dw.noalias() += dmat * col.transpose();
                 }
               }
               if (bias.requires_grad()) {
                 auto db = bias.grad_mut();
                 for (std::int64_t k = 0; k < geo.k; ++k) db[k] += dmat.row(k).sum();
               }
               if (input.requires_grad()) {
                 RowMap dc(dcols.data(), patch, hw_out);
                 dc.noalias() = wmat.transpose() * dmat;
                 col2im(dcols.data(), geo,
                        input.grad_mut().data() + n * geo.c * geo.h * geo.w);
               }
             }
           });
  return out;
}

Tensor leaky_relu(Graph& g, const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ContractError("leaky_relu: slope must lie in (0,1)");
  Tensor out = make_output(x.shape(), {&x});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : slope * src[i];
  g.record("leaky_relu", {x}, out, [x, out, slope]() mutable {
    auto src = x.data();
    auto dout = out.grad();
    auto dx = x.grad_mut();
    for (std::size_t i = 0; i < src.size(); ++i) dx[i] += src[i] > 0.0 ? dout[i] : slope * dout[i];
  });
  return out;
}

Tensor upsample2x(Graph& g, const Tensor& x) {
  require_rank(x, 4, "upsample2x", "input");
  const auto planes = x.dim(0) * x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  Tensor out = make_output({x.dim(0), x.dim(1), 2 * h, 2 * w}, {&x});
  const double* src = x.data().data();
  double* dst = out.data().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t y = 0; y < 2 * h; ++y) {
      const double* srow = src + p * h * w + (y / 2) * w;
      double* drow = dst + p * 4 * h * w + y * 2 * w;
      for (std::int64_t xo = 0; xo < 2 * w; ++xo) drow[xo] = srow[xo / 2];
    }
  }
  g.record("upsample2x", {x}, out, [x, out, planes, h, w]() mutable {
    const double* dout = out.grad().data();
    double* dx = x.grad_mut().data();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t y = 0; y < 2 * h; ++y) {
        const double* grow = dout + p * 4 * h * w + y * 2 * w;
        double* drow = dx + p * h * w + (y / 2) * w;
        for (std::int64_t xo = 0; xo < 2 * w; ++xo) drow[xo / 2] += grow[xo];
      }
    }
  });
  return out;
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels", "first operand");
  require_rank(b, 4, "concat_channels", "second operand");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw InvalidShape("concat_channels: N/H/W mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
  const auto n = a.dim(0);
  const auto plane = a.dim(2) * a.dim(3);
  const auto ca = a.dim(1) * plane;
  const auto cb = b.dim(1) * plane;
  Tensor out = make_output({n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)}, {&a, &b});
  for (std::int64_t i = 0; i < n; ++i) {
    auto dst = out.data().begin() + i * (ca + cb);
    std::copy_n(a.data().begin() + i * ca, ca, dst);
    std::copy_n(b.data().begin() + i * cb, cb, dst + ca);
  }
  g.record("concat_channels", {a, b}, out, [a, b, out, n, ca, cb]() mutable {
    auto dout = out.grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const auto base = i * (ca + cb);
      if (a.requires_grad()) {
        auto da = a.grad_mut();
        for (std::int64_t j = 0; j < ca; ++j) da[i * ca + j] += dout[base + j];
      }
      if (b.requires_grad()) {
        auto db = b.grad_mut();
        for (std::int64_t j = 0; j < cb; ++j) db[i * cb + j] += dout[base + ca + j];
      }
    }
  });
  return out;
}

Tensor slice_channels(Graph& g, const Tensor& x, std::int64_t begin, std::int64_t end) {
  require_rank(x, 4, "slice_channels", "input");
  if (begin < 0 || end > x.dim(1) || begin >= end) {
    throw InvalidShape("slice_channels: range [" + std::to_string(begin) + "," +
                       std::to_string(end) + ") invalid for channel dim (dim 1) of " +
                       shape_str(x.shape()));
  }
  const auto n = x.dim(0);
  const auto plane = x.dim(2) * x.dim(3);
  const auto cin = x.dim(1) * plane;
  const auto cout = (end - begin) * plane;
  const auto off = begin * plane;
  Tensor out = make_output({n, end - begin, x.dim(2), x.dim(3)}, {&x});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(x.data().begin() + i * cin + off, cout, out.data().begin() + i * cout);
  }
  g.record("slice_channels", {x}, out, [x, out, n, cin, cout, off]() mutable {
    auto dout = out.grad();
    auto dx = x.grad_mut();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < cout; ++j) dx[i * cin + off + j] += dout[i * cout + j];
    }
  });
  return out;
}

Tensor grid_sample_bilinear(Graph& g, const Tensor& image, const Tensor& flow) {
  require_rank(image, 4, "grid_sample_bilinear", "image");
  require_rank(flow, 4, "grid_sample_bilinear", "flow");
  if (flow.dim(1) != 2) {
    throw InvalidShape("grid_sample_bilinear: flow channel dim (dim 1) must be 2, got " +
                       shape_str(flow.shape()));
  }
  if (flow.dim(0) != image.dim(0) || flow.dim(2) != image.dim(2) ||
      flow.dim(3) != image.dim(3)) {
    throw InvalidShape("grid_sample_bilinear: image " + shape_str(image.shape()) +
                       " and flow " + shape_str(flow.shape()) + " disagree in N/H/W");
  }
  const auto n = image.dim(0);
  const auto c = image.dim(1);
  const auto h = image.dim(2);
  const auto w = image.dim(3);
  const auto plane = h * w;
  Tensor out = make_output(image.shape(), {&image, &flow});
  const double* img = image.data().data();
  const double* fl = flow.data().data();
  double* dst = out.data().data();
  for (std::int64_t b = 0; b < n; ++b) {
    const double* fx = fl + b * 2 * plane;
    const double* fy = fx + plane;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const auto p = y * w + x;
        const auto t = bilinear_tap(h, w, static_cast<double>(x) + fx[p],
                                    static_cast<double>(y) + fy[p]);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* src = img + (b * c + ch) * plane;
          const double v00 = src[t.y0 * w + t.x0];
          const double v01 = src[t.y0 * w + t.x1];
          const double v10 = src[t.y1 * w + t.x0];
          const double v11 = src[t.y1 * w + t.x1];
          dst[(b * c + ch) * plane + p] = (1.0 - t.wy) * ((1.0 - t.wx) * v00 + t.wx * v01) +
                                          t.wy * ((1.0 - t.wx) * v10 + t.wx * v11);
        }
      }
    }
  }
  g.record("grid_sample_bilinear", {image, flow}, out,
           [image, flow, out, n, c, h, w, plane]() mutable {
             const double* img = image.data().data();
             const double* fl = flow.data().data();
             const double* dout = out.grad().data();
             double* dimg = image.requires_grad() ? image.grad_mut().data() : nullptr;
             double* dflow = flow.requires_grad() ? flow.grad_mut().data() : nullptr;
             for (std::int64_t b = 0; b < n; ++b) {
               const double* fx = fl + b * 2 * plane;
               const double* fy = fx + plane;
               for (std::int64_t y = 0; y < h; ++y) {
                 for (std::int64_t x = 0; x < w; ++x) {
                   const auto p = y * w + x;
                   const auto t = bilinear_tap(h, w, static_cast<double>(x) + fx[p],
                                               static_cast<double>(y) + fy[p]);
                   double gx = 0.0;
                   double gy = 0.0;
                   for (std::int64_t ch = 0; ch < c; ++ch) {
                     const auto base = (b * c + ch) * plane;
                     const double go = dout[base + p];
                     if (dimg) {
                       dimg[base + t.y0 * w + t.x0] += go * (1.0 - t.wy) * (1.0 - t.wx);
                       dimg[base + t.y0 * w + t.x1] += go * (1.0 - t.wy) * t.wx;
                       dimg[base + t.y1 * w + t.x0] += go * t.wy * (1.0 - t.wx);
                       dimg[base + t.y1 * w + t.x1] += go * t.wy * t.wx;
                     }
                     if (dflow) {
                       const double* src = img + base;
                       const double v00 = src[t.y0 * w + t.x0];
                       const double v01 = src[t.y0 * w + t.x1];
                       const double v10 = src[t.y1 * w + t.x0];
                       const double v11 = src[t.y1 * w + t.x1];
                       if (t.inside_x) gx += go * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                       if (t.inside_y) gy += go * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                     }
                   }
                   if (dflow) {
                     dflow[b * 2 * plane + p] += gx;
                     dflow[b * 2 * plane + plane + p] += gy;
                   }
                 }
               }
             }
           });
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_output(a.shape(), {&a, &b});
  for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  g.record("add", {a, b}, out, [a, b, out]() mutable {
    auto dout = out.grad();
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto d = t->grad_mut();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i];
    }
  });
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_output(a.shape(), {&a, &b});
  for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  g.record("mul", {a, b}, out, [a, b, out]() mutable {
    auto dout = out.grad();
    if (a.requires_grad()) {
      auto d = a.grad_mut();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto d = b.grad_mut();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i] * a.data()[i];
    }
  });
  return out;
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  Tensor out = make_output(x.shape(), {&x});
  for (std::int64_t i = 0; i < x.numel(); ++i) out.data()[i] = factor * x.data()[i];
  g.record("scale", {x}, out, [x, out, factor]() mutable {
    auto dout = out.grad();
    auto d = x.grad_mut();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * dout[i];
  });
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  Tensor out = make_output({1}, {&x});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data()[0] = acc;
  g.record("sum", {x}, out, [x, out]() mutable {
    const double go = out.grad()[0];
    for (double& d : x.grad_mut()) d += go;
  });
  return out;
}

}  // namespace ops
}  // namespace nmsr
