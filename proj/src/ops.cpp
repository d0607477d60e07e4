/* Copyright 2026 The voxelstruct Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "voxelstruct/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace voxelstruct {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch, kernel, stride, pad;
  std::size_t in_d, in_h, in_w;     // spatial extent of the "image" side
  std::size_t out_d, out_h, out_w;  // spatial extent of the "feature" side
  std::size_t rows() const { return in_ch * kernel * kernel * kernel; }
  std::size_t cols() const { return out_d * out_h * out_w; }
  std::size_t image_size() const { return in_d * in_h * in_w; }
};

void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t k = g.kernel;
  const std::size_t ncols = g.cols();
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const double* img = image + c * g.image_size();
    for (std::size_t kz = 0; kz < k; ++kz)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* row = cols + (((c * k + kz) * k + ky) * k + kx) * ncols;
          std::size_t p = 0;
          for (std::size_t oz = 0; oz < g.out_d; ++oz) {
            const long iz = static_cast<long>(oz * g.stride + kz) - pad;
            const bool zin = iz >= 0 && iz < static_cast<long>(g.in_d);
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const long iy = static_cast<long>(oy * g.stride + ky) - pad;
              const bool yin = zin && iy >= 0 && iy < static_cast<long>(g.in_h);
              for (std::size_t ox = 0; ox < g.out_w; ++ox, ++p) {
                const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                row[p] = (yin && ix >= 0 && ix < static_cast<long>(g.in_w))
                             ? img[(static_cast<std::size_t>(iz) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                                   static_cast<std::size_t>(ix)]
                             : 0.0;
              }
            }
          }
        }
  }
}

// Scatter-add of the columns back to the image; the exact transpose of im2col.
void col2im(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t k = g.kernel;
  const std::size_t ncols = g.cols();
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    double* img = image + c * g.image_size();
    for (std::size_t kz = 0; kz < k; ++kz)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double* row = cols + (((c * k + kz) * k + ky) * k + kx) * ncols;
          std::size_t p = 0;
          for (std::size_t oz = 0; oz < g.out_d; ++oz) {
            const long iz = static_cast<long>(oz * g.stride + kz) - pad;
            const bool zin = iz >= 0 && iz < static_cast<long>(g.in_d);
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const long iy = static_cast<long>(oy * g.stride + ky) - pad;
              const bool yin = zin && iy >= 0 && iy < static_cast<long>(g.in_h);
              for (std::size_t ox = 0; ox < g.out_w; ++ox, ++p) {
                const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                if (yin && ix >= 0 && ix < static_cast<long>(g.in_w)) {
                  img[(static_cast<std::size_t>(iz) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                      static_cast<std::size_t>(ix)] += row[p];
                }
              }
            }
          }
        }
  }
}

void check_kernel(const char* op, const Tensor& k) {
  if (k.rank() != 5 || k.dim(2) != k.dim(3) || k.dim(3) != k.dim(4) || k.dim(2) == 0) {
    throw DimensionError(std::string(op) + ": kernel must be [F,C,k,k,k], got " + shape_str(k.shape()));
  }
}

void check_stride(std::size_t stride) {
  if (stride == 0) throw ConfigError("convolution stride must be >= 1");
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  accumulate(&out, b.value());
  return a.tape().record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
    accumulate(ctx.input_grad(0), ctx.out_grad());
    accumulate(ctx.input_grad(1), ctx.out_grad());
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  accumulate(&out, b.value(), -1.0);
  return a.tape().record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
    accumulate(ctx.input_grad(0), ctx.out_grad());
    accumulate(ctx.input_grad(1), ctx.out_grad(), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (Tensor* ga = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * ctx.input(1)[i];
    }
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ctx.input(0)[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape().record("scale", std::move(out), {x},
                         [factor](BackwardContext& ctx) { accumulate(ctx.input_grad(0), ctx.out_grad(), factor); });
}

Var add_scalar(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.data()) v += c;
  return x.tape().record("add_scalar", std::move(out), {x},
                         [](BackwardContext& ctx) { accumulate(ctx.input_grad(0), ctx.out_grad()); });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return x.tape().record("sum", Tensor::scalar(acc), {x}, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    const double g = ctx.out_grad()[0];
    for (double& v : gx->data()) v += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.out_grad()[i];
  });
}

Var dense(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(0) || wv.dim(1) != bv.dim(0)) {
    throw DimensionError("dense: incompatible shapes x" + shape_str(xv.shape()) + " w" + shape_str(wv.shape()) +
                         " b" + shape_str(bv.shape()));
  }
  const std::size_t batch = xv.dim(0), in = xv.dim(1), outd = wv.dim(1);
  Tensor out({batch, outd});
  MatMap y(out.data().data(), batch, outd);
  y.noalias() = ConstMatMap(xv.data().data(), batch, in) * ConstMatMap(wv.data().data(), in, outd);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), outd);
  return x.tape().record("dense", std::move(out), {x, w, b}, [batch, in, outd](BackwardContext& ctx) {
    ConstMatMap gy(ctx.out_grad().data().data(), batch, outd);
    if (Tensor* gx = ctx.input_grad(0)) {
      MatMap(gx->data().data(), batch, in).noalias() += gy * ConstMatMap(ctx.input(1).data().data(), in, outd).transpose();
    }
    if (Tensor* gw = ctx.input_grad(1)) {
      MatMap(gw->data().data(), in, outd).noalias() +=
          ConstMatMap(ctx.input(0).data().data(), batch, in).transpose() * gy;
    }
    if (Tensor* gb = ctx.input_grad(2)) {
      Eigen::Map<Eigen::RowVectorXd>(gb->data().data(), outd) += gy.colwise().sum();
    }
  });
}

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t pad) {
  check_stride(stride);
  const long span = static_cast<long>(extent + 2 * pad) - static_cast<long>(kernel);
  if (span < 0 || span % static_cast<long>(stride) != 0) {
    throw ConfigError("non-integral convolution output: extent " + std::to_string(extent) + ", kernel " +
                      std::to_string(kernel) + ", stride " + std::to_string(stride) + ", pad " +
                      std::to_string(pad));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

Var conv3d(Var x, Var k, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& kv = k.value();
  check_kernel("conv3d", kv);
  if (xv.rank() != 5 || xv.dim(1) != kv.dim(1)) {
    throw DimensionError("conv3d: input " + shape_str(xv.shape()) + " incompatible with kernel " +
                         shape_str(kv.shape()));
  }
  ConvGeometry g{};
  g.batch = xv.dim(0);
  g.in_ch = xv.dim(1);
  g.out_ch = kv.dim(0);
  g.kernel = kv.dim(2);
  g.stride = stride;
  g.pad = pad;
  g.in_d = xv.dim(2);
  g.in_h = xv.dim(3);
  g.in_w = xv.dim(4);
  g.out_d = conv_output_extent(g.in_d, g.kernel, stride, pad);
  g.out_h = conv_output_extent(g.in_h, g.kernel, stride, pad);
  g.out_w = conv_output_extent(g.in_w, g.kernel, stride, pad);

  Tensor out({g.batch, g.out_ch, g.out_d, g.out_h, g.out_w});
  std::vector<double> cols(g.rows() * g.cols());
  ConstMatMap w(kv.data().data(), g.out_ch, g.rows());
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, xv.data().data() + b * g.in_ch * g.image_size(), cols.data());
    MatMap(out.data().data() + b * g.out_ch * g.cols(), g.out_ch, g.cols()).noalias() =
        w * ConstMatMap(cols.data(), g.rows(), g.cols());
  }
  return x.tape().record("conv3d", std::move(out), {x, k}, [g](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    Tensor* gk = ctx.input_grad(1);
    const Tensor& xv = ctx.input(0);
    ConstMatMap w(ctx.input(1).data().data(), g.out_ch, g.rows());
    std::vector<double> cols(g.rows() * g.cols());
    for (std::size_t b = 0; b < g.batch; ++b) {
      ConstMatMap gy(ctx.out_grad().data().data() + b * g.out_ch * g.cols(), g.out_ch, g.cols());
      if (gk) {
        im2col(g, xv.data().data() + b * g.in_ch * g.image_size(), cols.data());
        MatMap(gk->data().data(), g.out_ch, g.rows()).noalias() +=
            gy * ConstMatMap(cols.data(), g.rows(), g.cols()).transpose();
      }
      if (gx) {
        MatMap(cols.data(), g.rows(), g.cols()).noalias() = w.transpose() * gy;
        col2im(g, cols.data(), gx->data().data() + b * g.in_ch * g.image_size());
      }
    }
  });
}

Var conv_transpose3d(Var y, Var k, std::size_t stride, std::size_t pad) {
  const Tensor& yv = y.value();
  const Tensor& kv = k.value();
  check_kernel("conv_transpose3d", kv);
  check_stride(stride);
  if (yv.rank() != 5 || yv.dim(1) != kv.dim(0)) {
    throw DimensionError("conv_transpose3d: input " + shape_str(yv.shape()) + " incompatible with kernel " +
                         shape_str(kv.shape()));
  }
  ConvGeometry g{};
  g.batch = yv.dim(0);
  g.out_ch = kv.dim(0);
  g.in_ch = kv.dim(1);
  g.kernel = kv.dim(2);
  g.stride = stride;
  g.pad = pad;
  g.out_d = yv.dim(2);
  g.out_h = yv.dim(3);
  g.out_w = yv.dim(4);
  auto image_extent = [&](std::size_t feat) {
    const long e = static_cast<long>((feat - 1) * stride + g.kernel) - 2 * static_cast<long>(pad);
    if (feat == 0 || e < 1) {
      throw ConfigError("conv_transpose3d: no valid output extent for input extent " + std::to_string(feat));
    }
    return static_cast<std::size_t>(e);
  };
  g.in_d = image_extent(g.out_d);
  g.in_h = image_extent(g.out_h);
  g.in_w = image_extent(g.out_w);
  // The forward conv must map the image extent back onto the feature extent.
  if (conv_output_extent(g.in_d, g.kernel, stride, pad) != g.out_d) {
    throw ConfigError("conv_transpose3d: stride/pad combination has no exact adjoint");
  }

  Tensor out({g.batch, g.in_ch, g.in_d, g.in_h, g.in_w});
  std::vector<double> cols(g.rows() * g.cols());
  ConstMatMap w(kv.data().data(), g.out_ch, g.rows());
  for (std::size_t b = 0; b < g.batch; ++b) {
    MatMap(cols.data(), g.rows(), g.cols()).noalias() =
        w.transpose() * ConstMatMap(yv.data().data() + b * g.out_ch * g.cols(), g.out_ch, g.cols());
    col2im(g, cols.data(), out.data().data() + b * g.in_ch * g.image_size());
  }
  return y.tape().record("conv_transpose3d", std::move(out), {y, k}, [g](BackwardContext& ctx) {
    Tensor* gy = ctx.input_grad(0);
    Tensor* gk = ctx.input_grad(1);
    ConstMatMap w(ctx.input(1).data().data(), g.out_ch, g.rows());
    std::vector<double> cols(g.rows() * g.cols());
    for (std::size_t b = 0; b < g.batch; ++b) {
      im2col(g, ctx.out_grad().data().data() + b * g.in_ch * g.image_size(), cols.data());
      ConstMatMap dcols(cols.data(), g.rows(), g.cols());
      if (gy) {
        MatMap(gy->data().data() + b * g.out_ch * g.cols(), g.out_ch, g.cols()).noalias() += w * dcols;
      }
      if (gk) {
        MatMap(gk->data().data(), g.out_ch, g.rows()).noalias() +=
            ConstMatMap(ctx.input(0).data().data() + b * g.out_ch * g.cols(), g.out_ch, g.cols()) *
            dcols.transpose();
      }
    }
  });
}

Var add_channel_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.rank() < 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    throw DimensionError("add_channel_bias: x" + shape_str(xv.shape()) + " b" + shape_str(bv.shape()));
  }
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), inner = xv.size() / (batch * ch);
  Tensor out = xv;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      double* p = out.data().data() + (n * ch + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bv[c];
    }
  return x.tape().record("add_channel_bias", std::move(out), {x, b}, [batch, ch, inner](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    accumulate(ctx.input_grad(0), g);
    if (Tensor* gb = ctx.input_grad(1)) {
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < ch; ++c) {
          const double* p = g.data().data() + (n * ch + c) * inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) acc += p[i];
          (*gb)[c] += acc;
        }
    }
  });
}

Var activation(Var x, Activation kind) {
  Tensor out = x.value();
  if (kind == Activation::relu) {
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return x.tape().record("relu", std::move(out), {x}, [](BackwardContext& ctx) {
      Tensor* gx = ctx.input_grad(0);
      const Tensor& in = ctx.input(0);
      for (std::size_t i = 0; i < gx->size(); ++i) {
        if (in[i] > 0.0) (*gx)[i] += ctx.out_grad()[i];
      }
    });
  }
  for (double& v : out.data()) {
    // Split by sign so exp never overflows.
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return x.tape().record("sigmoid", std::move(out), {x}, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    const Tensor& y = ctx.output();
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.out_grad()[i] * y[i] * (1.0 - y[i]);
  });
}

Var maxpool3d(Var x, std::size_t window) {
  const Tensor& xv = x.value();
  if (xv.rank() != 5) throw DimensionError("maxpool3d: expected [B,C,D,H,W], got " + shape_str(xv.shape()));
  if (window == 0 || xv.dim(2) % window || xv.dim(3) % window || xv.dim(4) % window) {
    throw ConfigError("maxpool3d: spatial dims " + shape_str(xv.shape()) + " not divisible by window " +
                      std::to_string(window));
  }
  const std::size_t planes = xv.dim(0) * xv.dim(1);
  const std::size_t d = xv.dim(2), h = xv.dim(3), w = xv.dim(4);
  const std::size_t od = d / window, oh = h / window, ow = w / window;
  Tensor out({xv.dim(0), xv.dim(1), od, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * d * h * w;
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
          // Scan in linear-index order so the first maximum wins ties.
          std::size_t best = base + ((z * window) * h + y * window) * w + xx * window;
          for (std::size_t dz = 0; dz < window; ++dz)
            for (std::size_t dy = 0; dy < window; ++dy)
              for (std::size_t dx = 0; dx < window; ++dx) {
                const std::size_t idx = base + ((z * window + dz) * h + (y * window + dy)) * w + xx * window + dx;
                if (xv[idx] > xv[best]) best = idx;
              }
          (*argmax)[o] = best;
          out[o] = xv[best];
        }
  }
  return x.tape().record("maxpool3d", std::move(out), {x}, [argmax](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < argmax->size(); ++i) (*gx)[(*argmax)[i]] += ctx.out_grad()[i];
  });
}

Var reparameterize(Var mu, Var logvar, const Tensor& noise) {
  require_same_shape("reparameterize", mu.value(), logvar.value());
  require_same_shape("reparameterize", mu.value(), noise);
  Var eps = mu.tape().constant(noise, "noise");
  Tensor out = mu.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += std::exp(0.5 * logvar.value()[i]) * noise[i];
  return mu.tape().record("reparameterize", std::move(out), {mu, logvar, eps}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    accumulate(ctx.input_grad(0), g);
    if (Tensor* gl = ctx.input_grad(1)) {
      const Tensor& lv = ctx.input(1);
      const Tensor& n = ctx.input(2);
      for (std::size_t i = 0; i < g.size(); ++i) (*gl)[i] += g[i] * 0.5 * std::exp(0.5 * lv[i]) * n[i];
    }
  });
}

Var apply_mask(Var x, const Tensor& mask) { return mul(x, x.tape().constant(mask, "mask")); }

namespace {

struct ChannelLayout {
  std::size_t batch, ch, inner;
};

ChannelLayout channel_layout(const char* op, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() < 2 || gamma.rank() != 1 || gamma.shape() != beta.shape() || gamma.dim(0) != x.dim(1)) {
    throw DimensionError(std::string(op) + ": x" + shape_str(x.shape()) + " gamma" + shape_str(gamma.shape()) +
                         " beta" + shape_str(beta.shape()));
  }
  return {x.dim(0), x.dim(1), x.size() / (x.dim(0) * x.dim(1))};
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean, Tensor* batch_var) {
  const Tensor& xv = x.value();
  const auto L = channel_layout("batch_norm_train", xv, gamma.value(), beta.value());
  const double count = static_cast<double>(L.batch * L.inner);
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(L.ch);
  Tensor mean_t({L.ch}), var_t({L.ch});
  Tensor out(xv.shape());
  for (std::size_t c = 0; c < L.ch; ++c) {
    double m = 0.0;
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) m += xv[(n * L.ch + c) * L.inner + i];
    m /= count;
    double v = 0.0;
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const double d = xv[(n * L.ch + c) * L.inner + i] - m;
        v += d * d;
      }
    v /= count;
    mean_t[c] = m;
    var_t[c] = v;
    (*inv_std)[c] = 1.0 / std::sqrt(v + eps);
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (n * L.ch + c) * L.inner + i;
        (*xhat)[idx] = (xv[idx] - m) * (*inv_std)[c];
        out[idx] = gamma.value()[c] * (*xhat)[idx] + beta.value()[c];
      }
  }
  if (batch_mean) *batch_mean = mean_t;
  if (batch_var) *batch_var = var_t;
  return x.tape().record("batch_norm", std::move(out), {x, gamma, beta}, [L, count, xhat, inv_std](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& gamma_v = ctx.input(1);
    Tensor* gx = ctx.input_grad(0);
    Tensor* gg = ctx.input_grad(1);
    Tensor* gb = ctx.input_grad(2);
    for (std::size_t c = 0; c < L.ch; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t i = 0; i < L.inner; ++i) {
          const std::size_t idx = (n * L.ch + c) * L.inner + i;
          sum_g += g[idx];
          sum_gx += g[idx] * (*xhat)[idx];
        }
      if (gg) (*gg)[c] += sum_gx;
      if (gb) (*gb)[c] += sum_g;
      if (gx) {
        const double k = gamma_v[c] * (*inv_std)[c] / count;
        for (std::size_t n = 0; n < L.batch; ++n)
          for (std::size_t i = 0; i < L.inner; ++i) {
            const std::size_t idx = (n * L.ch + c) * L.inner + i;
            (*gx)[idx] += k * (count * g[idx] - sum_g - (*xhat)[idx] * sum_gx);
          }
      }
    }
  });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean_v, const Tensor& var_v, double eps) {
  const Tensor& xv = x.value();
  const auto L = channel_layout("batch_norm_eval", xv, gamma.value(), beta.value());
  if (mean_v.size() != L.ch || var_v.size() != L.ch) throw DimensionError("batch_norm_eval: statistics size");
  auto inv_std = std::make_shared<std::vector<double>>(L.ch);
  for (std::size_t c = 0; c < L.ch; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var_v[c] + eps);
  Tensor out(xv.shape());
  auto xhat = std::make_shared<Tensor>(xv.shape());
  for (std::size_t n = 0; n < L.batch; ++n)
    for (std::size_t c = 0; c < L.ch; ++c)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (n * L.ch + c) * L.inner + i;
        (*xhat)[idx] = (xv[idx] - mean_v[c]) * (*inv_std)[c];
        out[idx] = gamma.value()[c] * (*xhat)[idx] + beta.value()[c];
      }
  return x.tape().record("batch_norm_eval", std::move(out), {x, gamma, beta}, [L, xhat, inv_std](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    Tensor* gx = ctx.input_grad(0);
    Tensor* gg = ctx.input_grad(1);
    Tensor* gb = ctx.input_grad(2);
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t c = 0; c < L.ch; ++c)
        for (std::size_t i = 0; i < L.inner; ++i) {
          const std::size_t idx = (n * L.ch + c) * L.inner + i;
          if (gx) (*gx)[idx] += g[idx] * ctx.input(1)[c] * (*inv_std)[c];
          if (gg) (*gg)[c] += g[idx] * (*xhat)[idx];
          if (gb) (*gb)[c] += g[idx];
        }
  });
}

double gradient_check(const std::function<Var(Var)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("gradient_check: eps must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var in = tape.leaf(x, true, "x");
    Var loss = f(in);
    tape.backward(loss);
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor& probe) {
    Tape tape;
    const double v = f(tape.leaf(probe, false, "x")).value().item();
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite function value at probe point");
    return v;
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace voxelstruct
