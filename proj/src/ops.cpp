#include "voxelcycle/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "voxelcycle/errors.hpp"

namespace voxelcycle {
namespace {

struct Geometry {
  std::size_t n, c, d, h, w;
  std::size_t spatial() const { return d * h * w; }
};

Geometry geometry(const Tensor& t) {
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), t.dim(4)};
}

Var finish(Tensor out, std::vector<Var> inputs, BackwardFn fn, const char* where) {
  require_finite(out, where);
  Tape* tape = inputs.front().tape();
  for (const Var& v : inputs) {
    if (v.tape() != tape) throw Error(std::string(where) + ": inputs recorded on different tapes");
  }
  return tape->record(std::move(out), std::move(inputs), std::move(fn));
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* where) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(where) + ": dimension mismatch " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
}

// Range of output positions o with 0 <= o*stride - pad + k < extent.
struct Span1 {
  std::size_t lo, hi;
};

Span1 valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t stride, std::size_t pad,
                    std::size_t k) {
  // o*stride + k >= pad  and  o*stride + k - pad <= in_extent - 1
  long lo_num = static_cast<long>(pad) - static_cast<long>(k);
  long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long>(stride) - 1) / static_cast<long>(stride);
  long hi_num = static_cast<long>(in_extent) - 1 + static_cast<long>(pad) - static_cast<long>(k);
  long hi = hi_num < 0 ? 0 : hi_num / static_cast<long>(stride) + 1;
  hi = std::min<long>(hi, static_cast<long>(out_extent));
  if (lo >= hi) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvPlan {
  Geometry in;
  std::size_t cout, k, stride, pad, od, oh, ow;
  std::vector<Span1> dspan, hspan, wspan;  // per kernel offset
};

ConvPlan make_plan(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t pad) {
  ConvPlan p;
  p.in = geometry(input);
  p.cout = weight.dim(0);
  p.k = weight.dim(2);
  p.stride = stride;
  p.pad = pad;
  p.od = conv_output_extent(p.in.d, p.k, stride, pad);
  p.oh = conv_output_extent(p.in.h, p.k, stride, pad);
  p.ow = conv_output_extent(p.in.w, p.k, stride, pad);
  for (std::size_t k = 0; k < p.k; ++k) {
    p.dspan.push_back(valid_outputs(p.od, p.in.d, stride, pad, k));
    p.hspan.push_back(valid_outputs(p.oh, p.in.h, stride, pad, k));
    p.wspan.push_back(valid_outputs(p.ow, p.in.w, stride, pad, k));
  }
  return p;
}

// Calls fn(out_offset, in_offset, count) for each contiguous output row
// segment touched by kernel tap (kd, kh, kw); input offsets advance by stride.
template <typename Fn>
void for_each_row(const ConvPlan& p, std::size_t kd, std::size_t kh, std::size_t kw, Fn&& fn) {
  const Span1 ds = p.dspan[kd], hs = p.hspan[kh], ws = p.wspan[kw];
  if (ds.lo >= ds.hi || hs.lo >= hs.hi || ws.lo >= ws.hi) return;
  const std::size_t count = ws.hi - ws.lo;
  const std::size_t iw0 = ws.lo * p.stride + kw - p.pad;
  for (std::size_t od = ds.lo; od < ds.hi; ++od) {
    const std::size_t id = od * p.stride + kd - p.pad;
    for (std::size_t oh = hs.lo; oh < hs.hi; ++oh) {
      const std::size_t ih = oh * p.stride + kh - p.pad;
      fn((od * p.oh + oh) * p.ow + ws.lo, (id * p.in.h + ih) * p.in.w + iw0, count);
    }
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv3d: stride must be positive");
  if (extent + 2 * pad < kernel) {
    throw ShapeError("conv3d: padded extent " + std::to_string(extent + 2 * pad) + " smaller than kernel " +
                     std::to_string(kernel));
  }
  return (extent + 2 * pad - kernel) / stride + 1;
}

namespace {

// Stride-1 convolution over zero-padded planes. Outputs live in the padded
// row stride, so each kernel tap becomes a constant offset and the inner
// loops run over a whole plane.
struct PaddedGrid {
  std::size_t d, h, w;   // unpadded input extents
  std::size_t pd, ph, pw;  // padded extents
  std::size_t od, oh, ow;  // output extents
  std::size_t k, pad;
  std::size_t plane() const { return pd * ph * pw; }
  std::size_t span() const { return (od - 1) * ph * pw + (oh - 1) * pw + ow; }
  std::size_t offset(std::size_t kd, std::size_t kh) const { return kd * ph * pw + kh * pw; }
  std::size_t out_index(std::size_t a, std::size_t b, std::size_t c) const { return (a * ph + b) * pw + c; }
};

PaddedGrid padded_grid(const Geometry& in, std::size_t k, std::size_t pad) {
  PaddedGrid g{in.d, in.h, in.w, in.d + 2 * pad, in.h + 2 * pad, in.w + 2 * pad, 0, 0, 0, k, pad};
  g.od = g.pd - k + 1;
  g.oh = g.ph - k + 1;
  g.ow = g.pw - k + 1;
  return g;
}

void pad_planes(const double* src, double* dst, std::size_t planes, const PaddedGrid& g) {
  for (std::size_t p = 0; p < planes; ++p) {
    const double* s = src + p * g.d * g.h * g.w;
    double* t = dst + p * g.plane();
    for (std::size_t a = 0; a < g.d; ++a) {
      for (std::size_t b = 0; b < g.h; ++b) {
        std::copy_n(s + (a * g.h + b) * g.w, g.w, t + ((a + g.pad) * g.ph + b + g.pad) * g.pw + g.pad);
      }
    }
  }
}

// acc[v] += sum_kw w[kw] * src[v + kw] for v < n.
inline void row_taps(double* __restrict acc, const double* __restrict src, const double* w, std::size_t k,
                     std::size_t n) {
  if (k == 3) {
    const double w0 = w[0], w1 = w[1], w2 = w[2];
    for (std::size_t v = 0; v < n; ++v) acc[v] += w0 * src[v] + w1 * src[v + 1] + w2 * src[v + 2];
  } else {
    for (std::size_t kw = 0; kw < k; ++kw) {
      const double wk = w[kw];
      for (std::size_t v = 0; v < n; ++v) acc[v] += wk * src[v + kw];
    }
  }
}

inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t v = 0;
  for (; v + 4 <= n; v += 4) {
    s0 += a[v] * b[v];
    s1 += a[v + 1] * b[v + 1];
    s2 += a[v + 2] * b[v + 2];
    s3 += a[v + 3] * b[v + 3];
  }
  for (; v < n; ++v) s0 += a[v] * b[v];
  return (s0 + s1) + (s2 + s3);
}

Tensor conv_forward_s1(const Tensor& x, const Tensor& wt, const Tensor& b, std::size_t pad) {
  const Geometry in = geometry(x);
  const std::size_t cout = wt.dim(0), k = wt.dim(2), k3 = k * k * k;
  const PaddedGrid g = padded_grid(in, k, pad);
  std::vector<double> pin(in.n * in.c * g.plane(), 0.0);
  pad_planes(x.ptr(), pin.data(), in.n * in.c, g);
  const std::size_t span = g.span();
  std::vector<double> acc(span);
  Tensor out(Dims{in.n, cout, g.od, g.oh, g.ow});
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ci = 0; ci < in.c; ++ci) {
        const double* p = pin.data() + (n * in.c + ci) * g.plane();
        const double* wk = wt.ptr() + (co * in.c + ci) * k3;
        for (std::size_t kd = 0; kd < k; ++kd) {
          for (std::size_t kh = 0; kh < k; ++kh) {
            row_taps(acc.data(), p + g.offset(kd, kh), wk + (kd * k + kh) * k, k, span);
          }
        }
      }
      double* o = out.ptr() + (n * cout + co) * g.od * g.oh * g.ow;
      for (std::size_t a = 0; a < g.od; ++a) {
        for (std::size_t c = 0; c < g.oh; ++c) {
          const double* src = acc.data() + g.out_index(a, c, 0);
          for (std::size_t e = 0; e < g.ow; ++e) *o++ = src[e] + b[co];
        }
      }
    }
  }
  return out;
}

void conv_backward_s1(BackwardContext& ctx, std::size_t pad) {
  const Tensor& x = *ctx.in_values[0];
  const Tensor& wt = *ctx.in_values[1];
  const Tensor& go = ctx.out_grad;
  Tensor* gx = ctx.in_grads[0];
  Tensor* gw = ctx.in_grads[1];
  Tensor* gb = ctx.in_grads[2];
  const Geometry in = geometry(x);
  const std::size_t cout = wt.dim(0), k = wt.dim(2), k3 = k * k * k;
  const PaddedGrid g = padded_grid(in, k, pad);
  const std::size_t span = g.span();
  const std::size_t out_plane = g.od * g.oh * g.ow;
  // Upstream gradient in padded stride, with a guard band so the transposed
  // taps can read below index 0.
  const std::size_t guard = g.offset(k - 1, k - 1) + (k - 1);
  std::vector<double> gpad(cout * (span + 2 * guard));
  std::vector<double> pin;
  if (gw) {
    pin.assign(in.c * g.plane(), 0.0);
  }
  std::vector<double> gin;
  if (gx) gin.resize(in.c * g.plane());
  std::vector<double> flipped(k);

  for (std::size_t n = 0; n < in.n; ++n) {
    std::fill(gpad.begin(), gpad.end(), 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
      const double* src = go.ptr() + (n * cout + co) * out_plane;
      double* dst = gpad.data() + co * (span + 2 * guard) + guard;
      double bsum = 0.0;
      for (std::size_t a = 0; a < g.od; ++a) {
        for (std::size_t c = 0; c < g.oh; ++c) {
          for (std::size_t e = 0; e < g.ow; ++e) {
            dst[g.out_index(a, c, e)] = *src;
            bsum += *src++;
          }
        }
      }
      if (gb) (*gb)[co] += bsum;
    }
    if (gw) pad_planes(x.ptr() + n * in.c * in.d * in.h * in.w, pin.data(), in.c, g);
    if (gx) std::fill(gin.begin(), gin.end(), 0.0);

    for (std::size_t co = 0; co < cout; ++co) {
      const double* ga = gpad.data() + co * (span + 2 * guard) + guard;
      for (std::size_t ci = 0; ci < in.c; ++ci) {
        const double* wk = wt.ptr() + (co * in.c + ci) * k3;
        if (gw) {
          const double* p = pin.data() + ci * g.plane();
          double* gwk = gw->ptr() + (co * in.c + ci) * k3;
          for (std::size_t kd = 0; kd < k; ++kd) {
            for (std::size_t kh = 0; kh < k; ++kh) {
              for (std::size_t kw = 0; kw < k; ++kw) {
                gwk[(kd * k + kh) * k + kw] += dot(ga, p + g.offset(kd, kh) + kw, span);
              }
            }
          }
        }
        if (gx) {
          // gin[u] += sum_t w[t] * ga[u - off(t)]
          double* gi = gin.data() + ci * g.plane();
          for (std::size_t kd = 0; kd < k; ++kd) {
            for (std::size_t kh = 0; kh < k; ++kh) {
              const double* row = wk + (kd * k + kh) * k;
              for (std::size_t kw = 0; kw < k; ++kw) flipped[kw] = row[k - 1 - kw];
              row_taps(gi, ga - g.offset(kd, kh) - (k - 1), flipped.data(), k, g.plane());
            }
          }
        }
      }
    }
    if (gx) {
      for (std::size_t ci = 0; ci < in.c; ++ci) {
        const double* gi = gin.data() + ci * g.plane();
        double* dx = gx->ptr() + (n * in.c + ci) * in.d * in.h * in.w;
        for (std::size_t a = 0; a < in.d; ++a) {
          for (std::size_t c = 0; c < in.h; ++c) {
            const double* s = gi + ((a + pad) * g.ph + c + pad) * g.pw + pad;
            for (std::size_t e = 0; e < in.w; ++e) *dx++ += s[e];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv3d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  const Tensor& x = input.value();
  const Tensor& wt = weight.value();
  const Tensor& b = bias.value();
  require_rank5(x, "conv3d input");
  if (wt.rank() != 5) throw ShapeError("conv3d: weight must be Cout x Cin x k x k x k, got " + dims_to_string(wt.dims()));
  const std::size_t k = wt.dim(2);
  if (wt.dim(3) != k || wt.dim(4) != k) throw ShapeError("conv3d: kernel must be cubic, got " + dims_to_string(wt.dims()));
  if (k % 2 == 0) throw ShapeError("conv3d: kernel size must be odd, got " + std::to_string(k));
  if (wt.dim(1) != x.dim(1)) {
    throw ShapeError("conv3d: input has " + std::to_string(x.dim(1)) + " channels but weight expects " +
                     std::to_string(wt.dim(1)));
  }
  if (b.rank() != 1 || b.dim(0) != wt.dim(0)) {
    throw ShapeError("conv3d: bias must have " + std::to_string(wt.dim(0)) + " entries, got " + dims_to_string(b.dims()));
  }
  require_finite(x, "conv3d input");

  if (stride == 1) {
    conv_output_extent(x.dim(2), k, 1, pad);
    conv_output_extent(x.dim(3), k, 1, pad);
    conv_output_extent(x.dim(4), k, 1, pad);
    BackwardFn fn = [pad](BackwardContext& ctx) { conv_backward_s1(ctx, pad); };
    return finish(conv_forward_s1(x, wt, b, pad), {input, weight, bias}, std::move(fn), "conv3d");
  }

  const ConvPlan p = make_plan(x, wt, stride, pad);
  const std::size_t in_plane = p.in.spatial();
  const std::size_t out_plane = p.od * p.oh * p.ow;
  const std::size_t k3 = p.k * p.k * p.k;
  Tensor out(Dims{p.in.n, p.cout, p.od, p.oh, p.ow});

  for (std::size_t n = 0; n < p.in.n; ++n) {
    for (std::size_t co = 0; co < p.cout; ++co) {
      double* o = out.ptr() + (n * p.cout + co) * out_plane;
      std::fill(o, o + out_plane, b[co]);
      for (std::size_t ci = 0; ci < p.in.c; ++ci) {
        const double* in = x.ptr() + (n * p.in.c + ci) * in_plane;
        const double* wk = wt.ptr() + (co * p.in.c + ci) * k3;
        for (std::size_t kd = 0; kd < p.k; ++kd) {
          for (std::size_t kh = 0; kh < p.k; ++kh) {
            for (std::size_t kw = 0; kw < p.k; ++kw) {
              const double wv = wk[(kd * p.k + kh) * p.k + kw];
              const std::size_t s = p.stride;
              for_each_row(p, kd, kh, kw, [&](std::size_t oo, std::size_t io, std::size_t count) {
                double* orow = o + oo;
                const double* irow = in + io;
                if (s == 1) {
                  for (std::size_t i = 0; i < count; ++i) orow[i] += wv * irow[i];
                } else {
                  for (std::size_t i = 0; i < count; ++i) orow[i] += wv * irow[i * s];
                }
              });
            }
          }
        }
      }
    }
  }

  BackwardFn fn = [p, in_plane, out_plane, k3](BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    const Tensor& wt = *ctx.in_values[1];
    const Tensor& g = ctx.out_grad;
    Tensor* gx = ctx.in_grads[0];
    Tensor* gw = ctx.in_grads[1];
    Tensor* gb = ctx.in_grads[2];
    const std::size_t s = p.stride;
    for (std::size_t n = 0; n < p.in.n; ++n) {
      for (std::size_t co = 0; co < p.cout; ++co) {
        const double* go = g.ptr() + (n * p.cout + co) * out_plane;
        if (gb) {
          double acc = 0.0;
          for (std::size_t i = 0; i < out_plane; ++i) acc += go[i];
          (*gb)[co] += acc;
        }
        for (std::size_t ci = 0; ci < p.in.c; ++ci) {
          const double* in = x.ptr() + (n * p.in.c + ci) * in_plane;
          double* gin = gx ? gx->ptr() + (n * p.in.c + ci) * in_plane : nullptr;
          const double* wk = wt.ptr() + (co * p.in.c + ci) * k3;
          double* gwk = gw ? gw->ptr() + (co * p.in.c + ci) * k3 : nullptr;
          for (std::size_t kd = 0; kd < p.k; ++kd) {
            for (std::size_t kh = 0; kh < p.k; ++kh) {
              for (std::size_t kw = 0; kw < p.k; ++kw) {
                const std::size_t tap = (kd * p.k + kh) * p.k + kw;
                const double wv = wk[tap];
                double acc = 0.0;
                for_each_row(p, kd, kh, kw, [&](std::size_t oo, std::size_t io, std::size_t count) {
                  const double* grow = go + oo;
                  const double* irow = in + io;
                  if (s == 1) {
                    if (gin) {
                      double* girow = gin + io;
                      for (std::size_t i = 0; i < count; ++i) girow[i] += wv * grow[i];
                    }
                    for (std::size_t i = 0; i < count; ++i) acc += grow[i] * irow[i];
                  } else {
                    if (gin) {
                      double* girow = gin + io;
                      for (std::size_t i = 0; i < count; ++i) girow[i * s] += wv * grow[i];
                    }
                    for (std::size_t i = 0; i < count; ++i) acc += grow[i] * irow[i * s];
                  }
                });
                if (gwk) gwk[tap] += acc;
              }
            }
          }
        }
      }
    }
  };
  return finish(std::move(out), {input, weight, bias}, std::move(fn), "conv3d");
}

Var maxpool3d(Var input) {
  const Tensor& x = input.value();
  require_rank5(x, "maxpool3d");
  const Geometry g = geometry(x);
  const char* axes[] = {"D", "H", "W"};
  const std::size_t ext[] = {g.d, g.h, g.w};
  for (int a = 0; a < 3; ++a) {
    if (ext[a] % 2 != 0) {
      throw ShapeError(std::string("maxpool3d: spatial extent ") + axes[a] + "=" + std::to_string(ext[a]) +
                       " is odd");
    }
  }
  const std::size_t od = g.d / 2, oh = g.h / 2, ow = g.w / 2;
  Tensor out(Dims{g.n, g.c, od, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  std::size_t oi = 0;
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    const std::size_t base = nc * g.spatial();
    for (std::size_t d = 0; d < od; ++d) {
      for (std::size_t h = 0; h < oh; ++h) {
        for (std::size_t w = 0; w < ow; ++w, ++oi) {
          std::size_t best = base + ((2 * d) * g.h + 2 * h) * g.w + 2 * w;
          for (std::size_t dd = 0; dd < 2; ++dd) {
            for (std::size_t hh = 0; hh < 2; ++hh) {
              for (std::size_t ww = 0; ww < 2; ++ww) {
                const std::size_t idx = base + ((2 * d + dd) * g.h + 2 * h + hh) * g.w + 2 * w + ww;
                if (x[idx] > x[best]) best = idx;
              }
            }
          }
          argmax[oi] = best;
          out[oi] = x[best];
        }
      }
    }
  }
  BackwardFn fn = [argmax = std::move(argmax)](BackwardContext& ctx) {
    Tensor& gx = *ctx.in_grads[0];
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += ctx.out_grad[i];
  };
  return finish(std::move(out), {input}, std::move(fn), "maxpool3d");
}

Var upsample_nearest3d(Var input) {
  const Tensor& x = input.value();
  require_rank5(x, "upsample_nearest3d");
  const Geometry g = geometry(x);
  const std::size_t od = 2 * g.d, oh = 2 * g.h, ow = 2 * g.w;
  Tensor out(Dims{g.n, g.c, od, oh, ow});
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    const double* in = x.ptr() + nc * g.spatial();
    double* o = out.ptr() + nc * od * oh * ow;
    for (std::size_t d = 0; d < od; ++d) {
      for (std::size_t h = 0; h < oh; ++h) {
        const double* irow = in + ((d / 2) * g.h + h / 2) * g.w;
        double* orow = o + (d * oh + h) * ow;
        for (std::size_t w = 0; w < ow; ++w) orow[w] = irow[w / 2];
      }
    }
  }
  BackwardFn fn = [g](BackwardContext& ctx) {
    const std::size_t od = 2 * g.d, oh = 2 * g.h, ow = 2 * g.w;
    Tensor& gx = *ctx.in_grads[0];
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
      double* gi = gx.ptr() + nc * g.spatial();
      const double* go = ctx.out_grad.ptr() + nc * od * oh * ow;
      for (std::size_t d = 0; d < od; ++d) {
        for (std::size_t h = 0; h < oh; ++h) {
          double* girow = gi + ((d / 2) * g.h + h / 2) * g.w;
          const double* grow = go + (d * oh + h) * ow;
          for (std::size_t w = 0; w < ow; ++w) girow[w / 2] += grow[w];
        }
      }
    }
  };
  return finish(std::move(out), {input}, std::move(fn), "upsample_nearest3d");
}

Var instance_norm(Var input, Var gain, Var shift, double eps) {
  const Tensor& x = input.value();
  require_rank5(x, "instance_norm");
  const Geometry g = geometry(x);
  if (gain.value().numel() != g.c || shift.value().numel() != g.c) {
    throw ShapeError("instance_norm: gain/shift must have " + std::to_string(g.c) + " entries");
  }
  if (g.spatial() < 2) throw NumericError("instance_norm: degenerate statistics over a single-voxel slice");
  if (!(eps > 0.0)) throw NumericError("instance_norm: eps must be positive");
  require_finite(x, "instance_norm input");

  const std::size_t m = g.spatial();
  Tensor out(x.dims());
  Tensor xhat(x.dims());
  std::vector<double> inv_std(g.n * g.c);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t c = 0; c < g.c; ++c) {
      const std::size_t nc = n * g.c + c;
      const double* xi = x.ptr() + nc * m;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += xi[i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (xi[i] - mu) * (xi[i] - mu);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[nc] = is;
      double* xh = xhat.ptr() + nc * m;
      double* o = out.ptr() + nc * m;
      const double ga = gain.value()[c], sh = shift.value()[c];
      for (std::size_t i = 0; i < m; ++i) {
        xh[i] = (xi[i] - mu) * is;
        o[i] = xh[i] * ga + sh;
      }
    }
  }
  BackwardFn fn = [g, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardContext& ctx) {
    const Tensor& gain = *ctx.in_values[1];
    Tensor* gx = ctx.in_grads[0];
    Tensor* gg = ctx.in_grads[1];
    Tensor* gs = ctx.in_grads[2];
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t c = 0; c < g.c; ++c) {
        const std::size_t nc = n * g.c + c;
        const double* dy = ctx.out_grad.ptr() + nc * m;
        const double* xh = xhat.ptr() + nc * m;
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          sum_dy += dy[i];
          sum_dy_xh += dy[i] * xh[i];
        }
        if (gg) (*gg)[c] += sum_dy_xh;
        if (gs) (*gs)[c] += sum_dy;
        if (gx) {
          const double ga = gain[c];
          const double k = ga * inv_std[nc];
          double* dx = gx->ptr() + nc * m;
          // d/dx of gain * (x - mean) / sqrt(var + eps)
          for (std::size_t i = 0; i < m; ++i) {
            dx[i] += k * (dy[i] - inv_m * sum_dy - xh[i] * inv_m * sum_dy_xh);
          }
        }
      }
    }
  };
  return finish(std::move(out), {input, gain, shift}, std::move(fn), "instance_norm");
}

Var relu(Var input) {
  const Tensor& x = input.value();
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  BackwardFn fn = [](BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    Tensor& gx = *ctx.in_grads[0];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x[i] >= 0.0) gx[i] += ctx.out_grad[i];
    }
  };
  return finish(std::move(out), {input}, std::move(fn), "relu");
}

Var leaky_relu(Var input, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw Error("leaky_relu: slope must lie in (0, 1)");
  const Tensor& x = input.value();
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
  BackwardFn fn = [slope](BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    Tensor& gx = *ctx.in_grads[0];
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += (x[i] >= 0.0 ? 1.0 : slope) * ctx.out_grad[i];
  };
  return finish(std::move(out), {input}, std::move(fn), "leaky_relu");
}

Var tanh(Var input) {
  const Tensor& x = input.value();
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::tanh(x[i]);
  BackwardFn fn = [](BackwardContext& ctx) {
    Tensor& gx = *ctx.in_grads[0];
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const double y = ctx.out_value[i];
      gx[i] += (1.0 - y * y) * ctx.out_grad[i];
    }
  };
  return finish(std::move(out), {input}, std::move(fn), "tanh");
}

Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels) {
  const Tensor& z = logits.value();
  require_rank5(z, "softmax_cross_entropy");
  const Geometry g = geometry(z);
  if (g.c < 2) throw ShapeError("softmax_cross_entropy: need at least 2 classes");
  const std::size_t m = g.spatial();
  if (labels.size() != g.n * m) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(g.n * m) + " voxels");
  }
  for (auto l : labels) {
    if (l >= g.c) {
      throw LabelError("softmax_cross_entropy: label " + std::to_string(l) + " out of range for " +
                       std::to_string(g.c) + " classes");
    }
  }
  require_finite(z, "softmax_cross_entropy logits");

  Tensor prob(z.dims());
  double total = 0.0;
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* zn = z.ptr() + n * g.c * m;
    double* pn = prob.ptr() + n * g.c * m;
    for (std::size_t v = 0; v < m; ++v) {
      double mx = zn[v];
      for (std::size_t c = 1; c < g.c; ++c) mx = std::max(mx, zn[c * m + v]);
      double se = 0.0;
      for (std::size_t c = 0; c < g.c; ++c) {
        const double e = std::exp(zn[c * m + v] - mx);
        pn[c * m + v] = e;
        se += e;
      }
      for (std::size_t c = 0; c < g.c; ++c) pn[c * m + v] /= se;
      const std::size_t y = labels[n * m + v];
      total += (mx + std::log(se)) - zn[y * m + v];
    }
  }
  const double count = static_cast<double>(g.n * m);
  std::vector<std::uint8_t> saved(labels.begin(), labels.end());
  BackwardFn fn = [g, m, count, prob = std::move(prob), saved = std::move(saved)](BackwardContext& ctx) {
    Tensor& gz = *ctx.in_grads[0];
    const double s = ctx.out_grad[0] / count;
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* p = prob.ptr() + (n * g.c + c) * m;
        double* gp = gz.ptr() + (n * g.c + c) * m;
        for (std::size_t v = 0; v < m; ++v) {
          const double onehot = saved[n * m + v] == c ? 1.0 : 0.0;
          gp[v] += s * (p[v] - onehot);
        }
      }
    }
  };
  return finish(Tensor::scalar(total / count), {logits}, std::move(fn), "softmax_cross_entropy");
}

Var l1_loss(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "l1_loss");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += std::abs(x[i] - y[i]);
  const double count = static_cast<double>(x.numel());
  BackwardFn fn = [count](BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    const Tensor& y = *ctx.in_values[1];
    const double s = ctx.out_grad[0] / count;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double diff = x[i] - y[i];
      const double sg = diff > 0.0 ? s : (diff < 0.0 ? -s : 0.0);
      if (ctx.in_grads[0]) (*ctx.in_grads[0])[i] += sg;
      if (ctx.in_grads[1]) (*ctx.in_grads[1])[i] -= sg;
    }
  };
  return finish(Tensor::scalar(acc / count), {a, b}, std::move(fn), "l1_loss");
}

Var mse_loss(Var a, double target) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += (x[i] - target) * (x[i] - target);
  const double count = static_cast<double>(x.numel());
  BackwardFn fn = [count, target](BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    Tensor& gx = *ctx.in_grads[0];
    const double s = 2.0 * ctx.out_grad[0] / count;
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += s * (x[i] - target);
  };
  return finish(Tensor::scalar(acc / count), {a}, std::move(fn), "mse_loss");
}

Var concat_channels(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank5(x, "concat_channels");
  require_rank5(y, "concat_channels");
  const Geometry ga = geometry(x), gb = geometry(y);
  if (ga.n != gb.n || ga.d != gb.d || ga.h != gb.h || ga.w != gb.w) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + dims_to_string(x.dims()) + " vs " +
                     dims_to_string(y.dims()));
  }
  const std::size_t m = ga.spatial();
  Tensor out(Dims{ga.n, ga.c + gb.c, ga.d, ga.h, ga.w});
  for (std::size_t n = 0; n < ga.n; ++n) {
    std::copy_n(x.ptr() + n * ga.c * m, ga.c * m, out.ptr() + n * (ga.c + gb.c) * m);
    std::copy_n(y.ptr() + n * gb.c * m, gb.c * m, out.ptr() + (n * (ga.c + gb.c) + ga.c) * m);
  }
  BackwardFn fn = [ga, gb, m](BackwardContext& ctx) {
    const std::size_t ct = ga.c + gb.c;
    for (std::size_t n = 0; n < ga.n; ++n) {
      const double* go = ctx.out_grad.ptr() + n * ct * m;
      if (Tensor* gx = ctx.in_grads[0]) {
        double* dst = gx->ptr() + n * ga.c * m;
        for (std::size_t i = 0; i < ga.c * m; ++i) dst[i] += go[i];
      }
      if (Tensor* gy = ctx.in_grads[1]) {
        double* dst = gy->ptr() + n * gb.c * m;
        for (std::size_t i = 0; i < gb.c * m; ++i) dst[i] += go[ga.c * m + i];
      }
    }
  };
  return finish(std::move(out), {a, b}, std::move(fn), "concat_channels");
}

Var add(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "add");
  Tensor out(a.value().dims());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  BackwardFn fn = [](BackwardContext& ctx) {
    for (Tensor* g : ctx.in_grads) {
      if (!g) continue;
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += ctx.out_grad[i];
    }
  };
  return finish(std::move(out), {a, b}, std::move(fn), "add");
}

Var scale(Var a, double factor) {
  Tensor out(a.value().dims());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = factor * a.value()[i];
  BackwardFn fn = [factor](BackwardContext& ctx) {
    Tensor& g = *ctx.in_grads[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * ctx.out_grad[i];
  };
  return finish(std::move(out), {a}, std::move(fn), "scale");
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  BackwardFn fn = [](BackwardContext& ctx) {
    Tensor& g = *ctx.in_grads[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += ctx.out_grad[0];
  };
  return finish(Tensor::scalar(acc), {a}, std::move(fn), "sum");
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var gather_voxels(Var input, std::span<const std::size_t> source) {
  const Tensor& x = input.value();
  require_rank5(x, "gather_voxels");
  const Geometry g = geometry(x);
  const std::size_t m = g.spatial();
  if (source.size() != m) throw ShapeError("gather_voxels: index map size does not match the spatial grid");
  for (auto s : source) {
    if (s >= m) throw ShapeError("gather_voxels: index out of range");
  }
  Tensor out(x.dims());
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    for (std::size_t v = 0; v < m; ++v) out[nc * m + v] = x[nc * m + source[v]];
  }
  std::vector<std::size_t> saved(source.begin(), source.end());
  BackwardFn fn = [g, m, saved = std::move(saved)](BackwardContext& ctx) {
    Tensor& gx = *ctx.in_grads[0];
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
      for (std::size_t v = 0; v < m; ++v) gx[nc * m + saved[v]] += ctx.out_grad[nc * m + v];
    }
  };
  return finish(std::move(out), {input}, std::move(fn), "gather_voxels");
}

}  // namespace voxelcycle
