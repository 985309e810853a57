#include "elfvc/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "elfvc/mathfn.hpp"
#include "elfvc/rng.hpp"

namespace elfvc {

ChannelStats ChannelStats::create(int channels) {
  ChannelStats s;
  s.mean = Tensor::zeros({channels});
  s.var = Tensor::full({channels}, 1.0);
  return s;
}

namespace ops {

Counters& counters() {
  static Counters c;
  return c;
}

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void check_same_shape(const char* who, const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    fail(std::string(who) + ": shape mismatch " + a->value.shape_str() +
         " vs " + b->value.shape_str());
}

inline void axpy(double* dst, const double* src, int64_t n, double s) {
  for (int64_t i = 0; i < n; ++i) dst[i] += s * src[i];
}

inline double round_half_away(double t) {
  return t >= 0.0 ? std::floor(t + 0.5) : std::ceil(t - 0.5);
}

// Elementwise unary helper: y = f(x), dx += g * dfdx(x, y).
template <typename F, typename DF>
Var unary(const char* name, const Var& a, F f, DF dfdx) {
  Tensor out = Tensor::zeros(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = f(a->value[i]);
  Var av = a;
  Tensor held = out;  // values sometimes needed by the derivative
  return make_op(name, std::move(out), {a}, [av, held, dfdx, n](Node& self) {
    if (!av->requires_grad) return;
    Tensor& g = av->grad_buf();
    for (int64_t i = 0; i < n; ++i)
      g[i] += self.grad[i] * dfdx(av->value[i], held[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  Tensor out = a->value;
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] += b->value[i];
  Var av = a, bv = b;
  return make_op("add", std::move(out), {a, b}, [av, bv, n](Node& self) {
    if (av->requires_grad) axpy(av->grad_buf().data.data(), self.grad.data.data(), n, 1.0);
    if (bv->requires_grad) axpy(bv->grad_buf().data.data(), self.grad.data.data(), n, 1.0);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  Tensor out = a->value;
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] -= b->value[i];
  Var av = a, bv = b;
  return make_op("sub", std::move(out), {a, b}, [av, bv, n](Node& self) {
    if (av->requires_grad) axpy(av->grad_buf().data.data(), self.grad.data.data(), n, 1.0);
    if (bv->requires_grad) axpy(bv->grad_buf().data.data(), self.grad.data.data(), n, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape("mul", a, b);
  Tensor out = a->value;
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] *= b->value[i];
  Var av = a, bv = b;
  return make_op("mul", std::move(out), {a, b}, [av, bv, n](Node& self) {
    if (av->requires_grad) {
      Tensor& g = av->grad_buf();
      for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * bv->value[i];
    }
    if (bv->requires_grad) {
      Tensor& g = bv->grad_buf();
      for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * av->value[i];
    }
  });
}

Var add_scalar(const Var& a, double s) {
  return unary("add_scalar", a,
               [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary("mul_scalar", a,
               [s](double x) { return x * s; },
               [s](double, double) { return s; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary("leaky_relu", a,
               [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary("sigmoid", a,
               [](double x) { return det_sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary("softplus", a,
               [](double x) { return det_softplus(x); },
               [](double x, double) { return det_sigmoid(x); });
}

Var vexp(const Var& a) {
  return unary("vexp", a,
               [](double x) { return det_exp(x); },
               [](double, double y) { return y; });
}

Var square(const Var& a) {
  return unary("square", a,
               [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var clamp01(const Var& a) {
  return unary("clamp01", a,
               [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
               [](double x, double) { return (x > 0.0 && x < 1.0) ? 1.0 : 0.0; });
}

Var stop_gradient(const Var& a) { return constant(a->value); }

Var sum(const Var& a) {
  double s = 0.0;
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) s += a->value[i];
  Var av = a;
  return make_op("sum", Tensor::scalar(s), {a}, [av, n](Node& self) {
    if (!av->requires_grad) return;
    Tensor& g = av->grad_buf();
    double gs = self.grad[0];
    for (int64_t i = 0; i < n; ++i) g[i] += gs;
  });
}

Var mean(const Var& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a->value.numel()));
}

Var mse(const Var& a, const Var& b) {
  check_same_shape("mse", a, b);
  const int64_t n = a->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double d = a->value[i] - b->value[i];
    s += d * d;
  }
  double inv = 1.0 / static_cast<double>(n);
  Var av = a, bv = b;
  return make_op("mse", Tensor::scalar(s * inv), {a, b}, [av, bv, n, inv](Node& self) {
    double gs = 2.0 * inv * self.grad[0];
    if (av->requires_grad) {
      Tensor& g = av->grad_buf();
      for (int64_t i = 0; i < n; ++i) g[i] += gs * (av->value[i] - bv->value[i]);
    }
    if (bv->requires_grad) {
      Tensor& g = bv->grad_buf();
      for (int64_t i = 0; i < n; ++i) g[i] -= gs * (av->value[i] - bv->value[i]);
    }
  });
}

Var weighted_sum(const Var& a, const Tensor& w) {
  if (!a->value.same_shape(w))
    fail("weighted_sum: weight shape " + w.shape_str() + " != " + a->value.shape_str());
  const int64_t n = a->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a->value[i] * w[i];
  Var av = a;
  Tensor wc = w;
  return make_op("weighted_sum", Tensor::scalar(s), {a}, [av, wc, n](Node& self) {
    if (!av->requires_grad) return;
    Tensor& g = av->grad_buf();
    double gs = self.grad[0];
    for (int64_t i = 0; i < n; ++i) g[i] += gs * wc[i];
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) fail("concat_channels: no inputs");
  ++counters().concat_calls;
  Chw d0 = chw(xs[0]->value);
  int ctotal = 0;
  for (const Var& x : xs) {
    Chw d = chw(x->value);
    if (d.b != d0.b || d.h != d0.h || d.w != d0.w ||
        x->value.rank() != xs[0]->value.rank())
      fail("concat_channels: incompatible input " + x->value.shape_str() +
           " vs " + xs[0]->value.shape_str());
    ctotal += d.c;
  }
  Tensor out = Tensor::zeros(like_shape(xs[0]->value, ctotal, d0.h, d0.w));
  const int64_t plane = d0.plane();
  for (int b = 0; b < d0.b; ++b) {
    int64_t off = static_cast<int64_t>(b) * ctotal * plane;
    for (const Var& x : xs) {
      Chw d = chw(x->value);
      const double* src = x->value.data.data() + static_cast<int64_t>(b) * d.c * plane;
      std::memcpy(out.data.data() + off, src, sizeof(double) * d.c * plane);
      off += static_cast<int64_t>(d.c) * plane;
    }
  }
  std::vector<Var> parents = xs;
  return make_op("concat_channels", std::move(out), parents,
                 [parents, d0, ctotal, plane](Node& self) {
    for (int b = 0; b < d0.b; ++b) {
      int64_t off = static_cast<int64_t>(b) * ctotal * plane;
      for (const Var& x : parents) {
        Chw d = chw(x->value);
        int64_t len = static_cast<int64_t>(d.c) * plane;
        if (x->requires_grad)
          axpy(x->grad_buf().data.data() + static_cast<int64_t>(b) * len,
               self.grad.data.data() + off, len, 1.0);
        off += len;
      }
    }
  });
}

Var slice_channels(const Var& a, int c0, int c1) {
  Chw d = chw(a->value);
  if (c0 < 0 || c1 > d.c || c0 >= c1)
    fail("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
         ") invalid for " + a->value.shape_str());
  int cs = c1 - c0;
  const int64_t plane = d.plane();
  Tensor out = Tensor::zeros(like_shape(a->value, cs, d.h, d.w));
  for (int b = 0; b < d.b; ++b)
    std::memcpy(out.data.data() + static_cast<int64_t>(b) * cs * plane,
                a->value.data.data() + (static_cast<int64_t>(b) * d.c + c0) * plane,
                sizeof(double) * cs * plane);
  Var av = a;
  return make_op("slice_channels", std::move(out), {a}, [av, d, c0, cs, plane](Node& self) {
    if (!av->requires_grad) return;
    Tensor& g = av->grad_buf();
    for (int b = 0; b < d.b; ++b)
      axpy(g.data.data() + (static_cast<int64_t>(b) * d.c + c0) * plane,
           self.grad.data.data() + static_cast<int64_t>(b) * cs * plane,
           static_cast<int64_t>(cs) * plane, 1.0);
  });
}

Var upsample_nearest2(const Var& a, int out_h, int out_w) {
  Chw d = chw(a->value);
  if (out_h != 2 * d.h && out_h != 2 * d.h - 1)
    fail("upsample_nearest2: out_h " + std::to_string(out_h) + " for H " + std::to_string(d.h));
  if (out_w != 2 * d.w && out_w != 2 * d.w - 1)
    fail("upsample_nearest2: out_w " + std::to_string(out_w) + " for W " + std::to_string(d.w));
  Tensor out = Tensor::zeros(like_shape(a->value, d.c, out_h, out_w));
  const int64_t bc = static_cast<int64_t>(d.b) * d.c;
  for (int64_t p = 0; p < bc; ++p) {
    const double* src = a->value.data.data() + p * d.plane();
    double* dst = out.data.data() + p * out_h * out_w;
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        dst[static_cast<int64_t>(y) * out_w + x] = src[static_cast<int64_t>(y >> 1) * d.w + (x >> 1)];
  }
  Var av = a;
  return make_op("upsample_nearest2", std::move(out), {a},
                 [av, d, out_h, out_w, bc](Node& self) {
    if (!av->requires_grad) return;
    Tensor& g = av->grad_buf();
    for (int64_t p = 0; p < bc; ++p) {
      double* gs = g.data.data() + p * d.plane();
      const double* go = self.grad.data.data() + p * out_h * out_w;
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
          gs[static_cast<int64_t>(y >> 1) * d.w + (x >> 1)] += go[static_cast<int64_t>(y) * out_w + x];
    }
  });
}

Var space_to_depth(const Var& a, int factor) {
  Chw d = chw(a->value);
  if (factor < 1 || d.h % factor || d.w % factor)
    fail("space_to_depth: factor " + std::to_string(factor) + " does not divide " +
         a->value.shape_str());
  int oh = d.h / factor, ow = d.w / factor, oc = d.c * factor * factor;
  Tensor out = Tensor::zeros(like_shape(a->value, oc, oh, ow));
  for (int b = 0; b < d.b; ++b) {
    const double* src = a->value.data.data() + static_cast<int64_t>(b) * d.sample();
    double* dst = out.data.data() + static_cast<int64_t>(b) * oc * oh * ow;
    for (int c = 0; c < d.c; ++c)
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          int co = (c * factor + dy) * factor + dx;
          for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
              dst[(static_cast<int64_t>(co) * oh + y) * ow + x] =
                  src[(static_cast<int64_t>(c) * d.h + y * factor + dy) * d.w + x * factor + dx];
        }
  }
  Var av = a;
  return make_op("space_to_depth", std::move(out), {a},
                 [av, d, factor, oh, ow, oc](Node& self) {
    if (!av->requires_grad) return;
    Tensor& g = av->grad_buf();
    for (int b = 0; b < d.b; ++b) {
      double* gs = g.data.data() + static_cast<int64_t>(b) * d.sample();
      const double* go = self.grad.data.data() + static_cast<int64_t>(b) * oc * oh * ow;
      for (int c = 0; c < d.c; ++c)
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) {
            int co = (c * factor + dy) * factor + dx;
            for (int y = 0; y < oh; ++y)
              for (int x = 0; x < ow; ++x)
                gs[(static_cast<int64_t>(c) * d.h + y * factor + dy) * d.w + x * factor + dx] +=
                    go[(static_cast<int64_t>(co) * oh + y) * ow + x];
          }
    }
  });
}

Var depth_to_space(const Var& a, int factor) {
  Chw d = chw(a->value);
  if (factor < 1 || d.c % (factor * factor))
    fail("depth_to_space: factor " + std::to_string(factor) + " does not divide channels of " +
         a->value.shape_str());
  int oc = d.c / (factor * factor), oh = d.h * factor, ow = d.w * factor;
  Tensor out = Tensor::zeros(like_shape(a->value, oc, oh, ow));
  for (int b = 0; b < d.b; ++b) {
    const double* src = a->value.data.data() + static_cast<int64_t>(b) * d.sample();
    double* dst = out.data.data() + static_cast<int64_t>(b) * oc * oh * ow;
    for (int c = 0; c < oc; ++c)
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          int ci = (c * factor + dy) * factor + dx;
          for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x)
              dst[(static_cast<int64_t>(c) * oh + y * factor + dy) * ow + x * factor + dx] =
                  src[(static_cast<int64_t>(ci) * d.h + y) * d.w + x];
        }
  }
  Var av = a;
  return make_op("depth_to_space", std::move(out), {a},
                 [av, d, factor, oc, oh, ow](Node& self) {
    if (!av->requires_grad) return;
    Tensor& g = av->grad_buf();
    for (int b = 0; b < d.b; ++b) {
      double* gs = g.data.data() + static_cast<int64_t>(b) * d.sample();
      const double* go = self.grad.data.data() + static_cast<int64_t>(b) * oc * oh * ow;
      for (int c = 0; c < oc; ++c)
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) {
            int ci = (c * factor + dy) * factor + dx;
            for (int y = 0; y < d.h; ++y)
              for (int x = 0; x < d.w; ++x)
                gs[(static_cast<int64_t>(ci) * d.h + y) * d.w + x] +=
                    go[(static_cast<int64_t>(c) * oh + y * factor + dy) * ow + x * factor + dx];
          }
    }
  });
}

// ---------------------------------------------------------------- conv2d --

namespace {

struct ConvDims {
  int ci, co, kh, kw, stride;
  int h, w, oh, ow, pt, pl;
  int64_t K() const { return static_cast<int64_t>(ci) * kh * kw; }
  int64_t N() const { return static_cast<int64_t>(oh) * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride) {
  if (w.rank() != 4) fail("conv2d: kernel must be rank 4, got " + w.shape_str());
  Chw d = chw(x);
  ConvDims cd;
  cd.co = w.shape[0];
  cd.ci = w.shape[1];
  cd.kh = w.shape[2];
  cd.kw = w.shape[3];
  cd.stride = stride;
  if (cd.ci != d.c)
    fail("conv2d: kernel expects " + std::to_string(cd.ci) + " input channels, got " +
         x.shape_str());
  if (stride < 1) fail("conv2d: stride must be >= 1");
  if (cd.kh % 2 == 0 || cd.kw % 2 == 0) fail("conv2d: kernel dims must be odd");
  cd.h = d.h;
  cd.w = d.w;
  cd.oh = (d.h + stride - 1) / stride;
  cd.ow = (d.w + stride - 1) / stride;
  int need_h = (cd.oh - 1) * stride + cd.kh;
  int need_w = (cd.ow - 1) * stride + cd.kw;
  int pad_h = need_h > d.h ? need_h - d.h : 0;
  int pad_w = need_w > d.w ? need_w - d.w : 0;
  cd.pt = pad_h / 2;  // extra padding pixel goes to the bottom/right
  cd.pl = pad_w / 2;
  return cd;
}

void im2col(const double* xs, const ConvDims& cd, double* col) {
  const int64_t N = cd.N();
  for (int c = 0; c < cd.ci; ++c)
    for (int dy = 0; dy < cd.kh; ++dy)
      for (int dx = 0; dx < cd.kw; ++dx) {
        double* row = col + ((static_cast<int64_t>(c) * cd.kh + dy) * cd.kw + dx) * N;
        for (int oy = 0; oy < cd.oh; ++oy) {
          int iy = oy * cd.stride + dy - cd.pt;
          double* out = row + static_cast<int64_t>(oy) * cd.ow;
          if (iy < 0 || iy >= cd.h) {
            for (int ox = 0; ox < cd.ow; ++ox) out[ox] = 0.0;
            continue;
          }
          const double* src = xs + static_cast<int64_t>(c) * cd.h * cd.w +
                              static_cast<int64_t>(iy) * cd.w;
          for (int ox = 0; ox < cd.ow; ++ox) {
            int ix = ox * cd.stride + dx - cd.pl;
            out[ox] = (ix >= 0 && ix < cd.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, const ConvDims& cd, double* gx) {
  for (int c = 0; c < cd.ci; ++c)
    for (int dy = 0; dy < cd.kh; ++dy)
      for (int dx = 0; dx < cd.kw; ++dx) {
        const double* row = col + ((static_cast<int64_t>(c) * cd.kh + dy) * cd.kw + dx) * cd.N();
        for (int oy = 0; oy < cd.oh; ++oy) {
          int iy = oy * cd.stride + dy - cd.pt;
          if (iy < 0 || iy >= cd.h) continue;
          double* dst = gx + static_cast<int64_t>(c) * cd.h * cd.w +
                        static_cast<int64_t>(iy) * cd.w;
          const double* src = row + static_cast<int64_t>(oy) * cd.ow;
          for (int ox = 0; ox < cd.ow; ++ox) {
            int ix = ox * cd.stride + dx - cd.pl;
            if (ix >= 0 && ix < cd.w) dst[ix] += src[ox];
          }
        }
      }
}

// C[M,N] += A[M,K] * B[K,N].  The k-loop is sequential per output element,
// so results do not depend on the SIMD width the compiler picks for j.
void gemm_acc(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    double* crow = C + i * N;
    const double* arow = A + i * K;
    for (int64_t k = 0; k < K; ++k) {
      double a = arow[k];
      if (a == 0.0) continue;  // zero-initialized heads stay cheap
      const double* brow = B + k * N;
      for (int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

thread_local std::vector<double> g_col_scratch;
thread_local std::vector<double> g_col_scratch2;

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride) {
  const ConvDims cd = conv_dims(x->value, w->value, stride);
  Chw d = chw(x->value);
  if (b && b->value.numel() > 0 &&
      (b->value.rank() != 1 || b->value.shape[0] != cd.co))
    fail("conv2d: bias shape " + b->value.shape_str() + " for " +
         std::to_string(cd.co) + " outputs");

  const int64_t K = cd.K(), N = cd.N();
  Tensor out = Tensor::zeros(like_shape(x->value, cd.co, cd.oh, cd.ow));
  std::vector<double>& col = g_col_scratch;
  col.resize(static_cast<size_t>(K * N));
  for (int s = 0; s < d.b; ++s) {
    im2col(x->value.data.data() + static_cast<int64_t>(s) * d.sample(), cd, col.data());
    double* o = out.data.data() + static_cast<int64_t>(s) * cd.co * N;
    if (b && b->value.numel() > 0) {
      for (int oc = 0; oc < cd.co; ++oc) {
        double bias = b->value[oc];
        double* row = o + static_cast<int64_t>(oc) * N;
        for (int64_t j = 0; j < N; ++j) row[j] = bias;
      }
    }
    gemm_acc(w->value.data.data(), col.data(), o, cd.co, K, N);
  }

  Var xv = x, wv = w, bv = b;
  return make_op("conv2d", std::move(out), {x, w, b},
                 [xv, wv, bv, cd, d, K, N](Node& self) {
    std::vector<double>& col = g_col_scratch;
    col.resize(static_cast<size_t>(K * N));
    const bool need_x = xv->requires_grad;
    const bool need_w = wv->requires_grad;
    const bool need_b = bv && bv->requires_grad;
    std::vector<double>* dcol = nullptr;
    if (need_x) {
      g_col_scratch2.assign(static_cast<size_t>(K * N), 0.0);
      dcol = &g_col_scratch2;
    }
    for (int s = 0; s < d.b; ++s) {
      const double* go = self.grad.data.data() + static_cast<int64_t>(s) * cd.co * N;
      if (need_w || need_x)
        im2col(xv->value.data.data() + static_cast<int64_t>(s) * d.sample(), cd, col.data());
      if (need_w) {
        // dW[o,k] += sum_j go[o,j] * col[k,j]
        Tensor& gw = wv->grad_buf();
        for (int o = 0; o < cd.co; ++o) {
          const double* gr = go + static_cast<int64_t>(o) * N;
          double* gwrow = gw.data.data() + static_cast<int64_t>(o) * K;
          for (int64_t k = 0; k < K; ++k) {
            const double* cr = col.data() + k * N;
            double acc = 0.0;
            for (int64_t j = 0; j < N; ++j) acc += gr[j] * cr[j];
            gwrow[k] += acc;
          }
        }
      }
      if (need_b) {
        Tensor& gb = bv->grad_buf();
        for (int o = 0; o < cd.co; ++o) {
          const double* gr = go + static_cast<int64_t>(o) * N;
          double acc = 0.0;
          for (int64_t j = 0; j < N; ++j) acc += gr[j];
          gb[o] += acc;
        }
      }
      if (need_x) {
        // dcol[k,j] = sum_o W[o,k] * go[o,j], then scatter back to pixels.
        std::fill(dcol->begin(), dcol->end(), 0.0);
        for (int o = 0; o < cd.co; ++o) {
          const double* wrow = wv->value.data.data() + static_cast<int64_t>(o) * K;
          const double* gr = go + static_cast<int64_t>(o) * N;
          for (int64_t k = 0; k < K; ++k) {
            double a = wrow[k];
            if (a == 0.0) continue;
            double* drow = dcol->data() + k * N;
            for (int64_t j = 0; j < N; ++j) drow[j] += a * gr[j];
          }
        }
        col2im_add(dcol->data(), cd,
                   xv->grad_buf().data.data() + static_cast<int64_t>(s) * d.sample());
      }
    }
  });
}

// ----------------------------------------------------- channel_normalize --

Var channel_normalize(const Var& x, ChannelStats& stats, bool training) {
  Chw d = chw(x->value);
  if (stats.mean.numel() != d.c)
    fail("channel_normalize: stats track " + std::to_string(stats.mean.numel()) +
         " channels, input is " + x->value.shape_str());

  if (training && !stats.frozen) {
    const int64_t per = static_cast<int64_t>(d.b) * d.plane();
    for (int c = 0; c < d.c; ++c) {
      double m = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const double* p = x->value.data.data() +
                          (static_cast<int64_t>(b) * d.c + c) * d.plane();
        for (int64_t i = 0; i < d.plane(); ++i) m += p[i];
      }
      m /= static_cast<double>(per);
      double v = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const double* p = x->value.data.data() +
                          (static_cast<int64_t>(b) * d.c + c) * d.plane();
        for (int64_t i = 0; i < d.plane(); ++i) {
          double t = p[i] - m;
          v += t * t;
        }
      }
      v /= static_cast<double>(per);
      stats.mean[c] = stats.decay * stats.mean[c] + (1.0 - stats.decay) * m;
      stats.var[c] = stats.decay * stats.var[c] + (1.0 - stats.decay) * v;
    }
    ++stats.step_count;
    if (stats.step_count >= stats.freeze_after) stats.frozen = true;
  }

  Tensor inv = Tensor::zeros({d.c});
  Tensor mean = stats.mean;
  for (int c = 0; c < d.c; ++c) inv[c] = 1.0 / std::sqrt(stats.var[c] + stats.eps);

  Tensor out = Tensor::zeros(x->value.shape);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const double* p = x->value.data.data() + (static_cast<int64_t>(b) * d.c + c) * d.plane();
      double* o = out.data.data() + (static_cast<int64_t>(b) * d.c + c) * d.plane();
      double m = mean[c], iv = inv[c];
      for (int64_t i = 0; i < d.plane(); ++i) o[i] = (p[i] - m) * iv;
    }

  Var xv = x;
  return make_op("channel_normalize", std::move(out), {x}, [xv, d, inv](Node& self) {
    if (!xv->requires_grad) return;
    Tensor& g = xv->grad_buf();
    for (int b = 0; b < d.b; ++b)
      for (int c = 0; c < d.c; ++c) {
        int64_t off = (static_cast<int64_t>(b) * d.c + c) * d.plane();
        axpy(g.data.data() + off, self.grad.data.data() + off, d.plane(), inv[c]);
      }
  });
}

// ------------------------------------------- quantization surrogates etc --

namespace {

void check_widths(const char* who, const Var& x, const Var& widths) {
  Chw d = chw(x->value);
  if (widths->value.rank() != 1 || widths->value.shape[0] != d.c)
    fail(std::string(who) + ": widths " + widths->value.shape_str() +
         " for input " + x->value.shape_str());
  for (int c = 0; c < d.c; ++c)
    if (!(widths->value[c] > 0.0))
      fail(std::string(who) + ": width for channel " + std::to_string(c) +
           " must be positive");
}

}  // namespace

Var scale_channels(const Var& x, const Var& widths) {
  check_widths("scale_channels", x, widths);
  Chw d = chw(x->value);
  Tensor out = Tensor::zeros(x->value.shape);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      int64_t off = (static_cast<int64_t>(b) * d.c + c) * d.plane();
      double s = widths->value[c];
      for (int64_t i = 0; i < d.plane(); ++i) out[off + i] = x->value[off + i] * s;
    }
  Var xv = x, wv = widths;
  return make_op("scale_channels", std::move(out), {x, widths}, [xv, wv, d](Node& self) {
    for (int b = 0; b < d.b; ++b)
      for (int c = 0; c < d.c; ++c) {
        int64_t off = (static_cast<int64_t>(b) * d.c + c) * d.plane();
        if (xv->requires_grad)
          axpy(xv->grad_buf().data.data() + off, self.grad.data.data() + off,
               d.plane(), wv->value[c]);
        if (wv->requires_grad) {
          double acc = 0.0;
          for (int64_t i = 0; i < d.plane(); ++i)
            acc += self.grad[off + i] * xv->value[off + i];
          wv->grad_buf()[c] += acc;
        }
      }
  });
}

Var ste_quantize(const Var& x, const Var& widths) {
  check_widths("ste_quantize", x, widths);
  Chw d = chw(x->value);
  Tensor out = Tensor::zeros(x->value.shape);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      int64_t off = (static_cast<int64_t>(b) * d.c + c) * d.plane();
      double qw = widths->value[c];
      for (int64_t i = 0; i < d.plane(); ++i)
        out[off + i] = qw * round_half_away(x->value[off + i] / qw);
    }
  Var xv = x, wv = widths;
  return make_op("ste_quantize", std::move(out), {x, widths}, [xv, wv, d](Node& self) {
    for (int b = 0; b < d.b; ++b)
      for (int c = 0; c < d.c; ++c) {
        int64_t off = (static_cast<int64_t>(b) * d.c + c) * d.plane();
        if (xv->requires_grad)
          axpy(xv->grad_buf().data.data() + off, self.grad.data.data() + off,
               d.plane(), 1.0);
        if (wv->requires_grad) {
          double qw = wv->value[c];
          double acc = 0.0;
          for (int64_t i = 0; i < d.plane(); ++i)
            acc += self.grad[off + i] * round_half_away(xv->value[off + i] / qw);
          wv->grad_buf()[c] += acc;
        }
      }
  });
}

Var add_scaled_noise(const Var& x, const Var& widths, const Tensor& noise) {
  check_widths("add_scaled_noise", x, widths);
  if (!noise.same_shape(x->value))
    fail("add_scaled_noise: noise shape " + noise.shape_str() + " != " +
         x->value.shape_str());
  Chw d = chw(x->value);
  Tensor out = Tensor::zeros(x->value.shape);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      int64_t off = (static_cast<int64_t>(b) * d.c + c) * d.plane();
      double qw = widths->value[c];
      for (int64_t i = 0; i < d.plane(); ++i)
        out[off + i] = x->value[off + i] + qw * noise[off + i];
    }
  Var xv = x, wv = widths;
  Tensor nz = noise;
  return make_op("add_scaled_noise", std::move(out), {x, widths}, [xv, wv, nz, d](Node& self) {
    for (int b = 0; b < d.b; ++b)
      for (int c = 0; c < d.c; ++c) {
        int64_t off = (static_cast<int64_t>(b) * d.c + c) * d.plane();
        if (xv->requires_grad)
          axpy(xv->grad_buf().data.data() + off, self.grad.data.data() + off,
               d.plane(), 1.0);
        if (wv->requires_grad) {
          double acc = 0.0;
          for (int64_t i = 0; i < d.plane(); ++i)
            acc += self.grad[off + i] * nz[off + i];
          wv->grad_buf()[c] += acc;
        }
      }
  });
}

Var lincomb_rows(const Var& table, const std::vector<double>& weights) {
  if (table->value.rank() != 2)
    fail("lincomb_rows: table must be rank 2, got " + table->value.shape_str());
  int rows = table->value.shape[0], cols = table->value.shape[1];
  if (static_cast<int>(weights.size()) != rows)
    fail("lincomb_rows: " + std::to_string(weights.size()) + " weights for " +
         std::to_string(rows) + " rows");
  Tensor out = Tensor::zeros({cols});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[c] += weights[r] * table->value[static_cast<int64_t>(r) * cols + c];
  Var tv = table;
  std::vector<double> wc = weights;
  return make_op("lincomb_rows", std::move(out), {table}, [tv, wc, rows, cols](Node& self) {
    if (!tv->requires_grad) return;
    Tensor& g = tv->grad_buf();
    for (int r = 0; r < rows; ++r)
      axpy(g.data.data() + static_cast<int64_t>(r) * cols, self.grad.data.data(),
           cols, wc[r]);
  });
}

Var tile_vector2d(const Var& v, int b, int h, int w) {
  if (v->value.rank() != 1)
    fail("tile_vector2d: vector must be rank 1, got " + v->value.shape_str());
  if (b < 0 || h <= 0 || w <= 0) fail("tile_vector2d: bad output dims");
  const int c = v->value.shape[0];
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int reps = b == 0 ? 1 : b;
  Tensor out = b == 0 ? Tensor::zeros({c, h, w}) : Tensor::zeros({b, c, h, w});
  for (int s = 0; s < reps; ++s)
    for (int ci = 0; ci < c; ++ci) {
      double val = v->value[ci];
      double* dst = out.data.data() + (static_cast<int64_t>(s) * c + ci) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = val;
    }
  Var vv = v;
  return make_op("tile_vector2d", std::move(out), {v}, [vv, c, reps, plane](Node& self) {
    if (!vv->requires_grad) return;
    Tensor& g = vv->grad_buf();
    for (int s = 0; s < reps; ++s)
      for (int ci = 0; ci < c; ++ci) {
        const double* src = self.grad.data.data() + (static_cast<int64_t>(s) * c + ci) * plane;
        double acc = 0.0;
        for (int64_t i = 0; i < plane; ++i) acc += src[i];
        g[ci] += acc;
      }
  });
}

Tensor uniform_noise_like(const Tensor& t, Rng& rng) {
  Tensor n = Tensor::zeros(t.shape);
  for (double& v : n.data) v = rng.uniform() - 0.5;
  return n;
}

}  // namespace ops
}  // namespace elfvc
