#include "stegsense/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstring>
#include <thread>

#include "stegsense/errors.hpp"

namespace stegsense::ops {

using detail::attach;
using detail::make_result;
using detail::TensorImpl;

namespace {

std::size_t g_threads = 1;

}  // namespace

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_threads; }

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor '" + arg + "'");
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": '" + arg + "' must have rank " +
                         std::to_string(rank) + ", got shape " + shape_str(t.shape()));
  }
}

// ---------------------------------------------------------------- conv2d --
//
// All paths accumulate each output as
//   out = 0; for ci: for kh: for kw: out += w * in
// which is the order of the reference nested loop. Stride-1 3x3 and 5x5
// kernels get a specialisation whose inner loop runs over output columns so
// the compiler can vectorise it without changing that per-element order.

struct ConvGeom {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, hp, wp, ho, wo;
};

std::vector<double> pad_input(const Tensor& input, const ConvGeom& g) {
  if (g.pad == 0) return std::vector<double>(input.data().begin(), input.data().end());
  std::vector<double> out(g.n * g.cin * g.hp * g.wp, 0.0);
  const double* src = input.data().data();
  for (std::size_t p = 0; p < g.n * g.cin; ++p) {
    for (std::size_t y = 0; y < g.h; ++y) {
      const double* s = src + (p * g.h + y) * g.w;
      double* d = out.data() + (p * g.hp + y + g.pad) * g.wp + g.pad;
      std::copy(s, s + g.w, d);
    }
  }
  return out;
}

// Runs fn(i) for i in [0, count), split over num_threads() workers. Callers
// only hand in tasks that write disjoint memory, so the split cannot change
// any result.
template <typename F>
void parallel_for(std::size_t count, F fn) {
  const std::size_t workers = std::min(num_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

constexpr std::size_t kBlock = 4;
constexpr std::size_t kVec = 8;

// Eight doubles operated on lane by lane: each lane performs exactly the
// scalar multiply and add (contraction is disabled for the whole build).
typedef double Vec8 __attribute__((vector_size(64)));

inline Vec8 load8(const double* p) {
  Vec8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(double* p, Vec8 v) { std::memcpy(p, &v, sizeof v); }

// Output channels co0..co0+CB of image n. Each output element keeps its own
// accumulator and the (ci, kh, kw) order; blocking over channels and runs of
// eight columns only shares loads.
template <std::size_t K, std::size_t CB>
void conv_forward_s1_block(const double* in, const double* kernel, double* out, const ConvGeom& g,
                           std::size_t n, std::size_t co0) {
  double* o[CB];
  for (std::size_t j = 0; j < CB; ++j) o[j] = out + (n * g.cout + co0 + j) * g.ho * g.wo;
  const std::size_t vec_end = g.wo - g.wo % kVec;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* ip = in + (n * g.cin + ci) * g.hp * g.wp;
    double wl[CB][K * K];
    for (std::size_t j = 0; j < CB; ++j)
      for (std::size_t i = 0; i < K * K; ++i) wl[j][i] = kernel[((co0 + j) * g.cin + ci) * K * K + i];
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      const double* irow = ip + oy * g.wp;
      const std::size_t orow = oy * g.wo;
      for (std::size_t ox = 0; ox < vec_end; ox += kVec) {
        Vec8 a[CB];
        for (std::size_t j = 0; j < CB; ++j) a[j] = load8(o[j] + orow + ox);
        for (std::size_t r = 0; r < K; ++r) {
          for (std::size_t c = 0; c < K; ++c) {
            const Vec8 v = load8(irow + r * g.wp + ox + c);
            for (std::size_t j = 0; j < CB; ++j) a[j] += wl[j][r * K + c] * v;
          }
        }
        for (std::size_t j = 0; j < CB; ++j) store8(o[j] + orow + ox, a[j]);
      }
      for (std::size_t ox = vec_end; ox < g.wo; ++ox) {
        for (std::size_t j = 0; j < CB; ++j) {
          double a = o[j][orow + ox];
          for (std::size_t r = 0; r < K; ++r)
            for (std::size_t c = 0; c < K; ++c) a += wl[j][r * K + c] * irow[r * g.wp + ox + c];
          o[j][orow + ox] = a;
        }
      }
    }
  }
}

template <std::size_t K>
void conv_forward_s1(const double* in, const double* kernel, double* out, const ConvGeom& g) {
  const std::size_t blocks = (g.cout + kBlock - 1) / kBlock;
  parallel_for(g.n * blocks, [&](std::size_t task) {
    const std::size_t n = task / blocks, co0 = (task % blocks) * kBlock;
    if (co0 + kBlock <= g.cout) {
      conv_forward_s1_block<K, kBlock>(in, kernel, out, g, n, co0);
    } else {
      for (std::size_t co = co0; co < g.cout; ++co) conv_forward_s1_block<K, 1>(in, kernel, out, g, n, co);
    }
  });
}

void conv_forward_generic(const double* in, const double* kernel, double* out, const ConvGeom& g) {
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* o = out + (n * g.cout + co) * g.ho * g.wo;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* ip = in + (n * g.cin + ci) * g.hp * g.wp;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            double a = o[oy * g.wo + ox];
            for (std::size_t r = 0; r < g.kh; ++r) {
              const double* irow = ip + (oy * g.stride + r) * g.wp + ox * g.stride;
              const double* wrow = kernel + ((co * g.cin + ci) * g.kh + r) * g.kw;
              for (std::size_t c = 0; c < g.kw; ++c) a += wrow[c] * irow[c];
            }
            o[oy * g.wo + ox] = a;
          }
        }
      }
    }
  }
}

// d(input): gather form over zero-padded copies of d(out). Each padded input
// element accumulates over (co, kh, kw).
template <std::size_t K, std::size_t CB>
void conv_backward_input_s1_block(const double* gpad, const double* kernel, double* din_p, const ConvGeom& g,
                                  std::size_t n, std::size_t ci0) {
  const std::size_t gh = g.ho + 2 * (K - 1);
  const std::size_t gw = g.wo + 2 * (K - 1);
  const std::size_t vec_end = g.wp - g.wp % kVec;
  double* dp[CB];
  for (std::size_t j = 0; j < CB; ++j) dp[j] = din_p + (n * g.cin + ci0 + j) * g.hp * g.wp;
  for (std::size_t co = 0; co < g.cout; ++co) {
    const double* gp = gpad + co * gh * gw;
    double wl[CB][K * K];
    for (std::size_t j = 0; j < CB; ++j)
      for (std::size_t i = 0; i < K * K; ++i) wl[j][i] = kernel[(co * g.cin + ci0 + j) * K * K + i];
    for (std::size_t y = 0; y < g.hp; ++y) {
      const std::size_t drow = y * g.wp;
      for (std::size_t x = 0; x < vec_end; x += kVec) {
        Vec8 a[CB];
        for (std::size_t j = 0; j < CB; ++j) a[j] = load8(dp[j] + drow + x);
        for (std::size_t r = 0; r < K; ++r) {
          const double* grow = gp + (y + K - 1 - r) * gw + x + (K - 1);
          for (std::size_t c = 0; c < K; ++c) {
            const Vec8 v = load8(grow - c);
            for (std::size_t j = 0; j < CB; ++j) a[j] += wl[j][r * K + c] * v;
          }
        }
        for (std::size_t j = 0; j < CB; ++j) store8(dp[j] + drow + x, a[j]);
      }
      for (std::size_t x = vec_end; x < g.wp; ++x) {
        for (std::size_t j = 0; j < CB; ++j) {
          double a = dp[j][drow + x];
          for (std::size_t r = 0; r < K; ++r) {
            const double* grow = gp + (y + K - 1 - r) * gw + x + (K - 1);
            for (std::size_t c = 0; c < K; ++c) a += wl[j][r * K + c] * *(grow - c);
          }
          dp[j][drow + x] = a;
        }
      }
    }
  }
}

template <std::size_t K>
void conv_backward_input_s1(const double* dout, const double* kernel, double* din_p, const ConvGeom& g) {
  const std::size_t gh = g.ho + 2 * (K - 1);
  const std::size_t gw = g.wo + 2 * (K - 1);
  std::vector<double> gpad(g.cout * gh * gw, 0.0);
  const std::size_t blocks = (g.cin + kBlock - 1) / kBlock;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* d = dout + (n * g.cout + co) * g.ho * g.wo;
      for (std::size_t y = 0; y < g.ho; ++y) {
        std::copy(d + y * g.wo, d + (y + 1) * g.wo, gpad.data() + (co * gh + y + K - 1) * gw + K - 1);
      }
    }
    parallel_for(blocks, [&](std::size_t b) {
      const std::size_t ci0 = b * kBlock;
      if (ci0 + kBlock <= g.cin) {
        conv_backward_input_s1_block<K, kBlock>(gpad.data(), kernel, din_p, g, n, ci0);
      } else {
        for (std::size_t ci = ci0; ci < g.cin; ++ci) {
          conv_backward_input_s1_block<K, 1>(gpad.data(), kernel, din_p, g, n, ci);
        }
      }
    });
  }
}

void conv_backward_input_generic(const double* dout, const double* kernel, double* din_p,
                                 const ConvGeom& g) {
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* d = dout + (n * g.cout + co) * g.ho * g.wo;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        double* dp = din_p + (n * g.cin + ci) * g.hp * g.wp;
        const double* wk = kernel + (co * g.cin + ci) * g.kh * g.kw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const double go = d[oy * g.wo + ox];
            for (std::size_t r = 0; r < g.kh; ++r) {
              double* drow = dp + (oy * g.stride + r) * g.wp + ox * g.stride;
              for (std::size_t c = 0; c < g.kw; ++c) drow[c] += wk[r * g.kw + c] * go;
            }
          }
        }
      }
    }
  }
}

// d(kernel): every kernel tap keeps one partial sum per output column,
// accumulated over (n, oy) in that order; the column sums of a tap are then
// added left to right. The partials live in `lanes` so the loop can run
// image by image; eight columns at a time are carried in registers.
template <std::size_t K>
void conv_backward_kernel_s1(const double* dout, const double* in_p, double* dk, const ConvGeom& g) {
  const std::size_t lane_len = K * K * g.wo;
  std::vector<double> lanes(g.cout * g.cin * lane_len, 0.0);
  const std::size_t vec_end = g.wo - g.wo % kVec;
  parallel_for(g.cout, [&](std::size_t co) {
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* d = dout + (n * g.cout + co) * g.ho * g.wo;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* ip = in_p + (n * g.cin + ci) * g.hp * g.wp;
        double* lane = lanes.data() + (co * g.cin + ci) * lane_len;
        for (std::size_t ox = 0; ox < vec_end; ox += kVec) {
          Vec8 acc[K * K];
          for (std::size_t t = 0; t < K * K; ++t) acc[t] = load8(lane + t * g.wo + ox);
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const Vec8 dv = load8(d + oy * g.wo + ox);
            for (std::size_t r = 0; r < K; ++r) {
              const double* irow = ip + (oy + r) * g.wp + ox;
              for (std::size_t c = 0; c < K; ++c) acc[r * K + c] += dv * load8(irow + c);
            }
          }
          for (std::size_t t = 0; t < K * K; ++t) store8(lane + t * g.wo + ox, acc[t]);
        }
        for (std::size_t ox = vec_end; ox < g.wo; ++ox) {
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            for (std::size_t r = 0; r < K; ++r)
              for (std::size_t c = 0; c < K; ++c)
                lane[(r * K + c) * g.wo + ox] += d[oy * g.wo + ox] * ip[(oy + r) * g.wp + ox + c];
          }
        }
      }
    }
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const double* lane = lanes.data() + (co * g.cin + ci) * lane_len;
      double* dst = dk + (co * g.cin + ci) * K * K;
      for (std::size_t t = 0; t < K * K; ++t) {
        double s = 0.0;
        for (std::size_t ox = 0; ox < g.wo; ++ox) s += lane[t * g.wo + ox];
        dst[t] += s;
      }
    }
  });
}

void conv_backward_kernel_generic(const double* dout, const double* in_p, double* dk,
                                  const ConvGeom& g) {
  for (std::size_t co = 0; co < g.cout; ++co) {
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (std::size_t r = 0; r < g.kh; ++r) {
        for (std::size_t c = 0; c < g.kw; ++c) {
          double s = 0.0;
          for (std::size_t n = 0; n < g.n; ++n) {
            const double* d = dout + (n * g.cout + co) * g.ho * g.wo;
            const double* ip = in_p + (n * g.cin + ci) * g.hp * g.wp;
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
              for (std::size_t ox = 0; ox < g.wo; ++ox) {
                s += d[oy * g.wo + ox] * ip[(oy * g.stride + r) * g.wp + ox * g.stride + c];
              }
            }
          }
          dk[((co * g.cin + ci) * g.kh + r) * g.kw + c] += s;
        }
      }
    }
  }
}

// Elementwise unary helper: forward f, derivative df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  Tensor y = make_result(x.shape(), std::move(out));
  attach(y, name, {x}, [x, df](const TensorImpl& o) {
    double* gx = x.impl()->grad_buffer();
    const auto xd = x.data();
    for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += o.grad[i] * df(xd[i], o.data[i]);
  });
  return y;
}

enum class Bcast { kSame, kScalarA, kScalarB };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1) return Bcast::kScalarB;
  if (a.numel() == 1) return Bcast::kScalarA;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " are not compatible");
}

// Binary helper: f(a, b), partials da(a, b), db(a, b).
template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  const Bcast kind = broadcast_kind(a, b, name);
  const Shape& shape = kind == Bcast::kScalarA ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  const auto ad = a.data();
  const auto bd = b.data();
  auto ai = [kind](std::size_t i) { return kind == Bcast::kScalarA ? 0 : i; };
  auto bi = [kind](std::size_t i) { return kind == Bcast::kScalarB ? 0 : i; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[ai(i)], bd[bi(i)]);
  Tensor y = make_result(shape, std::move(out));
  attach(y, name, {a, b}, [a, b, kind, da, db, ai, bi](const TensorImpl& o) {
    const auto ad = a.data();
    const auto bd = b.data();
    if (a.requires_grad()) {
      double* ga = a.impl()->grad_buffer();
      for (std::size_t i = 0; i < o.data.size(); ++i) ga[ai(i)] += o.grad[i] * da(ad[ai(i)], bd[bi(i)]);
    }
    if (b.requires_grad()) {
      double* gb = b.impl()->grad_buffer();
      for (std::size_t i = 0; i < o.data.size(); ++i) gb[bi(i)] += o.grad[i] * db(ad[ai(i)], bd[bi(i)]);
    }
    (void)kind;
  });
  return y;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeom g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (kernel.dim(1) != g.cin) {
    throw DimensionError("conv2d: input channels (axis 1 of input) = " + std::to_string(g.cin) +
                         " but kernel axis 1 = " + std::to_string(kernel.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw DimensionError("conv2d: kernel spatial axes 2,3 must be odd, got " +
                         shape_str(kernel.shape()));
  }
  g.hp = g.h + 2 * padding;
  g.wp = g.w + 2 * padding;
  if (g.hp < g.kh || g.wp < g.kw) {
    throw DimensionError("conv2d: padded input axes 2,3 " + std::to_string(g.hp) + "x" +
                         std::to_string(g.wp) + " smaller than kernel " + shape_str(kernel.shape()));
  }
  g.ho = (g.hp - g.kh) / stride + 1;
  g.wo = (g.wp - g.kw) / stride + 1;

  auto in_p = std::make_shared<std::vector<double>>(pad_input(input, g));
  std::vector<double> out(g.n * g.cout * g.ho * g.wo, 0.0);
  const bool square = g.kh == g.kw;
  if (stride == 1 && square && g.kh == 3) {
    conv_forward_s1<3>(in_p->data(), kernel.data().data(), out.data(), g);
  } else if (stride == 1 && square && g.kh == 5) {
    conv_forward_s1<5>(in_p->data(), kernel.data().data(), out.data(), g);
  } else {
    conv_forward_generic(in_p->data(), kernel.data().data(), out.data(), g);
  }
  Tensor y = make_result({g.n, g.cout, g.ho, g.wo}, std::move(out));
  const bool need_kernel_grad = kernel.requires_grad();
  if (!need_kernel_grad) in_p.reset();
  attach(y, "conv2d", {input, kernel}, [input, kernel, in_p, g, square](const TensorImpl& o) {
    const bool fast3 = g.stride == 1 && square && g.kh == 3;
    const bool fast5 = g.stride == 1 && square && g.kh == 5;
    if (kernel.requires_grad()) {
      double* gk = kernel.impl()->grad_buffer();
      if (fast3) {
        conv_backward_kernel_s1<3>(o.grad.data(), in_p->data(), gk, g);
      } else if (fast5) {
        conv_backward_kernel_s1<5>(o.grad.data(), in_p->data(), gk, g);
      } else {
        conv_backward_kernel_generic(o.grad.data(), in_p->data(), gk, g);
      }
    }
    if (input.requires_grad()) {
      std::vector<double> din_p(g.n * g.cin * g.hp * g.wp, 0.0);
      if (fast3) {
        conv_backward_input_s1<3>(o.grad.data(), kernel.data().data(), din_p.data(), g);
      } else if (fast5) {
        conv_backward_input_s1<5>(o.grad.data(), kernel.data().data(), din_p.data(), g);
      } else {
        conv_backward_input_generic(o.grad.data(), kernel.data().data(), din_p.data(), g);
      }
      double* gi = input.impl()->grad_buffer();
      for (std::size_t p = 0; p < g.n * g.cin; ++p) {
        for (std::size_t y = 0; y < g.h; ++y) {
          const double* s = din_p.data() + (p * g.hp + y + g.pad) * g.wp + g.pad;
          double* d = gi + (p * g.h + y) * g.w;
          for (std::size_t x = 0; x < g.w; ++x) d[x] += s[x];
        }
      }
    }
  });
  return y;
}

Tensor reflect_pad2d(const Tensor& input, std::size_t pad) {
  require_rank(input, 4, "reflect_pad2d", "input");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h <= pad || w <= pad) {
    throw DimensionError("reflect_pad2d: spatial axes 2,3 of " + shape_str(input.shape()) +
                         " must exceed the padding " + std::to_string(pad));
  }
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  auto src_index = [pad](std::size_t i, std::size_t n) {
    const auto p = static_cast<std::ptrdiff_t>(pad);
    std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) - p;
    if (j < 0) j = -j;
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    if (j > last) j = 2 * last - j;
    return static_cast<std::size_t>(j);
  };
  std::vector<std::size_t> rows(hp), cols(wp);
  for (std::size_t y = 0; y < hp; ++y) rows[y] = src_index(y, h);
  for (std::size_t x = 0; x < wp; ++x) cols[x] = src_index(x, w);
  const double* src = input.data().data();
  std::vector<double> out(planes * hp * wp);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < hp; ++y)
      for (std::size_t x = 0; x < wp; ++x) out[(p * hp + y) * wp + x] = src[(p * h + rows[y]) * w + cols[x]];
  Tensor y = make_result({input.dim(0), input.dim(1), hp, wp}, std::move(out));
  attach(y, "reflect_pad2d", {input}, [input, rows, cols, planes, h, w, hp, wp](const TensorImpl& o) {
    double* g = input.impl()->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < hp; ++y)
        for (std::size_t x = 0; x < wp; ++x) g[(p * h + rows[y]) * w + cols[x]] += o.grad[(p * hp + y) * wp + x];
  });
  return y;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  const std::size_t n = input.dim(0), d = input.dim(1), k = weight.dim(1);
  if (weight.dim(0) != d) {
    throw DimensionError("linear: input axis 1 = " + std::to_string(d) + " but weight axis 0 = " +
                         std::to_string(weight.dim(0)));
  }
  if (bias.dim(0) != k) {
    throw DimensionError("linear: weight axis 1 = " + std::to_string(k) + " but bias axis 0 = " +
                         std::to_string(bias.dim(0)));
  }
  const double* x = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double a = 0.0;
      for (std::size_t t = 0; t < d; ++t) a += x[i * d + t] * w[t * k + j];
      out[i * k + j] = a + b[j];
    }
  }
  Tensor y = make_result({n, k}, std::move(out));
  attach(y, "linear", {input, weight, bias}, [input, weight, bias, n, d, k](const TensorImpl& o) {
    const double* x = input.data().data();
    const double* w = weight.data().data();
    const double* g = o.grad.data();
    if (input.requires_grad()) {
      double* gx = input.impl()->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < d; ++t) {
          double a = 0.0;
          for (std::size_t j = 0; j < k; ++j) a += g[i * k + j] * w[t * k + j];
          gx[i * d + t] += a;
        }
      }
    }
    if (weight.requires_grad()) {
      double* gw = weight.impl()->grad_buffer();
      for (std::size_t t = 0; t < d; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
          double a = 0.0;
          for (std::size_t i = 0; i < n; ++i) a += x[i * d + t] * g[i * k + j];
          gw[t * k + j] += a;
        }
      }
    }
    if (bias.requires_grad()) {
      double* gb = bias.impl()->grad_buffer();
      for (std::size_t j = 0; j < k; ++j) {
        double a = 0.0;
        for (std::size_t i = 0; i < n; ++i) a += g[i * k + j];
        gb[j] += a;
      }
    }
  });
  return y;
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  if (hw == 0) throw DimensionError("global_avg_pool: empty spatial axes 2,3");
  const double* x = input.data().data();
  std::vector<double> out(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  Tensor y = make_result({n, c}, std::move(out));
  attach(y, "global_avg_pool", {input}, [input, hw](const TensorImpl& o) {
    double* gx = input.impl()->grad_buffer();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < o.data.size(); ++p) {
      const double g = o.grad[p] * inv;
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g;
    }
  });
  return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_channels", "a");
  require_rank(b, 2, "concat_channels", "b");
  const std::size_t n = a.dim(0), c1 = a.dim(1), c2 = b.dim(1);
  if (b.dim(0) != n) {
    throw DimensionError("concat_channels: axis 0 differs (" + std::to_string(n) + " vs " +
                         std::to_string(b.dim(0)) + ")");
  }
  std::vector<double> out(n * (c1 + c2));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c1; ++j) out[i * (c1 + c2) + j] = a.data()[i * c1 + j];
    for (std::size_t j = 0; j < c2; ++j) out[i * (c1 + c2) + c1 + j] = b.data()[i * c2 + j];
  }
  Tensor y = make_result({n, c1 + c2}, std::move(out));
  attach(y, "concat_channels", {a, b}, [a, b, n, c1, c2](const TensorImpl& o) {
    if (a.requires_grad() && c1 > 0) {
      double* ga = a.impl()->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c1; ++j) ga[i * c1 + j] += o.grad[i * (c1 + c2) + j];
    }
    if (b.requires_grad() && c2 > 0) {
      double* gb = b.impl()->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c2; ++j) gb[i * c2 + j] += o.grad[i * (c1 + c2) + c1 + j];
    }
  });
  return y;
}

Tensor avg_pool2d(const Tensor& input, std::size_t window, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "avg_pool2d", "input");
  if (window == 0 || stride == 0) throw DimensionError("avg_pool2d: window and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h + 2 * padding < window || w + 2 * padding < window) {
    throw DimensionError("avg_pool2d: spatial axes 2,3 of " + shape_str(input.shape()) +
                         " too small for window " + std::to_string(window));
  }
  const std::size_t ho = (h + 2 * padding - window) / stride + 1;
  const std::size_t wo = (w + 2 * padding - window) / stride + 1;
  const double inv = 1.0 / static_cast<double>(window * window);
  const double* x = input.data().data();
  std::vector<double> out(n * c * ho * wo, 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (std::size_t r = 0; r < window; ++r) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + r) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t q = 0; q < window; ++q) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + q) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            s += x[(p * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
        out[(p * ho + oy) * wo + ox] = s * inv;
      }
    }
  }
  Tensor y = make_result({n, c, ho, wo}, std::move(out));
  attach(y, "avg_pool2d", {input}, [=](const TensorImpl& o) {
    double* gx = input.impl()->grad_buffer();
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double g = o.grad[(p * ho + oy) * wo + ox] * inv;
          for (std::size_t r = 0; r < window; ++r) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + r) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t q = 0; q < window; ++q) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + q) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              gx[(p * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += g;
            }
          }
        }
      }
    }
  });
  return y;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                  double eps) {
  require_rank(input, 4, "batch_norm", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)}) {
    if (t->ndim() != 1 || t->dim(0) != c) {
      throw DimensionError("batch_norm: per-channel tensors must be [" + std::to_string(c) +
                           "], got " + shape_str(t->shape()));
    }
  }
  const std::size_t m = n * hw;
  if (training && m < 2) throw DimensionError("batch_norm: training needs more than one value per channel");
  const double* x = input.data().data();
  std::vector<double> mean(c), inv_std(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) s += x[(i * c + ch) * hw + j];
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < hw; ++j) {
          const double dlt = x[(i * c + ch) * hw + j] - mu;
          v += dlt * dlt;
        }
      }
      const double var = v / static_cast<double>(m);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mu;
      rv[ch] = (1.0 - momentum) * rv[ch] +
               momentum * var * static_cast<double>(m) / static_cast<double>(m - 1);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.data()[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(input.numel());
  std::vector<double> out(input.numel());
  const double* gm = gamma.data().data();
  const double* bt = beta.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const double xh = (x[base + j] - mean[ch]) * inv_std[ch];
        (*xhat)[base + j] = xh;
        out[base + j] = gm[ch] * xh + bt[ch];
      }
    }
  }
  Tensor y = make_result(input.shape(), std::move(out));
  attach(y, "batch_norm", {input, gamma, beta},
         [input, gamma, beta, xhat, inv_std, n, c, hw, m, training](const TensorImpl& o) {
           const double* g = o.grad.data();
           const double* gm = gamma.data().data();
           std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
           for (std::size_t ch = 0; ch < c; ++ch) {
             for (std::size_t i = 0; i < n; ++i) {
               const std::size_t base = (i * c + ch) * hw;
               for (std::size_t j = 0; j < hw; ++j) {
                 sum_g[ch] += g[base + j];
                 sum_gx[ch] += g[base + j] * (*xhat)[base + j];
               }
             }
           }
           if (gamma.requires_grad()) {
             double* gg = gamma.impl()->grad_buffer();
             for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
           }
           if (beta.requires_grad()) {
             double* gb = beta.impl()->grad_buffer();
             for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
           }
           if (input.requires_grad()) {
             double* gx = input.impl()->grad_buffer();
             const double md = static_cast<double>(m);
             for (std::size_t i = 0; i < n; ++i) {
               for (std::size_t ch = 0; ch < c; ++ch) {
                 const std::size_t base = (i * c + ch) * hw;
                 const double scale = gm[ch] * inv_std[ch];
                 for (std::size_t j = 0; j < hw; ++j) {
                   if (training) {
                     gx[base + j] += scale / md *
                                     (md * g[base + j] - sum_g[ch] - (*xhat)[base + j] * sum_gx[ch]);
                   } else {
                     gx[base + j] += scale * g[base + j];
                   }
                 }
               }
             }
           }
         });
  return y;
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        // Saturation would round to exactly 0 or 1; keep the open interval.
        constexpr double kLo = std::numeric_limits<double>::min();
        constexpr double kHi = 1.0 - 0x1.0p-53;
        if (v >= 0.0) return std::min(1.0 / (1.0 + std::exp(-v)), kHi);
        const double e = std::exp(v);
        return std::max(e / (1.0 + e), kLo);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor min_with_zero(const Tensor& x) {
  return unary(
      x, "min_with_zero", [](double v) { return v < 0.0 ? v : 0.0; },
      [](double v, double) { return v < 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (x.data()[i] < 0.0) {
      throw DomainError("sqrt: negative input " + std::to_string(x.data()[i]) + " at flat index " +
                        std::to_string(i));
    }
  }
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor scalar_mul(const Tensor& x, double c) {
  return unary(
      x, "scalar_mul", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double u, double v) { return u + v; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double u, double v) { return u - v; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double u, double v) { return u * v; }, [](double, double v) { return v; },
      [](double u, double) { return u; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = make_result({1}, {s});
  attach(y, "sum", {x}, [x](const TensorImpl& o) {
    double* gx = x.impl()->grad_buffer();
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += o.grad[0];
  });
  return y;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor y = make_result({1}, {s * inv});
  attach(y, "mean", {x}, [x, inv](const TensorImpl& o) {
    double* gx = x.impl()->grad_buffer();
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += o.grad[0] * inv;
  });
  return y;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor y = make_result(shape, std::vector<double>(x.data().begin(), x.data().end()));
  attach(y, "reshape", {x}, [x](const TensorImpl& o) {
    double* gx = x.impl()->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
  return y;
}

}  // namespace stegsense::ops
