#include "dsat/ops.hpp"

#include <algorithm>
#include <cmath>

#include "dsat/error.hpp"

namespace dsat {

namespace detail {

Tensor make_output(const Shape& shape, std::initializer_list<const Tensor*> inputs) {
  bool rg = false;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  }
  return Tensor::zeros(shape, rg);
}

void attach(Tensor& out, std::vector<Tensor> inputs, std::function<void(const Tensor&)> fn) {
  if (!out.requires_grad()) return;
  auto node = std::make_shared<Node>();
  node->inputs = std::move(inputs);
  node->backward = std::move(fn);
  out.set_node(std::move(node));
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C) {
  for (std::size_t i = 0; i < M; ++i) {
    Real* c = C + i * N;
    const Real* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const Real av = a[k];
      if (av == 0.0) continue;
      const Real* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const Real* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const Real* b = B + j * K;
      Real acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const Real* a = A + k * M;
    const Real* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const Real av = a[i];
      if (av == 0.0) continue;
      Real* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

using detail::attach;
using detail::make_output;

namespace {

std::span<Real> G(Tensor t) { return t.grad(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D df) {
  Tensor out = make_output(a.shape(), {&a});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  attach(out, {a}, [a, df](const Tensor& o) {
    auto go = o.grad();
    auto x = a.data();
    auto y = o.data();
    auto ga = G(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * df(x[i], y[i]);
  });
  return out;
}

// Geometry of one k×k, stride s, pad p sliding window pass.
struct Window {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
};

void im2col(const Real* x, const Window& g, Real* col) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        Real* row = col + ((c * g.kernel + kh) * g.kernel + kw) * P;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
          Real* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const Real* src = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im(const Real* col, const Window& g, Real* x) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const Real* row = col + ((c * g.kernel + kh) * g.kernel + kw) * P;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          Real* dst = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const Real* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad);
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

std::size_t window_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const char* op) {
  if (s == 0) throw ConfigError(std::string(op) + ": stride must be positive");
  if (in + 2 * p < k) {
    throw ConfigError(std::string(op) + ": non-positive output extent (input " + std::to_string(in) +
                      ", kernel " + std::to_string(k) + ", padding " + std::to_string(p) + ")");
  }
  return (in + 2 * p - k) / s + 1;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_output(a.shape(), {&a, &b});
  auto x = a.data(), y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  attach(out, {a, b}, [a, b](const Tensor& o) {
    auto go = o.grad();
    if (a.requires_grad()) {
      auto g = G(a);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
    if (b.requires_grad()) {
      auto g = G(b);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_output(a.shape(), {&a, &b});
  auto x = a.data(), y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  attach(out, {a, b}, [a, b](const Tensor& o) {
    auto go = o.grad();
    if (a.requires_grad()) {
      auto g = G(a);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
    if (b.requires_grad()) {
      auto g = G(b);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_output(a.shape(), {&a, &b});
  auto x = a.data(), y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  attach(out, {a, b}, [a, b](const Tensor& o) {
    auto go = o.grad();
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto g = G(a);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * y[i];
    }
    if (b.requires_grad()) {
      auto g = G(b);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * x[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, Real s) {
  return unary(a, [s](Real v) { return v * s; }, [s](Real, Real) { return s; });
}

Tensor sum(const Tensor& a) {
  Tensor out = make_output({1}, {&a});
  Real acc = 0.0;
  for (Real v : a.data()) acc += v;
  out.data()[0] = acc;
  attach(out, {a}, [a](const Tensor& o) {
    const Real go = o.grad()[0];
    for (Real& g : G(a)) g += go;
  });
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<Real>(a.numel())); }

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  Tensor out = make_output({1}, {&pred, &target});
  auto p = pred.data(), t = target.data();
  Real acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real d = p[i] - t[i];
    acc += d * d;
  }
  const Real n = static_cast<Real>(p.size());
  out.data()[0] = acc / n;
  attach(out, {pred, target}, [pred, target, n](const Tensor& o) {
    const Real go = o.grad()[0];
    auto p = pred.data(), t = target.data();
    if (pred.requires_grad()) {
      auto g = G(pred);
      for (std::size_t i = 0; i < p.size(); ++i) g[i] += go * 2.0 * (p[i] - t[i]) / n;
    }
    if (target.requires_grad()) {
      auto g = G(target);
      for (std::size_t i = 0; i < p.size(); ++i) g[i] -= go * 2.0 * (p[i] - t[i]) / n;
    }
  });
  return out;
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](Real v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](Real, Real y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](Real v) { return v > 0.0 ? v : 0.0; }, [](Real x, Real) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = make_output({M, N}, {&a, &b});
  detail::gemm_nn(M, N, K, a.data().data(), b.data().data(), out.data().data());
  attach(out, {a, b}, [a, b, M, K, N](const Tensor& o) {
    const Real* go = o.grad().data();
    if (a.requires_grad()) detail::gemm_nt(M, K, N, go, b.data().data(), G(a).data());
    if (b.requires_grad()) detail::gemm_tn(K, N, M, a.data().data(), go, G(b).data());
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t R = a.dim(0), C = a.dim(1);
  Tensor out = make_output({C, R}, {&a});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) y[j * R + i] = x[i * C + j];
  attach(out, {a}, [a, R, C](const Tensor& o) {
    auto go = o.grad();
    auto g = G(a);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) g[i * C + j] += go[j * R + i];
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  Tensor out = make_output({B, M, N}, {&a, &b});
  for (std::size_t i = 0; i < B; ++i) {
    detail::gemm_nn(M, N, K, a.data().data() + i * M * K, b.data().data() + i * K * N,
                    out.data().data() + i * M * N);
  }
  attach(out, {a, b}, [a, b, B, M, K, N](const Tensor& o) {
    const Real* go = o.grad().data();
    for (std::size_t i = 0; i < B; ++i) {
      if (a.requires_grad())
        detail::gemm_nt(M, K, N, go + i * M * N, b.data().data() + i * K * N, G(a).data() + i * M * K);
      if (b.requires_grad())
        detail::gemm_tn(K, N, M, a.data().data() + i * M * K, go + i * M * N, G(b).data() + i * K * N);
    }
  });
  return out;
}

Tensor transpose12(const Tensor& a) {
  require_rank(a, 3, "transpose12");
  const std::size_t B = a.dim(0), R = a.dim(1), C = a.dim(2);
  Tensor out = make_output({B, C, R}, {&a});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) y[(n * C + j) * R + i] = x[(n * R + i) * C + j];
  attach(out, {a}, [a, B, R, C](const Tensor& o) {
    auto go = o.grad();
    auto g = G(a);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) g[(n * R + i) * C + j] += go[(n * C + j) * R + i];
  });
  return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_output(shape, {&a});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  attach(out, {a}, [a](const Tensor& o) {
    auto go = o.grad();
    auto g = G(a);
    for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
  });
  return out;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  bool rg = false;
  for (const auto& p : parts) {
    Shape l = p.shape();
    widths.push_back(l.back());
    total += l.back();
    l.pop_back();
    if (l != lead) {
      throw ShapeError("concat_last: leading extents differ, " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rg = rg || p.requires_grad();
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor out = Tensor::zeros(shape, rg && grad_enabled());
  const std::size_t outer = shape_numel(shape) / total;
  auto y = out.data();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto x = parts[k].data();
    for (std::size_t r = 0; r < outer; ++r)
      std::copy_n(x.data() + r * widths[k], widths[k], y.data() + r * total + offset);
    offset += widths[k];
  }
  attach(out, parts, [parts, widths, outer, total](const Tensor& o) {
    auto go = o.grad();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts[k].requires_grad()) {
        auto g = G(parts[k]);
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += go[r * total + offset + j];
      }
      offset += widths[k];
    }
  });
  return out;
}

Tensor slice_last(const Tensor& a, std::size_t start, std::size_t length) {
  const std::size_t D = a.shape().back();
  if (length == 0 || start + length > D) {
    throw ShapeError("slice_last: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape.back() = length;
  Tensor out = make_output(shape, {&a});
  const std::size_t outer = a.numel() / D;
  auto x = a.data();
  auto y = out.data();
  for (std::size_t r = 0; r < outer; ++r) std::copy_n(x.data() + r * D + start, length, y.data() + r * length);
  attach(out, {a}, [a, start, length, outer, D](const Tensor& o) {
    auto go = o.grad();
    auto g = G(a);
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t j = 0; j < length; ++j) g[r * D + start + j] += go[r * length + j];
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const std::size_t D = x.shape().back();
  if (b.rank() != 1 || b.dim(0) != D) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
  }
  Tensor out = make_output(x.shape(), {&x, &b});
  const std::size_t outer = x.numel() / D;
  auto xs = x.data(), bs = b.data();
  auto y = out.data();
  for (std::size_t r = 0; r < outer; ++r)
    for (std::size_t j = 0; j < D; ++j) y[r * D + j] = xs[r * D + j] + bs[j];
  attach(out, {x, b}, [x, b, outer, D](const Tensor& o) {
    auto go = o.grad();
    if (x.requires_grad()) {
      auto g = G(x);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
    if (b.requires_grad()) {
      auto g = G(b);
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t j = 0; j < D; ++j) g[j] += go[r * D + j];
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const Window g{C, H, W, K, stride, padding, window_extent(H, K, stride, padding, "conv2d"),
                 window_extent(W, K, stride, padding, "conv2d")};
  const std::size_t P = g.out_h * g.out_w, CKK = C * K * K;
  Tensor out = make_output({N, O, g.out_h, g.out_w}, {&x, &w});
  std::vector<Real> col(CKK * P);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.data().data() + n * C * H * W, g, col.data());
    detail::gemm_nn(O, P, CKK, w.data().data(), col.data(), out.data().data() + n * O * P);
  }
  attach(out, {x, w}, [x, w, g, N, O, P, CKK](const Tensor& o) {
    const Real* go = o.grad().data();
    const std::size_t in_size = g.channels * g.height * g.width;
    std::vector<Real> col(CKK * P);
    for (std::size_t n = 0; n < N; ++n) {
      if (w.requires_grad()) {
        im2col(x.data().data() + n * in_size, g, col.data());
        detail::gemm_nt(O, CKK, P, go + n * O * P, col.data(), G(w).data());
      }
      if (x.requires_grad()) {
        std::fill(col.begin(), col.end(), 0.0);
        detail::gemm_tn(CKK, P, O, w.data().data(), go + n * O * P, col.data());
        col2im(col.data(), g, G(x).data() + n * in_size);
      }
    }
  });
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv_transpose2d");
  require_rank(w, 4, "conv_transpose2d");
  if (w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv_transpose2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (stride == 0) throw ConfigError("conv_transpose2d: stride must be positive");
  const std::size_t N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(1), K = w.dim(2);
  const long oh = static_cast<long>((H - 1) * stride + K) - 2 * static_cast<long>(padding);
  const long ow = static_cast<long>((W - 1) * stride + K) - 2 * static_cast<long>(padding);
  if (oh <= 0 || ow <= 0) throw ConfigError("conv_transpose2d: non-positive output extent");
  // The output plays the role of a conv2d input whose windows land on x's grid.
  const Window g{O, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), K, stride, padding, H, W};
  const std::size_t P = H * W, OKK = O * K * K;
  Tensor out = make_output({N, O, g.height, g.width}, {&x, &w});
  std::vector<Real> col(OKK * P);
  const std::size_t out_size = O * g.height * g.width;
  for (std::size_t n = 0; n < N; ++n) {
    std::fill(col.begin(), col.end(), 0.0);
    detail::gemm_tn(OKK, P, I, w.data().data(), x.data().data() + n * I * P, col.data());
    col2im(col.data(), g, out.data().data() + n * out_size);
  }
  attach(out, {x, w}, [x, w, g, N, I, P, OKK, out_size](const Tensor& o) {
    const Real* go = o.grad().data();
    std::vector<Real> col(OKK * P);
    for (std::size_t n = 0; n < N; ++n) {
      im2col(go + n * out_size, g, col.data());
      if (x.requires_grad()) detail::gemm_nn(I, P, OKK, w.data().data(), col.data(), G(x).data() + n * I * P);
      if (w.requires_grad()) detail::gemm_nt(I, OKK, P, x.data().data() + n * I * P, col.data(), G(w).data());
    }
  });
  return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                    bool training) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.numel() != C ||
      state.running_var.numel() != C) {
    throw ShapeError("batch_norm2d: affine/statistics extent does not match channels of " +
                     shape_str(x.shape()));
  }
  const Real M = static_cast<Real>(N * HW);
  std::vector<Real> mu(C, 0.0), inv_std(C, 0.0);
  auto xs = x.data();
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      Real s = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) s += xs[(n * C + c) * HW + i];
      mu[c] = s / M;
      Real v = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const Real d = xs[(n * C + c) * HW + i] - mu[c];
          v += d * d;
        }
      v /= M;
      inv_std[c] = 1.0 / std::sqrt(v + state.eps);
      auto rm = state.running_mean.data();
      auto rv = state.running_var.data();
      rm[c] = state.momentum * rm[c] + (1.0 - state.momentum) * mu[c];
      rv[c] = state.momentum * rv[c] + (1.0 - state.momentum) * v;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + state.eps);
    }
  }
  Tensor out = make_output(x.shape(), {&x, &gamma, &beta});
  std::vector<Real> xhat(x.numel());
  auto y = out.data();
  auto gs = gamma.data(), bs = beta.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t k = (n * C + c) * HW + i;
        xhat[k] = (xs[k] - mu[c]) * inv_std[c];
        y[k] = gs[c] * xhat[k] + bs[c];
      }
  attach(out, {x, gamma, beta},
         [x, gamma, beta, xhat = std::move(xhat), inv_std, training, N, C, HW, M](const Tensor& o) {
           auto go = o.grad();
           std::vector<Real> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
           for (std::size_t n = 0; n < N; ++n)
             for (std::size_t c = 0; c < C; ++c)
               for (std::size_t i = 0; i < HW; ++i) {
                 const std::size_t k = (n * C + c) * HW + i;
                 sum_dy[c] += go[k];
                 sum_dy_xhat[c] += go[k] * xhat[k];
               }
           if (gamma.requires_grad()) {
             auto g = G(gamma);
             for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy_xhat[c];
           }
           if (beta.requires_grad()) {
             auto g = G(beta);
             for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy[c];
           }
           if (!x.requires_grad()) return;
           auto gx = G(x);
           auto gs = gamma.data();
           for (std::size_t n = 0; n < N; ++n)
             for (std::size_t c = 0; c < C; ++c) {
               const Real a = gs[c] * inv_std[c];
               for (std::size_t i = 0; i < HW; ++i) {
                 const std::size_t k = (n * C + c) * HW + i;
                 if (training) {
                   gx[k] += a * (go[k] - sum_dy[c] / M - xhat[k] * sum_dy_xhat[c] / M);
                 } else {
                   gx[k] += a * go[k];
                 }
               }
             }
         });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D) {
    throw ShapeError("layer_norm: affine extent does not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t R = x.numel() / D;
  auto xs = x.data();
  std::vector<Real> xhat(x.numel()), inv_std(R);
  for (std::size_t r = 0; r < R; ++r) {
    Real m = 0.0;
    for (std::size_t j = 0; j < D; ++j) m += xs[r * D + j];
    m /= static_cast<Real>(D);
    Real v = 0.0;
    for (std::size_t j = 0; j < D; ++j) v += (xs[r * D + j] - m) * (xs[r * D + j] - m);
    v /= static_cast<Real>(D);
    inv_std[r] = 1.0 / std::sqrt(v + eps);
    for (std::size_t j = 0; j < D; ++j) xhat[r * D + j] = (xs[r * D + j] - m) * inv_std[r];
  }
  Tensor out = make_output(x.shape(), {&x, &gamma, &beta});
  auto y = out.data();
  auto gs = gamma.data(), bs = beta.data();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < D; ++j) y[r * D + j] = gs[j] * xhat[r * D + j] + bs[j];
  attach(out, {x, gamma, beta}, [x, gamma, beta, xhat = std::move(xhat), inv_std, R, D](const Tensor& o) {
    auto go = o.grad();
    auto gs = gamma.data();
    if (gamma.requires_grad()) {
      auto g = G(gamma);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < D; ++j) g[j] += go[r * D + j] * xhat[r * D + j];
    }
    if (beta.requires_grad()) {
      auto g = G(beta);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < D; ++j) g[j] += go[r * D + j];
    }
    if (!x.requires_grad()) return;
    auto gx = G(x);
    const Real Dn = static_cast<Real>(D);
    for (std::size_t r = 0; r < R; ++r) {
      Real s1 = 0.0, s2 = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        const Real dxh = go[r * D + j] * gs[j];
        s1 += dxh;
        s2 += dxh * xhat[r * D + j];
      }
      for (std::size_t j = 0; j < D; ++j) {
        const Real dxh = go[r * D + j] * gs[j];
        gx[r * D + j] += inv_std[r] * (dxh - s1 / Dn - xhat[r * D + j] * s2 / Dn);
      }
    }
  });
  return out;
}

Tensor max_pool2d(const Tensor& x, std::size_t k) {
  require_rank(x, 4, "max_pool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k == 0 || H % k || W % k) {
    throw ShapeError("max_pool2d: extent of " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  }
  const std::size_t Ho = H / k, Wo = W / k;
  Tensor out = make_output({N, C, Ho, Wo}, {&x});
  std::vector<std::size_t> arg(out.numel());
  auto xs = x.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        std::size_t best = (nc * H + oh * k) * W + ow * k;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t idx = (nc * H + oh * k + a) * W + ow * k + b;
            if (xs[idx] > xs[best]) best = idx;
          }
        const std::size_t o = (nc * Ho + oh) * Wo + ow;
        y[o] = xs[best];
        arg[o] = best;
      }
  attach(out, {x}, [x, arg = std::move(arg)](const Tensor& o) {
    auto go = o.grad();
    auto g = G(x);
    for (std::size_t i = 0; i < go.size(); ++i) g[arg[i]] += go[i];
  });
  return out;
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  require_rank(x, 4, "avg_pool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k == 0 || H % k || W % k) {
    throw ShapeError("avg_pool2d: extent of " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  }
  if (k == 1) return reshape(x, x.shape());
  const std::size_t Ho = H / k, Wo = W / k;
  const Real inv = 1.0 / static_cast<Real>(k * k);
  Tensor out = make_output({N, C, Ho, Wo}, {&x});
  auto xs = x.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) y[(nc * Ho + h / k) * Wo + w / k] += xs[(nc * H + h) * W + w] * inv;
  attach(out, {x}, [x, N, C, H, W, Ho, Wo, k, inv](const Tensor& o) {
    auto go = o.grad();
    auto g = G(x);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) g[(nc * H + h) * W + w] += go[(nc * Ho + h / k) * Wo + w / k] * inv;
  });
  return out;
}

Tensor adaptive_avg_pool(const Tensor& x) {
  require_rank(x, 4, "adaptive_avg_pool");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = make_output({N, C}, {&x});
  auto xs = x.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    Real s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += xs[nc * HW + i];
    y[nc] = s / static_cast<Real>(HW);
  }
  attach(out, {x}, [x, N, C, HW](const Tensor& o) {
    auto go = o.grad();
    auto g = G(x);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const Real v = go[nc] / static_cast<Real>(HW);
      for (std::size_t i = 0; i < HW; ++i) g[nc * HW + i] += v;
    }
  });
  return out;
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw ConfigError("upsample_nearest: factor must be positive");
  if (factor == 1) return reshape(x, x.shape());
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H * factor, Wo = W * factor;
  Tensor out = make_output({N, C, Ho, Wo}, {&x});
  auto xs = x.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t h = 0; h < Ho; ++h)
      for (std::size_t w = 0; w < Wo; ++w) y[(nc * Ho + h) * Wo + w] = xs[(nc * H + h / factor) * W + w / factor];
  attach(out, {x}, [x, N, C, H, W, Ho, Wo, factor](const Tensor& o) {
    auto go = o.grad();
    auto g = G(x);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t h = 0; h < Ho; ++h)
        for (std::size_t w = 0; w < Wo; ++w) g[(nc * H + h / factor) * W + w / factor] += go[(nc * Ho + h) * Wo + w];
  });
  return out;
}

Tensor dropout(const Tensor& x, Real rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const Real s = 1.0 / (1.0 - rate);
  std::vector<Real> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? s : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

Tensor channel_scale(const Tensor& x, const Tensor& g) {
  require_rank(x, 4, "channel_scale");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (g.rank() != 2 || g.dim(0) != N || g.dim(1) != C) {
    throw ShapeError("channel_scale: gate " + shape_str(g.shape()) + " does not match " + shape_str(x.shape()));
  }
  Tensor out = make_output(x.shape(), {&x, &g});
  auto xs = x.data(), gs = g.data();
  auto y = out.data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t i = 0; i < HW; ++i) y[nc * HW + i] = xs[nc * HW + i] * gs[nc];
  attach(out, {x, g}, [x, g, N, C, HW](const Tensor& o) {
    auto go = o.grad();
    auto xs = x.data(), gs = g.data();
    if (x.requires_grad()) {
      auto gx = G(x);
      for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += go[nc * HW + i] * gs[nc];
    }
    if (g.requires_grad()) {
      auto gg = G(g);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        Real s = 0.0;
        for (std::size_t i = 0; i < HW; ++i) s += go[nc * HW + i] * xs[nc * HW + i];
        gg[nc] += s;
      }
    }
  });
  return out;
}

Tensor nchw_to_tokens(const Tensor& x) {
  require_rank(x, 4, "nchw_to_tokens");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  return transpose12(reshape(x, {N, C, S}));
}

Tensor tokens_to_nchw(const Tensor& tokens, std::size_t height, std::size_t width) {
  require_rank(tokens, 3, "tokens_to_nchw");
  if (tokens.dim(1) != height * width) {
    throw ShapeError("tokens_to_nchw: " + std::to_string(tokens.dim(1)) + " tokens cannot fill a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  const std::size_t N = tokens.dim(0), C = tokens.dim(2);
  return reshape(transpose12(tokens), {N, C, height, width});
}

}  // namespace dsat
