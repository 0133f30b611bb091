#include "dclstm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace dclstm {

namespace {

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw std::runtime_error(std::string(op) + ": non-finite value in result");
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

// b may broadcast against a when it is scalar or its shape is a trailing
// suffix of a's shape. Row-major layout makes the flat mapping i % b.size().
bool broadcastable(const Shape& a, const Shape& b) {
  if (shape_product(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward_fn = std::move(bw);
  return n;
}

NodePtr elementwise(const char* name, const NodePtr& a, const NodePtr& b,
                    double (*fwd)(double, double), double (*dfa)(double, double),
                    double (*dfb)(double, double)) {
  if (!broadcastable(a->value.shape(), b->value.shape())) shape_error(name, a->value, b->value);
  const std::size_t n = a->value.size();
  const std::size_t bn = b->value.size();
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a->value[i], b->value[i % bn]);
  return make_node(std::move(out), {a, b}, [=](Node& self) {
    const std::size_t nn = self.value.size();
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (std::size_t i = 0; i < nn; ++i) ga[i] += self.grad[i] * dfa(a->value[i], b->value[i % bn]);
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (std::size_t i = 0; i < nn; ++i) gb[i % bn] += self.grad[i] * dfb(a->value[i], b->value[i % bn]);
    }
  });
}

NodePtr unary(const NodePtr& a, double (*fwd)(double), double (*dfd)(double, double)) {
  // dfd receives (input, output)
  const std::size_t n = a->value.size();
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a->value[i]);
  return make_node(std::move(out), {a}, [=](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      ga[i] += self.grad[i] * dfd(a->value[i], self.value[i]);
  });
}

// Decompose an axis-indexed layout into [outer, extent, inner] blocks.
struct AxisBlocks {
  std::size_t outer = 1, extent = 1, inner = 1;
};
AxisBlocks axis_blocks(const Shape& shape, std::size_t axis) {
  AxisBlocks b;
  for (std::size_t i = 0; i < axis; ++i) b.outer *= shape[i];
  b.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) b.inner *= shape[i];
  return b;
}

std::size_t pad_before(std::size_t k) { return (k - 1) / 2; }

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

NodePtr constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

NodePtr leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  return elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  return elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  return elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

NodePtr scale(const NodePtr& a, double k) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * k;
  return make_node(std::move(out), {a}, [a, k](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += self.grad[i] * k;
  });
}

NodePtr add_const(const NodePtr& a, double k) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + k;
  return make_node(std::move(out), {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += self.grad[i];
  });
}

NodePtr matmul(const NodePtr& x, const NodePtr& w) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) shape_error("matmul", x->value, w->value);
  const std::size_t k = ws[0], nc = ws[1];
  const std::size_t m = x->value.size() / k;
  Shape out_shape(xs.begin(), xs.end() - 1);
  out_shape.push_back(nc);
  Tensor out(out_shape);
  const double* xd = x->value.data();
  const double* wd = w->value.data();
  double* od = out.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = xd + r * k;
    double* orow = od + r * nc;
    for (std::size_t j = 0; j < k; ++j) {
      const double xv = xr[j];
      if (xv == 0.0) continue;
      const double* wrow = wd + j * nc;
      for (std::size_t c = 0; c < nc; ++c) orow[c] += xv * wrow[c];
    }
  }
  return make_node(std::move(out), {x, w}, [x, w, m, k, nc](Node& self) {
    const double* g = self.grad.data();
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      const double* wd = w->value.data();
      for (std::size_t r = 0; r < m; ++r) {
        const double* grow = g + r * nc;
        double* gxr = gx.data() + r * k;
        for (std::size_t j = 0; j < k; ++j) {
          const double* wrow = wd + j * nc;
          double acc = 0.0;
          for (std::size_t c = 0; c < nc; ++c) acc += grow[c] * wrow[c];
          gxr[j] += acc;
        }
      }
    }
    if (w->requires_grad) {
      Tensor& gw = w->ensure_grad();
      const double* xd = x->value.data();
      for (std::size_t r = 0; r < m; ++r) {
        const double* grow = g + r * nc;
        const double* xr = xd + r * k;
        for (std::size_t j = 0; j < k; ++j) {
          const double xv = xr[j];
          if (xv == 0.0) continue;
          double* gwr = gw.data() + j * nc;
          for (std::size_t c = 0; c < nc; ++c) gwr[c] += xv * grow[c];
        }
      }
    }
  });
}

NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  NodePtr y = matmul(x, w);
  return b ? add(y, b) : y;
}

NodePtr sigmoid(const NodePtr& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) {
          const double z = std::exp(-x);
          return 1.0 / (1.0 + z);
        }
        const double z = std::exp(x);
        return z / (1.0 + z);
      },
      [](double, double y) { return y * (1.0 - y); });
}

NodePtr tanh_op(const NodePtr& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

NodePtr relu(const NodePtr& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

NodePtr square(const NodePtr& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

NodePtr abs_op(const NodePtr& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

NodePtr reshape(const NodePtr& a, Shape shape) {
  if (shape_product(shape) != a->value.size()) {
    throw std::invalid_argument("reshape: " + shape_str(a->value.shape()) + " to incompatible " +
                                shape_str(shape));
  }
  Tensor out(std::move(shape), a->value.vec());
  return make_node(std::move(out), {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += self.grad[i];
  });
}

NodePtr transpose(const NodePtr& a, std::size_t axis1, std::size_t axis2) {
  const Shape& s = a->value.shape();
  if (axis1 >= s.size() || axis2 >= s.size()) {
    throw std::invalid_argument("transpose: axis out of range for " + shape_str(s));
  }
  Shape os = s;
  std::swap(os[axis1], os[axis2]);
  const std::size_t rank = s.size();
  std::vector<std::size_t> in_strides(rank, 1), out_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  for (std::size_t i = rank; i-- > 1;) out_strides[i - 1] = out_strides[i] * os[i];
  // index map: out flat -> in flat
  const std::size_t n = a->value.size();
  auto map_index = [=, &osv = os](std::size_t of) {
    std::size_t in = 0;
    for (std::size_t ax = 0; ax < rank; ++ax) {
      const std::size_t idx = (of / out_strides[ax]) % osv[ax];
      std::size_t in_ax = ax;
      if (ax == axis1) in_ax = axis2;
      else if (ax == axis2) in_ax = axis1;
      in += idx * in_strides[in_ax];
    }
    return in;
  };
  std::vector<std::size_t> idx_map(n);
  for (std::size_t i = 0; i < n; ++i) idx_map[i] = map_index(i);
  Tensor out(os);
  for (std::size_t i = 0; i < n; ++i) out[i] = a->value[idx_map[i]];
  return make_node(std::move(out), {a}, [a, idx_map = std::move(idx_map)](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) ga[idx_map[i]] += self.grad[i];
  });
}

NodePtr concat(const std::vector<NodePtr>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0]->value.shape();
  if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p->value.shape();
    if (s.size() != s0.size()) shape_error("concat", parts[0]->value, p->value);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) shape_error("concat", parts[0]->value, p->value);
    }
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  const AxisBlocks ob = axis_blocks(os, axis);
  Tensor out(os);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets, extents;
  for (const auto& p : parts) {
    const std::size_t e = p->value.shape()[axis];
    offsets.push_back(offset);
    extents.push_back(e);
    for (std::size_t o = 0; o < ob.outer; ++o) {
      const double* src = p->value.data() + o * e * ob.inner;
      double* dst = out.data() + (o * ob.extent + offset) * ob.inner;
      std::copy(src, src + e * ob.inner, dst);
    }
    offset += e;
  }
  std::vector<NodePtr> parents = parts;
  return make_node(std::move(out), std::move(parents),
                   [parts, ob, offsets, extents](Node& self) {
                     for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                       if (!parts[pi]->requires_grad) continue;
                       Tensor& gp = parts[pi]->ensure_grad();
                       const std::size_t e = extents[pi];
                       for (std::size_t o = 0; o < ob.outer; ++o) {
                         const double* src = self.grad.data() + (o * ob.extent + offsets[pi]) * ob.inner;
                         double* dst = gp.data() + o * e * ob.inner;
                         for (std::size_t i = 0; i < e * ob.inner; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

NodePtr slice(const NodePtr& a, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = a->value.shape();
  if (axis >= s.size() || start + len > s[axis] || len == 0) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") invalid for axis " +
                                std::to_string(axis) + " of " + shape_str(s));
  }
  const AxisBlocks ab = axis_blocks(s, axis);
  Shape os = s;
  os[axis] = len;
  Tensor out(os);
  for (std::size_t o = 0; o < ab.outer; ++o) {
    const double* src = a->value.data() + (o * ab.extent + start) * ab.inner;
    std::copy(src, src + len * ab.inner, out.data() + o * len * ab.inner);
  }
  return make_node(std::move(out), {a}, [a, ab, start, len](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t o = 0; o < ab.outer; ++o) {
      const double* src = self.grad.data() + o * len * ab.inner;
      double* dst = ga.data() + (o * ab.extent + start) * ab.inner;
      for (std::size_t i = 0; i < len * ab.inner; ++i) dst[i] += src[i];
    }
  });
}

NodePtr sum_all(const NodePtr& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_node(Tensor::scalar(acc), {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0];
  });
}

NodePtr mean_all(const NodePtr& a) {
  const double inv = 1.0 / static_cast<double>(a->value.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_node(Tensor::scalar(acc * inv), {a}, [a, inv](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0] * inv;
  });
}

NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[3] != ws[2]) shape_error("conv2d", x->value, w->value);
  const std::size_t B = xs[0], H = xs[1], W = xs[2], Ci = xs[3];
  const std::size_t kh = ws[0], kw = ws[1], Co = ws[3];
  if (b && b->value.size() != Co) shape_error("conv2d bias", w->value, b->value);
  const std::size_t ph = pad_before(kh), pw = pad_before(kw);
  Tensor out(Shape{B, H, W, Co});
  const double* xd = x->value.data();
  const double* wd = w->value.data();
  double* od = out.data();
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double* orow = od + ((bb * H + i) * W + j) * Co;
        for (std::size_t u = 0; u < kh; ++u) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t v = 0; v < kw; ++v) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
            const double* xrow = xd + ((bb * H + ii) * W + jj) * Ci;
            const double* wrow = wd + (u * kw + v) * Ci * Co;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const double xv = xrow[ci];
              if (xv == 0.0) continue;
              const double* wc = wrow + ci * Co;
              for (std::size_t co = 0; co < Co; ++co) orow[co] += xv * wc[co];
            }
          }
        }
        if (b)
          for (std::size_t co = 0; co < Co; ++co) orow[co] += b->value[co];
      }
  std::vector<NodePtr> parents{x, w};
  if (b) parents.push_back(b);
  return make_node(std::move(out), std::move(parents), [=](Node& self) {
    const double* g = self.grad.data();
    Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
    Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
    Tensor* gb = (b && b->requires_grad) ? &b->ensure_grad() : nullptr;
    const double* xd = x->value.data();
    const double* wd = w->value.data();
    for (std::size_t bb = 0; bb < B; ++bb)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double* grow = g + ((bb * H + i) * W + j) * Co;
          if (gb)
            for (std::size_t co = 0; co < Co; ++co) (*gb)[co] += grow[co];
          for (std::size_t u = 0; u < kh; ++u) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xoff = ((bb * H + ii) * W + jj) * Ci;
              const std::size_t woff = (u * kw + v) * Ci * Co;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                const double* wc = wd + woff + ci * Co;
                double acc = 0.0;
                for (std::size_t co = 0; co < Co; ++co) acc += grow[co] * wc[co];
                if (gx) (*gx)[xoff + ci] += acc;
                if (gw) {
                  const double xv = xd[xoff + ci];
                  if (xv != 0.0) {
                    double* gwc = gw->data() + woff + ci * Co;
                    for (std::size_t co = 0; co < Co; ++co) gwc[co] += xv * grow[co];
                  }
                }
              }
            }
          }
        }
  });
}

NodePtr depthwise_conv2d(const NodePtr& x, const NodePtr& w) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 3 || xs[3] != ws[2]) shape_error("depthwise_conv2d", x->value, w->value);
  const std::size_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const std::size_t kh = ws[0], kw = ws[1];
  const std::size_t ph = pad_before(kh), pw = pad_before(kw);
  Tensor out(Shape{B, H, W, C});
  const double* xd = x->value.data();
  const double* wd = w->value.data();
  double* od = out.data();
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double* orow = od + ((bb * H + i) * W + j) * C;
        for (std::size_t u = 0; u < kh; ++u) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t v = 0; v < kw; ++v) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
            const double* xrow = xd + ((bb * H + ii) * W + jj) * C;
            const double* wrow = wd + (u * kw + v) * C;
            for (std::size_t c = 0; c < C; ++c) orow[c] += xrow[c] * wrow[c];
          }
        }
      }
  return make_node(std::move(out), {x, w}, [=](Node& self) {
    const double* g = self.grad.data();
    Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
    Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
    const double* xd = x->value.data();
    const double* wd = w->value.data();
    for (std::size_t bb = 0; bb < B; ++bb)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double* grow = g + ((bb * H + i) * W + j) * C;
          for (std::size_t u = 0; u < kh; ++u) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(ph);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pw);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xoff = ((bb * H + ii) * W + jj) * C;
              const std::size_t woff = (u * kw + v) * C;
              for (std::size_t c = 0; c < C; ++c) {
                if (gx) (*gx)[xoff + c] += grow[c] * wd[woff + c];
                if (gw) (*gw)[woff + c] += grow[c] * xd[xoff + c];
              }
            }
          }
        }
  });
}

NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  if (xs.size() != 3 || ws.size() != 3 || xs[2] != ws[1]) shape_error("conv1d", x->value, w->value);
  // reuse conv2d with a unit height axis
  NodePtr x4 = reshape(x, Shape{xs[0], 1, xs[1], xs[2]});
  NodePtr w4 = reshape(w, Shape{1, ws[0], ws[1], ws[2]});
  NodePtr y = conv2d(x4, w4, b);
  return reshape(y, Shape{xs[0], xs[1], ws[2]});
}

NodePtr batch_norm_train(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, double eps,
                         Tensor* batch_mean_out, Tensor* batch_var_out) {
  const Shape& xs = x->value.shape();
  const std::size_t C = xs.back();
  if (gamma->value.size() != C || beta->value.size() != C) shape_error("batch_norm", x->value, gamma->value);
  const std::size_t n = x->value.size();
  const std::size_t m = n / C;
  Tensor mean(Shape{C}), var(Shape{C});
  for (std::size_t i = 0; i < n; ++i) mean[i % C] += x->value[i];
  for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(m);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x->value[i] - mean[i % C];
    var[i % C] += d * d;
  }
  for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<double>(m);
  if (batch_mean_out) *batch_mean_out = mean;
  if (batch_var_out) *batch_var_out = var;
  Tensor inv_std(Shape{C});
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  auto xhat = std::make_shared<Tensor>(Shape{xs});
  Tensor out(xs);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % C;
    (*xhat)[i] = (x->value[i] - mean[c]) * inv_std[c];
    out[i] = gamma->value[c] * (*xhat)[i] + beta->value[c];
  }
  return make_node(std::move(out), {x, gamma, beta}, [=](Node& self) {
    const double* g = self.grad.data();
    const double dm = static_cast<double>(m);
    if (gamma->requires_grad) {
      Tensor& gg = gamma->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gg[i % C] += g[i] * (*xhat)[i];
    }
    if (beta->requires_grad) {
      Tensor& gb = beta->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gb[i % C] += g[i];
    }
    if (x->requires_grad) {
      Tensor sum_g(Shape{C}), sum_gx(Shape{C});
      for (std::size_t i = 0; i < n; ++i) {
        sum_g[i % C] += g[i];
        sum_gx[i % C] += g[i] * (*xhat)[i];
      }
      Tensor& gx = x->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % C;
        gx[i] += gamma->value[c] * inv_std[c] *
                 (g[i] - sum_g[c] / dm - (*xhat)[i] * sum_gx[c] / dm);
      }
    }
  });
}

NodePtr batch_norm_infer(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                         const Tensor& moving_mean, const Tensor& moving_var, double eps) {
  const Shape& xs = x->value.shape();
  const std::size_t C = xs.back();
  if (gamma->value.size() != C || moving_mean.size() != C || moving_var.size() != C) {
    shape_error("batch_norm_infer", x->value, gamma->value);
  }
  Tensor inv_std(Shape{C});
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(moving_var[c] + eps);
  const std::size_t n = x->value.size();
  auto xhat = std::make_shared<Tensor>(Shape{xs});
  Tensor out(xs);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % C;
    (*xhat)[i] = (x->value[i] - moving_mean[c]) * inv_std[c];
    out[i] = gamma->value[c] * (*xhat)[i] + beta->value[c];
  }
  return make_node(std::move(out), {x, gamma, beta}, [=](Node& self) {
    const double* g = self.grad.data();
    if (gamma->requires_grad) {
      Tensor& gg = gamma->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gg[i % C] += g[i] * (*xhat)[i];
    }
    if (beta->requires_grad) {
      Tensor& gb = beta->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gb[i % C] += g[i];
    }
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * gamma->value[i % C] * inv_std[i % C];
    }
  });
}

void backward(const NodePtr& root) {
  if (!root->value.is_scalar()) {
    throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root->value.shape()));
  }
  // iterative post-order topological sort
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  std::vector<NodePtr> keep;  // keep shared ownership during traversal
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      NodePtr next = node->parents[child++];
      if (next->requires_grad && visited.insert(next.get()).second) {
        stack.emplace_back(std::move(next), 0);
      }
    } else {
      order.push_back(node.get());
      keep.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      for (const auto& p : n->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      n->backward_fn(*n);
    }
  }
}

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double epsilon,
                           double tolerance, int max_coords, std::uint64_t seed) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) {
    throw std::invalid_argument("grad_check: epsilon must be in (0, 1e-2]");
  }
  auto eval = [&](const std::vector<Tensor>& p) {
    std::vector<NodePtr> leaves;
    leaves.reserve(p.size());
    for (const auto& t : p) leaves.push_back(constant(t));
    NodePtr r = f(leaves);
    if (!r->value.is_scalar()) throw std::invalid_argument("grad_check: f must return a scalar");
    return r->value[0];
  };
  const double v0 = eval(params);
  if (eval(params) != v0) throw std::runtime_error("grad_check: f is non-deterministic");

  // analytic pass
  std::vector<NodePtr> leaves;
  for (const auto& t : params) leaves.push_back(leaf(t));
  NodePtr root = f(leaves);
  backward(root);

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  std::vector<Tensor> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::size_t n = params[pi].size();
    std::vector<std::size_t> coords;
    if (max_coords > 0 && static_cast<std::size_t>(max_coords) < n) {
      std::uniform_int_distribution<std::size_t> dist(0, n - 1);
      std::unordered_set<std::size_t> seen;
      while (seen.size() < static_cast<std::size_t>(max_coords)) seen.insert(dist(rng));
      coords.assign(seen.begin(), seen.end());
    } else {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    }
    double worst = 0.0;
    for (std::size_t i : coords) {
      const double orig = work[pi][i];
      work[pi][i] = orig + epsilon;
      const double fp = eval(work);
      work[pi][i] = orig - epsilon;
      const double fm = eval(work);
      work[pi][i] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double analytic = leaves[pi]->grad.size() ? leaves[pi]->grad[i] : 0.0;
      const double rel = std::fabs(analytic - numeric) /
                         std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
    report.per_param.push_back(worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace dclstm
