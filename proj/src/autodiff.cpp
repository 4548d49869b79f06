#include "pemr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <Eigen/Core>

#include "pemr/error.hpp"

namespace pemr::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Var make(Tensor value, std::vector<Var> inputs, const char* op, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  for (const auto& in : inputs) {
    needs = needs || in.requires_grad();
    n->inputs.push_back(in.ptr());
  }
  n->requires_grad = needs;
  if (needs) n->backward = std::move(bw);
  return Var(std::move(n));
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

// Accumulate g into input i if that input is differentiable.
template <typename F>
void feed(Node& self, std::size_t i, F&& fn) {
  Node& in = *self.inputs[i];
  if (in.requires_grad) fn(in.grad_ref());
}

// Split a shape around an axis: outer * n * inner.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename F>
Var unary(const Var& x, const char* op, F f, std::function<double(double, double)> dfdx) {
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make(std::move(out), {x}, op, [dfdx](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      const auto& xin = self.inputs[0]->value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(xin[i], self.value[i]);
    });
  });
}

}  // namespace

Tensor& Node::grad_ref() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "const";
  return Var(std::move(n));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->grad = Tensor(n->value.shape(), 0.0);
  return Var(std::move(n));
}

double Var::item() const {
  if (value().size() != 1) throw ShapeError("item(): tensor " + shape_string(shape()) + " is not a scalar");
  return value()[0];
}

void Var::zero_grad() { node_->grad = Tensor(node_->value.shape(), 0.0); }

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a, b}, "add", [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      feed(self, k, [&](Tensor& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a, b}, "sub", [](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    feed(self, 1, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a, b}, "mul", [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    });
    feed(self, 1, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    });
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make(std::move(out), {a}, "scale", [s](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return make(std::move(out), {a}, "add_scalar", [](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Var relu(const Var& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xin, double) { return xin > 0.0 ? 1.0 : 0.0; });
}

Var square(const Var& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double xin, double) { return 2.0 * xin; });
}

Var smooth_l1(const Var& x) {
  return unary(
      x, "smooth_l1",
      [](double v) {
        const double a = std::abs(v);
        return a < 1.0 ? 0.5 * v * v : a - 0.5;
      },
      [](double xin, double) {
        if (std::abs(xin) < 1.0) return xin;
        return xin > 0.0 ? 1.0 : -1.0;
      });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(m, n);
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.value().data(), m, k) * ConstMapMat(b.value().data(), k, n);
  return make(std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
    ConstMapMat dc(self.grad.data(), m, n);
    feed(self, 0, [&](Tensor& g) {
      MapMat(g.data(), m, k).noalias() += dc * ConstMapMat(self.inputs[1]->value.data(), k, n).transpose();
    });
    feed(self, 1, [&](Tensor& g) {
      MapMat(g.data(), k, n).noalias() += ConstMapMat(self.inputs[0]->value.data(), m, k).transpose() * dc;
    });
  });
}

Var transpose(const Var& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = Tensor::matrix(n, m);
  MapMat(out.data(), n, m) = ConstMapMat(x.value().data(), m, n).transpose();
  return make(std::move(out), {x}, "transpose", [m, n](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      MapMat(g.data(), m, n) += ConstMapMat(self.grad.data(), n, m).transpose();
    });
  });
}

Var add_row_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.value().size() != n) {
    throw ShapeError("add_row_bias: bias " + shape_string(bias.shape()) + " does not match columns of " +
                     shape_string(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bias.value()[c];
  return make(std::move(out), {x, bias}, "add_row_bias", [m, n](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    feed(self, 1, [&](Tensor& g) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    });
  });
}

Var softmax(const Var& x, std::size_t axis) {
  if (axis >= x.value().rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  }
  const auto sp = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, xv[base + j * sp.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const double e = std::exp(xv[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= z;
    }
  }
  return make(std::move(out), {x}, "softmax", [sp](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.n * sp.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) {
            const std::size_t i = base + j * sp.inner;
            dot += self.grad[i] * self.value[i];
          }
          for (std::size_t j = 0; j < sp.n; ++j) {
            const std::size_t i = base + j * sp.inner;
            g[i] += self.value[i] * (self.grad[i] - dot);
          }
        }
      }
    });
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return make(Tensor(Shape{}, acc), {x}, "sum", [](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      const double d = self.grad[0];
      for (double& v : g.values()) v += d;
    });
  });
}

Var mean(const Var& x) {
  if (x.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make(std::move(out), {x}, "reshape", [](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(s));
    out_shape[axis] += s[axis];
  }
  const auto sp = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t n = p.shape()[axis];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(p.value().data() + o * n * sp.inner, n * sp.inner,
                  out.data() + (o * sp.n + off) * sp.inner);
    }
    off += n;
  }
  return make(std::move(out), parts, "concat", [sp, offsets, axis](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      feed(self, k, [&](Tensor& g) {
        const std::size_t n = self.inputs[k]->value.shape()[axis];
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = self.grad.data() + (o * sp.n + offsets[k]) * sp.inner;
          double* dst = g.data() + o * n * sp.inner;
          for (std::size_t i = 0; i < n * sp.inner; ++i) dst[i] += src[i];
        }
      });
    }
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_string(s));
  }
  const auto sp = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t n = end - begin;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.value().data() + (o * sp.n + begin) * sp.inner, n * sp.inner, out.data() + o * n * sp.inner);
  }
  return make(std::move(out), {x}, "slice", [sp, begin, n](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = self.grad.data() + o * n * sp.inner;
        double* dst = g.data() + (o * sp.n + begin) * sp.inner;
        for (std::size_t i = 0; i < n * sp.inner; ++i) dst[i] += src[i];
      }
    });
  });
}

Var select_rows(const Var& x, std::span<const std::size_t> rows) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("select_rows: scalar input");
  const std::size_t width = x.value().size() / std::max<std::size_t>(s[0], 1);
  Shape out_shape = s;
  out_shape[0] = rows.size();
  Tensor out(out_shape);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= s[0]) {
      throw ShapeError("select_rows: row " + std::to_string(idx[r]) + " out of range for " + shape_string(s));
    }
    std::copy_n(x.value().data() + idx[r] * width, width, out.data() + r * width);
  }
  return make(std::move(out), {x}, "select_rows", [idx, width](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* src = self.grad.data() + r * width;
        double* dst = g.data() + idx[r] * width;
        for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
      }
    });
  });
}

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* dst = col + ((ci * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t x = 0; x < g.ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            dst[y * g.ow + x] = inside ? img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, const ConvGeom& g, double* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* src = col + ((ci * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += src[y * g.ow + x];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[1] != xs[1]) {
    throw ShapeError("conv2d: input " + shape_string(xs) + " has " + std::to_string(xs[1]) +
                     " channels, kernel " + shape_string(ws) + " expects " + std::to_string(ws[1]));
  }
  if (b.value().size() != ws[0]) throw ShapeError("conv2d: bias " + shape_string(b.shape()) + " vs kernel " + shape_string(ws));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3]) {
    throw ShapeError("conv2d: kernel " + shape_string(ws) + " larger than padded input " + shape_string(xs));
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, padding, 0, 0};
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  Tensor out(Shape{g.n, g.o, g.oh, g.ow});
  std::vector<double> col(g.col_rows() * g.col_cols());
  ConstMapMat wm(w.value().data(), g.o, g.col_rows());
  for (std::size_t i = 0; i < g.n; ++i) {
    im2col(x.value().data() + i * g.c * g.h * g.w, g, col.data());
    MapMat om(out.data() + i * g.o * g.col_cols(), g.o, g.col_cols());
    om.noalias() = wm * ConstMapMat(col.data(), g.col_rows(), g.col_cols());
    for (std::size_t oc = 0; oc < g.o; ++oc) om.row(static_cast<Eigen::Index>(oc)).array() += b.value()[oc];
  }
  return make(std::move(out), {x, w, b}, "conv2d", [g](Node& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    std::vector<double> col(g.col_rows() * g.col_cols());
    std::vector<double> dcol(g.col_rows() * g.col_cols());
    ConstMapMat wm(wv.data(), g.o, g.col_rows());
    Node& xin = *self.inputs[0];
    Node& win = *self.inputs[1];
    Node& bin = *self.inputs[2];
    for (std::size_t i = 0; i < g.n; ++i) {
      ConstMapMat dout(self.grad.data() + i * g.o * g.col_cols(), g.o, g.col_cols());
      if (win.requires_grad) {
        im2col(xv.data() + i * g.c * g.h * g.w, g, col.data());
        MapMat(win.grad_ref().data(), g.o, g.col_rows()).noalias() +=
            dout * ConstMapMat(col.data(), g.col_rows(), g.col_cols()).transpose();
      }
      if (bin.requires_grad) {
        auto& gb = bin.grad_ref();
        for (std::size_t oc = 0; oc < g.o; ++oc) gb[oc] += dout.row(static_cast<Eigen::Index>(oc)).sum();
      }
      if (xin.requires_grad) {
        MapMat(dcol.data(), g.col_rows(), g.col_cols()).noalias() = wm.transpose() * dout;
        col2im_add(dcol.data(), g, xin.grad_ref().data() + i * g.c * g.h * g.w);
      }
    }
  });
}

Var maxpool2d(const Var& x, std::size_t kh, std::size_t kw) {
  require_rank(x, 4, "maxpool2d");
  const Shape& s = x.shape();
  if (kh == 0 || kw == 0 || s[2] < kh || s[3] < kw) {
    throw ShapeError("maxpool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) + " does not fit " +
                     shape_string(s));
  }
  const std::size_t oh = s[2] / kh, ow = s[3] / kw, planes = s[0] * s[1];
  Tensor out(Shape{s[0], s[1], oh, ow});
  std::vector<std::size_t> arg(out.size());
  const auto& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t in_base = p * s[2] * s[3];
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = in_base + (y * kh) * s[3] + xx * kw;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t idx = in_base + (y * kh + i) * s[3] + xx * kw + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = xv[best];
        arg[o] = best;
      }
  }
  return make(std::move(out), {x}, "maxpool2d", [arg](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
    });
  });
}

Var global_max_pool(const Var& x) {
  require_rank(x, 4, "global_max_pool");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
  if (area == 0) throw ShapeError("global_max_pool: empty spatial extent");
  Tensor out(Shape{s[0], s[1]});
  std::vector<std::size_t> arg(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().data() + p * area;
    std::size_t best = 0;
    for (std::size_t i = 1; i < area; ++i)
      if (src[i] > src[best]) best = i;
    out[p] = src[best];
    arg[p] = p * area + best;
  }
  return make(std::move(out), {x}, "global_max_pool", [arg](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t p = 0; p < arg.size(); ++p) g[arg[p]] += self.grad[p];
    });
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
  }
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* src = x.value().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += src[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (src[c] - mu) * (src[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (src[c] - mu) * inv_std[r];
      out[r * n + c] = gamma.value()[c] * xhat[r * n + c] + beta.value()[c];
    }
  }
  return make(std::move(out), {x, gamma, beta}, "layer_norm", [xhat, inv_std, m, n](Node& self) {
    const auto& gam = self.inputs[1]->value;
    feed(self, 1, [&](Tensor& g) {
      for (std::size_t i = 0; i < m * n; ++i) g[i % n] += self.grad[i] * xhat[i];
    });
    feed(self, 2, [&](Tensor& g) {
      for (std::size_t i = 0; i < m * n; ++i) g[i % n] += self.grad[i];
    });
    feed(self, 0, [&](Tensor& g) {
      for (std::size_t r = 0; r < m; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double dxh = self.grad[r * n + c] * gam[c];
          s1 += dxh;
          s2 += dxh * xhat[r * n + c];
        }
        for (std::size_t c = 0; c < n; ++c) {
          const double dxh = self.grad[r * n + c] * gam[c];
          g[r * n + c] += inv_std[r] / static_cast<double>(n) *
                          (static_cast<double>(n) * dxh - s1 - xhat[r * n + c] * s2);
        }
      }
    });
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
               bool update_running) {
  require_rank(x, 4, "batch_norm");
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], area = s[2] * s[3], count = n * area;
  if (gamma.value().size() != c || beta.value().size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw ShapeError("batch_norm: per-channel parameters must have " + std::to_string(c) + " entries");
  }
  const auto& xv = x.value();
  std::vector<double> mu(c), inv_std(c);
  if (training) {
    if (count < 2) throw ShapeError("batch_norm: training mode needs more than one value per channel");
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < area; ++k) acc += xv[(i * c + ch) * area + k];
      mu[ch] = acc / static_cast<double>(count);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < area; ++k) {
          const double d = xv[(i * c + ch) * area + k] - mu[ch];
          var += d * d;
        }
      var /= static_cast<double>(count);
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      if (!update_running) continue;
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu[ch];
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  Tensor out(s);
  Tensor xhat(s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < area; ++k) {
        const std::size_t idx = (i * c + ch) * area + k;
        xhat[idx] = (xv[idx] - mu[ch]) * inv_std[ch];
        out[idx] = gamma.value()[ch] * xhat[idx] + beta.value()[ch];
      }
  return make(std::move(out), {x, gamma, beta}, "batch_norm",
              [xhat, inv_std, n, c, area, count, training](Node& self) {
                const auto& gam = self.inputs[1]->value;
                std::vector<double> s1(c, 0.0), s2(c, 0.0);
                for (std::size_t i = 0; i < n; ++i)
                  for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t k = 0; k < area; ++k) {
                      const std::size_t idx = (i * c + ch) * area + k;
                      s1[ch] += self.grad[idx];
                      s2[ch] += self.grad[idx] * xhat[idx];
                    }
                feed(self, 1, [&](Tensor& g) {
                  for (std::size_t ch = 0; ch < c; ++ch) g[ch] += s2[ch];
                });
                feed(self, 2, [&](Tensor& g) {
                  for (std::size_t ch = 0; ch < c; ++ch) g[ch] += s1[ch];
                });
                feed(self, 0, [&](Tensor& g) {
                  const double m = static_cast<double>(count);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t k = 0; k < area; ++k) {
                        const std::size_t idx = (i * c + ch) * area + k;
                        if (training) {
                          g[idx] += gam[ch] * inv_std[ch] / m *
                                    (m * self.grad[idx] - s1[ch] - xhat[idx] * s2[ch]);
                        } else {
                          g[idx] += gam[ch] * inv_std[ch] * self.grad[idx];
                        }
                      }
                });
              });
}

Var standardize_columns(const Var& x, double eps) {
  require_rank(x, 2, "standardize_columns");
  const std::size_t b = x.shape()[0], d = x.shape()[1];
  const auto& xv = x.value();
  Tensor out(x.shape());
  std::vector<double> inv_std(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < b; ++i) mu += xv[i * d + j];
    mu /= static_cast<double>(b);
    double var = 0.0;
    for (std::size_t i = 0; i < b; ++i) var += (xv[i * d + j] - mu) * (xv[i * d + j] - mu);
    var /= static_cast<double>(b);
    const double sd = std::sqrt(var);
    if (sd < eps) continue;  // column stays zero
    inv_std[j] = 1.0 / sd;
    for (std::size_t i = 0; i < b; ++i) out[i * d + j] = (xv[i * d + j] - mu) * inv_std[j];
  }
  return make(std::move(out), {x}, "standardize_columns", [inv_std, b, d](Node& self) {
    feed(self, 0, [&](Tensor& g) {
      const double m = static_cast<double>(b);
      for (std::size_t j = 0; j < d; ++j) {
        if (inv_std[j] == 0.0) continue;
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
          s1 += self.grad[i * d + j];
          s2 += self.grad[i * d + j] * self.value[i * d + j];
        }
        for (std::size_t i = 0; i < b; ++i) {
          g[i * d + j] += inv_std[j] / m * (m * self.grad[i * d + j] - s1 - self.value[i * d + j] * s2);
        }
      }
    });
  });
}

Var detach(const Var& x) { return Var::constant(x.value()); }

void backward(const Var& loss) {
  if (!loss) throw ShapeError("backward: null loss");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward) n->grad = Tensor();
  }
  loss.node()->grad_ref()[0] += 1.0;
  // Interior gradients are allocated on first contribution and released as
  // soon as they have been passed on. A node nobody fed has zero gradient.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.size() == 0) continue;
    n->backward(*n);
    n->grad = Tensor();
  }
}

}  // namespace pemr::ad
