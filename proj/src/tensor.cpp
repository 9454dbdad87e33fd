#include "aldmn/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace aldmn {

namespace {

thread_local bool g_grad_enabled = true;

int shape_product(const std::vector<int>& shape) {
  int n = 1;
  for (int e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const std::vector<int>& a,
                              const std::vector<int>& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

// outer * axis_extent * inner decomposition for slice-wise ops.
struct AxisSplit {
  int outer, extent, inner;
};

AxisSplit split_at(const std::vector<int>& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(shape));
  AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor make_op_output(std::vector<int> shape, bool track) {
  auto impl = std::make_shared<Tensor::Impl>();
  impl->value.assign(static_cast<size_t>(shape_product(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = track;
  if (track) impl->grad.assign(impl->value.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return make_op_output(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  Tensor t = make_op_output(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  Tensor t = make_op_output(std::move(shape), requires_grad);
  if (values.size() != t.values().size())
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(t.shape()));
  t.values() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Tensor t = make_op_output({}, requires_grad);
  t.values()[0] = v;
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
  Tensor t = make_op_output(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double>& Tensor::grad() {
  if (!requires_grad()) throw std::logic_error("grad() on a tensor without requires_grad");
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw std::logic_error("grad() on a tensor without requires_grad");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

double Tensor::at(int i, int j) const {
  return impl_->value[static_cast<size_t>(i) * static_cast<size_t>(impl_->shape[1]) +
                      static_cast<size_t>(j)];
}

Tape& Tape::active() {
  static thread_local Tape tape;
  return tape;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.rank() != 0)
    throw std::invalid_argument("backward: loss must be rank-0, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
  if (loss.requires_grad()) loss.impl()->grad[0] = 1.0;
  auto& entries = Tape::active().entries_;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) (*it)();
  Tape::active().clear();
}

namespace {

bool track_for(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// ---- elementwise with optional last-axis broadcast ---------------------

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b, const char* name) {
  const bool bcast = b.rank() == 1 && a.rank() >= 1 &&
                     a.shape().back() == b.extent(0) && a.shape() != b.shape();
  if (!bcast && a.shape() != b.shape()) shape_error(name, a.shape(), b.shape());

  const bool track = track_for({&a, &b});
  Tensor out = make_op_output(a.shape(), track);
  const size_t n = a.values().size();
  const size_t d = bcast ? static_cast<size_t>(b.size()) : 0;
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  switch (kind) {
    case EwKind::Add:
      for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[bcast ? i % d : i];
      break;
    case EwKind::Sub:
      for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[bcast ? i % d : i];
      break;
    case EwKind::Mul:
      for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[bcast ? i % d : i];
      break;
  }
  if (track) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::active().record([kind, ai, bi, oi, bcast, d, n]() {
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        double* ga = ai->grad.data();
        if (kind == EwKind::Mul) {
          const double* vb = bi->value.data();
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * vb[bcast ? i % d : i];
        } else {
          for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
      }
      if (bi->requires_grad) {
        double* gb = bi->grad.data();
        const double* va = ai->value.data();
        const double sign = (kind == EwKind::Sub) ? -1.0 : 1.0;
        if (kind == EwKind::Mul) {
          for (size_t i = 0; i < n; ++i) gb[bcast ? i % d : i] += g[i] * va[i];
        } else {
          for (size_t i = 0; i < n; ++i) gb[bcast ? i % d : i] += sign * g[i];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwKind::Add, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwKind::Sub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwKind::Mul, a, b, "mul"); }

Tensor scale(const Tensor& a, double k) {
  const bool track = track_for({&a});
  Tensor out = make_op_output(a.shape(), track);
  const size_t n = a.values().size();
  for (size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * k;
  if (track) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active().record([ai, oi, k, n]() {
      if (!ai->requires_grad) return;
      for (size_t i = 0; i < n; ++i) ai->grad[i] += k * oi->grad[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) shape_error("matmul", a.shape(), b.shape());
  const int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2) shape_error("matmul", a.shape(), b.shape());

  const bool track = track_for({&a, &b});
  Tensor out = make_op_output({m, n}, track);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = pb + static_cast<size_t>(kk) * n;
      double* orow = po + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  if (track) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::active().record([ai, bi, oi, m, k, n]() {
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        // grad_a = upstream * b^T
        double* ga = ai->grad.data();
        const double* vb = bi->value.data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* grow = g + static_cast<size_t>(i) * n;
            const double* brow = vb + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
      }
      if (bi->requires_grad) {
        // grad_b = a^T * upstream
        double* gb = bi->grad.data();
        const double* va = ai->value.data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const double aik = va[i * k + kk];
            if (aik == 0.0) continue;
            const double* grow = g + static_cast<size_t>(i) * n;
            double* brow = gb + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.extent(1) != w.extent(1))
    shape_error("linear", x.shape(), w.shape());
  const int batch = x.extent(0), din = x.extent(1), dout = w.extent(0);
  if (b.defined() && (b.rank() != 1 || b.extent(0) != dout))
    shape_error("linear bias", w.shape(), b.shape());

  const Tensor* bias = b.defined() ? &b : nullptr;
  const bool track = bias ? track_for({&x, &w, bias}) : track_for({&x, &w});
  Tensor out = make_op_output({batch, dout}, track);
  const double* px = x.values().data();
  const double* pw = w.values().data();
  double* po = out.values().data();
  for (int i = 0; i < batch; ++i) {
    const double* xrow = px + static_cast<size_t>(i) * din;
    double* orow = po + static_cast<size_t>(i) * dout;
    for (int o = 0; o < dout; ++o) {
      const double* wrow = pw + static_cast<size_t>(o) * din;
      double acc = bias ? bias->values()[static_cast<size_t>(o)] : 0.0;
      for (int kk = 0; kk < din; ++kk) acc += xrow[kk] * wrow[kk];
      orow[o] = acc;
    }
  }
  if (track) {
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    auto oi = out.impl();
    Tape::active().record([xi, wi, bi, oi, batch, din, dout]() {
      const double* g = oi->grad.data();
      if (xi->requires_grad) {
        double* gx = xi->grad.data();
        const double* vw = wi->value.data();
        for (int i = 0; i < batch; ++i) {
          const double* grow = g + static_cast<size_t>(i) * dout;
          double* gxrow = gx + static_cast<size_t>(i) * din;
          for (int o = 0; o < dout; ++o) {
            const double go = grow[o];
            if (go == 0.0) continue;
            const double* wrow = vw + static_cast<size_t>(o) * din;
            for (int kk = 0; kk < din; ++kk) gxrow[kk] += go * wrow[kk];
          }
        }
      }
      if (wi->requires_grad) {
        double* gw = wi->grad.data();
        const double* vx = xi->value.data();
        for (int i = 0; i < batch; ++i) {
          const double* grow = g + static_cast<size_t>(i) * dout;
          const double* xrow = vx + static_cast<size_t>(i) * din;
          for (int o = 0; o < dout; ++o) {
            const double go = grow[o];
            if (go == 0.0) continue;
            double* gwrow = gw + static_cast<size_t>(o) * din;
            for (int kk = 0; kk < din; ++kk) gwrow[kk] += go * xrow[kk];
          }
        }
      }
      if (bi && bi->requires_grad) {
        double* gb = bi->grad.data();
        for (int i = 0; i < batch; ++i)
          for (int o = 0; o < dout; ++o) gb[o] += g[static_cast<size_t>(i) * dout + o];
      }
    });
  }
  return out;
}

namespace {

enum class ActKind { Sigmoid, Tanh, Relu };

Tensor activation(ActKind kind, const Tensor& x) {
  const bool track = track_for({&x});
  Tensor out = make_op_output(x.shape(), track);
  const size_t n = x.values().size();
  const double* px = x.values().data();
  double* po = out.values().data();
  switch (kind) {
    case ActKind::Sigmoid:
      for (size_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
      break;
    case ActKind::Tanh:
      for (size_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
      break;
    case ActKind::Relu:
      for (size_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
      break;
  }
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    // Derivatives from saved outputs; relu'(0) = 0.
    Tape::active().record([kind, xi, oi, n]() {
      if (!xi->requires_grad) return;
      const double* y = oi->value.data();
      const double* g = oi->grad.data();
      double* gx = xi->grad.data();
      switch (kind) {
        case ActKind::Sigmoid:
          for (size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
          break;
        case ActKind::Tanh:
          for (size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
          break;
        case ActKind::Relu:
          for (size_t i = 0; i < n; ++i) gx[i] += y[i] > 0.0 ? g[i] : 0.0;
          break;
      }
    });
  }
  return out;
}

}  // namespace

Tensor sigmoid(const Tensor& x) { return activation(ActKind::Sigmoid, x); }
Tensor tanh_op(const Tensor& x) { return activation(ActKind::Tanh, x); }
Tensor relu(const Tensor& x) { return activation(ActKind::Relu, x); }

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  const bool track = track_for({&x});
  Tensor out = make_op_output(x.shape(), track);
  const double* px = x.values().data();
  double* po = out.values().data();
  for (int o = 0; o < s.outer; ++o) {
    for (int in = 0; in < s.inner; ++in) {
      const size_t base = static_cast<size_t>(o) * s.extent * s.inner + in;
      double mx = px[base];
      for (int e = 1; e < s.extent; ++e)
        mx = std::max(mx, px[base + static_cast<size_t>(e) * s.inner]);
      double z = 0.0;
      for (int e = 0; e < s.extent; ++e) {
        const size_t idx = base + static_cast<size_t>(e) * s.inner;
        po[idx] = std::exp(px[idx] - mx);
        z += po[idx];
      }
      for (int e = 0; e < s.extent; ++e) po[base + static_cast<size_t>(e) * s.inner] /= z;
    }
  }
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active().record([xi, oi, s]() {
      if (!xi->requires_grad) return;
      const double* y = oi->value.data();
      const double* g = oi->grad.data();
      double* gx = xi->grad.data();
      for (int o = 0; o < s.outer; ++o) {
        for (int in = 0; in < s.inner; ++in) {
          const size_t base = static_cast<size_t>(o) * s.extent * s.inner + in;
          double dot = 0.0;
          for (int e = 0; e < s.extent; ++e) {
            const size_t idx = base + static_cast<size_t>(e) * s.inner;
            dot += g[idx] * y[idx];
          }
          for (int e = 0; e < s.extent; ++e) {
            const size_t idx = base + static_cast<size_t>(e) * s.inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& mask) {
  if (x.rank() != 2)
    throw std::invalid_argument("masked_softmax: rank-2 expected, got " + shape_str(x.shape()));
  const int rows = x.extent(0), cols = x.extent(1);
  if (mask.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols))
    throw std::invalid_argument("masked_softmax: mask size " + std::to_string(mask.size()) +
                                " for shape " + shape_str(x.shape()));

  const bool track = track_for({&x});
  Tensor out = make_op_output(x.shape(), track);
  const double* px = x.values().data();
  double* po = out.values().data();
  for (int r = 0; r < rows; ++r) {
    const size_t base = static_cast<size_t>(r) * cols;
    double mx = 0.0;
    bool any = false;
    for (int c = 0; c < cols; ++c) {
      if (!mask[base + c]) continue;
      mx = any ? std::max(mx, px[base + c]) : px[base + c];
      any = true;
    }
    if (!any) throw DataError("masked_softmax: all facts masked in row " + std::to_string(r));
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      if (mask[base + c]) {
        po[base + c] = std::exp(px[base + c] - mx);
        z += po[base + c];
      }
    }
    for (int c = 0; c < cols; ++c)
      if (mask[base + c]) po[base + c] /= z;
  }
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active().record([xi, oi, mask, rows, cols]() {
      if (!xi->requires_grad) return;
      const double* y = oi->value.data();
      const double* g = oi->grad.data();
      double* gx = xi->grad.data();
      for (int r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
        for (int c = 0; c < cols; ++c) {
          if (!mask[base + c]) continue;
          gx[base + c] += y[base + c] * (g[base + c] - dot);
        }
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  const std::vector<int>& ref = parts[0].shape();
  std::vector<int> out_shape = ref;
  for (const Tensor& p : parts) {
    if (p.rank() != static_cast<int>(ref.size())) shape_error("concat", ref, p.shape());
    for (int ax = 0; ax < p.rank(); ++ax)
      if (ax != axis && p.shape()[static_cast<size_t>(ax)] != ref[static_cast<size_t>(ax)])
        shape_error("concat", ref, p.shape());
  }
  int total = 0;
  for (const Tensor& p : parts) total += p.extent(axis);
  out_shape[static_cast<size_t>(axis)] = total;

  bool track = false;
  if (g_grad_enabled)
    for (const Tensor& p : parts)
      if (p.requires_grad()) track = true;

  Tensor out = make_op_output(out_shape, track);
  const AxisSplit s = split_at(out_shape, axis);
  double* po = out.values().data();
  int offset = 0;
  for (const Tensor& p : parts) {
    const int ext = p.extent(axis);
    const double* pp = p.values().data();
    for (int o = 0; o < s.outer; ++o) {
      const double* src = pp + static_cast<size_t>(o) * ext * s.inner;
      double* dst = po + (static_cast<size_t>(o) * s.extent + offset) * s.inner;
      std::copy(src, src + static_cast<size_t>(ext) * s.inner, dst);
    }
    offset += ext;
  }
  if (track) {
    std::vector<std::shared_ptr<Tensor::Impl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    Tape::active().record([impls, oi, s, axis]() {
      const double* g = oi->grad.data();
      int offset = 0;
      for (auto& pi : impls) {
        const int ext = pi->shape[static_cast<size_t>(axis)];
        if (pi->requires_grad) {
          double* gp = pi->grad.data();
          for (int o = 0; o < s.outer; ++o) {
            const double* src = g + (static_cast<size_t>(o) * s.extent + offset) * s.inner;
            double* dst = gp + static_cast<size_t>(o) * ext * s.inner;
            for (size_t i = 0; i < static_cast<size_t>(ext) * s.inner; ++i) dst[i] += src[i];
          }
        }
        offset += ext;
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = track_for({&x});
  Tensor out = make_op_output({}, track);
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active().record([xi, oi]() {
      if (!xi->requires_grad) return;
      const double g = oi->grad[0];
      for (double& gv : xi->grad) gv += g;
    });
  }
  return out;
}

Tensor rowwise_scale(const Tensor& x, const Tensor& s) {
  if (x.rank() != 2) shape_error("rowwise_scale", x.shape(), s.shape());
  const int rows = x.extent(0), cols = x.extent(1);
  if (s.size() != rows) shape_error("rowwise_scale", x.shape(), s.shape());

  const bool track = track_for({&x, &s});
  Tensor out = make_op_output(x.shape(), track);
  const double* px = x.values().data();
  const double* ps = s.values().data();
  double* po = out.values().data();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      po[static_cast<size_t>(r) * cols + c] = px[static_cast<size_t>(r) * cols + c] * ps[r];
  if (track) {
    auto xi = x.impl();
    auto si = s.impl();
    auto oi = out.impl();
    Tape::active().record([xi, si, oi, rows, cols]() {
      const double* g = oi->grad.data();
      if (xi->requires_grad) {
        double* gx = xi->grad.data();
        const double* vs = si->value.data();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            gx[static_cast<size_t>(r) * cols + c] += g[static_cast<size_t>(r) * cols + c] * vs[r];
      }
      if (si->requires_grad) {
        double* gs = si->grad.data();
        const double* vx = xi->value.data();
        for (int r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (int c = 0; c < cols; ++c)
            acc += g[static_cast<size_t>(r) * cols + c] * vx[static_cast<size_t>(r) * cols + c];
          gs[r] += acc;
        }
      }
    });
  }
  return out;
}

Tensor column(const Tensor& x, int j) {
  if (x.rank() != 2 || j < 0 || j >= x.extent(1))
    throw std::invalid_argument("column: index " + std::to_string(j) + " for shape " +
                                shape_str(x.shape()));
  const int rows = x.extent(0), cols = x.extent(1);
  const bool track = track_for({&x});
  Tensor out = make_op_output({rows, 1}, track);
  for (int r = 0; r < rows; ++r)
    out.values()[static_cast<size_t>(r)] = x.at(r, j);
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active().record([xi, oi, rows, cols, j]() {
      if (!xi->requires_grad) return;
      for (int r = 0; r < rows; ++r)
        xi->grad[static_cast<size_t>(r) * cols + j] += oi->grad[static_cast<size_t>(r)];
    });
  }
  return out;
}

Tensor broadcast_rows(const Tensor& row, int n) {
  const int d = row.size();
  if (row.rank() > 2 || (row.rank() == 2 && row.extent(0) != 1))
    throw std::invalid_argument("broadcast_rows: expected [d] or [1 x d], got " +
                                shape_str(row.shape()));
  const bool track = track_for({&row});
  Tensor out = make_op_output({n, d}, track);
  const double* pr = row.values().data();
  double* po = out.values().data();
  for (int i = 0; i < n; ++i) std::copy(pr, pr + d, po + static_cast<size_t>(i) * d);
  if (track) {
    auto ri = row.impl();
    auto oi = out.impl();
    Tape::active().record([ri, oi, n, d]() {
      if (!ri->requires_grad) return;
      const double* g = oi->grad.data();
      double* gr = ri->grad.data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gr[j] += g[static_cast<size_t>(i) * d + j];
    });
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding_rows: table must be rank-2, got " +
                                shape_str(table.shape()));
  const int vocab = table.extent(0), d = table.extent(1);
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw DataError("embedding_rows: token index " + std::to_string(id) +
                      " outside table of " + std::to_string(vocab) + " rows");

  // Output is grad-tracked whenever tracking is on: input gradients are the
  // basis of the adversarial perturbation even with a frozen table.
  const bool track = g_grad_enabled;
  Tensor out = make_op_output({static_cast<int>(ids.size()), d}, track);
  const double* pt = table.values().data();
  double* po = out.values().data();
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy(pt + static_cast<size_t>(ids[r]) * d, pt + static_cast<size_t>(ids[r] + 1) * d,
              po + r * d);
  if (track) {
    auto ti = table.impl();
    auto oi = out.impl();
    Tape::active().record([ti, oi, ids, d]() {
      if (!ti->requires_grad) return;
      const double* g = oi->grad.data();
      double* gt = ti->grad.data();
      for (size_t r = 0; r < ids.size(); ++r) {
        double* dst = gt + static_cast<size_t>(ids[r]) * d;
        const double* src = g + r * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor nll_loss(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2)
    throw std::invalid_argument("nll_loss: probs must be rank-2, got " +
                                shape_str(probs.shape()));
  const int rows = probs.extent(0), cols = probs.extent(1);
  if (static_cast<int>(labels.size()) != rows)
    throw std::invalid_argument("nll_loss: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || y >= cols)
      throw DataError("nll_loss: label " + std::to_string(y) + " outside " +
                      std::to_string(cols) + " classes");

  const bool track = track_for({&probs});
  Tensor out = make_op_output({}, track);
  double acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double p = probs.at(r, labels[static_cast<size_t>(r)]);
    if (!(p > 0.0))
      throw NumericError("nll_loss: probability " + std::to_string(p) + " for row " +
                         std::to_string(r));
    acc -= std::log(p);
  }
  out.values()[0] = acc;
  if (track) {
    auto pi = probs.impl();
    auto oi = out.impl();
    Tape::active().record([pi, oi, labels, cols]() {
      if (!pi->requires_grad) return;
      const double g = oi->grad[0];
      for (size_t r = 0; r < labels.size(); ++r) {
        const size_t idx = r * cols + static_cast<size_t>(labels[r]);
        pi->grad[idx] -= g / pi->value[idx];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
  if (rate == 0.0) return x;
  const bool track = track_for({&x});
  Tensor out = make_op_output(x.shape(), track);
  const size_t n = x.values().size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < n; ++i)
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  for (size_t i = 0; i < n; ++i) out.values()[i] = x.values()[i] * (*mask)[i];
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active().record([xi, oi, mask, n]() {
      if (!xi->requires_grad) return;
      for (size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * (*mask)[i];
    });
  }
  return out;
}

}  // namespace aldmn
