#include "spn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

namespace spn::ad {

namespace {

thread_local KinkProbe* g_probe = nullptr;

void probe_kink(double signed_distance) {
  if (g_probe) g_probe->observe(signed_distance);
}

bool any_requires_grad(const std::vector<Var>& parents) {
  for (const Var& p : parents)
    if (p->requires_grad) return true;
  return false;
}

Var make_node(DenseArray value, std::vector<Var> parents, const char* op,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = any_requires_grad(parents);
  n->parents = std::move(parents);
  n->op = op;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

// C += A * B for row-major blocks
void gemm_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
              std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = ai[l];
      if (av == 0.0) continue;  // post-relu inputs are often sparse
      const double* bl = b + l * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

void accumulate(std::vector<double>& dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

void KinkProbe::observe(double signed_distance) {
  const double d = std::fabs(signed_distance);
  if (d < min_distance) min_distance = d;
  const std::uint64_t s = signed_distance > 0.0 ? 1u : (signed_distance < 0.0 ? 2u : 3u);
  branch_signature = (branch_signature ^ s) * 1099511628211ull;
  ++observations;
}

KinkProbeScope::KinkProbeScope() : prev_(g_probe) { g_probe = &probe_; }
KinkProbeScope::~KinkProbeScope() { g_probe = prev_; }

Var leaf(DenseArray value, bool requires_grad) {
  checked_numel(value.shape);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  DenseArray out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  return make_node(std::move(out), {a, b}, "add", [](Node& self) {
    for (int p = 0; p < 2; ++p) {
      Node& par = *self.parents[static_cast<std::size_t>(p)];
      if (par.requires_grad) accumulate(par.grad, self.grad.data(), self.grad.size());
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  DenseArray out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
  return make_node(std::move(out), {a, b}, "sub", [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) accumulate(pa.grad, self.grad.data(), self.grad.size());
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  DenseArray out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
  return make_node(std::move(out), {a, b}, "mul", [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.value.data[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.value.data[i];
  });
}

Var scale(const Var& a, double c) {
  DenseArray out = a->value;
  for (double& v : out.data) v *= c;
  return make_node(std::move(out), {a}, "scale", [c](Node& self) {
    Node& pa = *self.parents[0];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * c;
  });
}

Var add_rowvec(const Var& x, const Var& r) {
  require_rank2(x->value, "add_rowvec");
  require_rank2(r->value, "add_rowvec");
  if (r->value.rows() != 1 || r->value.cols() != x->value.cols())
    throw ShapeError("add_rowvec: row vector " + shape_str(r->value.shape) +
                     " does not broadcast over " + shape_str(x->value.shape));
  const std::int64_t m = x->value.rows(), n = x->value.cols();
  DenseArray out = x->value;
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.data[static_cast<std::size_t>(i * n + j)] += r->value.data[static_cast<std::size_t>(j)];
  return make_node(std::move(out), {x, r}, "add_rowvec", [m, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pr = *self.parents[1];
    if (px.requires_grad) accumulate(px.grad, self.grad.data(), self.grad.size());
    if (pr.requires_grad)
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
          pr.grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i * n + j)];
  });
}

Var relu(const Var& x) {
  require_finite(x->value, "relu");
  DenseArray out = x->value;
  for (double& v : out.data) {
    probe_kink(v);
    if (v < 0.0) v = 0.0;
  }
  return make_node(std::move(out), {x}, "relu", [](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (px.value.data[i] > 0.0) px.grad[i] += self.grad[i];
  });
}

Var abs(const Var& x) {
  DenseArray out = x->value;
  for (double& v : out.data) {
    probe_kink(v);
    v = std::fabs(v);
  }
  return make_node(std::move(out), {x}, "abs", [](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = px.value.data[i];
      if (v > 0.0)
        px.grad[i] += self.grad[i];
      else if (v < 0.0)
        px.grad[i] -= self.grad[i];
    }
  });
}

Var clamp_min(const Var& x, double floor_value) {
  DenseArray out = x->value;
  for (double& v : out.data) {
    probe_kink(v - floor_value);
    if (v < floor_value) v = floor_value;
  }
  return make_node(std::move(out), {x}, "clamp_min", [floor_value](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (px.value.data[i] > floor_value) px.grad[i] += self.grad[i];
  });
}

Var log(const Var& x) {
  DenseArray out = x->value;
  for (double& v : out.data) {
    if (!(v > 0.0)) throw InvalidValueError("log: input must be positive, got " + std::to_string(v));
    v = std::log(v);
  }
  return make_node(std::move(out), {x}, "log", [](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      px.grad[i] += self.grad[i] / px.value.data[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank2(a->value, "matmul");
  require_rank2(b->value, "matmul");
  const std::int64_t m = a->value.rows(), k = a->value.cols();
  if (b->value.rows() != k)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a->value.shape) + " x " +
                     shape_str(b->value.shape));
  const std::int64_t n = b->value.cols();
  DenseArray out = DenseArray::zeros({m, n});
  gemm_acc(a->value.data.data(), b->value.data.data(), out.data.data(), m, k, n);
  return make_node(std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (pa.requires_grad) {  // dA = dC * B^T
      const double* bv = pb.value.data.data();
      for (std::int64_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        double* dai = pa.grad.data() + i * k;
        for (std::int64_t l = 0; l < k; ++l) {
          const double* bl = bv + l * n;
          double s = 0.0;
          for (std::int64_t j = 0; j < n; ++j) s += gi[j] * bl[j];
          dai[l] += s;
        }
      }
    }
    if (pb.requires_grad) {  // dB = A^T * dC
      const double* av = pa.value.data.data();
      for (std::int64_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        const double* ai = av + i * k;
        for (std::int64_t l = 0; l < k; ++l) {
          const double a_il = ai[l];
          if (a_il == 0.0) continue;
          double* dbl = pb.grad.data() + l * n;
          for (std::int64_t j = 0; j < n; ++j) dbl[j] += a_il * gi[j];
        }
      }
    }
  });
}

Var transpose(const Var& x) {
  require_rank2(x->value, "transpose");
  const std::int64_t m = x->value.rows(), n = x->value.cols();
  DenseArray out = DenseArray::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.data[static_cast<std::size_t>(j * m + i)] = x->value.data[static_cast<std::size_t>(i * n + j)];
  return make_node(std::move(out), {x}, "transpose", [m, n](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        px.grad[static_cast<std::size_t>(i * n + j)] += self.grad[static_cast<std::size_t>(j * m + i)];
  });
}

Var softmax_rows(const Var& x) {
  require_rank2(x->value, "softmax_rows");
  require_finite(x->value, "softmax_rows");
  const std::int64_t m = x->value.rows(), n = x->value.cols();
  DenseArray out = x->value;
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data.data() + i * n;
    double mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::int64_t j = 0; j < n; ++j) row[j] /= z;
  }
  return make_node(std::move(out), {x}, "softmax_rows", [m, n](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::int64_t i = 0; i < m; ++i) {
      const double* y = self.value.data.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += y[j] * g[j];
      double* dx = px.grad.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
}

Var log_softmax_rows(const Var& x) {
  require_rank2(x->value, "log_softmax_rows");
  require_finite(x->value, "log_softmax_rows");
  const std::int64_t m = x->value.rows(), n = x->value.cols();
  DenseArray out = x->value;
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data.data() + i * n;
    double mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::int64_t j = 0; j < n; ++j) row[j] -= lz;
  }
  return make_node(std::move(out), {x}, "log_softmax_rows", [m, n](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::int64_t i = 0; i < m; ++i) {
      const double* y = self.value.data.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double gsum = 0.0;
      for (std::int64_t j = 0; j < n; ++j) gsum += g[j];
      double* dx = px.grad.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) dx[j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Var sum_all(const Var& x) {
  double s = 0.0;
  for (const double v : x->value.data) s += v;
  return make_node(DenseArray::scalar(s), {x}, "sum_all", [](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    const double g = self.grad[0];
    for (double& d : px.grad) d += g;
  });
}

Var mean_all(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x->value.numel());
  double s = 0.0;
  for (const double v : x->value.data) s += v;
  return make_node(DenseArray::scalar(s * inv), {x}, "mean_all", [inv](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    const double g = self.grad[0] * inv;
    for (double& d : px.grad) d += g;
  });
}

Var sum_rows(const Var& x) {
  require_rank2(x->value, "sum_rows");
  const std::int64_t m = x->value.rows(), n = x->value.cols();
  DenseArray out = DenseArray::zeros({m, 1});
  for (std::int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) s += x->value.data[static_cast<std::size_t>(i * n + j)];
    out.data[static_cast<std::size_t>(i)] = s;
  }
  return make_node(std::move(out), {x}, "sum_rows", [m, n](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::int64_t i = 0; i < m; ++i) {
      const double g = self.grad[static_cast<std::size_t>(i)];
      double* row = px.grad.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) row[j] += g;
    }
  });
}

Var mean_rows(const Var& x) {
  require_rank2(x->value, "mean_rows");
  const std::int64_t n = x->value.cols();
  return scale(sum_rows(x), 1.0 / static_cast<double>(n));
}

Var mean_cols(const Var& x) {
  require_rank2(x->value, "mean_cols");
  const std::int64_t m = x->value.rows(), n = x->value.cols();
  DenseArray out = DenseArray::zeros({1, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.data[static_cast<std::size_t>(j)] += x->value.data[static_cast<std::size_t>(i * n + j)];
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out.data) v *= inv;
  return make_node(std::move(out), {x}, "mean_cols", [m, n, inv = 1.0 / static_cast<double>(m)](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        px.grad[static_cast<std::size_t>(i * n + j)] += self.grad[static_cast<std::size_t>(j)] * inv;
  });
}

Var reshape(const Var& x, std::vector<std::int64_t> shape) {
  const std::int64_t n = checked_numel(shape);
  if (n != x->value.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x->value.shape) + " as " +
                     shape_str(shape));
  DenseArray out(std::move(shape), x->value.data);
  return make_node(std::move(out), {x}, "reshape", [](Node& self) {
    Node& px = *self.parents[0];
    if (px.requires_grad) accumulate(px.grad, self.grad.data(), self.grad.size());
  });
}

Var slice_cols(const Var& x, std::int64_t c0, std::int64_t c1) {
  require_rank2(x->value, "slice_cols");
  const std::int64_t m = x->value.rows(), n = x->value.cols();
  if (c0 < 0 || c1 <= c0 || c1 > n)
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for " + shape_str(x->value.shape));
  const std::int64_t w = c1 - c0;
  DenseArray out = DenseArray::zeros({m, w});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      out.data[static_cast<std::size_t>(i * w + j)] = x->value.data[static_cast<std::size_t>(i * n + c0 + j)];
  return make_node(std::move(out), {x}, "slice_cols", [m, n, c0, w](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < w; ++j)
        px.grad[static_cast<std::size_t>(i * n + c0 + j)] += self.grad[static_cast<std::size_t>(i * w + j)];
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractError("concat_cols: empty input");
  const std::int64_t m = xs[0]->value.rows();
  std::int64_t total = 0;
  for (const Var& x : xs) {
    require_rank2(x->value, "concat_cols");
    if (x->value.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += x->value.cols();
  }
  DenseArray out = DenseArray::zeros({m, total});
  std::int64_t off = 0;
  for (const Var& x : xs) {
    const std::int64_t n = x->value.cols();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        out.data[static_cast<std::size_t>(i * total + off + j)] = x->value.data[static_cast<std::size_t>(i * n + j)];
    off += n;
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(out), std::move(parents), "concat_cols", [m, total](Node& self) {
    std::int64_t off = 0;
    for (Var& pv : self.parents) {
      Node& p = *pv;
      const std::int64_t n = p.value.cols();
      if (p.requires_grad)
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j)
            p.grad[static_cast<std::size_t>(i * n + j)] += self.grad[static_cast<std::size_t>(i * total + off + j)];
      off += n;
    }
  });
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractError("concat_rows: empty input");
  const std::int64_t n = xs[0]->value.cols();
  std::int64_t total = 0;
  for (const Var& x : xs) {
    require_rank2(x->value, "concat_rows");
    if (x->value.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += x->value.rows();
  }
  DenseArray out = DenseArray::zeros({total, n});
  std::size_t off = 0;
  for (const Var& x : xs) {
    std::copy(x->value.data.begin(), x->value.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += x->value.data.size();
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(out), std::move(parents), "concat_rows", [](Node& self) {
    std::size_t off = 0;
    for (Var& pv : self.parents) {
      Node& p = *pv;
      if (p.requires_grad) accumulate(p.grad, self.grad.data() + off, p.grad.size());
      off += p.value.data.size();
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  if (x->value.rank() != 3) throw ShapeError("conv2d: input must be {C,H,W}, got " + shape_str(x->value.shape));
  if (w->value.rank() != 4) throw ShapeError("conv2d: kernel must be {O,C,kh,kw}, got " + shape_str(w->value.shape));
  if (b->value.rank() != 1) throw ShapeError("conv2d: bias must be rank 1");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  const std::int64_t c = x->value.shape[0], h = x->value.shape[1], wdt = x->value.shape[2];
  const std::int64_t o = w->value.shape[0], kc = w->value.shape[1], kh = w->value.shape[2],
                     kw = w->value.shape[3];
  if (kc != c) throw ShapeError("conv2d: channel mismatch");
  if (b->value.shape[0] != o) throw ShapeError("conv2d: bias size mismatch");
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wdt + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  DenseArray out = DenseArray::zeros({o, oh, ow});
  const double* xd = x->value.data.data();
  const double* wd = w->value.data.data();
  for (std::int64_t oc = 0; oc < o; ++oc) {
    double* op = out.data.data() + oc * oh * ow;
    const double bias = b->value.data[static_cast<std::size_t>(oc)];
    for (std::int64_t i = 0; i < oh * ow; ++i) op[i] = bias;
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const double* xp = xd + ic * h * wdt;
      const double* wp = wd + ((oc * c + ic) * kh) * kw;
      for (std::int64_t ki = 0; ki < kh; ++ki) {
        for (std::int64_t kj = 0; kj < kw; ++kj) {
          const double wv = wp[ki * kw + kj];
          if (wv == 0.0) continue;
          for (std::int64_t oi = 0; oi < oh; ++oi) {
            const std::int64_t ii = oi * stride + ki - pad;
            if (ii < 0 || ii >= h) continue;
            const double* xrow = xp + ii * wdt;
            double* orow = op + oi * ow;
            for (std::int64_t oj = 0; oj < ow; ++oj) {
              const std::int64_t jj = oj * stride + kj - pad;
              if (jj < 0 || jj >= wdt) continue;
              orow[oj] += wv * xrow[jj];
            }
          }
        }
      }
    }
  }
  return make_node(std::move(out), {x, w, b}, "conv2d",
                   [c, h, wdt, o, kh, kw, oh, ow, stride, pad](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    const double* g = self.grad.data();
    if (pb.requires_grad) {
      for (std::int64_t oc = 0; oc < o; ++oc) {
        double s = 0.0;
        const double* gp = g + oc * oh * ow;
        for (std::int64_t i = 0; i < oh * ow; ++i) s += gp[i];
        pb.grad[static_cast<std::size_t>(oc)] += s;
      }
    }
    for (std::int64_t oc = 0; oc < o; ++oc) {
      const double* gp = g + oc * oh * ow;
      for (std::int64_t ic = 0; ic < c; ++ic) {
        const double* xp = px.value.data.data() + ic * h * wdt;
        const double* wp = pw.value.data.data() + ((oc * c + ic) * kh) * kw;
        double* dxp = px.requires_grad ? px.grad.data() + ic * h * wdt : nullptr;
        double* dwp = pw.requires_grad ? pw.grad.data() + ((oc * c + ic) * kh) * kw : nullptr;
        for (std::int64_t ki = 0; ki < kh; ++ki) {
          for (std::int64_t kj = 0; kj < kw; ++kj) {
            const double wv = wp[ki * kw + kj];
            double dw = 0.0;
            for (std::int64_t oi = 0; oi < oh; ++oi) {
              const std::int64_t ii = oi * stride + ki - pad;
              if (ii < 0 || ii >= h) continue;
              const double* gr = gp + oi * ow;
              const double* xrow = xp + ii * wdt;
              double* dxrow = dxp ? dxp + ii * wdt : nullptr;
              for (std::int64_t oj = 0; oj < ow; ++oj) {
                const std::int64_t jj = oj * stride + kj - pad;
                if (jj < 0 || jj >= wdt) continue;
                dw += gr[oj] * xrow[jj];
                if (dxrow) dxrow[jj] += gr[oj] * wv;
              }
            }
            if (dwp) dwp[ki * kw + kj] += dw;
          }
        }
      }
    }
  });
}

Var avg_pool2x2(const Var& x) {
  if (x->value.rank() != 3) throw ShapeError("avg_pool2x2: input must be {C,H,W}");
  const std::int64_t c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2x2: spatial extents must be even");
  const std::int64_t oh = h / 2, ow = w / 2;
  DenseArray out = DenseArray::zeros({c, oh, ow});
  for (std::int64_t ic = 0; ic < c; ++ic) {
    const double* xp = x->value.data.data() + ic * h * w;
    double* op = out.data.data() + ic * oh * ow;
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j)
        op[i * ow + j] = 0.25 * (xp[(2 * i) * w + 2 * j] + xp[(2 * i) * w + 2 * j + 1] +
                                 xp[(2 * i + 1) * w + 2 * j] + xp[(2 * i + 1) * w + 2 * j + 1]);
  }
  return make_node(std::move(out), {x}, "avg_pool2x2", [c, h, w, oh, ow](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    for (std::int64_t ic = 0; ic < c; ++ic) {
      double* dxp = px.grad.data() + ic * h * w;
      const double* gp = self.grad.data() + ic * oh * ow;
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          const double g = 0.25 * gp[i * ow + j];
          dxp[(2 * i) * w + 2 * j] += g;
          dxp[(2 * i) * w + 2 * j + 1] += g;
          dxp[(2 * i + 1) * w + 2 * j] += g;
          dxp[(2 * i + 1) * w + 2 * j + 1] += g;
        }
    }
  });
}

Var mean_of(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractError("mean_of: empty input");
  Var s = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) s = add(s, xs[i]);
  return scale(s, 1.0 / static_cast<double>(xs.size()));
}

void backward(const Var& root) {
  if (!root) throw ContractError("backward: null root");
  if (root->value.numel() != 1) throw ContractError("backward: root must be scalar");
  if (!root->requires_grad && !root->parents.empty())
    throw ContractError("backward: root does not depend on any differentiable leaf");

  // Iterative post-order DFS over the requires_grad subgraph. The visited set
  // guarantees every recorded operation appears exactly once in the order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back().first;
    std::size_t& idx = stack.back().second;
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // adjoints (leaves included) zero-initialized before every backward pass
  for (Node* n : order) n->grad.assign(n->value.data.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

DenseArray grad_array(const Var& v) {
  if (!v) throw ContractError("grad_array: null var");
  if (v->grad.size() != v->value.data.size())
    throw ContractError("grad_array: no gradient recorded; run backward() first");
  return DenseArray(v->value.shape, v->grad);
}

}  // namespace spn::ad
