#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "spn/dense_array.hpp"

namespace spn::ad {

struct Node;
using Var = std::shared_ptr<Node>;

// One recorded operation result. The graph formed by `parents` is the
// gradient tape; `backprop` pulls this node's adjoint into its parents.
struct Node {
  DenseArray value;
  std::vector<double> grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  const char* op = "leaf";
};

Var leaf(DenseArray value, bool requires_grad);
inline Var constant(DenseArray value) { return leaf(std::move(value), false); }

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_rowvec(const Var& x, const Var& r);  // {m,n} + {1,n}
Var relu(const Var& x);                      // subgradient 0 at the kink
Var abs(const Var& x);
Var clamp_min(const Var& x, double floor_value);
Var log(const Var& x);

// linear algebra (rank-2)
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);

// rowwise normalizers (rank-2, max-subtracted for stability)
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

// reductions
Var sum_all(const Var& x);   // -> {1}
Var mean_all(const Var& x);  // -> {1}
Var sum_rows(const Var& x);  // {m,n} -> {m,1}
Var mean_rows(const Var& x); // {m,n} -> {m,1}
Var mean_cols(const Var& x); // {m,n} -> {1,n}

// layout
Var reshape(const Var& x, std::vector<std::int64_t> shape);
Var slice_cols(const Var& x, std::int64_t c0, std::int64_t c1);  // [c0, c1)
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);

// spatial, single image, channels-first
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var avg_pool2x2(const Var& x);

// mean of same-shaped vars (used for batch reductions of scalar losses)
Var mean_of(const std::vector<Var>& xs);

// Zeroes the adjoints of every node reachable from `root`, seeds the root
// with 1 and walks the tape in reverse topological order, visiting each
// recorded operation exactly once. `root` must be scalar.
void backward(const Var& root);

// Gradient of a leaf after backward(), as an array shaped like its value.
DenseArray grad_array(const Var& v);

// Probe used by the finite-difference checker: while a scope is active every
// nonsmooth op (relu / abs / clamp) reports the signed distance of each input
// to its kink so near-kink evaluations can be excluded.
struct KinkProbe {
  double min_distance = 1e300;
  std::uint64_t branch_signature = 1469598103934665603ull;
  std::uint64_t observations = 0;
  void observe(double signed_distance);
};

class KinkProbeScope {
 public:
  KinkProbeScope();
  ~KinkProbeScope();
  KinkProbeScope(const KinkProbeScope&) = delete;
  KinkProbeScope& operator=(const KinkProbeScope&) = delete;
  const KinkProbe& probe() const { return probe_; }

 private:
  KinkProbe probe_;
  KinkProbe* prev_;
};

}  // namespace spn::ad
