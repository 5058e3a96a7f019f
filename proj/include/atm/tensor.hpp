#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "atm/error.hpp"

namespace atm {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the reverse-mode tape. `backprop` reads this node's grad and
// accumulates into the parents' grads.
struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense float64 tensor with optional gradient tracking. Copies share the
// underlying node; a Tensor is a handle into the autodiff graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  // Uniform in [lo, hi), deterministic in rng state.
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  std::vector<double>& vec() { return node_->data; }
  const std::vector<double>& vec() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& grad_mut() { return node_->grad; }
  void zero_grad() {
    node_->grad.assign(node_->data.size(), 0.0);
  }

  // Value of a scalar (1-element) tensor.
  double value() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds a graph node from already-computed forward data. requires_grad is
// inherited from the parents; when no parent tracks gradients the edge list
// and backprop closure are dropped so value-only graphs stay flat.
Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                 std::function<void(detail::Node&)> backprop);

// Elementwise graph ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor log_op(const Tensor& a);  // errors on non-positive input
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);

// Reductions / reshaping.
Tensor sum_all(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// Select index i along axis 0, dropping the axis.
Tensor slice0(const Tensor& a, int64_t i);
// Contiguous sub-range [start, start+len) along an axis.
Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t len);
// Minimum over all elements as a scalar node (subgradient to the first argmin).
Tensor min_all(const Tensor& a);
// a - s broadcast, s a scalar (1-element) tensor.
Tensor sub_bcast(const Tensor& a, const Tensor& s);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Stack along a new leading axis.
Tensor stack0(const std::vector<Tensor>& parts);
// Mean over the middle axis of an A x M x B view of `a`; the summation is done
// in sorted value order per output coordinate, so the result is independent of
// the order of the M slices.
Tensor mean_mid_canonical(const Tensor& a, int64_t outer, int64_t m, int64_t inner);
// Mean over the trailing H x W axes of an N x C x H x W tensor -> N x C.
Tensor mean_spatial(const Tensor& x);

// Spatial primitives, batched over all leading axes where noted.
// x: N x Cin x H x W, weight: Cout x Cin x kh x kw, bias: Cout.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
// 2x mean pooling / 2x bilinear (half-pixel) upsampling over the last two
// axes; leading axes are batch.
Tensor avg_pool2(const Tensor& x);
Tensor upsample2(const Tensor& x);

// Dense algebra for the attention stem. x: N x F, w: O x F, b: O.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);  // M x K times K x N
Tensor transpose2(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
// Normalization over the last axis with affine parameters of that length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Mean cross-entropy of logits (B x K) against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Reverse-mode pass from a scalar loss. Accumulates into the grad buffer of
// every reachable node that requires gradients.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - numeric| / max(1e-12, |analytic| + |numeric|)
// comparing backward() against central differences of f at x.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step);

}  // namespace atm
