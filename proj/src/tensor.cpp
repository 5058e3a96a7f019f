#include "atm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace atm {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) fail(Errc::invalid_argument, "non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  int64_t count = numel(shape);
  n->shape = std::move(shape);
  n->data.assign(static_cast<size_t>(count), value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    fail(Errc::shape_mismatch, "data length does not match shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
  int64_t count = numel(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(static_cast<size_t>(count));
  for (auto& v : data) v = dist(rng);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

double Tensor::value() const {
  if (size() != 1) fail(Errc::invalid_argument, "value() requires a scalar tensor, got " + shape_str(shape()));
  return node_->data[0];
}

Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                 std::function<void(detail::Node&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  auto n = std::make_shared<detail::Node>();
  if (numel(shape) != static_cast<int64_t>(data.size()))
    fail(Errc::shape_mismatch, "node data length does not match shape");
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(Errc::shape_mismatch, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.vec());
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    for (auto& p : n.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.vec());
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    auto& pb2 = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb2->requires_grad) {
      pb2->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb2->grad[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.vec());
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    auto& pb2 = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb2->data[i];
    }
    if (pb2->requires_grad) {
      pb2->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb2->grad[i] += n.grad[i] * pa->data[i];
    }
  });
}

Tensor log_op(const Tensor& a) {
  std::vector<double> out(a.vec());
  for (auto& v : out) {
    if (!(v > 0.0)) fail(Errc::domain, "log of non-positive value");
    v = std::log(v);
  }
  return make_node(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pa->data[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.vec());
  for (auto& v : out) v += s;
  return make_node(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.vec());
  for (auto& v : out) v *= s;
  return make_node(a.shape(), std::move(out), {a}, [s](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * s;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.vec());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_node(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (pa->data[i] > 0.0) pa->grad[i] += n.grad[i];
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.vec()) s += v;
  return make_node({1}, {s}, {a}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (auto& g : pa->grad) g += n.grad[0];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    fail(Errc::shape_mismatch, "reshape: element count mismatch " + shape_str(a.shape()) +
                                   " -> " + shape_str(shape));
  return make_node(std::move(shape), a.vec(), {a}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  });
}

Tensor slice0(const Tensor& a, int64_t i) {
  if (a.ndim() < 1 || i < 0 || i >= a.dim(0))
    fail(Errc::invalid_argument, "slice0: index out of range");
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  if (out_shape.empty()) out_shape = {1};
  int64_t block = numel(out_shape);
  std::vector<double> out(a.data() + i * block, a.data() + (i + 1) * block);
  return make_node(out_shape, std::move(out), {a}, [i, block](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t k = 0; k < block; ++k) pa->grad[static_cast<size_t>(i * block + k)] += n.grad[static_cast<size_t>(k)];
  });
}

Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= a.ndim()) fail(Errc::invalid_argument, "narrow: bad axis");
  if (start < 0 || len < 1 || start + len > a.dim(axis))
    fail(Errc::invalid_argument, "narrow: range out of bounds");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < a.ndim(); ++d) inner *= a.dim(d);
  int64_t ax = a.dim(axis);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  const double* src = a.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner, src + (o * ax + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(double));
  return make_node(out_shape, std::move(out), {a}, [outer, inner, ax, start, len](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      const double* g = n.grad.data() + o * len * inner;
      double* pg = pa->grad.data() + (o * ax + start) * inner;
      for (int64_t k = 0; k < len * inner; ++k) pg[k] += g[k];
    }
  });
}

Tensor min_all(const Tensor& a) {
  int64_t arg = 0;
  double m = a.data()[0];
  for (int64_t i = 1; i < a.size(); ++i)
    if (a.data()[i] < m) { m = a.data()[i]; arg = i; }
  return make_node({1}, {m}, {a}, [arg](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    pa->grad[static_cast<size_t>(arg)] += n.grad[0];
  });
}

Tensor sub_bcast(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) fail(Errc::invalid_argument, "sub_bcast: s must be scalar");
  std::vector<double> out(a.vec());
  double sv = s.data()[0];
  for (auto& v : out) v -= sv;
  return make_node(a.shape(), std::move(out), {a, s}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    auto& ps = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (ps->requires_grad) {
      ps->ensure_grad();
      double acc = 0.0;
      for (double g : n.grad) acc += g;
      ps->grad[0] -= acc;
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail(Errc::invalid_argument, "concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(ref.size()))
    fail(Errc::invalid_argument, "concat: bad axis");
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(ref.size()))
      fail(Errc::shape_mismatch, "concat: rank mismatch");
    for (int d = 0; d < p.ndim(); ++d)
      if (d != axis && p.dim(d) != ref[static_cast<size_t>(d)])
        fail(Errc::shape_mismatch, "concat: shapes differ off the concat axis");
    axis_total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[static_cast<size_t>(axis)] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= ref[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < ref.size(); ++d) inner *= ref[d];

  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  std::vector<int64_t> offsets(parts.size());
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    offsets[pi] = off;
    int64_t ax = parts[pi].dim(axis);
    const double* src = parts[pi].data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * axis_total + off) * inner, src + o * ax * inner,
                  static_cast<size_t>(ax * inner) * sizeof(double));
    off += ax;
  }
  std::vector<int64_t> axes(parts.size());
  for (size_t pi = 0; pi < parts.size(); ++pi) axes[pi] = parts[pi].dim(axis);
  return make_node(out_shape, std::move(out), parts,
                   [outer, inner, axis_total, offsets, axes](detail::Node& n) {
                     for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                       auto& p = n.parents[pi];
                       if (!p->requires_grad) continue;
                       p->ensure_grad();
                       int64_t ax = axes[pi];
                       for (int64_t o = 0; o < outer; ++o) {
                         const double* g = n.grad.data() + (o * axis_total + offsets[pi]) * inner;
                         double* pg = p->grad.data() + o * ax * inner;
                         for (int64_t k = 0; k < ax * inner; ++k) pg[k] += g[k];
                       }
                     }
                   });
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(Errc::invalid_argument, "stack0: no inputs");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

Tensor mean_mid_canonical(const Tensor& a, int64_t outer, int64_t m, int64_t inner) {
  if (outer * m * inner != a.size())
    fail(Errc::shape_mismatch, "mean_mid_canonical: factorization does not match size");
  std::vector<double> out(static_cast<size_t>(outer * inner));
  std::vector<double> vals(static_cast<size_t>(m));
  const double* src = a.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < inner; ++k) {
      for (int64_t j = 0; j < m; ++j) vals[static_cast<size_t>(j)] = src[(o * m + j) * inner + k];
      // order-canonical sum: the mean is bit-identical under any permutation
      // of the middle axis
      std::sort(vals.begin(), vals.end());
      double s = 0.0;
      for (double v : vals) s += v;
      out[static_cast<size_t>(o * inner + k)] = s / static_cast<double>(m);
    }
  return make_node({outer, inner}, std::move(out), {a}, [outer, m, inner](detail::Node& n) {
    auto& pa = n.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    double invm = 1.0 / static_cast<double>(m);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < m; ++j)
        for (int64_t k = 0; k < inner; ++k)
          pa->grad[static_cast<size_t>((o * m + j) * inner + k)] +=
              n.grad[static_cast<size_t>(o * inner + k)] * invm;
  });
}

Tensor mean_spatial(const Tensor& x) {
  if (x.ndim() != 4) fail(Errc::invalid_argument, "mean_spatial: expected N x C x H x W");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t hw = h * w;
  std::vector<double> out(static_cast<size_t>(n * c));
  const double* src = x.data();
  for (int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (int64_t k = 0; k < hw; ++k) s += src[i * hw + k];
    out[static_cast<size_t>(i)] = s / static_cast<double>(hw);
  }
  return make_node({n, c}, std::move(out), {x}, [hw](detail::Node& nd) {
    auto& pa = nd.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    double inv = 1.0 / static_cast<double>(hw);
    for (size_t i = 0; i < nd.grad.size(); ++i) {
      double g = nd.grad[i] * inv;
      double* pg = pa->grad.data() + static_cast<int64_t>(i) * hw;
      for (int64_t k = 0; k < hw; ++k) pg[k] += g;
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.ndim() != 4) fail(Errc::invalid_argument, "conv2d: input must be N x C x H x W");
  if (weight.ndim() != 4) fail(Errc::invalid_argument, "conv2d: weight must be Cout x Cin x kh x kw");
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin)
    fail(Errc::shape_mismatch, "conv2d: channel mismatch, input C=" + std::to_string(cin) +
                                   " weight Cin=" + std::to_string(weight.dim(1)));
  if (bias.ndim() != 1 || bias.dim(0) != cout) fail(Errc::shape_mismatch, "conv2d: bias shape");
  if (stride < 1 || padding < 0) fail(Errc::invalid_argument, "conv2d: bad stride/padding");
  int64_t ho = (h + 2 * padding - kh) / stride + 1;
  int64_t wo = (w + 2 * padding - kw) / stride + 1;
  if (ho < 1 || wo < 1) fail(Errc::invalid_argument, "conv2d: empty output");

  std::vector<double> out(static_cast<size_t>(n * cout * ho * wo));
  const double* px = x.data();
  const double* pw = weight.data();
  const double* pb = bias.data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t oc = 0; oc < cout; ++oc)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = pb[oc];
          int64_t iy0 = oy * stride - padding;
          int64_t ix0 = ox * stride - padding;
          for (int64_t ic = 0; ic < cin; ++ic) {
            const double* xc = px + ((b * cin + ic) * h) * w;
            const double* wc = pw + ((oc * cin + ic) * kh) * kw;
            for (int64_t ky = 0; ky < kh; ++ky) {
              int64_t iy = iy0 + ky;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t ix = ix0 + kx;
                if (ix < 0 || ix >= w) continue;
                acc += xc[iy * w + ix] * wc[ky * kw + kx];
              }
            }
          }
          out[static_cast<size_t>(((b * cout + oc) * ho + oy) * wo + ox)] = acc;
        }

  auto bp = [n, cin, h, w, cout, kh, kw, ho, wo, stride, padding](detail::Node& nd) {
    auto& px2 = nd.parents[0];
    auto& pw2 = nd.parents[1];
    auto& pb2 = nd.parents[2];
    bool gx = px2->requires_grad, gw = pw2->requires_grad, gb = pb2->requires_grad;
    if (gx) px2->ensure_grad();
    if (gw) pw2->ensure_grad();
    if (gb) pb2->ensure_grad();
    const double* go = nd.grad.data();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t oy = 0; oy < ho; ++oy)
          for (int64_t ox = 0; ox < wo; ++ox) {
            double g = go[((b * cout + oc) * ho + oy) * wo + ox];
            if (g == 0.0) continue;
            if (gb) pb2->grad[static_cast<size_t>(oc)] += g;
            int64_t iy0 = oy * stride - padding;
            int64_t ix0 = ox * stride - padding;
            for (int64_t ic = 0; ic < cin; ++ic) {
              const double* xc = px2->data.data() + ((b * cin + ic) * h) * w;
              const double* wc = pw2->data.data() + ((oc * cin + ic) * kh) * kw;
              double* xg = gx ? px2->grad.data() + ((b * cin + ic) * h) * w : nullptr;
              double* wg = gw ? pw2->grad.data() + ((oc * cin + ic) * kh) * kw : nullptr;
              for (int64_t ky = 0; ky < kh; ++ky) {
                int64_t iy = iy0 + ky;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kx = 0; kx < kw; ++kx) {
                  int64_t ix = ix0 + kx;
                  if (ix < 0 || ix >= w) continue;
                  if (gx) xg[iy * w + ix] += g * wc[ky * kw + kx];
                  if (gw) wg[ky * kw + kx] += g * xc[iy * w + ix];
                }
              }
            }
          }
  };
  return make_node({n, cout, ho, wo}, std::move(out), {x, weight, bias}, std::move(bp));
}

namespace {

// Factor any >=2D tensor into batch x H x W over the trailing two axes.
void spatial_view(const Tensor& x, int64_t& batch, int64_t& h, int64_t& w) {
  if (x.ndim() < 2) fail(Errc::invalid_argument, "expected at least 2 dims");
  h = x.dim(x.ndim() - 2);
  w = x.dim(x.ndim() - 1);
  batch = 1;
  for (int d = 0; d < x.ndim() - 2; ++d) batch *= x.dim(d);
}

}  // namespace

Tensor avg_pool2(const Tensor& x) {
  int64_t batch, h, w;
  spatial_view(x, batch, h, w);
  if (h % 2 != 0 || w % 2 != 0)
    fail(Errc::invalid_argument, "avg_pool2: spatial dims must be even, got " + shape_str(x.shape()));
  int64_t ho = h / 2, wo = w / 2;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = ho;
  out_shape[out_shape.size() - 1] = wo;
  std::vector<double> out(static_cast<size_t>(batch * ho * wo));
  const double* src = x.data();
  for (int64_t b = 0; b < batch; ++b) {
    const double* s = src + b * h * w;
    double* o = out.data() + b * ho * wo;
    for (int64_t y = 0; y < ho; ++y)
      for (int64_t xw = 0; xw < wo; ++xw)
        o[y * wo + xw] = 0.25 * (s[(2 * y) * w + 2 * xw] + s[(2 * y) * w + 2 * xw + 1] +
                                 s[(2 * y + 1) * w + 2 * xw] + s[(2 * y + 1) * w + 2 * xw + 1]);
  }
  return make_node(out_shape, std::move(out), {x}, [batch, h, w, ho, wo](detail::Node& nd) {
    auto& pa = nd.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t b = 0; b < batch; ++b) {
      const double* g = nd.grad.data() + b * ho * wo;
      double* pg = pa->grad.data() + b * h * w;
      for (int64_t y = 0; y < ho; ++y)
        for (int64_t xw = 0; xw < wo; ++xw) {
          double q = 0.25 * g[y * wo + xw];
          pg[(2 * y) * w + 2 * xw] += q;
          pg[(2 * y) * w + 2 * xw + 1] += q;
          pg[(2 * y + 1) * w + 2 * xw] += q;
          pg[(2 * y + 1) * w + 2 * xw + 1] += q;
        }
    }
  });
}

namespace {

// Half-pixel source coordinates for 2x bilinear upsampling. With edge
// clamping every source pixel receives the same total weight, so the spatial
// mean is preserved exactly.
struct LerpTap {
  int64_t lo, hi;
  double f;  // weight of hi
};

std::vector<LerpTap> upsample_taps(int64_t in, int64_t out) {
  std::vector<LerpTap> taps(static_cast<size_t>(out));
  for (int64_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    double fl = std::floor(s);
    int64_t lo = static_cast<int64_t>(fl);
    double f = s - fl;
    int64_t hi = lo + 1;
    if (lo < 0) { lo = 0; hi = 0; f = 0.0; }
    if (hi > in - 1) { hi = in - 1; lo = in - 1; f = 0.0; }
    taps[static_cast<size_t>(o)] = {lo, hi, f};
  }
  return taps;
}

}  // namespace

Tensor upsample2(const Tensor& x) {
  int64_t batch, h, w;
  spatial_view(x, batch, h, w);
  int64_t ho = h * 2, wo = w * 2;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = ho;
  out_shape[out_shape.size() - 1] = wo;
  auto ty = upsample_taps(h, ho);
  auto tx = upsample_taps(w, wo);
  std::vector<double> out(static_cast<size_t>(batch * ho * wo));
  const double* src = x.data();
  for (int64_t b = 0; b < batch; ++b) {
    const double* s = src + b * h * w;
    double* o = out.data() + b * ho * wo;
    for (int64_t y = 0; y < ho; ++y) {
      const auto& a = ty[static_cast<size_t>(y)];
      for (int64_t xw = 0; xw < wo; ++xw) {
        const auto& c = tx[static_cast<size_t>(xw)];
        double top = (1.0 - c.f) * s[a.lo * w + c.lo] + c.f * s[a.lo * w + c.hi];
        double bot = (1.0 - c.f) * s[a.hi * w + c.lo] + c.f * s[a.hi * w + c.hi];
        o[y * wo + xw] = (1.0 - a.f) * top + a.f * bot;
      }
    }
  }
  return make_node(out_shape, std::move(out), {x}, [batch, h, w, ho, wo, ty, tx](detail::Node& nd) {
    auto& pa = nd.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t b = 0; b < batch; ++b) {
      const double* g = nd.grad.data() + b * ho * wo;
      double* pg = pa->grad.data() + b * h * w;
      for (int64_t y = 0; y < ho; ++y) {
        const auto& a = ty[static_cast<size_t>(y)];
        for (int64_t xw = 0; xw < wo; ++xw) {
          const auto& c = tx[static_cast<size_t>(xw)];
          double gv = g[y * wo + xw];
          pg[a.lo * w + c.lo] += (1.0 - a.f) * (1.0 - c.f) * gv;
          pg[a.lo * w + c.hi] += (1.0 - a.f) * c.f * gv;
          pg[a.hi * w + c.lo] += a.f * (1.0 - c.f) * gv;
          pg[a.hi * w + c.hi] += a.f * c.f * gv;
        }
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1)
    fail(Errc::invalid_argument, "linear: expected x N x F, w O x F, b O");
  int64_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  if (w.dim(1) != f || b.dim(0) != o) fail(Errc::shape_mismatch, "linear: dimension mismatch");
  std::vector<double> out(static_cast<size_t>(n * o));
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < o; ++j) {
      double acc = pb[j];
      const double* xr = px + i * f;
      const double* wr = pw + j * f;
      for (int64_t k = 0; k < f; ++k) acc += xr[k] * wr[k];
      out[static_cast<size_t>(i * o + j)] = acc;
    }
  return make_node({n, o}, std::move(out), {x, w, b}, [n, f, o](detail::Node& nd) {
    auto& px2 = nd.parents[0];
    auto& pw2 = nd.parents[1];
    auto& pb2 = nd.parents[2];
    bool gx = px2->requires_grad, gw = pw2->requires_grad, gb = pb2->requires_grad;
    if (gx) px2->ensure_grad();
    if (gw) pw2->ensure_grad();
    if (gb) pb2->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < o; ++j) {
        double g = nd.grad[static_cast<size_t>(i * o + j)];
        if (g == 0.0) continue;
        if (gb) pb2->grad[static_cast<size_t>(j)] += g;
        for (int64_t k = 0; k < f; ++k) {
          if (gx) px2->grad[static_cast<size_t>(i * f + k)] += g * pw2->data[static_cast<size_t>(j * f + k)];
          if (gw) pw2->grad[static_cast<size_t>(j * f + k)] += g * px2->data[static_cast<size_t>(i * f + k)];
        }
      }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) fail(Errc::invalid_argument, "matmul: expected 2-D inputs");
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) fail(Errc::shape_mismatch, "matmul: inner dims differ");
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* br = pb + kk * n;
      double* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * br[j];
    }
  return make_node({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& nd) {
    auto& pa2 = nd.parents[0];
    auto& pb2 = nd.parents[1];
    if (pa2->requires_grad) {
      pa2->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* g = nd.grad.data() + i * n;
          const double* br = pb2->data.data() + kk * n;
          for (int64_t j = 0; j < n; ++j) acc += g[j] * br[j];
          pa2->grad[static_cast<size_t>(i * k + kk)] += acc;
        }
    }
    if (pb2->requires_grad) {
      pb2->ensure_grad();
      for (int64_t kk = 0; kk < k; ++kk)
        for (int64_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int64_t i = 0; i < m; ++i)
            acc += pa2->data[static_cast<size_t>(i * k + kk)] * nd.grad[static_cast<size_t>(i * n + j)];
          pb2->grad[static_cast<size_t>(kk * n + j)] += acc;
        }
    }
  });
}

Tensor transpose2(const Tensor& a) {
  if (a.ndim() != 2) fail(Errc::invalid_argument, "transpose2: expected 2-D input");
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  const double* pa = a.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = pa[i * n + j];
  return make_node({n, m}, std::move(out), {a}, [m, n](detail::Node& nd) {
    auto& pa2 = nd.parents[0];
    if (!pa2->requires_grad) return;
    pa2->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        pa2->grad[static_cast<size_t>(i * n + j)] += nd.grad[static_cast<size_t>(j * m + i)];
  });
}

Tensor softmax_rows(const Tensor& a) {
  if (a.ndim() != 2) fail(Errc::invalid_argument, "softmax_rows: expected 2-D input");
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  const double* pa = a.data();
  for (int64_t i = 0; i < m; ++i) {
    double mx = pa[i * n];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, pa[i * n + j]);
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double e = std::exp(pa[i * n + j] - mx);
      out[static_cast<size_t>(i * n + j)] = e;
      s += e;
    }
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] /= s;
  }
  return make_node({m, n}, std::move(out), {a}, [m, n](detail::Node& nd) {
    auto& pa2 = nd.parents[0];
    if (!pa2->requires_grad) return;
    pa2->ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      const double* y = nd.data.data() + i * n;
      const double* g = nd.grad.data() + i * n;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += y[j] * g[j];
      double* pg = pa2->grad.data() + i * n;
      for (int64_t j = 0; j < n; ++j) pg[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() < 1) fail(Errc::invalid_argument, "layer_norm: empty shape");
  int64_t d = x.dim(x.ndim() - 1);
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
    fail(Errc::shape_mismatch, "layer_norm: affine params must match last dim");
  int64_t rows = x.size() / d;
  std::vector<double> out(static_cast<size_t>(x.size()));
  std::vector<double> mu(static_cast<size_t>(rows)), istd(static_cast<size_t>(rows));
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * d;
    double m = 0.0;
    for (int64_t j = 0; j < d; ++j) m += xr[j];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (int64_t j = 0; j < d; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(v + eps);
    mu[static_cast<size_t>(r)] = m;
    istd[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<size_t>(r * d + j)] = (xr[j] - m) * is * pg[j] + pb[j];
  }
  return make_node(x.shape(), std::move(out), {x, gamma, beta},
                   [rows, d, mu, istd](detail::Node& nd) {
                     auto& px2 = nd.parents[0];
                     auto& pg2 = nd.parents[1];
                     auto& pb2 = nd.parents[2];
                     bool gx = px2->requires_grad, gg = pg2->requires_grad, gb = pb2->requires_grad;
                     if (gx) px2->ensure_grad();
                     if (gg) pg2->ensure_grad();
                     if (gb) pb2->ensure_grad();
                     for (int64_t r = 0; r < rows; ++r) {
                       const double* xr = px2->data.data() + r * d;
                       const double* g = nd.grad.data() + r * d;
                       double m = mu[static_cast<size_t>(r)];
                       double is = istd[static_cast<size_t>(r)];
                       double sum_gy = 0.0, sum_gyx = 0.0;
                       for (int64_t j = 0; j < d; ++j) {
                         double gy = g[j] * pg2->data[static_cast<size_t>(j)];
                         double xh = (xr[j] - m) * is;
                         sum_gy += gy;
                         sum_gyx += gy * xh;
                         if (gg) pg2->grad[static_cast<size_t>(j)] += g[j] * xh;
                         if (gb) pb2->grad[static_cast<size_t>(j)] += g[j];
                       }
                       if (gx) {
                         double* xg = px2->grad.data() + r * d;
                         double invd = 1.0 / static_cast<double>(d);
                         for (int64_t j = 0; j < d; ++j) {
                           double gy = g[j] * pg2->data[static_cast<size_t>(j)];
                           double xh = (xr[j] - m) * is;
                           xg[j] += is * (gy - invd * sum_gy - invd * xh * sum_gyx);
                         }
                       }
                     }
                   });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) fail(Errc::invalid_argument, "cross_entropy: logits must be B x K");
  int64_t b = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b)
    fail(Errc::shape_mismatch, "cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) fail(Errc::invalid_argument, "cross_entropy: label out of range");
  const double* pl = logits.data();
  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const double* row = pl + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    loss += std::log(s) + mx - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(b);
  return make_node({1}, {loss}, {logits}, [b, k, labels](detail::Node& nd) {
    auto& pl2 = nd.parents[0];
    if (!pl2->requires_grad) return;
    pl2->ensure_grad();
    double g = nd.grad[0] / static_cast<double>(b);
    for (int64_t i = 0; i < b; ++i) {
      const double* row = pl2->data.data() + i * k;
      double mx = row[0];
      for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
      double* pg = pl2->grad.data() + i * k;
      for (int64_t j = 0; j < k; ++j) {
        double p = std::exp(row[j] - mx) / s;
        pg[j] += g * (p - (j == labels[static_cast<size_t>(i)] ? 1.0 : 0.0));
      }
    }
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    fail(Errc::invalid_argument, "backward: loss must be a scalar tensor");
  if (!loss.requires_grad())
    fail(Errc::invalid_argument, "backward: loss is not connected to tracked tensors");

  // iterative post-order DFS; graphs can be deep at clip scale
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : topo) n->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  if (!x.requires_grad()) fail(Errc::invalid_argument, "finite_diff_check: x must track gradients");
  x.zero_grad();
  Tensor y = f(x);
  if (y.size() != 1) fail(Errc::invalid_argument, "finite_diff_check: f must be scalar-valued");
  backward(y);
  std::vector<double> analytic = x.grad();

  double max_err = 0.0;
  double* px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    double orig = px[i];
    px[i] = orig + step;
    double fp = f(x).value();
    px[i] = orig - step;
    double fm = f(x).value();
    px[i] = orig;
    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic[static_cast<size_t>(i)];
    double err = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace atm
