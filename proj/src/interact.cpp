#include "atm/interact.hpp"

#include <algorithm>
#include <string>

namespace atm {

const char* arith_op_name(ArithOp op) {
  switch (op) {
    case ArithOp::add: return "add";
    case ArithOp::sub: return "sub";
    case ArithOp::mul: return "mul";
    case ArithOp::div: return "div";
  }
  return "?";
}

ArithOp arith_op_from_name(const std::string& name) {
  if (name == "add" || name == "+") return ArithOp::add;
  if (name == "sub" || name == "-") return ArithOp::sub;
  if (name == "mul" || name == "x" || name == "*") return ArithOp::mul;
  if (name == "div" || name == "/") return ArithOp::div;
  fail(Errc::config, "unknown arithmetic op '" + name + "'");
}

std::vector<int> context_indices(int t, int t_total, const ContextSpec& spec) {
  if (t < 1 || t > t_total) fail(Errc::invalid_argument, "context_indices: anchor out of range");
  int z = spec.z;
  if (z < 1 || (z > 1 && z % 2 != 0))
    fail(Errc::invalid_argument, "context range Z must be 1 or even, got " + std::to_string(z));
  auto clamp = [t_total](int i) { return std::min(std::max(i, 1), t_total); };
  std::vector<int> out;
  out.reserve(static_cast<size_t>(z));
  if (z == 1) {
    out.push_back(clamp(t + 1));
    return out;
  }
  for (int d = z / 2; d >= 1; --d) out.push_back(clamp(t - d));
  for (int d = 1; d <= z / 2; ++d) out.push_back(clamp(t + d));
  return out;
}

Tensor op_add(const Tensor& a, const Tensor& b) { return add(a, b); }

Tensor op_sub(const Tensor& a, const Tensor& b) { return sub(a, b); }

Tensor op_mul_local(const Tensor& a, const Tensor& b, const MulParams& p) {
  if (a.ndim() != 3 || b.ndim() != 3)
    fail(Errc::invalid_argument, "op_mul_local: frames must be C x H x W");
  if (a.shape() != b.shape())
    fail(Errc::shape_mismatch, "op_mul_local: frame shapes differ");
  if (p.p < 1 || p.p % 2 == 0)
    fail(Errc::invalid_argument, "op_mul_local: P must be odd and positive");
  int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  int k = p.k();
  int64_t p2 = static_cast<int64_t>(p.p) * p.p;

  std::vector<double> out(static_cast<size_t>(p2 * h * w), 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  int64_t off = 0;
  for (int di = -k; di <= k; ++di)
    for (int dj = -k; dj <= k; ++dj, ++off)
      for (int64_t y = 0; y < h; ++y) {
        int64_t ny = y + di;
        if (ny < 0 || ny >= h) continue;  // zero padding
        for (int64_t x = 0; x < w; ++x) {
          int64_t nx = x + dj;
          if (nx < 0 || nx >= w) continue;
          double acc = 0.0;
          for (int64_t ch = 0; ch < c; ++ch)
            acc += pa[(ch * h + y) * w + x] * pb[(ch * h + ny) * w + nx];
          out[static_cast<size_t>((off * h + y) * w + x)] = acc;
        }
      }

  int pp = p.p;
  return make_node({p2, h, w}, std::move(out), {a, b}, [c, h, w, k, pp](detail::Node& nd) {
    auto& pa2 = nd.parents[0];
    auto& pb2 = nd.parents[1];
    bool ga = pa2->requires_grad, gb = pb2->requires_grad;
    if (ga) pa2->ensure_grad();
    if (gb) pb2->ensure_grad();
    (void)pp;
    int64_t off = 0;
    for (int di = -k; di <= k; ++di)
      for (int dj = -k; dj <= k; ++dj, ++off)
        for (int64_t y = 0; y < h; ++y) {
          int64_t ny = y + di;
          if (ny < 0 || ny >= h) continue;
          for (int64_t x = 0; x < w; ++x) {
            int64_t nx = x + dj;
            if (nx < 0 || nx >= w) continue;
            double g = nd.grad[static_cast<size_t>((off * h + y) * w + x)];
            if (g == 0.0) continue;
            for (int64_t ch = 0; ch < c; ++ch) {
              if (ga)
                pa2->grad[static_cast<size_t>((ch * h + y) * w + x)] +=
                    g * pb2->data[static_cast<size_t>((ch * h + ny) * w + nx)];
              if (gb)
                pb2->grad[static_cast<size_t>((ch * h + ny) * w + nx)] +=
                    g * pa2->data[static_cast<size_t>((ch * h + y) * w + x)];
            }
          }
        }
  });
}

Tensor op_div_log(const Tensor& a, const Tensor& b, double eps) {
  if (a.shape() != b.shape()) fail(Errc::shape_mismatch, "op_div_log: frame shapes differ");
  for (double v : a.vec())
    if (!(v + eps > 0.0)) fail(Errc::domain, "op_div_log: a + eps must be positive");
  for (double v : b.vec())
    if (!(v + eps > 0.0)) fail(Errc::domain, "op_div_log: b + eps must be positive");
  return sub(log_op(add_scalar(a, eps)), log_op(add_scalar(b, eps)));
}

int64_t interact_channels(ArithOp op, int64_t c, const MulParams& mul) {
  return op == ArithOp::mul ? static_cast<int64_t>(mul.p) * mul.p : c;
}

InteractionTensor span_and_interact(const ClipFeatures& x, const ContextSpec& spec, ArithOp op,
                                    const MulParams& mul, double eps) {
  int64_t t_total = x.t();
  std::vector<Tensor> frames;
  frames.reserve(static_cast<size_t>(t_total));
  for (int64_t t = 0; t < t_total; ++t) frames.push_back(slice0(x.data, t));

  std::vector<Tensor> pairs;
  pairs.reserve(static_cast<size_t>(t_total * spec.z));
  for (int t = 1; t <= static_cast<int>(t_total); ++t) {
    for (int z : context_indices(t, static_cast<int>(t_total), spec)) {
      const Tensor& anchor = frames[static_cast<size_t>(t - 1)];
      const Tensor& ctx = frames[static_cast<size_t>(z - 1)];
      switch (op) {
        case ArithOp::add: pairs.push_back(op_add(anchor, ctx)); break;
        case ArithOp::sub: pairs.push_back(op_sub(anchor, ctx)); break;
        case ArithOp::mul: pairs.push_back(op_mul_local(anchor, ctx, mul)); break;
        case ArithOp::div: pairs.push_back(op_div_log(anchor, ctx, eps)); break;
      }
    }
  }
  Tensor stacked = stack0(pairs);  // (T*Z) x C' x H x W
  int64_t cprime = interact_channels(op, x.c(), mul);
  Tensor shaped = reshape(stacked, {t_total, spec.z, cprime, x.h(), x.w()});
  return InteractionTensor{shaped, op};
}

}  // namespace atm
