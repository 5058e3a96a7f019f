#pragma once

#include <vector>

#include "atm/tensor.hpp"

namespace atm {

// Per-clip feature stack, data shaped T x C x H x W.
struct ClipFeatures {
  Tensor data;

  int64_t t() const { return data.dim(0); }
  int64_t c() const { return data.dim(1); }
  int64_t h() const { return data.dim(2); }
  int64_t w() const { return data.dim(3); }
};

// Context range Z with clamp-to-[1,T] boundary handling.
struct ContextSpec {
  int z = 4;
};

enum class ArithOp { add, sub, mul, div };

const char* arith_op_name(ArithOp op);
ArithOp arith_op_from_name(const std::string& name);

// Local-multiplication neighborhood: P odd, max offset k = (P-1)/2.
struct MulParams {
  int p = 9;

  int k() const { return (p - 1) / 2; }
};

// Interaction output T x Z x C' x H x W, with C' = C for add/sub/div and
// C' = P*P for mul.
struct InteractionTensor {
  Tensor data;
  ArithOp channel_kind;
};

// Context indices for anchor frame t (1-based), clamped into [1, T].
// Z == 1 gives {t+1}; even Z gives the previous Z/2 then next Z/2 frames in
// ascending temporal order. Other Z values are rejected.
std::vector<int> context_indices(int t, int t_total, const ContextSpec& spec);

// Pair-wise ops on C x H x W frames.
Tensor op_add(const Tensor& a, const Tensor& b);
Tensor op_sub(const Tensor& a, const Tensor& b);
// Channel dot products against a P x P neighborhood of b (zero padded),
// output P*P x H x W with offsets enumerated row-major over (di, dj).
Tensor op_mul_local(const Tensor& a, const Tensor& b, const MulParams& p);
// log(a + eps) - log(b + eps); all entries of a + eps and b + eps must be > 0.
Tensor op_div_log(const Tensor& a, const Tensor& b, double eps);

// Eq.-style composite signal: entry (t, slot z) = psi(X_t, X_z) for every
// anchor t and spanned context index z, stacked into T x Z x C' x H x W.
// The anchor is always the first operand.
InteractionTensor span_and_interact(const ClipFeatures& x, const ContextSpec& spec, ArithOp op,
                                    const MulParams& mul, double eps);

// Interaction channel count for a given op.
int64_t interact_channels(ArithOp op, int64_t c, const MulParams& mul);

}  // namespace atm
