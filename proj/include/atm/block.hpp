#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "atm/interact.hpp"

namespace atm {

enum class ExtractorKind { fc, mlp, conv_stack };
enum class CombineStyle { single, cascade, parallel, atm_style };

const char* extractor_name(ExtractorKind k);
ExtractorKind extractor_from_name(const std::string& name);
const char* combine_name(CombineStyle s);
CombineStyle combine_from_name(const std::string& name);

struct AtmConfig {
  std::vector<ArithOp> ops{ArithOp::sub, ArithOp::mul};
  ContextSpec context{4};
  MulParams mul{9};
  double eps = 1.0;
  ExtractorKind extractor = ExtractorKind::conv_stack;
  bool reduce_spatial = false;
  CombineStyle combine = CombineStyle::single;
  // Extractor output width; 0 means "host channel count".
  int64_t c_e = 0;
  // Shift frame features by their per-clip minimum before the division op so
  // the log arguments stay >= eps (needed when the host features can go
  // negative, e.g. attention stems).
  bool div_shift_min = false;

  void validate() const;
};

// Per-channel length-3 temporal kernel, identity at initialization.
struct TConvParams {
  Tensor weight;  // C x 3, depthwise

  static TConvParams identity(int64_t channels);
};

// x viewed as T x C x <inner>; zero padded at the clip ends.
Tensor tconv(const Tensor& x, const TConvParams& p);

// The full ATM block: spatial reduction, interaction, per-op feature
// extraction, domain transformation, residual fusion. Holds all learned
// parameters.
class AtmBlock {
 public:
  // host_c: channel count of the stem at the insertion site. The domain
  // projection is zero-initialized by default so a fresh block is the
  // identity map; pass zero_projection=false for randomized projections.
  AtmBlock(AtmConfig cfg, int64_t host_c, std::mt19937_64& rng, bool zero_projection = true);

  ClipFeatures forward(const ClipFeatures& x) const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const AtmConfig& config() const { return cfg_; }

 private:
  struct Extractor {
    ExtractorKind kind;
    // 1x1 convs for fc/mlp, 3x3 convs for conv_stack
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
  };

  Extractor make_extractor(int64_t c_in, std::mt19937_64& rng);
  // y: T x Z x C' x H x W -> T x Z x C_e x H x W
  Tensor apply_extractor(const Extractor& e, const Tensor& y) const;
  InteractionTensor interact(const ClipFeatures& x, ArithOp op) const;
  // clue: T x (n*Z*C_e) x Hr x Wr after regrouping; projects to C and fuses
  // residually with the original x.
  ClipFeatures transform(const Tensor& clue, const ClipFeatures& original) const;

  AtmConfig cfg_;
  int64_t host_c_ = 0;
  int64_t c_e_ = 0;
  std::vector<Extractor> extractors_;  // one per op
  Tensor proj_w_, proj_b_;             // 1x1 projection of the regrouped clue
  std::vector<Tensor> params_;
};

// MAC counts for the three parameterized/arithmetic parts of one ATM.
struct FlopEstimate {
  int64_t interaction = 0;
  int64_t extractor = 0;
  int64_t transform = 0;

  int64_t total() const { return interaction + extractor + transform; }
};

// Closed-form multiply-accumulate count for an ATM on a stem feature of the
// given dims; strictly increasing in Z and in the number of ops.
FlopEstimate estimate_flops(const AtmConfig& cfg, int64_t t, int64_t c, int64_t h, int64_t w);

}  // namespace atm
