#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "atm/block.hpp"

namespace atm {

enum class StemKind { cnn, attention };

const char* stem_kind_name(StemKind k);
StemKind stem_kind_from_name(const std::string& name);

// Fixed toy plans: the CNN stem is 3 stages of 2 conv blocks with channels
// 8 -> 16 -> 32 and stride-2 entering stages 2 and 3; the attention stem is
// 4 pre-norm transformer layers of width 32 with 4 heads, patch size 4 and a
// CLS token.
struct StemConfig {
  StemKind kind = StemKind::cnn;
  int atm_site = 2;  // stage index (cnn) or layer index (attention), 1-based
  bool use_tconv = false;
  int num_classes = 2;

  void validate() const;
};

// B x T x C_img x H x W pixel clips with class labels, values in [0, 1].
struct ClipBatch {
  Tensor clips;
  std::vector<int> labels;

  int64_t b() const { return clips.dim(0); }
  int64_t t() const { return clips.dim(1); }
};

// A toy stem with an optional ATM at the configured site. Owns all
// parameters; forward passes are deterministic in the construction seed.
class Model {
 public:
  Model(StemConfig stem, std::optional<AtmConfig> atm, uint64_t seed, bool zero_projection = true);

  // clips: B x T x C_img x H x W -> logits B x num_classes
  Tensor forward(const Tensor& clips) const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const StemConfig& stem_config() const { return stem_; }
  const std::optional<AtmConfig>& atm_config() const { return atm_cfg_; }

  static constexpr int kCnnStages = 3;
  static constexpr int kVitLayers = 4;
  static constexpr int kVitWidth = 32;
  static constexpr int kVitHeads = 4;
  static constexpr int kPatchSize = 4;

 private:
  struct Conv {
    Tensor w, b;
    int stride = 1, pad = 1;
  };
  struct VitLayer {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };

  Conv make_conv(int64_t cin, int64_t cout, int k, int stride, std::mt19937_64& rng);
  Tensor make_linear_w(int64_t out, int64_t in, std::mt19937_64& rng);
  void build_cnn(std::mt19937_64& rng);
  void build_vit(std::mt19937_64& rng);
  Tensor forward_cnn(const Tensor& clips) const;
  Tensor forward_vit(const Tensor& clips) const;
  Tensor attention(const VitLayer& l, const Tensor& x) const;  // x: (N+1) x D
  // temporal depthwise conv over a batch of clips, x: (B*T) x C x H x W
  Tensor apply_tconv_frames(const Tensor& x, int64_t b, int64_t t, const TConvParams& p) const;

  StemConfig stem_;
  std::optional<AtmConfig> atm_cfg_;
  std::unique_ptr<AtmBlock> atm_;
  std::vector<Tensor> params_;

  // cnn
  std::vector<std::vector<Conv>> stages_;
  std::vector<TConvParams> stage_tconvs_;  // one per block in stages after the ATM site
  Tensor head_w_, head_b_;

  // attention
  Conv patch_embed_;
  Tensor cls_token_, pos_embed_;
  std::vector<VitLayer> layers_;
  std::vector<TConvParams> cls_tconvs_;
  Tensor final_ln_g_, final_ln_b_;
};

// Temporally blind reference model: the same stem with no ATM and no T-Conv.
Tensor baseline_forward(const Model& model, const Tensor& clips);

}  // namespace atm
