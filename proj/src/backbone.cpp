#include "atm/backbone.hpp"

#include <cmath>

namespace atm {

namespace {
constexpr int64_t kInputChannels = 1;
constexpr int64_t kCnnChannels[3] = {8, 16, 32};
constexpr int64_t kVitMlpHidden = 64;
constexpr uint64_t kAtmSeedSalt = 0x9e3779b97f4a7c15ull;
}  // namespace

const char* stem_kind_name(StemKind k) { return k == StemKind::cnn ? "cnn" : "attention"; }

StemKind stem_kind_from_name(const std::string& name) {
  if (name == "cnn") return StemKind::cnn;
  if (name == "attention" || name == "vit") return StemKind::attention;
  fail(Errc::config, "unknown stem kind '" + name + "'");
}

void StemConfig::validate() const {
  int max_site = kind == StemKind::cnn ? Model::kCnnStages : Model::kVitLayers;
  if (atm_site < 1 || atm_site > max_site)
    fail(Errc::config, "atm_site out of range for " + std::string(stem_kind_name(kind)));
  if (num_classes < 2) fail(Errc::config, "num_classes must be >= 2");
  static_assert(Model::kVitWidth % Model::kVitHeads == 0);
}

Model::Conv Model::make_conv(int64_t cin, int64_t cout, int k, int stride, std::mt19937_64& rng) {
  // He-style bound: keeps the activation variance roughly constant through
  // the relu stack so weak temporal signals are not attenuated away
  double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
  Conv c;
  c.w = Tensor::uniform({cout, cin, k, k}, -bound, bound, rng, true);
  c.b = Tensor::uniform({cout}, -0.01, 0.01, rng, true);
  c.stride = stride;
  c.pad = k == 1 ? 0 : (k - 1) / 2;
  params_.push_back(c.w);
  params_.push_back(c.b);
  return c;
}

Tensor Model::make_linear_w(int64_t out, int64_t in, std::mt19937_64& rng) {
  double bound = std::sqrt(1.0 / static_cast<double>(in));
  Tensor w = Tensor::uniform({out, in}, -bound, bound, rng, true);
  params_.push_back(w);
  return w;
}

Model::Model(StemConfig stem, std::optional<AtmConfig> atm, uint64_t seed, bool zero_projection)
    : stem_(stem), atm_cfg_(std::move(atm)) {
  stem_.validate();
  if (atm_cfg_) atm_cfg_->validate();
  std::mt19937_64 stem_rng(seed);
  if (stem_.kind == StemKind::cnn)
    build_cnn(stem_rng);
  else
    build_vit(stem_rng);

  if (atm_cfg_) {
    // separate stream: inserting an ATM must not disturb the stem's init
    std::mt19937_64 atm_rng(seed ^ kAtmSeedSalt);
    int64_t host_c = stem_.kind == StemKind::cnn ? kCnnChannels[stem_.atm_site - 1]
                                                 : static_cast<int64_t>(kVitWidth);
    atm_ = std::make_unique<AtmBlock>(*atm_cfg_, host_c, atm_rng, zero_projection);
    for (auto& p : atm_->params()) params_.push_back(p);
  }
}

void Model::build_cnn(std::mt19937_64& rng) {
  int64_t cin = kInputChannels;
  for (int s = 0; s < kCnnStages; ++s) {
    std::vector<Conv> blocks;
    blocks.push_back(make_conv(cin, kCnnChannels[s], 3, s == 0 ? 1 : 2, rng));
    blocks.push_back(make_conv(kCnnChannels[s], kCnnChannels[s], 3, 1, rng));
    stages_.push_back(std::move(blocks));
    cin = kCnnChannels[s];
  }
  double bound = std::sqrt(1.0 / static_cast<double>(cin));
  head_w_ = Tensor::uniform({stem_.num_classes, cin}, -bound, bound, rng, true);
  head_b_ = Tensor::uniform({stem_.num_classes}, -bound, bound, rng, true);
  params_.push_back(head_w_);
  params_.push_back(head_b_);

  if (stem_.use_tconv) {
    // one depthwise temporal conv per block of every stage past the ATM site
    for (int s = stem_.atm_site; s < kCnnStages; ++s)
      for (int blk = 0; blk < 2; ++blk) {
        stage_tconvs_.push_back(TConvParams::identity(kCnnChannels[s]));
        params_.push_back(stage_tconvs_.back().weight);
      }
  }
}

void Model::build_vit(std::mt19937_64& rng) {
  patch_embed_ = make_conv(kInputChannels, kVitWidth, kPatchSize, kPatchSize, rng);
  patch_embed_.pad = 0;
  cls_token_ = make_linear_w(1, kVitWidth, rng);
  double bound = std::sqrt(1.0 / static_cast<double>(kVitWidth));
  // fixed positional table, truncated to the token count at forward time;
  // covers images up to 64x64 (16x16 patches + CLS)
  pos_embed_ = Tensor::uniform({16 * 16 + 1, kVitWidth}, -bound, bound, rng, true);
  params_.push_back(pos_embed_);

  for (int l = 0; l < kVitLayers; ++l) {
    VitLayer layer;
    layer.ln1_g = Tensor::full({kVitWidth}, 1.0, true);
    layer.ln1_b = Tensor::zeros({kVitWidth}, true);
    layer.ln2_g = Tensor::full({kVitWidth}, 1.0, true);
    layer.ln2_b = Tensor::zeros({kVitWidth}, true);
    params_.push_back(layer.ln1_g);
    params_.push_back(layer.ln1_b);
    params_.push_back(layer.ln2_g);
    params_.push_back(layer.ln2_b);
    layer.wq = make_linear_w(kVitWidth, kVitWidth, rng);
    layer.bq = Tensor::zeros({kVitWidth}, true);
    params_.push_back(layer.bq);
    layer.wk = make_linear_w(kVitWidth, kVitWidth, rng);
    layer.bk = Tensor::zeros({kVitWidth}, true);
    params_.push_back(layer.bk);
    layer.wv = make_linear_w(kVitWidth, kVitWidth, rng);
    layer.bv = Tensor::zeros({kVitWidth}, true);
    params_.push_back(layer.bv);
    layer.wo = make_linear_w(kVitWidth, kVitWidth, rng);
    layer.bo = Tensor::zeros({kVitWidth}, true);
    params_.push_back(layer.bo);
    layer.mlp_w1 = make_linear_w(kVitMlpHidden, kVitWidth, rng);
    layer.mlp_b1 = Tensor::zeros({kVitMlpHidden}, true);
    params_.push_back(layer.mlp_b1);
    layer.mlp_w2 = make_linear_w(kVitWidth, kVitMlpHidden, rng);
    layer.mlp_b2 = Tensor::zeros({kVitWidth}, true);
    params_.push_back(layer.mlp_b2);
    layers_.push_back(std::move(layer));

    if (stem_.use_tconv) {
      cls_tconvs_.push_back(TConvParams::identity(kVitWidth));
      params_.push_back(cls_tconvs_.back().weight);
    }
  }

  final_ln_g_ = Tensor::full({kVitWidth}, 1.0, true);
  final_ln_b_ = Tensor::zeros({kVitWidth}, true);
  params_.push_back(final_ln_g_);
  params_.push_back(final_ln_b_);
  head_w_ = make_linear_w(stem_.num_classes, kVitWidth, rng);
  head_b_ = Tensor::zeros({stem_.num_classes}, true);
  params_.push_back(head_b_);
}

Tensor Model::apply_tconv_frames(const Tensor& x, int64_t b, int64_t t, const TConvParams& p) const {
  Shape frame_shape = x.shape();  // (B*T) x C x H x W
  Tensor clips = reshape(x, {b, t, frame_shape[1], frame_shape[2], frame_shape[3]});
  std::vector<Tensor> per_clip;
  per_clip.reserve(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) per_clip.push_back(tconv(slice0(clips, i), p));
  return reshape(stack0(per_clip), frame_shape);
}

Tensor Model::forward(const Tensor& clips) const {
  if (clips.ndim() != 5) fail(Errc::invalid_argument, "forward: clips must be B x T x C x H x W");
  if (clips.dim(2) != kInputChannels)
    fail(Errc::invalid_argument, "forward: expected single-channel clips");
  return stem_.kind == StemKind::cnn ? forward_cnn(clips) : forward_vit(clips);
}

Tensor Model::forward_cnn(const Tensor& clips) const {
  int64_t b = clips.dim(0), t = clips.dim(1), h = clips.dim(3), w = clips.dim(4);
  Tensor x = reshape(clips, {b * t, kInputChannels, h, w});
  size_t tconv_idx = 0;
  for (int s = 0; s < kCnnStages; ++s) {
    bool tconv_here = stem_.use_tconv && s + 1 > stem_.atm_site;
    for (const Conv& cv : stages_[static_cast<size_t>(s)]) {
      x = relu(conv2d(x, cv.w, cv.b, cv.stride, cv.pad));
      if (tconv_here) x = apply_tconv_frames(x, b, t, stage_tconvs_[tconv_idx++]);
    }
    if (s + 1 == stem_.atm_site && atm_) {
      Shape fs = x.shape();
      Tensor grouped = reshape(x, {b, t, fs[1], fs[2], fs[3]});
      std::vector<Tensor> outs;
      outs.reserve(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i)
        outs.push_back(atm_->forward(ClipFeatures{slice0(grouped, i)}).data);
      x = reshape(stack0(outs), fs);
    }
  }
  Tensor feat = mean_spatial(x);                                   // (B*T) x C
  Tensor pooled = mean_mid_canonical(feat, b, t, feat.dim(1));     // B x C
  return linear(pooled, head_w_, head_b_);
}

Tensor Model::attention(const VitLayer& l, const Tensor& x) const {
  int64_t dh = kVitWidth / kVitHeads;
  Tensor q = linear(x, l.wq, l.bq);
  Tensor k = linear(x, l.wk, l.bk);
  Tensor v = linear(x, l.wv, l.bv);
  std::vector<Tensor> heads;
  heads.reserve(kVitHeads);
  for (int hI = 0; hI < kVitHeads; ++hI) {
    Tensor qh = narrow(q, 1, hI * dh, dh);
    Tensor kh = narrow(k, 1, hI * dh, dh);
    Tensor vh = narrow(v, 1, hI * dh, dh);
    Tensor scores = scale(matmul(qh, transpose2(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return linear(concat(heads, 1), l.wo, l.bo);
}

Tensor Model::forward_vit(const Tensor& clips) const {
  int64_t b = clips.dim(0), t = clips.dim(1), h = clips.dim(3), w = clips.dim(4);
  if (h % kPatchSize != 0 || w % kPatchSize != 0)
    fail(Errc::invalid_argument, "vit stem: image dims must be divisible by the patch size");
  int64_t gh = h / kPatchSize, gw = w / kPatchSize, n = gh * gw;
  if (n + 1 > pos_embed_.dim(0))
    fail(Errc::invalid_argument, "vit stem: image larger than the positional table supports");

  Tensor flat = reshape(clips, {b * t, kInputChannels, h, w});
  Tensor pe = conv2d(flat, patch_embed_.w, patch_embed_.b, kPatchSize, 0);  // (B*T) x D x gh x gw
  Tensor pos = narrow(pos_embed_, 0, 0, n + 1);

  // token matrices (N+1) x D, per clip per frame
  std::vector<std::vector<Tensor>> tok(static_cast<size_t>(b));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ti = 0; ti < t; ++ti) {
      Tensor fr = slice0(pe, bi * t + ti);                    // D x gh x gw
      Tensor spatial = transpose2(reshape(fr, {kVitWidth, n}));  // N x D
      tok[static_cast<size_t>(bi)].push_back(add(concat({cls_token_, spatial}, 0), pos));
    }

  for (int l = 0; l < kVitLayers; ++l) {
    const VitLayer& layer = layers_[static_cast<size_t>(l)];
    for (auto& clip : tok)
      for (auto& x : clip)
        x = add(x, attention(layer, layer_norm(x, layer.ln1_g, layer.ln1_b, 1e-5)));

    if (l + 1 == stem_.atm_site && atm_) {
      // ATM runs on the spatial tokens reshaped to a 2-D grid; CLS is excluded
      for (auto& clip : tok) {
        std::vector<Tensor> grids;
        grids.reserve(clip.size());
        for (auto& x : clip)
          grids.push_back(reshape(transpose2(narrow(x, 0, 1, n)), {kVitWidth, gh, gw}));
        ClipFeatures out = atm_->forward(ClipFeatures{stack0(grids)});
        for (size_t ti = 0; ti < clip.size(); ++ti) {
          Tensor spatial = transpose2(reshape(slice0(out.data, static_cast<int64_t>(ti)), {kVitWidth, n}));
          clip[ti] = concat({narrow(clip[ti], 0, 0, 1), spatial}, 0);
        }
      }
    }

    for (auto& clip : tok)
      for (auto& x : clip) {
        Tensor m = linear(relu(linear(layer_norm(x, layer.ln2_g, layer.ln2_b, 1e-5), layer.mlp_w1,
                                      layer.mlp_b1)),
                          layer.mlp_w2, layer.mlp_b2);
        x = add(x, m);
      }

    if (stem_.use_tconv) {
      const TConvParams& tc = cls_tconvs_[static_cast<size_t>(l)];
      for (auto& clip : tok) {
        std::vector<Tensor> cls_rows;
        cls_rows.reserve(clip.size());
        for (auto& x : clip) cls_rows.push_back(narrow(x, 0, 0, 1));
        Tensor cls_seq = tconv(concat(cls_rows, 0), tc);  // T x D
        for (size_t ti = 0; ti < clip.size(); ++ti)
          clip[ti] = concat({narrow(cls_seq, 0, static_cast<int64_t>(ti), 1),
                             narrow(clip[ti], 0, 1, n)},
                            0);
      }
    }
  }

  std::vector<Tensor> clip_feats;
  clip_feats.reserve(static_cast<size_t>(b));
  for (auto& clip : tok) {
    std::vector<Tensor> cls_rows;
    cls_rows.reserve(clip.size());
    for (auto& x : clip)
      cls_rows.push_back(narrow(layer_norm(x, final_ln_g_, final_ln_b_, 1e-5), 0, 0, 1));
    Tensor seq = concat(cls_rows, 0);  // T x D
    clip_feats.push_back(mean_mid_canonical(seq, 1, t, kVitWidth));  // 1 x D
  }
  return linear(concat(clip_feats, 0), head_w_, head_b_);
}

Tensor baseline_forward(const Model& model, const Tensor& clips) {
  if (model.atm_config() || model.stem_config().use_tconv)
    fail(Errc::invalid_argument, "baseline_forward: model must have no ATM and no T-Conv");
  return model.forward(clips);
}

}  // namespace atm
