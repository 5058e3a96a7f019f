#include "atm/block.hpp"

#include <cmath>
#include <set>

namespace atm {

const char* extractor_name(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::fc: return "fc";
    case ExtractorKind::mlp: return "mlp";
    case ExtractorKind::conv_stack: return "conv";
  }
  return "?";
}

ExtractorKind extractor_from_name(const std::string& name) {
  if (name == "fc") return ExtractorKind::fc;
  if (name == "mlp") return ExtractorKind::mlp;
  if (name == "conv" || name == "conv_stack") return ExtractorKind::conv_stack;
  fail(Errc::config, "unknown extractor '" + name + "'");
}

const char* combine_name(CombineStyle s) {
  switch (s) {
    case CombineStyle::single: return "single";
    case CombineStyle::cascade: return "cascade";
    case CombineStyle::parallel: return "parallel";
    case CombineStyle::atm_style: return "atm";
  }
  return "?";
}

CombineStyle combine_from_name(const std::string& name) {
  if (name == "single") return CombineStyle::single;
  if (name == "cascade") return CombineStyle::cascade;
  if (name == "parallel") return CombineStyle::parallel;
  if (name == "atm" || name == "atm_style") return CombineStyle::atm_style;
  fail(Errc::config, "unknown combine style '" + name + "'");
}

void AtmConfig::validate() const {
  if (ops.empty()) fail(Errc::config, "AtmConfig: op set must be non-empty");
  std::set<ArithOp> seen(ops.begin(), ops.end());
  if (seen.size() != ops.size()) fail(Errc::config, "AtmConfig: duplicate ops");
  if (combine == CombineStyle::single && ops.size() != 1)
    fail(Errc::config, "AtmConfig: single style takes exactly one op");
  if (combine != CombineStyle::single && ops.size() < 2)
    fail(Errc::config, "AtmConfig: " + std::string(combine_name(combine)) +
                           " style requires at least two ops");
  if (context.z < 1 || (context.z > 1 && context.z % 2 != 0))
    fail(Errc::config, "AtmConfig: Z must be 1 or even");
  if (mul.p < 1 || mul.p % 2 == 0) fail(Errc::config, "AtmConfig: P must be odd");
}

TConvParams TConvParams::identity(int64_t channels) {
  std::vector<double> w(static_cast<size_t>(channels * 3), 0.0);
  for (int64_t c = 0; c < channels; ++c) w[static_cast<size_t>(c * 3 + 1)] = 1.0;
  return TConvParams{Tensor::from_data({channels, 3}, std::move(w), true)};
}

Tensor tconv(const Tensor& x, const TConvParams& p) {
  if (x.ndim() < 2) fail(Errc::invalid_argument, "tconv: expected T x C x ...");
  int64_t t = x.dim(0), c = x.dim(1);
  if (p.weight.ndim() != 2 || p.weight.dim(0) != c || p.weight.dim(1) != 3)
    fail(Errc::shape_mismatch, "tconv: weight must be C x 3");
  int64_t inner = x.size() / (t * c);
  std::vector<double> out(static_cast<size_t>(x.size()), 0.0);
  const double* px = x.data();
  const double* pw = p.weight.data();
  for (int64_t ti = 0; ti < t; ++ti)
    for (int64_t ci = 0; ci < c; ++ci) {
      double* o = out.data() + (ti * c + ci) * inner;
      for (int d = -1; d <= 1; ++d) {
        int64_t ts = ti + d;
        if (ts < 0 || ts >= t) continue;  // zero padding at clip ends
        double wv = pw[ci * 3 + (d + 1)];
        if (wv == 0.0) continue;
        const double* s = px + (ts * c + ci) * inner;
        for (int64_t k = 0; k < inner; ++k) o[k] += wv * s[k];
      }
    }
  return make_node(x.shape(), std::move(out), {x, p.weight}, [t, c, inner](detail::Node& nd) {
    auto& px2 = nd.parents[0];
    auto& pw2 = nd.parents[1];
    bool gx = px2->requires_grad, gw = pw2->requires_grad;
    if (gx) px2->ensure_grad();
    if (gw) pw2->ensure_grad();
    for (int64_t ti = 0; ti < t; ++ti)
      for (int64_t ci = 0; ci < c; ++ci) {
        const double* g = nd.grad.data() + (ti * c + ci) * inner;
        for (int d = -1; d <= 1; ++d) {
          int64_t ts = ti + d;
          if (ts < 0 || ts >= t) continue;
          double wv = pw2->data[static_cast<size_t>(ci * 3 + (d + 1))];
          const double* s = px2->data.data() + (ts * c + ci) * inner;
          double* xg = gx ? px2->grad.data() + (ts * c + ci) * inner : nullptr;
          double wacc = 0.0;
          for (int64_t k = 0; k < inner; ++k) {
            if (gx) xg[k] += g[k] * wv;
            wacc += g[k] * s[k];
          }
          if (gw) pw2->grad[static_cast<size_t>(ci * 3 + (d + 1))] += wacc;
        }
      }
  });
}

namespace {

Tensor init_conv_weight(int64_t cout, int64_t cin, int64_t k, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
  return Tensor::uniform({cout, cin, k, k}, -bound, bound, rng, true);
}

Tensor init_bias(int64_t cout, int64_t fan_in, std::mt19937_64& rng) {
  double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform({cout}, -bound, bound, rng, true);
}

}  // namespace

AtmBlock::AtmBlock(AtmConfig cfg, int64_t host_c, std::mt19937_64& rng, bool zero_projection)
    : cfg_(std::move(cfg)), host_c_(host_c) {
  c_e_ = cfg_.c_e > 0 ? cfg_.c_e : host_c;
  int64_t z = cfg_.context.z;

  for (size_t i = 0; i < cfg_.ops.size(); ++i) {
    int64_t stage_c = host_c;
    if (cfg_.combine == CombineStyle::cascade && i > 0) stage_c = z * c_e_;
    int64_t c_in = interact_channels(cfg_.ops[i], stage_c, cfg_.mul);
    extractors_.push_back(make_extractor(c_in, rng));
  }

  int64_t proj_in = z * c_e_;
  if (cfg_.combine == CombineStyle::atm_style) proj_in *= static_cast<int64_t>(cfg_.ops.size());
  if (zero_projection) {
    proj_w_ = Tensor::zeros({host_c, proj_in, 1, 1}, true);
    proj_b_ = Tensor::zeros({host_c}, true);
  } else {
    proj_w_ = init_conv_weight(host_c, proj_in, 1, rng);
    proj_b_ = init_bias(host_c, proj_in, rng);
  }
  params_.push_back(proj_w_);
  params_.push_back(proj_b_);
}

AtmBlock::Extractor AtmBlock::make_extractor(int64_t c_in, std::mt19937_64& rng) {
  Extractor e;
  e.kind = cfg_.extractor;
  auto push = [&](int64_t ci, int64_t co, int64_t k) {
    e.weights.push_back(init_conv_weight(co, ci, k, rng));
    e.biases.push_back(init_bias(co, ci * k * k, rng));
  };
  switch (cfg_.extractor) {
    case ExtractorKind::fc:
      push(c_in, c_e_, 1);
      break;
    case ExtractorKind::mlp:
      push(c_in, c_e_, 1);
      push(c_e_, c_e_, 1);
      push(c_e_, c_e_, 1);
      break;
    case ExtractorKind::conv_stack:
      push(c_in, c_e_, 3);
      push(c_e_, c_e_, 3);
      break;
  }
  for (auto& w : e.weights) params_.push_back(w);
  for (auto& b : e.biases) params_.push_back(b);
  return e;
}

Tensor AtmBlock::apply_extractor(const Extractor& e, const Tensor& y) const {
  int64_t t = y.dim(0), z = y.dim(1), c = y.dim(2), h = y.dim(3), w = y.dim(4);
  Tensor cur = reshape(y, {t * z, c, h, w});
  int pad = e.kind == ExtractorKind::conv_stack ? 1 : 0;
  for (size_t i = 0; i < e.weights.size(); ++i) {
    if (i > 0) cur = relu(cur);
    cur = conv2d(cur, e.weights[i], e.biases[i], 1, pad);
  }
  return reshape(cur, {t, z, c_e_, h, w});
}

InteractionTensor AtmBlock::interact(const ClipFeatures& x, ArithOp op) const {
  if (op == ArithOp::div && cfg_.div_shift_min) {
    Tensor m = min_all(x.data);
    ClipFeatures shifted{sub_bcast(x.data, m)};
    return span_and_interact(shifted, cfg_.context, op, cfg_.mul, cfg_.eps);
  }
  return span_and_interact(x, cfg_.context, op, cfg_.mul, cfg_.eps);
}

ClipFeatures AtmBlock::transform(const Tensor& clue, const ClipFeatures& original) const {
  if (clue.dim(2) != original.h() || clue.dim(3) != original.w())
    fail(Errc::shape_mismatch, "domain_transform: clue spatial dims " + shape_str(clue.shape()) +
                                   " do not match stem " + shape_str(original.data.shape()));
  Tensor projected = conv2d(clue, proj_w_, proj_b_, 1, 0);
  return ClipFeatures{add(original.data, projected)};
}

ClipFeatures AtmBlock::forward(const ClipFeatures& x) const {
  if (cfg_.reduce_spatial && (x.h() % 2 != 0 || x.w() % 2 != 0))
    fail(Errc::invalid_argument, "atm_forward: reduce_spatial needs even spatial dims");
  ClipFeatures xin = cfg_.reduce_spatial ? ClipFeatures{avg_pool2(x.data)} : x;
  int64_t t = xin.t(), z = cfg_.context.z, h = xin.h(), w = xin.w();

  auto regroup = [&](const Tensor& e) { return reshape(e, {t, z * c_e_, h, w}); };

  Tensor clue;
  switch (cfg_.combine) {
    case CombineStyle::single: {
      Tensor e = apply_extractor(extractors_[0], interact(xin, cfg_.ops[0]).data);
      clue = regroup(e);
      break;
    }
    case CombineStyle::cascade: {
      // each op's interaction runs on the previous op's extracted clue
      ClipFeatures cur = xin;
      for (size_t i = 0; i < cfg_.ops.size(); ++i) {
        ArithOp op = cfg_.ops[i];
        InteractionTensor y = i == 0 ? interact(cur, op)
                                     : (op == ArithOp::div
                                            ? InteractionTensor{span_and_interact(
                                                  ClipFeatures{sub_bcast(cur.data, min_all(cur.data))},
                                                  cfg_.context, op, cfg_.mul, cfg_.eps)}
                                            : span_and_interact(cur, cfg_.context, op, cfg_.mul, cfg_.eps));
        cur = ClipFeatures{regroup(apply_extractor(extractors_[i], y.data))};
      }
      clue = cur.data;
      break;
    }
    case CombineStyle::parallel: {
      for (size_t i = 0; i < cfg_.ops.size(); ++i) {
        Tensor e = regroup(apply_extractor(extractors_[i], interact(xin, cfg_.ops[i]).data));
        clue = i == 0 ? e : add(clue, e);
      }
      break;
    }
    case CombineStyle::atm_style: {
      std::vector<Tensor> clues;
      for (size_t i = 0; i < cfg_.ops.size(); ++i)
        clues.push_back(regroup(apply_extractor(extractors_[i], interact(xin, cfg_.ops[i]).data)));
      clue = concat(clues, 1);
      break;
    }
  }

  if (cfg_.reduce_spatial) clue = upsample2(clue);
  return transform(clue, x);
}

FlopEstimate estimate_flops(const AtmConfig& cfg, int64_t t, int64_t c, int64_t h, int64_t w) {
  int64_t z = cfg.context.z;
  int64_t hr = cfg.reduce_spatial ? h / 2 : h;
  int64_t wr = cfg.reduce_spatial ? w / 2 : w;
  int64_t c_e = cfg.c_e > 0 ? cfg.c_e : c;
  int64_t p2 = static_cast<int64_t>(cfg.mul.p) * cfg.mul.p;

  FlopEstimate est;
  for (size_t i = 0; i < cfg.ops.size(); ++i) {
    int64_t stage_c = c;
    if (cfg.combine == CombineStyle::cascade && i > 0) stage_c = z * c_e;
    int64_t spatial = t * z * hr * wr;
    // interaction: one MAC per output element for the pointwise ops, a
    // channel dot product per neighborhood offset for local multiplication
    est.interaction += cfg.ops[i] == ArithOp::mul ? spatial * p2 * stage_c : spatial * stage_c;
    int64_t c_in = interact_channels(cfg.ops[i], stage_c, cfg.mul);
    switch (cfg.extractor) {
      case ExtractorKind::fc:
        est.extractor += spatial * c_in * c_e;
        break;
      case ExtractorKind::mlp:
        est.extractor += spatial * (c_in * c_e + 2 * c_e * c_e);
        break;
      case ExtractorKind::conv_stack:
        est.extractor += spatial * 9 * (c_in * c_e + c_e * c_e);
        break;
    }
  }
  int64_t proj_in = z * c_e;
  if (cfg.combine == CombineStyle::atm_style) proj_in *= static_cast<int64_t>(cfg.ops.size());
  est.transform = t * h * w * proj_in * c;
  return est;
}

}  // namespace atm
