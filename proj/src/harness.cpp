#include "atm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

namespace atm {

namespace {

constexpr uint64_t kDataOrderSalt = 0xa5a5a5a55a5a5a5aull;

int64_t cnn_stage_channels(int site) {
  const int64_t plan[3] = {8, 16, 32};
  return plan[site - 1];
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1 || lr < 0.0 || momentum < 0.0 || weight_decay < 0.0 ||
      grad_clip < 0.0)
    fail(Errc::config, "TrainConfig: negative hyperparameter");
  stem.validate();
  if (atm) atm->validate();
  int classes = synth_task_classes(dataset.base.task);
  if (stem.num_classes != classes)
    fail(Errc::config, "TrainConfig: num_classes does not match the dataset task");
  if (dataset.train_clips < classes || dataset.test_clips < classes)
    fail(Errc::config, "TrainConfig: empty split");
}

AtmConfig atm_config_from_json(const json& j) {
  AtmConfig cfg;
  if (j.contains("ops")) {
    cfg.ops.clear();
    for (const auto& o : j.at("ops")) cfg.ops.push_back(arith_op_from_name(o.get<std::string>()));
  }
  cfg.context.z = j.value("z", cfg.context.z);
  cfg.mul.p = j.value("p", cfg.mul.p);
  cfg.eps = j.value("eps", cfg.eps);
  if (j.contains("extractor")) cfg.extractor = extractor_from_name(j.at("extractor").get<std::string>());
  cfg.reduce_spatial = j.value("reduce_spatial", cfg.reduce_spatial);
  if (j.contains("combine")) cfg.combine = combine_from_name(j.at("combine").get<std::string>());
  cfg.c_e = j.value("c_e", cfg.c_e);
  cfg.div_shift_min = j.value("div_shift_min", cfg.div_shift_min);
  cfg.validate();
  return cfg;
}

json atm_config_to_json(const AtmConfig& cfg) {
  json ops = json::array();
  for (ArithOp o : cfg.ops) ops.push_back(arith_op_name(o));
  return json{{"ops", ops},
              {"z", cfg.context.z},
              {"p", cfg.mul.p},
              {"eps", cfg.eps},
              {"extractor", extractor_name(cfg.extractor)},
              {"reduce_spatial", cfg.reduce_spatial},
              {"combine", combine_name(cfg.combine)},
              {"c_e", cfg.c_e},
              {"div_shift_min", cfg.div_shift_min}};
}

namespace {

SynthClipSpec clip_spec_from_json(const json& j) {
  SynthClipSpec s;
  if (j.contains("task")) s.task = synth_task_from_name(j.at("task").get<std::string>());
  s.frames = j.value("frames", s.frames);
  s.image_size = j.value("image_size", s.image_size);
  s.blob_radius = j.value("blob_radius", s.blob_radius);
  s.velocity = j.value("velocity", s.velocity);
  s.noise_stddev = j.value("noise_stddev", s.noise_stddev);
  return s;
}

json clip_spec_to_json(const SynthClipSpec& s) {
  return json{{"task", synth_task_name(s.task)},   {"frames", s.frames},
              {"image_size", s.image_size},        {"blob_radius", s.blob_radius},
              {"velocity", s.velocity},            {"noise_stddev", s.noise_stddev}};
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("stem")) {
    const json& s = j.at("stem");
    if (s.contains("kind")) cfg.stem.kind = stem_kind_from_name(s.at("kind").get<std::string>());
    cfg.stem.atm_site = s.value("atm_site", cfg.stem.atm_site);
    cfg.stem.use_tconv = s.value("use_tconv", cfg.stem.use_tconv);
  }
  if (j.contains("atm") && !j.at("atm").is_null()) cfg.atm = atm_config_from_json(j.at("atm"));
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    cfg.dataset.base = clip_spec_from_json(d);
    cfg.dataset.train_clips = d.value("train_clips", cfg.dataset.train_clips);
    cfg.dataset.test_clips = d.value("test_clips", cfg.dataset.test_clips);
  }
  cfg.stem.num_classes = synth_task_classes(cfg.dataset.base.task);
  cfg.validate();
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  json stem{{"kind", stem_kind_name(cfg.stem.kind)},
            {"atm_site", cfg.stem.atm_site},
            {"use_tconv", cfg.stem.use_tconv},
            {"num_classes", cfg.stem.num_classes}};
  json dataset = clip_spec_to_json(cfg.dataset.base);
  dataset["train_clips"] = cfg.dataset.train_clips;
  dataset["test_clips"] = cfg.dataset.test_clips;
  return json{{"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.lr},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"grad_clip", cfg.grad_clip},
              {"seed", cfg.seed},
              {"stem", stem},
              {"atm", cfg.atm ? atm_config_to_json(*cfg.atm) : json(nullptr)},
              {"dataset", dataset}};
}

json report_to_json(const RunReport& r) {
  return json{{"epochs", r.epoch_losses},
              {"test_top1", r.test_top1},
              {"macs", r.macs},
              {"wall_ms", r.wall_ms},
              {"config", r.config_echo}};
}

namespace {

Tensor batch_tensor(const std::vector<Clip>& clips, const std::vector<int>& idx, size_t lo,
                    size_t hi, std::vector<int>& labels) {
  const Tensor& first = clips[static_cast<size_t>(idx[lo])].frames;
  int64_t per = first.size();
  Shape shape = first.shape();
  shape.insert(shape.begin(), static_cast<int64_t>(hi - lo));
  std::vector<double> data(static_cast<size_t>(per) * (hi - lo));
  labels.clear();
  for (size_t i = lo; i < hi; ++i) {
    const Clip& c = clips[static_cast<size_t>(idx[i])];
    std::memcpy(data.data() + (i - lo) * static_cast<size_t>(per), c.frames.data(),
                static_cast<size_t>(per) * sizeof(double));
    labels.push_back(c.label);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

FlopEstimate site_flops(const TrainConfig& cfg) {
  if (!cfg.atm) return {};
  int64_t t = cfg.dataset.base.frames;
  int64_t img = cfg.dataset.base.image_size;
  int64_t c, h;
  if (cfg.stem.kind == StemKind::cnn) {
    c = cnn_stage_channels(cfg.stem.atm_site);
    h = img >> (cfg.stem.atm_site - 1);
  } else {
    c = Model::kVitWidth;
    h = img / Model::kPatchSize;
  }
  return estimate_flops(*cfg.atm, t, c, h, h);
}

}  // namespace

double evaluate(const Model& model, const std::vector<Clip>& split) {
  if (split.empty()) fail(Errc::invalid_argument, "evaluate: empty split");
  size_t correct = 0;
  const size_t chunk = 16;
  std::vector<int> idx(split.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[static_cast<size_t>(i)] = static_cast<int>(i);
  for (size_t lo = 0; lo < split.size(); lo += chunk) {
    size_t hi = std::min(lo + chunk, split.size());
    std::vector<int> labels;
    Tensor batch = batch_tensor(split, idx, lo, hi, labels);
    Tensor logits = model.forward(batch);
    int64_t k = logits.dim(1);
    for (size_t i = 0; i < hi - lo; ++i) {
      const double* row = logits.data() + static_cast<int64_t>(i) * k;
      int best = 0;  // ties break toward the lowest class index
      for (int64_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
      if (best == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

RunReport train(const TrainConfig& cfg, Model* out_model) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();

  int classes = synth_task_classes(cfg.dataset.base.task);
  std::vector<Clip> train_split = gen_split(cfg.dataset.base, cfg.dataset.train_clips, 0);
  std::vector<Clip> test_split = gen_split(cfg.dataset.base, cfg.dataset.test_clips,
                                           static_cast<uint64_t>(cfg.dataset.train_clips / classes));

  Model model(cfg.stem, cfg.atm, cfg.seed);
  auto& params = model.params();
  std::vector<std::vector<double>> velocity(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    velocity[i].assign(static_cast<size_t>(params[i].size()), 0.0);

  std::mt19937_64 order_rng(cfg.seed ^ kDataOrderSalt);
  std::vector<int> idx(train_split.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  RunReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), order_rng);
    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t lo = 0; lo < idx.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      size_t hi = std::min(lo + static_cast<size_t>(cfg.batch_size), idx.size());
      std::vector<int> labels;
      Tensor batch = batch_tensor(train_split, idx, lo, hi, labels);
      Tensor loss = cross_entropy(model.forward(batch), labels);
      double lv = loss.value();
      if (!std::isfinite(lv))
        fail(Errc::numeric, "train: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += lv;
      ++batches;
      for (auto& p : params) p.zero_grad();
      backward(loss);
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& p : params)
          for (double g : p.grad()) sq += g * g;
        double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          double s = cfg.grad_clip / norm;
          for (auto& p : params)
            for (double& g : p.grad_mut()) g *= s;
        }
      }
      for (size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].data();
        const auto& g = params[i].grad();
        auto& v = velocity[i];
        for (size_t k = 0; k < v.size(); ++k) {
          v[k] = cfg.momentum * v[k] + g[k] + cfg.weight_decay * p[k];
          p[k] -= cfg.lr * v[k];
        }
      }
    }
    report.epoch_losses.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
  }

  report.test_top1 = evaluate(model, test_split);
  report.macs = site_flops(cfg).total();
  report.config_echo = train_config_to_json(cfg);
  report.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  if (out_model) *out_model = std::move(model);
  return report;
}

void save_model(const std::string& path, const Model& model, const TrainConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io, "save_model: cannot open " + path);
  std::string meta = train_config_to_json(cfg).dump();
  os.write("ATMW", 4);
  uint32_t len = static_cast<uint32_t>(meta.size());
  os.write(reinterpret_cast<const char*>(&len), 4);
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  uint32_t count = static_cast<uint32_t>(model.params().size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& p : model.params()) {
    uint32_t nd = static_cast<uint32_t>(p.ndim());
    os.write(reinterpret_cast<const char*>(&nd), 4);
    for (int d = 0; d < p.ndim(); ++d) {
      uint32_t dim = static_cast<uint32_t>(p.dim(d));
      os.write(reinterpret_cast<const char*>(&dim), 4);
    }
    os.write(reinterpret_cast<const char*>(p.data()),
             static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  if (!os) fail(Errc::io, "save_model: write failed");
}

LoadedModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::io, "load_model: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ATMW", 4) != 0) fail(Errc::bad_magic, "load_model: bad magic");
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 4);
  std::string meta(len, '\0');
  is.read(meta.data(), len);
  if (!is) fail(Errc::truncated, "load_model: truncated header");
  TrainConfig cfg = train_config_from_json(json::parse(meta));
  auto model = std::make_unique<Model>(cfg.stem, cfg.atm, cfg.seed);
  uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  if (count != model->params().size()) fail(Errc::bad_magic, "load_model: parameter count mismatch");
  for (auto& p : model->params()) {
    uint32_t nd = 0;
    is.read(reinterpret_cast<char*>(&nd), 4);
    if (nd != static_cast<uint32_t>(p.ndim())) fail(Errc::bad_magic, "load_model: rank mismatch");
    for (int d = 0; d < p.ndim(); ++d) {
      uint32_t dim = 0;
      is.read(reinterpret_cast<char*>(&dim), 4);
      if (dim != static_cast<uint32_t>(p.dim(d))) fail(Errc::bad_magic, "load_model: shape mismatch");
    }
    is.read(reinterpret_cast<char*>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!is) fail(Errc::truncated, "load_model: truncated payload");
  }
  return LoadedModel{std::move(model), std::move(cfg)};
}

// ---------------------------------------------------------------------------
// gradient checking suite
// ---------------------------------------------------------------------------

namespace {

constexpr double kOpThreshold = 1e-4;
constexpr double kStemThreshold = 1e-3;
constexpr double kStep = 1e-4;

// Like finite_diff_check but skips coordinates where the central difference is
// inconsistent across two step sizes, i.e. where a ReLU kink sits inside the
// probe interval and no finite-difference estimate is meaningful.
double finite_diff_check_smooth(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                double step) {
  x.zero_grad();
  Tensor y = f(x);
  backward(y);
  std::vector<double> analytic = x.grad();

  auto central = [&](double* px, int64_t i, double orig, double h) {
    px[i] = orig + h;
    double fp = f(x).value();
    px[i] = orig - h;
    double fm = f(x).value();
    px[i] = orig;
    return (fp - fm) / (2.0 * h);
  };

  double max_err = 0.0;
  double* px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    double orig = px[i];
    double n1 = central(px, i, orig, step);
    double n2 = central(px, i, orig, step / 2.0);
    if (std::abs(n1 - n2) / std::max(1e-12, std::abs(n1) + std::abs(n2)) > 1e-5) continue;
    double a = analytic[static_cast<size_t>(i)];
    double err = std::abs(a - n2) / std::max(1e-12, std::abs(a) + std::abs(n2));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

GradCheckEntry run_entry(const std::string& name, double threshold, int instances,
                         const std::function<double(uint64_t)>& one_instance) {
  GradCheckEntry e;
  e.name = name;
  e.threshold = threshold;
  e.instances = instances;
  for (int i = 0; i < instances; ++i)
    e.max_err = std::max(e.max_err, one_instance(static_cast<uint64_t>(1000 + i)));
  e.pass = e.max_err < threshold;
  return e;
}

Tensor rand_t(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), lo, hi, rng, true);
}

ClipFeatures rand_clip(int64_t t, int64_t c, int64_t h, int64_t w, std::mt19937_64& rng,
                       bool nonneg) {
  return ClipFeatures{Tensor::uniform({t, c, h, w}, nonneg ? 0.1 : -1.0, 1.0, rng, true)};
}

}  // namespace

GradCheckReport run_gradcheck_suite(int instances_per_check) {
  GradCheckReport report;
  auto& entries = report.entries;
  int n = instances_per_check;

  entries.push_back(run_entry("elementwise_chain", kOpThreshold, n, [](uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = rand_t({2, 3, 4}, rng, 0.5, 1.5);
    Tensor y = rand_t({2, 3, 4}, rng);
    return finite_diff_check(
        [&](const Tensor& v) { return sum_all(mul(log_op(add_scalar(v, 1.0)), add(v, y))); }, x,
        kStep);
  }));

  entries.push_back(run_entry("conv2d", kOpThreshold, n, [](uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w = rand_t({3, 2, 3, 3}, rng);
    Tensor b = rand_t({3}, rng);
    Tensor x = rand_t({1, 2, 5, 5}, rng);
    return finite_diff_check([&](const Tensor& v) { return sum_all(mul(conv2d(v, w, b, 1, 1),
                                                                       conv2d(v, w, b, 1, 1))); },
                             x, kStep);
  }));

  entries.push_back(run_entry("avg_pool2_upsample2", kOpThreshold, n, [](uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = rand_t({1, 2, 4, 4}, rng);
    Tensor y = rand_t({1, 2, 4, 4}, rng);
    return finite_diff_check(
        [&](const Tensor& v) { return sum_all(mul(upsample2(avg_pool2(v)), mul(v, y))); }, x, kStep);
  }));

  struct OpCase {
    const char* name;
    ArithOp op;
  };
  for (OpCase oc : {OpCase{"op_add", ArithOp::add}, OpCase{"op_sub", ArithOp::sub},
                    OpCase{"op_div_log", ArithOp::div}}) {
    entries.push_back(run_entry(oc.name, kOpThreshold, n, [oc](uint64_t seed) {
      std::mt19937_64 rng(seed);
      bool nonneg = oc.op == ArithOp::div;
      Tensor a = rand_t({2, 4, 4}, rng, nonneg ? 0.0 : -1.0, 1.0);
      Tensor b = rand_t({2, 4, 4}, rng, nonneg ? 0.0 : -1.0, 1.0);
      Tensor mix = rand_t({2, 4, 4}, rng);
      return finite_diff_check(
          [&](const Tensor& v) {
            Tensor y = oc.op == ArithOp::add   ? op_add(v, b)
                       : oc.op == ArithOp::sub ? op_sub(v, b)
                                               : op_div_log(v, b, 1.0);
            return sum_all(mul(y, mix));
          },
          a, kStep);
    }));
  }
  for (int p : {1, 3}) {
    entries.push_back(run_entry("op_mul_local_p" + std::to_string(p), kOpThreshold, n,
                                [p](uint64_t seed) {
                                  std::mt19937_64 rng(seed);
                                  Tensor a = rand_t({3, 4, 4}, rng);
                                  Tensor b = rand_t({3, 4, 4}, rng);
                                  MulParams mp{p};
                                  Tensor mix = rand_t({static_cast<int64_t>(p) * p, 4, 4}, rng);
                                  double ea = finite_diff_check(
                                      [&](const Tensor& v) {
                                        return sum_all(mul(op_mul_local(v, b, mp), mix));
                                      },
                                      a, kStep);
                                  double eb = finite_diff_check(
                                      [&](const Tensor& v) {
                                        return sum_all(mul(op_mul_local(a, v, mp), mix));
                                      },
                                      b, kStep);
                                  return std::max(ea, eb);
                                }));
  }

  for (ArithOp op : {ArithOp::add, ArithOp::sub, ArithOp::mul, ArithOp::div}) {
    entries.push_back(run_entry(std::string("span_and_interact_") + arith_op_name(op), kOpThreshold,
                                n, [op](uint64_t seed) {
                                  std::mt19937_64 rng(seed);
                                  ClipFeatures x = rand_clip(3, 2, 4, 4, rng, op == ArithOp::div);
                                  ContextSpec spec{2};
                                  MulParams mp{3};
                                  int64_t cp = interact_channels(op, 2, mp);
                                  Tensor mix = rand_t({3, 2, cp, 4, 4}, rng);
                                  return finite_diff_check(
                                      [&](const Tensor& v) {
                                        InteractionTensor y = span_and_interact(
                                            ClipFeatures{v}, spec, op, mp, 1.0);
                                        return sum_all(mul(y.data, mix));
                                      },
                                      x.data, kStep);
                                }));
  }

  // full ATM blocks: every extractor, every single op
  for (ExtractorKind ek : {ExtractorKind::fc, ExtractorKind::mlp, ExtractorKind::conv_stack}) {
    for (ArithOp op : {ArithOp::add, ArithOp::sub, ArithOp::mul, ArithOp::div}) {
      std::string name =
          std::string("atm_forward_") + arith_op_name(op) + "_" + extractor_name(ek);
      entries.push_back(run_entry(name, kOpThreshold, n, [ek, op](uint64_t seed) {
        std::mt19937_64 rng(seed);
        AtmConfig cfg;
        cfg.ops = {op};
        cfg.combine = CombineStyle::single;
        cfg.context.z = 2;
        cfg.mul.p = 3;
        cfg.extractor = ek;
        cfg.c_e = 2;
        AtmBlock block(cfg, 2, rng, /*zero_projection=*/false);
        ClipFeatures x = rand_clip(3, 2, 4, 4, rng, op == ArithOp::div);
        Tensor mix = rand_t({3, 2, 4, 4}, rng);
        return finite_diff_check_smooth(
            [&](const Tensor& v) {
              return sum_all(mul(block.forward(ClipFeatures{v}).data, mix));
            },
            x.data, kStep);
      }));
    }
  }

  for (CombineStyle style : {CombineStyle::cascade, CombineStyle::parallel, CombineStyle::atm_style}) {
    entries.push_back(run_entry(std::string("combine_") + combine_name(style), kOpThreshold, n,
                                [style](uint64_t seed) {
                                  std::mt19937_64 rng(seed);
                                  AtmConfig cfg;
                                  cfg.ops = {ArithOp::sub, ArithOp::mul};
                                  cfg.combine = style;
                                  cfg.context.z = 2;
                                  cfg.mul.p = 3;
                                  cfg.c_e = 2;
                                  AtmBlock block(cfg, 2, rng, false);
                                  ClipFeatures x = rand_clip(3, 2, 4, 4, rng, false);
                                  Tensor mix = rand_t({3, 2, 4, 4}, rng);
                                  return finite_diff_check_smooth(
                                      [&](const Tensor& v) {
                                        return sum_all(
                                            mul(block.forward(ClipFeatures{v}).data, mix));
                                      },
                                      x.data, kStep);
                                }));
  }

  entries.push_back(run_entry("atm_forward_reduce_spatial", kOpThreshold, n, [](uint64_t seed) {
    std::mt19937_64 rng(seed);
    AtmConfig cfg;
    cfg.ops = {ArithOp::sub};
    cfg.combine = CombineStyle::single;
    cfg.context.z = 2;
    cfg.reduce_spatial = true;
    cfg.c_e = 2;
    AtmBlock block(cfg, 2, rng, false);
    ClipFeatures x = rand_clip(3, 2, 4, 4, rng, false);
    Tensor mix = rand_t({3, 2, 4, 4}, rng);
    return finite_diff_check_smooth(
        [&](const Tensor& v) { return sum_all(mul(block.forward(ClipFeatures{v}).data, mix)); },
        x.data, kStep);
  }));

  entries.push_back(run_entry("tconv", kOpThreshold, n, [](uint64_t seed) {
    std::mt19937_64 rng(seed);
    TConvParams p{rand_t({3, 3}, rng)};
    Tensor x = rand_t({4, 3, 2, 2}, rng);
    Tensor mix = rand_t({4, 3, 2, 2}, rng);
    double ex = finite_diff_check(
        [&](const Tensor& v) { return sum_all(mul(tconv(v, p), mix)); }, x, kStep);
    double ew = finite_diff_check(
        [&](const Tensor& v) { return sum_all(mul(tconv(x, TConvParams{v}), mix)); }, p.weight,
        kStep);
    return std::max(ex, ew);
  }));

  // end-to-end stems, loss -> pixels
  for (StemKind kind : {StemKind::cnn, StemKind::attention}) {
    std::string name = std::string("stem_") + stem_kind_name(kind) + "_end_to_end";
    entries.push_back(run_entry(name, kStemThreshold, n, [kind](uint64_t seed) {
      std::mt19937_64 rng(seed);
      StemConfig stem;
      stem.kind = kind;
      stem.atm_site = 2;
      stem.num_classes = 2;
      AtmConfig atm;
      atm.ops = {ArithOp::sub, ArithOp::mul};
      atm.combine = CombineStyle::atm_style;
      atm.context.z = 2;
      atm.mul.p = 3;
      atm.c_e = 4;
      Model model(stem, atm, seed, /*zero_projection=*/false);
      Tensor clips = Tensor::uniform({1, 3, 1, 8, 8}, 0.0, 1.0, rng, true);
      std::vector<int> labels{static_cast<int>(seed % 2)};
      return finite_diff_check_smooth(
          [&](const Tensor& v) { return cross_entropy(model.forward(v), labels); }, clips, kStep);
    }));
  }

  report.all_pass = std::all_of(entries.begin(), entries.end(),
                                [](const GradCheckEntry& e) { return e.pass; });
  return report;
}

json gradcheck_to_json(const GradCheckReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back(json{{"name", e.name},
                           {"max_err", e.max_err},
                           {"threshold", e.threshold},
                           {"instances", e.instances},
                           {"pass", e.pass}});
  return json{{"entries", entries}, {"all_pass", r.all_pass}};
}

json flops_table(const AtmConfig& base, int64_t t, int64_t c, int64_t h, int64_t w,
                 const std::vector<int>& z_values) {
  json rows = json::array();
  for (int z : z_values) {
    AtmConfig cfg = base;
    cfg.context.z = z;
    FlopEstimate est = estimate_flops(cfg, t, c, h, w);
    rows.push_back(json{{"z", z},
                        {"interaction", est.interaction},
                        {"extractor", est.extractor},
                        {"transform", est.transform},
                        {"total", est.total()}});
  }
  return json{{"stem", json{{"t", t}, {"c", c}, {"h", h}, {"w", w}}}, {"rows", rows}};
}

json ablate(const TrainConfig& base, const json& grid, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::vector<std::vector<std::string>> ops_cells;
  if (grid.contains("ops"))
    for (const auto& cell : grid.at("ops")) ops_cells.push_back(cell.get<std::vector<std::string>>());
  else
    ops_cells.push_back({"sub"});
  std::vector<int> z_cells = grid.value("z", std::vector<int>{base.atm ? base.atm->context.z : 4});
  std::vector<std::string> ex_cells = grid.value(
      "extractor", std::vector<std::string>{extractor_name(base.atm ? base.atm->extractor
                                                                    : ExtractorKind::conv_stack)});
  std::vector<std::string> style_cells = grid.value("style", std::vector<std::string>{});
  bool include_baseline = grid.value("include_baseline", false);

  json summary = json::array();
  auto run_cell = [&](const std::string& tag, const TrainConfig& cfg) {
    RunReport r = train(cfg);
    std::string file = (fs::path(out_dir) / (tag + ".json")).string();
    std::ofstream(file) << report_to_json(r).dump(2) << "\n";
    summary.push_back(json{{"cell", tag}, {"test_top1", r.test_top1}, {"macs", r.macs},
                           {"report", file}});
  };

  if (include_baseline) {
    TrainConfig cfg = base;
    cfg.atm.reset();
    cfg.stem.use_tconv = false;
    run_cell("baseline", cfg);
  }
  for (const auto& ops : ops_cells)
    for (int z : z_cells)
      for (const auto& ex : ex_cells) {
        std::vector<std::string> styles = style_cells;
        if (styles.empty()) styles = {ops.size() > 1 ? "atm" : "single"};
        for (const auto& style : styles) {
          CombineStyle cs = combine_from_name(style);
          if ((cs == CombineStyle::single) != (ops.size() == 1)) continue;  // invalid cell
          TrainConfig cfg = base;
          if (!cfg.atm) cfg.atm = AtmConfig{};
          cfg.atm->ops.clear();
          for (const auto& o : ops) cfg.atm->ops.push_back(arith_op_from_name(o));
          cfg.atm->context.z = z;
          cfg.atm->extractor = extractor_from_name(ex);
          cfg.atm->combine = cs;
          std::string tag;
          for (const auto& o : ops) tag += o;
          tag += "_z" + std::to_string(z) + "_" + ex + "_" + style;
          run_cell(tag, cfg);
        }
      }
  return summary;
}

std::vector<std::string> run_viz(const std::string& out_dir, int image_size, double shift_px) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SynthClipSpec spec;
  spec.task = SynthTask::direction2;
  spec.frames = 2;
  spec.image_size = image_size;
  spec.velocity = shift_px;
  spec.seed = 7;
  Clip clip = gen_clip(spec, 1);
  int64_t h = image_size, w = image_size;
  Tensor a = reshape(slice0(clip.frames, 0), {h, w});
  Tensor b = reshape(slice0(clip.frames, 1), {h, w});
  auto maps = visualize_ops(a, b, MulParams{3}, 1.0);
  const char* names[4] = {"add", "sub", "mul", "div"};
  std::vector<std::string> paths;
  for (int i = 0; i < 4; ++i) {
    std::string p = (fs::path(out_dir) / (std::string(names[i]) + ".pgm")).string();
    write_pgm(p, maps[static_cast<size_t>(i)], h, w);
    paths.push_back(p);
  }
  return paths;
}

}  // namespace atm
