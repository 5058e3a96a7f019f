// Acceptance gate: one pass/fail line per criterion, exit 0 only if all pass.
// argv[1] = path to the CLI binary, argv[2] = scratch directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "atm/harness.hpp"

using namespace atm;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int idx, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", idx, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor rnd(Shape shape, uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

// --- criterion 1: seeded gradient suite ------------------------------------

void criterion_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  GradCheckReport r = run_gradcheck_suite(20);
  double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : r.entries)
    if (e.max_err / e.threshold > worst) {
      worst = e.max_err / e.threshold;
      worst_name = e.name;
    }
  std::ostringstream os;
  os << "gradient suite, " << r.entries.size() << " checks x 20 seeds, worst " << worst_name
     << " at " << worst << " of threshold, " << secs << "s (budget 120s)";
  report(1, r.all_pass && secs < 120.0, os.str());
}

// --- criterion 2: bit-exact oracles ----------------------------------------

bool conv_oracle_exact() {
  Tensor x = rnd({2, 3, 7, 6}, 101, -1.0, 1.0);
  Tensor w = rnd({4, 3, 3, 3}, 102, -1.0, 1.0);
  Tensor b = rnd({4}, 103, -1.0, 1.0);
  Tensor y = conv2d(x, w, b, 2, 1);
  int64_t n = 2, cin = 3, h = 7, wd = 6, cout = 4, k = 3, stride = 2, pad = 1;
  int64_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = b.data()[co];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                int64_t iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.data()[((ni * cin + ci) * h + iy) * wd + ix] *
                       w.data()[((co * cin + ci) * k + ky) * k + kx];
              }
          if (y.data()[((ni * cout + co) * ho + oy) * wo + ox] != acc) return false;
        }
  return true;
}

bool mul_local_oracle_exact() {
  int p = 3, kk = 1;
  Tensor a = rnd({3, 5, 4}, 111, -1.0, 1.0);
  Tensor b = rnd({3, 5, 4}, 112, -1.0, 1.0);
  Tensor y = op_mul_local(a, b, MulParams{p});
  int64_t c = 3, h = 5, w = 4, off = 0;
  for (int di = -kk; di <= kk; ++di)
    for (int dj = -kk; dj <= kk; ++dj, ++off)
      for (int64_t yy = 0; yy < h; ++yy)
        for (int64_t xx = 0; xx < w; ++xx) {
          int64_t by = yy + di, bx = xx + dj;
          double acc = 0.0;
          if (by >= 0 && by < h && bx >= 0 && bx < w)
            for (int64_t ci = 0; ci < c; ++ci)
              acc += a.data()[(ci * h + yy) * w + xx] * b.data()[(ci * h + by) * w + bx];
          if (y.data()[(off * h + yy) * w + xx] != acc) return false;
        }
  return true;
}

bool tconv_oracle_exact() {
  Tensor w = Tensor::from_data({1, 3}, {1.0, 0.0, 0.0});
  Tensor x = Tensor::from_data({3, 1, 2}, {1, 2, 3, 4, 5, 6});
  Tensor y = tconv(x, TConvParams{w});
  double want[6] = {0, 0, 1, 2, 3, 4};
  for (int i = 0; i < 6; ++i)
    if (y.data()[i] != want[i]) return false;
  return true;
}

bool pool_oracle_exact() {
  Tensor x = Tensor::from_data({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor y = avg_pool2(x);
  return y.data()[0] == (1 + 2 + 5 + 6) / 4.0 && y.data()[1] == (3 + 4 + 7 + 8) / 4.0;
}

void criterion_oracles() {
  auto t0 = std::chrono::steady_clock::now();
  bool ok = conv_oracle_exact() && mul_local_oracle_exact() && tconv_oracle_exact() &&
            pool_oracle_exact();
  double secs = seconds_since(t0);
  std::ostringstream os;
  os << "loop-nest oracles (conv2d, local mul, tconv, pool) bit-exact, " << secs
     << "s (budget 60s)";
  report(2, ok && secs < 60.0, os.str());
}

// --- criterion 3: composite shape law --------------------------------------

void criterion_shape_law() {
  Tensor x = rnd({8, 3, 4, 5}, 121, 0.0, 1.0);
  bool ok = true;
  for (int z : {1, 2, 4, 6})
    for (ArithOp op : {ArithOp::add, ArithOp::sub, ArithOp::mul, ArithOp::div}) {
      InteractionTensor y =
          span_and_interact(ClipFeatures{x}, ContextSpec{z}, op, MulParams{3}, 1.0);
      int64_t cp = op == ArithOp::mul ? 9 : 3;
      ok = ok && y.data.shape() == Shape{8, z, cp, 4, 5};
    }
  report(3, ok, "T x Z x C' x H x W composite shape holds for Z in {1,2,4,6}, all four ops");
}

// --- criterion 4: identity at initialization -------------------------------

void criterion_identity_init() {
  Tensor clips = rnd({2, 4, 1, 8, 8}, 131, 0.0, 1.0);
  bool ok = true;
  std::string broke;
  for (StemKind kind : {StemKind::cnn, StemKind::attention}) {
    StemConfig stem;
    stem.kind = kind;
    stem.atm_site = 2;
    stem.num_classes = 2;
    Model bare(stem, std::nullopt, 77);
    Tensor base = bare.forward(clips);
    for (CombineStyle style : {CombineStyle::single, CombineStyle::cascade,
                               CombineStyle::parallel, CombineStyle::atm_style}) {
      AtmConfig atm;
      atm.ops = style == CombineStyle::single ? std::vector<ArithOp>{ArithOp::sub}
                                              : std::vector<ArithOp>{ArithOp::sub, ArithOp::mul};
      atm.combine = style;
      atm.context.z = 2;
      atm.mul.p = 3;
      atm.c_e = 4;
      atm.div_shift_min = true;
      Model with(stem, atm, 77);
      Tensor got = with.forward(clips);
      for (int64_t i = 0; i < base.size(); ++i)
        if (got.data()[i] != base.data()[i]) {
          ok = false;
          broke = std::string(stem_kind_name(kind)) + "/" + combine_name(style);
        }
    }
  }
  report(4, ok, ok ? "fresh module leaves logits bit-identical for both stems, all four styles"
                   : "logits moved for " + broke);
}

// --- criteria 5 and 6: learning runs ---------------------------------------

TrainConfig direction2_config() {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  cfg.seed = 1;
  cfg.stem.kind = StemKind::cnn;
  cfg.stem.atm_site = 2;
  cfg.stem.num_classes = 2;
  AtmConfig atm;
  atm.ops = {ArithOp::sub};
  atm.combine = CombineStyle::single;
  atm.context.z = 2;
  atm.mul.p = 3;
  atm.extractor = ExtractorKind::conv_stack;
  atm.reduce_spatial = true;
  cfg.atm = atm;
  cfg.dataset.base.task = SynthTask::direction2;
  cfg.dataset.base.frames = 8;
  cfg.dataset.base.image_size = 28;
  cfg.dataset.train_clips = 400;
  cfg.dataset.test_clips = 200;
  return cfg;
}

void criterion_single_ops() {
  auto t0 = std::chrono::steady_clock::now();
  TrainConfig base_cfg = direction2_config();
  base_cfg.atm.reset();
  double base = train(base_cfg).test_top1;

  bool ok = std::abs(base - 0.5) <= 0.10;
  std::ostringstream os;
  os << "direction2 blind baseline " << base;
  for (ArithOp op : {ArithOp::add, ArithOp::sub, ArithOp::mul, ArithOp::div}) {
    TrainConfig cfg = direction2_config();
    cfg.atm->ops = {op};
    double top1 = train(cfg).test_top1;
    os << ", " << arith_op_name(op) << " " << top1;
    ok = ok && top1 >= 0.90 && top1 >= base + 0.30;
  }
  double secs = seconds_since(t0);
  os << ", " << secs << "s (budget 900s)";
  report(5, ok && secs < 900.0, os.str());
}

void criterion_fusion() {
  auto t0 = std::chrono::steady_clock::now();
  auto run3 = [](std::vector<ArithOp> ops, CombineStyle style) {
    std::vector<double> acc;
    for (uint64_t seed : {1, 2, 3}) {
      TrainConfig cfg = direction2_config();
      cfg.dataset.base.task = SynthTask::direction4;
      cfg.dataset.base.noise_stddev = 0.1;
      cfg.stem.num_classes = 4;
      // The four-class task needs a gentler schedule than direction2: at
      // lr 0.05 the mul run can diverge, and sub only breaks through the
      // plateau around epoch 8.
      cfg.epochs = 10;
      cfg.lr = 0.02;
      cfg.seed = seed;
      cfg.atm->ops = std::move(ops);
      cfg.atm->combine = style;
      acc.push_back(train(cfg).test_top1);
      ops = cfg.atm->ops;
    }
    std::sort(acc.begin(), acc.end());
    return acc[1];  // median of three
  };
  double med_sub = run3({ArithOp::sub}, CombineStyle::single);
  double med_mul = run3({ArithOp::mul}, CombineStyle::single);
  double med_fuse = run3({ArithOp::sub, ArithOp::mul}, CombineStyle::atm_style);
  double best_single = std::max(med_sub, med_mul);
  bool ok = med_fuse >= best_single - 0.02;
  std::ostringstream os;
  os << "direction4+noise medians over 3 seeds: sub " << med_sub << ", mul " << med_mul
     << ", fused " << med_fuse << " (needs >= " << best_single - 0.02 << "), "
     << seconds_since(t0) << "s";
  report(6, ok, os.str());
}

// --- criterion 7: analytic cost model --------------------------------------

void criterion_flops() {
  AtmConfig cfg;
  cfg.ops = {ArithOp::sub};
  cfg.combine = CombineStyle::single;
  cfg.extractor = ExtractorKind::fc;
  cfg.c_e = 3;
  int64_t t = 4, c = 5, h = 6, w = 6;
  bool mono = true;
  int64_t prev = 0;
  for (int z : {1, 2, 4, 6, 8}) {
    cfg.context.z = z;
    int64_t total = estimate_flops(cfg, 8, 16, 14, 14).total();
    mono = mono && total > prev;
    prev = total;
  }
  cfg.context.z = 2;
  FlopEstimate est = estimate_flops(cfg, t, c, h, w);
  bool exact = est.interaction == t * 2 * c * h * w &&
               est.extractor == t * 2 * h * w * c * 3 &&
               est.transform == t * h * w * 2 * 3 * c;
  report(7, mono && exact,
         "MAC estimate strictly increasing in Z and matches the hand-derived closed form");
}

// --- criterion 8: division stability ---------------------------------------

void criterion_division() {
  bool ok = true;
  // all-zero frames
  Tensor z = Tensor::zeros({4, 2, 6, 6});
  InteractionTensor y =
      span_and_interact(ClipFeatures{z}, ContextSpec{2}, ArithOp::div, MulParams{3}, 1.0);
  for (int64_t i = 0; i < y.data.size(); ++i) ok = ok && std::isfinite(y.data.data()[i]);
  // full block on random non-negative features
  AtmConfig cfg;
  cfg.ops = {ArithOp::div};
  cfg.combine = CombineStyle::single;
  cfg.context.z = 2;
  cfg.c_e = 2;
  std::mt19937_64 rng(141);
  AtmBlock block(cfg, 2, rng, false);
  ClipFeatures out = block.forward(ClipFeatures{rnd({4, 2, 6, 6}, 142, 0.0, 1.0)});
  for (int64_t i = 0; i < out.data.size(); ++i) ok = ok && std::isfinite(out.data.data()[i]);
  // min-shifted block on signed features
  cfg.div_shift_min = true;
  std::mt19937_64 rng2(143);
  AtmBlock shifted(cfg, 2, rng2, false);
  ClipFeatures out2 = shifted.forward(ClipFeatures{rnd({4, 2, 6, 6}, 144, -3.0, 3.0)});
  for (int64_t i = 0; i < out2.data.size(); ++i) ok = ok && std::isfinite(out2.data.data()[i]);
  report(8, ok, "log-ratio division finite on all-zero frames and random features at eps = 1");
}

// --- criterion 9: persistence and reproducibility ---------------------------

void criterion_repro(const std::string& cli, const std::string& scratch) {
  bool ok = true;
  std::ostringstream os;

  SynthClipSpec spec;
  spec.seed = 5;
  spec.noise_stddev = 0.1;
  Clip clip = gen_clip(spec, 1);
  std::string p1 = scratch + "/rt1.atmc", p2 = scratch + "/rt2.atmc";
  write_clip(p1, clip);
  write_clip(p2, read_clip(p1));
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  bool rt = !b1.empty() && b1 == b2;
  ok = ok && rt;
  os << "clip round trip " << (rt ? "byte-identical" : "DIFFERS");

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.lr = 0.01;
  cfg.stem.num_classes = 2;
  cfg.dataset.base.frames = 4;
  cfg.dataset.base.image_size = 16;
  cfg.dataset.train_clips = 8;
  cfg.dataset.test_clips = 4;
  AtmConfig atm;
  atm.ops = {ArithOp::sub};
  atm.context.z = 2;
  atm.mul.p = 3;
  cfg.atm = atm;
  RunReport r1 = train(cfg), r2 = train(cfg);
  bool det = r1.epoch_losses == r2.epoch_losses && r1.test_top1 == r2.test_top1;
  ok = ok && det;
  os << ", seeded reruns " << (det ? "identical" : "DIVERGE");

  std::string cmd = "\"" + cli + "\" gradcheck --instances 2 --out \"" + scratch +
                    "/gradcheck.json\" > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  bool cli_ok = rc == 0;
  ok = ok && cli_ok;
  os << ", gradcheck CLI exit " << (cli_ok ? "0" : "nonzero");
  report(9, ok, os.str());
}

// --- criterion 10: visualization --------------------------------------------

void criterion_viz(const std::string& scratch) {
  auto paths = run_viz(scratch + "/viz", 28, 2.0);
  bool ok = paths.size() == 4;
  for (const auto& p : paths) {
    std::ifstream is(p, std::ios::binary);
    std::string head(2, '\0');
    is.read(head.data(), 2);
    int w = 0, h = 0, maxv = 0;
    is >> w >> h >> maxv;
    is.get();
    std::string body((std::istreambuf_iterator<char>(is)), {});
    ok = ok && head == "P5" && w == 28 && h == 28 && maxv == 255 &&
         body.size() == static_cast<size_t>(w * h);
  }
  // identical frames: subtraction response must be flat
  SynthClipSpec spec;
  Clip clip = gen_clip(spec, 1);
  Tensor a = reshape(slice0(clip.frames, 0), {28, 28});
  auto maps = visualize_ops(a, a, MulParams{3}, 1.0);
  for (uint8_t v : maps[1]) ok = ok && v == maps[1][0];
  report(10, ok, "four valid 28x28 PGMs; subtraction map constant on identical frames");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: acceptance <cli-binary> <scratch-dir>\n");
    return 2;
  }
  std::string cli = argv[1], scratch = argv[2];
  fs::create_directories(scratch);

  criterion_gradients();
  criterion_oracles();
  criterion_shape_law();
  criterion_identity_init();
  criterion_single_ops();
  criterion_fusion();
  criterion_flops();
  criterion_division();
  criterion_repro(cli, scratch);
  criterion_viz(scratch);

  if (g_failures) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
