#include "atm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

namespace atm {

const char* synth_task_name(SynthTask t) {
  switch (t) {
    case SynthTask::direction2: return "direction2";
    case SynthTask::direction4: return "direction4";
    case SynthTask::speed2: return "speed2";
  }
  return "?";
}

SynthTask synth_task_from_name(const std::string& name) {
  if (name == "direction2") return SynthTask::direction2;
  if (name == "direction4") return SynthTask::direction4;
  if (name == "speed2") return SynthTask::speed2;
  fail(Errc::config, "unknown synth task '" + name + "'");
}

int synth_task_classes(SynthTask t) { return t == SynthTask::direction4 ? 4 : 2; }

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Renders the blob trajectory (cx(t), cy(t)) into T frames, with seeded
// per-frame noise, quantized to float32 so file round trips are lossless.
std::vector<double> render(const SynthClipSpec& spec, double cx0, double cy0, double vx, double vy,
                           std::mt19937_64& rng) {
  int t = spec.frames, hw = spec.image_size;
  std::vector<double> px(static_cast<size_t>(t) * hw * hw);
  std::normal_distribution<double> noise(0.0, spec.noise_stddev);
  double inv2r2 = 1.0 / (2.0 * spec.blob_radius * spec.blob_radius);
  for (int f = 0; f < t; ++f) {
    double cx = cx0 + vx * f, cy = cy0 + vy * f;
    if (cx < 0 || cx > hw - 1 || cy < 0 || cy > hw - 1)
      fail(Errc::invalid_argument, "gen_clip: trajectory leaves the image");
    double* fr = px.data() + static_cast<size_t>(f) * hw * hw;
    for (int y = 0; y < hw; ++y)
      for (int x = 0; x < hw; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        double v = std::exp(-d2 * inv2r2);
        if (spec.noise_stddev > 0.0) v += noise(rng);
        fr[y * hw + x] = f32(std::clamp(v, 0.0, 1.0));
      }
  }
  return px;
}

std::vector<double> reverse_frames(std::vector<double> px, int t) {
  size_t fsz = px.size() / static_cast<size_t>(t);
  for (int a = 0, b = t - 1; a < b; ++a, --b)
    std::swap_ranges(px.begin() + a * fsz, px.begin() + (a + 1) * fsz, px.begin() + b * fsz);
  return px;
}

// In-bounds start for a path of total displacement (dx, dy).
void pick_start(const SynthClipSpec& spec, double dx, double dy, std::mt19937_64& rng, double& cx0,
                double& cy0) {
  double margin = spec.blob_radius;
  double lo_x = margin + std::max(0.0, -dx);
  double hi_x = spec.image_size - 1 - margin - std::max(0.0, dx);
  double lo_y = margin + std::max(0.0, -dy);
  double hi_y = spec.image_size - 1 - margin - std::max(0.0, dy);
  if (lo_x > hi_x || lo_y > hi_y)
    fail(Errc::invalid_argument, "gen_clip: velocity too large for the image size");
  std::uniform_real_distribution<double> ux(lo_x, hi_x), uy(lo_y, hi_y);
  cx0 = ux(rng);
  cy0 = uy(rng);
}

}  // namespace

Clip gen_clip(const SynthClipSpec& spec, int label) {
  if (spec.frames < 1 || spec.image_size < 4 || spec.blob_radius <= 0.0 || spec.velocity < 0.0)
    fail(Errc::invalid_argument, "gen_clip: bad spec");
  int classes = synth_task_classes(spec.task);
  if (label < 0 || label >= classes) fail(Errc::invalid_argument, "gen_clip: label out of range");

  std::mt19937_64 rng(spec.seed);
  double span = spec.velocity * (spec.frames - 1);
  std::vector<double> px;
  switch (spec.task) {
    case SynthTask::direction2: {
      // label 1 moves right; label 0 is its exact frame reversal
      double cx0, cy0;
      pick_start(spec, span, 0.0, rng, cx0, cy0);
      px = render(spec, cx0, cy0, spec.velocity, 0.0, rng);
      if (label == 0) px = reverse_frames(std::move(px), spec.frames);
      break;
    }
    case SynthTask::direction4: {
      double vx = 0.0, vy = 0.0;
      if (label == 0) vx = -spec.velocity;
      if (label == 1) vx = spec.velocity;
      if (label == 2) vy = -spec.velocity;
      if (label == 3) vy = spec.velocity;
      double cx0, cy0;
      pick_start(spec, vx * (spec.frames - 1), vy * (spec.frames - 1), rng, cx0, cy0);
      px = render(spec, cx0, cy0, vx, vy, rng);
      break;
    }
    case SynthTask::speed2: {
      double v = label == 0 ? spec.velocity : 2.0 * spec.velocity;
      double cx0, cy0;
      pick_start(spec, 2.0 * span, 0.0, rng, cx0, cy0);  // same start range for both speeds
      px = render(spec, cx0, cy0, v, 0.0, rng);
      break;
    }
  }
  Tensor frames = Tensor::from_data({spec.frames, 1, spec.image_size, spec.image_size}, std::move(px));
  return Clip{frames, label};
}

std::vector<Clip> gen_split(const SynthClipSpec& base, int n_clips, uint64_t seed_offset) {
  int classes = synth_task_classes(base.task);
  if (n_clips <= 0 || n_clips % classes != 0)
    fail(Errc::invalid_argument, "gen_split: clip count must be a positive multiple of the class count");
  int seeds = n_clips / classes;
  std::vector<Clip> out;
  out.reserve(static_cast<size_t>(n_clips));
  for (int s = 0; s < seeds; ++s)
    for (int label = 0; label < classes; ++label) {
      SynthClipSpec spec = base;
      spec.seed = seed_offset + static_cast<uint64_t>(s);
      out.push_back(gen_clip(spec, label));
    }
  return out;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) fail(Errc::truncated, "clip file: truncated header");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

constexpr uint32_t kMaxClipDim = 1u << 16;

}  // namespace

void write_clip(const std::string& path, const Clip& clip) {
  if (clip.frames.ndim() != 4) fail(Errc::invalid_argument, "write_clip: frames must be T x C x H x W");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io, "write_clip: cannot open " + path);
  os.write("ATMC", 4);
  os.put(1);  // version
  for (int d = 0; d < 4; ++d) put_u32(os, static_cast<uint32_t>(clip.frames.dim(d)));
  put_u32(os, static_cast<uint32_t>(clip.label));
  const double* src = clip.frames.data();
  for (int64_t i = 0; i < clip.frames.size(); ++i) {
    float f = static_cast<float>(src[i]);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
  if (!os) fail(Errc::io, "write_clip: write failed for " + path);
}

Clip read_clip(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::io, "read_clip: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ATMC", 4) != 0) fail(Errc::bad_magic, "read_clip: bad magic");
  int version = is.get();
  if (version != 1) fail(Errc::bad_magic, "read_clip: unsupported version");
  uint32_t dims[4];
  for (auto& d : dims) {
    d = get_u32(is);
    if (d == 0 || d > kMaxClipDim) fail(Errc::dim_overflow, "read_clip: dimension out of range");
  }
  uint64_t count = 1;
  for (uint32_t d : dims) {
    count *= d;
    if (count > (1ull << 32)) fail(Errc::dim_overflow, "read_clip: payload too large");
  }
  uint32_t label = get_u32(is);
  std::vector<double> data(count);
  for (auto& v : data) {
    uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    v = static_cast<double>(f);
  }
  Tensor frames = Tensor::from_data({dims[0], dims[1], dims[2], dims[3]}, std::move(data));
  return Clip{frames, static_cast<int>(label)};
}

void write_dataset(const std::string& out_dir, const SynthClipSpec& base, int train_clips,
                   int test_clips) {
  namespace fs = std::filesystem;
  int classes = synth_task_classes(base.task);
  if (train_clips % classes != 0 || test_clips % classes != 0)
    fail(Errc::invalid_argument, "write_dataset: split sizes must be multiples of the class count");
  auto emit = [&](const char* split, int n, uint64_t offset) {
    int seeds = n / classes;
    for (int s = 0; s < seeds; ++s)
      for (int label = 0; label < classes; ++label) {
        SynthClipSpec spec = base;
        spec.seed = offset + static_cast<uint64_t>(s);
        fs::path dir = fs::path(out_dir) / split / std::to_string(label);
        fs::create_directories(dir);
        write_clip((dir / (std::to_string(spec.seed) + ".atmc")).string(), gen_clip(spec, label));
      }
  };
  emit("train", train_clips, 0);
  emit("test", test_clips, static_cast<uint64_t>(train_clips / classes));
}

void write_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int64_t h, int64_t w) {
  if (static_cast<int64_t>(pixels.size()) != h * w)
    fail(Errc::invalid_argument, "write_pgm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io, "write_pgm: cannot open " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) fail(Errc::io, "write_pgm: write failed");
}

std::vector<std::vector<uint8_t>> visualize_ops(const Tensor& frame_a, const Tensor& frame_b,
                                                const MulParams& p, double eps) {
  if (frame_a.ndim() != 2 || frame_b.ndim() != 2)
    fail(Errc::invalid_argument, "visualize_ops: frames must be H x W");
  if (frame_a.shape() != frame_b.shape())
    fail(Errc::shape_mismatch, "visualize_ops: frame sizes differ");
  int64_t h = frame_a.dim(0), w = frame_a.dim(1);
  Tensor a = reshape(frame_a, {1, h, w});
  Tensor b = reshape(frame_b, {1, h, w});

  auto normalize = [&](const Tensor& m) {
    double lo = m.data()[0], hi = m.data()[0];
    for (int64_t i = 0; i < m.size(); ++i) {
      lo = std::min(lo, m.data()[i]);
      hi = std::max(hi, m.data()[i]);
    }
    std::vector<uint8_t> img(static_cast<size_t>(h * w), 0);
    if (hi > lo)
      for (int64_t i = 0; i < h * w; ++i)
        img[static_cast<size_t>(i)] =
            static_cast<uint8_t>(std::lround(255.0 * (m.data()[i] - lo) / (hi - lo)));
    return img;
  };

  int center = (p.p * p.p - 1) / 2;
  std::vector<std::vector<uint8_t>> out;
  out.push_back(normalize(op_add(a, b)));
  out.push_back(normalize(op_sub(a, b)));
  out.push_back(normalize(slice0(op_mul_local(a, b, p), center)));
  out.push_back(normalize(op_div_log(a, b, eps)));
  return out;
}

}  // namespace atm
