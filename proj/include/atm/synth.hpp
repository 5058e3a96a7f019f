#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atm/interact.hpp"

namespace atm {

enum class SynthTask { direction2, direction4, speed2 };

const char* synth_task_name(SynthTask t);
SynthTask synth_task_from_name(const std::string& name);
int synth_task_classes(SynthTask t);

// Parameters of one generated motion clip; the seed fully determines the
// pixels.
struct SynthClipSpec {
  SynthTask task = SynthTask::direction2;
  int frames = 8;
  int image_size = 28;
  double blob_radius = 3.0;
  double velocity = 2.0;  // px/frame
  double noise_stddev = 0.0;
  uint64_t seed = 0;
};

// One generated clip: pixels T x 1 x H x W in [0, 1] plus its class label.
struct Clip {
  Tensor frames;
  int label = 0;
};

// Gaussian blob translated per the task and velocity. For direction2 the
// left-class clip of a seed is the exact frame reversal of the right-class
// clip of the same seed, so unordered frame sets coincide across classes.
Clip gen_clip(const SynthClipSpec& spec, int label);

// ATMC binary clip container: "ATMC", version u8, T/C/H/W u32 LE, label u32,
// float32 LE row-major payload, byte-exact round trip.
void write_clip(const std::string& path, const Clip& clip);
Clip read_clip(const std::string& path);

// Writes `<out_dir>/<split>/<label>/<seed>.atmc` for every (seed, label) cell.
// Seed ranges of the splits are disjoint; classes are exactly balanced.
void write_dataset(const std::string& out_dir, const SynthClipSpec& base, int train_clips,
                   int test_clips);

// In-memory split: n_clips / num_classes seeds starting at seed_offset, one
// clip per class per seed. n_clips must divide evenly by the class count.
std::vector<Clip> gen_split(const SynthClipSpec& base, int n_clips, uint64_t seed_offset);

// 8-bit binary PGM (P5).
void write_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int64_t h, int64_t w);

// Applies the four arithmetic ops to a pair of raw single-channel frames in
// [0,1] (center offset channel for the local multiplication), min-max
// normalizes each map to [0,255] and returns them in op order (+,-,x,/).
std::vector<std::vector<uint8_t>> visualize_ops(const Tensor& frame_a, const Tensor& frame_b,
                                                const MulParams& p, double eps);

}  // namespace atm
