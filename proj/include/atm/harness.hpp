#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "atm/backbone.hpp"
#include "atm/synth.hpp"

namespace atm {

using nlohmann::json;

struct DatasetConfig {
  SynthClipSpec base;
  int train_clips = 400;
  int test_clips = 200;
};

struct TrainConfig {
  int epochs = 6;
  int batch_size = 8;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 5.0;  // global-norm clip; 0 disables
  uint64_t seed = 1;
  StemConfig stem;
  std::optional<AtmConfig> atm;
  DatasetConfig dataset;

  void validate() const;
};

struct RunReport {
  std::vector<double> epoch_losses;
  double test_top1 = 0.0;
  int64_t macs = 0;
  int64_t wall_ms = 0;
  json config_echo;
};

// JSON codecs; config keys mirror the field names.
TrainConfig train_config_from_json(const json& j);
json train_config_to_json(const TrainConfig& cfg);
AtmConfig atm_config_from_json(const json& j);
json atm_config_to_json(const AtmConfig& cfg);
json report_to_json(const RunReport& r);

// SGD with momentum on cross-entropy; fully deterministic in cfg.seed.
// Aborts with an error on NaN loss. Fills out_model when given so the result
// can be evaluated or saved.
RunReport train(const TrainConfig& cfg, Model* out_model = nullptr);

// Single-view top-1 accuracy; argmax ties break toward the lowest class.
double evaluate(const Model& model, const std::vector<Clip>& split);

// Model weights container (config echo + float64 parameter payload).
void save_model(const std::string& path, const Model& model, const TrainConfig& cfg);
struct LoadedModel {
  std::unique_ptr<Model> model;
  TrainConfig cfg;
};
LoadedModel load_model(const std::string& path);

// Seeded finite-difference sweep over every differentiable op and block
// configuration plus end-to-end stems.
struct GradCheckEntry {
  std::string name;
  double max_err = 0.0;
  double threshold = 0.0;
  int instances = 0;
  bool pass = false;
};
struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = false;
};
GradCheckReport run_gradcheck_suite(int instances_per_check = 20);
json gradcheck_to_json(const GradCheckReport& r);

// MAC table over a context-range sweep for one base config.
json flops_table(const AtmConfig& base, int64_t t, int64_t c, int64_t h, int64_t w,
                 const std::vector<int>& z_values);

// Grid runner: one trained RunReport per cell of ops x Z x extractor x style.
// Cells are written as JSON files under out_dir; returns a summary.
json ablate(const TrainConfig& base, const json& grid, const std::string& out_dir);

// Figure-style op visualization on a generated blob pair; writes four PGMs
// (add/sub/mul/div) into out_dir and returns their paths.
std::vector<std::string> run_viz(const std::string& out_dir, int image_size, double shift_px);

}  // namespace atm
