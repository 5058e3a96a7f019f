#include "atm.h"

#include <cstdlib>
#include <cstring>
#include <sstream>
#include <string>

#include "atm/harness.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

atm_status status_of(atm::Errc c) {
  using atm::Errc;
  switch (c) {
    case Errc::invalid_argument:
    case Errc::shape_mismatch:
    case Errc::domain:
    case Errc::dim_overflow: return ATM_ERR_INVALID_ARGUMENT;
    case Errc::numeric: return ATM_ERR_NUMERIC;
    case Errc::io:
    case Errc::bad_magic:
    case Errc::truncated: return ATM_ERR_IO;
    case Errc::config: return ATM_ERR_CONFIG;
  }
  return ATM_ERR_INTERNAL;
}

template <typename Fn>
atm_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return ATM_OK;
  } catch (const atm::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return ATM_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ATM_ERR_INTERNAL;
  }
}

atm_status require(bool ok, const char* what) {
  if (ok) return ATM_OK;
  g_last_error = std::string("null argument: ") + what;
  return ATM_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* atm_last_error(void) { return g_last_error.c_str(); }

void atm_free_string(char* s) { std::free(s); }

atm_status atm_dataset_generate(const char* dataset_json, const char* out_dir) {
  if (atm_status s = require(dataset_json && out_dir, "dataset_json/out_dir")) return s;
  return guarded([&] {
    atm::json j = atm::json::parse(dataset_json);
    atm::json wrapped{{"dataset", j}};
    atm::TrainConfig cfg = atm::train_config_from_json(wrapped);
    atm::write_dataset(out_dir, cfg.dataset.base, cfg.dataset.train_clips, cfg.dataset.test_clips);
  });
}

atm_status atm_train(const char* config_json, const char* model_out, char** report_json) {
  if (atm_status s = require(config_json && report_json, "config_json/report_json")) return s;
  return guarded([&] {
    atm::TrainConfig cfg = atm::train_config_from_json(atm::json::parse(config_json));
    atm::Model model(cfg.stem, cfg.atm, cfg.seed);
    atm::RunReport report = atm::train(cfg, &model);
    if (model_out) atm::save_model(model_out, model, cfg);
    *report_json = dup_string(atm::report_to_json(report).dump(2));
  });
}

atm_status atm_evaluate(const char* model_path, double* top1) {
  if (atm_status s = require(model_path && top1, "model_path/top1")) return s;
  return guarded([&] {
    atm::LoadedModel loaded = atm::load_model(model_path);
    int classes = atm::synth_task_classes(loaded.cfg.dataset.base.task);
    std::vector<atm::Clip> test_split =
        atm::gen_split(loaded.cfg.dataset.base, loaded.cfg.dataset.test_clips,
                       static_cast<uint64_t>(loaded.cfg.dataset.train_clips / classes));
    *top1 = atm::evaluate(*loaded.model, test_split);
  });
}

atm_status atm_gradcheck(int instances_per_check, char** report_json, int* all_pass) {
  if (atm_status s = require(report_json && all_pass, "report_json/all_pass")) return s;
  return guarded([&] {
    if (instances_per_check < 1) atm::fail(atm::Errc::invalid_argument, "instances must be >= 1");
    atm::GradCheckReport r = atm::run_gradcheck_suite(instances_per_check);
    *report_json = dup_string(atm::gradcheck_to_json(r).dump(2));
    *all_pass = r.all_pass ? 1 : 0;
  });
}

atm_status atm_flops_table(const char* atm_json, int64_t t, int64_t c, int64_t h, int64_t w,
                           const char* z_list, char** table_json) {
  if (atm_status s = require(atm_json && z_list && table_json, "atm_json/z_list/table_json"))
    return s;
  return guarded([&] {
    atm::AtmConfig cfg = atm::atm_config_from_json(atm::json::parse(atm_json));
    std::vector<int> zs;
    std::stringstream ss(z_list);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) zs.push_back(std::stoi(item));
    if (zs.empty()) atm::fail(atm::Errc::invalid_argument, "empty z list");
    *table_json = dup_string(atm::flops_table(cfg, t, c, h, w, zs).dump(2));
  });
}

atm_status atm_visualize(const char* out_dir, int image_size, double shift_px, char** paths_json) {
  if (atm_status s = require(out_dir && paths_json, "out_dir/paths_json")) return s;
  return guarded([&] {
    if (image_size < 8) atm::fail(atm::Errc::invalid_argument, "image_size must be >= 8");
    auto paths = atm::run_viz(out_dir, image_size, shift_px);
    *paths_json = dup_string(atm::json(paths).dump(2));
  });
}

atm_status atm_ablate(const char* base_config_json, const char* grid_json, const char* out_dir,
                      char** summary_json) {
  if (atm_status s = require(base_config_json && grid_json && out_dir && summary_json,
                             "base_config_json/grid_json/out_dir/summary_json"))
    return s;
  return guarded([&] {
    atm::TrainConfig base = atm::train_config_from_json(atm::json::parse(base_config_json));
    atm::json summary = atm::ablate(base, atm::json::parse(grid_json), out_dir);
    *summary_json = dup_string(summary.dump(2));
  });
}

}  // extern "C"
