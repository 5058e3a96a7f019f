#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "atm.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kTinyConfig = R"({
  "epochs": 1, "batch_size": 4, "lr": 0.01, "seed": 5,
  "stem": {"kind": "cnn", "atm_site": 2},
  "atm": {"ops": ["sub"], "z": 2, "p": 3, "reduce_spatial": true},
  "dataset": {"task": "direction2", "frames": 4, "image_size": 16,
              "train_clips": 8, "test_clips": 4}
})";

std::string grab(char* s) {
  std::string out = s ? s : "";
  atm_free_string(s);
  return out;
}

}  // namespace

TEST_CASE("train returns a report and evaluate matches it") {
  std::string model_path = (fs::temp_directory_path() / "capi_model.bin").string();
  char* report = nullptr;
  REQUIRE(atm_train(kTinyConfig, model_path.c_str(), &report) == ATM_OK);
  json r = json::parse(grab(report));
  CHECK(r.contains("epochs"));
  CHECK(r.contains("test_top1"));
  CHECK(r.contains("macs"));
  CHECK(r.contains("wall_ms"));
  CHECK(r.contains("config"));

  double top1 = -1.0;
  REQUIRE(atm_evaluate(model_path.c_str(), &top1) == ATM_OK);
  CHECK(top1 == r["test_top1"].get<double>());
  std::remove(model_path.c_str());
}

TEST_CASE("dataset generation writes the split tree") {
  std::string dir = (fs::temp_directory_path() / "capi_ds").string();
  fs::remove_all(dir);
  const char* ds = R"({"task": "direction2", "frames": 4, "image_size": 16,
                       "train_clips": 4, "test_clips": 2})";
  REQUIRE(atm_dataset_generate(ds, dir.c_str()) == ATM_OK);
  CHECK(fs::exists(fs::path(dir) / "train" / "0"));
  CHECK(fs::exists(fs::path(dir) / "test" / "1"));
  fs::remove_all(dir);
}

TEST_CASE("bad inputs map to stable status codes") {
  char* out = nullptr;
  CHECK(atm_train(nullptr, nullptr, &out) == ATM_ERR_INVALID_ARGUMENT);
  CHECK(atm_train("{not json", nullptr, &out) == ATM_ERR_CONFIG);
  CHECK(atm_train(R"({"lr": -1})", nullptr, &out) == ATM_ERR_CONFIG);
  CHECK(std::string(atm_last_error()).size() > 0);

  double top1 = 0.0;
  CHECK(atm_evaluate("/nonexistent/weights.bin", &top1) == ATM_ERR_IO);

  char* table = nullptr;
  CHECK(atm_flops_table(R"({"ops": ["sub"]})", 8, 16, 14, 14, "", &table) ==
        ATM_ERR_INVALID_ARGUMENT);
  int ap = 0;
  CHECK(atm_gradcheck(0, &table, &ap) == ATM_ERR_INVALID_ARGUMENT);
}

TEST_CASE("flops table through the C surface") {
  char* table = nullptr;
  REQUIRE(atm_flops_table(R"({"ops": ["mul"], "p": 9})", 8, 32, 14, 14, "1,2,4", &table) == ATM_OK);
  json t = json::parse(grab(table));
  REQUIRE(t["rows"].size() == 3);
  CHECK(t["rows"][0]["z"] == 1);
  CHECK(t["rows"][2]["total"].get<int64_t>() > t["rows"][0]["total"].get<int64_t>());
}

TEST_CASE("visualize emits paths") {
  std::string dir = (fs::temp_directory_path() / "capi_viz").string();
  fs::remove_all(dir);
  char* paths = nullptr;
  REQUIRE(atm_visualize(dir.c_str(), 16, 2.0, &paths) == ATM_OK);
  json p = json::parse(grab(paths));
  REQUIRE(p.size() == 4);
  for (const auto& f : p) CHECK(fs::exists(f.get<std::string>()));
  fs::remove_all(dir);
}

TEST_CASE("gradcheck through the C surface") {
  char* report = nullptr;
  int all_pass = -1;
  REQUIRE(atm_gradcheck(1, &report, &all_pass) == ATM_OK);
  json r = json::parse(grab(report));
  CHECK(r["entries"].size() >= 20);
  CHECK((all_pass == 0 || all_pass == 1));
}
