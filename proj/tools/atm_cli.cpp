// Command-line front end; talks to the library through the C API only.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "atm.h"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitInternal = 1;

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    std::cerr << "cannot read " << path << "\n";
    std::exit(kExitUsage);
  }
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream os(path);
  if (!os) {
    std::cerr << "cannot write " << path << "\n";
    std::exit(kExitInternal);
  }
  os << body << "\n";
}

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    std::cerr << "malformed JSON in " << what << "\n";
    std::exit(kExitUsage);
  }
  return j;
}

int check(atm_status s) {
  if (s == ATM_OK) return 0;
  std::cerr << "error: " << atm_last_error() << "\n";
  std::exit(s == ATM_ERR_INVALID_ARGUMENT || s == ATM_ERR_CONFIG ? kExitUsage : kExitInternal);
}

std::string take_string(char* owned) {
  std::string out = owned ? owned : "";
  atm_free_string(owned);
  return out;
}

void emit(const std::string& body, const std::string& out_path) {
  if (out_path.empty())
    std::cout << body << "\n";
  else
    write_file(out_path, body);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"arithmetic temporal modeling toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, model_path, grid_path, z_list = "1,2,4,6";
  int64_t seed = -1;
  int instances = 20, image_size = 28;
  double shift = 2.0;
  int64_t ft = 8, fc = 32, fh = 14, fw = 14;

  auto* gen = app.add_subcommand("gen", "write a synthetic clip dataset");
  gen->add_option("--config", config_path, "dataset config JSON")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model and report metrics");
  train->add_option("--config", config_path, "training config JSON")->required();
  train->add_option("--out", out_path, "run report path (stdout if omitted)");
  train->add_option("--model", model_path, "also save trained weights here");
  train->add_option("--seed", seed, "override the config seed");

  auto* eval = app.add_subcommand("eval", "re-evaluate saved weights on the test split");
  eval->add_option("--model", model_path, "weights file from train --model")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient sweep");
  gradcheck->add_option("--out", out_path, "report path (stdout if omitted)");
  gradcheck->add_option("--instances", instances, "seeded instances per check");

  auto* flops = app.add_subcommand("flops", "MAC table over a context-size sweep");
  flops->add_option("--config", config_path, "module config JSON")->required();
  flops->add_option("--out", out_path, "table path (stdout if omitted)");
  flops->add_option("--z", z_list, "comma-separated context sizes");
  flops->add_option("--frames", ft, "clip length");
  flops->add_option("--channels", fc, "feature channels at the site");
  flops->add_option("--height", fh, "feature height");
  flops->add_option("--width", fw, "feature width");

  auto* viz = app.add_subcommand("viz", "render the four op response maps as PGMs");
  viz->add_option("--out", out_path, "output directory")->required();
  viz->add_option("--size", image_size, "frame side length");
  viz->add_option("--shift", shift, "blob shift in pixels between frames");

  auto* ablate = app.add_subcommand("ablate", "train one run per grid cell");
  ablate->add_option("--config", config_path, "base training config JSON")->required();
  ablate->add_option("--grid", grid_path, "grid JSON (ops/z/extractor/style)")->required();
  ablate->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (gen->parsed()) {
    json cfg = parse_json(read_file(config_path), config_path);
    json dataset = cfg.contains("dataset") ? cfg.at("dataset") : cfg;
    check(atm_dataset_generate(dataset.dump().c_str(), out_path.c_str()));
    return 0;
  }

  if (train->parsed()) {
    json cfg = parse_json(read_file(config_path), config_path);
    if (seed >= 0) cfg["seed"] = seed;
    char* report = nullptr;
    check(atm_train(cfg.dump().c_str(), model_path.empty() ? nullptr : model_path.c_str(),
                    &report));
    emit(take_string(report), out_path);
    return 0;
  }

  if (eval->parsed()) {
    double top1 = 0.0;
    check(atm_evaluate(model_path.c_str(), &top1));
    std::cout << json{{"test_top1", top1}}.dump() << "\n";
    return 0;
  }

  if (gradcheck->parsed()) {
    char* report = nullptr;
    int all_pass = 0;
    check(atm_gradcheck(instances, &report, &all_pass));
    emit(take_string(report), out_path);
    return all_pass ? 0 : kExitInternal;
  }

  if (flops->parsed()) {
    char* table = nullptr;
    check(atm_flops_table(read_file(config_path).c_str(), ft, fc, fh, fw, z_list.c_str(), &table));
    emit(take_string(table), out_path);
    return 0;
  }

  if (viz->parsed()) {
    char* paths = nullptr;
    check(atm_visualize(out_path.c_str(), image_size, shift, &paths));
    std::cout << take_string(paths) << "\n";
    return 0;
  }

  if (ablate->parsed()) {
    char* summary = nullptr;
    check(atm_ablate(read_file(config_path).c_str(), read_file(grid_path).c_str(),
                     out_path.c_str(), &summary));
    std::cout << take_string(summary) << "\n";
    return 0;
  }

  return kExitUsage;
}
