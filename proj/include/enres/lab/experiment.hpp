#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "enres/attack/attacks.hpp"
#include "enres/lab/dataset.hpp"
#include "enres/lab/evaluate.hpp"
#include "enres/lab/training.hpp"
#include "enres/net/enresnet.hpp"

namespace enres::lab {

using json = nlohmann::ordered_json;

/// Architecture and noise of a freshly initialized ensemble.
struct ModelConfig {
  std::size_t members = 1;
  std::size_t width = 16;
  std::size_t blocks = 3;
  net::NoiseSpec noise;
  std::uint64_t seed = 1;

  net::EnResNetModel build(std::size_t in_channels, std::size_t classes) const;
};

// Each parser rejects keys it does not know with a ConfigError naming the
// full key path (for example "train.pgd_iter"). `where` prefixes that path.
DatasetSpec parse_dataset_spec(const json& j, const std::string& where = "data");
ModelConfig parse_model_config(const json& j, const std::string& where = "model");
TrainConfig parse_train_config(const json& j, const std::string& where = "train");
attack::AttackSpec parse_attack_spec(const json& j, const std::string& where = "attack");

json report_to_json(const EvalReport& report);

struct PdeFigureConfig {
  int n = 128;
  std::vector<double> sigmas{0.0, 0.01, 0.1};
  double dt = 1e-3;
  int terminal_cutoff = 8;
  std::uint64_t seed = 0;
};

struct FkCompareConfig {
  int n = 32;
  double sigma = 0.1;
  long paths = 20000;
  int probes = 16;
  double dt = 1e-3;
  int terminal_cutoff = 4;
  int refine = 4;
  std::uint64_t seed = 7;
};

struct NamedModel {
  std::string name;
  ModelConfig model;
  TrainConfig train;
};

struct ExperimentConfig {
  std::string pipeline;  // pde-figure | fk-compare | train-eval | blind-matrix | weight-learning
  PdeFigureConfig pde;
  FkCompareConfig fk;
  DatasetSpec data;
  ModelConfig model;
  TrainConfig train;
  std::vector<attack::AttackSpec> attacks;
  std::vector<NamedModel> models;  // blind-matrix
  std::uint64_t eval_seed = 7;
};

/// Validates a whole configuration; nothing is executed or written.
ExperimentConfig parse_experiment_config(const json& j);

/// Runs the pipeline, writes report.json plus CSV artifacts into `out_dir`
/// and returns the report. Timings go to timing.json so that report.json is
/// reproducible byte for byte.
json run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Reads a UTF-8 JSON config file (ConfigError on syntax errors).
json read_config_file(const std::filesystem::path& path);

/// Worker cap from ENRESNET_THREADS (default 1, values < 1 rejected).
int worker_threads();

}  // namespace enres::lab
