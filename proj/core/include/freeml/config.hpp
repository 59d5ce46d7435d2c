#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "freeml/describe.hpp"
#include "freeml/simulate.hpp"
#include "freeml/train.hpp"

namespace freeml {

struct ExperimentSettings {
  std::vector<double> fractions = {0.01, 0.02, 0.04};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<int> m_values = {0, 4};
  std::vector<std::string> source_sites = {"s1", "s2", "s3", "s4", "s5", "s6", "s7"};
  std::string target_site = "s8";
  double label_fraction = 1.0;       // finetune label fraction for auxiliary/feature runs
  double aux_test_observable = 1.0;  // fraction of test observations usable as prior-day aux
  int workers = 1;
  std::string out_dir = "runs";
  bool save_checkpoints = true;
};

// One configuration file drives every subcommand; unknown keys are rejected
// and each run writes the fully resolved config next to its outputs.
struct RunConfig {
  // data
  std::optional<std::string> data_csv;
  std::vector<std::string> schema = synthetic_schema();
  std::optional<std::string> neighbors_csv;
  std::string train_end = "2003-04-14";

  BenchmarkSpec benchmark;
  PromptConfig prompt = PromptConfig::defaults();
  std::optional<std::string> cache_path;
  ModelConfig model;
  TrainConfig pretrain_cfg = TrainConfig::pretrain_defaults();
  TrainConfig finetune_cfg = TrainConfig::finetune_defaults();
  TrainConfig scratch_cfg;  // from-scratch arm: finetune phase, pretrain-style lr
  ExperimentSettings experiment;

  RunConfig();

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // The configured dataset: data_csv when given, the synthetic benchmark
  // otherwise.
  Dataset load_data() const;
  Date train_boundary() const { return Date::parse(train_end); }
};

}  // namespace freeml
