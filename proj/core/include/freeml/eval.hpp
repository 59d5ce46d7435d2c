#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "freeml/config.hpp"
#include "freeml/train.hpp"

namespace freeml {

// sqrt of the masked mean squared error. Computed independently of
// masked_mse; the two are cross-checked in tests.
double rmse(std::span<const double> predictions, std::span<const double> observations,
            std::span<const char> mask);

struct RunRecord {
  std::string condition;  // e.g. "fraction=0.01", "m=4", "auxiliary"
  std::string arm;        // e.g. "pretrained", "scratch", "free", "free_c"
  std::uint64_t seed = 0;
  double rmse = 0.0;
  std::string checkpoint;      // saved path, empty when save_checkpoints=false
  std::string pretrain_hash;   // hex, empty for scratch arms
  std::string final_hash;      // hex
};

struct ExperimentReport {
  std::string experiment_id;
  nlohmann::json config;  // resolved snapshot
  std::string data_hash;
  std::vector<RunRecord> rows;

  nlohmann::json to_json() const;
  // report.json, results.csv (long format: condition,arm,seed,rmse) and
  // config.json under dir.
  void write(const std::filesystem::path& dir) const;
};

// Predicts on `desc_data` (descriptions + windows) and scores against the
// observed labels of `metric_data`; the two datasets must be sample-aligned.
double evaluate_rmse(const Checkpoint& ckpt, const Dataset& desc_data,
                     const Dataset& metric_data, const PromptConfig& prompt,
                     const DescriptionVariant& variant, int threads);

// Random-initialization checkpoint (the from-scratch starting point).
Checkpoint make_initial_checkpoint(const Dataset& data, const DescriptionSet& descriptions,
                                   const Vocabulary& vocab, const ModelConfig& model,
                                   std::uint64_t seed);

// Table-1-style protocol: per fraction x seed, fine-tune from pretrained and
// from scratch on subsampled labels, evaluate test RMSE.
ExperimentReport run_sparsity(const RunConfig& cfg);

// FREE vs FREE-C (prior-day current-site observation in the description).
ExperimentReport run_auxiliary(const RunConfig& cfg);

// FREE-Am: meteorological features plus m randomly selected additional
// features per sample.
ExperimentReport run_feature_sets(const RunConfig& cfg);

// Transfer: fine-tune from source-pretrained / target-pretrained / scratch on
// a held-out target site.
ExperimentReport run_transfer(const RunConfig& cfg);

struct ProbeResult {
  double accuracy = 0.0;
  std::size_t n_summer = 0;
  std::size_t n_winter = 0;
};

// Least-squares linear probe separating summer (Jun-Aug) from winter
// (Dec-Feb) embeddings; optionally exports the embeddings to CSV
// (site_id,date,season,e0..eD-1).
ProbeResult probe_embeddings(const Checkpoint& ckpt, const Dataset& data,
                             const PromptConfig& prompt, std::uint64_t seed,
                             const std::filesystem::path* export_csv = nullptr,
                             int threads = 1);

}  // namespace freeml
