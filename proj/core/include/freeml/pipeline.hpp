#pragma once

#include <optional>
#include <string>
#include <vector>

#include "freeml/core.hpp"
#include "freeml/describe.hpp"
#include "freeml/encode.hpp"
#include "freeml/linearize.hpp"
#include "freeml/tensor.hpp"

namespace freeml {

// How descriptions for a dataset are produced. The default is the plain
// per-sample linearization; experiments toggle auxiliary observations
// (FREE-C) and per-sample feature subsets (FREE-Am).
struct DescriptionVariant {
  enum class AuxLabelSource { observed, simulated };

  bool use_aux = false;  // include the prior-day current-site observation when available
  AuxLabelSource aux_source = AuxLabelSource::observed;
  const SiteGraph* neighbor_graph = nullptr;  // optional prior-day neighbor observations
  std::string target_name = "water temperature";

  // FREE-Am: keep the meteorological features plus, per sample, a seeded
  // random subset of `additional_m` of the additional features.
  std::optional<int> additional_m;
  std::uint64_t feature_seed = 0;
};

// One text per sample, parallel to Dataset::samples().
struct DescriptionSet {
  std::vector<std::string> texts;
  std::uint64_t content_hash() const;
};

LinearizedRecord linearize_for_variant(const Dataset& ds, std::size_t sample_index,
                                       const DescriptionVariant& variant);

DescriptionSet build_descriptions(const Dataset& ds, const PromptConfig& prompt,
                                  const DescriptionVariant& variant = {},
                                  DescriptionCache* cache = nullptr, int threads = 1);

// Token id sequences, parallel to Dataset::samples().
struct TokenizedSet {
  std::vector<std::vector<int>> ids;
};

TokenizedSet tokenize_set(const DescriptionSet& descriptions, const Vocabulary& vocab,
                          int max_len, int threads = 1);

enum class LabelKind { observed, simulated };

// A window of consecutive per-site samples; the model consumes the step
// embeddings, the loss the masked labels.
struct SampleWindow {
  std::string site_id;
  Date start;
  std::vector<std::size_t> sample_idx;
  std::vector<float> labels;
  std::vector<char> mask;
  int masked_count = 0;

  int length() const { return static_cast<int>(sample_idx.size()); }
};

std::vector<SampleWindow> build_windows(const Dataset& ds, LabelKind kind, int window_len,
                                        int stride);

// Per-feature standardization for the pass-through (LSTM-only) encoder.
struct FeatureStats {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> sd;
};

FeatureStats compute_feature_stats(const Dataset& ds, const std::vector<std::string>& schema);

// (value - mean) / sd per schema feature; absent features become 0.
Mat<float> build_feature_matrix(const Dataset& ds, const FeatureStats& stats);

// Embeddings for every sample (rows parallel to Dataset::samples()).
Mat<float> embed_all(const TokenizedSet& tokens, const EncoderParams<float>& encoder,
                     int threads = 1);

}  // namespace freeml
