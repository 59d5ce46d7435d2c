#include "freeml/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "freeml/simulate.hpp"

namespace freeml {

std::uint64_t DescriptionSet::content_hash() const {
  HashStream hs;
  for (const auto& t : texts) hs.field(t);
  return hs.digest();
}

namespace {

std::optional<std::set<std::string>> subset_for_sample(const Sample& s,
                                                       const DescriptionVariant& variant) {
  if (!variant.additional_m) return std::nullopt;
  const auto& met = meteorological_features();
  const auto& extra = additional_features();
  int m = *variant.additional_m;
  if (m < 0 || m > static_cast<int>(extra.size())) {
    throw std::invalid_argument("additional_m must lie in [0, " +
                                std::to_string(extra.size()) + "]");
  }
  std::set<std::string> keep(met.begin(), met.end());
  std::vector<std::size_t> order(extra.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(variant.feature_seed, "features:" + s.site_id + "|" + s.date.iso()));
  rng.shuffle(order);
  for (int i = 0; i < m; ++i) keep.insert(extra[order[static_cast<std::size_t>(i)]]);
  return keep;
}

std::optional<double> label_of(const Sample& s, DescriptionVariant::AuxLabelSource src) {
  return src == DescriptionVariant::AuxLabelSource::observed ? s.observed_label
                                                             : s.simulated_label;
}

}  // namespace

LinearizedRecord linearize_for_variant(const Dataset& ds, std::size_t sample_index,
                                       const DescriptionVariant& variant) {
  const Sample& s = ds.samples().at(sample_index);
  auto subset = subset_for_sample(s, variant);
  if (!variant.use_aux) {
    return linearize(s, subset);
  }

  std::vector<AuxObservation> aux;
  Date prev = s.date.plus_days(-1);
  if (const Sample* p = ds.find(s.site_id, prev)) {
    if (auto y = label_of(*p, variant.aux_source)) {
      aux.push_back(AuxObservation{s.site_id, prev, *y, AuxRelation::current_site});
    }
  }
  if (variant.neighbor_graph) {
    for (const auto& n : variant.neighbor_graph->of(s.site_id)) {
      if (const Sample* p = ds.find(n, prev)) {
        if (auto y = label_of(*p, variant.aux_source)) {
          aux.push_back(AuxObservation{n, prev, *y, AuxRelation::neighbor});
        }
      }
    }
  }
  return linearize_with_auxiliary(s, aux, variant.target_name, subset);
}

DescriptionSet build_descriptions(const Dataset& ds, const PromptConfig& prompt,
                                  const DescriptionVariant& variant, DescriptionCache* cache,
                                  int threads) {
  prompt.validate();
  DescriptionSet out;
  out.texts.resize(ds.size());
  // remote generation runs with bounded parallelism; template rendering is pure
  int workers = prompt.source == DescriptionSource::remote_llm ? std::min(threads, 4) : threads;
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    LinearizedRecord rec = linearize_for_variant(ds, i, variant);
    out.texts[i] = describe(prompt, rec, cache).text;
  });
  return out;
}

TokenizedSet tokenize_set(const DescriptionSet& descriptions, const Vocabulary& vocab,
                          int max_len, int threads) {
  TokenizedSet out;
  out.ids.resize(descriptions.texts.size());
  parallel_for(descriptions.texts.size(), threads, [&](std::size_t i) {
    out.ids[i] = tokenize(descriptions.texts[i], vocab, max_len);
  });
  return out;
}

std::vector<SampleWindow> build_windows(const Dataset& ds, LabelKind kind, int window_len,
                                        int stride) {
  if (window_len < 1 || stride < 1) {
    throw std::invalid_argument("window length and stride must be positive");
  }
  std::vector<SampleWindow> windows;
  for (const auto& site : ds.sites()) {
    auto idx = ds.site_indices(site);
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(stride)) {
      std::size_t len = std::min<std::size_t>(window_len, idx.size() - start);
      SampleWindow w;
      w.site_id = site;
      w.start = ds.samples()[idx[start]].date;
      w.sample_idx.reserve(len);
      w.labels.reserve(len);
      w.mask.reserve(len);
      for (std::size_t j = 0; j < len; ++j) {
        const Sample& s = ds.samples()[idx[start + j]];
        auto label = kind == LabelKind::observed ? s.observed_label : s.simulated_label;
        w.sample_idx.push_back(idx[start + j]);
        w.labels.push_back(label ? static_cast<float>(*label) : 0.0f);
        w.mask.push_back(label.has_value());
        w.masked_count += label.has_value();
      }
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

FeatureStats compute_feature_stats(const Dataset& ds, const std::vector<std::string>& schema) {
  FeatureStats stats;
  stats.names = schema;
  stats.mean.assign(schema.size(), 0.0);
  stats.sd.assign(schema.size(), 1.0);
  for (std::size_t k = 0; k < schema.size(); ++k) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : ds.samples()) {
      if (const Feature* f = s.find_feature(schema[k])) {
        sum += f->value;
        sum_sq += f->value * f->value;
        ++n;
      }
    }
    if (n > 0) {
      double mean = sum / static_cast<double>(n);
      double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
      stats.mean[k] = mean;
      stats.sd[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
  }
  return stats;
}

Mat<float> build_feature_matrix(const Dataset& ds, const FeatureStats& stats) {
  Mat<float> out = Mat<float>::Zero(static_cast<Eigen::Index>(ds.size()),
                                    static_cast<Eigen::Index>(stats.names.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples()[i];
    for (std::size_t k = 0; k < stats.names.size(); ++k) {
      if (const Feature* f = s.find_feature(stats.names[k])) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            static_cast<float>((f->value - stats.mean[k]) / stats.sd[k]);
      }
    }
  }
  return out;
}

Mat<float> embed_all(const TokenizedSet& tokens, const EncoderParams<float>& encoder,
                     int threads) {
  Mat<float> out(static_cast<Eigen::Index>(tokens.ids.size()), encoder.cfg.dim);
  parallel_for(tokens.ids.size(), threads, [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = encode<float>(tokens.ids[i], encoder).transpose();
  });
  return out;
}

}  // namespace freeml
