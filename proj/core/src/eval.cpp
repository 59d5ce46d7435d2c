#include "freeml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace freeml {

double rmse(std::span<const double> predictions, std::span<const double> observations,
            std::span<const char> mask) {
  if (predictions.size() != observations.size() || predictions.size() != mask.size()) {
    throw std::invalid_argument("rmse inputs must have equal length");
  }
  double sq = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    double r = predictions[i] - observations[i];
    sq += r * r;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("rmse requires at least one masked element");
  return std::sqrt(sq / static_cast<double>(n));
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"condition", r.condition},
                         {"arm", r.arm},
                         {"seed", r.seed},
                         {"rmse", r.rmse},
                         {"checkpoint", r.checkpoint},
                         {"pretrain_hash", r.pretrain_hash},
                         {"final_hash", r.final_hash}});
  }
  return {{"experiment", experiment_id},
          {"data_hash", data_hash},
          {"config", config},
          {"rows", rows_json}};
}

void ExperimentReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::trunc);
    out << to_json().dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "results.csv", std::ios::trunc);
    out << "condition,arm,seed,rmse\n";
    for (const auto& r : rows) {
      out << r.condition << ',' << r.arm << ',' << r.seed << ',' << r.rmse << '\n';
    }
  }
  {
    std::ofstream out(dir / "config.json", std::ios::trunc);
    out << config.dump(2) << "\n";
  }
}

double evaluate_rmse(const Checkpoint& ckpt, const Dataset& desc_data,
                     const Dataset& metric_data, const PromptConfig& prompt,
                     const DescriptionVariant& variant, int threads) {
  if (desc_data.size() != metric_data.size()) {
    throw std::invalid_argument("description and metric datasets must be sample-aligned");
  }
  DescriptionSet descs;
  if (ckpt.params.cfg.encoder == ModelConfig::EncoderKind::transformer) {
    descs = build_descriptions(desc_data, prompt, variant, nullptr, threads);
  } else {
    descs.texts.resize(desc_data.size());
  }
  std::vector<double> preds = predict(ckpt, desc_data, descs, threads);

  std::vector<double> obs(metric_data.size(), 0.0);
  std::vector<char> mask(metric_data.size(), 0);
  for (std::size_t i = 0; i < metric_data.size(); ++i) {
    if (auto y = metric_data.samples()[i].observed_label) {
      obs[i] = *y;
      mask[i] = 1;
    }
  }
  return rmse(preds, obs, mask);
}

Checkpoint make_initial_checkpoint(const Dataset& data, const DescriptionSet& descriptions,
                                   const Vocabulary& vocab, const ModelConfig& model,
                                   std::uint64_t seed) {
  model.validate();
  bool passthrough = model.encoder == ModelConfig::EncoderKind::passthrough;
  ModelConfig effective = model;
  FeatureStats stats;
  if (passthrough) {
    stats = compute_feature_stats(data, data.schema());
    effective.embed_dim = static_cast<int>(stats.names.size());
  }
  Checkpoint ckpt;
  ckpt.params = ModelParams<float>::init(effective, vocab.size(), seed);
  ckpt.vocab = vocab;
  ckpt.feature_stats = stats;
  ckpt.label_stats = data.observed_count() > 0
                         ? compute_label_stats(data, LabelKind::observed)
                         : compute_label_stats(data, LabelKind::simulated);
  ckpt.meta["label_stats"] = {{"mean", ckpt.label_stats.mean}, {"sd", ckpt.label_stats.sd}};
  ckpt.meta["arch"] = nlohmann::json{{"encoder", passthrough ? "passthrough" : "transformer"},
                                     {"vocab_size", passthrough ? 0 : vocab.size()},
                                     {"embed_dim", effective.embed_dim},
                                     {"layers", effective.layers},
                                     {"heads", effective.heads},
                                     {"ffn_dim", effective.ffn_dim},
                                     {"max_positions", effective.max_positions},
                                     {"lstm_hidden", effective.lstm_hidden},
                                     {"window", effective.window}};
  if (passthrough) {
    ckpt.meta["feature_stats"] = {{"names", stats.names}, {"mean", stats.mean}, {"sd", stats.sd}};
  } else {
    ckpt.meta["vocab"] = vocab.to_json();
    ckpt.meta["vocab_hash"] = to_hex64(vocab.content_hash());
  }
  ckpt.meta["provenance"] = {{"phase", "init"},
                             {"seed", seed},
                             {"epochs_requested", 0},
                             {"epochs_run", 0},
                             {"data_hash", to_hex64(data.content_hash())},
                             {"descriptions_hash", to_hex64(descriptions.content_hash())},
                             {"parent", nullptr},
                             {"chain", nlohmann::json::array()}};
  return ckpt;
}

namespace {

struct Prepared {
  Dataset full;
  Dataset train_all;
  Dataset test;
  std::filesystem::path dir;
};

Prepared prepare(const RunConfig& cfg, const std::string& id) {
  Prepared p;
  p.full = cfg.load_data();
  auto parts = split_by_date(p.full, cfg.train_boundary());
  p.train_all = std::move(parts.first);
  p.test = std::move(parts.second);
  p.dir = std::filesystem::path(cfg.experiment.out_dir) / id;
  std::filesystem::create_directories(p.dir / "ckpt");
  return p;
}

std::string frac_str(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

Dataset with_label_availability(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return ds;
  if (fraction <= 0.0) {
    Dataset out = ds;
    for (std::size_t i = 0; i < out.size(); ++i) out.set_observed_label(i, std::nullopt);
    return out;
  }
  return subsample_labels(ds, fraction, seed);
}

std::string save_arm_checkpoint(const RunConfig& cfg, const std::filesystem::path& dir,
                                const std::string& name, const Checkpoint& ckpt) {
  if (!cfg.experiment.save_checkpoints) return "";
  std::filesystem::path path = dir / "ckpt" / (name + ".ckpt");
  ckpt.save(path);
  return path.string();
}

TrainConfig seeded(TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

}  // namespace

ExperimentReport run_sparsity(const RunConfig& cfg) {
  Prepared p = prepare(cfg, "sparsity");
  const auto& exp = cfg.experiment;
  int threads = cfg.pretrain_cfg.threads;

  DescriptionVariant plain;
  DescriptionSet descs = build_descriptions(p.train_all, cfg.prompt, plain, nullptr, threads);
  Vocabulary vocab = Vocabulary::build(descs.texts);

  std::vector<Checkpoint> pres(exp.seeds.size());
  parallel_for(exp.seeds.size(), exp.workers, [&](std::size_t si) {
    pres[si] = pretrain(p.train_all, descs, vocab, cfg.model,
                        seeded(cfg.pretrain_cfg, exp.seeds[si]));
  });
  for (std::size_t si = 0; si < exp.seeds.size(); ++si) {
    save_arm_checkpoint(cfg, p.dir, "pretrain_seed" + std::to_string(exp.seeds[si]), pres[si]);
  }

  struct Task {
    std::size_t fi, si;
    bool pretrained;
  };
  std::vector<Task> tasks;
  for (std::size_t fi = 0; fi < exp.fractions.size(); ++fi) {
    for (std::size_t si = 0; si < exp.seeds.size(); ++si) {
      tasks.push_back({fi, si, true});
      tasks.push_back({fi, si, false});
    }
  }

  ExperimentReport report;
  report.experiment_id = "sparsity";
  report.config = cfg.to_json();
  report.data_hash = to_hex64(p.full.content_hash());
  report.rows.resize(tasks.size());

  parallel_for(tasks.size(), exp.workers, [&](std::size_t ti) {
    const Task& t = tasks[ti];
    double fraction = exp.fractions[t.fi];
    std::uint64_t seed = exp.seeds[t.si];
    Dataset ds_frac = subsample_labels(p.train_all, fraction,
                                       derive_seed(seed, "subsample:" + frac_str(fraction)));
    Checkpoint fin;
    std::string pre_hash;
    if (t.pretrained) {
      fin = finetune(pres[t.si], ds_frac, descs, seeded(cfg.finetune_cfg, seed));
      pre_hash = to_hex64(pres[t.si].content_hash());
    } else {
      Checkpoint init = make_initial_checkpoint(p.train_all, descs, vocab, cfg.model, seed);
      fin = finetune(init, ds_frac, descs, seeded(cfg.scratch_cfg, seed));
    }
    double r = evaluate_rmse(fin, p.test, p.test, cfg.prompt, plain, threads);

    RunRecord rec;
    rec.condition = "fraction=" + frac_str(fraction);
    rec.arm = t.pretrained ? "pretrained" : "scratch";
    rec.seed = seed;
    rec.rmse = r;
    rec.pretrain_hash = pre_hash;
    rec.final_hash = to_hex64(fin.content_hash());
    rec.checkpoint = save_arm_checkpoint(
        cfg, p.dir,
        "sparsity_f" + frac_str(fraction) + "_s" + std::to_string(seed) + "_" + rec.arm, fin);
    report.rows[ti] = std::move(rec);
  });

  report.write(p.dir);
  return report;
}

ExperimentReport run_auxiliary(const RunConfig& cfg) {
  Prepared p = prepare(cfg, "auxiliary");
  const auto& exp = cfg.experiment;
  int threads = cfg.pretrain_cfg.threads;

  DescriptionVariant plain;
  DescriptionVariant aux_sim;
  aux_sim.use_aux = true;
  aux_sim.aux_source = DescriptionVariant::AuxLabelSource::simulated;
  DescriptionVariant aux_obs = aux_sim;
  aux_obs.aux_source = DescriptionVariant::AuxLabelSource::observed;

  DescriptionSet descs_plain = build_descriptions(p.train_all, cfg.prompt, plain, nullptr, threads);
  Vocabulary vocab_plain = Vocabulary::build(descs_plain.texts);
  DescriptionSet descs_aux = build_descriptions(p.train_all, cfg.prompt, aux_sim, nullptr, threads);
  Vocabulary vocab_aux = Vocabulary::build(descs_aux.texts);

  ExperimentReport report;
  report.experiment_id = "auxiliary";
  report.config = cfg.to_json();
  report.data_hash = to_hex64(p.full.content_hash());
  report.rows.resize(exp.seeds.size() * 2);

  parallel_for(exp.seeds.size(), exp.workers, [&](std::size_t si) {
    std::uint64_t seed = exp.seeds[si];
    Dataset ds_ft =
        with_label_availability(p.train_all, exp.label_fraction, derive_seed(seed, "labels"));

    // FREE
    Checkpoint pre = pretrain(p.train_all, descs_plain, vocab_plain, cfg.model,
                              seeded(cfg.pretrain_cfg, seed));
    Checkpoint ft = finetune(pre, ds_ft, descs_plain, seeded(cfg.finetune_cfg, seed));
    RunRecord free_rec;
    free_rec.condition = "auxiliary";
    free_rec.arm = "free";
    free_rec.seed = seed;
    free_rec.rmse = evaluate_rmse(ft, p.test, p.test, cfg.prompt, plain, threads);
    free_rec.pretrain_hash = to_hex64(pre.content_hash());
    free_rec.final_hash = to_hex64(ft.content_hash());
    free_rec.checkpoint =
        save_arm_checkpoint(cfg, p.dir, "aux_s" + std::to_string(seed) + "_free", ft);

    // FREE-C
    Checkpoint pre_c = pretrain(p.train_all, descs_aux, vocab_aux, cfg.model,
                                seeded(cfg.pretrain_cfg, seed));
    DescriptionSet descs_ft = build_descriptions(ds_ft, cfg.prompt, aux_obs, nullptr, threads);
    Checkpoint ft_c = finetune(pre_c, ds_ft, descs_ft, seeded(cfg.finetune_cfg, seed));
    Dataset test_desc = with_label_availability(p.test, exp.aux_test_observable,
                                                derive_seed(seed, "aux-test"));
    RunRecord aux_rec;
    aux_rec.condition = "auxiliary";
    aux_rec.arm = "free_c";
    aux_rec.seed = seed;
    aux_rec.rmse = evaluate_rmse(ft_c, test_desc, p.test, cfg.prompt, aux_obs, threads);
    aux_rec.pretrain_hash = to_hex64(pre_c.content_hash());
    aux_rec.final_hash = to_hex64(ft_c.content_hash());
    aux_rec.checkpoint =
        save_arm_checkpoint(cfg, p.dir, "aux_s" + std::to_string(seed) + "_free_c", ft_c);

    report.rows[si * 2] = std::move(free_rec);
    report.rows[si * 2 + 1] = std::move(aux_rec);
  });

  report.write(p.dir);
  return report;
}

ExperimentReport run_feature_sets(const RunConfig& cfg) {
  const auto& exp = cfg.experiment;
  int max_m = static_cast<int>(additional_features().size());
  for (int m : exp.m_values) {
    if (m < 0 || m > max_m) {
      throw std::invalid_argument("m=" + std::to_string(m) + " exceeds the " +
                                  std::to_string(max_m) + " additional features");
    }
  }
  Prepared p = prepare(cfg, "feature_sets");
  int threads = cfg.pretrain_cfg.threads;

  struct Task {
    std::size_t mi, si;
  };
  std::vector<Task> tasks;
  for (std::size_t mi = 0; mi < exp.m_values.size(); ++mi) {
    for (std::size_t si = 0; si < exp.seeds.size(); ++si) tasks.push_back({mi, si});
  }

  ExperimentReport report;
  report.experiment_id = "feature_sets";
  report.config = cfg.to_json();
  report.data_hash = to_hex64(p.full.content_hash());
  report.rows.resize(tasks.size());

  parallel_for(tasks.size(), exp.workers, [&](std::size_t ti) {
    int m = exp.m_values[tasks[ti].mi];
    std::uint64_t seed = exp.seeds[tasks[ti].si];

    DescriptionVariant variant;
    variant.additional_m = m;
    variant.feature_seed = derive_seed(seed, "featsel");

    DescriptionSet descs = build_descriptions(p.train_all, cfg.prompt, variant, nullptr, threads);
    Vocabulary vocab = Vocabulary::build(descs.texts);
    Checkpoint pre =
        pretrain(p.train_all, descs, vocab, cfg.model, seeded(cfg.pretrain_cfg, seed));
    Dataset ds_ft =
        with_label_availability(p.train_all, exp.label_fraction, derive_seed(seed, "labels"));
    Checkpoint ft = finetune(pre, ds_ft, descs, seeded(cfg.finetune_cfg, seed));

    RunRecord rec;
    rec.condition = "m=" + std::to_string(m);
    rec.arm = "free_a" + std::to_string(m);
    rec.seed = seed;
    rec.rmse = evaluate_rmse(ft, p.test, p.test, cfg.prompt, variant, threads);
    rec.pretrain_hash = to_hex64(pre.content_hash());
    rec.final_hash = to_hex64(ft.content_hash());
    rec.checkpoint = save_arm_checkpoint(
        cfg, p.dir, "featm" + std::to_string(m) + "_s" + std::to_string(seed), ft);
    report.rows[ti] = std::move(rec);
  });

  report.write(p.dir);
  return report;
}

ExperimentReport run_transfer(const RunConfig& cfg) {
  const auto& exp = cfg.experiment;
  for (const auto& s : exp.source_sites) {
    if (s == exp.target_site) {
      throw std::invalid_argument("source and target site sets overlap at '" + s + "'");
    }
  }
  Prepared p = prepare(cfg, "transfer");
  int threads = cfg.pretrain_cfg.threads;

  Dataset src_train = filter_sites(p.train_all, exp.source_sites);
  Dataset tgt_train = filter_sites(p.train_all, {exp.target_site});
  Dataset tgt_test = filter_sites(p.test, {exp.target_site});
  if (src_train.empty() || tgt_train.empty()) {
    throw std::invalid_argument("source or target sites not present in the dataset");
  }

  DescriptionVariant plain;
  DescriptionSet descs_src = build_descriptions(src_train, cfg.prompt, plain, nullptr, threads);
  Vocabulary vocab_src = Vocabulary::build(descs_src.texts);
  DescriptionSet descs_tgt = build_descriptions(tgt_train, cfg.prompt, plain, nullptr, threads);
  Vocabulary vocab_tgt = Vocabulary::build(descs_tgt.texts);

  ExperimentReport report;
  report.experiment_id = "transfer";
  report.config = cfg.to_json();
  report.data_hash = to_hex64(p.full.content_hash());

  const char* arms[3] = {"source_pretrained", "target_pretrained", "scratch"};
  report.rows.resize(exp.seeds.size() * exp.fractions.size() * 3);

  parallel_for(exp.seeds.size(), exp.workers, [&](std::size_t si) {
    std::uint64_t seed = exp.seeds[si];
    Checkpoint pre_src = pretrain(src_train, descs_src, vocab_src, cfg.model,
                                  seeded(cfg.pretrain_cfg, seed));
    Checkpoint pre_tgt = pretrain(tgt_train, descs_tgt, vocab_tgt, cfg.model,
                                  seeded(cfg.pretrain_cfg, seed));

    for (std::size_t fi = 0; fi < exp.fractions.size(); ++fi) {
      double fraction = exp.fractions[fi];
      Dataset ds_frac = subsample_labels(tgt_train, fraction,
                                         derive_seed(seed, "subsample:" + frac_str(fraction)));
      for (int arm = 0; arm < 3; ++arm) {
        Checkpoint fin;
        std::string pre_hash;
        if (arm == 0) {
          fin = finetune(pre_src, ds_frac, descs_tgt, seeded(cfg.finetune_cfg, seed));
          pre_hash = to_hex64(pre_src.content_hash());
        } else if (arm == 1) {
          fin = finetune(pre_tgt, ds_frac, descs_tgt, seeded(cfg.finetune_cfg, seed));
          pre_hash = to_hex64(pre_tgt.content_hash());
        } else {
          Checkpoint init =
              make_initial_checkpoint(tgt_train, descs_tgt, vocab_tgt, cfg.model, seed);
          fin = finetune(init, ds_frac, descs_tgt, seeded(cfg.scratch_cfg, seed));
        }
        RunRecord rec;
        rec.condition = "fraction=" + frac_str(fraction);
        rec.arm = arms[arm];
        rec.seed = seed;
        rec.rmse = evaluate_rmse(fin, tgt_test, tgt_test, cfg.prompt, plain, threads);
        rec.pretrain_hash = pre_hash;
        rec.final_hash = to_hex64(fin.content_hash());
        rec.checkpoint = save_arm_checkpoint(cfg, p.dir,
                                             "transfer_f" + frac_str(fraction) + "_s" +
                                                 std::to_string(seed) + "_" + arms[arm],
                                             fin);
        report.rows[(si * exp.fractions.size() + fi) * 3 + static_cast<std::size_t>(arm)] =
            std::move(rec);
      }
    }
  });

  report.write(p.dir);
  return report;
}

ProbeResult probe_embeddings(const Checkpoint& ckpt, const Dataset& data,
                             const PromptConfig& prompt, std::uint64_t seed,
                             const std::filesystem::path* export_csv, int threads) {
  Mat<float> embeddings;
  if (ckpt.params.cfg.encoder == ModelConfig::EncoderKind::transformer) {
    DescriptionSet descs = build_descriptions(data, prompt, {}, nullptr, threads);
    TokenizedSet tokens =
        tokenize_set(descs, ckpt.vocab, ckpt.params.cfg.max_positions, threads);
    embeddings = embed_all(tokens, ckpt.params.encoder, threads);
  } else {
    embeddings = build_feature_matrix(data, ckpt.feature_stats);
  }

  // summer = Jun-Aug (+1), winter = Dec-Feb (-1)
  std::vector<std::size_t> tagged;
  std::vector<double> label;
  ProbeResult result;
  for (std::size_t i = 0; i < data.size(); ++i) {
    unsigned m = data.samples()[i].date.month();
    if (m >= 6 && m <= 8) {
      tagged.push_back(i);
      label.push_back(1.0);
      ++result.n_summer;
    } else if (m == 12 || m <= 2) {
      tagged.push_back(i);
      label.push_back(-1.0);
      ++result.n_winter;
    }
  }
  if (result.n_summer == 0 || result.n_winter == 0) {
    throw std::invalid_argument("season probe needs both summer and winter samples");
  }
  if (result.n_summer < 100 || result.n_winter < 100) {
    throw std::invalid_argument("season probe needs at least 100 samples per season");
  }

  if (export_csv) {
    std::ofstream out(*export_csv, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + export_csv->string());
    out << "site_id,date,season";
    for (int d = 0; d < embeddings.cols(); ++d) out << ",e" << d;
    out << "\n";
    for (std::size_t j = 0; j < tagged.size(); ++j) {
      const Sample& s = data.samples()[tagged[j]];
      out << s.site_id << ',' << s.date.iso() << ','
          << (label[j] > 0 ? "summer" : "winter");
      for (int d = 0; d < embeddings.cols(); ++d) {
        out << ',' << embeddings(static_cast<Eigen::Index>(tagged[j]), d);
      }
      out << "\n";
    }
  }

  // seeded split, half train / half held out
  std::vector<std::size_t> order(tagged.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "probe-split"));
  rng.shuffle(order);
  std::size_t n_train = order.size() / 2;

  const int dim = static_cast<int>(embeddings.cols());
  Mat<double> a(n_train, dim + 1);
  Vec<double> y(n_train);
  for (std::size_t r = 0; r < n_train; ++r) {
    std::size_t j = order[r];
    for (int d = 0; d < dim; ++d) {
      a(static_cast<Eigen::Index>(r), d) =
          static_cast<double>(embeddings(static_cast<Eigen::Index>(tagged[j]), d));
    }
    a(static_cast<Eigen::Index>(r), dim) = 1.0;
    y(static_cast<Eigen::Index>(r)) = label[j];
  }
  double lambda = 1e-3 * static_cast<double>(n_train);
  Mat<double> gram = a.transpose() * a;
  gram.diagonal().array() += lambda;
  Vec<double> w = gram.ldlt().solve(a.transpose() * y);

  std::size_t correct = 0, total = 0;
  for (std::size_t r = n_train; r < order.size(); ++r) {
    std::size_t j = order[r];
    double score = w(dim);
    for (int d = 0; d < dim; ++d) {
      score += w(d) * static_cast<double>(embeddings(static_cast<Eigen::Index>(tagged[j]), d));
    }
    correct += (score > 0.0) == (label[j] > 0.0);
    ++total;
  }
  result.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return result;
}

}  // namespace freeml
