// Command-line entry point for the FREE pipeline: synthetic data generation,
// description rendering, vocabulary building, two-phase training, prediction,
// evaluation, the four experiment protocols, embedding export and gradient
// checking.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "freeml/eval.hpp"
#include "freeml/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace freeml;

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = default_thread_count();
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON configuration file");
  cmd->add_option("--seed", opts.seed, "seed governing all randomness")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--threads", opts.threads, "worker threads for batch math");
}

RunConfig load_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig() : RunConfig::load(opts.config_path);
  if (opts.seed_set) {
    cfg.benchmark.weather.seed = opts.seed;
    cfg.pretrain_cfg.seed = opts.seed;
    cfg.finetune_cfg.seed = opts.seed;
    cfg.scratch_cfg.seed = opts.seed;
  }
  cfg.pretrain_cfg.threads = opts.threads;
  cfg.finetune_cfg.threads = opts.threads;
  cfg.scratch_cfg.threads = opts.threads;
  return cfg;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& next_to) {
  fs::path path = next_to;
  path += ".config.json";
  std::ofstream out(path, std::ios::trunc);
  out << cfg.to_json().dump(2) << "\n";
}

Dataset load_input(const RunConfig& cfg, const std::string& csv) {
  return load_dataset(csv, cfg.schema);
}

DescriptionVariant variant_from(const std::string& aux_source, bool use_aux, int m,
                                std::uint64_t feature_seed, const SiteGraph* graph) {
  DescriptionVariant v;
  v.use_aux = use_aux;
  v.aux_source = aux_source == "simulated" ? DescriptionVariant::AuxLabelSource::simulated
                                           : DescriptionVariant::AuxLabelSource::observed;
  v.neighbor_graph = graph;
  if (m >= 0) v.additional_m = m;
  v.feature_seed = feature_seed;
  return v;
}

// descriptions file: one JSON record {"site","date","key","text","source","version"} per line
void write_descriptions_jsonl(const Dataset& ds, const DescriptionSet& descs,
                              const PromptConfig& prompt, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples()[i];
    nlohmann::json rec = {
        {"site", s.site_id},
        {"date", s.date.iso()},
        {"key", to_hex64(fnv1a64(descs.texts[i]))},
        {"text", descs.texts[i]},
        {"source", prompt.source == DescriptionSource::remote_llm ? "remote" : "template"},
        {"version", prompt.source == DescriptionSource::remote_llm && prompt.remote
                        ? prompt.remote->model_id
                        : prompt.template_version},
    };
    out << rec.dump() << "\n";
  }
}

DescriptionSet read_descriptions_jsonl(const Dataset& ds, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open descriptions file " + path.string());
  std::map<std::pair<std::string, std::string>, std::string> by_key;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("site") || !rec.contains("date") ||
        !rec.contains("text")) {
      throw std::runtime_error("malformed descriptions line " + std::to_string(lineno));
    }
    by_key[{rec["site"], rec["date"]}] = rec["text"];
  }
  DescriptionSet out;
  out.texts.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples()[i];
    auto it = by_key.find({s.site_id, s.date.iso()});
    if (it == by_key.end()) {
      throw std::runtime_error("no description for (" + s.site_id + ", " + s.date.iso() + ")");
    }
    out.texts[i] = it->second;
  }
  return out;
}

DescriptionSet descriptions_for(const RunConfig& cfg, const Dataset& ds,
                                const std::string& descriptions_path,
                                const DescriptionVariant& variant, int threads) {
  if (!descriptions_path.empty()) {
    return read_descriptions_jsonl(ds, descriptions_path);
  }
  std::optional<DescriptionCache> cache;
  if (cfg.cache_path) cache.emplace(*cfg.cache_path);
  return build_descriptions(ds, cfg.prompt, variant, cache ? &*cache : nullptr, threads);
}

int cmd_gen_synth(const CommonOpts& opts, const std::string& out, int sites, int days) {
  RunConfig cfg = load_config(opts);
  if (sites > 0) cfg.benchmark.n_sites = sites;
  if (days > 0) cfg.benchmark.days = days;
  Dataset ds = make_benchmark(cfg.benchmark);
  save_dataset_csv(ds, out);

  // sidecar with every generator parameter and seed
  nlohmann::json sidecar = {
      {"benchmark", cfg.to_json()["benchmark"]},
      {"weather", cfg.to_json()["weather"]},
      {"sim", cfg.to_json()["sim"]},
      {"data_hash", to_hex64(ds.content_hash())},
      {"samples", ds.size()},
  };
  std::ofstream side(out + ".gen.json", std::ios::trunc);
  side << sidecar.dump(2) << "\n";
  std::cout << "wrote " << ds.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_describe(const CommonOpts& opts, const std::string& in, const std::string& out,
                 const std::string& source, bool use_aux, const std::string& aux_source,
                 int m, const std::string& neighbors) {
  RunConfig cfg = load_config(opts);
  if (source == "remote") {
    cfg.prompt.source = DescriptionSource::remote_llm;
    if (!cfg.prompt.remote) {
      const char* env_url = std::getenv("FREE_LLM_BASE_URL");
      if (!env_url || !*env_url) {
        throw std::invalid_argument(
            "remote source needs prompt.remote in the config or FREE_LLM_BASE_URL");
      }
      cfg.prompt.remote = RemoteConfig{env_url, "default", 30.0, 3, 250};
    }
  }
  Dataset ds = load_input(cfg, in);
  SiteGraph graph;
  if (!neighbors.empty()) {
    graph = SiteGraph::load_csv(neighbors);
    graph.validate(ds);
  }
  DescriptionVariant variant = variant_from(aux_source, use_aux, m,
                                            derive_seed(opts.seed, "featsel"),
                                            neighbors.empty() ? nullptr : &graph);
  std::optional<DescriptionCache> cache;
  if (cfg.cache_path) cache.emplace(*cfg.cache_path);
  DescriptionSet descs =
      build_descriptions(ds, cfg.prompt, variant, cache ? &*cache : nullptr, opts.threads);
  write_descriptions_jsonl(ds, descs, cfg.prompt, out);
  std::cout << "wrote " << descs.texts.size() << " descriptions to " << out << "\n";
  return 0;
}

int cmd_build_vocab(const std::string& in, const std::string& out) {
  std::ifstream src(in);
  if (!src) throw std::runtime_error("cannot open " + in);
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(src, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("text")) {
      throw std::runtime_error("malformed descriptions line in " + in);
    }
    texts.push_back(rec["text"].get<std::string>());
  }
  Vocabulary vocab = Vocabulary::build(texts);
  std::ofstream dst(out, std::ios::trunc);
  dst << vocab.to_json().dump(2) << "\n";
  std::cout << "vocabulary of " << vocab.size() << " ids written to " << out << "\n";
  return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& data, const std::string& out,
                 const std::string& descriptions_path, const std::string& vocab_path,
                 const std::string& log_path) {
  RunConfig cfg = load_config(opts);
  Dataset ds = data.empty() ? cfg.load_data() : load_input(cfg, data);
  DescriptionSet descs = descriptions_for(cfg, ds, descriptions_path, {}, opts.threads);
  Vocabulary vocab;
  if (!vocab_path.empty()) {
    std::ifstream in(vocab_path);
    if (!in) throw std::runtime_error("cannot open vocabulary " + vocab_path);
    vocab = Vocabulary::from_json(nlohmann::json::parse(in));
  } else {
    vocab = Vocabulary::build(descs.texts);
  }
  TrainLog log;
  Checkpoint ckpt = pretrain(ds, descs, vocab, cfg.model, cfg.pretrain_cfg, &log);
  ckpt.save(out);
  if (!log_path.empty()) log.write_jsonl(log_path);
  write_resolved_config(cfg, out);
  std::cout << "pretrained checkpoint " << to_hex64(ckpt.content_hash()) << " -> " << out
            << " (" << log.epochs.size() << " epochs)\n";
  return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& model, const std::string& data,
                 const std::string& out, const std::string& descriptions_path,
                 double label_fraction, const std::string& log_path, bool use_aux) {
  RunConfig cfg = load_config(opts);
  Checkpoint start = Checkpoint::load(model);
  Dataset ds = data.empty() ? cfg.load_data() : load_input(cfg, data);
  if (label_fraction < 1.0) {
    ds = subsample_labels(ds, label_fraction, derive_seed(cfg.finetune_cfg.seed, "labels"));
  }
  DescriptionVariant variant;
  variant.use_aux = use_aux;
  DescriptionSet descs = descriptions_for(cfg, ds, descriptions_path, variant, opts.threads);
  TrainLog log;
  Checkpoint ckpt = finetune(start, ds, descs, cfg.finetune_cfg, &log);
  ckpt.save(out);
  if (!log_path.empty()) log.write_jsonl(log_path);
  write_resolved_config(cfg, out);
  std::cout << "finetuned checkpoint " << to_hex64(ckpt.content_hash()) << " -> " << out
            << " (" << log.epochs.size() << " epochs)\n";
  return 0;
}

int cmd_predict(const CommonOpts& opts, const std::string& model, const std::string& in,
                const std::string& out, bool use_aux) {
  RunConfig cfg = load_config(opts);
  Checkpoint ckpt = Checkpoint::load(model);
  Dataset ds = load_input(cfg, in);
  DescriptionVariant variant;
  variant.use_aux = use_aux;
  DescriptionSet descs;
  if (ckpt.params.cfg.encoder == ModelConfig::EncoderKind::transformer) {
    descs = build_descriptions(ds, cfg.prompt, variant, nullptr, opts.threads);
  } else {
    descs.texts.resize(ds.size());
  }
  auto preds = predict(ckpt, ds, descs, opts.threads);
  std::ofstream sink(out, std::ios::trunc);
  if (!sink) throw std::runtime_error("cannot write " + out);
  sink << "site_id,date,prediction\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples()[i];
    sink << s.site_id << ',' << s.date.iso() << ',' << preds[i] << '\n';
  }
  std::cout << "wrote " << ds.size() << " predictions to " << out << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& model, const std::string& in,
                 const std::string& out, bool use_aux) {
  RunConfig cfg = load_config(opts);
  Checkpoint ckpt = Checkpoint::load(model);
  Dataset ds = load_input(cfg, in);
  DescriptionVariant variant;
  variant.use_aux = use_aux;
  double r = evaluate_rmse(ckpt, ds, ds, cfg.prompt, variant, opts.threads);
  std::cout << "rmse " << r << " over " << ds.observed_count() << " observed labels\n";
  if (!out.empty()) {
    nlohmann::json metrics = {{"rmse", r},
                              {"observed", ds.observed_count()},
                              {"data_hash", to_hex64(ds.content_hash())},
                              {"checkpoint_hash", to_hex64(ckpt.content_hash())}};
    std::ofstream sink(out, std::ios::trunc);
    sink << metrics.dump(2) << "\n";
  }
  return 0;
}

int cmd_experiment(const CommonOpts& opts, const std::string& protocol, const std::string& out,
                   int workers) {
  RunConfig cfg = load_config(opts);
  if (!out.empty()) cfg.experiment.out_dir = out;
  if (workers > 0) cfg.experiment.workers = workers;

  ExperimentReport report;
  if (protocol == "sparsity") {
    report = run_sparsity(cfg);
  } else if (protocol == "auxiliary") {
    report = run_auxiliary(cfg);
  } else if (protocol == "feature-sets") {
    report = run_feature_sets(cfg);
  } else if (protocol == "transfer") {
    report = run_transfer(cfg);
  } else {
    throw CLI::ValidationError("protocol",
                               "unknown protocol '" + protocol +
                                   "' (expected sparsity|auxiliary|feature-sets|transfer)");
  }
  for (const auto& row : report.rows) {
    std::cout << report.experiment_id << " " << row.condition << " " << row.arm << " seed "
              << row.seed << " rmse " << row.rmse << "\n";
  }
  std::cout << "report written under " << cfg.experiment.out_dir << "/"
            << report.experiment_id << "\n";
  return 0;
}

int cmd_export_embeddings(const CommonOpts& opts, const std::string& model,
                          const std::string& in, const std::string& out, bool season_tags) {
  RunConfig cfg = load_config(opts);
  Checkpoint ckpt = Checkpoint::load(model);
  Dataset ds = load_input(cfg, in);

  Mat<float> embeddings;
  if (ckpt.params.cfg.encoder == ModelConfig::EncoderKind::transformer) {
    DescriptionSet descs = build_descriptions(ds, cfg.prompt, {}, nullptr, opts.threads);
    TokenizedSet tokens =
        tokenize_set(descs, ckpt.vocab, ckpt.params.cfg.max_positions, opts.threads);
    embeddings = embed_all(tokens, ckpt.params.encoder, opts.threads);
  } else {
    embeddings = build_feature_matrix(ds, ckpt.feature_stats);
  }

  std::ofstream sink(out, std::ios::trunc);
  if (!sink) throw std::runtime_error("cannot write " + out);
  sink << "site_id,date";
  if (season_tags) sink << ",season";
  for (int d = 0; d < embeddings.cols(); ++d) sink << ",e" << d;
  sink << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples()[i];
    sink << s.site_id << ',' << s.date.iso();
    if (season_tags) {
      unsigned m = s.date.month();
      sink << ',' << (m >= 6 && m <= 8 ? "summer" : (m == 12 || m <= 2 ? "winter" : ""));
    }
    for (int d = 0; d < embeddings.cols(); ++d) {
      sink << ',' << embeddings(static_cast<Eigen::Index>(i), d);
    }
    sink << '\n';
  }
  std::cout << "wrote " << ds.size() << " embeddings to " << out << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  GradCheckReport report = run_gradcheck(seed, 5);
  std::cout << "encoder max relative error:   " << report.encoder_max_rel << "\n"
            << "lstm max relative error:      " << report.lstm_max_rel << "\n"
            << "embedding max relative error: " << report.embedding_max_rel << "\n"
            << "elapsed: " << report.seconds << "s\n";
  if (!report.pass()) {
    std::cout << "FAIL: max relative error " << report.worst() << " >= 1e-4\n";
    return 2;
  }
  std::cout << "PASS: max relative error " << report.worst() << " < 1e-4\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FREE: environmental time-series prediction through text descriptions"};
  app.require_subcommand(1);

  CommonOpts opts;

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic benchmark dataset");
  std::string gen_out = "data.csv";
  int gen_sites = 0, gen_days = 0;
  gen->add_option("--out", gen_out, "output CSV path")->required();
  gen->add_option("--sites", gen_sites, "number of sites");
  gen->add_option("--days", gen_days, "days per site");
  add_common(gen, opts);

  // describe
  auto* desc = app.add_subcommand("describe", "render natural-language descriptions");
  std::string desc_in, desc_out, desc_source = "template", desc_aux_source = "observed";
  std::string desc_neighbors;
  bool desc_aux = false;
  int desc_m = -1;
  desc->add_option("--in", desc_in, "dataset CSV")->required();
  desc->add_option("--out", desc_out, "descriptions JSONL")->required();
  desc->add_option("--source", desc_source, "template|remote")
      ->check(CLI::IsMember({"template", "remote"}));
  desc->add_flag("--aux", desc_aux, "include prior-day observations");
  desc->add_option("--aux-source", desc_aux_source, "observed|simulated")
      ->check(CLI::IsMember({"observed", "simulated"}));
  desc->add_option("--m", desc_m, "additional features kept per sample (FREE-Am)");
  desc->add_option("--neighbors", desc_neighbors, "neighbor CSV for neighbor observations");
  add_common(desc, opts);

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "build a vocabulary from descriptions");
  std::string bv_in, bv_out;
  bv->add_option("--in", bv_in, "descriptions JSONL")->required();
  bv->add_option("--out", bv_out, "vocabulary JSON")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "pre-train on simulated labels");
  std::string pre_data, pre_out, pre_descs, pre_vocab, pre_log;
  pre->add_option("--data", pre_data, "dataset CSV (default: synthetic benchmark)");
  pre->add_option("--out", pre_out, "output checkpoint")->required();
  pre->add_option("--descriptions", pre_descs, "descriptions JSONL (default: render in-process)");
  pre->add_option("--vocab", pre_vocab, "vocabulary JSON (default: build from descriptions)");
  pre->add_option("--log", pre_log, "training log JSONL");
  add_common(pre, opts);

  // finetune
  auto* fin = app.add_subcommand("finetune", "fine-tune on observed labels");
  std::string fin_model, fin_data, fin_out, fin_descs, fin_log;
  double fin_fraction = 1.0;
  bool fin_aux = false;
  fin->add_option("--model", fin_model, "starting checkpoint")->required();
  fin->add_option("--data", fin_data, "dataset CSV (default: synthetic benchmark)");
  fin->add_option("--out", fin_out, "output checkpoint")->required();
  fin->add_option("--descriptions", fin_descs, "descriptions JSONL");
  fin->add_option("--label-fraction", fin_fraction, "observed-label fraction kept");
  fin->add_flag("--aux", fin_aux, "FREE-C descriptions (prior-day observation)");
  fin->add_option("--log", fin_log, "training log JSONL");
  add_common(fin, opts);

  // predict
  auto* prd = app.add_subcommand("predict", "windowed inference");
  std::string prd_model, prd_in, prd_out;
  bool prd_aux = false;
  prd->add_option("--model", prd_model, "checkpoint")->required();
  prd->add_option("--in", prd_in, "dataset CSV")->required();
  prd->add_option("--out", prd_out, "predictions CSV")->required();
  prd->add_flag("--aux", prd_aux, "FREE-C descriptions");
  add_common(prd, opts);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "RMSE against observed labels");
  std::string ev_model, ev_in, ev_out;
  bool ev_aux = false;
  ev->add_option("--model", ev_model, "checkpoint")->required();
  ev->add_option("--in", ev_in, "dataset CSV")->required();
  ev->add_option("--out", ev_out, "metrics JSON");
  ev->add_flag("--aux", ev_aux, "FREE-C descriptions");
  add_common(ev, opts);

  // experiment
  auto* exp = app.add_subcommand("experiment", "run an experiment protocol");
  std::string exp_protocol, exp_out;
  int exp_workers = 0;
  exp->add_option("protocol", exp_protocol, "sparsity|auxiliary|feature-sets|transfer")
      ->required();
  exp->add_option("--out", exp_out, "output directory (default runs/)");
  exp->add_option("--workers", exp_workers, "parallel run slots");
  add_common(exp, opts);

  // export-embeddings
  auto* emb = app.add_subcommand("export-embeddings", "embeddings to CSV for external analysis");
  std::string emb_model, emb_in, emb_out;
  bool emb_seasons = false;
  emb->add_option("--model", emb_model, "checkpoint")->required();
  emb->add_option("--in", emb_in, "dataset CSV")->required();
  emb->add_option("--out", emb_out, "embeddings CSV")->required();
  emb->add_flag("--season-tags", emb_seasons, "append a summer/winter season column");
  add_common(emb, opts);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::uint64_t gc_seed = 1;
  gc->add_option("--seed", gc_seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors exit 1, --help exits 0
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(opts, gen_out, gen_sites, gen_days);
    if (desc->parsed()) {
      return cmd_describe(opts, desc_in, desc_out, desc_source, desc_aux, desc_aux_source,
                          desc_m, desc_neighbors);
    }
    if (bv->parsed()) return cmd_build_vocab(bv_in, bv_out);
    if (pre->parsed()) return cmd_pretrain(opts, pre_data, pre_out, pre_descs, pre_vocab, pre_log);
    if (fin->parsed()) {
      return cmd_finetune(opts, fin_model, fin_data, fin_out, fin_descs, fin_fraction, fin_log,
                          fin_aux);
    }
    if (prd->parsed()) return cmd_predict(opts, prd_model, prd_in, prd_out, prd_aux);
    if (ev->parsed()) return cmd_evaluate(opts, ev_model, ev_in, ev_out, ev_aux);
    if (exp->parsed()) return cmd_experiment(opts, exp_protocol, exp_out, exp_workers);
    if (emb->parsed()) return cmd_export_embeddings(opts, emb_model, emb_in, emb_out, emb_seasons);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
