#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "freeml/eval.hpp"

using namespace freeml;

namespace {

RunConfig micro_config(const std::filesystem::path& out_dir) {
  RunConfig cfg;
  cfg.benchmark.n_sites = 2;
  cfg.benchmark.days = 120;
  cfg.train_end = cfg.benchmark.weather.start_date.plus_days(59).iso();
  cfg.model.embed_dim = 16;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.ffn_dim = 32;
  cfg.model.max_positions = 160;
  cfg.model.lstm_hidden = 8;
  cfg.model.window = 10;
  cfg.pretrain_cfg.epochs = 2;
  cfg.pretrain_cfg.val_fraction = 0.0;
  cfg.pretrain_cfg.threads = 2;
  cfg.finetune_cfg.epochs = 1;
  cfg.finetune_cfg.val_fraction = 0.0;
  cfg.finetune_cfg.threads = 2;
  cfg.scratch_cfg.epochs = 1;
  cfg.scratch_cfg.val_fraction = 0.0;
  cfg.scratch_cfg.threads = 2;
  cfg.experiment.fractions = {0.5};
  cfg.experiment.seeds = {1, 2};
  cfg.experiment.out_dir = out_dir.string();
  return cfg;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("rmse follows the masked contract") {
  std::vector<double> preds = {3.0, 1.0};
  std::vector<double> obs = {0.0, 0.0};
  std::vector<char> mask = {1, 1};
  CHECK(rmse(preds, obs, mask) == doctest::Approx(std::sqrt(5.0)));

  std::vector<double> perfect = {2.0, 7.0};
  CHECK(rmse(perfect, perfect, mask) == 0.0);

  std::vector<char> none = {0, 0};
  CHECK_THROWS_AS(rmse(preds, obs, none), std::invalid_argument);
}

TEST_CASE("rmse squared equals masked_mse on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.below(32);
    std::vector<double> preds(n), obs(n);
    std::vector<char> mask(n, 0);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = rng.normal() * 4.0;
      obs[i] = rng.normal() * 4.0;
      mask[i] = rng.uniform01() < 0.6;
      any |= mask[i];
    }
    if (!any) mask[0] = 1;
    double r = rmse(preds, obs, mask);
    double m = masked_mse<double>(preds, obs, mask);
    CHECK(std::abs(r * r - m) < 1e-9);
  }
}

TEST_CASE("config JSON is strict and round-trips") {
  RunConfig defaults;
  nlohmann::json j = defaults.to_json();
  RunConfig back = RunConfig::from_json(j);
  CHECK(back.to_json() == j);

  SUBCASE("unknown top-level key") {
    nlohmann::json bad = j;
    bad["unknown_section"] = 1;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(bad), doctest::Contains("unknown_section"),
                         std::invalid_argument);
  }
  SUBCASE("unknown nested key") {
    nlohmann::json bad = j;
    bad["model"]["hidden_size"] = 13;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(bad), doctest::Contains("model.hidden_size"),
                         std::invalid_argument);
  }
  SUBCASE("invalid values are rejected through validate()") {
    nlohmann::json bad = j;
    bad["pretrain"]["val_fraction"] = 0.9;
    CHECK_THROWS_AS(RunConfig::from_json(bad), std::invalid_argument);
  }
}

TEST_CASE("season probe on degenerate embeddings sits at chance") {
  BenchmarkSpec spec;
  spec.n_sites = 2;
  spec.days = 800;
  Dataset ds = make_benchmark(spec);

  DescriptionSet descs = build_descriptions(ds, PromptConfig::defaults());
  Vocabulary vocab = Vocabulary::build(descs.texts);
  ModelConfig model;
  model.embed_dim = 16;
  model.layers = 0;  // embeddings only
  model.heads = 2;
  model.ffn_dim = 16;
  model.max_positions = 160;
  model.lstm_hidden = 4;
  model.window = 10;
  Checkpoint ckpt = make_initial_checkpoint(ds, descs, vocab, model, 1);
  ckpt.params.encoder.token_emb.setZero();
  ckpt.params.encoder.pos_emb.setZero();  // every embedding identical

  ProbeResult res = probe_embeddings(ckpt, ds, PromptConfig::defaults(), 3);
  CHECK(res.n_summer >= 100);
  CHECK(res.n_winter >= 100);
  CHECK(res.accuracy > 0.3);
  CHECK(res.accuracy < 0.7);
}

TEST_CASE("season probe rejects single-class inputs") {
  // June and July only
  WeatherGenParams w;
  w.start_date = Date::parse("2001-06-01");
  Dataset drivers = generate_weather({"s1", "s2", "s3"}, 55, w);
  Dataset ds = simulate_stream_temperature(drivers, SimParams{});

  DescriptionSet descs = build_descriptions(ds, PromptConfig::defaults());
  Vocabulary vocab = Vocabulary::build(descs.texts);
  ModelConfig model;
  model.embed_dim = 16;
  model.layers = 0;
  model.heads = 2;
  model.ffn_dim = 16;
  model.max_positions = 160;
  model.lstm_hidden = 4;
  model.window = 10;
  Checkpoint ckpt = make_initial_checkpoint(ds, descs, vocab, model, 1);
  CHECK_THROWS_AS(probe_embeddings(ckpt, ds, PromptConfig::defaults(), 3),
                  std::invalid_argument);
}

TEST_CASE("probe exports one row per tagged sample") {
  BenchmarkSpec spec;
  spec.n_sites = 1;
  spec.days = 800;
  Dataset ds = make_benchmark(spec);
  DescriptionSet descs = build_descriptions(ds, PromptConfig::defaults());
  Vocabulary vocab = Vocabulary::build(descs.texts);
  ModelConfig model;
  model.embed_dim = 16;
  model.layers = 1;
  model.heads = 2;
  model.ffn_dim = 32;
  model.max_positions = 160;
  model.lstm_hidden = 4;
  model.window = 10;
  Checkpoint ckpt = make_initial_checkpoint(ds, descs, vocab, model, 1);

  auto csv = std::filesystem::temp_directory_path() / "free_probe_export.csv";
  ProbeResult res = probe_embeddings(ckpt, ds, PromptConfig::defaults(), 3, &csv);

  std::ifstream in(csv);
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);  // header
  CHECK(line.rfind("site_id,date,season", 0) == 0);
  while (std::getline(in, line)) ++rows;
  CHECK(rows == res.n_summer + res.n_winter);
}

TEST_CASE("sparsity experiment produces a complete, rerun-stable report") {
  auto dir = fresh_dir("free_eval_sparsity");
  RunConfig cfg = micro_config(dir);

  ExperimentReport report = run_sparsity(cfg);
  CHECK(report.rows.size() == cfg.experiment.fractions.size() * cfg.experiment.seeds.size() * 2);
  for (const auto& r : report.rows) {
    CHECK(std::isfinite(r.rmse));
    CHECK_FALSE(r.final_hash.empty());
  }

  CHECK(std::filesystem::exists(dir / "sparsity" / "report.json"));
  CHECK(std::filesystem::exists(dir / "sparsity" / "results.csv"));
  CHECK(std::filesystem::exists(dir / "sparsity" / "config.json"));

  SUBCASE("rerun yields the identical RMSE table") {
    ExperimentReport again = run_sparsity(cfg);
    REQUIRE(again.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      CHECK(again.rows[i].rmse == report.rows[i].rmse);
      CHECK(again.rows[i].final_hash == report.rows[i].final_hash);
    }
  }

  SUBCASE("stored checkpoints reproduce the stored RMSE") {
    const auto& row = report.rows.front();
    REQUIRE_FALSE(row.checkpoint.empty());
    Checkpoint ckpt = Checkpoint::load(row.checkpoint);
    auto [train_all, test] = split_by_date(cfg.load_data(), cfg.train_boundary());
    double r = evaluate_rmse(ckpt, test, test, cfg.prompt, {}, 2);
    CHECK(std::abs(r - row.rmse) < 1e-6);
  }
}

TEST_CASE("auxiliary experiment compares FREE and FREE-C per seed") {
  auto dir = fresh_dir("free_eval_aux");
  RunConfig cfg = micro_config(dir);
  cfg.experiment.seeds = {1};

  ExperimentReport report = run_auxiliary(cfg);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].arm == "free");
  CHECK(report.rows[1].arm == "free_c");
  CHECK(report.rows[0].seed == 1);
}

TEST_CASE("feature-set experiment validates m and reports per m") {
  auto dir = fresh_dir("free_eval_feat");
  RunConfig cfg = micro_config(dir);
  cfg.experiment.seeds = {1};
  cfg.experiment.m_values = {0, 4};

  ExperimentReport report = run_feature_sets(cfg);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].condition == "m=0");
  CHECK(report.rows[1].condition == "m=4");

  cfg.experiment.m_values = {5};
  CHECK_THROWS_AS(run_feature_sets(cfg), std::invalid_argument);
}

TEST_CASE("transfer experiment rejects overlapping site sets") {
  auto dir = fresh_dir("free_eval_transfer");
  RunConfig cfg = micro_config(dir);
  cfg.experiment.source_sites = {"s1", "s2"};
  cfg.experiment.target_site = "s2";
  CHECK_THROWS_WITH_AS(run_transfer(cfg), doctest::Contains("overlap"), std::invalid_argument);
}

TEST_CASE("transfer experiment produces three arms per fraction and seed") {
  auto dir = fresh_dir("free_eval_transfer_ok");
  RunConfig cfg = micro_config(dir);
  cfg.experiment.seeds = {1};
  cfg.experiment.fractions = {1.0};
  cfg.experiment.source_sites = {"s1"};
  cfg.experiment.target_site = "s2";

  ExperimentReport report = run_transfer(cfg);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.rows[0].arm == "source_pretrained");
  CHECK(report.rows[1].arm == "target_pretrained");
  CHECK(report.rows[2].arm == "scratch");
}

TEST_CASE("FREE-C reduces to FREE when no auxiliary observation is available") {
  BenchmarkSpec spec;
  spec.n_sites = 2;
  spec.days = 40;
  Dataset ds = make_benchmark(spec);
  Dataset hidden = ds;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    hidden.set_observed_label(i, std::nullopt);
  }

  PromptConfig prompt = PromptConfig::defaults();
  DescriptionVariant aux;
  aux.use_aux = true;
  aux.aux_source = DescriptionVariant::AuxLabelSource::observed;
  DescriptionSet with_aux = build_descriptions(hidden, prompt, aux);
  DescriptionSet plain = build_descriptions(hidden, prompt);
  CHECK(with_aux.texts == plain.texts);  // byte-identical descriptions

  DescriptionSet train_descs = build_descriptions(ds, prompt);
  Vocabulary vocab = Vocabulary::build(train_descs.texts);
  ModelConfig model;
  model.embed_dim = 16;
  model.layers = 1;
  model.heads = 2;
  model.ffn_dim = 32;
  model.max_positions = 160;
  model.lstm_hidden = 8;
  model.window = 10;
  Checkpoint ckpt = make_initial_checkpoint(ds, train_descs, vocab, model, 5);

  double r_plain = evaluate_rmse(ckpt, hidden, ds, prompt, {}, 2);
  double r_aux = evaluate_rmse(ckpt, hidden, ds, prompt, aux, 2);
  CHECK(r_plain == r_aux);
}
