#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "freeml/simulate.hpp"
#include "freeml/train.hpp"

using namespace freeml;

namespace {

Dataset micro_bench(int sites = 2, int days = 60) {
  BenchmarkSpec spec;
  spec.n_sites = sites;
  spec.days = days;
  return make_benchmark(spec);
}

ModelConfig micro_model() {
  ModelConfig m;
  m.embed_dim = 16;
  m.layers = 1;
  m.heads = 2;
  m.ffn_dim = 32;
  m.max_positions = 160;
  m.lstm_hidden = 8;
  m.window = 10;
  return m;
}

TrainConfig micro_train(TrainConfig::Phase phase, int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.phase = phase;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.learning_rate = phase == TrainConfig::Phase::pretrain ? 1e-3 : 1e-4;
  cfg.val_fraction = 0.0;
  cfg.seed = seed;
  cfg.threads = 2;
  return cfg;
}

struct Prepared {
  Dataset data;
  DescriptionSet descs;
  Vocabulary vocab;
};

Prepared prepare(int sites = 2, int days = 60) {
  Prepared p;
  p.data = micro_bench(sites, days);
  p.descs = build_descriptions(p.data, PromptConfig::defaults());
  p.vocab = Vocabulary::build(p.descs.texts);
  return p;
}

std::vector<float> tensor_bytes(ModelParams<float>& params) {
  std::vector<float> out;
  params.for_each_tensor([&](const std::string&, float* d, std::size_t n) {
    out.insert(out.end(), d, d + n);
  });
  return out;
}

}  // namespace

TEST_CASE("masked_mse follows the mask contract") {
  std::vector<double> preds = {1.0, 2.0};
  std::vector<double> labels = {0.0, 0.0};
  std::vector<char> mask = {1, 0};
  CHECK(masked_mse<double>(preds, labels, mask) == doctest::Approx(1.0));

  SUBCASE("perfect predictions give zero") {
    std::vector<double> same = {3.0, 4.0};
    std::vector<char> all = {1, 1};
    CHECK(masked_mse<double>(same, same, all) == 0.0);
  }
  SUBCASE("unlabeled steps never contribute") {
    std::vector<double> p2 = {1.0, 2.0, 99.0};
    std::vector<double> l2 = {0.0, 0.0, -123.0};  // garbage at the unmasked step
    std::vector<char> m2 = {1, 0, 0};
    CHECK(masked_mse<double>(p2, l2, m2) == doctest::Approx(1.0));
  }
  SUBCASE("empty mask is an error") {
    std::vector<char> none = {0, 0};
    CHECK_THROWS_AS(masked_mse<double>(preds, labels, none), std::invalid_argument);
  }
}

TEST_CASE("adam matches the hand-computed update") {
  ModelConfig cfg;
  cfg.encoder = ModelConfig::EncoderKind::passthrough;
  cfg.embed_dim = 1;
  cfg.lstm_hidden = 1;
  cfg.window = 4;

  ModelParams<double> params;
  params.cfg = cfg;
  params.lstm = LstmParams<double>::zeros_like(1, 1);
  params.lstm.head_w(0) = 0.7;
  params.lstm.head_b = -0.3;

  ModelParams<double> grads = ModelParams<double>::zeros_like(params);
  const double gw = 0.4, gb = -1.1;
  grads.lstm.head_w(0) = gw;
  grads.lstm.head_b = gb;

  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Adam<double> opt(lr, b1, b2, eps);
  opt.step(params, grads);

  auto expected = [&](double theta, double g) {
    double m = (1 - b1) * g;
    double v = (1 - b2) * g * g;
    double mhat = m / (1 - b1);
    double vhat = v / (1 - b2);
    return theta - lr * mhat / (std::sqrt(vhat) + eps);
  };
  CHECK(std::abs(params.lstm.head_w(0) - expected(0.7, gw)) < 1e-12);
  CHECK(std::abs(params.lstm.head_b - expected(-0.3, gb)) < 1e-12);
  // untouched zero-gradient parameters stay put
  CHECK(params.lstm.w_input(0, 0) == 0.0);

  // second step uses the accumulated moments
  opt.step(params, grads);
  CHECK(opt.steps_taken() == 2);
}

TEST_CASE("gradient clipping caps the global norm") {
  ModelConfig cfg;
  cfg.encoder = ModelConfig::EncoderKind::passthrough;
  cfg.embed_dim = 3;
  cfg.lstm_hidden = 2;
  ModelParams<double> grads;
  grads.cfg = cfg;
  grads.lstm = LstmParams<double>::zeros_like(3, 2);
  Rng rng(4);
  grads.for_each_tensor([&](const std::string&, double* d, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) d[j] = rng.normal();
  });

  double before = clip_gradients(grads, 1.0);
  CHECK(before > 1.0);
  double after = clip_gradients(grads, 1.0);
  CHECK(after <= 1.0 + 1e-9);

  // below the threshold nothing changes
  std::vector<double> snapshot;
  grads.for_each_tensor([&](const std::string&, double* d, std::size_t n) {
    snapshot.insert(snapshot.end(), d, d + n);
  });
  clip_gradients(grads, 10.0);
  std::vector<double> unchanged;
  grads.for_each_tensor([&](const std::string&, double* d, std::size_t n) {
    unchanged.insert(unchanged.end(), d, d + n);
  });
  CHECK(snapshot == unchanged);

  // disabled when max_norm is zero
  clip_gradients(grads, 0.0);
  std::vector<double> still;
  grads.for_each_tensor([&](const std::string&, double* d, std::size_t n) {
    still.insert(still.end(), d, d + n);
  });
  CHECK(snapshot == still);
}

TEST_CASE("pretrain requires simulated labels") {
  Prepared p = prepare();
  Dataset no_sim = p.data;
  for (std::size_t i = 0; i < no_sim.size(); ++i) no_sim.set_simulated_label(i, std::nullopt);
  CHECK_THROWS_AS(
      pretrain(no_sim, p.descs, p.vocab, micro_model(),
               micro_train(TrainConfig::Phase::pretrain, 1, 1)),
      std::invalid_argument);
}

TEST_CASE("zero learning rate leaves parameters at initialization") {
  Prepared p = prepare();
  TrainConfig cfg = micro_train(TrainConfig::Phase::pretrain, 1, 5);
  cfg.learning_rate = 0.0;
  Checkpoint ckpt = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);

  ModelParams<float> fresh = ModelParams<float>::init(micro_model(), p.vocab.size(), 5);
  CHECK(tensor_bytes(ckpt.params) == tensor_bytes(fresh));
}

TEST_CASE("identically seeded pretrains produce byte-identical checkpoints") {
  Prepared p = prepare();
  TrainConfig cfg = micro_train(TrainConfig::Phase::pretrain, 2, 7);
  Checkpoint a = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);
  Checkpoint b = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);
  CHECK(a.serialize() == b.serialize());

  cfg.seed = 8;
  Checkpoint c = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);
  CHECK_FALSE(a.serialize() == c.serialize());

  // thread count must not affect the result
  cfg.seed = 7;
  cfg.threads = 1;
  Checkpoint d = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);
  CHECK(a.serialize() == d.serialize());
}

TEST_CASE("checkpoint round-trip is bitwise") {
  Prepared p = prepare();
  Checkpoint ckpt = pretrain(p.data, p.descs, p.vocab, micro_model(),
                             micro_train(TrainConfig::Phase::pretrain, 1, 3));
  auto path = std::filesystem::temp_directory_path() / "free_ckpt_roundtrip.ckpt";
  ckpt.save(path);
  Checkpoint loaded = Checkpoint::load(path);
  CHECK(loaded.serialize() == ckpt.serialize());
  CHECK(loaded.content_hash() == ckpt.content_hash());
  CHECK(loaded.vocab.size() == p.vocab.size());
  CHECK(loaded.meta["provenance"]["phase"] == "pretrain");

  auto path2 = std::filesystem::temp_directory_path() / "free_ckpt_roundtrip2.ckpt";
  loaded.save(path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("checkpoint loading rejects malformed files") {
  Prepared p = prepare();
  Checkpoint ckpt = pretrain(p.data, p.descs, p.vocab, micro_model(),
                             micro_train(TrainConfig::Phase::pretrain, 1, 3));
  auto bytes = ckpt.serialize();

  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[3] = 'X';
    CHECK_THROWS_WITH_AS(Checkpoint::deserialize(bad), doctest::Contains("bad magic"),
                         CheckpointError);
  }
  SUBCASE("unsupported version") {
    auto bad = bytes;
    bad[4] = 0xE7;  // 999 little-endian
    bad[5] = 0x03;
    CHECK_THROWS_WITH_AS(Checkpoint::deserialize(bad),
                         doctest::Contains("unsupported version 999 (supported: 1)"),
                         CheckpointError);
  }
  SUBCASE("truncation") {
    auto bad = bytes;
    bad.resize(bad.size() - 5);
    CHECK_THROWS_WITH_AS(Checkpoint::deserialize(bad), doctest::Contains("truncated"),
                         CheckpointError);
  }
  SUBCASE("trailing garbage") {
    auto bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_WITH_AS(Checkpoint::deserialize(bad), doctest::Contains("trailing"),
                         CheckpointError);
  }
}

TEST_CASE("finetune with zero epochs appends provenance only") {
  Prepared p = prepare();
  Checkpoint pre = pretrain(p.data, p.descs, p.vocab, micro_model(),
                            micro_train(TrainConfig::Phase::pretrain, 1, 3));
  Checkpoint fin = finetune(pre, p.data, p.descs,
                            micro_train(TrainConfig::Phase::finetune, 0, 3));
  CHECK(tensor_bytes(fin.params) == tensor_bytes(pre.params));
  CHECK(fin.meta["provenance"]["phase"] == "finetune");
  CHECK(fin.meta["provenance"]["parent"] == to_hex64(pre.content_hash()));
  CHECK(fin.meta["provenance"]["chain"].size() == 1);
}

TEST_CASE("finetune requires observed labels") {
  Prepared p = prepare();
  Checkpoint pre = pretrain(p.data, p.descs, p.vocab, micro_model(),
                            micro_train(TrainConfig::Phase::pretrain, 1, 3));
  Dataset no_obs = p.data;
  for (std::size_t i = 0; i < no_obs.size(); ++i) no_obs.set_observed_label(i, std::nullopt);
  CHECK_THROWS_AS(finetune(pre, no_obs, p.descs,
                           micro_train(TrainConfig::Phase::finetune, 1, 3)),
                  std::invalid_argument);
}

TEST_CASE("freeze_encoder leaves encoder tensors bitwise unchanged") {
  Prepared p = prepare();
  Checkpoint pre = pretrain(p.data, p.descs, p.vocab, micro_model(),
                            micro_train(TrainConfig::Phase::pretrain, 1, 3));
  TrainConfig cfg = micro_train(TrainConfig::Phase::finetune, 2, 3);
  cfg.freeze_encoder = true;
  cfg.learning_rate = 1e-3;
  Checkpoint fin = finetune(pre, p.data, p.descs, cfg);

  std::vector<float> enc_before, enc_after;
  pre.params.encoder.for_each_tensor([&](const std::string&, float* d, std::size_t n) {
    enc_before.insert(enc_before.end(), d, d + n);
  });
  fin.params.encoder.for_each_tensor([&](const std::string&, float* d, std::size_t n) {
    enc_after.insert(enc_after.end(), d, d + n);
  });
  CHECK(enc_before == enc_after);

  std::vector<float> lstm_before, lstm_after;
  pre.params.lstm.for_each_tensor([&](const std::string&, float* d, std::size_t n) {
    lstm_before.insert(lstm_before.end(), d, d + n);
  });
  fin.params.lstm.for_each_tensor([&](const std::string&, float* d, std::size_t n) {
    lstm_after.insert(lstm_after.end(), d, d + n);
  });
  CHECK_FALSE(lstm_before == lstm_after);
}

TEST_CASE("unlabeled windows change nothing about the gradient step") {
  // dataset A: 20 days with labels only in the first 10 (second window empty)
  Dataset a = micro_bench(1, 20);
  auto idx = a.site_indices("s1");
  for (std::size_t j = 10; j < idx.size(); ++j) {
    a.set_observed_label(idx[j], std::nullopt);
    a.set_simulated_label(idx[j], std::nullopt);
  }
  // dataset B: the first 10 days only
  Dataset b = filter_sites(a, {"s1"});
  auto [head, tail] = split_by_date(b, a.date_range()->first.plus_days(9));
  Dataset b10 = std::move(head);

  PromptConfig prompt = PromptConfig::defaults();
  DescriptionSet descs_a = build_descriptions(a, prompt);
  DescriptionSet descs_b = build_descriptions(b10, prompt);
  Vocabulary vocab = Vocabulary::build(descs_a.texts);

  TrainConfig cfg = micro_train(TrainConfig::Phase::pretrain, 1, 13);
  cfg.batch_size = 4;
  Checkpoint ca = pretrain(a, descs_a, vocab, micro_model(), cfg);
  Checkpoint cb = pretrain(b10, descs_b, vocab, micro_model(), cfg);
  CHECK(tensor_bytes(ca.params) == tensor_bytes(cb.params));
}

TEST_CASE("training improves the loss on the micro task") {
  Prepared p = prepare(2, 120);
  TrainConfig cfg = micro_train(TrainConfig::Phase::pretrain, 30, 1);
  TrainLog log;
  Checkpoint ckpt = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg, &log);
  REQUIRE(log.epochs.size() >= 2);
  double first = log.epochs.front().train_loss;
  double best = first;
  for (const auto& e : log.epochs) best = std::min(best, e.train_loss);
  CHECK(best < first);

  auto log_path = std::filesystem::temp_directory_path() / "free_train_log.jsonl";
  log.write_jsonl(log_path);
  std::ifstream in(log_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    auto rec = nlohmann::json::parse(line);
    CHECK(rec.contains("epoch"));
    CHECK(rec.contains("train_loss"));
    ++lines;
  }
  CHECK(lines == log.epochs.size());
}

TEST_CASE("pretrain_fraction trims the training windows deterministically") {
  Prepared p = prepare(2, 120);
  TrainConfig cfg = micro_train(TrainConfig::Phase::pretrain, 2, 9);
  Checkpoint full = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);
  cfg.pretrain_fraction = 0.5;
  Checkpoint half_a = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);
  Checkpoint half_b = pretrain(p.data, p.descs, p.vocab, micro_model(), cfg);
  CHECK(half_a.serialize() == half_b.serialize());
  CHECK_FALSE(half_a.serialize() == full.serialize());
}

TEST_CASE("passthrough encoder trains as the LSTM-only preset") {
  Prepared p = prepare();
  ModelConfig model = micro_model();
  model.encoder = ModelConfig::EncoderKind::passthrough;
  TrainConfig cfg = micro_train(TrainConfig::Phase::pretrain, 2, 3);
  Checkpoint pre = pretrain(p.data, p.descs, p.vocab, model, cfg);
  CHECK(pre.params.cfg.encoder == ModelConfig::EncoderKind::passthrough);
  CHECK(pre.params.lstm.input_dim() == static_cast<int>(p.data.schema().size()));

  auto path = std::filesystem::temp_directory_path() / "free_ckpt_pass.ckpt";
  pre.save(path);
  Checkpoint loaded = Checkpoint::load(path);
  CHECK(loaded.serialize() == pre.serialize());

  Checkpoint fin = finetune(loaded, p.data, p.descs,
                            micro_train(TrainConfig::Phase::finetune, 1, 3));
  DescriptionSet empty_descs;
  empty_descs.texts.resize(p.data.size());
  auto preds = predict(fin, p.data, empty_descs, 2);
  CHECK(preds.size() == p.data.size());
}

TEST_CASE("predict covers every sample exactly once") {
  Prepared p = prepare();
  Checkpoint pre = pretrain(p.data, p.descs, p.vocab, micro_model(),
                            micro_train(TrainConfig::Phase::pretrain, 1, 3));
  auto preds = predict(pre, p.data, p.descs, 2);
  CHECK(preds.size() == p.data.size());
  for (double v : preds) CHECK(std::isfinite(v));

  auto again = predict(pre, p.data, p.descs, 1);
  CHECK(preds == again);
}
