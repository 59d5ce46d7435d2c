#include "freeml/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "freeml/encode.hpp"
#include "freeml/temporal.hpp"

namespace freeml {

namespace {

constexpr double kStep = 1e-5;

double rel_error(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
}

double check_encoder(std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.vocab_size = 20;
  cfg.dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.max_positions = 16;

  auto params = EncoderParams<double>::init(cfg, seed);
  Rng rng(derive_seed(seed, "gradcheck-encoder"));
  std::vector<int> tokens = {Vocabulary::kBos};
  for (int i = 0; i < 6; ++i) tokens.push_back(3 + static_cast<int>(rng.below(17)));
  tokens.push_back(Vocabulary::kPad);
  Vec<double> upstream(cfg.dim);
  for (int d = 0; d < cfg.dim; ++d) upstream(d) = rng.normal();

  auto grads = EncoderParams<double>::zeros_like(cfg);
  encode_backward<double>(tokens, params, upstream, grads);

  auto loss = [&] { return upstream.dot(encode<double>(tokens, params)); };

  double worst = 0.0;
  std::vector<std::pair<double*, std::size_t>> pt, gt;
  params.for_each_tensor([&](const std::string&, double* p, std::size_t n) {
    pt.emplace_back(p, n);
  });
  grads.for_each_tensor([&](const std::string&, double* p, std::size_t n) {
    gt.emplace_back(p, n);
  });
  for (std::size_t ti = 0; ti < pt.size(); ++ti) {
    for (std::size_t j = 0; j < pt[ti].second; ++j) {
      double saved = pt[ti].first[j];
      pt[ti].first[j] = saved + kStep;
      double up = loss();
      pt[ti].first[j] = saved - kStep;
      double down = loss();
      pt[ti].first[j] = saved;
      worst = std::max(worst, rel_error(gt[ti].first[j], (up - down) / (2 * kStep)));
    }
  }
  return worst;
}

std::pair<double, double> check_lstm(std::uint64_t seed) {
  const int input_dim = 4, hidden = 3, steps = 5;
  auto params = LstmParams<double>::init(input_dim, hidden, seed);
  Rng rng(derive_seed(seed, "gradcheck-lstm"));
  Mat<double> emb(steps, input_dim);
  for (int r = 0; r < steps; ++r) {
    for (int c = 0; c < input_dim; ++c) emb(r, c) = rng.normal();
  }
  Vec<double> upstream(steps);
  for (int t = 0; t < steps; ++t) upstream(t) = rng.normal();

  LstmCache<double> cache;
  lstm_forward(emb, params, &cache);
  auto grads = LstmParams<double>::zeros_like(input_dim, hidden);
  Mat<double> demb = lstm_backward(emb, params, cache, upstream, grads);

  auto loss = [&] { return upstream.dot(lstm_forward(emb, params)); };

  double worst_param = 0.0;
  std::vector<std::pair<double*, std::size_t>> pt, gt;
  params.for_each_tensor([&](const std::string&, double* p, std::size_t n) {
    pt.emplace_back(p, n);
  });
  grads.for_each_tensor([&](const std::string&, double* p, std::size_t n) {
    gt.emplace_back(p, n);
  });
  for (std::size_t ti = 0; ti < pt.size(); ++ti) {
    for (std::size_t j = 0; j < pt[ti].second; ++j) {
      double saved = pt[ti].first[j];
      pt[ti].first[j] = saved + kStep;
      double up = loss();
      pt[ti].first[j] = saved - kStep;
      double down = loss();
      pt[ti].first[j] = saved;
      worst_param = std::max(worst_param, rel_error(gt[ti].first[j], (up - down) / (2 * kStep)));
    }
  }

  double worst_emb = 0.0;
  for (int r = 0; r < steps; ++r) {
    for (int c = 0; c < input_dim; ++c) {
      double saved = emb(r, c);
      emb(r, c) = saved + kStep;
      double up = loss();
      emb(r, c) = saved - kStep;
      double down = loss();
      emb(r, c) = saved;
      worst_emb = std::max(worst_emb, rel_error(demb(r, c), (up - down) / (2 * kStep)));
    }
  }
  return {worst_param, worst_emb};
}

}  // namespace

double GradCheckReport::worst() const {
  return std::max({encoder_max_rel, lstm_max_rel, embedding_max_rel});
}

GradCheckReport run_gradcheck(std::uint64_t base_seed, int n_seeds) {
  auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;
  for (int i = 0; i < n_seeds; ++i) {
    std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    report.encoder_max_rel = std::max(report.encoder_max_rel, check_encoder(seed));
    auto [p, e] = check_lstm(seed);
    report.lstm_max_rel = std::max(report.lstm_max_rel, p);
    report.embedding_max_rel = std::max(report.embedding_max_rel, e);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace freeml
