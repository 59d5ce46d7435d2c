#include <benchmark/benchmark.h>

#include "freeml/describe.hpp"
#include "freeml/encode.hpp"
#include "freeml/pipeline.hpp"
#include "freeml/simulate.hpp"
#include "freeml/temporal.hpp"

using namespace freeml;

namespace {

struct Fixture {
  Dataset data;
  PromptConfig prompt = PromptConfig::defaults();
  DescriptionSet descs;
  Vocabulary vocab;
  TokenizedSet tokens;
  EncoderParams<float> encoder;
  LstmParams<float> lstm;

  Fixture() {
    BenchmarkSpec spec;
    spec.n_sites = 1;
    spec.days = 256;
    data = make_benchmark(spec);
    descs = build_descriptions(data, prompt);
    vocab = Vocabulary::build(descs.texts);
    tokens = tokenize_set(descs, vocab, 192);

    EncoderConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.dim = 32;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 64;
    cfg.max_positions = 192;
    encoder = EncoderParams<float>::init(cfg, 1);
    lstm = LstmParams<float>::init(32, 32, 2);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_RenderTemplate(benchmark::State& state) {
  auto& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    LinearizedRecord rec = linearize(f.data.samples()[i % f.data.size()]);
    benchmark::DoNotOptimize(render_template(f.prompt, rec));
    ++i;
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()));
}
BENCHMARK(BM_RenderTemplate);

void BM_Tokenize(benchmark::State& state) {
  auto& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tokenize(f.descs.texts[i % f.descs.texts.size()], f.vocab, 192));
    ++i;
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()));
}
BENCHMARK(BM_Tokenize);

void BM_EncodeForward(benchmark::State& state) {
  auto& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode<float>(f.tokens.ids[i % f.tokens.ids.size()], f.encoder));
    ++i;
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()));
}
BENCHMARK(BM_EncodeForward);

void BM_EncodeForwardBackward(benchmark::State& state) {
  auto& f = fixture();
  auto grads = EncoderParams<float>::zeros_like(f.encoder.cfg);
  Vec<float> upstream = Vec<float>::Ones(f.encoder.cfg.dim);
  EncoderWorkspace<float> ws;
  std::size_t i = 0;
  for (auto _ : state) {
    encode<float>(f.tokens.ids[i % f.tokens.ids.size()], f.encoder, ws);
    encode_backward(ws, f.encoder, upstream, grads);
    ++i;
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()));
}
BENCHMARK(BM_EncodeForwardBackward);

void BM_LstmWindowForwardBackward(benchmark::State& state) {
  auto& f = fixture();
  const int window = static_cast<int>(state.range(0));
  Mat<float> emb = Mat<float>::Random(window, 32);
  Vec<float> upstream = Vec<float>::Ones(window);
  auto grads = LstmParams<float>::zeros_like(32, 32);
  for (auto _ : state) {
    LstmCache<float> cache;
    lstm_forward(emb, f.lstm, &cache);
    benchmark::DoNotOptimize(lstm_backward(emb, f.lstm, cache, upstream, grads));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * window);
}
BENCHMARK(BM_LstmWindowForwardBackward)->Arg(30)->Arg(90);

void BM_SimulateYear(benchmark::State& state) {
  WeatherGenParams params;
  for (auto _ : state) {
    Dataset drivers = generate_weather({"s1"}, 365, params);
    benchmark::DoNotOptimize(simulate_stream_temperature(drivers, SimParams{}));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 365);
}
BENCHMARK(BM_SimulateYear);

}  // namespace

BENCHMARK_MAIN();
