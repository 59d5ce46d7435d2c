#include "freeml/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

namespace freeml {

void ModelConfig::validate() const {
  if (embed_dim < 1 || lstm_hidden < 1 || window < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (encoder == EncoderKind::transformer) {
    if (layers < 0 || heads < 1 || ffn_dim < 1 || max_positions < 1) {
      throw std::invalid_argument("encoder dimensions must be positive");
    }
    if (embed_dim % heads != 0) throw std::invalid_argument("embed_dim must be divisible by heads");
  }
}

EncoderConfig ModelConfig::encoder_config(int vocab_size) const {
  EncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.dim = embed_dim;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.ffn_dim = ffn_dim;
  cfg.max_positions = max_positions;
  return cfg;
}

template <class T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, int vocab_size, std::uint64_t seed) {
  cfg.validate();
  ModelParams<T> p;
  p.cfg = cfg;
  if (cfg.encoder == ModelConfig::EncoderKind::transformer) {
    p.encoder = EncoderParams<T>::init(cfg.encoder_config(vocab_size),
                                       derive_seed(seed, "encoder"));
  }
  p.lstm = LstmParams<T>::init(cfg.embed_dim, cfg.lstm_hidden, derive_seed(seed, "lstm"));
  return p;
}

template <class T>
ModelParams<T> ModelParams<T>::zeros_like(const ModelParams<T>& other) {
  ModelParams<T> p;
  p.cfg = other.cfg;
  if (other.cfg.encoder == ModelConfig::EncoderKind::transformer) {
    p.encoder = EncoderParams<T>::zeros_like(other.encoder.cfg);
  }
  p.lstm = LstmParams<T>::zeros_like(other.lstm.input_dim(), other.lstm.hidden());
  return p;
}

template <class T>
void ModelParams<T>::for_each_tensor(const TensorVisitor<T>& visit) {
  if (cfg.encoder == ModelConfig::EncoderKind::transformer) {
    encoder.for_each_tensor(visit);
  }
  lstm.for_each_tensor(visit);
}

template <class T>
std::size_t ModelParams<T>::encoder_tensor_count() const {
  if (cfg.encoder != ModelConfig::EncoderKind::transformer) return 0;
  std::size_t n = 0;
  const_cast<EncoderParams<T>&>(encoder).for_each_tensor(
      [&](const std::string&, T*, std::size_t) { ++n; });
  return n;
}

template struct ModelParams<float>;
template struct ModelParams<double>;

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (eps <= 0.0) throw std::invalid_argument("adam eps must be positive");
  if (!(val_fraction >= 0.0 && val_fraction <= 0.5)) {
    throw std::invalid_argument("val_fraction must lie in [0, 0.5]");
  }
  if (patience < 0) throw std::invalid_argument("patience must be non-negative");
  if (!(pretrain_fraction > 0.0 && pretrain_fraction <= 1.0)) {
    throw std::invalid_argument("pretrain_fraction must lie in (0, 1]");
  }
  if (threads < 1) throw std::invalid_argument("threads must be positive");
}

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig cfg;
  cfg.phase = Phase::pretrain;
  cfg.epochs = 30;
  cfg.learning_rate = 1e-3;
  return cfg;
}

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig cfg;
  cfg.phase = Phase::finetune;
  cfg.epochs = 15;
  cfg.learning_rate = 1e-4;
  return cfg;
}

template <class T>
double masked_mse(std::span<const T> predictions, std::span<const T> labels,
                  std::span<const char> mask) {
  if (predictions.size() != labels.size() || predictions.size() != mask.size()) {
    throw std::invalid_argument("masked_mse inputs must have equal length");
  }
  double sq = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    double r = static_cast<double>(predictions[i]) - static_cast<double>(labels[i]);
    sq += r * r;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("masked_mse requires at least one masked step");
  return sq / static_cast<double>(n);
}

template double masked_mse<float>(std::span<const float>, std::span<const float>,
                                  std::span<const char>);
template double masked_mse<double>(std::span<const double>, std::span<const double>,
                                   std::span<const char>);

template <class T>
Adam<T>::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

template <class T>
void Adam<T>::step(ModelParams<T>& params, ModelParams<T>& grads, std::size_t skip_tensors) {
  std::vector<std::pair<T*, std::size_t>> pv, gv;
  params.for_each_tensor([&](const std::string&, T* d, std::size_t n) { pv.emplace_back(d, n); });
  grads.for_each_tensor([&](const std::string&, T* d, std::size_t n) { gv.emplace_back(d, n); });
  if (pv.size() != gv.size()) throw std::invalid_argument("parameter/gradient tensor mismatch");

  if (m_.empty()) {
    m_.resize(pv.size());
    v_.resize(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      m_[i].assign(pv[i].second, T(0));
      v_[i].assign(pv[i].second, T(0));
    }
  }
  ++t_;
  const T b1 = static_cast<T>(beta1_);
  const T b2 = static_cast<T>(beta2_);
  const T bias1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const T bias2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const T lr = static_cast<T>(lr_);
  const T eps = static_cast<T>(eps_);

  for (std::size_t i = skip_tensors; i < pv.size(); ++i) {
    if (pv[i].second != gv[i].second) {
      throw std::invalid_argument("parameter/gradient tensor size mismatch");
    }
    T* p = pv[i].first;
    const T* g = gv[i].first;
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < pv[i].second; ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      T mhat = m[j] / bias1;
      T vhat = v[j] / bias2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

template <class T>
double clip_gradients(ModelParams<T>& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each_tensor([&](const std::string&, T* d, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) sq += static_cast<double>(d[j]) * static_cast<double>(d[j]);
  });
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    grads.for_each_tensor([&](const std::string&, T* d, std::size_t n) {
      for (std::size_t j = 0; j < n; ++j) d[j] *= scale;
    });
  }
  return norm;
}

template double clip_gradients<float>(ModelParams<float>&, double);
template double clip_gradients<double>(ModelParams<double>&, double);

// ---------------------------------------------------------------------------
// checkpoint format

namespace {

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

constexpr bool host_little_endian() {
  return std::endian::native == std::endian::little;
}

std::string encoder_kind_name(ModelConfig::EncoderKind k) {
  return k == ModelConfig::EncoderKind::transformer ? "transformer" : "passthrough";
}

ModelConfig::EncoderKind encoder_kind_from(const std::string& s) {
  if (s == "transformer") return ModelConfig::EncoderKind::transformer;
  if (s == "passthrough") return ModelConfig::EncoderKind::passthrough;
  throw CheckpointError("unknown encoder kind '" + s + "'");
}

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const {
  static_assert(sizeof(float) == 4);
  std::vector<std::uint8_t> out;
  append_bytes(out, "FREE", 4);
  append_u32(out, kVersion);
  std::string meta_text = meta.dump();
  append_u64(out, meta_text.size());
  append_bytes(out, meta_text.data(), meta_text.size());

  const_cast<ModelParams<float>&>(params).for_each_tensor(
      [&](const std::string&, float* d, std::size_t n) {
        if (host_little_endian()) {
          append_bytes(out, d, n * sizeof(float));
        } else {
          for (std::size_t j = 0; j < n; ++j) {
            std::uint32_t bits;
            std::memcpy(&bits, &d[j], 4);
            append_u32(out, bits);
          }
        }
      });
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw CheckpointError("truncated checkpoint: header incomplete");
  if (std::memcmp(bytes.data(), "FREE", 4) != 0) {
    throw CheckpointError("bad magic (expected FREE)");
  }
  std::uint32_t version = read_u32(bytes, 4);
  if (version != kVersion) {
    throw CheckpointError("unsupported version " + std::to_string(version) +
                          " (supported: " + std::to_string(kVersion) + ")");
  }
  std::uint64_t meta_len = read_u64(bytes, 8);
  if (bytes.size() < 16 + meta_len) throw CheckpointError("truncated checkpoint: metadata incomplete");
  nlohmann::json meta = nlohmann::json::parse(
      bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(meta_len), nullptr,
      false);
  if (meta.is_discarded()) throw CheckpointError("corrupt checkpoint metadata");

  Checkpoint ckpt;
  ckpt.meta = meta;
  const auto& arch = meta.at("arch");
  ModelConfig cfg;
  cfg.encoder = encoder_kind_from(arch.at("encoder").get<std::string>());
  cfg.embed_dim = arch.at("embed_dim").get<int>();
  cfg.layers = arch.at("layers").get<int>();
  cfg.heads = arch.at("heads").get<int>();
  cfg.ffn_dim = arch.at("ffn_dim").get<int>();
  cfg.max_positions = arch.at("max_positions").get<int>();
  cfg.lstm_hidden = arch.at("lstm_hidden").get<int>();
  cfg.window = arch.at("window").get<int>();
  int vocab_size = arch.at("vocab_size").get<int>();

  if (cfg.encoder == ModelConfig::EncoderKind::transformer) {
    ckpt.vocab = Vocabulary::from_json(meta.at("vocab"));
    if (ckpt.vocab.size() != vocab_size) {
      throw CheckpointError("vocabulary size does not match architecture metadata");
    }
  } else if (meta.contains("feature_stats")) {
    const auto& fs = meta.at("feature_stats");
    ckpt.feature_stats.names = fs.at("names").get<std::vector<std::string>>();
    ckpt.feature_stats.mean = fs.at("mean").get<std::vector<double>>();
    ckpt.feature_stats.sd = fs.at("sd").get<std::vector<double>>();
  }
  if (meta.contains("label_stats")) {
    ckpt.label_stats.mean = meta.at("label_stats").at("mean").get<double>();
    ckpt.label_stats.sd = meta.at("label_stats").at("sd").get<double>();
  }

  ModelParams<float> p;
  p.cfg = cfg;
  if (cfg.encoder == ModelConfig::EncoderKind::transformer) {
    p.encoder = EncoderParams<float>::zeros_like(cfg.encoder_config(vocab_size));
  }
  p.lstm = LstmParams<float>::zeros_like(cfg.embed_dim, cfg.lstm_hidden);

  std::size_t offset = 16 + meta_len;
  p.for_each_tensor([&](const std::string& name, float* d, std::size_t n) {
    if (offset + n * sizeof(float) > bytes.size()) {
      throw CheckpointError("truncated checkpoint: tensor " + name + " incomplete");
    }
    if (host_little_endian()) {
      std::memcpy(d, bytes.data() + offset, n * sizeof(float));
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        std::uint32_t bits = read_u32(bytes, offset + 4 * j);
        std::memcpy(&d[j], &bits, 4);
      }
    }
    offset += n * sizeof(float);
  });
  if (offset != bytes.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(bytes.size() - offset) +
                          " trailing bytes");
  }
  ckpt.params = std::move(p);
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for checkpoint file " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::uint64_t Checkpoint::content_hash() const {
  auto bytes = serialize();
  return fnv1a64(bytes.data(), bytes.size());
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  for (const auto& e : epochs) {
    nlohmann::json rec = {{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_rmse", std::isnan(e.val_rmse) ? nlohmann::json() : nlohmann::json(e.val_rmse)},
                          {"lr", e.lr},
                          {"wall_s", e.wall_s}};
    out << rec.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// training loop

namespace {

struct TrainData {
  const Dataset* ds = nullptr;
  const TokenizedSet* tokens = nullptr;  // transformer
  Mat<float> features;                   // passthrough
  std::vector<SampleWindow> windows;
  bool passthrough = false;
};

Mat<float> window_embeddings(const TrainData& td, const SampleWindow& w,
                             const ModelParams<float>& p,
                             std::vector<EncoderWorkspace<float>>* wss) {
  const int len = w.length();
  Mat<float> e(len, p.cfg.embed_dim);
  for (int t = 0; t < len; ++t) {
    std::size_t idx = w.sample_idx[static_cast<std::size_t>(t)];
    if (td.passthrough) {
      e.row(t) = td.features.row(static_cast<Eigen::Index>(idx));
    } else if (wss) {
      e.row(t) = encode<float>(td.tokens->ids[idx], p.encoder, (*wss)[static_cast<std::size_t>(t)])
                     .transpose();
    } else {
      e.row(t) = encode<float>(td.tokens->ids[idx], p.encoder).transpose();
    }
  }
  return e;
}

// squared error over the window's masked steps
std::pair<double, long> window_eval(const TrainData& td, const SampleWindow& w,
                                    const ModelParams<float>& p) {
  Mat<float> e = window_embeddings(td, w, p, nullptr);
  Vec<float> preds = lstm_forward(e, p.lstm);
  double sq = 0.0;
  long n = 0;
  for (int t = 0; t < w.length(); ++t) {
    if (!w.mask[static_cast<std::size_t>(t)]) continue;
    double r = static_cast<double>(preds(t)) - static_cast<double>(w.labels[static_cast<std::size_t>(t)]);
    sq += r * r;
    ++n;
  }
  return {sq, n};
}

struct WindowSlot {
  ModelParams<float> grads;
  double sq = 0.0;
};

void zero_params(ModelParams<float>& p) {
  p.for_each_tensor([](const std::string&, float* d, std::size_t n) {
    std::memset(d, 0, n * sizeof(float));
  });
}

void add_params(ModelParams<float>& dst, ModelParams<float>& src) {
  std::vector<std::pair<float*, std::size_t>> dv, sv;
  dst.for_each_tensor([&](const std::string&, float* d, std::size_t n) { dv.emplace_back(d, n); });
  src.for_each_tensor([&](const std::string&, float* d, std::size_t n) { sv.emplace_back(d, n); });
  for (std::size_t i = 0; i < dv.size(); ++i) {
    Eigen::Map<Eigen::ArrayXf> a(dv[i].first, static_cast<Eigen::Index>(dv[i].second));
    Eigen::Map<const Eigen::ArrayXf> b(sv[i].first, static_cast<Eigen::Index>(sv[i].second));
    a += b;
  }
}

// gradient of the batch loss contribution of one window; upstream scale is
// 2 / total_masked_in_batch
void window_grads(const TrainData& td, const SampleWindow& w, const ModelParams<float>& p,
                  double grad_scale, bool train_encoder, WindowSlot& slot) {
  const int len = w.length();
  std::vector<EncoderWorkspace<float>> wss;
  bool need_ws = !td.passthrough && train_encoder;
  if (need_ws) wss.resize(static_cast<std::size_t>(len));

  Mat<float> e = window_embeddings(td, w, p, need_ws ? &wss : nullptr);
  LstmCache<float> cache;
  Vec<float> preds = lstm_forward(e, p.lstm, &cache);

  Vec<float> upstream = Vec<float>::Zero(len);
  slot.sq = 0.0;
  for (int t = 0; t < len; ++t) {
    if (!w.mask[static_cast<std::size_t>(t)]) continue;
    double r = static_cast<double>(preds(t)) - static_cast<double>(w.labels[static_cast<std::size_t>(t)]);
    slot.sq += r * r;
    upstream(t) = static_cast<float>(grad_scale * r);
  }

  Mat<float> de = lstm_backward(e, p.lstm, cache, upstream, slot.grads.lstm);
  if (need_ws) {
    for (int t = 0; t < len; ++t) {
      if ((de.row(t).array() != 0.0f).any()) {
        Vec<float> up = de.row(t).transpose();
        encode_backward(wss[static_cast<std::size_t>(t)], p.encoder, up, slot.grads.encoder);
      }
    }
  }
}

struct RunResult {
  ModelParams<float> best;
  int epochs_run = 0;
};

RunResult run_training(ModelParams<float> params, const TrainData& td, const TrainConfig& cfg,
                       TrainLog* log) {
  cfg.validate();

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < td.windows.size(); ++i) {
    if (td.windows[i].masked_count > 0) active.push_back(i);
  }
  if (active.empty()) throw std::invalid_argument("no labeled windows to train on");

  Rng vr(derive_seed(cfg.seed, "val-split"));
  vr.shuffle(active);
  auto val_n = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(active.size()));
  std::vector<std::size_t> val(active.begin(), active.begin() + static_cast<std::ptrdiff_t>(val_n));
  std::vector<std::size_t> train(active.begin() + static_cast<std::ptrdiff_t>(val_n), active.end());
  if (train.empty()) throw std::invalid_argument("validation split leaves no training windows");
  if (cfg.phase == TrainConfig::Phase::pretrain && cfg.pretrain_fraction < 1.0) {
    auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(cfg.pretrain_fraction * static_cast<double>(train.size()))));
    if (keep < train.size()) train.resize(keep);
  }

  Adam<float> opt(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
  std::size_t skip = cfg.freeze_encoder ? params.encoder_tensor_count() : 0;
  bool train_encoder = !cfg.freeze_encoder;

  std::vector<WindowSlot> slots(static_cast<std::size_t>(cfg.batch_size));
  for (auto& s : slots) s.grads = ModelParams<float>::zeros_like(params);
  ModelParams<float> batch_grads = ModelParams<float>::zeros_like(params);

  ModelParams<float> best = params;
  double best_metric = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  const bool has_val = !val.empty();

  int epochs_run = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> sched = train;
    Rng er(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
    er.shuffle(sched);

    double epoch_sq = 0.0;
    long epoch_masked = 0;
    for (std::size_t b = 0; b < sched.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t nb = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                             sched.size() - b);
      long total_masked = 0;
      for (std::size_t j = 0; j < nb; ++j) {
        total_masked += td.windows[sched[b + j]].masked_count;
      }
      if (total_masked == 0) {
        std::cerr << "warning: skipping batch with no labeled steps\n";
        continue;
      }
      double grad_scale = 2.0 / static_cast<double>(total_masked);

      parallel_for(nb, cfg.threads, [&](std::size_t j) {
        zero_params(slots[j].grads);
        window_grads(td, td.windows[sched[b + j]], params, grad_scale, train_encoder, slots[j]);
      });

      zero_params(batch_grads);
      for (std::size_t j = 0; j < nb; ++j) {
        add_params(batch_grads, slots[j].grads);
        epoch_sq += slots[j].sq;
      }
      epoch_masked += total_masked;

      clip_gradients(batch_grads, cfg.grad_clip);
      opt.step(params, batch_grads, skip);
    }

    double train_loss = epoch_masked > 0 ? epoch_sq / static_cast<double>(epoch_masked) : 0.0;
    double val_rmse = std::numeric_limits<double>::quiet_NaN();
    double metric = train_loss;
    if (has_val) {
      std::vector<std::pair<double, long>> res(val.size());
      parallel_for(val.size(), cfg.threads, [&](std::size_t j) {
        res[j] = window_eval(td, td.windows[val[j]], params);
      });
      double vsq = 0.0;
      long vn = 0;
      for (const auto& [sq, n] : res) {
        vsq += sq;
        vn += n;
      }
      val_rmse = std::sqrt(vsq / static_cast<double>(vn));
      metric = val_rmse;
    }

    epochs_run = epoch;
    if (log) {
      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log->epochs.push_back(EpochLog{epoch, train_loss, val_rmse, cfg.learning_rate, wall});
    }

    if (metric < best_metric) {
      best_metric = metric;
      best = params;
      best_epoch = epoch;
    } else if (epoch - best_epoch > cfg.patience) {
      break;
    }
  }

  return RunResult{std::move(best), epochs_run};
}

nlohmann::json arch_json(const ModelConfig& cfg, int vocab_size) {
  return nlohmann::json{{"encoder", encoder_kind_name(cfg.encoder)},
                        {"vocab_size", vocab_size},
                        {"embed_dim", cfg.embed_dim},
                        {"layers", cfg.layers},
                        {"heads", cfg.heads},
                        {"ffn_dim", cfg.ffn_dim},
                        {"max_positions", cfg.max_positions},
                        {"lstm_hidden", cfg.lstm_hidden},
                        {"window", cfg.window}};
}

TrainData make_train_data(const Dataset& data, const DescriptionSet& descriptions,
                          const Vocabulary& vocab, const ModelConfig& model,
                          const FeatureStats& stats, const LabelStats& labels, LabelKind kind,
                          int threads, TokenizedSet& tokens_storage) {
  TrainData td;
  td.ds = &data;
  td.passthrough = model.encoder == ModelConfig::EncoderKind::passthrough;
  if (td.passthrough) {
    td.features = build_feature_matrix(data, stats);
  } else {
    tokens_storage = tokenize_set(descriptions, vocab, model.max_positions, threads);
    td.tokens = &tokens_storage;
  }
  td.windows = build_windows(data, kind, model.window, model.window);
  const float mean = static_cast<float>(labels.mean);
  const float inv_sd = static_cast<float>(1.0 / labels.sd);
  for (auto& w : td.windows) {
    for (std::size_t t = 0; t < w.labels.size(); ++t) {
      if (w.mask[t]) w.labels[t] = (w.labels[t] - mean) * inv_sd;
    }
  }
  return td;
}

}  // namespace

LabelStats compute_label_stats(const Dataset& data, LabelKind kind) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : data.samples()) {
    auto label = kind == LabelKind::observed ? s.observed_label : s.simulated_label;
    if (!label) continue;
    sum += *label;
    sum_sq += *label * *label;
    ++n;
  }
  LabelStats stats;
  if (n > 0) {
    stats.mean = sum / static_cast<double>(n);
    double var = std::max(0.0, sum_sq / static_cast<double>(n) - stats.mean * stats.mean);
    stats.sd = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

Checkpoint pretrain(const Dataset& data, const DescriptionSet& descriptions,
                    const Vocabulary& vocab, const ModelConfig& model, const TrainConfig& cfg,
                    TrainLog* log) {
  model.validate();
  if (data.simulated_count() == 0) {
    throw std::invalid_argument("pretrain requires simulated labels");
  }
  bool passthrough = model.encoder == ModelConfig::EncoderKind::passthrough;
  ModelConfig effective = model;
  FeatureStats stats;
  if (passthrough) {
    stats = compute_feature_stats(data, data.schema());
    effective.embed_dim = static_cast<int>(stats.names.size());
  } else if (descriptions.texts.size() != data.size()) {
    throw std::invalid_argument("descriptions must be parallel to the dataset");
  }

  LabelStats label_stats = compute_label_stats(data, LabelKind::simulated);
  TokenizedSet tokens;
  TrainData td = make_train_data(data, descriptions, vocab, effective, stats, label_stats,
                                 LabelKind::simulated, cfg.threads, tokens);

  ModelParams<float> params = ModelParams<float>::init(effective, vocab.size(), cfg.seed);
  RunResult res = run_training(std::move(params), td, cfg, log);

  Checkpoint ckpt;
  ckpt.params = std::move(res.best);
  ckpt.vocab = vocab;
  ckpt.feature_stats = stats;
  ckpt.label_stats = label_stats;
  ckpt.meta["label_stats"] = {{"mean", label_stats.mean}, {"sd", label_stats.sd}};
  ckpt.meta["arch"] = arch_json(effective, passthrough ? 0 : vocab.size());
  if (passthrough) {
    ckpt.meta["feature_stats"] = {
        {"names", stats.names}, {"mean", stats.mean}, {"sd", stats.sd}};
  } else {
    ckpt.meta["vocab"] = vocab.to_json();
    ckpt.meta["vocab_hash"] = to_hex64(vocab.content_hash());
  }
  ckpt.meta["provenance"] = {
      {"phase", "pretrain"},
      {"seed", cfg.seed},
      {"epochs_requested", cfg.epochs},
      {"epochs_run", res.epochs_run},
      {"data_hash", to_hex64(data.content_hash())},
      {"descriptions_hash", to_hex64(descriptions.content_hash())},
      {"parent", nullptr},
      {"chain", nlohmann::json::array()},
  };
  return ckpt;
}

Checkpoint finetune(const Checkpoint& start, const Dataset& data,
                    const DescriptionSet& descriptions, const TrainConfig& cfg, TrainLog* log) {
  if (data.observed_count() == 0) {
    throw std::invalid_argument("finetune requires at least one observed label");
  }
  const ModelConfig& model = start.params.cfg;
  bool passthrough = model.encoder == ModelConfig::EncoderKind::passthrough;
  if (!passthrough && descriptions.texts.size() != data.size()) {
    throw std::invalid_argument("descriptions must be parallel to the dataset");
  }
  if (passthrough && start.feature_stats.names != data.schema()) {
    throw std::invalid_argument("dataset schema does not match checkpoint feature stats");
  }

  TokenizedSet tokens;
  TrainData td = make_train_data(data, descriptions, start.vocab, model, start.feature_stats,
                                 start.label_stats, LabelKind::observed, cfg.threads, tokens);

  RunResult res = run_training(start.params, td, cfg, log);

  Checkpoint ckpt;
  ckpt.params = std::move(res.best);
  ckpt.vocab = start.vocab;
  ckpt.feature_stats = start.feature_stats;
  ckpt.label_stats = start.label_stats;
  ckpt.meta = start.meta;
  nlohmann::json chain = nlohmann::json::array();
  if (start.meta.contains("provenance") && start.meta["provenance"].contains("chain")) {
    chain = start.meta["provenance"]["chain"];
  }
  chain.push_back(to_hex64(start.content_hash()));
  ckpt.meta["provenance"] = {
      {"phase", "finetune"},
      {"seed", cfg.seed},
      {"epochs_requested", cfg.epochs},
      {"epochs_run", res.epochs_run},
      {"data_hash", to_hex64(data.content_hash())},
      {"descriptions_hash", to_hex64(descriptions.content_hash())},
      {"parent", to_hex64(start.content_hash())},
      {"chain", chain},
  };
  return ckpt;
}

std::vector<double> predict(const Checkpoint& ckpt, const Dataset& data,
                            const DescriptionSet& descriptions, int threads) {
  const ModelConfig& model = ckpt.params.cfg;
  bool passthrough = model.encoder == ModelConfig::EncoderKind::passthrough;
  if (!passthrough && descriptions.texts.size() != data.size()) {
    throw std::invalid_argument("descriptions must be parallel to the dataset");
  }

  TokenizedSet tokens;
  TrainData td = make_train_data(data, descriptions, ckpt.vocab, model, ckpt.feature_stats,
                                 ckpt.label_stats, LabelKind::observed, threads, tokens);

  std::vector<double> out(data.size(), 0.0);
  parallel_for(td.windows.size(), threads, [&](std::size_t wi) {
    const SampleWindow& w = td.windows[wi];
    Mat<float> e = window_embeddings(td, w, ckpt.params, nullptr);
    Vec<float> preds = lstm_forward(e, ckpt.params.lstm);
    for (int t = 0; t < w.length(); ++t) {
      out[w.sample_idx[static_cast<std::size_t>(t)]] =
          ckpt.label_stats.mean + ckpt.label_stats.sd * static_cast<double>(preds(t));
    }
  });
  return out;
}

}  // namespace freeml
