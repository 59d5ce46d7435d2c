#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "freeml/encode.hpp"
#include "freeml/pipeline.hpp"
#include "freeml/temporal.hpp"

namespace freeml {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  enum class EncoderKind { transformer, passthrough };

  EncoderKind encoder = EncoderKind::transformer;
  int embed_dim = 64;       // D (ignored for passthrough: D = schema size)
  int layers = 2;           // L
  int heads = 4;            // H
  int ffn_dim = 128;        // F
  int max_positions = 256;  // P
  int lstm_hidden = 64;     // H_l
  int window = 30;          // W, training stride equals W

  void validate() const;
  EncoderConfig encoder_config(int vocab_size) const;
};

template <class T>
struct ModelParams {
  ModelConfig cfg;
  EncoderParams<T> encoder;  // unused tensors stay empty for passthrough
  LstmParams<T> lstm;

  static ModelParams init(const ModelConfig& cfg, int vocab_size, std::uint64_t seed);
  static ModelParams zeros_like(const ModelParams& other);

  // Encoder tensors first, then LSTM tensors (canonical checkpoint order).
  void for_each_tensor(const TensorVisitor<T>& visit);
  std::size_t encoder_tensor_count() const;
};

struct TrainConfig {
  enum class Phase { pretrain, finetune };

  Phase phase = Phase::pretrain;
  int epochs = 30;
  int batch_size = 8;  // windows
  double learning_rate = 1e-3;  // 1e-4 for finetune
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 5.0;  // global norm; 0 disables
  int patience = 10;       // early-stop epochs without validation improvement
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  bool freeze_encoder = false;
  double pretrain_fraction = 1.0;  // fraction of training windows kept (pretrain only)
  int threads = default_thread_count();

  void validate() const;
  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
};

// Sum of squared errors over masked steps divided by the masked count.
// Throws if no mask bit is set.
template <class T>
double masked_mse(std::span<const T> predictions, std::span<const T> labels,
                  std::span<const char> mask);

// Adaptive moment estimation over the model's tensor list; moment state is
// kept per tensor in canonical order.
template <class T>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);

  // Applies one update. `skip_tensors` leading tensors are left untouched
  // (used by freeze_encoder).
  void step(ModelParams<T>& params, ModelParams<T>& grads, std::size_t skip_tensors = 0);

  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// Scales all gradients so the global L2 norm is at most max_norm (no-op when
// max_norm <= 0). Returns the pre-clip norm.
template <class T>
double clip_gradients(ModelParams<T>& grads, double max_norm);

// Standardization of training targets; predictions are mapped back through
// the inverse. Fixed at pretrain (or scratch-init) time and carried through
// fine-tuning so phases stay comparable.
struct LabelStats {
  double mean = 0.0;
  double sd = 1.0;
};

// Mean/sd over the labels of the chosen kind; identity stats when none exist.
LabelStats compute_label_stats(const Dataset& data, LabelKind kind);

// Serialized model: "FREE" magic, format version, length-prefixed metadata
// JSON (architecture, vocabulary, training provenance), then tensors as
// little-endian 32-bit floats in canonical order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta;
  ModelParams<float> params;
  Vocabulary vocab;
  FeatureStats feature_stats;  // passthrough encoder only
  LabelStats label_stats;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  std::uint64_t content_hash() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rmse = 0.0;  // NaN when no validation split
  double lr = 0.0;
  double wall_s = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  void write_jsonl(const std::filesystem::path& path) const;
};

// Phase 1: train encoder+LSTM end-to-end on simulated labels.
Checkpoint pretrain(const Dataset& data, const DescriptionSet& descriptions,
                    const Vocabulary& vocab, const ModelConfig& model, const TrainConfig& cfg,
                    TrainLog* log = nullptr);

// Phase 2: continue from `start` on sparse observed labels; optimizer state
// is reset at the phase boundary.
Checkpoint finetune(const Checkpoint& start, const Dataset& data,
                    const DescriptionSet& descriptions, const TrainConfig& cfg,
                    TrainLog* log = nullptr);

// Windowed inference (stride = window, zero initial state): one prediction
// per sample, aligned with Dataset::samples().
std::vector<double> predict(const Checkpoint& ckpt, const Dataset& data,
                            const DescriptionSet& descriptions, int threads = 1);

}  // namespace freeml
