#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "freeml/tensor.hpp"

namespace freeml {

// Token ids are dense 0..V-1 with fixed reserved slots. Built only from
// training-split descriptions; unseen tokens map to <unk> at tokenize time.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;

  static Vocabulary build(std::span<const std::string> texts);

  int id_of(std::string_view token) const;
  int size() const { return size_; }

  nlohmann::json to_json() const;  // {token: id}
  static Vocabulary from_json(const nlohmann::json& j);
  std::uint64_t content_hash() const;

 private:
  std::map<std::string, int, std::less<>> ids_;
  int size_ = 3;
};

// Raw surface tokens: lowercased words, with digits and punctuation split
// into per-character tokens.
std::vector<std::string> tokenize_text(std::string_view text);

// <bos> + vocabulary ids, truncated to max_len. Empty text is an error.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab, int max_len);

struct EncoderConfig {
  int vocab_size = 0;
  int dim = 64;            // D
  int layers = 2;          // L
  int heads = 4;           // H
  int ffn_dim = 128;       // F
  int max_positions = 256; // P

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <class T>
struct EncoderBlock {
  Vec<T> ln1_gain, ln1_bias;
  Mat<T> wq, wk, wv, wo;   // D x D
  Vec<T> bq, bk, bv, bo;
  Vec<T> ln2_gain, ln2_bias;
  Mat<T> w1;               // D x F
  Vec<T> b1;
  Mat<T> w2;               // F x D
  Vec<T> b2;
};

// Pre-LN transformer encoder with learned positions and mean pooling over
// non-pad positions. No final layer norm: with all block weights zero the
// output is exactly token embedding + position embedding.
template <class T>
struct EncoderParams {
  EncoderConfig cfg;
  Mat<T> token_emb;  // V x D
  Mat<T> pos_emb;    // P x D
  std::vector<EncoderBlock<T>> blocks;

  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);
  static EncoderParams zeros_like(const EncoderConfig& cfg);

  void for_each_tensor(const TensorVisitor<T>& visit);
  void for_each_tensor_const(const TensorVisitor<const T>& visit) const;
  std::size_t parameter_count() const;
};

// Forward activations kept for the backward pass.
template <class T>
struct EncoderWorkspace {
  struct BlockCache {
    Mat<T> x_in;
    Mat<T> ln1_hat;
    Vec<T> ln1_inv;
    Mat<T> q, k, v;
    std::vector<Mat<T>> attn_w;  // one S x S matrix per head
    Mat<T> attn_concat;
    Mat<T> x_mid;
    Mat<T> ln2_hat;
    Vec<T> ln2_inv;
    Mat<T> u, act;
  };
  std::vector<int> tokens;
  std::vector<char> nonpad;
  int nonpad_count = 0;
  std::vector<BlockCache> blocks;
  Mat<T> h_final;
  Vec<T> pooled;
};

// e = mean over non-pad positions of the final hidden states. The workspace
// overload retains activations for encode_backward.
template <class T>
const Vec<T>& encode(std::span<const int> tokens, const EncoderParams<T>& params,
                     EncoderWorkspace<T>& ws);

template <class T>
Vec<T> encode(std::span<const int> tokens, const EncoderParams<T>& params);

// Gradients of (upstream . pooled_output) w.r.t. every encoder tensor,
// accumulated into `grads` (vocabulary rows the input never touches stay
// as they were).
template <class T>
void encode_backward(const EncoderWorkspace<T>& ws, const EncoderParams<T>& params,
                     const Vec<T>& upstream, EncoderParams<T>& grads);

// Convenience overload; recomputes the forward pass internally.
template <class T>
void encode_backward(std::span<const int> tokens, const EncoderParams<T>& params,
                     const Vec<T>& upstream, EncoderParams<T>& grads);

using EncoderParamsF = EncoderParams<float>;
using EncoderParamsD = EncoderParams<double>;

}  // namespace freeml
