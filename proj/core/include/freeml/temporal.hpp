#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freeml/date.hpp"
#include "freeml/tensor.hpp"

namespace freeml {

// Single-layer LSTM over daily embeddings with an affine regression head.
// Gate order in the packed 4H dimension: input, forget, cell, output.
template <class T>
struct LstmParams {
  Mat<T> w_input;  // D x 4H
  Mat<T> w_recur;  // H x 4H
  Vec<T> bias;     // 4H; forget-gate block initialized to 1
  Vec<T> head_w;   // H
  T head_b = T(0);

  static LstmParams init(int input_dim, int hidden, std::uint64_t seed);
  static LstmParams zeros_like(int input_dim, int hidden);

  int input_dim() const { return static_cast<int>(w_input.rows()); }
  int hidden() const { return static_cast<int>(w_recur.rows()); }

  void for_each_tensor(const TensorVisitor<T>& visit);
};

// One site's W consecutive daily steps.
template <class T>
struct Window {
  std::string site_id;
  Date start;
  Mat<T> embeddings;       // W x D
  std::vector<T> labels;   // size W; meaningful only where mask is true
  std::vector<char> mask;  // true exactly where a label exists

  int length() const { return static_cast<int>(embeddings.rows()); }
  void validate() const;
};

// Per-step activations kept for backpropagation through time.
template <class T>
struct LstmCache {
  Mat<T> gate_i, gate_f, gate_g, gate_o;  // W x H each
  Mat<T> cell, tanh_cell, hidden;
};

// Zero initial hidden/cell state; one prediction per step.
template <class T>
Vec<T> lstm_forward(const Mat<T>& embeddings, const LstmParams<T>& params,
                    LstmCache<T>* cache = nullptr);

template <class T>
Vec<T> forward(const Window<T>& window, const LstmParams<T>& params);

// Exact BPTT. Accumulates parameter gradients into `grads` and returns the
// gradient w.r.t. the input embeddings (W x D), ready to chain into
// encode_backward.
template <class T>
Mat<T> lstm_backward(const Mat<T>& embeddings, const LstmParams<T>& params,
                     const LstmCache<T>& cache, const Vec<T>& upstream, LstmParams<T>& grads);

}  // namespace freeml
