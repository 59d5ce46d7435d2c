#pragma once

#include <cstdint>

namespace freeml {

// Central finite differences against the analytic backward passes, at 64-bit
// precision on small configurations.
struct GradCheckReport {
  double encoder_max_rel = 0.0;    // all encoder tensors
  double lstm_max_rel = 0.0;       // all LSTM tensors
  double embedding_max_rel = 0.0;  // gradients w.r.t. LSTM input embeddings
  double seconds = 0.0;

  double worst() const;
  bool pass(double tolerance = 1e-4) const { return worst() < tolerance; }
};

GradCheckReport run_gradcheck(std::uint64_t base_seed, int n_seeds = 5);

}  // namespace freeml
