#pragma once

#include <vector>

#include "aldmn/common.hpp"
#include "aldmn/tensor.hpp"

namespace aldmn {

// Two-layer scorer over per-fact interaction features, shared by all passes.
struct AttentionParams {
  Tensor W1, b1;  // [d_a x 2d], [d_a]
  Tensor W2, b2;  // [1 x d_a], [1]

  static AttentionParams init(int d, int d_a, double range, Rng& rng);
};

// facts: F tensors [B x d]; mask: row-major [B x F], nonzero marks a real
// fact. q_rows and m are [B x d]. Returns attention weights [B x F] with
// exactly zero mass on masked facts.
Tensor attention_gates(const std::vector<Tensor>& facts, const Tensor& q_rows,
                       const Tensor& m_prev, const AttentionParams& params,
                       const std::vector<uint8_t>& mask);

// c = sum_i alpha_i * e_i, batched: alpha [B x F].
Tensor context_vector(const Tensor& alpha, const std::vector<Tensor>& facts);

// m' = relu(W3 [m; c; q] + b3).
Tensor memory_update(const Tensor& m_prev, const Tensor& c, const Tensor& q_rows,
                     const Tensor& W3, const Tensor& b3);

struct EpisodeResult {
  Tensor memory;               // [B x d] after the final pass
  std::vector<Tensor> alphas;  // one [B x F] per pass, kept for inspection
};

// m_0 = q; each pass attends over the facts with the previous memory and
// applies the update. Attention parameters are shared across passes.
EpisodeResult run_episodes(const std::vector<Tensor>& facts, const std::vector<uint8_t>& mask,
                           const Tensor& q_rows, const AttentionParams& attn,
                           const Tensor& W3, const Tensor& b3, int t_mem);

}  // namespace aldmn
