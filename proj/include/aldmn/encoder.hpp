#pragma once

#include <vector>

#include "aldmn/common.hpp"
#include "aldmn/tensor.hpp"

namespace aldmn {

struct GRUCellParams {
  Tensor W_r, U_r, b_r;
  Tensor W_z, U_z, b_z;
  Tensor W_g, U_g, b_g;

  static GRUCellParams init(int d_h, int d_in, double range, Rng& rng);
};

// One bidirectional level of the pyramid. Levels above the first carry the
// pair-projection that halves the sequence before they run.
struct PyramidLayer {
  GRUCellParams fwd, bwd;
  Tensor W_pyr, b_pyr;  // undefined on layer 0
};

// r = sigmoid(W_r x + U_r g + b_r); z likewise; cand = tanh(W_g x + U_g (r*g) + b_g);
// g' = z*cand + (1-z)*g. x:[B x d_in], g_prev:[B x d_h].
Tensor gru_step(const GRUCellParams& cell, const Tensor& x, const Tensor& g_prev);

// Runs the cell across timesteps with per-step row masks ([B], 1=real token).
// Masked rows carry the previous state unchanged, so padding cannot alter any
// example's state. reverse=true walks right to left.
std::vector<Tensor> gru_sequence(const GRUCellParams& cell, const std::vector<Tensor>& xs,
                                 const std::vector<Tensor>& step_masks, bool reverse);

// Sum-combined bidirectional pass; outputs are zeroed at masked positions so
// downstream pairing sees exact zeros beyond each example's length.
std::vector<Tensor> bigru_layer(const GRUCellParams& fwd, const GRUCellParams& bwd,
                                const std::vector<Tensor>& xs,
                                const std::vector<Tensor>& step_masks);

// e_s = tanh(W_pyr [h_{2s}; h_{2s+1}]) + b_pyr, the bias applied outside the
// tanh; an odd tail pairs with a zero block. Output is zero-masked with
// next_masks (lengths halve: ceil(len/2)).
std::vector<Tensor> pyramid_reduce(const Tensor& W_pyr, const Tensor& b_pyr,
                                   const std::vector<Tensor>& hs,
                                   const std::vector<Tensor>& next_masks);

// ceil(len / 2^level) per example.
int reduced_length(int len, int level);

// Per-step [B] masks (1.0 while t < length) for a given level's lengths.
std::vector<Tensor> step_masks_for(const std::vector<int>& lengths, int steps);

struct EncodedUtterance {
  std::vector<Tensor> facts;     // top-level states, each [B x d]
  std::vector<int> fact_counts;  // per example: ceil(len / 2^(N-1)), 0 if len 0
  Tensor summary;                // [B x d], state at each example's last real fact
};

// Stacks N bidirectional levels with a pyramid reduction before each level
// above the first. embedded: per-timestep [B x d] inputs, already masked.
EncodedUtterance encode_utterance(const std::vector<PyramidLayer>& layers,
                                  const std::vector<Tensor>& embedded,
                                  const std::vector<int>& lengths);

// Unidirectional pass over per-utterance summaries, oldest first; counts mask
// away absent slots. Returned states are zeroed at absent slots.
std::vector<Tensor> encode_history(const GRUCellParams& cell,
                                   const std::vector<Tensor>& summaries,
                                   const std::vector<int>& counts);

}  // namespace aldmn
