#include "aldmn/encoder.hpp"

namespace aldmn {

GRUCellParams GRUCellParams::init(int d_h, int d_in, double range, Rng& rng) {
  GRUCellParams c;
  auto mat = [&](int rows, int cols) {
    return Tensor::uniform({rows, cols}, -range, range, rng, /*requires_grad=*/true);
  };
  auto vec = [&](int n) { return Tensor::uniform({n}, -range, range, rng, true); };
  c.W_r = mat(d_h, d_in);
  c.U_r = mat(d_h, d_h);
  c.b_r = vec(d_h);
  c.W_z = mat(d_h, d_in);
  c.U_z = mat(d_h, d_h);
  c.b_z = vec(d_h);
  c.W_g = mat(d_h, d_in);
  c.U_g = mat(d_h, d_h);
  c.b_g = vec(d_h);
  return c;
}

Tensor gru_step(const GRUCellParams& cell, const Tensor& x, const Tensor& g_prev) {
  Tensor r = sigmoid(add(add(linear(x, cell.W_r), linear(g_prev, cell.U_r)), cell.b_r));
  Tensor z = sigmoid(add(add(linear(x, cell.W_z), linear(g_prev, cell.U_z)), cell.b_z));
  Tensor cand =
      tanh_op(add(add(linear(x, cell.W_g), linear(mul(r, g_prev), cell.U_g)), cell.b_g));
  // z*cand + (1-z)*g_prev, written without a ones tensor
  return add(mul(z, cand), sub(g_prev, mul(z, g_prev)));
}

std::vector<Tensor> gru_sequence(const GRUCellParams& cell, const std::vector<Tensor>& xs,
                                 const std::vector<Tensor>& step_masks, bool reverse) {
  if (xs.empty()) return {};
  const int T = static_cast<int>(xs.size());
  const int B = xs[0].extent(0);
  const int d_h = cell.U_r.extent(0);
  std::vector<Tensor> states(static_cast<size_t>(T));
  Tensor h = Tensor::zeros({B, d_h});
  for (int step = 0; step < T; ++step) {
    const int t = reverse ? T - 1 - step : step;
    Tensor h_new = gru_step(cell, xs[static_cast<size_t>(t)], h);
    const Tensor& m = step_masks[static_cast<size_t>(t)];
    // carry: masked rows keep h, real rows take h_new
    h = add(rowwise_scale(h_new, m), sub(h, rowwise_scale(h, m)));
    states[static_cast<size_t>(t)] = h;
  }
  return states;
}

std::vector<Tensor> bigru_layer(const GRUCellParams& fwd, const GRUCellParams& bwd,
                                const std::vector<Tensor>& xs,
                                const std::vector<Tensor>& step_masks) {
  auto forward = gru_sequence(fwd, xs, step_masks, false);
  auto backward = gru_sequence(bwd, xs, step_masks, true);
  std::vector<Tensor> combined(xs.size());
  for (size_t t = 0; t < xs.size(); ++t)
    combined[t] = rowwise_scale(add(forward[t], backward[t]), step_masks[t]);
  return combined;
}

std::vector<Tensor> pyramid_reduce(const Tensor& W_pyr, const Tensor& b_pyr,
                                   const std::vector<Tensor>& hs,
                                   const std::vector<Tensor>& next_masks) {
  const int T = static_cast<int>(hs.size());
  const int B = hs[0].extent(0);
  const int d = hs[0].extent(1);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>((T + 1) / 2));
  for (int s = 0; 2 * s < T; ++s) {
    Tensor right = (2 * s + 1 < T) ? hs[static_cast<size_t>(2 * s + 1)] : Tensor::zeros({B, d});
    Tensor pair = concat({hs[static_cast<size_t>(2 * s)], right}, 1);
    Tensor e = add(tanh_op(linear(pair, W_pyr)), b_pyr);
    out.push_back(rowwise_scale(e, next_masks[static_cast<size_t>(s)]));
  }
  return out;
}

int reduced_length(int len, int level) {
  for (int i = 0; i < level; ++i) len = (len + 1) / 2;
  return len;
}

std::vector<Tensor> step_masks_for(const std::vector<int>& lengths, int steps) {
  const int B = static_cast<int>(lengths.size());
  std::vector<Tensor> masks(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    Tensor m = Tensor::zeros({B});
    for (int i = 0; i < B; ++i)
      if (t < lengths[static_cast<size_t>(i)]) m.values()[static_cast<size_t>(i)] = 1.0;
    masks[static_cast<size_t>(t)] = m;
  }
  return masks;
}

EncodedUtterance encode_utterance(const std::vector<PyramidLayer>& layers,
                                  const std::vector<Tensor>& embedded,
                                  const std::vector<int>& lengths) {
  std::vector<Tensor> states = embedded;
  std::vector<int> cur_lengths = lengths;
  for (size_t level = 0; level < layers.size(); ++level) {
    if (level > 0) {
      for (int& l : cur_lengths) l = (l + 1) / 2;
      auto next_masks = step_masks_for(cur_lengths, (static_cast<int>(states.size()) + 1) / 2);
      states = pyramid_reduce(layers[level].W_pyr, layers[level].b_pyr, states, next_masks);
    }
    auto masks = step_masks_for(cur_lengths, static_cast<int>(states.size()));
    states = bigru_layer(layers[level].fwd, layers[level].bwd, states, masks);
  }

  EncodedUtterance enc;
  enc.facts = states;
  enc.fact_counts = cur_lengths;

  // summary = state at index fact_count-1; all-pad inputs give a zero summary
  const int B = static_cast<int>(lengths.size());
  const int d = states[0].extent(1);
  Tensor summary = Tensor::zeros({B, d});
  bool first = true;
  for (int t = 0; t < static_cast<int>(states.size()); ++t) {
    Tensor pick = Tensor::zeros({B});
    bool any = false;
    for (int i = 0; i < B; ++i)
      if (cur_lengths[static_cast<size_t>(i)] - 1 == t) {
        pick.values()[static_cast<size_t>(i)] = 1.0;
        any = true;
      }
    if (!any) continue;
    Tensor picked = rowwise_scale(states[static_cast<size_t>(t)], pick);
    summary = first ? picked : add(summary, picked);
    first = false;
  }
  enc.summary = summary;
  return enc;
}

std::vector<Tensor> encode_history(const GRUCellParams& cell,
                                   const std::vector<Tensor>& summaries,
                                   const std::vector<int>& counts) {
  auto masks = step_masks_for(counts, static_cast<int>(summaries.size()));
  auto states = gru_sequence(cell, summaries, masks, false);
  for (size_t j = 0; j < states.size(); ++j)
    states[j] = rowwise_scale(states[j], masks[j]);
  return states;
}

}  // namespace aldmn
