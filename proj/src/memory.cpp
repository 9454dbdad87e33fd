#include "aldmn/memory.hpp"

namespace aldmn {

AttentionParams AttentionParams::init(int d, int d_a, double range, Rng& rng) {
  AttentionParams p;
  p.W1 = Tensor::uniform({d_a, 2 * d}, -range, range, rng, true);
  p.b1 = Tensor::uniform({d_a}, -range, range, rng, true);
  p.W2 = Tensor::uniform({1, d_a}, -range, range, rng, true);
  p.b2 = Tensor::uniform({1}, -range, range, rng, true);
  return p;
}

Tensor attention_gates(const std::vector<Tensor>& facts, const Tensor& q_rows,
                       const Tensor& m_prev, const AttentionParams& params,
                       const std::vector<uint8_t>& mask) {
  if (facts.empty()) throw DataError("attention_gates: no facts");
  std::vector<Tensor> scores;
  scores.reserve(facts.size());
  for (const Tensor& e : facts) {
    // z = [e*q ; e*m], the elementwise-interaction feature pair
    Tensor z = concat({mul(e, q_rows), mul(e, m_prev)}, 1);
    scores.push_back(linear(tanh_op(linear(z, params.W1, params.b1)), params.W2, params.b2));
  }
  Tensor beta = concat(scores, 1);  // [B x F]
  return masked_softmax(beta, mask);
}

Tensor context_vector(const Tensor& alpha, const std::vector<Tensor>& facts) {
  Tensor c = rowwise_scale(facts[0], column(alpha, 0));
  for (size_t f = 1; f < facts.size(); ++f)
    c = add(c, rowwise_scale(facts[f], column(alpha, static_cast<int>(f))));
  return c;
}

Tensor memory_update(const Tensor& m_prev, const Tensor& c, const Tensor& q_rows,
                     const Tensor& W3, const Tensor& b3) {
  return relu(linear(concat({m_prev, c, q_rows}, 1), W3, b3));
}

EpisodeResult run_episodes(const std::vector<Tensor>& facts, const std::vector<uint8_t>& mask,
                           const Tensor& q_rows, const AttentionParams& attn,
                           const Tensor& W3, const Tensor& b3, int t_mem) {
  if (t_mem < 1) throw std::invalid_argument("run_episodes: t_mem must be >= 1");
  EpisodeResult out;
  Tensor m = q_rows;
  for (int pass = 0; pass < t_mem; ++pass) {
    Tensor alpha = attention_gates(facts, q_rows, m, attn, mask);
    Tensor c = context_vector(alpha, facts);
    m = memory_update(m, c, q_rows, W3, b3);
    out.alphas.push_back(alpha);
  }
  out.memory = m;
  return out;
}

}  // namespace aldmn
