#include "aldmn/model.hpp"

namespace aldmn {

ModelParams ModelParams::init(const ModelConfig& config, Tensor embedding, Rng& rng) {
  if (embedding.rank() != 2 || embedding.extent(0) != config.vocab_size ||
      embedding.extent(1) != config.d)
    throw std::invalid_argument("model init: embedding shape " + shape_str(embedding.shape()) +
                                " does not match vocab " + std::to_string(config.vocab_size) +
                                " x d " + std::to_string(config.d));
  if (config.n_classes < 2) throw DataError("model init: need at least 2 classes");
  if (config.pyramid_layers < 1) throw DataError("model init: pyramid_layers must be >= 1");

  ModelParams p;
  p.config = config;
  p.embedding = std::move(embedding);
  const int d = config.d;
  const double r = config.init_range;

  p.layers.resize(static_cast<size_t>(config.pyramid_layers));
  for (int l = 0; l < config.pyramid_layers; ++l) {
    p.layers[static_cast<size_t>(l)].fwd = GRUCellParams::init(d, d, r, rng);
    p.layers[static_cast<size_t>(l)].bwd = GRUCellParams::init(d, d, r, rng);
    if (l > 0) {
      p.layers[static_cast<size_t>(l)].W_pyr = Tensor::uniform({d, 2 * d}, -r, r, rng, true);
      p.layers[static_cast<size_t>(l)].b_pyr = Tensor::uniform({d}, -r, r, rng, true);
    }
  }
  p.history_cell = GRUCellParams::init(d, d, r, rng);
  p.q = Tensor::uniform({1, d}, -r, r, rng, true);
  p.attention = AttentionParams::init(d, config.d_a, r, rng);
  p.W3 = Tensor::uniform({d, 3 * d}, -r, r, rng, true);
  p.b3 = Tensor::uniform({d}, -r, r, rng, true);
  p.W4 = Tensor::uniform({config.n_classes, 2 * d}, -r, r, rng, true);
  p.b4 = Tensor::uniform({config.n_classes}, -r, r, rng, true);
  return p;
}

namespace {

void add_cell(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
              const GRUCellParams& c) {
  out.emplace_back(prefix + ".W_r", c.W_r);
  out.emplace_back(prefix + ".U_r", c.U_r);
  out.emplace_back(prefix + ".b_r", c.b_r);
  out.emplace_back(prefix + ".W_z", c.W_z);
  out.emplace_back(prefix + ".U_z", c.U_z);
  out.emplace_back(prefix + ".b_z", c.b_z);
  out.emplace_back(prefix + ".W_g", c.W_g);
  out.emplace_back(prefix + ".U_g", c.U_g);
  out.emplace_back(prefix + ".b_g", c.b_g);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding.table", embedding);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string base = "encoder.layer" + std::to_string(l);
    add_cell(out, base + ".fwd", layers[l].fwd);
    add_cell(out, base + ".bwd", layers[l].bwd);
    if (l > 0) {
      out.emplace_back(base + ".proj.W", layers[l].W_pyr);
      out.emplace_back(base + ".proj.b", layers[l].b_pyr);
    }
  }
  add_cell(out, "history", history_cell);
  out.emplace_back("question.q", q);
  out.emplace_back("attention.W1", attention.W1);
  out.emplace_back("attention.b1", attention.b1);
  out.emplace_back("attention.W2", attention.W2);
  out.emplace_back("attention.b2", attention.b2);
  out.emplace_back("memory.W3", W3);
  out.emplace_back("memory.b3", b3);
  out.emplace_back("classifier.W4", W4);
  out.emplace_back("classifier.b4", b4);
  return out;
}

namespace {

Tensor dup_tensor(const Tensor& t) {
  if (!t.defined()) return Tensor();
  return Tensor::from(t.shape(), t.values(), t.requires_grad());
}

GRUCellParams dup_cell(const GRUCellParams& c) {
  GRUCellParams n;
  n.W_r = dup_tensor(c.W_r);
  n.U_r = dup_tensor(c.U_r);
  n.b_r = dup_tensor(c.b_r);
  n.W_z = dup_tensor(c.W_z);
  n.U_z = dup_tensor(c.U_z);
  n.b_z = dup_tensor(c.b_z);
  n.W_g = dup_tensor(c.W_g);
  n.U_g = dup_tensor(c.U_g);
  n.b_g = dup_tensor(c.b_g);
  return n;
}

}  // namespace

ModelParams ModelParams::clone_values() const {
  ModelParams copy = *this;
  copy.embedding = dup_tensor(embedding);
  for (size_t l = 0; l < copy.layers.size(); ++l) {
    copy.layers[l].fwd = dup_cell(layers[l].fwd);
    copy.layers[l].bwd = dup_cell(layers[l].bwd);
    copy.layers[l].W_pyr = dup_tensor(layers[l].W_pyr);
    copy.layers[l].b_pyr = dup_tensor(layers[l].b_pyr);
  }
  copy.history_cell = dup_cell(history_cell);
  copy.q = dup_tensor(q);
  copy.attention.W1 = dup_tensor(attention.W1);
  copy.attention.b1 = dup_tensor(attention.b1);
  copy.attention.W2 = dup_tensor(attention.W2);
  copy.attention.b2 = dup_tensor(attention.b2);
  copy.W3 = dup_tensor(W3);
  copy.b3 = dup_tensor(b3);
  copy.W4 = dup_tensor(W4);
  copy.b4 = dup_tensor(b4);
  return copy;
}

void ModelParams::load_values(const ModelParams& from) {
  auto mine = named_tensors();
  auto theirs = from.named_tensors();
  if (mine.size() != theirs.size())
    throw std::invalid_argument("load_values: parameter registries differ");
  for (size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].first != theirs[i].first || mine[i].second.shape() != theirs[i].second.shape())
      throw std::invalid_argument("load_values: mismatch at " + mine[i].first);
    mine[i].second.values() = theirs[i].second.values();
  }
}

namespace {

// Gather one timestep column of token ids.
std::vector<int> ids_at(const std::vector<int>& table, int rows, int stride, int offset) {
  std::vector<int> ids(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) ids[static_cast<size_t>(i)] = table[static_cast<size_t>(i) * stride + offset];
  return ids;
}

}  // namespace

ForwardResult model_forward(const ModelParams& params, const Batch& batch,
                            const ForwardOptions& options) {
  const ModelConfig& cfg = params.config;
  const int B = batch.size;
  const int L = batch.max_len;
  const int H = batch.max_hist;
  if (B < 1) throw DataError("model_forward: empty batch");
  const bool use_dropout = options.training && cfg.dropout > 0.0;
  if (use_dropout && options.rng == nullptr)
    throw std::invalid_argument("model_forward: dropout requires an rng");
  const InputPerturbation* pert = options.perturbation;
  if (pert && (pert->current.size() != static_cast<size_t>(L) ||
               pert->history.size() != static_cast<size_t>(H)))
    throw std::invalid_argument("model_forward: perturbation layout mismatch");

  ForwardResult res;

  // Embed one utterance grid: lookups, optional perturbation, pad masking,
  // then dropout at the first encoder layer's inputs.
  auto embed_positions = [&](const std::vector<int>& grid, int stride, int base,
                             const std::vector<int>& lengths,
                             const std::vector<Tensor>* pert_row,
                             std::vector<Tensor>& raw_out) {
    auto masks = step_masks_for(lengths, L);
    std::vector<Tensor> used(static_cast<size_t>(L));
    for (int t = 0; t < L; ++t) {
      Tensor emb = embedding_rows(params.embedding, ids_at(grid, B, stride, base + t));
      raw_out.push_back(emb);
      Tensor x = emb;
      if (pert_row && (*pert_row)[static_cast<size_t>(t)].defined())
        x = add(x, (*pert_row)[static_cast<size_t>(t)]);
      x = rowwise_scale(x, masks[static_cast<size_t>(t)]);
      if (use_dropout) x = dropout(x, cfg.dropout, *options.rng);
      used[static_cast<size_t>(t)] = x;
    }
    return used;
  };

  auto current_inputs =
      embed_positions(batch.current, L, 0, batch.lengths,
                      pert ? &pert->current : nullptr, res.current_emb);
  EncodedUtterance current = encode_utterance(params.layers, current_inputs, batch.lengths);

  std::vector<Tensor> history_facts;
  if (H > 0) {
    std::vector<Tensor> summaries(static_cast<size_t>(H));
    res.history_emb.resize(static_cast<size_t>(H));
    for (int j = 0; j < H; ++j) {
      std::vector<int> hlen(static_cast<size_t>(B));
      for (int i = 0; i < B; ++i)
        hlen[static_cast<size_t>(i)] = batch.history_lengths[static_cast<size_t>(i) * H + j];
      auto inputs = embed_positions(batch.history, H * L, j * L, hlen,
                                    pert ? &pert->history[static_cast<size_t>(j)] : nullptr,
                                    res.history_emb[static_cast<size_t>(j)]);
      summaries[static_cast<size_t>(j)] = encode_utterance(params.layers, inputs, hlen).summary;
    }
    history_facts = encode_history(params.history_cell, summaries, batch.history_counts);
  }

  // Fact order: utterance facts first, then history states oldest-first.
  std::vector<Tensor> facts = current.facts;
  facts.insert(facts.end(), history_facts.begin(), history_facts.end());
  const int F = static_cast<int>(facts.size());
  res.n_utterance_facts = static_cast<int>(current.facts.size());

  res.fact_mask.assign(static_cast<size_t>(B) * F, 0);
  for (int i = 0; i < B; ++i) {
    for (int t = 0; t < res.n_utterance_facts; ++t)
      if (t < current.fact_counts[static_cast<size_t>(i)])
        res.fact_mask[static_cast<size_t>(i) * F + t] = 1;
    for (int j = 0; j < H; ++j)
      if (j < batch.history_counts[static_cast<size_t>(i)])
        res.fact_mask[static_cast<size_t>(i) * F + res.n_utterance_facts + j] = 1;
  }

  Tensor q_rows = broadcast_rows(params.q, B);
  EpisodeResult episodes = run_episodes(facts, res.fact_mask, q_rows, params.attention,
                                        params.W3, params.b3, cfg.t_mem);
  if (options.keep_attention) res.alphas = episodes.alphas;

  Tensor head_in = concat({q_rows, episodes.memory}, 1);
  if (use_dropout) head_in = dropout(head_in, cfg.dropout, *options.rng);
  res.probs = softmax(linear(head_in, params.W4, params.b4), 1);

  if (!batch.labels.empty()) res.loss = nll_loss(res.probs, batch.labels);
  return res;
}

std::vector<int> predict_batch(const ModelParams& params, const Batch& batch) {
  NoGradGuard ng;
  Batch unlabeled = batch;
  unlabeled.labels.clear();
  ForwardResult fr = model_forward(params, unlabeled, {});
  std::vector<int> out(static_cast<size_t>(batch.size));
  const int C = fr.probs.extent(1);
  for (int i = 0; i < batch.size; ++i) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (fr.probs.at(i, c) > fr.probs.at(i, best)) best = c;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace aldmn
