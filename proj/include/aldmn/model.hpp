#pragma once

#include <string>
#include <utility>
#include <vector>

#include "aldmn/corpus.hpp"
#include "aldmn/encoder.hpp"
#include "aldmn/memory.hpp"

namespace aldmn {

struct ModelConfig {
  int vocab_size = 0;
  int n_classes = 0;
  int d = 200;
  int d_a = 200;
  int pyramid_layers = 2;
  int t_mem = 3;
  double dropout = 0.2;
  double init_range = 0.1;
  bool trainable_embeddings = true;
};

struct ModelParams {
  ModelConfig config;

  Tensor embedding;                  // [V x d]
  std::vector<PyramidLayer> layers;  // pyramid_layers entries
  GRUCellParams history_cell;
  Tensor q;                          // [1 x d]
  AttentionParams attention;
  Tensor W3, b3;                     // memory update
  Tensor W4, b4;                     // classifier

  // Fresh random parameters; the embedding table is supplied separately so
  // pretrained vectors can be plugged in.
  static ModelParams init(const ModelConfig& config, Tensor embedding, Rng& rng);

  // Stable name -> tensor registry: optimizer state, checkpoints, and the
  // gradient check all key off these names.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

  ModelParams clone_values() const;           // deep copy, gradients dropped
  void load_values(const ModelParams& from);  // copy values into this model
};

// Additive perturbations on the embedded inputs, one [B x d] tensor per token
// position, same layout as the embeddings the forward pass gathers. Absent
// tensors mean zero. Tensors may require grad (the gradient check drives the
// input gradients through them).
struct InputPerturbation {
  std::vector<Tensor> current;               // max_len entries
  std::vector<std::vector<Tensor>> history;  // max_hist x max_len
};

struct ForwardOptions {
  bool training = false;            // enables dropout
  Rng* rng = nullptr;               // required when training and dropout > 0
  const InputPerturbation* perturbation = nullptr;
  bool keep_attention = false;      // retain per-pass attention weights
};

struct ForwardResult {
  Tensor probs;  // [B x n_classes]
  Tensor loss;   // rank-0 nll sum over the batch; undefined without labels

  // Embedded inputs (embedding_rows outputs), exposed so the adversarial
  // construction can read their gradients after backward().
  std::vector<Tensor> current_emb;
  std::vector<std::vector<Tensor>> history_emb;

  std::vector<Tensor> alphas;      // per pass [B x F], when keep_attention
  std::vector<uint8_t> fact_mask;  // [B x F]
  int n_utterance_facts = 0;       // fact order: utterance facts, then history
};

ForwardResult model_forward(const ModelParams& params, const Batch& batch,
                            const ForwardOptions& options);

// Argmax class ids, no gradient tracking.
std::vector<int> predict_batch(const ModelParams& params, const Batch& batch);

}  // namespace aldmn
