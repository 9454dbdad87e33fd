#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "aldmn/model.hpp"

namespace aldmn {

struct TrainConfig {
  int batch_size = 128;
  double lr = 0.01;
  int epochs = 45;
  int patience = 5;
  int t_mem = 3;
  int d = 200;
  int d_a = -1;  // -1 mirrors d
  double dropout = 0.2;
  double epsilon = 3.0;  // 0 disables the adversarial pass
  int pyramid_layers = 2;
  int history_window = 5;  // -1 keeps the whole conversation prefix
  int min_count = 2;
  double init_range = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  double adv_weight = 1.0;

  // Gradient scaling of the summed objective: "mean" divides by batch size
  // before the update, "sum" applies it raw. Reports always carry the sum.
  std::string loss_reduction = "mean";
  // "minus" descends the log-likelihood (worst case); "plus" is the mirrored
  // variant kept selectable for comparison.
  std::string adv_sign = "minus";
  int max_tokens = 118;
  double valid_fraction = 0.1;
  bool trainable_embeddings = true;

  int attention_width() const { return d_a < 0 ? d : d_a; }
  ModelConfig model_config(int vocab_size, int n_classes) const;
  void validate() const;

  // Flat JSON object of exactly these fields; unknown keys are rejected so a
  // typo cannot silently fall back to a default.
  static TrainConfig from_json(const std::string& text);
  static TrainConfig from_json_file(const std::string& path);
  std::string to_json() const;
};

class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, double lr, double beta1,
       double beta2, double eps);

  void zero_grad();
  void step();
  size_t param_count() const { return slots_.size(); }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

// Patience counter over validation losses, strict-improvement semantics.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Feed one epoch's validation loss; true means training should stop.
  bool update(double valid_loss);
  int best_epoch() const { return best_epoch_; }  // 1-based
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_loss_ = 0.0;
};

// Worst-case additive perturbation built from the embedded-input gradients
// left by a backward pass: per example, over all its real token positions
// jointly, r = sign * epsilon * g / ||g||_2 (zero where the gradient is zero
// and at padding). The tensors are untracked; nothing differentiates through
// the construction.
InputPerturbation adversarial_perturbation(const ForwardResult& clean, const Batch& batch,
                                           double epsilon, const std::string& adv_sign);

struct StepReport {
  double clean_loss = 0.0;  // summed over the batch
  double adv_loss = 0.0;    // summed; 0 when the pass is disabled
  double accuracy = 0.0;
  int examples = 0;
};

// One optimization step: clean pass, perturbation, perturbed pass, update.
StepReport train_step(ModelParams& model, Adam& adam, const Batch& batch,
                      const TrainConfig& config, Rng& rng);

struct EpochRow {
  int epoch = 0;
  double clean_loss = 0.0;      // per-example means over the epoch
  double adv_loss = 0.0;
  double valid_loss = 0.0;
  double valid_accuracy = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRow> log;
  int best_epoch = 0;
  double best_valid_loss = 0.0;
  bool stopped_early = false;
};

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochRow& row);

// Mean validation loss and accuracy under evaluation-mode forwards.
std::pair<double, double> validate_model(const ModelParams& model, const Corpus& valid,
                                         const Vocabulary& vocab, const TrainConfig& config);

// Epoch loop with patience-based stopping; the model ends at the best
// validation loss unless stop_now ended training first (then it keeps the
// weights that triggered the stop). stop_now, when given, is polled after
// each epoch with the fresh log row.
FitResult fit(ModelParams& model, const Corpus& train, const Corpus& valid,
              const Vocabulary& vocab, const TrainConfig& config,
              std::ostream* log_stream = nullptr,
              const std::function<bool(const EpochRow&)>& stop_now = nullptr);

}  // namespace aldmn
