#include "aldmn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

namespace aldmn {

ModelConfig TrainConfig::model_config(int vocab_size, int n_classes) const {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.n_classes = n_classes;
  mc.d = d;
  mc.d_a = attention_width();
  mc.pyramid_layers = pyramid_layers;
  mc.t_mem = t_mem;
  mc.dropout = dropout;
  mc.init_range = init_range;
  mc.trainable_embeddings = trainable_embeddings;
  return mc;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw DataError("config: " + what); };
  if (batch_size < 1) fail("batch_size must be positive");
  if (lr <= 0) fail("lr must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (patience < 1) fail("patience must be positive");
  if (t_mem < 1) fail("t_mem must be positive");
  if (d < 1) fail("d must be positive");
  if (dropout < 0 || dropout >= 1) fail("dropout must lie in [0, 1)");
  if (epsilon < 0) fail("epsilon must be nonnegative");
  if (pyramid_layers < 1) fail("pyramid_layers must be positive");
  if (history_window < -1) fail("history_window must be -1 (unlimited) or >= 0");
  if (min_count < 1) fail("min_count must be positive");
  if (init_range <= 0) fail("init_range must be positive");
  if (adam_beta1 <= 0 || adam_beta1 >= 1) fail("adam_beta1 must lie in (0, 1)");
  if (adam_beta2 <= 0 || adam_beta2 >= 1) fail("adam_beta2 must lie in (0, 1)");
  if (adam_eps <= 0) fail("adam_eps must be positive");
  if (adv_weight < 0) fail("adv_weight must be nonnegative");
  if (loss_reduction != "mean" && loss_reduction != "sum")
    fail("loss_reduction must be 'mean' or 'sum'");
  if (adv_sign != "minus" && adv_sign != "plus") fail("adv_sign must be 'minus' or 'plus'");
  if (max_tokens < 1) fail("max_tokens must be positive");
  if (valid_fraction < 0 || valid_fraction >= 1) fail("valid_fraction must lie in [0, 1)");
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("config: top level must be a JSON object");

  TrainConfig c;
  std::set<std::string> known;
  auto read = [&](const char* key, auto& field) {
    known.insert(key);
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      throw DataError(std::string("config: bad value for '") + key + "'");
    }
  };
  read("batch_size", c.batch_size);
  read("lr", c.lr);
  read("epochs", c.epochs);
  read("patience", c.patience);
  read("t_mem", c.t_mem);
  read("d", c.d);
  read("d_a", c.d_a);
  read("dropout", c.dropout);
  read("epsilon", c.epsilon);
  read("pyramid_layers", c.pyramid_layers);
  read("history_window", c.history_window);
  read("min_count", c.min_count);
  read("init_range", c.init_range);
  read("adam_beta1", c.adam_beta1);
  read("adam_beta2", c.adam_beta2);
  read("adam_eps", c.adam_eps);
  read("seed", c.seed);
  read("adv_weight", c.adv_weight);
  read("loss_reduction", c.loss_reduction);
  read("adv_sign", c.adv_sign);
  read("max_tokens", c.max_tokens);
  read("valid_fraction", c.valid_fraction);
  read("trainable_embeddings", c.trainable_embeddings);

  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw DataError("config: unknown key '" + key + "'");
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["patience"] = patience;
  j["t_mem"] = t_mem;
  j["d"] = d;
  j["d_a"] = d_a;
  j["dropout"] = dropout;
  j["epsilon"] = epsilon;
  j["pyramid_layers"] = pyramid_layers;
  j["history_window"] = history_window;
  j["min_count"] = min_count;
  j["init_range"] = init_range;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["seed"] = seed;
  j["adv_weight"] = adv_weight;
  j["loss_reduction"] = loss_reduction;
  j["adv_sign"] = adv_sign;
  j["max_tokens"] = max_tokens;
  j["valid_fraction"] = valid_fraction;
  j["trainable_embeddings"] = trainable_embeddings;
  return j.dump(2);
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double lr, double beta1,
           double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, t] : params) {
    if (!t.defined() || !t.requires_grad()) continue;
    Slot s;
    s.name = name;
    s.param = t;
    s.m.assign(t.values().size(), 0.0);
    s.v.assign(t.values().size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto& val = s.param.values();
    const auto& g = s.param.grad();
    for (size_t i = 0; i < val.size(); ++i) {
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

bool EarlyStopping::update(double valid_loss) {
  ++epoch_;
  if (best_epoch_ == 0 || valid_loss < best_loss_) {
    best_loss_ = valid_loss;
    best_epoch_ = epoch_;
    stale_ = 0;
    return false;
  }
  ++stale_;
  return stale_ >= patience_;
}

InputPerturbation adversarial_perturbation(const ForwardResult& clean, const Batch& batch,
                                           double epsilon, const std::string& adv_sign) {
  const int B = batch.size;
  const int L = batch.max_len;
  const int H = batch.max_hist;
  const int d = clean.current_emb.empty() ? 0 : clean.current_emb[0].extent(1);

  // The recorded gradient is of the negative log-likelihood, i.e. the
  // negation of the log-likelihood gradient the construction is defined on.
  // Descending the likelihood therefore means following this gradient.
  const double sign = adv_sign == "plus" ? -1.0 : 1.0;

  std::vector<double> norms(static_cast<size_t>(B), 0.0);
  auto accumulate = [&](const Tensor& emb, int i) {
    const auto& g = emb.grad();
    double acc = 0.0;
    for (int k = 0; k < d; ++k) acc += g[static_cast<size_t>(i) * d + k] * g[static_cast<size_t>(i) * d + k];
    return acc;
  };
  for (int i = 0; i < B; ++i) {
    double acc = 0.0;
    for (int t = 0; t < batch.lengths[static_cast<size_t>(i)]; ++t)
      acc += accumulate(clean.current_emb[static_cast<size_t>(t)], i);
    for (int j = 0; j < batch.history_counts[static_cast<size_t>(i)]; ++j)
      for (int t = 0; t < batch.history_lengths[static_cast<size_t>(i) * H + j]; ++t)
        acc += accumulate(clean.history_emb[static_cast<size_t>(j)][static_cast<size_t>(t)], i);
    norms[static_cast<size_t>(i)] = std::sqrt(acc);
  }

  InputPerturbation pert;
  auto build = [&](const Tensor& emb, int t, const std::function<bool(int)>& real) {
    Tensor r = Tensor::zeros({B, d});
    bool any = false;
    const auto& g = emb.grad();
    for (int i = 0; i < B; ++i) {
      if (!real(i) || norms[static_cast<size_t>(i)] == 0.0) continue;
      const double f = sign * epsilon / norms[static_cast<size_t>(i)];
      for (int k = 0; k < d; ++k) {
        const double v = f * g[static_cast<size_t>(i) * d + k];
        r.values()[static_cast<size_t>(i) * d + k] = v;
        any |= v != 0.0;
      }
    }
    (void)t;
    return any ? r : Tensor();  // undefined tensors skip the add entirely
  };

  pert.current.resize(static_cast<size_t>(L));
  for (int t = 0; t < L; ++t)
    pert.current[static_cast<size_t>(t)] =
        build(clean.current_emb[static_cast<size_t>(t)], t,
              [&](int i) { return t < batch.lengths[static_cast<size_t>(i)]; });
  pert.history.resize(static_cast<size_t>(H));
  for (int j = 0; j < H; ++j) {
    pert.history[static_cast<size_t>(j)].resize(static_cast<size_t>(L));
    for (int t = 0; t < L; ++t)
      pert.history[static_cast<size_t>(j)][static_cast<size_t>(t)] =
          build(clean.history_emb[static_cast<size_t>(j)][static_cast<size_t>(t)], t, [&](int i) {
            return j < batch.history_counts[static_cast<size_t>(i)] &&
                   t < batch.history_lengths[static_cast<size_t>(i) * H + j];
          });
  }
  return pert;
}

namespace {

double batch_accuracy(const Tensor& probs, const std::vector<int>& labels) {
  const int B = probs.extent(0), C = probs.extent(1);
  int hits = 0;
  for (int i = 0; i < B; ++i) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (probs.at(i, c) > probs.at(i, best)) best = c;
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / B;
}

void zero_pad_row_grad(ModelParams& model) {
  if (!model.embedding.requires_grad()) return;
  const int d = model.embedding.extent(1);
  for (int k = 0; k < d; ++k)
    model.embedding.grad()[static_cast<size_t>(Vocabulary::kPad) * d + k] = 0.0;
}

}  // namespace

StepReport train_step(ModelParams& model, Adam& adam, const Batch& batch,
                      const TrainConfig& config, Rng& rng) {
  adam.zero_grad();
  const double w =
      config.loss_reduction == "mean" ? 1.0 / static_cast<double>(batch.size) : 1.0;

  ForwardOptions opts;
  opts.training = true;
  opts.rng = &rng;
  ForwardResult clean = model_forward(model, batch, opts);
  StepReport report;
  report.examples = batch.size;
  report.clean_loss = clean.loss.item();
  report.accuracy = batch_accuracy(clean.probs, batch.labels);
  if (!finite(report.clean_loss))
    throw NumericError("train_step: non-finite loss " + std::to_string(report.clean_loss));
  backward(scale(clean.loss, w));

  if (config.epsilon > 0.0) {
    InputPerturbation pert =
        adversarial_perturbation(clean, batch, config.epsilon, config.adv_sign);
    opts.perturbation = &pert;
    ForwardResult adv = model_forward(model, batch, opts);
    report.adv_loss = adv.loss.item();
    if (!finite(report.adv_loss))
      throw NumericError("train_step: non-finite adversarial loss " +
                         std::to_string(report.adv_loss));
    backward(scale(adv.loss, config.adv_weight * w));
  }

  zero_pad_row_grad(model);
  adam.step();
  return report;
}

std::string epoch_csv_header() {
  return "epoch,clean_loss,adv_loss,valid_loss,valid_accuracy,seconds";
}

std::string epoch_csv_row(const EpochRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.3f", row.epoch,
                row.clean_loss, row.adv_loss, row.valid_loss, row.valid_accuracy,
                row.seconds);
  return buf;
}

std::pair<double, double> validate_model(const ModelParams& model, const Corpus& valid,
                                         const Vocabulary& vocab, const TrainConfig& config) {
  NoGradGuard ng;
  if (valid.utterance_count() == 0) throw DataError("validate_model: empty corpus");
  auto batches = make_batches(valid, vocab, config.batch_size, config.history_window, -1,
                              config.max_tokens);
  double loss = 0.0;
  long long hits = 0, total = 0;
  for (const auto& b : batches) {
    ForwardResult fr = model_forward(model, b, {});
    loss += fr.loss.item();
    const int C = fr.probs.extent(1);
    for (int i = 0; i < b.size; ++i) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (fr.probs.at(i, c) > fr.probs.at(i, best)) best = c;
      hits += best == b.labels[static_cast<size_t>(i)];
    }
    total += b.size;
  }
  return {loss / static_cast<double>(total), static_cast<double>(hits) / static_cast<double>(total)};
}

FitResult fit(ModelParams& model, const Corpus& train, const Corpus& valid,
              const Vocabulary& vocab, const TrainConfig& config, std::ostream* log_stream,
              const std::function<bool(const EpochRow&)>& stop_now) {
  if (train.utterance_count() == 0) throw DataError("fit: empty training split");
  if (valid.utterance_count() == 0) throw DataError("fit: empty validation split");

  Adam adam(model.named_tensors(), config.lr, config.adam_beta1, config.adam_beta2,
            config.adam_eps);
  Rng rng(config.seed);
  EarlyStopping stopping(config.patience);
  FitResult result;
  ModelParams best = model.clone_values();
  if (log_stream) (*log_stream) << epoch_csv_header() << "\n";

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // fresh example order each epoch, still a pure function of (seed, epoch)
    auto batches = make_batches(train, vocab, config.batch_size, config.history_window,
                                static_cast<int64_t>(config.seed) + epoch, config.max_tokens);
    double clean_sum = 0.0, adv_sum = 0.0;
    long long examples = 0;
    for (const auto& b : batches) {
      StepReport r = train_step(model, adam, b, config, rng);
      clean_sum += r.clean_loss;
      adv_sum += r.adv_loss;
      examples += r.examples;
    }

    auto [vloss, vacc] = validate_model(model, valid, vocab, config);
    EpochRow row;
    row.epoch = epoch;
    row.clean_loss = clean_sum / static_cast<double>(examples);
    row.adv_loss = adv_sum / static_cast<double>(examples);
    row.valid_loss = vloss;
    row.valid_accuracy = vacc;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
    if (log_stream) (*log_stream) << epoch_csv_row(row) << "\n" << std::flush;

    const bool exhausted = stopping.update(vloss);
    if (stopping.best_epoch() == epoch) best = model.clone_values();

    if (stop_now && stop_now(row)) {
      // external stop keeps the live weights that satisfied the caller
      result.best_epoch = epoch;
      result.best_valid_loss = vloss;
      result.stopped_early = true;
      return result;
    }
    if (exhausted) {
      result.stopped_early = true;
      break;
    }
  }

  model.load_values(best);
  result.best_epoch = stopping.best_epoch();
  result.best_valid_loss = stopping.best_loss();
  return result;
}

}  // namespace aldmn
