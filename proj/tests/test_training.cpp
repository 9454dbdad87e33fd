#include "aldmn/training.hpp"

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace aldmn;
using namespace aldmn::testutil;

namespace {

TrainConfig tiny_config() {
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 0.02;
  tc.epochs = 3;
  tc.patience = 5;
  tc.t_mem = 2;
  tc.d = 4;
  tc.d_a = 3;
  tc.dropout = 0.2;
  tc.epsilon = 0.5;
  tc.pyramid_layers = 2;
  tc.history_window = 2;
  tc.min_count = 1;
  tc.init_range = 0.3;
  tc.seed = 12;
  return tc;
}

ModelParams build_model(const Vocabulary& vocab, const TrainConfig& tc, int n_classes,
                        uint64_t seed) {
  Rng rng(seed);
  Tensor emb =
      load_embeddings("", vocab, tc.d, tc.init_range, rng, tc.trainable_embeddings);
  return ModelParams::init(tc.model_config(vocab.size(), n_classes), emb, rng);
}

Corpus toy_corpus() {
  Corpus c;
  c.labels = {"ask", "tell"};
  const std::vector<std::string> words = {"how",  "are",  "you", "fine", "thanks",
                                          "what", "time", "now", "late", "ok"};
  for (int cv = 0; cv < 8; ++cv) {
    Conversation conv;
    conv.id = "c" + std::to_string(cv);
    for (int u = 0; u < 4; ++u) {
      Utterance utt;
      utt.speaker = u % 2 ? "B" : "A";
      if ((cv + u) % 2 == 0) {
        utt.tokens = {"what", "time", words[static_cast<size_t>(cv) % words.size()], "?"};
        utt.label = 0;
      } else {
        utt.tokens = {"its", words[static_cast<size_t>(cv + u) % words.size()], "late"};
        utt.label = 1;
      }
      conv.utterances.push_back(utt);
    }
    c.conversations.push_back(conv);
  }
  return c;
}

// Three examples with uneven lengths and histories, labels included.
Batch fixed_batch() {
  Batch b;
  b.size = 3;
  b.max_len = 4;
  b.max_hist = 2;
  b.current = {2, 3, 4, 5,
               6, 7, 0, 0,
               3, 5, 7, 0};
  b.lengths = {4, 2, 3};
  b.history.assign(3 * 2 * 4, 0);
  b.history_lengths = {3, 2, 0, 0, 2, 0};
  b.history_counts = {2, 0, 1};
  int fill[] = {4, 6, 2, 0, 5, 3, 0, 0};
  for (int k = 0; k < 8; ++k) b.history[static_cast<size_t>(k)] = fill[k];
  b.history[static_cast<size_t>(2 * 2 * 4)] = 7;
  b.history[static_cast<size_t>(2 * 2 * 4 + 1)] = 2;
  b.labels = {0, 1, 2};
  return b;
}

double joint_norm(const InputPerturbation& pert, int example, int d) {
  double acc = 0.0;
  auto eat = [&](const Tensor& t) {
    if (!t.defined()) return;
    for (int k = 0; k < d; ++k) {
      const double v = t.at(example, k);
      acc += v * v;
    }
  };
  for (const auto& t : pert.current) eat(t);
  for (const auto& slot : pert.history)
    for (const auto& t : slot) eat(t);
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("adam reproduces the reference update sequence on a quadratic") {
  Tensor theta = Tensor::from({1}, {1.0}, true);
  Adam adam({{"theta", theta}}, 0.01, 0.9, 0.999, 1e-8);

  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    adam.zero_grad();
    backward(scale(sum(mul(theta, theta)), 0.5));  // objective theta^2 / 2
    adam.step();

    const double g = ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    ref -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(std::abs(theta.values()[0] - ref) <= 1e-10);
  }
  // bias correction makes the very first step the full learning rate
  CHECK(theta.values()[0] < 1.0);
}

TEST_CASE("adam's first step moves by almost exactly the learning rate") {
  Tensor theta = Tensor::from({1}, {1.0}, true);
  Adam adam({{"theta", theta}}, 0.01, 0.9, 0.999, 1e-8);
  adam.zero_grad();
  backward(scale(sum(mul(theta, theta)), 0.5));
  adam.step();
  CHECK(std::abs(theta.values()[0] - 0.99) <= 1e-6);
}

TEST_CASE("adam ignores zero gradients and frozen tensors") {
  Tensor active = Tensor::from({2}, {1.0, -2.0}, true);
  Tensor frozen = Tensor::from({2}, {3.0, 4.0}, false);
  Adam adam({{"a", active}, {"f", frozen}}, 0.1, 0.9, 0.999, 1e-8);
  CHECK(adam.param_count() == 1);

  adam.zero_grad();
  adam.step();  // no gradient anywhere: nothing may move
  CHECK(active.values() == std::vector<double>{1.0, -2.0});
  CHECK(frozen.values() == std::vector<double>{3.0, 4.0});
}

TEST_CASE("early stopping fires after patience epochs without improvement") {
  EarlyStopping es(5);
  const double losses[] = {5.0, 4.0, 3.0, 3.1, 3.2, 3.3, 3.4, 3.5};
  int stopped_at = 0;
  for (int e = 0; e < 8; ++e)
    if (es.update(losses[e])) {
      stopped_at = e + 1;
      break;
    }
  CHECK(stopped_at == 8);
  CHECK(es.best_epoch() == 3);
  CHECK(es.best_loss() == 3.0);
}

TEST_CASE("early stopping demands strict improvement") {
  EarlyStopping es(2);
  CHECK_FALSE(es.update(3.0));
  CHECK_FALSE(es.update(3.0));  // a tie burns patience
  CHECK(es.update(3.0));
  CHECK(es.best_epoch() == 1);
}

TEST_CASE("the perturbation matches the worked two-component example") {
  // gradient of the log-likelihood (3, 4), radius 3: the opposite direction
  // scaled onto the sphere is (-1.8, -2.4)
  Batch b;
  b.size = 1;
  b.max_len = 1;
  b.max_hist = 0;
  b.current = {2};
  b.lengths = {1};
  b.history_counts = {0};

  ForwardResult clean;
  Tensor emb = Tensor::zeros({1, 2}, true);
  emb.grad()[0] = -3.0;  // recorded negative-log-likelihood gradient
  emb.grad()[1] = -4.0;
  clean.current_emb = {emb};

  InputPerturbation pert = adversarial_perturbation(clean, b, 3.0, "minus");
  REQUIRE(pert.current.size() == 1);
  REQUIRE(pert.current[0].defined());
  CHECK(pert.current[0].at(0, 0) == doctest::Approx(-1.8).epsilon(1e-12));
  CHECK(pert.current[0].at(0, 1) == doctest::Approx(-2.4).epsilon(1e-12));

  InputPerturbation mirrored = adversarial_perturbation(clean, b, 3.0, "plus");
  CHECK(mirrored.current[0].at(0, 0) == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(mirrored.current[0].at(0, 1) == doctest::Approx(2.4).epsilon(1e-12));
}

TEST_CASE("the perturbation has per-example norm epsilon over real positions only") {
  TrainConfig tc = tiny_config();
  tc.dropout = 0.0;
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  ModelParams model = build_model(vocab, tc, 3, 7);
  Batch b = fixed_batch();

  ForwardResult clean = model_forward(model, b, {});
  backward(scale(clean.loss, 1.0 / b.size));
  const double eps = 0.7;
  InputPerturbation pert = adversarial_perturbation(clean, b, eps, "minus");

  for (int i = 0; i < b.size; ++i)
    CHECK(std::abs(joint_norm(pert, i, tc.d) - eps) <= 1e-6);

  // padded token positions and absent history slots stay exactly zero
  for (int t = b.lengths[1]; t < b.max_len; ++t)
    if (pert.current[static_cast<size_t>(t)].defined())
      for (int k = 0; k < tc.d; ++k)
        CHECK(pert.current[static_cast<size_t>(t)].at(1, k) == 0.0);
  for (int j = 0; j < b.max_hist; ++j)
    for (int t = 0; t < b.max_len; ++t) {
      const Tensor& r = pert.history[static_cast<size_t>(j)][static_cast<size_t>(t)];
      if (!r.defined()) continue;
      for (int k = 0; k < tc.d; ++k)
        if (j >= b.history_counts[1]) CHECK(r.at(1, k) == 0.0);
    }
}

TEST_CASE("uniform loss scaling cancels out of the perturbation") {
  TrainConfig tc = tiny_config();
  tc.dropout = 0.0;
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  ModelParams model = build_model(vocab, tc, 3, 19);
  Batch b = fixed_batch();

  ForwardResult clean1 = model_forward(model, b, {});
  backward(scale(clean1.loss, 0.25));
  InputPerturbation p1 = adversarial_perturbation(clean1, b, 1.0, "minus");

  ForwardResult clean2 = model_forward(model, b, {});
  backward(clean2.loss);
  InputPerturbation p2 = adversarial_perturbation(clean2, b, 1.0, "minus");

  for (size_t t = 0; t < p1.current.size(); ++t) {
    if (!p1.current[t].defined()) {
      CHECK_FALSE(p2.current[t].defined());
      continue;
    }
    for (size_t k = 0; k < p1.current[t].values().size(); ++k)
      CHECK(p1.current[t].values()[k] ==
            doctest::Approx(p2.current[t].values()[k]).epsilon(1e-12));
  }
}

TEST_CASE("a training step without the adversarial pass reports no adversarial loss") {
  TrainConfig tc = tiny_config();
  tc.epsilon = 0.0;
  tc.dropout = 0.0;
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  ModelParams model = build_model(vocab, tc, 3, 3);
  Adam adam(model.named_tensors(), tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
  Rng rng(tc.seed);

  StepReport r = train_step(model, adam, fixed_batch(), tc, rng);
  CHECK(r.adv_loss == 0.0);
  CHECK(r.examples == 3);
  CHECK(r.clean_loss > 0.0);
}

TEST_CASE("repeated steps shrink the loss on a fixed batch") {
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  Batch b = fixed_batch();

  for (double eps : {0.0, 0.3}) {
    TrainConfig tc = tiny_config();
    tc.epsilon = eps;
    tc.dropout = 0.0;
    tc.lr = 0.05;
    ModelParams model = build_model(vocab, tc, 3, 29);
    Adam adam(model.named_tensors(), tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
    Rng rng(tc.seed);

    double first = 0.0, last = 0.0;
    for (int s = 0; s < 30; ++s) {
      StepReport r = train_step(model, adam, b, tc, rng);
      if (s == 0) first = r.clean_loss;
      last = r.clean_loss;
      if (eps > 0.0) CHECK(r.adv_loss > 0.0);
    }
    CHECK(last < 0.5 * first);
  }
}

TEST_CASE("the pad embedding row survives training untouched") {
  TrainConfig tc = tiny_config();
  tc.dropout = 0.0;
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  ModelParams model = build_model(vocab, tc, 3, 37);
  Adam adam(model.named_tensors(), tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
  Rng rng(tc.seed);

  Batch b = fixed_batch();
  for (int s = 0; s < 5; ++s) train_step(model, adam, b, tc, rng);
  for (int k = 0; k < tc.d; ++k) CHECK(model.embedding.values()[static_cast<size_t>(k)] == 0.0);
}

TEST_CASE("config json round-trips and rejects junk") {
  TrainConfig base;
  TrainConfig back = TrainConfig::from_json(base.to_json());
  CHECK(back.lr == base.lr);
  CHECK(back.epochs == base.epochs);
  CHECK(back.loss_reduction == base.loss_reduction);
  CHECK(back.adv_sign == base.adv_sign);
  CHECK(back.trainable_embeddings == base.trainable_embeddings);

  auto parsed = nlohmann::json::parse(base.to_json());
  CHECK(parsed.size() == 23);  // every knob appears, nothing extra

  TrainConfig partial = TrainConfig::from_json(R"({"lr": 0.5, "epochs": 2})");
  CHECK(partial.lr == 0.5);
  CHECK(partial.epochs == 2);
  CHECK(partial.batch_size == base.batch_size);

  CHECK_THROWS_AS(TrainConfig::from_json(R"({"leraning_rate": 0.5})"), DataError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"lr": "fast"})"), DataError);
  CHECK_THROWS_AS(TrainConfig::from_json("[1,2]"), DataError);
  CHECK_THROWS_AS(TrainConfig::from_json("{nope"), DataError);
}

TEST_CASE("config validation rejects out-of-range values") {
  auto broken = [](auto&& mutate) {
    TrainConfig tc;
    mutate(tc);
    return tc;
  };
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.dropout = 1.0; }).validate(), DataError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.epsilon = -1.0; }).validate(), DataError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.batch_size = 0; }).validate(), DataError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.loss_reduction = "avg"; }).validate(),
                  DataError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.adv_sign = "sideways"; }).validate(),
                  DataError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.valid_fraction = 1.0; }).validate(),
                  DataError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.history_window = -2; }).validate(),
                  DataError);
  CHECK_NOTHROW(broken([](TrainConfig& c) { c.history_window = -1; }).validate());
  CHECK_NOTHROW(broken([](TrainConfig& c) { c.epsilon = 0.0; }).validate());
}

TEST_CASE("the attention width falls back to the model width") {
  TrainConfig tc;
  CHECK(tc.d_a == -1);
  CHECK(tc.attention_width() == tc.d);
  tc.d_a = 5;
  CHECK(tc.attention_width() == 5);

  ModelConfig mc = tc.model_config(100, 7);
  CHECK(mc.vocab_size == 100);
  CHECK(mc.n_classes == 7);
  CHECK(mc.d_a == 5);
  CHECK(mc.d == tc.d);
}

TEST_CASE("two runs from the same seed produce identical logs and weights") {
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  TrainConfig tc = tiny_config();
  auto [train, valid] = split_validation(corpus, 0.25, tc.seed);

  auto run = [&](std::string& csv) {
    ModelParams model = build_model(vocab, tc, 2, tc.seed);
    std::ostringstream log;
    FitResult fr = fit(model, train, valid, vocab, tc, &log);
    csv = log.str();
    std::vector<double> flat;
    for (auto& [n, t] : model.named_tensors())
      flat.insert(flat.end(), t.values().begin(), t.values().end());
    return std::make_pair(fr, flat);
  };

  std::string csv1, csv2;
  auto [r1, w1] = run(csv1);
  auto [r2, w2] = run(csv2);

  CHECK(w1 == w2);
  REQUIRE(r1.log.size() == r2.log.size());
  for (size_t e = 0; e < r1.log.size(); ++e) {
    CHECK(r1.log[e].clean_loss == r2.log[e].clean_loss);
    CHECK(r1.log[e].adv_loss == r2.log[e].adv_loss);
    CHECK(r1.log[e].valid_loss == r2.log[e].valid_loss);
    CHECK(r1.log[e].valid_accuracy == r2.log[e].valid_accuracy);
  }

  // the csv matches row for row once the wall-clock column is stripped
  auto strip_seconds = [](const std::string& csv) {
    std::vector<std::string> rows;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) rows.push_back(line.substr(0, line.rfind(',')));
    return rows;
  };
  CHECK(strip_seconds(csv1) == strip_seconds(csv2));
  CHECK(strip_seconds(csv1).at(0) ==
        epoch_csv_header().substr(0, epoch_csv_header().rfind(',')));
}

TEST_CASE("fit leaves the model at its best validation loss") {
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  TrainConfig tc = tiny_config();
  tc.epochs = 6;
  tc.patience = 2;
  auto [train, valid] = split_validation(corpus, 0.25, tc.seed);

  ModelParams model = build_model(vocab, tc, 2, tc.seed);
  FitResult fr = fit(model, train, valid, vocab, tc);

  REQUIRE(fr.best_epoch >= 1);
  CHECK(fr.best_valid_loss ==
        fr.log[static_cast<size_t>(fr.best_epoch - 1)].valid_loss);
  auto [vloss, vacc] = validate_model(model, valid, vocab, tc);
  CHECK(vloss == fr.best_valid_loss);  // deterministic replay of the kept weights
  CHECK(vacc >= 0.0);
  CHECK(vacc <= 1.0);
}

TEST_CASE("an external stop keeps the weights that triggered it") {
  Corpus corpus = toy_corpus();
  Vocabulary vocab = Vocabulary::build(corpus.conversations, 1);
  TrainConfig tc = tiny_config();
  tc.epochs = 6;
  auto [train, valid] = split_validation(corpus, 0.25, tc.seed);

  ModelParams model = build_model(vocab, tc, 2, tc.seed);
  FitResult fr = fit(model, train, valid, vocab, tc, nullptr,
                     [](const EpochRow& row) { return row.epoch == 2; });

  CHECK(fr.stopped_early);
  CHECK(fr.best_epoch == 2);
  REQUIRE(fr.log.size() == 2);
  auto [vloss, vacc] = validate_model(model, valid, vocab, tc);
  CHECK(vloss == fr.log[1].valid_loss);
}
