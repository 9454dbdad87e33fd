#include "aldmn/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <string>

#include "aldmn/evaluate.hpp"
#include "aldmn/synth.hpp"
#include "doctest.h"

using namespace aldmn;

namespace {

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& name) : path("/tmp/aldmn_ckpt_" + name) {}
  ~TempPath() { std::remove(path.c_str()); }
};

struct Fixture {
  TrainConfig config;
  Corpus corpus;
  Vocabulary vocab;
  ModelParams model;
};

Fixture trained_fixture(uint64_t seed) {
  Fixture f;
  f.config.d = 6;
  f.config.d_a = 5;
  f.config.t_mem = 2;
  f.config.pyramid_layers = 2;
  f.config.history_window = 2;
  f.config.batch_size = 16;
  f.config.epochs = 2;
  f.config.min_count = 1;
  f.config.epsilon = 0.5;
  f.config.seed = seed;
  f.corpus = synth_corpus(seed, 20, 6);
  f.vocab = Vocabulary::build(f.corpus.conversations, 1);
  Rng rng(seed);
  Tensor emb = load_embeddings("", f.vocab, f.config.d, f.config.init_range, rng, true);
  f.model = ModelParams::init(
      f.config.model_config(f.vocab.size(), static_cast<int>(f.corpus.labels.size())), emb,
      rng);

  // a couple of optimization steps so the weights are not fresh-init symmetric
  Adam adam(f.model.named_tensors(), f.config.lr, f.config.adam_beta1, f.config.adam_beta2,
            f.config.adam_eps);
  Rng step_rng(seed);
  auto batches = make_batches(f.corpus, f.vocab, f.config.batch_size,
                              f.config.history_window, -1, f.config.max_tokens);
  for (int s = 0; s < 3; ++s) train_step(f.model, adam, batches[0], f.config, step_rng);
  return f;
}

}  // namespace

TEST_CASE("a checkpoint reproduces configuration, vocabulary, and labels") {
  Fixture f = trained_fixture(5);
  TempPath p("roundtrip.ckpt");
  save_checkpoint(p.path, f.model, f.config, f.vocab, f.corpus.labels);

  LoadedModel lm = load_checkpoint(p.path);
  CHECK(lm.config.d == f.config.d);
  CHECK(lm.config.t_mem == f.config.t_mem);
  CHECK(lm.config.history_window == f.config.history_window);
  CHECK(lm.config.seed == f.config.seed);
  CHECK(lm.vocab.tokens() == f.vocab.tokens());
  CHECK(lm.labels == f.corpus.labels);
  CHECK(lm.model.config.vocab_size == f.vocab.size());
  CHECK(lm.model.config.n_classes == static_cast<int>(f.corpus.labels.size()));
}

TEST_CASE("saving and loading preserves every argmax prediction") {
  Fixture f = trained_fixture(9);
  TempPath p("argmax.ckpt");
  save_checkpoint(p.path, f.model, f.config, f.vocab, f.corpus.labels);
  LoadedModel lm = load_checkpoint(p.path);

  auto before = predict_corpus(f.model, f.corpus, f.vocab, f.config.batch_size,
                               f.config.history_window);
  auto after = predict_corpus(lm.model, f.corpus, lm.vocab, f.config.batch_size,
                              f.config.history_window);
  REQUIRE(before.size() == after.size());
  size_t agree = 0;
  for (size_t i = 0; i < before.size(); ++i) agree += before[i] == after[i];
  CHECK(agree == before.size());
}

TEST_CASE("storage precision is stable: save, load, save is byte-identical") {
  Fixture f = trained_fixture(13);
  TempPath p1("first.ckpt"), p2("second.ckpt");
  save_checkpoint(p1.path, f.model, f.config, f.vocab, f.corpus.labels);
  LoadedModel lm = load_checkpoint(p1.path);
  save_checkpoint(p2.path, lm.model, lm.config, lm.vocab, lm.labels);

  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string b1 = slurp(p1.path), b2 = slurp(p2.path);
  CHECK(b1.size() > 100);
  CHECK(b1 == b2);
}

TEST_CASE("foreign and damaged files are rejected") {
  TempPath p("bogus.ckpt");
  {
    std::ofstream out(p.path, std::ios::binary);
    out << "GGUF... definitely not ours";
  }
  CHECK_THROWS_AS(load_checkpoint(p.path), DataError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nowhere.ckpt"), DataError);

  // valid prefix, then the byte stream just stops
  Fixture f = trained_fixture(17);
  TempPath full("full.ckpt"), cut("cut.ckpt");
  save_checkpoint(full.path, f.model, f.config, f.vocab, f.corpus.labels);
  {
    std::ifstream in(full.path, std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(in), {});
    std::ofstream out(cut.path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(cut.path), DataError);
}
