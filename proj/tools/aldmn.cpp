#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "aldmn/checkpoint.hpp"
#include "aldmn/convert.hpp"
#include "aldmn/evaluate.hpp"
#include "aldmn/gradcheck.hpp"
#include "aldmn/synth.hpp"

namespace {

using namespace aldmn;

struct ConvertArgs {
  std::string in, out, label_map;
};

struct TrainArgs {
  std::string train, valid, config, embeddings, out, log;
};

struct EvalArgs {
  std::string model, data, metrics, confusion, attention;
};

struct PredictArgs {
  std::string model;
};

struct GradcheckArgs {
  double step = 1e-5;
  double tol = 1e-4;
};

struct SynthArgs {
  std::string out;
  uint64_t seed = 7;
  int conversations = 200;
  int acts = 6;
  double noise = 0.0;
  uint64_t noise_seed = 1;
};

int run_convert(const ConvertArgs& a) {
  std::unordered_map<std::string, std::string> map;
  if (!a.label_map.empty()) map = load_label_map(a.label_map);
  Corpus corpus = convert_corpus(a.in, a.label_map.empty() ? nullptr : &map);
  save_corpus(corpus, a.out);
  std::cerr << "wrote " << corpus.conversations.size() << " conversations, "
            << corpus.utterance_count() << " utterances, " << corpus.labels.size()
            << " labels to " << a.out << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::from_json_file(a.config);
  cfg.validate();

  Corpus train = load_corpus(a.train);
  Corpus valid;
  if (!a.valid.empty()) {
    valid = load_corpus(a.valid, &train.labels);
  } else {
    if (cfg.valid_fraction <= 0.0)
      throw DataError("no validation data: pass --valid or set valid_fraction > 0");
    std::tie(train, valid) = split_validation(train, cfg.valid_fraction, cfg.seed);
  }

  Vocabulary vocab = Vocabulary::build(train.conversations, cfg.min_count);
  Rng rng(cfg.seed);
  Tensor emb = load_embeddings(a.embeddings, vocab, cfg.d, cfg.init_range, rng,
                               cfg.trainable_embeddings);
  ModelParams model = ModelParams::init(
      cfg.model_config(vocab.size(), static_cast<int>(train.labels.size())), emb, rng);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw DataError("cannot write log: " + a.log);
    log = &log_file;
  }

  FitResult fr = fit(model, train, valid, vocab, cfg, log);
  save_checkpoint(a.out, model, cfg, vocab, train.labels);
  std::cerr << "best epoch " << fr.best_epoch << ", validation loss " << fr.best_valid_loss
            << (fr.stopped_early ? " (stopped early)" : "") << ", checkpoint " << a.out
            << "\n";
  return 0;
}

void write_attention_csv(const LoadedModel& lm, const Corpus& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write attention file: " + path);
  out << "example,pass,fact,kind,weight\n";
  NoGradGuard ng;
  auto batches = make_batches(data, lm.vocab, lm.config.batch_size,
                              lm.config.history_window, -1, lm.config.max_tokens);
  long long example = 0;
  char buf[64];
  for (auto& b : batches) {
    ForwardOptions opts;
    opts.keep_attention = true;
    ForwardResult fr = model_forward(lm.model, b, opts);
    const int F = fr.alphas.empty() ? 0 : fr.alphas[0].extent(1);
    for (int i = 0; i < b.size; ++i) {
      for (size_t pass = 0; pass < fr.alphas.size(); ++pass)
        for (int f = 0; f < F; ++f) {
          if (!fr.fact_mask[static_cast<size_t>(i) * F + f]) continue;
          std::snprintf(buf, sizeof(buf), "%.17g", fr.alphas[pass].at(i, f));
          out << example << ',' << pass + 1 << ',' << f << ','
              << (f < fr.n_utterance_facts ? "utterance" : "history") << ',' << buf
              << '\n';
        }
      ++example;
    }
  }
}

int run_eval(const EvalArgs& a) {
  LoadedModel lm = load_checkpoint(a.model);
  Corpus data = load_corpus(a.data, &lm.labels);
  EvalReport report = evaluate_corpus(lm.model, data, lm.vocab, lm.config);

  const std::string json = metrics_json(report);
  if (a.metrics.empty()) {
    std::cout << json << "\n";
  } else {
    std::ofstream out(a.metrics);
    if (!out) throw DataError("cannot write metrics file: " + a.metrics);
    out << json << "\n";
  }
  if (!a.confusion.empty()) {
    std::ofstream out(a.confusion);
    if (!out) throw DataError("cannot write confusion file: " + a.confusion);
    write_confusion_csv(report, out);
  }
  if (!a.attention.empty()) write_attention_csv(lm, data, a.attention);
  std::cerr << "accuracy " << report.accuracy << " over "
            << data.utterance_count() << " utterances\n";
  return 0;
}

int run_predict(const PredictArgs& a) {
  LoadedModel lm = load_checkpoint(a.model);
  const int W = lm.config.history_window;
  const int cap = lm.config.max_tokens;

  std::vector<std::vector<int>> history;  // encoded, oldest first
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {  // conversation boundary: forget the context
      history.clear();
      std::cout << "\n" << std::flush;
      continue;
    }
    // speaker<TAB>text, speaker<TAB>label<TAB>text, or bare text
    std::string text = line;
    const size_t tab1 = line.find('\t');
    if (tab1 != std::string::npos) {
      const size_t tab2 = line.find('\t', tab1 + 1);
      text = tab2 == std::string::npos ? line.substr(tab1 + 1) : line.substr(tab2 + 1);
    }
    std::vector<int> ids;
    for (const auto& tok : normalize_and_tokenize(text)) {
      if (static_cast<int>(ids.size()) >= cap) break;
      ids.push_back(lm.vocab.lookup(tok));
    }
    if (ids.empty()) {
      std::cerr << "warning: utterance is empty after normalization, no prediction\n";
      std::cout << "\n" << std::flush;
      continue;
    }

    const size_t keep = W < 0 ? history.size()
                              : std::min(history.size(), static_cast<size_t>(W));
    Batch b;
    b.size = 1;
    b.max_hist = static_cast<int>(keep);
    b.max_len = static_cast<int>(ids.size());
    for (size_t j = history.size() - keep; j < history.size(); ++j)
      b.max_len = std::max(b.max_len, static_cast<int>(history[j].size()));
    b.current.assign(static_cast<size_t>(b.max_len), Vocabulary::kPad);
    std::copy(ids.begin(), ids.end(), b.current.begin());
    b.lengths = {static_cast<int>(ids.size())};
    b.history.assign(static_cast<size_t>(b.max_hist) * b.max_len, Vocabulary::kPad);
    b.history_counts = {b.max_hist};
    for (size_t j = 0; j < keep; ++j) {
      const auto& h = history[history.size() - keep + j];
      b.history_lengths.push_back(static_cast<int>(h.size()));
      std::copy(h.begin(), h.end(), b.history.begin() + static_cast<long>(j * b.max_len));
    }

    const int pred = predict_batch(lm.model, b)[0];
    std::cout << lm.labels[static_cast<size_t>(pred)] << "\n" << std::flush;

    history.push_back(std::move(ids));
    if (W >= 0 && static_cast<int>(history.size()) > W)
      history.erase(history.begin(), history.end() - W);
  }
  return 0;
}

int run_gradcheck_cmd(const GradcheckArgs& a) {
  GradcheckReport r = run_gradcheck(a.step);
  std::printf("gradcheck: max relative error %.3e over %zu coordinates in %.1fs (worst %s)\n",
              r.max_rel_err, r.coords_checked, r.seconds, r.worst.c_str());
  if (!r.ok(a.tol)) {
    std::cerr << "gradcheck FAILED against tolerance " << a.tol << "\n";
    return 3;
  }
  return 0;
}

int run_synth(const SynthArgs& a) {
  Corpus corpus = synth_corpus(a.seed, a.conversations, a.acts);
  if (a.noise > 0.0) corpus = apply_token_noise(corpus, a.noise, a.noise_seed);
  save_corpus(corpus, a.out);
  std::cerr << "wrote " << corpus.conversations.size() << " conversations, "
            << corpus.utterance_count() << " utterances to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialogue act classifier over conversation context"};
  app.require_subcommand(1);

  ConvertArgs conv_args;
  auto* conv = app.add_subcommand("convert", "rewrite a CSV export into the conversation format");
  conv->add_option("--in", conv_args.in, "input file (CSV export or conversation format)")
      ->required();
  conv->add_option("--out", conv_args.out, "output conversation file")->required();
  conv->add_option("--label-map", conv_args.label_map,
                   "tab-separated raw-to-output label map");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "fit a model and save a checkpoint");
  train->add_option("--train", train_args.train, "training conversation file")->required();
  train->add_option("--valid", train_args.valid,
                    "validation conversation file (default: split from training data)");
  train->add_option("--config", train_args.config, "JSON hyperparameter file");
  train->add_option("--embeddings", train_args.embeddings, "pretrained embedding file");
  train->add_option("--out", train_args.out, "checkpoint path")->required();
  train->add_option("--log", train_args.log, "epoch CSV path (default: standard output)");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on labeled data");
  eval->add_option("--model", eval_args.model, "checkpoint path")->required();
  eval->add_option("--data", eval_args.data, "labeled conversation file")->required();
  eval->add_option("--metrics", eval_args.metrics,
                   "metrics JSON path (default: standard output)");
  eval->add_option("--confusion", eval_args.confusion, "confusion matrix CSV path");
  eval->add_option("--emit-attention", eval_args.attention,
                   "per-fact attention weight CSV path");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand(
      "predict", "label utterances from standard input, one per line "
                 "(speaker<TAB>text; a blank line starts a new conversation)");
  predict->add_option("--model", predict_args.model, "checkpoint path")->required();

  GradcheckArgs gc_args;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  gradcheck->add_option("--step", gc_args.step, "finite-difference step");
  gradcheck->add_option("--tol", gc_args.tol, "maximum allowed relative error");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate the synthetic act-grammar corpus");
  synth->add_option("--out", synth_args.out, "output conversation file")->required();
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--conversations", synth_args.conversations, "conversation count");
  synth->add_option("--acts", synth_args.acts, "act inventory size (>= 4)");
  synth->add_option("--noise", synth_args.noise, "token replacement probability");
  synth->add_option("--noise-seed", synth_args.noise_seed, "noise seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (conv->parsed()) return run_convert(conv_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (predict->parsed()) return run_predict(predict_args);
    if (gradcheck->parsed()) return run_gradcheck_cmd(gc_args);
    if (synth->parsed()) return run_synth(synth_args);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
