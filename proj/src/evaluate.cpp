#include "aldmn/evaluate.hpp"

#include <ostream>

#include "json.hpp"

namespace aldmn {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw DataError("accuracy: need equally many predictions and labels, at least one");
  long long hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

EvalReport confusion_report(const std::vector<int>& predictions,
                            const std::vector<int>& labels,
                            const std::vector<std::string>& label_names) {
  const int C = static_cast<int>(label_names.size());
  EvalReport r;
  r.label_names = label_names;
  r.confusion.assign(static_cast<size_t>(C), std::vector<long long>(static_cast<size_t>(C), 0));
  r.support.assign(static_cast<size_t>(C), 0);
  r.accuracy = accuracy(predictions, labels);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= C || p < 0 || p >= C)
      throw DataError("confusion_report: label id outside the label set");
    ++r.confusion[static_cast<size_t>(y)][static_cast<size_t>(p)];
    ++r.support[static_cast<size_t>(y)];
  }
  return r;
}

namespace {

std::string csv_cell(const std::string& raw) {
  if (raw.find_first_of(",\"\n") == std::string::npos) return raw;
  std::string quoted = "\"";
  for (char c : raw) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

}  // namespace

void write_confusion_csv(const EvalReport& report, std::ostream& out) {
  out << "true\\predicted";
  for (const auto& name : report.label_names) out << ',' << csv_cell(name);
  out << '\n';
  for (size_t y = 0; y < report.label_names.size(); ++y) {
    out << csv_cell(report.label_names[y] + " (support=" +
                    std::to_string(report.support[y]) + ")");
    for (long long c : report.confusion[y]) out << ',' << c;
    out << '\n';
  }
}

std::string metrics_json(const EvalReport& report) {
  const size_t C = report.label_names.size();
  nlohmann::json prec = nlohmann::json::object();
  nlohmann::json rec = nlohmann::json::object();
  nlohmann::json sup = nlohmann::json::object();
  for (size_t c = 0; c < C; ++c) {
    long long predicted = 0, correct = report.confusion[c][c];
    for (size_t y = 0; y < C; ++y) predicted += report.confusion[y][c];
    const auto& name = report.label_names[c];
    prec[name] = predicted == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(predicted);
    rec[name] = report.support[c] == 0
                    ? 0.0
                    : static_cast<double>(correct) / static_cast<double>(report.support[c]);
    sup[name] = report.support[c];
  }
  nlohmann::json j;
  j["accuracy"] = report.accuracy;
  j["per_class_precision"] = prec;
  j["per_class_recall"] = rec;
  j["support"] = sup;
  return j.dump(2);
}

std::vector<int> predict_corpus(const ModelParams& model, const Corpus& corpus,
                                const Vocabulary& vocab, int batch_size,
                                int history_window, int max_tokens) {
  auto batches = make_batches(corpus, vocab, batch_size, history_window, -1, max_tokens);
  std::vector<int> out;
  out.reserve(corpus.utterance_count());
  for (const auto& b : batches) {
    auto preds = predict_batch(model, b);
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

EvalReport evaluate_corpus(const ModelParams& model, const Corpus& corpus,
                           const Vocabulary& vocab, const TrainConfig& config) {
  auto preds = predict_corpus(model, corpus, vocab, config.batch_size,
                              config.history_window, config.max_tokens);
  std::vector<int> truth;
  truth.reserve(preds.size());
  for (const auto& conv : corpus.conversations)
    for (const auto& utt : conv.utterances) truth.push_back(utt.label);
  return confusion_report(preds, truth, corpus.labels);
}

}  // namespace aldmn
