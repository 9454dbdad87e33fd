#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "aldmn/model.hpp"
#include "aldmn/training.hpp"

namespace aldmn {

// Count matrix over the label set: rows are true labels, columns predictions.
struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::vector<long long>> confusion;
  std::vector<long long> support;  // per true label, row sums of confusion
  std::vector<std::string> label_names;
};

// Fraction of positions where prediction and label agree.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

EvalReport confusion_report(const std::vector<int>& predictions,
                            const std::vector<int>& labels,
                            const std::vector<std::string>& label_names);

// Header row and row labels carry label names; each row label also carries
// the class support. Cells containing commas or quotes are quoted.
void write_confusion_csv(const EvalReport& report, std::ostream& out);

// {"accuracy": ..., "per_class_precision": {...}, "per_class_recall": {...},
//  "support": {...}}, keyed by label name. A class never predicted has
// precision 0; a class with no support has recall 0.
std::string metrics_json(const EvalReport& report);

// Argmax predictions over the whole corpus, in corpus order.
std::vector<int> predict_corpus(const ModelParams& model, const Corpus& corpus,
                                const Vocabulary& vocab, int batch_size,
                                int history_window, int max_tokens = 118);

EvalReport evaluate_corpus(const ModelParams& model, const Corpus& corpus,
                           const Vocabulary& vocab, const TrainConfig& config);

}  // namespace aldmn
