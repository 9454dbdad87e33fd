#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "aldmn/common.hpp"
#include "aldmn/tensor.hpp"

namespace aldmn {

struct Utterance {
  std::string speaker;
  std::vector<std::string> tokens;  // normalized, non-empty
  int label = -1;                   // index into Corpus::labels, -1 when unlabeled
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
};

struct Corpus {
  std::vector<Conversation> conversations;
  std::vector<std::string> labels;  // first-appearance order, frozen at load

  size_t utterance_count() const;
};

// Lower-cases and splits on whitespace; punctuation is dropped except '?',
// which becomes a standalone token. May return an empty list (caller drops).
std::vector<std::string> normalize_and_tokenize(const std::string& raw);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() = default;

  // Tokens with corpus frequency >= min_count, indexed by descending
  // frequency with lexicographic tie-break, after the two reserved slots.
  static Vocabulary build(const std::vector<Conversation>& conversations, int min_count);

  // Rebuild from an explicit index-ordered token list (checkpoint load).
  static Vocabulary from_tokens(std::vector<std::string> tokens, int min_count);

  int lookup(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int min_count() const { return min_count_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int min_count_ = 0;
};

// One training example per utterance: the utterance itself plus its up-to-W
// predecessors from the same conversation, oldest first. All index matrices
// are row-major and padded with kPad to the per-batch maximum token count.
struct Batch {
  int size = 0;      // B
  int max_len = 0;   // L, shared by current and history utterances
  int max_hist = 0;  // H, largest history count in this batch

  std::vector<int> current;          // [B x L]
  std::vector<int> lengths;          // [B], true token counts
  std::vector<int> history;          // [B x H x L]
  std::vector<int> history_lengths;  // [B x H], 0 marks an empty slot
  std::vector<int> history_counts;   // [B]
  std::vector<int> labels;           // [B], empty in inference mode

  int current_at(int i, int t) const { return current[static_cast<size_t>(i) * max_len + t]; }
  int history_at(int i, int j, int t) const {
    return history[(static_cast<size_t>(i) * max_hist + j) * max_len + t];
  }
};

// Loads conversations and the label set. When `frozen_labels` is given
// (evaluation against a trained model), a label outside it is a DataError;
// otherwise labels are collected in first-appearance order.
Corpus load_corpus(const std::string& path,
                   const std::vector<std::string>* frozen_labels = nullptr);

void save_corpus(const Corpus& corpus, const std::string& path);

// history_window: number of preceding utterances kept per example; -1 keeps
// the whole conversation prefix. max_tokens: right-truncation cap.
// shuffle_seed >= 0 shuffles the example order; -1 keeps corpus order.
std::vector<Batch> make_batches(const Corpus& corpus, const Vocabulary& vocab,
                                int batch_size, int history_window, int64_t shuffle_seed,
                                int max_tokens = 118);

// Rows for covered tokens come from the file (`token v1 .. v_d`, single
// spaces); uncovered tokens and <unk> are uniform in [-init_range, init_range];
// the <pad> row is zero. An empty path initializes the whole table randomly.
Tensor load_embeddings(const std::string& path, const Vocabulary& vocab, int d,
                       double init_range, Rng& rng, bool trainable);

// Deterministic conversation-level split: `fraction` of conversations become
// the validation set. Both splits preserve relative corpus order.
std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction,
                                           uint64_t seed);

}  // namespace aldmn
