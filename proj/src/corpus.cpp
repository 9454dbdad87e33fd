#include "aldmn/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace aldmn {

size_t Corpus::utterance_count() const {
  size_t n = 0;
  for (const auto& c : conversations) n += c.utterances.size();
  return n;
}

std::vector<std::string> normalize_and_tokenize(const std::string& raw) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&]() {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (unsigned char ch : raw) {
    if (std::isspace(ch)) {
      flush();
    } else if (ch == '?') {
      flush();
      out.emplace_back("?");
    } else if (std::ispunct(ch)) {
      // dropped; "don't" -> "dont" rather than splitting
    } else {
      word.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

Vocabulary Vocabulary::build(const std::vector<Conversation>& conversations, int min_count) {
  if (conversations.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, long long> counts;  // ordered map gives the lexicographic tie-break
  for (const auto& conv : conversations)
    for (const auto& utt : conv.utterances)
      for (const auto& tok : utt.tokens) ++counts[tok];

  std::vector<std::pair<std::string, long long>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  v.min_count_ = min_count;
  v.tokens_ = {"<pad>", "<unk>"};
  for (const auto& [tok, n] : kept) v.tokens_.push_back(tok);
  for (size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i);
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, int min_count) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
    throw DataError("vocabulary token list must start with <pad>, <unk>");
  Vocabulary v;
  v.min_count_ = min_count;
  v.tokens_ = std::move(tokens);
  for (size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i);
  if (v.index_.size() != v.tokens_.size())
    throw DataError("vocabulary token list has duplicates");
  return v;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

Corpus load_corpus(const std::string& path, const std::vector<std::string>* frozen_labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);

  Corpus corpus;
  std::unordered_map<std::string, int> label_index;
  if (frozen_labels) {
    corpus.labels = *frozen_labels;
    for (size_t i = 0; i < corpus.labels.size(); ++i)
      label_index[corpus.labels[i]] = static_cast<int>(i);
  }

  Conversation cur;
  std::string line;
  size_t line_no = 0;
  auto close_conversation = [&]() {
    if (!cur.utterances.empty()) {
      cur.id = std::to_string(corpus.conversations.size() + 1);
      corpus.conversations.push_back(std::move(cur));
    }
    cur = Conversation{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) {
      close_conversation();
      continue;
    }
    auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected speaker<TAB>label<TAB>text, got " +
                      std::to_string(fields.size()) + " fields");
    Utterance utt;
    utt.speaker = fields[0];
    utt.tokens = normalize_and_tokenize(fields[2]);
    if (utt.tokens.empty()) {
      std::cerr << "warning: " << path << ":" << line_no
                << ": utterance empty after normalization, dropped\n";
      continue;
    }
    auto it = label_index.find(fields[1]);
    if (it == label_index.end()) {
      if (frozen_labels)
        throw DataError(path + ":" + std::to_string(line_no) + ": unknown label '" +
                        fields[1] + "'");
      int id = static_cast<int>(corpus.labels.size());
      corpus.labels.push_back(fields[1]);
      label_index[fields[1]] = id;
      utt.label = id;
    } else {
      utt.label = it->second;
    }
    cur.utterances.push_back(std::move(utt));
  }
  close_conversation();
  if (corpus.conversations.empty()) throw DataError(path + ": no conversations found");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path);
  for (size_t c = 0; c < corpus.conversations.size(); ++c) {
    if (c) out << "\n";
    for (const auto& utt : corpus.conversations[c].utterances) {
      out << utt.speaker << '\t' << corpus.labels[static_cast<size_t>(utt.label)] << '\t';
      for (size_t t = 0; t < utt.tokens.size(); ++t) out << (t ? " " : "") << utt.tokens[t];
      out << '\n';
    }
  }
}

std::vector<Batch> make_batches(const Corpus& corpus, const Vocabulary& vocab,
                                int batch_size, int history_window, int64_t shuffle_seed,
                                int max_tokens) {
  if (batch_size < 1) throw DataError("make_batches: batch_size < 1");
  if (max_tokens < 1) throw DataError("make_batches: max_tokens < 1");

  struct Example {
    int conv, utt;
  };
  std::vector<Example> examples;
  for (size_t c = 0; c < corpus.conversations.size(); ++c)
    for (size_t u = 0; u < corpus.conversations[c].utterances.size(); ++u)
      examples.push_back({static_cast<int>(c), static_cast<int>(u)});
  if (shuffle_seed >= 0) {
    Rng rng(static_cast<uint64_t>(shuffle_seed));
    shuffle(examples, rng);
  }

  auto token_count = [&](const Utterance& utt) {
    return std::min<int>(static_cast<int>(utt.tokens.size()), max_tokens);
  };

  std::vector<Batch> batches;
  for (size_t start = 0; start < examples.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(examples.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    b.size = static_cast<int>(end - start);

    for (size_t i = start; i < end; ++i) {
      const auto& conv = corpus.conversations[static_cast<size_t>(examples[i].conv)];
      const int k = examples[i].utt;
      const int hist =
          history_window < 0 ? k : std::min(k, history_window);
      b.max_hist = std::max(b.max_hist, hist);
      b.max_len = std::max(b.max_len, token_count(conv.utterances[static_cast<size_t>(k)]));
      for (int j = 0; j < hist; ++j)
        b.max_len = std::max(
            b.max_len, token_count(conv.utterances[static_cast<size_t>(k - hist + j)]));
    }

    b.current.assign(static_cast<size_t>(b.size) * b.max_len, Vocabulary::kPad);
    b.history.assign(static_cast<size_t>(b.size) * b.max_hist * b.max_len, Vocabulary::kPad);
    b.history_lengths.assign(static_cast<size_t>(b.size) * b.max_hist, 0);
    b.lengths.resize(static_cast<size_t>(b.size));
    b.history_counts.resize(static_cast<size_t>(b.size));
    b.labels.resize(static_cast<size_t>(b.size));

    for (size_t i = start; i < end; ++i) {
      const int row = static_cast<int>(i - start);
      const auto& conv = corpus.conversations[static_cast<size_t>(examples[i].conv)];
      const int k = examples[i].utt;
      const auto& utt = conv.utterances[static_cast<size_t>(k)];

      const int len = token_count(utt);
      b.lengths[static_cast<size_t>(row)] = len;
      b.labels[static_cast<size_t>(row)] = utt.label;
      for (int t = 0; t < len; ++t)
        b.current[static_cast<size_t>(row) * b.max_len + t] = vocab.lookup(utt.tokens[static_cast<size_t>(t)]);

      const int hist = history_window < 0 ? k : std::min(k, history_window);
      b.history_counts[static_cast<size_t>(row)] = hist;
      for (int j = 0; j < hist; ++j) {
        const auto& h = conv.utterances[static_cast<size_t>(k - hist + j)];
        const int hlen = token_count(h);
        b.history_lengths[static_cast<size_t>(row) * b.max_hist + j] = hlen;
        for (int t = 0; t < hlen; ++t)
          b.history[(static_cast<size_t>(row) * b.max_hist + j) * b.max_len + t] =
              vocab.lookup(h.tokens[static_cast<size_t>(t)]);
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

Tensor load_embeddings(const std::string& path, const Vocabulary& vocab, int d,
                       double init_range, Rng& rng, bool trainable) {
  Tensor table = Tensor::zeros({vocab.size(), d}, trainable);

  std::vector<uint8_t> covered(static_cast<size_t>(vocab.size()), 0);
  covered[Vocabulary::kPad] = 1;  // stays zero
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string token;
      ss >> token;
      std::vector<double> vec;
      double v;
      while (ss >> v) vec.push_back(v);
      if (static_cast<int>(vec.size()) != d)
        throw DataError(path + ":" + std::to_string(line_no) + ": vector length " +
                        std::to_string(vec.size()) + ", configured dimension " +
                        std::to_string(d));
      if (!vocab.contains(token)) continue;
      const int idx = vocab.lookup(token);
      if (idx == Vocabulary::kPad || idx == Vocabulary::kUnk) continue;
      std::copy(vec.begin(), vec.end(),
                table.values().begin() + static_cast<size_t>(idx) * d);
      covered[static_cast<size_t>(idx)] = 1;
    }
  }
  for (int i = 0; i < vocab.size(); ++i) {
    if (covered[static_cast<size_t>(i)]) continue;
    for (int j = 0; j < d; ++j)
      table.values()[static_cast<size_t>(i) * d + j] = rng.uniform(-init_range, init_range);
  }
  return table;
}

std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction,
                                           uint64_t seed) {
  const size_t n = corpus.conversations.size();
  size_t n_valid = static_cast<size_t>(fraction * static_cast<double>(n));
  if (fraction > 0.0 && n_valid == 0 && n > 1) n_valid = 1;
  if (n_valid >= n) throw DataError("split_validation: validation fraction leaves no training data");

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<uint8_t> is_valid(n, 0);
  for (size_t i = 0; i < n_valid; ++i) is_valid[order[i]] = 1;

  Corpus train, valid;
  train.labels = corpus.labels;
  valid.labels = corpus.labels;
  for (size_t i = 0; i < n; ++i)
    (is_valid[i] ? valid : train).conversations.push_back(corpus.conversations[i]);
  return {std::move(train), std::move(valid)};
}

}  // namespace aldmn
