#include "aldmn/convert.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>

namespace aldmn {

std::unordered_map<std::string, std::string> load_label_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map: " + path);
  std::unordered_map<std::string, std::string> map;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected raw<TAB>mapped");
    map[line.substr(0, tab)] = line.substr(tab + 1);
  }
  if (map.empty()) throw DataError("label map is empty: " + path);
  return map;
}

Corpus remap_labels(const Corpus& corpus,
                    const std::unordered_map<std::string, std::string>& label_map) {
  Corpus out = corpus;
  out.labels.clear();
  std::unordered_map<std::string, int> index;
  for (auto& conv : out.conversations)
    for (auto& utt : conv.utterances) {
      const std::string& raw = corpus.labels[static_cast<size_t>(utt.label)];
      auto hit = label_map.find(raw);
      if (hit == label_map.end())
        throw DataError("label map has no entry for tag '" + raw + "'");
      auto [slot, fresh] = index.try_emplace(hit->second, static_cast<int>(out.labels.size()));
      if (fresh) out.labels.push_back(hit->second);
      utt.label = slot->second;
    }
  return out;
}

namespace {

// Quote-aware CSV records; fields may contain commas, escaped quotes, and
// newlines inside quotes. CRLF and a missing final newline are tolerated.
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  auto end_field = [&]() {
    record.push_back(field);
    field.clear();
  };
  auto end_record = [&]() {
    end_field();
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) records.push_back(record);
    record.clear();
  };
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get(c);
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_record();
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError(path + ": unterminated quote");
  if (!field.empty() || !record.empty()) end_record();
  if (!any || records.empty()) throw DataError(path + ": empty file");
  return records;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

int find_column(const std::vector<std::string>& header,
                const std::vector<std::string>& aliases) {
  for (size_t i = 0; i < header.size(); ++i) {
    const std::string name = lower(header[i]);
    for (const auto& alias : aliases)
      if (name == alias) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

Corpus load_csv_corpus(const std::string& path) {
  auto records = read_csv(path);
  const auto& header = records[0];
  const int id_col =
      find_column(header, {"conversation_id", "conversation_no", "dialogue_id", "conv_id"});
  const int speaker_col = find_column(header, {"speaker", "caller", "participant"});
  const int act_col = find_column(header, {"act_tag", "act", "label", "da_tag", "tag"});
  const int text_col = find_column(header, {"text", "clean_text", "utterance", "transcript"});
  if (id_col < 0 || speaker_col < 0 || act_col < 0 || text_col < 0)
    throw DataError(path +
                    ": header must name a conversation id, speaker, act, and text column");

  Corpus corpus;
  std::unordered_map<std::string, int> label_index;
  std::string current_id;
  for (size_t r = 1; r < records.size(); ++r) {
    const auto& row = records[r];
    const size_t need = static_cast<size_t>(
        std::max(std::max(id_col, speaker_col), std::max(act_col, text_col)));
    if (row.size() <= need)
      throw DataError(path + ": record " + std::to_string(r + 1) + " has " +
                      std::to_string(row.size()) + " fields, needs at least " +
                      std::to_string(need + 1));
    const std::string& conv_id = row[static_cast<size_t>(id_col)];
    if (corpus.conversations.empty() || conv_id != current_id) {
      corpus.conversations.push_back({conv_id, {}});
      current_id = conv_id;
    }
    Utterance utt;
    utt.speaker = row[static_cast<size_t>(speaker_col)];
    utt.tokens = normalize_and_tokenize(row[static_cast<size_t>(text_col)]);
    if (utt.tokens.empty()) {
      std::cerr << "warning: " << path << ": record " << r + 1
                << " is empty after normalization, dropped\n";
      continue;
    }
    const std::string& tag = row[static_cast<size_t>(act_col)];
    auto [slot, fresh] =
        label_index.try_emplace(tag, static_cast<int>(corpus.labels.size()));
    if (fresh) corpus.labels.push_back(tag);
    utt.label = slot->second;
    corpus.conversations.back().utterances.push_back(std::move(utt));
  }

  // a conversation of only dropped rows must not survive as an empty shell
  std::erase_if(corpus.conversations,
                [](const Conversation& c) { return c.utterances.empty(); });
  if (corpus.conversations.empty()) throw DataError(path + ": no utterances");
  return corpus;
}

Corpus convert_corpus(const std::string& path,
                      const std::unordered_map<std::string, std::string>* label_map) {
  Corpus corpus;
  try {
    corpus = load_corpus(path);  // already converted: pass through
  } catch (const DataError&) {
    corpus = load_csv_corpus(path);
  }
  if (label_map) corpus = remap_labels(corpus, *label_map);
  return corpus;
}

}  // namespace aldmn
