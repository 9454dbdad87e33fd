#pragma once

#include <string>
#include <unordered_map>

#include "aldmn/corpus.hpp"

namespace aldmn {

// One `raw<TAB>mapped` pair per line; blank lines and lines starting with
// '#' are skipped.
std::unordered_map<std::string, std::string> load_label_map(const std::string& path);

// Rewrites every label through the map, collapsing classes that share a
// target. The rebuilt label set is in first-appearance order. A tag missing
// from the map is an error, never silently passed through.
Corpus remap_labels(const Corpus& corpus,
                    const std::unordered_map<std::string, std::string>& label_map);

// Parses a CSV export with a header row. Column names are matched
// case-insensitively against common aliases: conversation id
// (conversation_id, conversation_no, dialogue_id, conv_id), speaker
// (speaker, caller, participant), act (act_tag, act, label, da_tag, tag),
// and text (text, clean_text, utterance, transcript). Consecutive rows with
// the same conversation id form one conversation.
Corpus load_csv_corpus(const std::string& path);

// Accepts either a CSV export or a file already in conversation format; the
// latter passes through unchanged, so repeated conversion is stable. The
// label map, when given, is applied to whichever was read.
Corpus convert_corpus(const std::string& path,
                      const std::unordered_map<std::string, std::string>* label_map);

}  // namespace aldmn
