#pragma once

#include <string>
#include <vector>

#include "aldmn/corpus.hpp"

namespace aldmn {

// Act inventory in id order, sized to n_acts (>= 4). The first four are
// always statement, opinion, backchannel, agreement; question, answer,
// farewell, and greeting join in that order, then uniquely-worded filler
// acts for anything beyond.
std::vector<std::string> synth_act_names(int n_acts);

// The acts whose surface forms are shared verbatim, so only the preceding
// utterance's act disambiguates them: backchannel follows a statement,
// agreement follows an opinion. A model without conversation history sees
// the same distribution for both and is capped at chance between them.
std::vector<std::string> synth_context_dependent_acts();

// Deterministic conversation sampler over a small act grammar. Speakers
// alternate; question/answer adjacency holds whenever both acts exist.
Corpus synth_corpus(uint64_t seed, int n_conversations, int n_acts);

// Replaces each token independently with probability `rate` by a random
// disfluency word; labels and structure stay untouched.
Corpus apply_token_noise(const Corpus& corpus, double rate, uint64_t seed);

}  // namespace aldmn
