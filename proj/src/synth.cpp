#include "aldmn/synth.hpp"

#include <algorithm>
#include <sstream>

namespace aldmn {

namespace {

const std::vector<std::string> kAmbiguous = {"yeah",  "right", "uh huh",
                                             "sure",  "true",  "yeah right"};
const std::vector<std::string> kNouns = {"bus",    "train",  "report", "meeting",
                                         "garden", "kitchen", "movie",  "game"};
const std::vector<std::string> kVerbs = {"was", "got", "ran", "looked", "seemed"};
const std::vector<std::string> kTails = {"late", "long", "fine", "busy", "ready", "slow"};
const std::vector<std::string> kOpVerbs = {"think", "believe", "feel", "guess"};
const std::vector<std::string> kJudges = {"great", "awful", "overrated", "useful",
                                          "boring"};
const std::vector<std::string> kQWords = {"what", "when", "where", "who"};
const std::vector<std::string> kQBodies = {"time is it", "did you go", "is the meeting",
                                           "took the report"};
const std::vector<std::string> kAnswers = {"at noon", "yesterday", "in the office",
                                           "the manager", "around five"};
const std::vector<std::string> kFarewells = {"bye", "see you", "good night"};
const std::vector<std::string> kGreetings = {"hello there", "hi"};
const std::vector<std::string> kFillers = {"well", "so", "um", "uh"};
const std::vector<std::string> kNoise = {"um", "uh", "well", "so", "hmm", "er"};

const std::string& pick(const std::vector<std::string>& bank, Rng& rng) {
  return bank[rng.index(bank.size())];
}

std::vector<std::string> split_words(const std::string& phrase) {
  std::vector<std::string> out;
  std::istringstream in(phrase);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

enum Act {
  kStatement = 0,
  kOpinion = 1,
  kBackchannel = 2,
  kAgreement = 3,
  kQuestion = 4,
  kAnswer = 5,
  kFarewell = 6,
  kGreeting = 7,
};

std::vector<std::string> surface(int act, int n_acts, Rng& rng) {
  std::vector<std::string> tokens;
  const bool filler = (act == kStatement || act == kOpinion || act == kQuestion ||
                       act == kAnswer) &&
                      rng.bernoulli(0.3);
  if (filler) tokens.push_back(pick(kFillers, rng));
  switch (act) {
    case kStatement:
      tokens.push_back("the");
      tokens.push_back(pick(kNouns, rng));
      tokens.push_back(pick(kVerbs, rng));
      tokens.push_back(pick(kTails, rng));
      break;
    case kOpinion: {
      tokens.push_back("i");
      tokens.push_back(pick(kOpVerbs, rng));
      tokens.push_back("the");
      tokens.push_back(pick(kNouns, rng));
      tokens.push_back("is");
      tokens.push_back(pick(kJudges, rng));
      break;
    }
    case kBackchannel:
    case kAgreement: {
      // one shared bank, drawn the same way for both labels
      for (auto& w : split_words(pick(kAmbiguous, rng))) tokens.push_back(w);
      break;
    }
    case kQuestion: {
      tokens.push_back(pick(kQWords, rng));
      for (auto& w : split_words(pick(kQBodies, rng))) tokens.push_back(w);
      tokens.push_back("?");
      break;
    }
    case kAnswer:
      for (auto& w : split_words(pick(kAnswers, rng))) tokens.push_back(w);
      break;
    case kFarewell:
      for (auto& w : split_words(pick(kFarewells, rng))) tokens.push_back(w);
      break;
    case kGreeting:
      for (auto& w : split_words(pick(kGreetings, rng))) tokens.push_back(w);
      break;
    default: {  // uniquely-worded filler acts
      tokens.push_back("topic" + std::to_string(act));
      tokens.push_back(rng.bernoulli(0.5) ? "alpha" : "beta");
      break;
    }
  }
  (void)n_acts;
  return tokens;
}

}  // namespace

std::vector<std::string> synth_act_names(int n_acts) {
  if (n_acts < 4) throw DataError("synth: need at least 4 acts");
  std::vector<std::string> names = {"statement", "opinion", "backchannel", "agreement",
                                    "question",  "answer",  "farewell",    "greeting"};
  while (static_cast<int>(names.size()) < n_acts)
    names.push_back("topic" + std::to_string(names.size()));
  names.resize(static_cast<size_t>(n_acts));
  return names;
}

std::vector<std::string> synth_context_dependent_acts() {
  return {"backchannel", "agreement"};
}

Corpus synth_corpus(uint64_t seed, int n_conversations, int n_acts) {
  if (n_conversations < 1) throw DataError("synth: need at least one conversation");
  Corpus corpus;
  corpus.labels = synth_act_names(n_acts);
  const bool has_question = n_acts > kQuestion;
  const bool has_answer = n_acts > kAnswer;
  const bool has_farewell = n_acts > kFarewell;
  const bool has_greeting = n_acts > kGreeting;
  const int n_extra = std::max(0, n_acts - 8);
  Rng rng(seed);

  for (int c = 0; c < n_conversations; ++c) {
    Conversation conv;
    conv.id = "synth" + std::to_string(c);
    const int n_utts = 6 + static_cast<int>(rng.index(7));
    int prev = -1;
    for (int u = 0; u < n_utts; ++u) {
      int act;
      if (has_greeting && u == 0) {
        act = kGreeting;
      } else if (has_farewell && u == n_utts - 1) {
        act = kFarewell;
      } else if (prev == kQuestion && has_answer) {
        act = kAnswer;
      } else if (prev == kStatement && rng.bernoulli(0.4)) {
        act = kBackchannel;
      } else if (prev == kOpinion && rng.bernoulli(0.4)) {
        act = kAgreement;
      } else if (n_extra > 0 && rng.bernoulli(0.08)) {
        act = 8 + static_cast<int>(rng.index(static_cast<size_t>(n_extra)));
      } else if (has_question && u + 1 < n_utts && rng.bernoulli(0.12)) {
        act = kQuestion;
      } else {
        act = rng.bernoulli(0.5) ? kStatement : kOpinion;
      }
      Utterance utt;
      utt.speaker = u % 2 ? "B" : "A";
      utt.label = act;
      utt.tokens = surface(act, n_acts, rng);
      conv.utterances.push_back(std::move(utt));
      prev = act;
    }
    corpus.conversations.push_back(std::move(conv));
  }
  return corpus;
}

Corpus apply_token_noise(const Corpus& corpus, double rate, uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw DataError("noise rate must lie in [0, 1]");
  Corpus noisy = corpus;
  Rng rng(seed);
  for (auto& conv : noisy.conversations)
    for (auto& utt : conv.utterances)
      for (auto& tok : utt.tokens)
        if (rng.bernoulli(rate)) tok = pick(kNoise, rng);
  return noisy;
}

}  // namespace aldmn
