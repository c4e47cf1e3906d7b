#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "rsvp/common.hpp"

namespace rsvp::features {

// 36 Penn Treebank tags plus the catch-all X, in fixed alphabetical order.
// The order is part of the feature layout and is published in the sidecar.
inline constexpr int kPosTagCount = 37;

inline const std::array<const char*, kPosTagCount>& pos_tag_names() {
  static const std::array<const char*, kPosTagCount> names = {
      "CC",  "CD",  "DT",  "EX",  "FW",  "IN",  "JJ",  "JJR", "JJS", "LS",   "MD",  "NN", "NNP",
      "NNPS", "NNS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP",  "SYM", "TO", "UH",
      "VB",  "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT", "WP",  "WP$", "WRB", "X"};
  return names;
}

enum class PosTag : int {
  CC = 0, CD, DT, EX, FW, IN, JJ, JJR, JJS, LS, MD, NN, NNP, NNPS, NNS, PDT, POS, PRP, PRPS,
  RB, RBR, RBS, RP, SYM, TO, UH, VB, VBD, VBG, VBN, VBP, VBZ, WDT, WP, WPS, WRB, X
};

namespace detail {

inline const std::map<std::string, PosTag>& closed_class() {
  static const std::map<std::string, PosTag> m = [] {
    std::map<std::string, PosTag> t;
    auto put = [&](std::initializer_list<const char*> words, PosTag tag) {
      for (const char* w : words) t[w] = tag;
    };
    put({"and", "or", "but", "nor", "yet", "so", "plus"}, PosTag::CC);
    put({"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "hundred",
         "thousand", "million", "billion"},
        PosTag::CD);
    put({"the", "a", "an", "this", "that", "these", "those", "each", "every", "some", "any", "no",
         "all", "both", "another"},
        PosTag::DT);
    put({"there"}, PosTag::EX);
    put({"de", "la", "le", "el", "von", "der"}, PosTag::FW);
    put({"in", "on", "at", "by", "for", "with", "about", "against", "of", "from", "into", "over",
         "under", "after", "before", "between", "during", "without", "within", "through", "since",
         "until", "near", "off", "if", "because", "while", "although", "though", "unless",
         "whereas", "as", "than", "per", "via", "despite", "toward", "towards", "upon", "onto"},
        PosTag::IN);
    put({"can", "could", "may", "might", "must", "shall", "should", "will", "would", "can't",
         "won't", "shouldn't", "wouldn't", "couldn't", "cannot"},
        PosTag::MD);
    put({"quite", "rather", "such", "half"}, PosTag::PDT);
    put({"'s"}, PosTag::POS);
    put({"i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "myself",
         "yourself", "himself", "herself", "itself", "ourselves", "yourselves", "themselves",
         "someone", "anyone", "everyone", "nobody", "i'm", "you're", "we're", "they're", "it's"},
        PosTag::PRP);
    put({"my", "your", "his", "her", "its", "our", "their", "mine", "yours", "hers", "ours",
         "theirs"},
        PosTag::PRPS);
    put({"very", "too", "also", "now", "then", "here", "never", "always", "often", "soon", "again",
         "really", "just", "still", "even", "maybe", "perhaps", "possibly", "not", "n't",
         "already", "today", "tomorrow", "yesterday", "well", "seriously", "totally"},
        PosTag::RB);
    put({"more", "less"}, PosTag::RBR);
    put({"most", "least"}, PosTag::RBS);
    put({"up", "down", "out", "away", "back"}, PosTag::RP);
    put({"to"}, PosTag::TO);
    put({"oh", "wow", "hey", "hi", "hello", "yes", "yeah", "ah", "ouch", "oops", "hmm", "huh",
         "lol", "omg", "wtf"},
        PosTag::UH);
    put({"be", "say", "tell", "ask", "go", "do", "make", "see", "know", "think", "get", "take",
         "give", "find", "want", "look", "use", "work", "call", "need", "believe", "confirm",
         "deny", "claim", "report", "promise", "order", "warn", "blame", "praise", "thank",
         "admit", "assert", "declare", "guess", "hope", "agree", "read", "write", "run", "happen",
         "spread", "lie", "post", "share", "check", "verify", "stop", "live", "quit", "land",
         "let's"},
        PosTag::VB);
    put({"is", "has", "does", "doesn't", "isn't", "hasn't", "says"}, PosTag::VBZ);
    put({"are", "am", "have", "aren't", "don't", "haven't"}, PosTag::VBP);
    put({"was", "were", "had", "did", "didn't", "wasn't", "weren't", "hadn't", "made", "said",
         "told", "got", "went", "saw"},
        PosTag::VBD);
    put({"been", "done", "gone", "seen", "taken", "given", "known", "shown", "found", "broken",
         "written", "chosen", "hidden", "fallen", "born"},
        PosTag::VBN);
    put({"being"}, PosTag::VBG);
    put({"good", "bad", "true", "false", "fake", "real", "new", "old", "big", "small", "many",
         "few", "much", "sure", "certain", "unconfirmed", "unverified", "official", "secret",
         "unclear", "interesting", "right", "wrong", "great", "terrible", "awful", "nice",
         "happy", "sad", "little", "large", "high", "low", "free", "full", "early", "late",
         "important", "serious", "weird", "strange", "crazy", "other", "same", "next", "last",
         "exact"},
        PosTag::JJ);
    put({"which", "whatever", "whichever"}, PosTag::WDT);
    put({"who", "whom", "what"}, PosTag::WP);
    put({"whose"}, PosTag::WPS);
    put({"where", "when", "why", "how"}, PosTag::WRB);
    put({"that's"}, PosTag::DT);
    return t;
  }();
  return m;
}

inline const std::map<std::string, PosTag>& verb_base() {
  static const std::map<std::string, PosTag> m = [] {
    std::map<std::string, PosTag> t;
    for (const auto& [w, tag] : closed_class())
      if (tag == PosTag::VB) t[w] = tag;
    return t;
  }();
  return m;
}

inline bool all_digits_punct(const std::string& w) {
  bool any_digit = false;
  for (char c : w) {
    if (c >= '0' && c <= '9') any_digit = true;
    else if (c != '.' && c != ',' && c != ':' && c != '%') return false;
  }
  return any_digit;
}

inline bool has_alnum(const std::string& w) {
  for (char c : w)
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')) return true;
  return false;
}

inline bool ends_with(const std::string& w, const char* suffix) {
  std::string_view s(suffix);
  return w.size() >= s.size() && std::string_view(w).substr(w.size() - s.size()) == s;
}

}  // namespace detail

// Deterministic context-free tagger: closed-class lookup, then morphology,
// then capitalization, defaulting to NN. Frozen so goldens stay bit-exact.
inline PosTag tag_word(const std::string& word) {
  if (word.empty()) return PosTag::X;
  if (word == "$URL$" || word == "$mention$" || word == "$deleted$" || word == "[EOS]") return PosTag::X;
  if (!detail::has_alnum(word)) {
    for (char c : word)
      if (std::string("$%^&+=<>|~#").find(c) != std::string::npos) return PosTag::SYM;
    return PosTag::X;
  }
  if (detail::all_digits_punct(word)) return PosTag::CD;

  std::string lower = to_lower(word);
  auto it = detail::closed_class().find(lower);
  if (it != detail::closed_class().end()) return it->second;

  if (detail::ends_with(lower, "ly") && lower.size() >= 4) return PosTag::RB;
  if (detail::ends_with(lower, "est") && lower.size() >= 5) return PosTag::JJS;
  if (detail::ends_with(lower, "ing") && lower.size() >= 5) return PosTag::VBG;
  if (detail::ends_with(lower, "ed") && lower.size() >= 4) return PosTag::VBD;
  if (detail::ends_with(lower, "er") && lower.size() >= 4) return PosTag::JJR;
  bool capitalized = word[0] >= 'A' && word[0] <= 'Z';
  if (detail::ends_with(lower, "s") && !detail::ends_with(lower, "ss") && lower.size() >= 3) {
    std::string base = lower.substr(0, lower.size() - 1);
    if (detail::verb_base().count(base)) return PosTag::VBZ;
    return capitalized ? PosTag::NNPS : PosTag::NNS;
  }
  if (capitalized) return PosTag::NNP;
  return PosTag::NN;
}

inline std::vector<double> pos_presence(const std::vector<std::string>& words) {
  std::vector<double> flags(kPosTagCount, 0.0);
  for (const auto& w : words) flags[size_t(int(tag_word(w)))] = 1.0;
  return flags;
}

}  // namespace rsvp::features
