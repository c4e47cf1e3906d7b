#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rsvp/common.hpp"

namespace rsvp::features {

namespace fs = std::filesystem;

// Category orders are part of the feature layout (column order inside the
// emotion/LIWC/speech-act groups) and are published in the sidecar.
inline const std::vector<std::string>& emolex_categories() {
  static const std::vector<std::string> c = {"anger",   "anticipation", "disgust",  "fear",     "joy",
                                             "sadness", "surprise",     "trust",    "positive", "negative"};
  return c;
}

inline const std::vector<std::string>& emosentic_categories() {
  static const std::vector<std::string> c = {"anger", "disgust", "fear", "joy", "sadness", "surprise"};
  return c;
}

inline const std::vector<std::string>& liwc_categories() {
  static const std::vector<std::string> c = {"assent", "certain", "effect",  "negate", "inhib",  "you", "cause",
                                             "future", "sad",     "insight", "cogmech", "posemo", "negemo"};
  return c;
}

inline const std::vector<std::string>& speech_act_categories() {
  static const std::vector<std::string> c = {
      "order",    "ask_request", "ask_inquire", "call",    "forbid",  "permit",  "argue",  "reprimand",
      "mock",     "blame",       "accuse",      "attack",  "warn",    "advise",  "offer",  "praise",
      "promise",  "thank",       "forgive",     "complain", "exclaim", "guess",  "hint",   "conclude",
      "tell",     "inform",      "sum_up",      "admit",   "assert",  "confirm", "stress", "declare",
      "baptize",  "remark",      "answer",      "discuss", "talk"};
  return c;
}

// One scored or flagged lexicon: word -> fixed-arity value row. The TSV
// carries "# arity: k" in its header; word lists use arity 0.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(int arity) : arity_(arity) {}

  int arity() const { return arity_; }
  size_t size() const { return entries_.size(); }
  bool contains(const std::string& lower_word) const { return entries_.count(lower_word) > 0; }

  const std::vector<double>* find(const std::string& lower_word) const {
    auto it = entries_.find(lower_word);
    return it == entries_.end() ? nullptr : &it->second;
  }

  void insert(const std::string& word, std::vector<double> values) {
    if (int(values.size()) != arity_)
      throw ConfigError("lexicon entry '" + word + "' has arity " + std::to_string(values.size()) +
                        ", expected " + std::to_string(arity_));
    entries_[to_lower(word)] = std::move(values);
  }

  static Lexicon load(const fs::path& path, int expected_arity) {
    std::ifstream in(path);
    if (!in) throw ConfigError("missing lexicon file: " + path.string());
    Lexicon lex;
    lex.arity_ = -1;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line[0] == '#') {
        auto pos = line.find("arity:");
        if (pos != std::string::npos) lex.arity_ = std::stoi(line.substr(pos + 6));
        continue;
      }
      if (lex.arity_ < 0)
        throw ConfigError("lexicon file lacks '# arity: k' header: " + path.string());
      std::vector<std::string> cols;
      std::string col;
      std::istringstream ss(line);
      while (std::getline(ss, col, '\t')) cols.push_back(col);
      if (cols.empty() || int(cols.size()) != lex.arity_ + 1)
        throw ConfigError("lexicon " + path.string() + " line " + std::to_string(line_no) + ": expected " +
                          std::to_string(lex.arity_ + 1) + " columns, got " + std::to_string(cols.size()));
      std::vector<double> values;
      for (size_t i = 1; i < cols.size(); ++i) values.push_back(std::stod(cols[i]));
      lex.insert(cols[0], std::move(values));
    }
    if (lex.arity_ != expected_arity)
      throw ConfigError("lexicon " + path.string() + " declares arity " + std::to_string(lex.arity_) +
                        ", expected " + std::to_string(expected_arity));
    return lex;
  }

 private:
  int arity_ = 0;
  std::map<std::string, std::vector<double>> entries_;
};

struct LexiconSet {
  Lexicon affective_norms;   // ANEW-style, 3 scores per word
  Lexicon dict_of_affect;    // DAL-style, 3 scores per word
  Lexicon valence_sentiment; // AFINN-style, 1 integer score per word
  Lexicon emotion_8p2;       // 10 flags per word
  Lexicon emotion_6;         // 6 flags per word
  Lexicon liwc_13;           // 13 category flags per word
  Lexicon speech_act_37;     // 37 category flags per verb
  Lexicon cue_words;         // word lists, arity 0
  Lexicon swear_words;
  Lexicon rumor_words;
  Lexicon uncertainty_words;
  Lexicon false_synonyms;
  Lexicon false_antonyms;
  Lexicon question_words;

  static LexiconSet load(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("lexicon directory not found: " + dir.string());
    LexiconSet s;
    s.affective_norms = Lexicon::load(dir / "anew.tsv", 3);
    s.dict_of_affect = Lexicon::load(dir / "dal.tsv", 3);
    s.valence_sentiment = Lexicon::load(dir / "afinn.tsv", 1);
    s.emotion_8p2 = Lexicon::load(dir / "emolex.tsv", 10);
    s.emotion_6 = Lexicon::load(dir / "emosenticnet.tsv", 6);
    s.liwc_13 = Lexicon::load(dir / "liwc.tsv", 13);
    s.speech_act_37 = Lexicon::load(dir / "speech_act.tsv", 37);
    s.cue_words = Lexicon::load(dir / "cue_words.tsv", 0);
    s.swear_words = Lexicon::load(dir / "swear_words.tsv", 0);
    s.rumor_words = Lexicon::load(dir / "rumor_words.tsv", 0);
    s.uncertainty_words = Lexicon::load(dir / "uncertainty_words.tsv", 0);
    s.false_synonyms = Lexicon::load(dir / "false_synonyms.tsv", 0);
    s.false_antonyms = Lexicon::load(dir / "false_antonyms.tsv", 0);
    s.question_words = Lexicon::load(dir / "question_words.tsv", 0);
    return s;
  }
};

// ---------------------------------------------------------------------------
// Word embeddings, fixed 300 dimensions, zero vector for OOV.

class EmbeddingTable {
 public:
  static constexpr int kDim = 300;

  EmbeddingTable() = default;

  void insert(const std::string& word, std::vector<double> vec) {
    if (int(vec.size()) != kDim)
      throw ConfigError("embedding for '" + word + "' has " + std::to_string(vec.size()) +
                        " dims, expected " + std::to_string(kDim));
    table_[to_lower(word)] = std::move(vec);
  }

  const std::vector<double>* find(const std::string& lower_word) const {
    auto it = table_.find(lower_word);
    return it == table_.end() ? nullptr : &it->second;
  }

  size_t size() const { return table_.size(); }

  // Mean vector over in-table words; no hits yields the zero vector.
  std::vector<double> mean_of(const std::vector<std::string>& lower_words) const {
    std::vector<double> acc(kDim, 0.0);
    int hits = 0;
    for (const auto& w : lower_words) {
      const auto* v = find(w);
      if (!v) continue;
      ++hits;
      for (int d = 0; d < kDim; ++d) acc[size_t(d)] += (*v)[size_t(d)];
    }
    if (hits > 0)
      for (double& x : acc) x /= double(hits);
    return acc;
  }

  // File format: "word v1 ... v300", one word per line.
  static EmbeddingTable load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("missing embeddings file: " + path.string());
    EmbeddingTable table;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      auto parts = split_whitespace(line);
      if (int(parts.size()) != kDim + 1)
        throw ConfigError("embeddings " + path.string() + " line " + std::to_string(line_no) + ": expected " +
                          std::to_string(kDim + 1) + " fields, got " + std::to_string(parts.size()));
      std::vector<double> vec;
      vec.reserve(kDim);
      for (int d = 0; d < kDim; ++d) vec.push_back(std::stod(parts[size_t(d) + 1]));
      table.insert(parts[0], std::move(vec));
    }
    return table;
  }

 private:
  std::map<std::string, std::vector<double>> table_;
};

// Cosine with either vector zero is 0 by convention; output clamped to [-1, 1].
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InternalError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::max(-1.0, std::min(1.0, c));
}

}  // namespace rsvp::features
