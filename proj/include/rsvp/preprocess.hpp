#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "rsvp/common.hpp"
#include "rsvp/corpus.hpp"

namespace rsvp::text {

namespace fs = std::filesystem;

inline constexpr const char* kPad = "[PAD]";
inline constexpr const char* kCls = "[CLS]";
inline constexpr const char* kSep = "[SEP]";
inline constexpr const char* kEos = "[EOS]";
inline constexpr const char* kUrl = "$URL$";
inline constexpr const char* kMention = "$mention$";
inline constexpr const char* kDeleted = "$deleted$";

inline const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {kPad, kCls, kSep, kEos, kUrl, kMention, kDeleted};
  return specials;
}

// ---------------------------------------------------------------------------
// Text normalization: URL/mention replacement, sentence [EOS] markers,
// whitespace collapse. Idempotent; empty input becomes the deleted token.

namespace detail {

inline const std::regex& url_regex() {
  static const std::regex re(R"((https?://[^\s]+|www\.[^\s]+|pic\.twitter\.com/[^\s]+))");
  return re;
}

inline const std::regex& mention_regex() {
  static const std::regex re(R"(@[A-Za-z0-9_]+)");
  return re;
}

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace detail

inline std::string normalize(const std::string& raw) {
  // Newlines are sentence boundaries, so split into lines before any
  // whitespace collapsing can erase them.
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char c : raw) {
      if (c == '\n' || c == '\r') {
        lines.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    lines.push_back(cur);
  }

  std::vector<std::string> sentences;
  for (const auto& line : lines) {
    // Strip existing sentence markers so repeated normalization is a no-op.
    std::string stripped;
    for (const auto& tok : split_whitespace(line)) {
      if (tok == kEos) continue;
      if (!stripped.empty()) stripped += ' ';
      stripped += tok;
    }
    std::string replaced = std::regex_replace(stripped, detail::url_regex(), kUrl);
    replaced = std::regex_replace(replaced, detail::mention_regex(), kMention);

    // Runs of {., !, ?} terminate a sentence and stay attached to it.
    std::string cur;
    for (size_t i = 0; i < replaced.size(); ++i) {
      cur += replaced[i];
      if (detail::is_terminator(replaced[i]) &&
          (i + 1 == replaced.size() || !detail::is_terminator(replaced[i + 1]))) {
        sentences.push_back(cur);
        cur.clear();
      }
    }
    if (!cur.empty()) sentences.push_back(cur);
  }

  std::string out;
  for (auto& s : sentences) {
    auto words = split_whitespace(s);
    if (words.empty()) continue;
    for (const auto& w : words) {
      if (!out.empty()) out += ' ';
      out += w;
    }
    out += ' ';
    out += kEos;
  }
  if (out.empty()) return std::string(kDeleted) + " " + kEos;
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary: [PAD] is id 0, specials first, then corpus tokens. Word-level
// units with single-character fallback for out-of-vocabulary words.

class Vocabulary {
 public:
  Vocabulary() = default;

  int add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    int id = int(id_to_token_.size());
    token_to_id_[token] = id;
    id_to_token_.push_back(token);
    return id;
  }

  int id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
  }

  const std::string& token_of(int id) const { return id_to_token_.at(size_t(id)); }
  int size() const { return int(id_to_token_.size()); }

  int pad_id() const { return 0; }
  int cls_id() const { return must(kCls); }
  int sep_id() const { return must(kSep); }
  int eos_id() const { return must(kEos); }

  uint64_t content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : id_to_token_) {
      h = fnv1a64(t, h);
      h = fnv1a64("\n", h);
    }
    return h;
  }

  // One token per line, line number = id. Lines starting with '#' are
  // comments; literal tokens beginning with '#' or '\' are escaped with '\'.
  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write vocabulary file: " + path.string());
    out << "# vocabulary, one token per line, line number = id\n";
    for (const auto& t : id_to_token_) {
      if (!t.empty() && (t[0] == '#' || t[0] == '\\')) out << '\\';
      out << t << "\n";
    }
  }

  static Vocabulary load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read vocabulary file: " + path.string());
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line[0] == '#') continue;
      if (!line.empty() && line[0] == '\\') line = line.substr(1);
      v.add(line);
    }
    if (v.size() == 0 || v.id_to_token_[0] != kPad)
      throw IngestError("vocabulary file does not start with " + std::string(kPad) + ": " + path.string());
    return v;
  }

 private:
  int must(const std::string& token) const {
    int id = id_of(token);
    if (id < 0) throw InternalError("vocabulary lacks special token " + token);
    return id;
  }

  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

namespace detail {

inline bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '\'' || c == '_';
}

// Splits one whitespace-delimited unit into word runs and single punctuation
// characters. Special tokens pass through whole.
inline std::vector<std::string> subsplit(const std::string& unit) {
  for (const auto& s : special_tokens())
    if (unit == s) return {unit};
  std::vector<std::string> out;
  std::string cur;
  for (char c : unit) {
    if (is_word_char(c)) {
      cur += c;
    } else {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
      out.push_back(std::string(1, c));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

// Tokens a vocabulary is built from: the exact units tokenize() will look up.
inline std::vector<std::string> word_units(const std::string& normalized) {
  std::vector<std::string> out;
  for (const auto& unit : split_whitespace(normalized))
    for (auto& piece : detail::subsplit(unit)) out.push_back(std::move(piece));
  return out;
}

// Vocabulary over the given normalized texts: specials, printable ASCII
// single characters (the OOV fallback alphabet), then corpus units by
// descending frequency with lexicographic tiebreak.
inline Vocabulary build_vocab(const std::vector<std::string>& normalized_texts) {
  Vocabulary v;
  for (const auto& s : special_tokens()) v.add(s);
  for (char c = 33; c < 127; ++c) v.add(std::string(1, c));

  std::map<std::string, long> counts;
  for (const auto& text : normalized_texts)
    for (const auto& unit : word_units(text)) ++counts[unit];

  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [token, n] : ranked) v.add(token);
  return v;
}

inline Vocabulary build_vocab(const corpus::Dataset& ds) {
  std::vector<std::string> texts;
  for (const auto& t : ds.threads)
    for (const auto& p : t.posts) texts.push_back(normalize(p.raw_text));
  return build_vocab(texts);
}

// Deterministic id sequence; unknown units decompose into characters and
// characters outside the vocabulary are dropped.
inline std::vector<int> tokenize(const std::string& normalized, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& unit : word_units(normalized)) {
    int id = vocab.id_of(unit);
    if (id >= 0) {
      ids.push_back(id);
      continue;
    }
    for (char c : unit) {
      int cid = vocab.id_of(std::string(1, c));
      if (cid >= 0) ids.push_back(cid);
    }
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Whole-conversation assembly and post-level sliding windows

struct TokenizedThread {
  std::vector<int> token_ids;
  std::vector<int> cls_positions;        // one per post, ascending
  std::vector<int> post_index_of_token;  // thread-level post index per token
  int attention_len = 0;

  int n_posts() const { return int(cls_positions.size()); }
  int first_post() const { return post_index_of_token.at(size_t(cls_positions.front())); }
  int last_post() const { return post_index_of_token.at(size_t(cls_positions.back())); }

  void validate(const Vocabulary& vocab) const {
    if (token_ids.size() != post_index_of_token.size())
      throw InternalError("token/post-index length mismatch");
    if (attention_len != int(token_ids.size())) throw InternalError("attention_len mismatch");
    for (size_t i = 1; i < cls_positions.size(); ++i)
      if (cls_positions[i] <= cls_positions[i - 1]) throw InternalError("cls_positions not ascending");
    for (int p : cls_positions)
      if (token_ids.at(size_t(p)) != vocab.cls_id()) throw InternalError("cls position does not hold [CLS]");
  }
};

// [CLS] post tokens [SEP] per post, posts in temporal order. Intra-post [EOS]
// markers stay inside the [CLS]..[SEP] span.
inline TokenizedThread assemble(const corpus::ConversationThread& thread, const Vocabulary& vocab) {
  if (thread.posts.empty()) throw InternalError("assemble: empty thread");
  TokenizedThread tt;
  for (size_t pi = 0; pi < thread.posts.size(); ++pi) {
    tt.cls_positions.push_back(int(tt.token_ids.size()));
    tt.token_ids.push_back(vocab.cls_id());
    tt.post_index_of_token.push_back(int(pi));
    for (int id : tokenize(normalize(thread.posts[pi].raw_text), vocab)) {
      tt.token_ids.push_back(id);
      tt.post_index_of_token.push_back(int(pi));
    }
    tt.token_ids.push_back(vocab.sep_id());
    tt.post_index_of_token.push_back(int(pi));
  }
  tt.attention_len = int(tt.token_ids.size());
  return tt;
}

namespace detail {

inline TokenizedThread slice_posts(const TokenizedThread& tt, int first_post, int last_post) {
  int start = tt.cls_positions.at(size_t(first_post));
  int end = (last_post + 1 < tt.n_posts()) ? tt.cls_positions.at(size_t(last_post + 1)) : int(tt.token_ids.size());
  TokenizedThread w;
  w.token_ids.assign(tt.token_ids.begin() + start, tt.token_ids.begin() + end);
  w.post_index_of_token.assign(tt.post_index_of_token.begin() + start, tt.post_index_of_token.begin() + end);
  for (int p = first_post; p <= last_post; ++p) w.cls_positions.push_back(tt.cls_positions[size_t(p)] - start);
  w.attention_len = int(w.token_ids.size());
  return w;
}

}  // namespace detail

// Post-level sliding windows: grow a window one post at a time, evicting from
// the source end whenever the token budget is exceeded. Post boundaries are
// never split and every post lands in at least one window.
inline std::vector<TokenizedThread> window_split(const TokenizedThread& tt, int max_len) {
  if (max_len < 1) throw ConfigError("window_split: max_len must be positive");
  int n = tt.n_posts();
  std::vector<int> starts(static_cast<size_t>(n));
  std::vector<int> ends(static_cast<size_t>(n));
  for (int p = 0; p < n; ++p) {
    starts[size_t(p)] = tt.cls_positions[size_t(p)];
    ends[size_t(p)] = (p + 1 < n) ? tt.cls_positions[size_t(p + 1)] : int(tt.token_ids.size());
    if (ends[size_t(p)] - starts[size_t(p)] > max_len)
      throw ConfigError("window_split: post " + std::to_string(p) + " has " +
                        std::to_string(ends[size_t(p)] - starts[size_t(p)]) + " tokens, exceeding max_len " +
                        std::to_string(max_len));
  }

  if (int(tt.token_ids.size()) <= max_len) return {tt};

  std::vector<TokenizedThread> windows;
  auto span = [&](int a, int b) { return ends[size_t(b)] - starts[size_t(a)]; };

  int first = 0, last = 0;
  while (last + 1 < n && span(first, last + 1) <= max_len) ++last;
  windows.push_back(detail::slice_posts(tt, first, last));
  for (int p = last + 1; p < n; ++p) {
    while (span(first, p) > max_len) ++first;
    windows.push_back(detail::slice_posts(tt, first, p));
  }
  return windows;
}

}  // namespace rsvp::text
