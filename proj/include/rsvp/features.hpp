#pragma once

#include <array>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsvp/common.hpp"
#include "rsvp/corpus.hpp"
#include "rsvp/lexicons.hpp"
#include "rsvp/matrix_file.hpp"
#include "rsvp/pos_tags.hpp"
#include "rsvp/preprocess.hpp"

namespace rsvp::features {

using corpus::ConversationThread;
using corpus::Post;

inline constexpr int kStructuralDims = 51;
inline constexpr int kContentDims = 12;
inline constexpr int kConversationalDims = 305;
inline constexpr int kAffectiveDims = 7;
inline constexpr int kEmotionDims = 16;
inline constexpr int kLiwcDims = 13;
inline constexpr int kSpeechActDims = 37;
inline constexpr int kTotalDims = 441;

struct GroupOffsets {
  static constexpr int structural = 0;
  static constexpr int content = 51;
  static constexpr int conversational = 63;
  static constexpr int affective = 368;
  static constexpr int emotion = 375;
  static constexpr int liwc = 391;
  static constexpr int speech_act = 404;
};

static_assert(GroupOffsets::content == GroupOffsets::structural + kStructuralDims);
static_assert(GroupOffsets::conversational == GroupOffsets::content + kContentDims);
static_assert(GroupOffsets::affective == GroupOffsets::conversational + kConversationalDims);
static_assert(GroupOffsets::emotion == GroupOffsets::affective + kAffectiveDims);
static_assert(GroupOffsets::liwc == GroupOffsets::emotion + kEmotionDims);
static_assert(GroupOffsets::speech_act == GroupOffsets::liwc + kLiwcDims);
static_assert(kTotalDims == GroupOffsets::speech_act + kSpeechActDims);

struct FeatureVector {
  std::vector<double> values;  // exactly kTotalDims

  double at(int i) const { return values.at(size_t(i)); }
  std::vector<double> group(int offset, int width) const {
    return {values.begin() + offset, values.begin() + offset + width};
  }
};

namespace detail {

// Raw-text token stream for feature computation; punctuation marks are their
// own tokens, the $...$ specials stay atomic.
inline std::vector<std::string> feature_tokens(const std::string& raw) { return text::word_units(raw); }

inline std::vector<std::string> lower_tokens(const std::string& raw) {
  auto toks = feature_tokens(raw);
  for (auto& t : toks) t = to_lower(t);
  return toks;
}

// Token count with at least one letter or digit; denominator for the
// normalized emotion/LIWC counts.
inline int alnum_word_count(const std::vector<std::string>& tokens) {
  int n = 0;
  for (const auto& t : tokens)
    if (has_alnum(t)) ++n;
  return n;
}

inline const std::set<std::string>& negative_words() {
  static const std::set<std::string> words = {
      "no",      "not",      "never",   "none",    "nobody",   "nothing",  "neither",  "nor",
      "nowhere", "cannot",   "without", "n't",     "can't",    "won't",    "don't",    "doesn't",
      "didn't",  "isn't",    "aren't",  "wasn't",  "weren't",  "haven't",  "hasn't",   "hadn't",
      "shouldn't", "wouldn't", "couldn't"};
  return words;
}

inline const std::regex& url_regex() {
  static const std::regex re(R"((https?://[^\s]+|www\.[^\s]+|pic\.twitter\.com/[^\s]+|\$URL\$))");
  return re;
}

inline bool contains_url(const std::string& raw) { return std::regex_search(raw, url_regex()); }

inline bool contains_media(const Post& post) {
  if (post.author_meta.count("media")) return true;
  std::string lower = to_lower(post.raw_text);
  for (const char* pat : {"pic.twitter.com", ".jpg", ".jpeg", ".png", ".gif", ".mp4", "youtube.com",
                          "youtu.be", "instagram.com"})
    if (lower.find(pat) != std::string::npos) return true;
  return false;
}

inline bool contains_hashtag(const std::string& raw) {
  for (size_t i = 0; i + 1 < raw.size(); ++i)
    if (raw[i] == '#' && (std::isalnum(static_cast<unsigned char>(raw[i + 1])) != 0)) return true;
  return false;
}

inline int char_count(const std::string& raw, char c) {
  return int(std::count(raw.begin(), raw.end(), c));
}

inline long count_hits(const std::vector<std::string>& lower_toks, const Lexicon& list) {
  long n = 0;
  for (const auto& t : lower_toks)
    if (list.contains(t)) ++n;
  return n;
}

inline double presence(const std::vector<std::string>& lower_toks, const Lexicon& list) {
  return count_hits(lower_toks, list) > 0 ? 1.0 : 0.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Structural (51): 37 POS presence flags; presence of exclamation, negative
// word, media, URL, period, question mark, hashtag; char count, word count,
// capital-letter ratio; is-source flag; counts of '!', '?', '.'.

inline std::vector<double> extract_structural(const Post& post, bool is_source) {
  const std::string& raw = post.raw_text;
  auto tokens = detail::feature_tokens(raw);
  std::vector<double> out = pos_presence(tokens);
  out.reserve(kStructuralDims);

  bool has_negative = false;
  for (const auto& t : tokens)
    if (detail::negative_words().count(to_lower(t))) has_negative = true;

  out.push_back(raw.find('!') != std::string::npos ? 1.0 : 0.0);
  out.push_back(has_negative ? 1.0 : 0.0);
  out.push_back(detail::contains_media(post) ? 1.0 : 0.0);
  out.push_back(detail::contains_url(raw) ? 1.0 : 0.0);
  out.push_back(raw.find('.') != std::string::npos ? 1.0 : 0.0);
  out.push_back(raw.find('?') != std::string::npos ? 1.0 : 0.0);
  out.push_back(detail::contains_hashtag(raw) ? 1.0 : 0.0);

  long letters = 0, uppers = 0;
  for (char c : raw) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      ++letters;
      if (c >= 'A' && c <= 'Z') ++uppers;
    }
  }
  out.push_back(double(raw.size()));
  out.push_back(double(tokens.size()));
  out.push_back(double(uppers) / double(std::max<long>(1, letters)));
  out.push_back(is_source ? 1.0 : 0.0);
  out.push_back(double(detail::char_count(raw, '!')));
  out.push_back(double(detail::char_count(raw, '?')));
  out.push_back(double(detail::char_count(raw, '.')));

  if (int(out.size()) != kStructuralDims) throw InternalError("structural feature width drifted");
  return out;
}

// ---------------------------------------------------------------------------
// Content (12): cue/swear presence for the post, then per-lexicon counts and
// presence flags paired as (post, source).

inline std::vector<double> extract_content(const Post& post, const Post& source, const LexiconSet& lex) {
  auto post_toks = detail::lower_tokens(post.raw_text);
  auto src_toks = detail::lower_tokens(source.raw_text);
  std::vector<double> out;
  out.reserve(kContentDims);
  out.push_back(detail::presence(post_toks, lex.cue_words));
  out.push_back(detail::presence(post_toks, lex.swear_words));
  out.push_back(double(detail::count_hits(post_toks, lex.false_synonyms)));
  out.push_back(double(detail::count_hits(src_toks, lex.false_synonyms)));
  out.push_back(double(detail::count_hits(post_toks, lex.false_antonyms)));
  out.push_back(double(detail::count_hits(src_toks, lex.false_antonyms)));
  out.push_back(double(detail::count_hits(post_toks, lex.question_words)));
  out.push_back(double(detail::count_hits(src_toks, lex.question_words)));
  out.push_back(detail::presence(post_toks, lex.rumor_words));
  out.push_back(detail::presence(src_toks, lex.rumor_words));
  out.push_back(detail::presence(post_toks, lex.uncertainty_words));
  out.push_back(detail::presence(src_toks, lex.uncertainty_words));
  if (int(out.size()) != kContentDims) throw InternalError("content feature width drifted");
  return out;
}

// ---------------------------------------------------------------------------
// Conversational (305): mean word embedding of the post over the processed
// text, similarities with source / previous post / the rest of the thread
// (with and without source+previous), and normalized tree depth.

inline std::vector<double> extract_conversational(int post_idx, const ConversationThread& thread,
                                                  const EmbeddingTable& emb) {
  const int n = int(thread.posts.size());
  if (post_idx < 0 || post_idx >= n) throw InternalError("extract_conversational: post index out of range");

  auto processed_tokens = [&](int i) {
    auto toks = text::word_units(text::normalize(thread.posts[size_t(i)].raw_text));
    for (auto& t : toks) t = to_lower(t);
    return toks;
  };

  std::vector<double> e_post = emb.mean_of(processed_tokens(post_idx));
  std::vector<double> e_source = emb.mean_of(processed_tokens(0));

  std::vector<double> out;
  out.reserve(kConversationalDims);
  out.insert(out.end(), e_post.begin(), e_post.end());
  out.push_back(cosine(e_post, e_source));

  if (post_idx == 0) {
    out.push_back(0.0);  // no previous post by convention
  } else {
    std::vector<double> e_prev = emb.mean_of(processed_tokens(post_idx - 1));
    out.push_back(cosine(e_post, e_prev));
  }

  auto concat_mean = [&](bool exclude_source_prev) {
    std::vector<std::string> toks;
    for (int i = 0; i < n; ++i) {
      if (i == post_idx) continue;
      if (exclude_source_prev && (i == 0 || i == post_idx - 1)) continue;
      auto t = processed_tokens(i);
      toks.insert(toks.end(), t.begin(), t.end());
    }
    return emb.mean_of(toks);
  };
  out.push_back(cosine(e_post, concat_mean(false)));
  out.push_back(cosine(e_post, concat_mean(true)));

  int max_depth = thread.max_depth();
  out.push_back(double(thread.depth_of(post_idx)) / double(std::max(1, max_depth)));

  if (int(out.size()) != kConversationalDims) throw InternalError("conversational feature width drifted");
  return out;
}

// ---------------------------------------------------------------------------
// Affective (7): per-word means of the DAL and ANEW scores over in-lexicon
// words, plus the summed AFINN-style sentiment score.

inline std::vector<double> extract_affective(const Post& post, const LexiconSet& lex) {
  auto toks = detail::lower_tokens(post.raw_text);
  std::vector<double> out(kAffectiveDims, 0.0);

  auto mean_into = [&](const Lexicon& l, int offset) {
    int hits = 0;
    for (const auto& t : toks) {
      const auto* v = l.find(t);
      if (!v) continue;
      ++hits;
      for (int k = 0; k < l.arity(); ++k) out[size_t(offset + k)] += (*v)[size_t(k)];
    }
    if (hits > 0)
      for (int k = 0; k < l.arity(); ++k) out[size_t(offset + k)] /= double(hits);
  };
  mean_into(lex.dict_of_affect, 0);
  mean_into(lex.affective_norms, 3);

  double sentiment = 0.0;
  for (const auto& t : toks) {
    const auto* v = lex.valence_sentiment.find(t);
    if (v) sentiment += (*v)[0];
  }
  out[6] = sentiment;
  return out;
}

// ---------------------------------------------------------------------------
// Emotion (16): category hit counts normalized by word count, EmoLex-style
// 8+2 first, then the 6 basic categories.

inline std::vector<double> extract_emotion(const Post& post, const LexiconSet& lex) {
  auto toks = detail::lower_tokens(post.raw_text);
  double denom = double(std::max(1, detail::alnum_word_count(toks)));
  std::vector<double> out(kEmotionDims, 0.0);
  for (const auto& t : toks) {
    if (const auto* v = lex.emotion_8p2.find(t))
      for (int k = 0; k < 10; ++k) out[size_t(k)] += (*v)[size_t(k)];
    if (const auto* v = lex.emotion_6.find(t))
      for (int k = 0; k < 6; ++k) out[size_t(10 + k)] += (*v)[size_t(k)];
  }
  for (double& v : out) v /= denom;
  return out;
}

// LIWC-style (13): 11 stance-grouped categories plus positive/negative
// sentiment, normalized by word count.
inline std::vector<double> extract_liwc(const Post& post, const LexiconSet& lex) {
  auto toks = detail::lower_tokens(post.raw_text);
  double denom = double(std::max(1, detail::alnum_word_count(toks)));
  std::vector<double> out(kLiwcDims, 0.0);
  for (const auto& t : toks)
    if (const auto* v = lex.liwc_13.find(t))
      for (int k = 0; k < kLiwcDims; ++k) out[size_t(k)] += (*v)[size_t(k)];
  for (double& v : out) v /= denom;
  return out;
}

// Speech-act (37): presence flag per verb category.
inline std::vector<double> extract_speech_act(const Post& post, const LexiconSet& lex) {
  auto toks = detail::lower_tokens(post.raw_text);
  std::vector<double> out(kSpeechActDims, 0.0);
  for (const auto& t : toks)
    if (const auto* v = lex.speech_act_37.find(t))
      for (int k = 0; k < kSpeechActDims; ++k)
        if ((*v)[size_t(k)] != 0.0) out[size_t(k)] = 1.0;
  return out;
}

// ---------------------------------------------------------------------------

inline FeatureVector extract_all(int post_idx, const ConversationThread& thread, const LexiconSet& lex,
                                 const EmbeddingTable& emb) {
  const Post& post = thread.posts.at(size_t(post_idx));
  const Post& source = thread.posts.front();
  FeatureVector fv;
  fv.values.reserve(kTotalDims);
  auto append = [&](const std::vector<double>& part) {
    fv.values.insert(fv.values.end(), part.begin(), part.end());
  };
  append(extract_structural(post, post_idx == 0));
  append(extract_content(post, source, lex));
  append(extract_conversational(post_idx, thread, emb));
  append(extract_affective(post, lex));
  append(extract_emotion(post, lex));
  append(extract_liwc(post, lex));
  append(extract_speech_act(post, lex));
  if (int(fv.values.size()) != kTotalDims)
    throw InternalError("extract_all produced " + std::to_string(fv.values.size()) + " dims");
  return fv;
}

inline std::vector<FeatureVector> thread_features(const ConversationThread& thread, const LexiconSet& lex,
                                                  const EmbeddingTable& emb) {
  std::vector<FeatureVector> out;
  out.reserve(thread.posts.size());
  for (size_t i = 0; i < thread.posts.size(); ++i) out.push_back(extract_all(int(i), thread, lex, emb));
  return out;
}

// ---------------------------------------------------------------------------
// Feature matrix file: "FV441" float32 container plus a JSON sidecar naming
// the layout and the per-thread row index.

inline constexpr const char* kFeatureMagic = "FV441";

struct FeatureMatrixIndexEntry {
  std::string split;
  std::string thread_id;
  int n_posts = 0;
  long row_offset = 0;
};

inline nlohmann::json layout_sidecar() {
  nlohmann::json j;
  j["group_offsets"] = {{"structural", GroupOffsets::structural},
                        {"content", GroupOffsets::content},
                        {"conversational", GroupOffsets::conversational},
                        {"affective", GroupOffsets::affective},
                        {"emotion", GroupOffsets::emotion},
                        {"liwc", GroupOffsets::liwc},
                        {"speech_act", GroupOffsets::speech_act}};
  j["group_widths"] = {{"structural", kStructuralDims}, {"content", kContentDims},
                       {"conversational", kConversationalDims}, {"affective", kAffectiveDims},
                       {"emotion", kEmotionDims}, {"liwc", kLiwcDims}, {"speech_act", kSpeechActDims}};
  j["total_dims"] = kTotalDims;
  j["pos_tags"] = std::vector<std::string>(pos_tag_names().begin(), pos_tag_names().end());
  j["emolex_categories"] = emolex_categories();
  j["emosentic_categories"] = emosentic_categories();
  j["liwc_categories"] = liwc_categories();
  j["speech_act_categories"] = speech_act_categories();
  return j;
}

inline void save_feature_matrix(const fs::path& path, const io::Matrix& rows,
                                const std::vector<FeatureMatrixIndexEntry>& index) {
  io::save_matrix(path, kFeatureMagic, rows);
  nlohmann::json j = layout_sidecar();
  j["magic"] = kFeatureMagic;
  j["rows"] = rows.size();
  j["cols"] = kTotalDims;
  nlohmann::json idx = nlohmann::json::array();
  for (const auto& e : index)
    idx.push_back({{"split", e.split}, {"thread_id", e.thread_id}, {"n_posts", e.n_posts},
                   {"row_offset", e.row_offset}});
  j["row_index"] = std::move(idx);
  std::ofstream out(path.string() + ".json", std::ios::binary);
  if (!out) throw ConfigError("cannot write feature sidecar next to " + path.string());
  out << j.dump(2) << "\n";
}

struct FeatureMatrix {
  io::Matrix rows;
  std::vector<FeatureMatrixIndexEntry> index;

  // Rows of one thread, located via the sidecar index.
  std::vector<std::vector<double>> thread_rows(const std::string& split, const std::string& thread_id) const {
    for (const auto& e : index)
      if (e.split == split && e.thread_id == thread_id)
        return {rows.begin() + e.row_offset, rows.begin() + e.row_offset + e.n_posts};
    throw ConfigError("feature matrix has no rows for thread " + thread_id + " in split " + split);
  }
};

inline FeatureMatrix load_feature_matrix(const fs::path& path) {
  FeatureMatrix fm;
  fm.rows = io::load_matrix(path, kFeatureMagic);
  std::ifstream in(path.string() + ".json", std::ios::binary);
  if (!in) throw ConfigError("missing feature sidecar for " + path.string());
  nlohmann::json j;
  in >> j;
  for (const auto& e : j.at("row_index")) {
    FeatureMatrixIndexEntry entry;
    entry.split = e.at("split").get<std::string>();
    entry.thread_id = e.at("thread_id").get<std::string>();
    entry.n_posts = e.at("n_posts").get<int>();
    entry.row_offset = e.at("row_offset").get<long>();
    fm.index.push_back(std::move(entry));
  }
  return fm;
}

}  // namespace rsvp::features
