#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsvp/common.hpp"

namespace rsvp::corpus {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class Platform { twitter, reddit };

// Stance label order is load-bearing: it is the classifier output index.
enum class Stance { support = 0, comment = 1, deny = 2, query = 3 };
inline constexpr int kStanceCount = 4;

enum class Veracity { true_ = 0, false_ = 1, unverified = 2 };
inline constexpr int kVeracityCount = 3;

enum class Split { train, dev, test };

inline const char* platform_name(Platform p) { return p == Platform::twitter ? "twitter" : "reddit"; }
inline Platform platform_from_name(std::string_view s) {
  if (s == "twitter") return Platform::twitter;
  if (s == "reddit") return Platform::reddit;
  throw IngestError("unknown platform: " + std::string(s));
}

inline const char* stance_name(Stance s) {
  switch (s) {
    case Stance::support: return "support";
    case Stance::comment: return "comment";
    case Stance::deny: return "deny";
    case Stance::query: return "query";
  }
  throw InternalError("bad stance value");
}
inline Stance stance_from_name(std::string_view s) {
  if (s == "support") return Stance::support;
  if (s == "comment") return Stance::comment;
  if (s == "deny") return Stance::deny;
  if (s == "query") return Stance::query;
  throw IngestError("unknown stance label: " + std::string(s));
}

inline const char* veracity_name(Veracity v) {
  switch (v) {
    case Veracity::true_: return "true";
    case Veracity::false_: return "false";
    case Veracity::unverified: return "unverified";
  }
  throw InternalError("bad veracity value");
}
inline Veracity veracity_from_name(std::string_view s) {
  if (s == "true") return Veracity::true_;
  if (s == "false") return Veracity::false_;
  if (s == "unverified") return Veracity::unverified;
  throw IngestError("unknown veracity label: " + std::string(s));
}

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  throw InternalError("bad split value");
}

// Bodies removed upstream are kept as this literal token rather than dropped.
inline constexpr const char* kDeletedToken = "$deleted$";

struct Post {
  std::string id;
  std::string raw_text;
  std::map<std::string, std::string> author_meta;
  std::optional<std::string> parent_id;  // absent iff source post
  int64_t timestamp = 0;                 // epoch seconds, ordering key
  Platform platform = Platform::twitter;
};

struct ConversationThread {
  std::vector<Post> posts;  // temporal order, source first
  // Empty vector means "no stance annotation for this thread"; otherwise one
  // entry per post, nullopt marking posts absent from the label key files
  // (kept in the encoder input, excluded from the stance loss).
  std::vector<std::optional<Stance>> stance_labels;
  std::optional<Veracity> veracity_label;
  std::optional<double> veracity_confidence;

  const std::string& id() const { return posts.front().id; }
  const Post& source() const { return posts.front(); }

  int index_of(const std::string& post_id) const {
    for (size_t i = 0; i < posts.size(); ++i)
      if (posts[i].id == post_id) return int(i);
    return -1;
  }

  // Tree depth via the parent chain; source is depth 0.
  int depth_of(int post_idx) const {
    int depth = 0;
    const Post* p = &posts[size_t(post_idx)];
    while (p->parent_id) {
      int pi = index_of(*p->parent_id);
      if (pi < 0) throw InternalError("unresolved parent_id " + *p->parent_id);
      p = &posts[size_t(pi)];
      ++depth;
    }
    return depth;
  }

  int max_depth() const {
    int m = 0;
    for (size_t i = 0; i < posts.size(); ++i) m = std::max(m, depth_of(int(i)));
    return m;
  }

  void validate() const {
    if (posts.empty()) throw InternalError("thread has no posts");
    if (posts.front().parent_id) throw InternalError("source post has a parent_id");
    std::set<std::string> seen;
    int64_t prev_ts = posts.front().timestamp;
    for (size_t i = 0; i < posts.size(); ++i) {
      const Post& p = posts[i];
      if (i > 0) {
        if (!p.parent_id) throw InternalError("non-source post " + p.id + " lacks parent_id");
        if (!seen.count(*p.parent_id))
          throw InternalError("post " + p.id + " parent " + *p.parent_id + " is not an earlier post");
        if (p.timestamp < prev_ts) throw InternalError("post " + p.id + " breaks temporal order");
      }
      prev_ts = p.timestamp;
      seen.insert(p.id);
    }
    if (!stance_labels.empty() && stance_labels.size() != posts.size())
      throw InternalError("stance_labels length does not match posts");
  }
};

struct Dataset {
  std::vector<ConversationThread> threads;
  Split split = Split::train;

  void validate() const {
    std::set<std::string> ids;
    for (const auto& t : threads) {
      t.validate();
      if (!ids.insert(t.id()).second) throw InternalError("duplicate thread id " + t.id());
    }
  }
};

// The canonical on-disk form carries all splits in one file.
struct DatasetBundle {
  Dataset train{{}, Split::train};
  Dataset dev{{}, Split::dev};
  Dataset test{{}, Split::test};

  const Dataset& of(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::dev: return dev;
      case Split::test: return test;
    }
    throw InternalError("bad split value");
  }
  Dataset& of(Split s) { return const_cast<Dataset&>(std::as_const(*this).of(s)); }
};

// ---------------------------------------------------------------------------
// JSON serialization (schema version "1")

inline json post_to_json(const Post& p) {
  json j;
  j["id"] = p.id;
  j["raw_text"] = p.raw_text;
  j["author_meta"] = p.author_meta;
  j["parent_id"] = p.parent_id ? json(*p.parent_id) : json(nullptr);
  j["timestamp"] = p.timestamp;
  j["platform"] = platform_name(p.platform);
  return j;
}

inline Post post_from_json(const json& j) {
  Post p;
  p.id = j.at("id").get<std::string>();
  p.raw_text = j.at("raw_text").get<std::string>();
  if (j.contains("author_meta") && j["author_meta"].is_object())
    p.author_meta = j["author_meta"].get<std::map<std::string, std::string>>();
  if (j.contains("parent_id") && !j["parent_id"].is_null()) p.parent_id = j["parent_id"].get<std::string>();
  p.timestamp = j.at("timestamp").get<int64_t>();
  p.platform = platform_from_name(j.at("platform").get<std::string>());
  return p;
}

inline json thread_to_json(const ConversationThread& t) {
  json j;
  json posts = json::array();
  for (const auto& p : t.posts) posts.push_back(post_to_json(p));
  j["posts"] = std::move(posts);
  if (t.stance_labels.empty()) {
    j["stance_labels"] = nullptr;
  } else {
    json labels = json::array();
    for (const auto& s : t.stance_labels) labels.push_back(s ? json(stance_name(*s)) : json(nullptr));
    j["stance_labels"] = std::move(labels);
  }
  j["veracity_label"] = t.veracity_label ? json(veracity_name(*t.veracity_label)) : json(nullptr);
  j["veracity_confidence"] = t.veracity_confidence ? json(*t.veracity_confidence) : json(nullptr);
  return j;
}

inline ConversationThread thread_from_json(const json& j) {
  ConversationThread t;
  for (const auto& pj : j.at("posts")) t.posts.push_back(post_from_json(pj));
  if (j.contains("stance_labels") && !j["stance_labels"].is_null()) {
    for (const auto& sj : j["stance_labels"])
      t.stance_labels.push_back(sj.is_null() ? std::optional<Stance>{}
                                             : std::optional<Stance>{stance_from_name(sj.get<std::string>())});
  }
  if (j.contains("veracity_label") && !j["veracity_label"].is_null())
    t.veracity_label = veracity_from_name(j["veracity_label"].get<std::string>());
  if (j.contains("veracity_confidence") && !j["veracity_confidence"].is_null())
    t.veracity_confidence = j["veracity_confidence"].get<double>();
  return t;
}

inline json dataset_to_json(const Dataset& d) {
  json j;
  j["split"] = split_name(d.split);
  json threads = json::array();
  for (const auto& t : d.threads) threads.push_back(thread_to_json(t));
  j["threads"] = std::move(threads);
  return j;
}

inline Dataset dataset_from_json(const json& j) {
  Dataset d;
  std::string s = j.at("split").get<std::string>();
  if (s == "train") d.split = Split::train;
  else if (s == "dev") d.split = Split::dev;
  else if (s == "test") d.split = Split::test;
  else throw IngestError("unknown split: " + s);
  for (const auto& tj : j.at("threads")) d.threads.push_back(thread_from_json(tj));
  return d;
}

inline json bundle_to_json(const DatasetBundle& b) {
  json j;
  j["schema_version"] = "1";
  j["splits"]["train"] = dataset_to_json(b.train);
  j["splits"]["dev"] = dataset_to_json(b.dev);
  j["splits"]["test"] = dataset_to_json(b.test);
  return j;
}

inline DatasetBundle bundle_from_json(const json& j) {
  if (!j.contains("schema_version") || j["schema_version"].get<std::string>() != "1")
    throw IngestError("dataset file has unsupported schema_version");
  DatasetBundle b;
  b.train = dataset_from_json(j.at("splits").at("train"));
  b.dev = dataset_from_json(j.at("splits").at("dev"));
  b.test = dataset_from_json(j.at("splits").at("test"));
  b.train.split = Split::train;
  b.dev.split = Split::dev;
  b.test.split = Split::test;
  return b;
}

inline void save_bundle(const DatasetBundle& b, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset file: " + path.string());
  out << bundle_to_json(b).dump(2) << "\n";
}

inline DatasetBundle load_bundle(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read dataset file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IngestError("malformed dataset file " + path.string() + ": " + e.what());
  }
  return bundle_from_json(j);
}

// ---------------------------------------------------------------------------
// Thread repair: clamp clock-skewed replies to their parent's timestamp, then
// order by (timestamp, id) with parents always preceding children.

inline ConversationThread finalize_thread(std::vector<Post> posts, std::vector<std::string>* warnings = nullptr) {
  if (posts.empty()) throw IngestError("thread with no posts");

  std::map<std::string, size_t> by_id;
  for (size_t i = 0; i < posts.size(); ++i) by_id[posts[i].id] = i;

  // Reparent unknown or self-referencing parents to the source.
  const std::string source_id = posts.front().id;
  for (size_t i = 1; i < posts.size(); ++i) {
    Post& p = posts[i];
    if (!p.parent_id || *p.parent_id == p.id || !by_id.count(*p.parent_id)) {
      if (warnings)
        warnings->push_back("post " + p.id + ": unresolved parent" +
                            (p.parent_id ? " " + *p.parent_id : std::string()) + ", attached to source");
      p.parent_id = source_id;
    }
  }

  // Clamp child timestamps from the source outward; unreachable posts (parent
  // cycles in the raw data) are attached to the source instead.
  std::map<std::string, std::vector<size_t>> children;
  for (size_t i = 1; i < posts.size(); ++i) children[*posts[i].parent_id].push_back(i);
  std::vector<bool> reached(posts.size(), false);
  std::vector<size_t> queue{0};
  reached[0] = true;
  for (size_t q = 0; q < queue.size(); ++q) {
    size_t cur = queue[q];
    for (size_t ci : children[posts[cur].id]) {
      if (reached[ci]) continue;
      reached[ci] = true;
      posts[ci].timestamp = std::max(posts[ci].timestamp, posts[cur].timestamp);
      queue.push_back(ci);
    }
  }
  for (size_t i = 1; i < posts.size(); ++i) {
    if (!reached[i]) {
      if (warnings) warnings->push_back("post " + posts[i].id + ": parent cycle, attached to source");
      posts[i].parent_id = source_id;
      posts[i].timestamp = std::max(posts[i].timestamp, posts[0].timestamp);
    }
  }

  // Global (timestamp, id) order over replies, then emit parents before
  // children; the clamp above guarantees this keeps timestamps non-decreasing.
  std::vector<size_t> order;
  for (size_t i = 1; i < posts.size(); ++i) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (posts[a].timestamp != posts[b].timestamp) return posts[a].timestamp < posts[b].timestamp;
    return posts[a].id < posts[b].id;
  });

  ConversationThread t;
  t.posts.push_back(posts.front());
  std::set<std::string> emitted{source_id};
  std::vector<bool> done(posts.size(), false);
  while (t.posts.size() < posts.size()) {
    bool progress = false;
    for (size_t oi : order) {
      if (done[oi]) continue;
      if (emitted.count(*posts[oi].parent_id)) {
        t.posts.push_back(posts[oi]);
        emitted.insert(posts[oi].id);
        done[oi] = true;
        progress = true;
      }
    }
    if (!progress) throw InternalError("thread ordering did not converge");
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic fixture corpora

namespace detail {

inline const std::vector<std::string>& stance_templates(Stance s) {
  static const std::vector<std::string> support = {
      "I agree , this is true !",
      "Confirmed by officials , it happened .",
      "Yes this is real news .",
      "Exactly right , well said .",
  };
  static const std::vector<std::string> deny = {
      "This is a hoax , totally fake .",
      "Not true at all , stop spreading lies .",
      "Debunked already , this is false .",
      "No way , fabricated story .",
  };
  static const std::vector<std::string> query = {
      "Is this confirmed ?",
      "Really ? What is the source ?",
      "Can anyone verify this claim ?",
      "Where did you read that ?",
  };
  static const std::vector<std::string> comment = {
      "Interesting times we live in .",
      "Saw this on http://example.com/news earlier today .",
      "Wow @user1 you should see this .",
      "Thinking about what happens next #breaking .",
      "Look at this picture pic.twitter.com/abc12 .",
  };
  switch (s) {
    case Stance::support: return support;
    case Stance::deny: return deny;
    case Stance::query: return query;
    case Stance::comment: return comment;
  }
  throw InternalError("bad stance value");
}

inline const std::vector<std::string>& veracity_templates(Veracity v) {
  static const std::vector<std::string> true_ = {
      "Officials confirm the event happened this morning .",
      "Report : the announcement is official now .",
  };
  static const std::vector<std::string> false_ = {
      "BREAKING : aliens landed in the city center !",
      "Rumor : celebrity quits after secret scandal !",
  };
  static const std::vector<std::string> unverified = {
      "Unconfirmed reports about explosion downtown .",
      "Sources say something big happened , details unclear .",
  };
  switch (v) {
    case Veracity::true_: return true_;
    case Veracity::false_: return false_;
    case Veracity::unverified: return unverified;
  }
  throw InternalError("bad veracity value");
}

}  // namespace detail

// Deterministic stand-in for the licensed corpus. Thread i carries veracity
// i % 3; sources are labeled support and replies cycle deny/query/comment, so
// any call with n_threads >= 3 and max_posts >= 2 covers every label class.
inline Dataset make_fixture_corpus(uint64_t seed, int n_threads, int max_posts) {
  if (n_threads < 1 || max_posts < 1) throw ConfigError("fixture corpus needs n_threads >= 1 and max_posts >= 1");
  Rng rng(seed ^ 0xf1c70c0e5eedull);
  Dataset ds;
  ds.split = Split::train;
  int reply_counter = 0;
  static const Stance reply_cycle[3] = {Stance::deny, Stance::query, Stance::comment};
  for (int i = 0; i < n_threads; ++i) {
    ConversationThread t;
    auto veracity = Veracity(i % kVeracityCount);
    int n_posts = (i < 3) ? max_posts : 1 + rng.below(max_posts);
    int64_t base_ts = 1500000000 + int64_t(i) * 86400;
    Platform platform = (i % 2 == 0) ? Platform::twitter : Platform::reddit;

    Post src;
    src.id = "t" + std::to_string(i) + "_p0";
    const auto& vt = detail::veracity_templates(veracity);
    src.raw_text = vt[size_t(rng.below(int(vt.size())))] + " event" + std::to_string(i);
    src.timestamp = base_ts;
    src.platform = platform;
    if (rng.below(3) == 0) src.author_meta["verified"] = "1";
    t.posts.push_back(src);
    t.stance_labels.push_back(Stance::support);

    for (int j = 1; j < n_posts; ++j) {
      Stance st = reply_cycle[reply_counter++ % 3];
      const auto& templates = detail::stance_templates(st);
      Post p;
      p.id = "t" + std::to_string(i) + "_p" + std::to_string(j);
      p.raw_text = templates[size_t(rng.below(int(templates.size())))] + " event" + std::to_string(i) + " p" +
                   std::to_string(j);
      p.parent_id = t.posts[size_t(rng.below(j))].id;
      p.timestamp = base_ts + int64_t(j) * 60 + rng.below(30);
      p.platform = platform;
      t.posts.push_back(p);
      t.stance_labels.push_back(st);
    }
    t.veracity_label = veracity;
    t.validate();
    ds.threads.push_back(std::move(t));
  }
  ds.validate();
  return ds;
}

// 60/20/20 round-robin partition of a fixture corpus into train/dev/test.
inline DatasetBundle make_fixture_bundle(uint64_t seed, int n_threads, int max_posts) {
  Dataset all = make_fixture_corpus(seed, n_threads, max_posts);
  DatasetBundle b;
  for (size_t i = 0; i < all.threads.size(); ++i) {
    int r = int(i % 5);
    Dataset& target = (r == 3) ? b.dev : (r == 4) ? b.test : b.train;
    target.threads.push_back(all.threads[i]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Count validation against the published corpus statistics

struct LabelCountEntry {
  std::string label;
  long expected = 0;
  long actual = 0;
  bool matched = false;
};

struct CountReport {
  std::vector<LabelCountEntry> entries;
  int mismatches = 0;
  bool all_match() const { return mismatches == 0; }

  json to_json() const {
    json j;
    j["mismatches"] = mismatches;
    json rows = json::array();
    for (const auto& e : entries)
      rows.push_back({{"label", e.label}, {"expected", e.expected}, {"actual", e.actual}, {"matched", e.matched}});
    j["entries"] = std::move(rows);
    return j;
  }
};

// Keys: "posts", "threads", "stance/<label>", "veracity/<label>".
inline CountReport validate_counts(const Dataset& ds, const std::map<std::string, long>& expected) {
  std::map<std::string, long> actual;
  actual["threads"] = long(ds.threads.size());
  long posts = 0;
  for (const auto& t : ds.threads) {
    posts += long(t.posts.size());
    for (const auto& s : t.stance_labels)
      if (s) ++actual["stance/" + std::string(stance_name(*s))];
    if (t.veracity_label) ++actual["veracity/" + std::string(veracity_name(*t.veracity_label))];
  }
  actual["posts"] = posts;

  CountReport report;
  for (const auto& [label, want] : expected) {
    LabelCountEntry e;
    e.label = label;
    e.expected = want;
    e.actual = actual.count(label) ? actual[label] : 0;
    e.matched = (e.actual == e.expected);
    if (!e.matched) ++report.mismatches;
    report.entries.push_back(std::move(e));
  }
  return report;
}

// ---------------------------------------------------------------------------
// RumorEval 2019 directory ingest

struct IngestReport {
  long threads_loaded = 0;
  long threads_skipped = 0;
  long posts_loaded = 0;
  long stance_labeled_posts = 0;
  long veracity_labeled_threads = 0;
  std::vector<std::string> warnings;

  json to_json() const {
    json j;
    j["threads_loaded"] = threads_loaded;
    j["threads_skipped"] = threads_skipped;
    j["posts_loaded"] = posts_loaded;
    j["stance_labeled_posts"] = stance_labeled_posts;
    j["veracity_labeled_threads"] = veracity_labeled_threads;
    j["warnings"] = warnings;
    return j;
  }
};

struct LoadResult {
  DatasetBundle bundle;
  IngestReport report;
};

namespace detail {

inline int64_t parse_twitter_created_at(const std::string& s) {
  // "Wed Jan 07 11:07:51 +0000 2015"
  static const std::map<std::string, int> months = {{"Jan", 0}, {"Feb", 1}, {"Mar", 2}, {"Apr", 3},
                                                    {"May", 4}, {"Jun", 5}, {"Jul", 6}, {"Aug", 7},
                                                    {"Sep", 8}, {"Oct", 9}, {"Nov", 10}, {"Dec", 11}};
  auto parts = split_whitespace(s);
  if (parts.size() != 6 || !months.count(parts[1])) throw IngestError("unparseable created_at: " + s);
  std::tm tm{};
  tm.tm_mon = months.at(parts[1]);
  tm.tm_mday = std::stoi(parts[2]);
  int hh, mm, ss;
  if (std::sscanf(parts[3].c_str(), "%d:%d:%d", &hh, &mm, &ss) != 3)
    throw IngestError("unparseable created_at time: " + s);
  tm.tm_hour = hh;
  tm.tm_min = mm;
  tm.tm_sec = ss;
  tm.tm_year = std::stoi(parts[5]) - 1900;
  int64_t utc = int64_t(timegm(&tm));
  // Zone offset like +0530 / -0800.
  const std::string& z = parts[4];
  if (z.size() == 5 && (z[0] == '+' || z[0] == '-')) {
    int oh = (z[1] - '0') * 10 + (z[2] - '0');
    int om = (z[3] - '0') * 10 + (z[4] - '0');
    int64_t off = int64_t(oh) * 3600 + int64_t(om) * 60;
    utc += (z[0] == '+') ? -off : off;
  }
  return utc;
}

inline std::string json_id_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<uint64_t>());
  throw IngestError("post id is neither string nor integer");
}

// Unwrap reddit {"kind": ..., "data": {...}} and listing envelopes.
inline const json& unwrap_reddit(const json& j) {
  const json* cur = &j;
  for (int hops = 0; hops < 4; ++hops) {
    if (cur->contains("id") && (cur->contains("body") || cur->contains("title") || cur->contains("selftext") ||
                                cur->contains("created_utc") || cur->contains("created")))
      return *cur;
    if (cur->contains("data")) {
      const json& d = (*cur)["data"];
      if (d.is_object() && d.contains("children") && d["children"].is_array() && !d["children"].empty()) {
        cur = &d["children"][0];
        continue;
      }
      if (d.is_object()) {
        cur = &d;
        continue;
      }
    }
    break;
  }
  return *cur;
}

inline std::string strip_reddit_prefix(std::string s) {
  if (s.size() > 3 && s[2] == '_' && s[0] == 't' && s[1] >= '1' && s[1] <= '6') return s.substr(3);
  return s;
}

inline Post parse_post_json(const json& raw, bool is_source) {
  Post p;
  bool reddit = !raw.contains("id_str") && (raw.contains("kind") || raw.contains("data") ||
                                            raw.contains("body") || raw.contains("created_utc"));
  if (reddit) {
    const json& j = unwrap_reddit(raw);
    if (!j.contains("id")) throw IngestError("reddit object lacks id");
    p.platform = Platform::reddit;
    p.id = json_id_to_string(j["id"]);
    std::string text;
    if (j.contains("title") && j["title"].is_string()) text = j["title"].get<std::string>();
    if (j.contains("selftext") && j["selftext"].is_string() && !j["selftext"].get<std::string>().empty())
      text += (text.empty() ? "" : " ") + j["selftext"].get<std::string>();
    if (text.empty() && j.contains("body") && j["body"].is_string()) text = j["body"].get<std::string>();
    p.raw_text = text;
    if (j.contains("created_utc") && j["created_utc"].is_number())
      p.timestamp = int64_t(j["created_utc"].get<double>());
    else if (j.contains("created") && j["created"].is_number())
      p.timestamp = int64_t(j["created"].get<double>());
    if (!is_source && j.contains("parent_id") && j["parent_id"].is_string())
      p.parent_id = strip_reddit_prefix(j["parent_id"].get<std::string>());
    if (j.contains("author") && j["author"].is_string()) p.author_meta["author"] = j["author"].get<std::string>();
  } else {
    const json& j = raw;
    p.platform = Platform::twitter;
    if (j.contains("id_str")) p.id = j["id_str"].get<std::string>();
    else if (j.contains("id")) p.id = json_id_to_string(j["id"]);
    else throw IngestError("twitter object lacks id");
    if (j.contains("full_text") && j["full_text"].is_string()) p.raw_text = j["full_text"].get<std::string>();
    else if (j.contains("text") && j["text"].is_string()) p.raw_text = j["text"].get<std::string>();
    if (j.contains("created_at")) {
      if (j["created_at"].is_string()) p.timestamp = parse_twitter_created_at(j["created_at"].get<std::string>());
      else if (j["created_at"].is_number()) p.timestamp = j["created_at"].get<int64_t>();
    }
    if (!is_source) {
      if (j.contains("in_reply_to_status_id_str") && j["in_reply_to_status_id_str"].is_string())
        p.parent_id = j["in_reply_to_status_id_str"].get<std::string>();
      else if (j.contains("in_reply_to_status_id") && j["in_reply_to_status_id"].is_number())
        p.parent_id = json_id_to_string(j["in_reply_to_status_id"]);
    }
    if (j.contains("user") && j["user"].is_object()) {
      const json& u = j["user"];
      if (u.contains("screen_name") && u["screen_name"].is_string())
        p.author_meta["screen_name"] = u["screen_name"].get<std::string>();
      if (u.contains("verified") && u["verified"].is_boolean())
        p.author_meta["verified"] = u["verified"].get<bool>() ? "1" : "0";
    }
    if (j.contains("entities") && j["entities"].is_object() && j["entities"].contains("media") &&
        j["entities"]["media"].is_array() && !j["entities"]["media"].empty())
      p.author_meta["media"] = "1";
  }
  auto body = to_lower(p.raw_text);
  if (body.empty() || body == "[deleted]" || body == "[removed]") p.raw_text = kDeletedToken;
  return p;
}

// structure.json maps each post id to the object of its children, recursively.
inline void apply_structure(const json& node, const std::string& parent,
                            std::map<std::string, std::string>& parent_of) {
  if (!node.is_object()) return;
  for (auto it = node.begin(); it != node.end(); ++it) {
    if (!parent.empty()) parent_of[it.key()] = parent;
    apply_structure(it.value(), it.key(), parent_of);
  }
}

inline std::vector<fs::path> sorted_dir(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// Loads the RumorEval 2019 layout: thread directories holding source-tweet/
// and replies/ JSON objects, with *key.json files mapping post ids to task A
// stance labels and thread ids to task B veracity labels. Malformed threads
// are skipped with a warning; labels naming ids outside every loaded and
// skipped thread are fatal.
inline LoadResult load_rumoreval(const fs::path& root) {
  if (!fs::exists(root) || !fs::is_directory(root)) throw IngestError("ingest root not found: " + root.string());

  LoadResult result;
  IngestReport& report = result.report;

  // Key files anywhere in the tree; the file name decides the split.
  std::map<std::string, std::string> stance_key;     // post id -> label
  std::map<std::string, std::string> veracity_key;   // thread id -> label
  std::map<std::string, double> confidence_key;      // thread id -> confidence
  std::map<std::string, Split> split_of_id;          // id -> split
  std::vector<fs::path> key_files;
  std::vector<fs::path> thread_dirs;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    const fs::path& p = it->path();
    if (it->is_regular_file() && p.extension() == ".json" &&
        p.filename().string().find("key") != std::string::npos)
      key_files.push_back(p);
    if (it->is_directory() && p.filename() == "source-tweet") thread_dirs.push_back(p.parent_path());
  }
  std::sort(key_files.begin(), key_files.end());
  std::sort(thread_dirs.begin(), thread_dirs.end());

  for (const auto& kf : key_files) {
    Split split = Split::train;
    std::string name = kf.filename().string();
    if (name.find("dev") != std::string::npos) split = Split::dev;
    else if (name.find("eval") != std::string::npos || name.find("test") != std::string::npos) split = Split::test;
    std::ifstream in(kf);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw IngestError("malformed key file " + kf.string() + ": " + e.what());
    }
    if (j.contains("subtaskaenglish"))
      for (auto it = j["subtaskaenglish"].begin(); it != j["subtaskaenglish"].end(); ++it) {
        stance_key[it.key()] = it.value().get<std::string>();
        split_of_id[it.key()] = split;
      }
    if (j.contains("subtaskbenglish"))
      for (auto it = j["subtaskbenglish"].begin(); it != j["subtaskbenglish"].end(); ++it) {
        if (it.value().is_array()) {
          veracity_key[it.key()] = it.value()[0].get<std::string>();
          if (it.value().size() > 1 && it.value()[1].is_number())
            confidence_key[it.key()] = it.value()[1].get<double>();
        } else {
          veracity_key[it.key()] = it.value().get<std::string>();
        }
        split_of_id[it.key()] = split;
      }
  }

  if (thread_dirs.empty()) throw IngestError("no conversation threads under " + root.string());

  std::set<std::string> known_ids;
  std::set<std::string> skipped_ids;  // ids recovered from file names of skipped threads

  for (const auto& dir : thread_dirs) {
    std::vector<fs::path> post_files;
    for (const auto& f : detail::sorted_dir(dir / "source-tweet"))
      if (f.extension() == ".json") post_files.push_back(f);
    if (fs::exists(dir / "replies"))
      for (const auto& f : detail::sorted_dir(dir / "replies"))
        if (f.extension() == ".json") post_files.push_back(f);

    auto record_skip = [&](const std::string& why) {
      ++report.threads_skipped;
      report.warnings.push_back("skipped thread " + dir.string() + ": " + why);
      for (const auto& f : post_files) skipped_ids.insert(f.stem().string());
    };

    if (post_files.empty()) {
      record_skip("no source post");
      continue;
    }

    std::vector<Post> posts;
    bool bad = false;
    for (size_t i = 0; i < post_files.size(); ++i) {
      std::ifstream in(post_files[i]);
      json j;
      try {
        in >> j;
        posts.push_back(detail::parse_post_json(j, i == 0));
      } catch (const std::exception& e) {
        record_skip(std::string("malformed post json ") + post_files[i].filename().string() + ": " + e.what());
        bad = true;
        break;
      }
    }
    if (bad) continue;

    if (fs::exists(dir / "structure.json")) {
      std::ifstream in(dir / "structure.json");
      json j;
      try {
        in >> j;
        std::map<std::string, std::string> parent_of;
        detail::apply_structure(j, "", parent_of);
        for (size_t i = 1; i < posts.size(); ++i)
          if (parent_of.count(posts[i].id)) posts[i].parent_id = parent_of[posts[i].id];
      } catch (const json::exception&) {
        report.warnings.push_back("unreadable structure.json in " + dir.string() + ", using reply fields");
      }
    }

    ConversationThread thread;
    try {
      thread = finalize_thread(std::move(posts), &report.warnings);
    } catch (const std::exception& e) {
      record_skip(std::string("thread assembly failed: ") + e.what());
      continue;
    }

    // Attach labels.
    bool any_stance = false;
    for (const auto& p : thread.posts)
      if (stance_key.count(p.id)) any_stance = true;
    if (any_stance) {
      for (const auto& p : thread.posts) {
        auto it = stance_key.find(p.id);
        thread.stance_labels.push_back(it == stance_key.end()
                                           ? std::optional<Stance>{}
                                           : std::optional<Stance>{stance_from_name(it->second)});
        if (it != stance_key.end()) ++report.stance_labeled_posts;
      }
    }
    if (veracity_key.count(thread.id())) {
      thread.veracity_label = veracity_from_name(veracity_key.at(thread.id()));
      if (confidence_key.count(thread.id())) thread.veracity_confidence = confidence_key.at(thread.id());
      ++report.veracity_labeled_threads;
    }

    Split split = Split::train;
    if (split_of_id.count(thread.id())) split = split_of_id.at(thread.id());
    else
      for (const auto& p : thread.posts)
        if (split_of_id.count(p.id)) {
          split = split_of_id.at(p.id);
          break;
        }

    ++report.threads_loaded;
    report.posts_loaded += long(thread.posts.size());
    for (const auto& p : thread.posts) known_ids.insert(p.id);
    result.bundle.of(split).threads.push_back(std::move(thread));
  }

  // A label naming an id that belongs to no loaded or skipped thread is fatal.
  for (const auto& [id, label] : stance_key)
    if (!known_ids.count(id) && !skipped_ids.count(id))
      throw IngestError("stance label references unknown post id " + id);
  for (const auto& [id, label] : veracity_key)
    if (!known_ids.count(id) && !skipped_ids.count(id))
      throw IngestError("veracity label references unknown thread id " + id);

  result.bundle.train.validate();
  result.bundle.dev.validate();
  result.bundle.test.validate();
  return result;
}

}  // namespace rsvp::corpus
