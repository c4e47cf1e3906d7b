#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsvp/common.hpp"
#include "rsvp/eval.hpp"
#include "rsvp/matrix_file.hpp"

namespace rsvp::ens {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kScoreMagic = "SCR1";

enum class Task { stance, veracity };

inline const char* task_name(Task t) { return t == Task::stance ? "stance" : "veracity"; }
inline Task task_from_name(std::string_view s) {
  if (s == "stance") return Task::stance;
  if (s == "veracity") return Task::veracity;
  throw ConfigError("unknown task: " + std::string(s));
}

// One saved model plus its cached pre-softmax dev scores. All members of a
// pool share the same dev example ordering.
struct PoolMember {
  std::string name;
  std::string checkpoint_ref;          // path prefix of the saved model, may be empty in-memory
  io::Matrix dev_scores_stance;        // [n_posts, 4]
  io::Matrix dev_scores_veracity;      // [n_threads, 3]
  double dev_f1_stance = 0;
  double dev_f1_veracity = 0;
};

struct EnsemblePool {
  std::vector<PoolMember> members;
  uint64_t shuffle_seed = 0;
  std::vector<int> gold_stance;    // aligned with dev score rows
  std::vector<int> gold_veracity;

  const io::Matrix& scores_of(int member, Task task) const {
    const auto& m = members.at(size_t(member));
    return task == Task::stance ? m.dev_scores_stance : m.dev_scores_veracity;
  }
  const std::vector<int>& gold_of(Task task) const {
    return task == Task::stance ? gold_stance : gold_veracity;
  }
};

struct SelectionStep {
  int member_index;
  double fused_f1;
};

struct Ensemble {
  Task task = Task::stance;
  std::vector<int> member_indices;      // admission order, no duplicates
  std::vector<SelectionStep> trace;     // strictly increasing fused dev F1
};

// ---------------------------------------------------------------------------
// Fusion: arithmetic mean of pre-softmax scores, argmax with lowest-index tie
// break; confidence is the softmax of the mean scores at the argmax.

inline io::Matrix mean_scores(const std::vector<const io::Matrix*>& member_scores) {
  if (member_scores.empty()) throw InternalError("mean_scores: no members");
  const io::Matrix& first = *member_scores.front();
  io::Matrix out(first.size(), std::vector<double>(first.empty() ? 0 : first.front().size(), 0.0));
  for (const auto* m : member_scores) {
    if (m->size() != first.size()) throw InternalError("mean_scores: row count mismatch across members");
    for (size_t r = 0; r < m->size(); ++r)
      for (size_t c = 0; c < (*m)[r].size(); ++c) out[r][c] += (*m)[r][c];
  }
  for (auto& row : out)
    for (double& v : row) v /= double(member_scores.size());
  return out;
}

inline int argmax_lowest(const std::vector<double>& row) {
  int best = 0;
  for (int c = 1; c < int(row.size()); ++c)
    if (row[size_t(c)] > row[size_t(best)]) best = c;
  return best;
}

struct FusedPrediction {
  std::vector<int> labels;
  std::vector<double> confidences;  // softmax of the mean scores at the argmax
};

inline FusedPrediction fuse_predict(const std::vector<const io::Matrix*>& member_scores) {
  io::Matrix mean = mean_scores(member_scores);
  FusedPrediction out;
  out.labels.reserve(mean.size());
  out.confidences.reserve(mean.size());
  for (const auto& row : mean) {
    int pred = argmax_lowest(row);
    double mx = *std::max_element(row.begin(), row.end());
    double denom = 0;
    for (double v : row) denom += std::exp(v - mx);
    out.labels.push_back(pred);
    out.confidences.push_back(std::exp(row[size_t(pred)] - mx) / denom);
  }
  return out;
}

inline double fused_macro_f1(const std::vector<const io::Matrix*>& member_scores, const std::vector<int>& gold,
                             int n_classes) {
  FusedPrediction fused = fuse_predict(member_scores);
  if (fused.labels.size() != gold.size()) throw InternalError("fused_macro_f1: gold length mismatch");
  std::vector<eval::PredictionRecord> recs(gold.size());
  for (size_t i = 0; i < gold.size(); ++i) {
    recs[i].id = std::to_string(i);
    recs[i].gold = gold[i];
    recs[i].pred = fused.labels[i];
  }
  return eval::macro_f1(recs, n_classes);
}

// ---------------------------------------------------------------------------
// Top-N_s greedy selection: start from the single best member, make one
// shuffled pass over the rest, admit a candidate only on a strict dev
// macro-F1 improvement.

inline Ensemble top_ns_select(const EnsemblePool& pool, Task task) {
  if (pool.members.empty()) throw ConfigError("top_ns_select: empty pool");
  const std::vector<int>& gold = pool.gold_of(task);
  if (gold.empty()) throw ConfigError("top_ns_select: pool lacks dev gold labels");
  int n_classes = task == Task::stance ? 4 : 3;

  auto f1_of = [&](const std::vector<int>& members) {
    std::vector<const io::Matrix*> scores;
    scores.reserve(members.size());
    for (int m : members) scores.push_back(&pool.scores_of(m, task));
    return fused_macro_f1(scores, gold, n_classes);
  };

  int best = 0;
  double best_f1 = f1_of({0});
  for (int m = 1; m < int(pool.members.size()); ++m) {
    double f1 = f1_of({m});
    if (f1 > best_f1) {
      best_f1 = f1;
      best = m;
    }
  }

  Ensemble ens;
  ens.task = task;
  ens.member_indices = {best};
  ens.trace.push_back({best, best_f1});
  double current = best_f1;

  std::vector<int> rest;
  for (int m = 0; m < int(pool.members.size()); ++m)
    if (m != best) rest.push_back(m);
  Rng rng(pool.shuffle_seed ^ (task == Task::stance ? 0x57a9ceull : 0x7e2ac17ull));
  rng.shuffle(rest);

  for (int candidate : rest) {
    std::vector<int> trial = ens.member_indices;
    trial.push_back(candidate);
    double f1 = f1_of(trial);
    if (f1 > current) {
      ens.member_indices.push_back(candidate);
      ens.trace.push_back({candidate, f1});
      current = f1;
    }
  }
  return ens;
}

// ---------------------------------------------------------------------------
// Pool persistence: a directory of SCR1 score caches and model checkpoints
// plus one pool.json manifest.

inline void save_pool(const EnsemblePool& pool, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["schema_version"] = "1";
  manifest["shuffle_seed"] = pool.shuffle_seed;
  manifest["gold_stance"] = pool.gold_stance;
  manifest["gold_veracity"] = pool.gold_veracity;
  json members = json::array();
  for (const auto& m : pool.members) {
    std::string stance_file = m.name + ".stance.scr1";
    std::string ver_file = m.name + ".veracity.scr1";
    io::save_matrix(dir / stance_file, kScoreMagic, m.dev_scores_stance);
    io::save_matrix(dir / ver_file, kScoreMagic, m.dev_scores_veracity);
    members.push_back({{"name", m.name},
                       {"checkpoint", m.checkpoint_ref},
                       {"stance_scores", stance_file},
                       {"veracity_scores", ver_file},
                       {"dev_f1_stance", m.dev_f1_stance},
                       {"dev_f1_veracity", m.dev_f1_veracity}});
  }
  manifest["members"] = std::move(members);
  std::ofstream out(dir / "pool.json", std::ios::binary);
  if (!out) throw ConfigError("cannot write pool manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

inline EnsemblePool load_pool(const fs::path& dir) {
  std::ifstream in(dir / "pool.json", std::ios::binary);
  if (!in) throw ConfigError("pool manifest not found: " + (dir / "pool.json").string());
  json manifest;
  in >> manifest;
  EnsemblePool pool;
  pool.shuffle_seed = manifest.at("shuffle_seed").get<uint64_t>();
  pool.gold_stance = manifest.at("gold_stance").get<std::vector<int>>();
  pool.gold_veracity = manifest.at("gold_veracity").get<std::vector<int>>();
  for (const auto& mj : manifest.at("members")) {
    PoolMember m;
    m.name = mj.at("name").get<std::string>();
    m.checkpoint_ref = mj.at("checkpoint").get<std::string>();
    m.dev_scores_stance = io::load_matrix(dir / mj.at("stance_scores").get<std::string>(), kScoreMagic);
    m.dev_scores_veracity = io::load_matrix(dir / mj.at("veracity_scores").get<std::string>(), kScoreMagic);
    m.dev_f1_stance = mj.at("dev_f1_stance").get<double>();
    m.dev_f1_veracity = mj.at("dev_f1_veracity").get<double>();
    pool.members.push_back(std::move(m));
  }
  return pool;
}

inline void save_ensemble(const Ensemble& ens, const EnsemblePool& pool, const fs::path& path) {
  json j;
  j["schema_version"] = "1";
  j["task"] = task_name(ens.task);
  j["shuffle_seed"] = pool.shuffle_seed;
  json members = json::array();
  for (int idx : ens.member_indices) {
    const auto& m = pool.members.at(size_t(idx));
    members.push_back({{"name", m.name}, {"checkpoint", m.checkpoint_ref}});
  }
  j["members"] = std::move(members);
  json trace = json::array();
  for (const auto& step : ens.trace)
    trace.push_back({{"member", pool.members.at(size_t(step.member_index)).name}, {"fused_f1", step.fused_f1}});
  j["trace"] = std::move(trace);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write ensemble manifest: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace rsvp::ens
