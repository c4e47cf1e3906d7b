#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsvp/common.hpp"

namespace rsvp::eval {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct PredictionRecord {
  std::string id;
  int gold = -1;
  int pred = -1;
  std::optional<double> confidence;  // veracity task only
};

struct ClassScores {
  long tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
};

inline std::vector<ClassScores> class_f1_breakdown(const std::vector<PredictionRecord>& preds, int n_classes) {
  if (preds.empty()) throw ConfigError("class_f1_breakdown: no predictions");
  std::vector<ClassScores> per_class(static_cast<size_t>(n_classes));
  for (const auto& r : preds) {
    if (r.gold < 0 || r.gold >= n_classes || r.pred < 0 || r.pred >= n_classes)
      throw ConfigError("prediction record " + r.id + " has label outside [0, " + std::to_string(n_classes) + ")");
    if (r.gold == r.pred) {
      ++per_class[size_t(r.gold)].tp;
    } else {
      ++per_class[size_t(r.pred)].fp;
      ++per_class[size_t(r.gold)].fn;
    }
  }
  for (auto& c : per_class) {
    // A class absent from both gold and predictions keeps F1 = 0.
    c.precision = (c.tp + c.fp) > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    c.recall = (c.tp + c.fn) > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
    c.f1 = (c.precision + c.recall) > 0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
  }
  return per_class;
}

// Unweighted mean of per-class F1; exactly the mean of class_f1_breakdown.
inline double macro_f1(const std::vector<PredictionRecord>& preds, int n_classes) {
  auto breakdown = class_f1_breakdown(preds, n_classes);
  double sum = 0;
  for (const auto& c : breakdown) sum += c.f1;
  return sum / double(n_classes);
}

inline double accuracy(const std::vector<PredictionRecord>& preds) {
  if (preds.empty()) throw ConfigError("accuracy: no predictions");
  long hit = 0;
  for (const auto& r : preds)
    if (r.gold == r.pred) ++hit;
  return double(hit) / double(preds.size());
}

// Confidence scoring for the veracity task, following the baseline scorer's
// convention: a correct true/false call is charged 1 - confidence, an
// incorrect one is charged the confidence, and unverified gold charges the
// confidence regardless of the predicted label.
inline double veracity_rmse(const std::vector<PredictionRecord>& preds) {
  if (preds.empty()) throw ConfigError("veracity_rmse: no predictions");
  constexpr int kUnverified = 2;
  double sum_sq = 0;
  for (const auto& r : preds) {
    if (!r.confidence) throw ConfigError("veracity_rmse: record " + r.id + " lacks a confidence");
    double c = *r.confidence;
    double e;
    if (r.gold == kUnverified) e = c;
    else e = (r.pred == r.gold) ? (1.0 - c) : c;
    sum_sq += e * e;
  }
  return std::sqrt(sum_sq / double(preds.size()));
}

inline std::vector<std::vector<long>> confusion_matrix(const std::vector<PredictionRecord>& preds, int n_classes) {
  std::vector<std::vector<long>> m(size_t(n_classes), std::vector<long>(size_t(n_classes), 0));
  for (const auto& r : preds) ++m[size_t(r.gold)][size_t(r.pred)];
  return m;
}

struct Metrics {
  std::string task;  // "stance" or "veracity"
  int n_classes = 0;
  std::vector<std::string> class_names;
  double macro_f1 = 0;
  double accuracy = 0;
  std::optional<double> rmse;
  std::vector<ClassScores> per_class;
  std::vector<std::vector<long>> confusion;
  long n_records = 0;
};

inline Metrics score_task(const std::vector<PredictionRecord>& preds, int n_classes,
                          const std::vector<std::string>& class_names, const std::string& task,
                          bool with_rmse) {
  Metrics m;
  m.task = task;
  m.n_classes = n_classes;
  m.class_names = class_names;
  m.per_class = class_f1_breakdown(preds, n_classes);
  double sum = 0;
  for (const auto& c : m.per_class) sum += c.f1;
  m.macro_f1 = sum / double(n_classes);
  m.accuracy = accuracy(preds);
  if (with_rmse) m.rmse = veracity_rmse(preds);
  m.confusion = confusion_matrix(preds, n_classes);
  m.n_records = long(preds.size());
  return m;
}

inline json metrics_to_json(const Metrics& m) {
  json j;
  j["task"] = m.task;
  j["n_records"] = m.n_records;
  j["macro_f1"] = m.macro_f1;
  j["accuracy"] = m.accuracy;
  if (m.rmse) j["rmse"] = *m.rmse;
  json per_class = json::array();
  for (int c = 0; c < m.n_classes; ++c) {
    const auto& s = m.per_class[size_t(c)];
    per_class.push_back({{"label", m.class_names[size_t(c)]},
                         {"precision", s.precision},
                         {"recall", s.recall},
                         {"f1", s.f1},
                         {"tp", s.tp},
                         {"fp", s.fp},
                         {"fn", s.fn}});
  }
  j["per_class"] = std::move(per_class);
  j["confusion"] = m.confusion;
  return j;
}

// Stable-key JSON report; re-emission is byte identical.
inline void emit_report(const std::vector<Metrics>& metrics, const fs::path& out_path) {
  if (metrics.empty()) throw ConfigError("emit_report: no metrics to write");
  json j;
  j["schema_version"] = "1";
  json tasks = json::array();
  for (const auto& m : metrics) tasks.push_back(metrics_to_json(m));
  j["tasks"] = std::move(tasks);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw ConfigError("cannot write report: " + out_path.string());
  out << j.dump(2) << "\n";
}

}  // namespace rsvp::eval
