#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsvp/autodiff.hpp"
#include "rsvp/common.hpp"
#include "rsvp/corpus.hpp"
#include "rsvp/ensemble.hpp"
#include "rsvp/eval.hpp"
#include "rsvp/features.hpp"
#include "rsvp/model.hpp"
#include "rsvp/preprocess.hpp"

namespace rsvp::training {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Warmup schedule: lr = base_lr * min(step^-0.5, step * warmup^-1.5). The
// peak sits exactly at step = warmup with value base_lr * warmup^-0.5.

struct ScheduleConfig {
  double base_lr = 1e-3;
  long warmup_steps = 100;

  void validate() const {
    if (base_lr <= 0) throw ConfigError("schedule base_lr must be > 0");
    if (warmup_steps < 1) throw ConfigError("schedule warmup_steps must be >= 1");
  }
};

inline double lr_at(long step, const ScheduleConfig& sch) {
  if (step < 1) throw ConfigError("lr_at: the schedule is undefined at step " + std::to_string(step));
  double s = double(step);
  double w = double(sch.warmup_steps);
  return sch.base_lr * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

struct TrainRunConfig {
  uint64_t seed = 7;
  int epochs = 10;
  long max_steps = 0;  // 0 = bounded by epochs only
  int batch_size = 4;
  model::EncoderConfig encoder;
  ScheduleConfig schedule_p{5e-4, 200};   // base conversation encoder
  ScheduleConfig schedule_oc{1e-3, 100};  // feature projection, sentence encoder, heads
  double clip_norm = 1.0;
  std::string run_name = "run";
  std::string checkpoint_dir;  // empty keeps checkpoints in memory only

  void validate() const {
    if (epochs < 1 && max_steps < 1) throw ConfigError("training needs epochs >= 1 or max_steps >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (clip_norm <= 0) throw ConfigError("clip_norm must be > 0");
    schedule_p.validate();
    schedule_oc.validate();
    encoder.validate();
  }

  json to_json() const {
    return json{{"seed", seed},
                {"epochs", epochs},
                {"max_steps", max_steps},
                {"batch_size", batch_size},
                {"encoder", encoder.to_json()},
                {"lr_p", schedule_p.base_lr},
                {"warmup_p", schedule_p.warmup_steps},
                {"lr_oc", schedule_oc.base_lr},
                {"warmup_oc", schedule_oc.warmup_steps},
                {"clip_norm", clip_norm},
                {"run_name", run_name}};
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long at_step, double loss)
      : std::runtime_error("training diverged at step " + std::to_string(at_step) + " (loss " +
                           std::to_string(loss) + ")"),
        step(at_step) {}
  long step;
};

inline int argmax(const std::vector<double>& row) {
  int best = 0;
  for (int c = 1; c < int(row.size()); ++c)
    if (row[size_t(c)] > row[size_t(best)]) best = c;
  return best;
}

// ---------------------------------------------------------------------------
// Window examples: one sliding window plus aligned gold labels. A post's
// stance loss is charged only in the first window containing it, so the
// batched cross entropy never double counts a post.

struct WindowExample {
  int thread_index = 0;
  std::string thread_id;
  text::TokenizedThread window;
  std::vector<std::vector<double>> feature_rows;  // one per window post
  std::vector<int> post_indices;                  // thread-level index per window post
  std::vector<int> stance_gold;                   // -1 = masked (not fresh or unlabeled)
  std::vector<std::string> post_ids;
  std::vector<char> fresh;  // first-window-containing flags
  int ver_gold = -1;
  bool is_first_window = false;
};

inline std::vector<WindowExample> build_examples(
    const corpus::Dataset& ds, const text::Vocabulary& vocab, int max_len,
    const std::vector<std::vector<std::vector<double>>>& features_per_thread) {
  if (features_per_thread.size() != ds.threads.size())
    throw InternalError("build_examples: feature row blocks do not match threads");
  std::vector<WindowExample> out;
  for (size_t ti = 0; ti < ds.threads.size(); ++ti) {
    const auto& thread = ds.threads[ti];
    const auto& rows = features_per_thread[ti];
    if (rows.size() != thread.posts.size())
      throw InternalError("build_examples: thread " + thread.id() + " feature rows mismatch");
    text::TokenizedThread tt = text::assemble(thread, vocab);
    std::vector<char> covered(thread.posts.size(), 0);
    bool first = true;
    for (auto& window : text::window_split(tt, max_len)) {
      WindowExample ex;
      ex.thread_index = int(ti);
      ex.thread_id = thread.id();
      ex.is_first_window = first;
      first = false;
      for (int p : window.cls_positions) {
        int post_idx = window.post_index_of_token[size_t(p)];
        ex.post_indices.push_back(post_idx);
        ex.post_ids.push_back(thread.posts[size_t(post_idx)].id);
        ex.feature_rows.push_back(rows[size_t(post_idx)]);
        bool is_fresh = !covered[size_t(post_idx)];
        covered[size_t(post_idx)] = 1;
        ex.fresh.push_back(is_fresh ? 1 : 0);
        int gold = -1;
        if (is_fresh && !thread.stance_labels.empty() && thread.stance_labels[size_t(post_idx)])
          gold = int(*thread.stance_labels[size_t(post_idx)]);
        ex.stance_gold.push_back(gold);
      }
      ex.ver_gold = thread.veracity_label ? int(*thread.veracity_label) : -1;
      ex.window = std::move(window);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

inline std::vector<std::vector<std::vector<double>>> features_from_extractors(
    const corpus::Dataset& ds, const features::LexiconSet& lex, const features::EmbeddingTable& emb) {
  std::vector<std::vector<std::vector<double>>> out;
  out.reserve(ds.threads.size());
  for (const auto& thread : ds.threads) {
    std::vector<std::vector<double>> rows;
    for (auto& fv : features::thread_features(thread, lex, emb)) rows.push_back(std::move(fv.values));
    out.push_back(std::move(rows));
  }
  return out;
}

inline std::vector<std::vector<std::vector<double>>> features_from_matrix(const corpus::Dataset& ds,
                                                                          const features::FeatureMatrix& fm,
                                                                          const std::string& split_name) {
  std::vector<std::vector<std::vector<double>>> out;
  out.reserve(ds.threads.size());
  for (const auto& thread : ds.threads) out.push_back(fm.thread_rows(split_name, thread.id()));
  return out;
}

// ---------------------------------------------------------------------------
// Split-level prediction: stance per post from the first window containing
// it, veracity per thread from the first window (the one holding the source).

struct SplitPredictions {
  std::vector<eval::PredictionRecord> stance;    // every post once; gold -1 when unlabeled
  std::vector<eval::PredictionRecord> veracity;  // every thread; gold -1 when unlabeled
  io::Matrix stance_scores;                      // pre-softmax rows aligned with `stance`
  io::Matrix veracity_scores;                    // pre-softmax rows aligned with `veracity`
};

inline SplitPredictions predict_split(model::Model& m, const std::vector<WindowExample>& examples) {
  SplitPredictions out;
  for (const auto& ex : examples) {
    auto fwd = m.forward(ex.window, ex.feature_rows, false, nullptr);
    const auto& st = fwd.stance_logits.value();
    int n = ex.window.n_posts();
    for (int i = 0; i < n; ++i) {
      if (!ex.fresh[size_t(i)]) continue;
      std::vector<double> row(st.begin() + i * corpus::kStanceCount,
                              st.begin() + (i + 1) * corpus::kStanceCount);
      eval::PredictionRecord rec;
      rec.id = ex.post_ids[size_t(i)];
      rec.pred = argmax(row);
      rec.gold = ex.stance_gold[size_t(i)];
      out.stance.push_back(std::move(rec));
      out.stance_scores.push_back(std::move(row));
    }
    if (ex.is_first_window) {
      const auto& vl = fwd.ver_logits.value();
      std::vector<double> row(vl.begin(), vl.end());
      eval::PredictionRecord rec;
      rec.id = ex.thread_id;
      rec.pred = argmax(row);
      rec.gold = ex.ver_gold;
      double mx = *std::max_element(row.begin(), row.end());
      double denom = 0;
      for (double v : row) denom += std::exp(v - mx);
      rec.confidence = std::exp(row[size_t(rec.pred)] - mx) / denom;
      out.veracity.push_back(std::move(rec));
      out.veracity_scores.push_back(std::move(row));
    }
  }
  return out;
}

inline std::vector<eval::PredictionRecord> labeled_only(const std::vector<eval::PredictionRecord>& recs) {
  std::vector<eval::PredictionRecord> out;
  for (const auto& r : recs)
    if (r.gold >= 0) out.push_back(r);
  return out;
}

inline double safe_macro_f1(const std::vector<eval::PredictionRecord>& recs, int n_classes) {
  auto labeled = labeled_only(recs);
  return labeled.empty() ? 0.0 : eval::macro_f1(labeled, n_classes);
}

inline double safe_accuracy(const std::vector<eval::PredictionRecord>& recs) {
  auto labeled = labeled_only(recs);
  return labeled.empty() ? 0.0 : eval::accuracy(labeled);
}

// ---------------------------------------------------------------------------

struct StepLog {
  long step = 0;
  double lr_p = 0, lr_oc = 0, loss = 0, loss_stance = 0, loss_veracity = 0;

  json to_json() const {
    return json{{"step", step},   {"lr_p", lr_p},
                {"lr_oc", lr_oc}, {"loss", loss},
                {"loss_stance", loss_stance}, {"loss_veracity", loss_veracity}};
  }
};

struct EpochMetrics {
  int epoch = 0;
  double dev_stance_f1 = 0;
  double dev_veracity_f1 = 0;
  double dev_stance_acc = 0;
  double dev_veracity_acc = 0;
};

struct CheckpointSnapshot {
  std::string name;
  model::EncoderConfig config;
  ad::ParamMap params;  // deep copy
  double dev_f1_stance = 0;
  double dev_f1_veracity = 0;
  int epoch = 0;
  std::string file_prefix;  // set when persisted
};

inline ad::ParamMap clone_params(const ad::ParamMap& src) {
  ad::ParamMap out;
  for (const auto& [name, t] : src) {
    ad::Tensor copy = ad::Tensor::leaf(t.shape(), t.value(), true);
    copy.node()->name = name;
    out[name] = copy;
  }
  return out;
}

struct TrainResult {
  std::vector<StepLog> log;
  std::vector<EpochMetrics> epoch_metrics;
  std::vector<CheckpointSnapshot> checkpoints;
  double best_dev_stance_f1 = 0;
  long steps = 0;
  std::optional<model::Model> final_model;
};

inline TrainResult train_on_examples(const TrainRunConfig& run, const std::vector<WindowExample>& train_ex,
                                     const std::vector<WindowExample>& dev_ex, uint64_t vocab_hash = 0,
                                     std::ostream* log_sink = nullptr) {
  run.validate();
  if (train_ex.empty()) throw ConfigError("training requires a non-empty train split");

  model::Model m(run.encoder, run.seed);
  ad::ParamMap group_p = m.group_p();
  ad::ParamMap group_oc = m.group_oc();
  if (group_p.size() + group_oc.size() != m.params().size())
    throw InternalError("optimizer groups do not partition the parameter set");
  ad::AdamState state_p, state_oc;
  ad::ParamMap& all = m.params();

  Rng shuffle_rng(run.seed ^ 0x0badc0de5eedull);
  Rng dropout_rng(run.seed ^ 0xd20b0a7full);

  TrainResult result;
  long step = 0;
  bool done = false;

  std::vector<int> order(train_ex.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  int epoch_budget = run.epochs >= 1 ? run.epochs : std::numeric_limits<int>::max();
  for (int epoch = 0; epoch < epoch_budget && !done; ++epoch) {
    shuffle_rng.shuffle(order);
    for (size_t batch_start = 0; batch_start < order.size() && !done; batch_start += size_t(run.batch_size)) {
      size_t batch_end = std::min(order.size(), batch_start + size_t(run.batch_size));
      ad::zero_grad(all);

      ad::Tensor total, total_st, total_ver;
      int count = 0;
      for (size_t bi = batch_start; bi < batch_end; ++bi) {
        const WindowExample& ex = train_ex[size_t(order[bi])];
        auto fwd = m.forward(ex.window, ex.feature_rows, true, &dropout_rng);
        auto jl = model::joint_loss(fwd.stance_logits, ex.stance_gold, fwd.ver_logits, ex.ver_gold,
                                    run.encoder.lambda);
        total = count == 0 ? jl.total : ad::add(total, jl.total);
        total_st = count == 0 ? jl.stance : ad::add(total_st, jl.stance);
        total_ver = count == 0 ? jl.veracity : ad::add(total_ver, jl.veracity);
        ++count;
      }
      double inv = 1.0 / double(count);
      ad::Tensor batch_loss = ad::scale(total, inv);

      ++step;
      double loss_value = batch_loss.item();
      if (!std::isfinite(loss_value)) throw TrainingDiverged(step, loss_value);

      ad::backward(batch_loss);
      ad::clip_grad_norm(all, run.clip_norm);

      StepLog log;
      log.step = step;
      log.lr_p = lr_at(step, run.schedule_p);
      log.lr_oc = lr_at(step, run.schedule_oc);
      log.loss = loss_value;
      log.loss_stance = total_st.item() * inv;
      log.loss_veracity = total_ver.item() * inv;
      ad::adam_step(group_p, state_p, log.lr_p);
      ad::adam_step(group_oc, state_oc, log.lr_oc);
      result.log.push_back(log);
      if (log_sink) (*log_sink) << log.to_json().dump() << "\n";

      if (run.max_steps > 0 && step >= run.max_steps) done = true;
    }

    EpochMetrics em;
    em.epoch = epoch;
    if (!dev_ex.empty()) {
      SplitPredictions dev = predict_split(m, dev_ex);
      em.dev_stance_f1 = safe_macro_f1(dev.stance, corpus::kStanceCount);
      em.dev_veracity_f1 = safe_macro_f1(dev.veracity, corpus::kVeracityCount);
      em.dev_stance_acc = safe_accuracy(dev.stance);
      em.dev_veracity_acc = safe_accuracy(dev.veracity);
    }
    result.epoch_metrics.push_back(em);

    bool improved = result.checkpoints.empty() ? true : em.dev_stance_f1 > result.best_dev_stance_f1;
    if (improved) {
      result.best_dev_stance_f1 = std::max(result.best_dev_stance_f1, em.dev_stance_f1);
      CheckpointSnapshot snap;
      snap.name = run.run_name + "_e" + std::to_string(epoch);
      snap.config = run.encoder;
      snap.params = clone_params(m.params());
      snap.dev_f1_stance = em.dev_stance_f1;
      snap.dev_f1_veracity = em.dev_veracity_f1;
      snap.epoch = epoch;
      if (!run.checkpoint_dir.empty()) {
        fs::create_directories(run.checkpoint_dir);
        fs::path prefix = fs::path(run.checkpoint_dir) / snap.name;
        model::save_model(prefix, m, vocab_hash);
        snap.file_prefix = prefix.string();
      }
      result.checkpoints.push_back(std::move(snap));
    }
  }

  result.steps = step;
  result.final_model = std::move(m);
  return result;
}

// Convenience entry: derive the vocabulary and features from the bundle.
inline TrainResult train(const TrainRunConfig& run, const corpus::DatasetBundle& bundle,
                         const features::LexiconSet& lex, const features::EmbeddingTable& emb,
                         std::ostream* log_sink = nullptr) {
  text::Vocabulary vocab = text::build_vocab(bundle.train);
  TrainRunConfig cfg = run;
  cfg.encoder.vocab_size = vocab.size();
  auto train_rows = features_from_extractors(bundle.train, lex, emb);
  auto dev_rows = features_from_extractors(bundle.dev, lex, emb);
  auto train_ex = build_examples(bundle.train, vocab, cfg.encoder.max_len, train_rows);
  auto dev_ex = build_examples(bundle.dev, vocab, cfg.encoder.max_len, dev_rows);
  return train_on_examples(cfg, train_ex, dev_ex, vocab.content_hash(), log_sink);
}

// ---------------------------------------------------------------------------
// Pool building: run every config, keep the checkpoints ranked by dev stance
// macro-F1 (up to pool_max), and cache per-example pre-softmax dev scores for
// both tasks. All runs must share max_len so the dev rows align.

inline constexpr int kDefaultPoolMax = 50;

inline ens::EnsemblePool build_pool(const std::vector<TrainRunConfig>& runs,
                                    const std::vector<WindowExample>& train_ex,
                                    const std::vector<WindowExample>& dev_ex, uint64_t vocab_hash,
                                    uint64_t shuffle_seed, int pool_max = kDefaultPoolMax) {
  if (runs.empty()) throw ConfigError("build_pool: at least one run config required");
  if (dev_ex.empty()) throw ConfigError("build_pool: dev examples required for scoring");
  for (const auto& r : runs)
    if (r.encoder.max_len != runs.front().encoder.max_len)
      throw ConfigError("build_pool: all runs must share max_len so dev examples align");

  ens::EnsemblePool pool;
  pool.shuffle_seed = shuffle_seed;

  bool gold_recorded = false;
  for (const auto& run : runs) {
    TrainResult tr = train_on_examples(run, train_ex, dev_ex, vocab_hash);
    for (auto& snap : tr.checkpoints) {
      model::Model member(snap.config, clone_params(snap.params));
      SplitPredictions dev = predict_split(member, dev_ex);

      ens::PoolMember pm;
      pm.name = snap.name;
      pm.checkpoint_ref = snap.file_prefix;
      pm.dev_f1_stance = snap.dev_f1_stance;
      pm.dev_f1_veracity = snap.dev_f1_veracity;
      for (size_t i = 0; i < dev.stance.size(); ++i) {
        if (dev.stance[i].gold < 0) continue;
        pm.dev_scores_stance.push_back(dev.stance_scores[i]);
        if (!gold_recorded) pool.gold_stance.push_back(dev.stance[i].gold);
      }
      for (size_t i = 0; i < dev.veracity.size(); ++i) {
        if (dev.veracity[i].gold < 0) continue;
        pm.dev_scores_veracity.push_back(dev.veracity_scores[i]);
        if (!gold_recorded) pool.gold_veracity.push_back(dev.veracity[i].gold);
      }
      gold_recorded = true;
      pool.members.push_back(std::move(pm));
    }
  }

  std::stable_sort(pool.members.begin(), pool.members.end(),
                   [](const ens::PoolMember& a, const ens::PoolMember& b) {
                     if (a.dev_f1_stance != b.dev_f1_stance) return a.dev_f1_stance > b.dev_f1_stance;
                     return a.name < b.name;
                   });
  if (int(pool.members.size()) > pool_max) pool.members.resize(size_t(pool_max));
  return pool;
}

}  // namespace rsvp::training
