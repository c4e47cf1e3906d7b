// rsvp: batch pipeline driver. Subcommands cover corpus preparation, feature
// extraction, training, ensemble selection, prediction and scoring; exit code
// 0 on success, 2 for user/config errors, 1 for internal failures.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rsvp/corpus.hpp"
#include "rsvp/ensemble.hpp"
#include "rsvp/eval.hpp"
#include "rsvp/features.hpp"
#include "rsvp/model.hpp"
#include "rsvp/preprocess.hpp"
#include "rsvp/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rsvp;

namespace {

struct PrepareArgs {
  std::string data_dir;
  std::string out_file;
  std::string vocab_file;
  std::string report_file;
  int fixture = 0;
  uint64_t seed = 7;
  int fixture_max_posts = 5;
};

int cmd_prepare(const PrepareArgs& args) {
  corpus::DatasetBundle bundle;
  corpus::IngestReport report;
  if (args.fixture > 0) {
    bundle = corpus::make_fixture_bundle(args.seed, args.fixture, args.fixture_max_posts);
    report.threads_loaded = long(bundle.train.threads.size() + bundle.dev.threads.size() +
                                 bundle.test.threads.size());
    for (const auto* ds : {&bundle.train, &bundle.dev, &bundle.test})
      for (const auto& t : ds->threads) {
        report.posts_loaded += long(t.posts.size());
        for (const auto& s : t.stance_labels)
          if (s) ++report.stance_labeled_posts;
        if (t.veracity_label) ++report.veracity_labeled_threads;
      }
  } else {
    if (args.data_dir.empty()) throw ConfigError("prepare needs --data DIR or --fixture N");
    corpus::LoadResult loaded = corpus::load_rumoreval(args.data_dir);
    bundle = std::move(loaded.bundle);
    report = std::move(loaded.report);
  }

  corpus::save_bundle(bundle, args.out_file);

  text::Vocabulary vocab = text::build_vocab(bundle.train);
  std::string vocab_path = args.vocab_file.empty() ? args.out_file + ".vocab" : args.vocab_file;
  vocab.save(vocab_path);

  std::string report_path = args.report_file.empty() ? args.out_file + ".report.json" : args.report_file;
  std::ofstream rep(report_path, std::ios::binary);
  if (!rep) throw ConfigError("cannot write ingest report: " + report_path);
  rep << report.to_json().dump(2) << "\n";

  std::cout << "prepared " << report.threads_loaded << " threads (" << report.posts_loaded << " posts), skipped "
            << report.threads_skipped << "; vocab " << vocab.size() << " tokens\n";
  return 0;
}

int cmd_features(const std::string& data_file, const std::string& lexicon_dir, const std::string& embeddings_file,
                 const std::string& out_file) {
  corpus::DatasetBundle bundle = corpus::load_bundle(data_file);
  features::LexiconSet lex = features::LexiconSet::load(lexicon_dir);
  features::EmbeddingTable emb = features::EmbeddingTable::load(embeddings_file);

  io::Matrix rows;
  std::vector<features::FeatureMatrixIndexEntry> index;
  for (const auto* ds : {&bundle.train, &bundle.dev, &bundle.test}) {
    for (const auto& thread : ds->threads) {
      features::FeatureMatrixIndexEntry entry;
      entry.split = corpus::split_name(ds->split);
      entry.thread_id = thread.id();
      entry.n_posts = int(thread.posts.size());
      entry.row_offset = long(rows.size());
      for (auto& fv : features::thread_features(thread, lex, emb)) rows.push_back(std::move(fv.values));
      index.push_back(std::move(entry));
    }
  }
  features::save_feature_matrix(out_file, rows, index);
  std::cout << "wrote " << rows.size() << " feature rows of width " << features::kTotalDims << "\n";
  return 0;
}

training::TrainRunConfig run_from_json(const json& j) {
  training::TrainRunConfig run;
  run.seed = j.value("seed", uint64_t(7));
  run.epochs = j.value("epochs", 10);
  run.max_steps = j.value("max_steps", 0L);
  run.batch_size = j.value("batch_size", 4);
  if (j.contains("encoder")) run.encoder = model::EncoderConfig::from_json(j["encoder"]);
  run.schedule_p = {j.value("lr_p", 5e-4), j.value("warmup_p", 200L)};
  run.schedule_oc = {j.value("lr_oc", 1e-3), j.value("warmup_oc", 100L)};
  run.clip_norm = j.value("clip_norm", 1.0);
  run.run_name = j.value("run_name", std::string("run"));
  return run;
}

struct TrainOverrides {
  std::optional<uint64_t> seed;
  std::optional<double> lambda;
  std::optional<std::string> encoder;
  std::optional<int> epochs;
  std::optional<long> max_steps;
  std::optional<int> batch_size;
  std::optional<std::string> out_dir;

  void apply(training::TrainRunConfig& run) const {
    if (seed) run.seed = *seed;
    if (lambda) run.encoder.lambda = *lambda;
    if (encoder) run.encoder.encoder_kind = model::encoder_kind_from_name(*encoder);
    if (epochs) run.epochs = *epochs;
    if (max_steps) run.max_steps = *max_steps;
    if (batch_size) run.batch_size = *batch_size;
  }
};

int cmd_train(const std::string& config_file, const TrainOverrides& overrides) {
  std::ifstream in(config_file);
  if (!in) throw ConfigError("cannot read train config: " + config_file);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }

  std::string data_file = cfg.at("data").get<std::string>();
  std::string features_file = cfg.at("features").get<std::string>();
  std::string vocab_file = cfg.value("vocab", data_file + ".vocab");
  std::string out_dir = overrides.out_dir ? *overrides.out_dir : cfg.value("out_dir", std::string("runs"));
  int pool_max = cfg.value("pool_max", training::kDefaultPoolMax);
  uint64_t shuffle_seed = cfg.value("shuffle_seed", uint64_t(1));

  corpus::DatasetBundle bundle = corpus::load_bundle(data_file);
  text::Vocabulary vocab = text::Vocabulary::load(vocab_file);
  features::FeatureMatrix fm = features::load_feature_matrix(features_file);

  std::vector<training::TrainRunConfig> runs;
  if (cfg.contains("runs")) {
    for (const auto& rj : cfg["runs"]) runs.push_back(run_from_json(rj));
  } else {
    runs.push_back(run_from_json(cfg));
  }
  fs::create_directories(out_dir);
  for (size_t i = 0; i < runs.size(); ++i) {
    overrides.apply(runs[i]);
    runs[i].encoder.vocab_size = vocab.size();
    runs[i].checkpoint_dir = out_dir;
    if (runs[i].run_name == "run" && runs.size() > 1) runs[i].run_name = "run" + std::to_string(i);
    runs[i].validate();
  }

  auto train_rows = training::features_from_matrix(bundle.train, fm, "train");
  auto dev_rows = training::features_from_matrix(bundle.dev, fm, "dev");
  int max_len = runs.front().encoder.max_len;
  auto train_ex = training::build_examples(bundle.train, vocab, max_len, train_rows);
  auto dev_ex = training::build_examples(bundle.dev, vocab, max_len, dev_rows);

  // One training pass per run, logging per step; every saved checkpoint joins
  // the pool with cached dev scores.
  ens::EnsemblePool pool;
  pool.shuffle_seed = shuffle_seed;
  bool gold_recorded = false;
  for (const auto& run : runs) {
    std::ofstream log(fs::path(out_dir) / (run.run_name + "_log.jsonl"), std::ios::binary);
    training::TrainResult tr = training::train_on_examples(run, train_ex, dev_ex, vocab.content_hash(), &log);
    std::cout << run.run_name << ": " << tr.steps << " steps, best dev stance F1 " << tr.best_dev_stance_f1
              << ", " << tr.checkpoints.size() << " checkpoints\n";
    for (auto& snap : tr.checkpoints) {
      model::Model member(snap.config, training::clone_params(snap.params));
      training::SplitPredictions dev = training::predict_split(member, dev_ex);
      ens::PoolMember pm;
      pm.name = snap.name;
      pm.checkpoint_ref = fs::path(snap.file_prefix).filename().string();
      pm.dev_f1_stance = snap.dev_f1_stance;
      pm.dev_f1_veracity = snap.dev_f1_veracity;
      for (size_t r = 0; r < dev.stance.size(); ++r) {
        if (dev.stance[r].gold < 0) continue;
        pm.dev_scores_stance.push_back(dev.stance_scores[r]);
        if (!gold_recorded) pool.gold_stance.push_back(dev.stance[r].gold);
      }
      for (size_t r = 0; r < dev.veracity.size(); ++r) {
        if (dev.veracity[r].gold < 0) continue;
        pm.dev_scores_veracity.push_back(dev.veracity_scores[r]);
        if (!gold_recorded) pool.gold_veracity.push_back(dev.veracity[r].gold);
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
  ens::save_pool(pool, out_dir);
  std::cout << "pool of " << pool.members.size() << " members written to " << out_dir << "\n";
  return 0;
}

int cmd_ensemble(const std::string& pool_dir, const std::string& task_str, uint64_t seed,
                 const std::string& out_file) {
  ens::EnsemblePool pool = ens::load_pool(pool_dir);
  pool.shuffle_seed = seed;
  ens::Task task = ens::task_from_name(task_str);
  ens::Ensemble selected = ens::top_ns_select(pool, task);
  ens::save_ensemble(selected, pool, out_file);
  std::cout << "selected " << selected.member_indices.size() << " of " << pool.members.size()
            << " members, dev F1 " << selected.trace.back().fused_f1 << "\n";
  return 0;
}

// Prediction records, one JSON object per line; task A rows are per post,
// task B rows are per thread and carry a confidence.
void write_predictions(const training::SplitPredictions& preds, const std::string& out_file) {
  std::ofstream out(out_file, std::ios::binary);
  if (!out) throw ConfigError("cannot write predictions: " + out_file);
  for (const auto& r : preds.stance) {
    json j;
    j["task"] = "A";
    j["id"] = r.id;
    j["gold"] = r.gold >= 0 ? json(corpus::stance_name(corpus::Stance(r.gold))) : json(nullptr);
    j["pred"] = corpus::stance_name(corpus::Stance(r.pred));
    out << j.dump() << "\n";
  }
  for (const auto& r : preds.veracity) {
    json j;
    j["task"] = "B";
    j["id"] = r.id;
    j["gold"] = r.gold >= 0 ? json(corpus::veracity_name(corpus::Veracity(r.gold))) : json(nullptr);
    j["pred"] = corpus::veracity_name(corpus::Veracity(r.pred));
    j["confidence"] = r.confidence ? json(*r.confidence) : json(nullptr);
    out << j.dump() << "\n";
  }
}

int cmd_predict(const std::string& model_prefix, const std::string& ensemble_file, const std::string& data_file,
                const std::string& features_file, const std::string& vocab_file, const std::string& split_str,
                const std::string& out_file) {
  corpus::DatasetBundle bundle = corpus::load_bundle(data_file);
  features::FeatureMatrix fm = features::load_feature_matrix(features_file);
  text::Vocabulary vocab = text::Vocabulary::load(vocab_file);

  corpus::Split split = corpus::Split::test;
  if (split_str == "train") split = corpus::Split::train;
  else if (split_str == "dev") split = corpus::Split::dev;
  else if (split_str != "test") throw ConfigError("unknown split: " + split_str);
  const corpus::Dataset& ds = bundle.of(split);
  if (ds.threads.empty()) throw ConfigError("split '" + split_str + "' holds no threads");

  std::vector<std::string> member_prefixes;
  if (!model_prefix.empty()) {
    member_prefixes.push_back(model_prefix);
  } else if (!ensemble_file.empty()) {
    std::ifstream in(ensemble_file);
    if (!in) throw ConfigError("cannot read ensemble manifest: " + ensemble_file);
    json manifest;
    in >> manifest;
    fs::path base = fs::path(ensemble_file).parent_path();
    for (const auto& mj : manifest.at("members")) {
      fs::path ref = mj.at("checkpoint").get<std::string>();
      member_prefixes.push_back(ref.is_absolute() ? ref.string() : (base / ref).string());
    }
  } else {
    throw ConfigError("predict needs --model or --ensemble");
  }

  auto rows = training::features_from_matrix(ds, fm, corpus::split_name(split));
  std::vector<training::WindowExample> examples;

  training::SplitPredictions fused;
  std::vector<io::Matrix> stance_scores, ver_scores;
  for (size_t mi = 0; mi < member_prefixes.size(); ++mi) {
    model::Model m = model::load_model(member_prefixes[mi]);
    if (examples.empty())
      examples = training::build_examples(ds, vocab, m.config().max_len, rows);
    training::SplitPredictions p = training::predict_split(m, examples);
    if (mi == 0) fused = p;
    stance_scores.push_back(std::move(p.stance_scores));
    ver_scores.push_back(std::move(p.veracity_scores));
  }

  // Pre-softmax mean fusion across members (a single model is a 1-member
  // ensemble).
  std::vector<const io::Matrix*> sp, vp;
  for (const auto& s : stance_scores) sp.push_back(&s);
  for (const auto& v : ver_scores) vp.push_back(&v);
  ens::FusedPrediction fs_ = ens::fuse_predict(sp);
  ens::FusedPrediction fv = ens::fuse_predict(vp);
  for (size_t i = 0; i < fused.stance.size(); ++i) fused.stance[i].pred = fs_.labels[i];
  for (size_t i = 0; i < fused.veracity.size(); ++i) {
    fused.veracity[i].pred = fv.labels[i];
    fused.veracity[i].confidence = fv.confidences[i];
  }

  write_predictions(fused, out_file);
  std::cout << "wrote " << fused.stance.size() << " stance and " << fused.veracity.size()
            << " veracity predictions\n";
  return 0;
}

int cmd_evaluate(const std::string& preds_file, const std::string& gold_file, const std::string& task_str,
                 const std::string& out_file) {
  bool task_a;
  if (task_str == "A" || task_str == "a" || task_str == "stance") task_a = true;
  else if (task_str == "B" || task_str == "b" || task_str == "veracity") task_a = false;
  else throw ConfigError("unknown task: " + task_str + " (expected A or B)");

  corpus::DatasetBundle bundle = corpus::load_bundle(gold_file);
  std::map<std::string, int> gold;
  for (const auto* ds : {&bundle.train, &bundle.dev, &bundle.test}) {
    for (const auto& t : ds->threads) {
      if (task_a) {
        for (size_t i = 0; i < t.stance_labels.size(); ++i)
          if (t.stance_labels[i]) gold[t.posts[i].id] = int(*t.stance_labels[i]);
      } else if (t.veracity_label) {
        gold[t.id()] = int(*t.veracity_label);
      }
    }
  }

  std::ifstream in(preds_file);
  if (!in) throw ConfigError("cannot read predictions: " + preds_file);
  std::vector<eval::PredictionRecord> records;
  std::string line;
  size_t line_no = 0;
  const char* want_task = task_a ? "A" : "B";
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      if (j.at("task").get<std::string>() != want_task) continue;
      eval::PredictionRecord rec;
      rec.id = j.at("id").get<std::string>();
      std::string pred = j.at("pred").get<std::string>();
      rec.pred = task_a ? int(corpus::stance_from_name(pred)) : int(corpus::veracity_from_name(pred));
      if (!task_a) {
        if (!j.contains("confidence") || j["confidence"].is_null())
          throw ConfigError("missing confidence");
        rec.confidence = j["confidence"].get<double>();
      }
      auto it = gold.find(rec.id);
      if (it == gold.end()) continue;  // unlabeled items are not scored
      rec.gold = it->second;
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw ConfigError("predictions file " + preds_file + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.empty()) throw ConfigError("no scorable predictions for task " + std::string(want_task));

  std::vector<eval::Metrics> metrics;
  if (task_a) {
    metrics.push_back(eval::score_task(records, corpus::kStanceCount,
                                       {"support", "comment", "deny", "query"}, "stance", false));
  } else {
    metrics.push_back(eval::score_task(records, corpus::kVeracityCount, {"true", "false", "unverified"},
                                       "veracity", true));
  }
  eval::emit_report(metrics, out_file);
  std::cout << "task " << want_task << " macro F1 " << metrics.front().macro_f1;
  if (metrics.front().rmse) std::cout << " RMSE " << *metrics.front().rmse;
  std::cout << " over " << records.size() << " records\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint rumor stance and veracity pipeline"};
  app.require_subcommand(1);

  PrepareArgs prepare;
  auto* prep = app.add_subcommand("prepare", "ingest a corpus or generate a fixture, emit dataset + vocabulary");
  prep->add_option("--data", prepare.data_dir, "RumorEval 2019 layout directory");
  prep->add_option("--out", prepare.out_file, "canonical dataset file")->required();
  prep->add_option("--vocab", prepare.vocab_file, "vocabulary output (default: <out>.vocab)");
  prep->add_option("--report", prepare.report_file, "ingest report output (default: <out>.report.json)");
  prep->add_option("--fixture", prepare.fixture, "generate a fixture corpus with N threads");
  prep->add_option("--seed", prepare.seed, "fixture seed");
  prep->add_option("--max-posts", prepare.fixture_max_posts, "fixture max posts per thread");

  std::string feat_data, feat_lex, feat_emb, feat_out;
  auto* feat = app.add_subcommand("features", "compute the 441-dim feature matrix");
  feat->add_option("--data", feat_data, "canonical dataset file")->required();
  feat->add_option("--lexicons", feat_lex, "lexicon directory")->required();
  feat->add_option("--embeddings", feat_emb, "word embedding file")->required();
  feat->add_option("--out", feat_out, "output feature matrix (FV441)")->required();

  std::string train_config;
  TrainOverrides ov;
  uint64_t ov_seed = 0;
  double ov_lambda = -1;
  std::string ov_encoder, ov_out;
  int ov_epochs = -1;
  long ov_max_steps = -1;
  int ov_batch = -1;
  auto* train = app.add_subcommand("train", "train one or more runs, emit checkpoints + pool");
  train->add_option("--config", train_config, "JSON run config")->required();
  auto* o1 = train->add_option("--seed", ov_seed, "override seed");
  auto* o2 = train->add_option("--lambda", ov_lambda, "override joint-loss trade-off");
  auto* o3 = train->add_option("--encoder", ov_encoder, "override encoder kind");
  auto* o4 = train->add_option("--epochs", ov_epochs, "override epochs");
  auto* o5 = train->add_option("--max-steps", ov_max_steps, "override max steps");
  auto* o6 = train->add_option("--batch-size", ov_batch, "override batch size");
  auto* o7 = train->add_option("--out", ov_out, "override output directory");

  std::string ens_pool, ens_task = "stance", ens_out;
  uint64_t ens_seed = 1;
  auto* ensc = app.add_subcommand("ensemble", "greedy Top-N selection over a model pool");
  ensc->add_option("--pool", ens_pool, "pool directory from train")->required();
  ensc->add_option("--task", ens_task, "stance or veracity")->required();
  ensc->add_option("--seed", ens_seed, "shuffle seed");
  ensc->add_option("--out", ens_out, "ensemble manifest output")->required();

  std::string pred_model, pred_ensemble, pred_data, pred_features, pred_vocab, pred_split = "test", pred_out;
  auto* pred = app.add_subcommand("predict", "run a model or ensemble over a split");
  pred->add_option("--model", pred_model, "model checkpoint prefix");
  pred->add_option("--ensemble", pred_ensemble, "ensemble manifest");
  pred->add_option("--data", pred_data, "canonical dataset file")->required();
  pred->add_option("--features", pred_features, "feature matrix file")->required();
  pred->add_option("--vocab", pred_vocab, "vocabulary file")->required();
  pred->add_option("--split", pred_split, "train/dev/test (default test)");
  pred->add_option("--out", pred_out, "predictions JSONL output")->required();

  std::string eval_preds, eval_gold, eval_task, eval_out;
  auto* evalc = app.add_subcommand("evaluate", "score predictions against gold labels");
  evalc->add_option("--preds", eval_preds, "predictions JSONL")->required();
  evalc->add_option("--gold", eval_gold, "canonical dataset file with gold labels")->required();
  evalc->add_option("--task", eval_task, "A (stance) or B (veracity)")->required();
  evalc->add_option("--out", eval_out, "report output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (prep->parsed()) return cmd_prepare(prepare);
    if (feat->parsed()) return cmd_features(feat_data, feat_lex, feat_emb, feat_out);
    if (train->parsed()) {
      if (o1->count()) ov.seed = ov_seed;
      if (o2->count()) ov.lambda = ov_lambda;
      if (o3->count()) ov.encoder = ov_encoder;
      if (o4->count()) ov.epochs = ov_epochs;
      if (o5->count()) ov.max_steps = ov_max_steps;
      if (o6->count()) ov.batch_size = ov_batch;
      if (o7->count()) ov.out_dir = ov_out;
      return cmd_train(train_config, ov);
    }
    if (ensc->parsed()) return cmd_ensemble(ens_pool, ens_task, ens_seed, ens_out);
    if (pred->parsed())
      return cmd_predict(pred_model, pred_ensemble, pred_data, pred_features, pred_vocab, pred_split, pred_out);
    if (evalc->parsed()) return cmd_evaluate(eval_preds, eval_gold, eval_task, eval_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IngestError& e) {
    std::cerr << "ingest error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
