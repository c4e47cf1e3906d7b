#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsvp/autodiff.hpp"
#include "rsvp/common.hpp"
#include "rsvp/corpus.hpp"
#include "rsvp/features.hpp"
#include "rsvp/preprocess.hpp"

namespace rsvp::model {

using ad::ParamMap;
using ad::Tensor;
using json = nlohmann::json;
namespace fs = std::filesystem;

enum class EncoderKind { identity, inter_sentence_transformer, bilstm };

inline const char* encoder_kind_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::identity: return "identity";
    case EncoderKind::inter_sentence_transformer: return "transformer";
    case EncoderKind::bilstm: return "bilstm";
  }
  throw InternalError("bad encoder kind");
}

inline EncoderKind encoder_kind_from_name(std::string_view s) {
  if (s == "identity") return EncoderKind::identity;
  if (s == "transformer") return EncoderKind::inter_sentence_transformer;
  if (s == "bilstm") return EncoderKind::bilstm;
  throw ConfigError("unknown encoder kind: " + std::string(s));
}

// Paper-scale reference values are d1=768, 12 layers, 12 heads, d2=128,
// transformer L=2, lstm_hidden=256; the defaults here are desk scale.
struct EncoderConfig {
  int vocab_size = 0;
  int d1 = 32;    // token hidden size
  int layers = 2;
  int heads = 2;
  int window = 8;  // sliding-attention window, even
  int max_len = 512;
  int d2 = 8;  // feature projection size
  EncoderKind encoder_kind = EncoderKind::identity;
  int encoder_layers = 2;  // L for the inter-sentence transformer
  int sent_heads = 2;
  int lstm_hidden = 16;
  int max_posts = 64;  // sentence-level positional table size
  int ffn_mult = 4;
  double lambda = 0.7;
  double dropout_p = 0.0;
  bool cls_global_attention = false;  // extension point, untested

  int m() const { return encoder_kind == EncoderKind::bilstm ? 2 * lstm_hidden : d1 + d2; }

  void validate() const {
    if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
    if (d1 <= 0 || d2 <= 0) throw ConfigError("hidden sizes must be positive");
    if (heads <= 0 || d1 % heads != 0) throw ConfigError("d1 must be divisible by heads");
    if (window < 2 || window % 2 != 0) throw ConfigError("window must be an even integer >= 2");
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (encoder_kind == EncoderKind::inter_sentence_transformer) {
      if (encoder_layers < 1) throw ConfigError("sentence transformer needs encoder_layers >= 1");
      if (sent_heads <= 0 || m() % sent_heads != 0)
        throw ConfigError("sentence hidden size must be divisible by sent_heads");
    }
    if (encoder_kind == EncoderKind::bilstm && lstm_hidden <= 0)
      throw ConfigError("lstm_hidden must be positive");
  }

  json to_json() const {
    return json{{"vocab_size", vocab_size},
                {"d1", d1},
                {"layers", layers},
                {"heads", heads},
                {"window", window},
                {"max_len", max_len},
                {"d2", d2},
                {"encoder_kind", encoder_kind_name(encoder_kind)},
                {"encoder_layers", encoder_layers},
                {"sent_heads", sent_heads},
                {"lstm_hidden", lstm_hidden},
                {"max_posts", max_posts},
                {"ffn_mult", ffn_mult},
                {"lambda", lambda},
                {"dropout_p", dropout_p},
                {"cls_global_attention", cls_global_attention}};
  }

  static EncoderConfig from_json(const json& j) {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d1 = j.at("d1").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.window = j.at("window").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.d2 = j.at("d2").get<int>();
    c.encoder_kind = encoder_kind_from_name(j.at("encoder_kind").get<std::string>());
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.sent_heads = j.at("sent_heads").get<int>();
    c.lstm_hidden = j.at("lstm_hidden").get<int>();
    c.max_posts = j.at("max_posts").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.lambda = j.at("lambda").get<double>();
    c.dropout_p = j.value("dropout_p", 0.0);
    c.cls_global_attention = j.value("cls_global_attention", false);
    return c;
  }
};

// Per-window tensors named after the paper pipeline: per-post [CLS] outputs,
// projected features, their concatenation, and the sentence-encoder output.
struct PostRepresentations {
  Tensor t;  // [n, d1]
  Tensor f;  // [n, d2]
  Tensor k;  // [n, d1+d2]
  Tensor h;  // [n, m]
};

// ---------------------------------------------------------------------------

class Model {
 public:
  Model(EncoderConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    init_params(seed);
  }

  Model(EncoderConfig cfg, ParamMap params) : cfg_(cfg), params_(std::move(params)) { cfg_.validate(); }

  const EncoderConfig& config() const { return cfg_; }
  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }

  Tensor& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InternalError("unknown parameter " + name);
    return it->second;
  }

  // Optimizer group split: the base conversation encoder plays the paper's
  // "pre-trained" role; feature projection, sentence encoder and heads are
  // the from-scratch components.
  ParamMap group_p() const {
    ParamMap out;
    for (const auto& [name, t] : params_)
      if (name.rfind("base.", 0) == 0) out[name] = t;
    return out;
  }
  ParamMap group_oc() const {
    ParamMap out;
    for (const auto& [name, t] : params_)
      if (name.rfind("base.", 0) != 0) out[name] = t;
    return out;
  }

  // Token + positional embeddings, stacked sliding-window attention blocks,
  // per-post [CLS] gathering, feature projection, concatenation.
  PostRepresentations encode_conversation(const text::TokenizedThread& window,
                                          const std::vector<std::vector<double>>& feature_rows, bool train = false,
                                          Rng* dropout_rng = nullptr) {
    const int seq = int(window.token_ids.size());
    const int n_posts = window.n_posts();
    if (seq > cfg_.max_len)
      throw ConfigError("window of " + std::to_string(seq) + " tokens exceeds max_len " +
                        std::to_string(cfg_.max_len));
    if (int(feature_rows.size()) != n_posts)
      throw InternalError("feature rows (" + std::to_string(feature_rows.size()) + ") do not match posts (" +
                          std::to_string(n_posts) + ")");

    std::vector<int> positions(static_cast<size_t>(seq));
    for (int i = 0; i < seq; ++i) positions[size_t(i)] = i;

    Tensor x = ad::add(ad::embedding_lookup(param("base.tok_emb"), window.token_ids),
                       ad::gather_rows(param("base.pos_emb"), positions));
    std::vector<int> globals;
    if (cfg_.cls_global_attention) globals = window.cls_positions;

    for (int l = 0; l < cfg_.layers; ++l) {
      std::string pfx = "base.L" + std::to_string(l) + ".";
      ad::MhaParams mha{param(pfx + "attn.wq"), param(pfx + "attn.wk"), param(pfx + "attn.wv"),
                        param(pfx + "attn.wo"), param(pfx + "attn.bq"), param(pfx + "attn.bk"),
                        param(pfx + "attn.bv"), param(pfx + "attn.bo")};
      Tensor attn = ad::sliding_window_mha(x, cfg_.window, cfg_.heads, mha, globals);
      if (train && cfg_.dropout_p > 0 && dropout_rng) attn = ad::dropout(attn, cfg_.dropout_p, train, *dropout_rng);
      x = ad::layer_norm(ad::add(x, attn), param(pfx + "ln1.gain"), param(pfx + "ln1.bias"));
      Tensor ff = ad::linear(ad::gelu_t(ad::linear(x, param(pfx + "ffn.w1"), param(pfx + "ffn.b1"))),
                             param(pfx + "ffn.w2"), param(pfx + "ffn.b2"));
      if (train && cfg_.dropout_p > 0 && dropout_rng) ff = ad::dropout(ff, cfg_.dropout_p, train, *dropout_rng);
      x = ad::layer_norm(ad::add(x, ff), param(pfx + "ln2.gain"), param(pfx + "ln2.bias"));
    }

    PostRepresentations reps;
    reps.t = ad::gather_rows(x, window.cls_positions);

    std::vector<double> flat;
    flat.reserve(size_t(n_posts) * size_t(features::kTotalDims));
    for (const auto& row : feature_rows) {
      if (int(row.size()) != features::kTotalDims)
        throw InternalError("feature row of " + std::to_string(row.size()) + " dims");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    Tensor fin = Tensor::leaf({n_posts, features::kTotalDims}, std::move(flat));
    reps.f = ad::linear(fin, param("feat.proj.w"), param("feat.proj.b"));
    reps.k = ad::concat_cols({reps.t, reps.f});
    return reps;
  }

  Tensor sentence_encode(const Tensor& k, bool train = false, Rng* dropout_rng = nullptr) {
    switch (cfg_.encoder_kind) {
      case EncoderKind::identity: return sentence_encode_identity(k);
      case EncoderKind::inter_sentence_transformer: return sentence_encode_transformer(k, train, dropout_rng);
      case EncoderKind::bilstm: return sentence_encode_bilstm(k);
    }
    throw InternalError("bad encoder kind");
  }

  Tensor sentence_encode_identity(const Tensor& k) { return k; }

  // Post-norm transformer blocks with full attention over the posts; learned
  // positional embeddings are added at layer 0.
  Tensor sentence_encode_transformer(const Tensor& k, bool train = false, Rng* dropout_rng = nullptr) {
    int n = k.dim(0);
    if (n > cfg_.max_posts)
      throw ConfigError("window holds " + std::to_string(n) + " posts, above max_posts " +
                        std::to_string(cfg_.max_posts));
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positions[size_t(i)] = i;
    Tensor g = ad::add(k, ad::gather_rows(param("sent.pos_emb"), positions));
    int full_window = 2 * n + 2;  // covers every pair, keeps the band mask even
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
      std::string pfx = "sent.L" + std::to_string(l) + ".";
      ad::MhaParams mha{param(pfx + "attn.wq"), param(pfx + "attn.wk"), param(pfx + "attn.wv"),
                        param(pfx + "attn.wo"), param(pfx + "attn.bq"), param(pfx + "attn.bk"),
                        param(pfx + "attn.bv"), param(pfx + "attn.bo")};
      Tensor attn = ad::sliding_window_mha(g, full_window, cfg_.sent_heads, mha);
      if (train && cfg_.dropout_p > 0 && dropout_rng) attn = ad::dropout(attn, cfg_.dropout_p, train, *dropout_rng);
      Tensor gt = ad::layer_norm(ad::add(g, attn), param(pfx + "ln1.gain"), param(pfx + "ln1.bias"));
      Tensor ff = ad::linear(ad::gelu_t(ad::linear(gt, param(pfx + "ffn.w1"), param(pfx + "ffn.b1"))),
                             param(pfx + "ffn.w2"), param(pfx + "ffn.b2"));
      g = ad::layer_norm(ad::add(gt, ff), param(pfx + "ln2.gain"), param(pfx + "ln2.bias"));
    }
    return g;
  }

  // Bidirectional LSTM with layer normalization applied per gate; the two
  // directions' outputs are concatenated per post.
  Tensor sentence_encode_bilstm(const Tensor& k) {
    int n = k.dim(0);
    std::vector<Tensor> fwd = lstm_direction(k, "sent.fwd.", false, n);
    std::vector<Tensor> bwd = lstm_direction(k, "sent.bwd.", true, n);
    std::vector<Tensor> rows;
    rows.reserve(size_t(n));
    for (int i = 0; i < n; ++i) rows.push_back(ad::concat_cols({fwd[size_t(i)], bwd[size_t(i)]}));
    return n == 1 ? rows.front() : ad::concat_rows(rows);
  }

  Tensor stance_logits(const Tensor& h) { return ad::linear(h, param("head.stance.w"), param("head.stance.b")); }

  Tensor stance_distributions(const Tensor& h) { return ad::softmax_rows(stance_logits(h)); }

  // Mean-pool the post sequence, then project; pooling is over the posts of
  // the current window only.
  Tensor veracity_logits(const Tensor& h) {
    Tensor pooled = ad::reshape(ad::mean_rows(h), {1, cfg_.m()});
    return ad::linear(pooled, param("head.ver.w"), param("head.ver.b"));
  }

  Tensor veracity_distribution(const Tensor& h) { return ad::softmax_rows(veracity_logits(h)); }

  struct Output {
    PostRepresentations reps;
    Tensor stance_logits;  // [n, 4]
    Tensor ver_logits;     // [1, 3]
  };

  Output forward(const text::TokenizedThread& window, const std::vector<std::vector<double>>& feature_rows,
                 bool train = false, Rng* dropout_rng = nullptr) {
    Output out;
    out.reps = encode_conversation(window, feature_rows, train, dropout_rng);
    out.reps.h = sentence_encode(out.reps.k, train, dropout_rng);
    out.stance_logits = stance_logits(out.reps.h);
    out.ver_logits = veracity_logits(out.reps.h);
    return out;
  }

 private:
  std::vector<Tensor> lstm_direction(const Tensor& k, const std::string& pfx, bool reverse, int n) {
    int hid = cfg_.lstm_hidden;
    Tensor r_prev = Tensor::zeros({1, hid});
    Tensor c_prev = Tensor::zeros({1, hid});
    static const char* gates[4] = {"f", "i", "o", "g"};
    std::vector<Tensor> outputs(static_cast<size_t>(n));
    for (int step = 0; step < n; ++step) {
      int idx = reverse ? n - 1 - step : step;
      Tensor xi = ad::row(k, idx);
      Tensor pre[4];
      for (int gidx = 0; gidx < 4; ++gidx) {
        std::string g(gates[gidx]);
        Tensor hx = ad::layer_norm(ad::matmul_nt(r_prev, param(pfx + "wh_" + g)),
                                   param(pfx + "lnh_" + g + ".gain"), param(pfx + "lnh_" + g + ".bias"));
        Tensor xx = ad::layer_norm(ad::matmul_nt(xi, param(pfx + "wx_" + g)),
                                   param(pfx + "lnx_" + g + ".gain"), param(pfx + "lnx_" + g + ".bias"));
        pre[gidx] = ad::add_rowvec(ad::add(hx, xx), param(pfx + "b_" + g));
      }
      Tensor f_t = ad::sigmoid_t(pre[0]);
      Tensor i_t = ad::sigmoid_t(pre[1]);
      Tensor o_t = ad::sigmoid_t(pre[2]);
      Tensor g_t = ad::tanh_t(pre[3]);
      Tensor c_t = ad::add(ad::mul(f_t, c_prev), ad::mul(i_t, g_t));
      Tensor c_norm = ad::layer_norm(c_t, param(pfx + "lnc.gain"), param(pfx + "lnc.bias"));
      Tensor r_t = ad::mul(o_t, ad::tanh_t(c_norm));
      outputs[size_t(idx)] = r_t;
      r_prev = r_t;
      c_prev = c_t;
    }
    return outputs;
  }

  void add_mha_params(Rng& rng, const std::string& pfx, int d) {
    params_[pfx + "attn.wq"] = ad::xavier_uniform({d, d}, rng, pfx + "attn.wq");
    params_[pfx + "attn.wk"] = ad::xavier_uniform({d, d}, rng, pfx + "attn.wk");
    params_[pfx + "attn.wv"] = ad::xavier_uniform({d, d}, rng, pfx + "attn.wv");
    params_[pfx + "attn.wo"] = ad::xavier_uniform({d, d}, rng, pfx + "attn.wo");
    for (const char* b : {"bq", "bk", "bv", "bo"})
      params_[pfx + "attn." + b] = Tensor::zeros({d}, true);
  }

  void add_block_params(Rng& rng, const std::string& pfx, int d) {
    add_mha_params(rng, pfx, d);
    int ff = cfg_.ffn_mult * d;
    params_[pfx + "ffn.w1"] = ad::xavier_uniform({ff, d}, rng, pfx + "ffn.w1");
    params_[pfx + "ffn.b1"] = Tensor::zeros({ff}, true);
    params_[pfx + "ffn.w2"] = ad::xavier_uniform({d, ff}, rng, pfx + "ffn.w2");
    params_[pfx + "ffn.b2"] = Tensor::zeros({d}, true);
    for (const char* ln : {"ln1", "ln2"}) {
      params_[pfx + ln + ".gain"] = Tensor::leaf({d}, std::vector<double>(size_t(d), 1.0), true);
      params_[pfx + ln + ".bias"] = Tensor::zeros({d}, true);
    }
  }

  void init_params(uint64_t seed) {
    Rng rng(seed ^ 0x0ddba11c0ffee123ull);
    auto uniform_table = [&](std::vector<int> shape) {
      size_t numel = 1;
      for (int d : shape) numel *= size_t(d);
      std::vector<double> data(numel);
      for (double& v : data) v = rng.uniform(-0.1, 0.1);
      return Tensor::leaf(std::move(shape), std::move(data), true);
    };

    params_["base.tok_emb"] = uniform_table({cfg_.vocab_size, cfg_.d1});
    params_["base.pos_emb"] = uniform_table({cfg_.max_len, cfg_.d1});
    for (int l = 0; l < cfg_.layers; ++l) add_block_params(rng, "base.L" + std::to_string(l) + ".", cfg_.d1);

    params_["feat.proj.w"] = ad::xavier_uniform({cfg_.d2, features::kTotalDims}, rng, "feat.proj.w");
    params_["feat.proj.b"] = Tensor::zeros({cfg_.d2}, true);

    int m = cfg_.m();
    if (cfg_.encoder_kind == EncoderKind::inter_sentence_transformer) {
      params_["sent.pos_emb"] = uniform_table({cfg_.max_posts, m});
      for (int l = 0; l < cfg_.encoder_layers; ++l)
        add_block_params(rng, "sent.L" + std::to_string(l) + ".", m);
    } else if (cfg_.encoder_kind == EncoderKind::bilstm) {
      int in = cfg_.d1 + cfg_.d2, hid = cfg_.lstm_hidden;
      for (const char* dir : {"sent.fwd.", "sent.bwd."}) {
        for (const char* g : {"f", "i", "o", "g"}) {
          std::string gs(g);
          params_[dir + ("wx_" + gs)] = ad::xavier_uniform({hid, in}, rng);
          params_[dir + ("wh_" + gs)] = ad::xavier_uniform({hid, hid}, rng);
          params_[dir + ("b_" + gs)] = Tensor::zeros({hid}, true);
          for (const char* ln : {"lnx_", "lnh_"}) {
            params_[dir + (ln + gs + ".gain")] = Tensor::leaf({hid}, std::vector<double>(size_t(hid), 1.0), true);
            params_[dir + (ln + gs + ".bias")] = Tensor::zeros({hid}, true);
          }
        }
        params_[dir + std::string("lnc.gain")] = Tensor::leaf({hid}, std::vector<double>(size_t(hid), 1.0), true);
        params_[dir + std::string("lnc.bias")] = Tensor::zeros({hid}, true);
      }
    }

    params_["head.stance.w"] = ad::xavier_uniform({corpus::kStanceCount, m}, rng, "head.stance.w");
    params_["head.stance.b"] = Tensor::zeros({corpus::kStanceCount}, true);
    params_["head.ver.w"] = ad::xavier_uniform({corpus::kVeracityCount, m}, rng, "head.ver.w");
    params_["head.ver.b"] = Tensor::zeros({corpus::kVeracityCount}, true);

    for (auto& [name, t] : params_) t.node()->name = name;
  }

  EncoderConfig cfg_;
  ParamMap params_;
};

// ---------------------------------------------------------------------------
// Joint loss (veracity + lambda * stance); stance gold entries of -1 and a
// veracity gold of -1 are masked out.

struct JointLoss {
  Tensor total;
  Tensor stance;    // mean per-post cross entropy over labeled posts
  Tensor veracity;  // thread-level cross entropy
};

inline JointLoss joint_loss(const Tensor& stance_logits, const std::vector<int>& stance_gold,
                            const Tensor& ver_logits, int ver_gold, double lambda) {
  if (lambda < 0) throw ConfigError("lambda must be >= 0");
  JointLoss out;
  out.stance = ad::cross_entropy_rows(stance_logits, stance_gold);
  out.veracity = ad::cross_entropy_rows(ver_logits, {ver_gold});
  out.total = ad::add(out.veracity, ad::scale(out.stance, lambda));
  return out;
}

// ---------------------------------------------------------------------------
// Model checkpoints: TAD1 tensor file plus a JSON manifest carrying the
// config, the frozen label orderings, the feature layout and the vocabulary
// hash.

inline void save_model(const fs::path& prefix, const Model& model, uint64_t vocab_hash) {
  ad::save_checkpoint(fs::path(prefix.string() + ".tad1"), model.params());
  json manifest;
  manifest["config"] = model.config().to_json();
  manifest["stance_labels"] = {"support", "comment", "deny", "query"};
  manifest["veracity_labels"] = {"true", "false", "unverified"};
  manifest["feature_groups"] = features::layout_sidecar()["group_offsets"];
  manifest["vocab_hash"] = hex64(vocab_hash);
  std::ofstream out(prefix.string() + ".json", std::ios::binary);
  if (!out) throw ConfigError("cannot write model manifest " + prefix.string() + ".json");
  out << manifest.dump(2) << "\n";
}

inline Model load_model(const fs::path& prefix, uint64_t* vocab_hash = nullptr) {
  std::ifstream in(prefix.string() + ".json", std::ios::binary);
  if (!in) throw ConfigError("cannot read model manifest " + prefix.string() + ".json");
  json manifest;
  in >> manifest;
  EncoderConfig cfg = EncoderConfig::from_json(manifest.at("config"));
  if (vocab_hash && manifest.contains("vocab_hash"))
    *vocab_hash = std::stoull(manifest["vocab_hash"].get<std::string>(), nullptr, 16);
  return Model(cfg, ad::load_checkpoint(fs::path(prefix.string() + ".tad1")));
}

}  // namespace rsvp::model
