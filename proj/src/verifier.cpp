#include "medcode/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace medcode {

using nn::Mat;
using nn::Param;
using nn::Tape;
using nn::Var;
using nlohmann::json;

Vocab Vocab::build(const Corpus& corpus, const LabelSpace& labels, int min_freq) {
  std::map<std::string, int> freq;
  for (const auto& d : corpus.docs)
    for (const auto& tok : tokenize_words(d.text)) ++freq[tok];
  for (const auto& c : labels.codes())
    for (const auto& tok : tokenize_words(c.description)) ++freq[tok];
  Vocab v;
  v.tokens.push_back("<unk>");
  v.index.emplace("<unk>", 0);
  for (const auto& [tok, n] : freq) {
    if (n < min_freq) continue;
    v.index.emplace(tok, int(v.tokens.size()));
    v.tokens.push_back(tok);
  }
  return v;
}

std::vector<int> encode_tokens(const Vocab& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const auto& tok : tokenize_words(text)) ids.push_back(vocab.id_of(tok));
  if (ids.empty()) ids.push_back(0);
  return ids;
}

namespace {
enum ParamIdx { kEmb = 0, kWih, kWhh, kBg, kWhead, kBhead, kParamCount };
}

VerifierModel::VerifierModel(Vocab vocab, VerifierConfig cfg, uint64_t init_seed)
    : vocab_(std::move(vocab)), cfg_(cfg) {
  const int e = cfg_.emb_dim;
  const int h = cfg_.hidden_dim;
  params_.reserve(kParamCount);
  params_.emplace_back("emb", vocab_.size(), e);
  params_.emplace_back("w_ih", e, 4 * h);
  params_.emplace_back("w_hh", h, 4 * h);
  params_.emplace_back("b_g", 1, 4 * h);
  params_.emplace_back("w_head", 3 * h, 2);
  params_.emplace_back("b_head", 1, 2);

  Rng rng(init_seed);
  nn::init_uniform(params_[kEmb], rng, 0.1);
  nn::init_uniform(params_[kWih], rng, 1.0 / std::sqrt(double(e)));
  nn::init_uniform(params_[kWhh], rng, 1.0 / std::sqrt(double(h)));
  nn::init_uniform(params_[kWhead], rng, 1.0 / std::sqrt(double(3 * h)));
  // Forget-gate bias starts positive so early training does not wash out
  // the cell state.
  for (int j = h; j < 2 * h; ++j) params_[kBg].value(0, j) = 1.0;
}

std::vector<Param*> VerifierModel::params() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

size_t VerifierModel::param_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Var VerifierModel::lstm_states(Tape& tape, Var emb_rows) {
  const int h = cfg_.hidden_dim;
  const int t_steps = tape.val(emb_rows).rows;
  Var w_ih = tape.param(&params_[kWih]);
  Var w_hh = tape.param(&params_[kWhh]);
  Var b_g = tape.param(&params_[kBg]);
  Var h_prev = tape.leaf(Mat(1, h));
  Var c_prev = tape.leaf(Mat(1, h));
  std::vector<Var> states;
  states.reserve(size_t(t_steps));
  for (int t = 0; t < t_steps; ++t) {
    Var x_t = tape.row(emb_rows, t);
    Var gates = tape.add_rowvec(
        tape.add(tape.matmul(x_t, w_ih), tape.matmul(h_prev, w_hh)), b_g);
    Var i_g = tape.sigmoid(tape.slice_cols(gates, 0, h));
    Var f_g = tape.sigmoid(tape.slice_cols(gates, h, 2 * h));
    Var g_g = tape.tanh(tape.slice_cols(gates, 2 * h, 3 * h));
    Var o_g = tape.sigmoid(tape.slice_cols(gates, 3 * h, 4 * h));
    Var c_t = tape.add(tape.hadamard(f_g, c_prev), tape.hadamard(i_g, g_g));
    Var h_t = tape.hadamard(o_g, tape.tanh(c_t));
    states.push_back(h_t);
    h_prev = h_t;
    c_prev = c_t;
  }
  return tape.vstack(states);
}

Var VerifierModel::encode_sentence(Tape& tape, const std::vector<int>& tokens,
                                   const Mode& mode) {
  std::vector<int> ids = tokens.empty() ? std::vector<int>{0} : tokens;
  Var emb = tape.gather_rows(tape.param(&params_[kEmb]), std::move(ids));
  if (mode.training)
    emb = tape.dropout(emb, cfg_.emb_dropout, *mode.dropout_rng, true);
  Var states = lstm_states(tape, emb);
  if (mode.training)
    states = tape.dropout(states, cfg_.rep_dropout, *mode.dropout_rng, true);
  return states;
}

Var VerifierModel::encode_code(Tape& tape, const std::vector<int>& desc_tokens,
                               const Mode& mode) {
  std::vector<int> ids = desc_tokens.empty() ? std::vector<int>{0} : desc_tokens;
  Var emb = tape.gather_rows(tape.param(&params_[kEmb]), std::move(ids));
  if (mode.training)
    emb = tape.dropout(emb, cfg_.emb_dropout, *mode.dropout_rng, true);
  Var states = lstm_states(tape, emb);
  Var pooled = cfg_.pooling == VerifierConfig::Pooling::mean
                   ? tape.mean_rows(states)
                   : tape.row(states, tape.val(states).rows - 1);
  if (mode.training)
    pooled = tape.dropout(pooled, cfg_.rep_dropout, *mode.dropout_rng, true);
  return pooled;
}

Var VerifierModel::attend(Tape& tape, Var sentence_states, Var code_query) {
  Var scores = tape.scale(tape.matvec_rows(sentence_states, code_query),
                          1.0 / std::sqrt(double(cfg_.hidden_dim)));
  Var attn = tape.softmax_col(scores);
  Var context = tape.weighted_rows(attn, sentence_states);
  Var feats = tape.concat_cols({context, code_query, tape.hadamard(context, code_query)});
  return tape.add_rowvec(tape.matmul(feats, tape.param(&params_[kWhead])),
                         tape.param(&params_[kBhead]));
}

Mat VerifierModel::encode_sentence_eval(const std::string& sentence) {
  Tape tape;
  return tape.val(encode_sentence(tape, encode_tokens(vocab_, sentence), {}));
}

Mat VerifierModel::encode_code_eval(const Code& code) {
  Tape tape;
  return tape.val(encode_code(tape, encode_tokens(vocab_, code.description), {}));
}

std::array<double, 2> VerifierModel::attend_eval(const std::string& sentence, const Code& code) {
  Tape tape;
  Var h = encode_sentence(tape, encode_tokens(vocab_, sentence), {});
  Var q = encode_code(tape, encode_tokens(vocab_, code.description), {});
  const Mat& z = tape.val(attend(tape, h, q));
  return {z(0, 0), z(0, 1)};
}

Var sentence_weights(Tape& tape, const std::vector<Var>& logit_pairs) {
  if (logit_pairs.empty()) throw TrainError("sentence_weights requires at least one sentence");
  std::vector<Var> maxes;
  maxes.reserve(logit_pairs.size());
  for (Var z : logit_pairs) maxes.push_back(tape.max2(z));
  return tape.softmax_col(tape.vstack(maxes));
}

std::vector<double> sentence_weight_values(
    const std::vector<std::array<double, 2>>& logit_pairs) {
  Tape tape;
  std::vector<Var> zs;
  for (const auto& z : logit_pairs) {
    Mat m(1, 2);
    m(0, 0) = z[0];
    m(0, 1) = z[1];
    zs.push_back(tape.leaf(std::move(m)));
  }
  const Mat& w = tape.val(sentence_weights(tape, zs));
  return w.a;
}

std::pair<int, double> select_evidence(const std::vector<std::array<double, 2>>& logit_pairs) {
  std::vector<double> w = sentence_weight_values(logit_pairs);
  int best = 0;
  for (int j = 1; j < int(w.size()); ++j)
    if (w[size_t(j)] > w[size_t(best)]) best = j;
  const auto& z = logit_pairs[size_t(best)];
  const double mx = std::max(z[0], z[1]);
  const double p1 = std::exp(z[1] - mx) / (std::exp(z[0] - mx) + std::exp(z[1] - mx));
  return {best, p1};
}

Var loss_gold(Tape& tape, const std::vector<Var>& logit_pairs, Var weights, int y_gold) {
  std::vector<Var> ces;
  ces.reserve(logit_pairs.size());
  for (Var z : logit_pairs) ces.push_back(tape.softmax_ce2(z, y_gold));
  return tape.dot_col(weights, tape.vstack(ces));
}

Var loss_silver(Tape& tape, const std::vector<Var>& logit_pairs,
                const std::vector<uint8_t>& y_silver) {
  if (logit_pairs.size() != y_silver.size())
    throw TrainError("silver label vector length mismatch");
  std::vector<Var> terms;
  terms.reserve(logit_pairs.size());
  for (size_t j = 0; j < logit_pairs.size(); ++j)
    terms.push_back(tape.bce_with_logit(tape.max2(logit_pairs[j]), double(y_silver[j])));
  return tape.sum(terms);
}

Var total_loss(Tape& tape, const std::vector<Var>& logit_pairs, Var weights, int y_gold,
               const std::vector<uint8_t>& y_silver, bool use_silver) {
  Var gold = loss_gold(tape, logit_pairs, weights, y_gold);
  if (!use_silver) return gold;
  return tape.sum({gold, loss_silver(tape, logit_pairs, y_silver)});
}

namespace {

struct PreparedDoc {
  int doc_index = 0;
  std::vector<std::vector<int>> sentence_tokens;  // aligned with cs.m
  const CandidateSet* cs = nullptr;
  const Document* doc = nullptr;
};

std::vector<PreparedDoc> prepare_docs(const Corpus& corpus,
                                      const std::vector<CandidateSet>& css, const Vocab& vocab,
                                      int* skipped) {
  if (corpus.docs.size() != css.size())
    throw TrainError("candidate sets are not aligned with the corpus");
  std::vector<PreparedDoc> out;
  for (size_t k = 0; k < corpus.docs.size(); ++k) {
    if (css[k].size() == 0) {
      if (skipped) ++*skipped;
      continue;
    }
    PreparedDoc p;
    p.doc_index = int(k);
    p.cs = &css[k];
    p.doc = &corpus.docs[k];
    SentenceIndexedDocument sid = split_sentences(corpus.docs[k].text, corpus.docs[k].id);
    for (int s : css[k].m) {
      if (s < 0 || s >= sid.size())
        throw TrainError("candidate sentence index out of range in doc " + corpus.docs[k].id);
      p.sentence_tokens.push_back(encode_tokens(vocab, sid.sentences[size_t(s)]));
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<nn::Mat> encode_all_codes_eval(VerifierModel& model, const LabelSpace& labels) {
  std::vector<Mat> out;
  out.reserve(size_t(labels.size()));
  for (const auto& c : labels.codes()) out.push_back(model.encode_code_eval(c));
  return out;
}

std::vector<CodePrediction> predict_document(VerifierModel& model,
                                             const SentenceIndexedDocument& doc,
                                             const CandidateSet& cs, const LabelSpace& labels,
                                             const std::vector<nn::Mat>* code_cache) {
  std::vector<CodePrediction> out;
  out.reserve(size_t(labels.size()));
  if (cs.size() == 0) {
    for (const auto& c : labels.codes()) out.push_back({c.id, 0.0, std::nullopt});
    return out;
  }
  Tape tape;
  std::vector<Var> sent_states;
  for (int s : cs.m) {
    if (s < 0 || s >= doc.size())
      throw TrainError("candidate sentence index out of range in doc " + doc.doc_id);
    sent_states.push_back(
        model.encode_sentence(tape, encode_tokens(model.vocab(), doc.sentences[size_t(s)]), {}));
  }
  for (int c = 0; c < labels.size(); ++c) {
    Var query = code_cache
                    ? tape.leaf((*code_cache)[size_t(c)])
                    : model.encode_code(
                          tape, encode_tokens(model.vocab(), labels.at(c).description), {});
    std::vector<std::array<double, 2>> zs;
    zs.reserve(sent_states.size());
    for (Var h : sent_states) {
      const Mat& z = tape.val(model.attend(tape, h, query));
      zs.push_back({z(0, 0), z(0, 1)});
    }
    const auto [best, score] = select_evidence(zs);
    out.push_back({labels.at(c).id, score, cs.m[size_t(best)]});
  }
  return out;
}

CodePrediction predict_code(VerifierModel& model, const SentenceIndexedDocument& doc,
                            const CandidateSet& cs, const LabelSpace& labels, int code_index) {
  return predict_document(model, doc, cs, labels)[size_t(code_index)];
}

TrainResult train_verifier(const Corpus& train, const std::vector<CandidateSet>& train_cs,
                           const LabelSpace& labels, const VerifierConfig& vcfg,
                           const TrainingConfig& tcfg, const TrainOptions& opts,
                           const Corpus* val, const std::vector<CandidateSet>* val_cs) {
  if (tcfg.learning_rate <= 0) throw ConfigError("learning rate must be positive");
  if (tcfg.epochs < 1) throw ConfigError("epochs must be >= 1");

  TrainResult result;
  Vocab vocab = Vocab::build(train, labels);
  Rng seeder(tcfg.seed);
  VerifierModel model(std::move(vocab), vcfg, seeder.derive("init"));
  Rng dropout_rng(seeder.derive("dropout"));

  std::vector<PreparedDoc> docs = prepare_docs(train, train_cs, model.vocab(), &result.skipped_docs);
  std::vector<std::vector<int>> desc_tokens;
  for (const auto& c : labels.codes())
    desc_tokens.push_back(encode_tokens(model.vocab(), c.description));

  nn::AdamW optimizer({tcfg.learning_rate, tcfg.weight_decay, 0.9, 0.999, 1e-8});
  std::vector<Param*> params = model.params();

  std::vector<SentenceIndexedDocument> val_sids;
  if (val && val_cs) {
    if (val->docs.size() != val_cs->size())
      throw TrainError("validation candidate sets are not aligned with the corpus");
    for (const auto& d : val->docs) val_sids.push_back(split_sentences(d.text, d.id));
  }

  double best_f1 = -1.0;
  std::vector<Mat> best_values;
  VerifierModel::Mode train_mode{true, &dropout_rng};

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const PreparedDoc& pd : docs) {
      Tape tape;
      std::vector<Var> sent_states;
      for (const auto& toks : pd.sentence_tokens)
        sent_states.push_back(model.encode_sentence(tape, toks, train_mode));
      std::vector<Var> code_losses;
      code_losses.reserve(size_t(labels.size()));
      for (int c = 0; c < labels.size(); ++c) {
        Var query = model.encode_code(tape, desc_tokens[size_t(c)], train_mode);
        std::vector<Var> zs;
        zs.reserve(sent_states.size());
        for (Var h : sent_states) zs.push_back(model.attend(tape, h, query));
        Var w = sentence_weights(tape, zs);
        std::vector<uint8_t> silver_row(static_cast<size_t>(pd.cs->size()));
        for (int j = 0; j < pd.cs->size(); ++j) silver_row[size_t(j)] = pd.cs->silver_at(c, j);
        Var loss = total_loss(tape, zs, w, pd.doc->gold_labels[size_t(c)] ? 1 : 0, silver_row,
                              opts.use_silver);
        const double lv = tape.val(loss)(0, 0);
        if (!std::isfinite(lv))
          throw TrainError("non-finite loss at doc " + pd.doc->id + " code " +
                           labels.at(c).id);
        code_losses.push_back(loss);
      }
      Var doc_loss = tape.sum(code_losses);
      epoch_loss += tape.val(doc_loss)(0, 0);
      tape.backward(doc_loss);
      nn::AdamW::clip_grad_norm(params, tcfg.clip_norm);
      optimizer.step(params);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = docs.empty() ? 0.0 : epoch_loss / double(docs.size());
    if (val && val_cs) {
      long tp = 0, fp = 0, fn = 0;
      std::vector<Mat> cache = encode_all_codes_eval(model, labels);
      for (size_t k = 0; k < val->docs.size(); ++k) {
        auto preds = predict_document(model, val_sids[k], (*val_cs)[k], labels, &cache);
        for (int c = 0; c < labels.size(); ++c) {
          const bool pred = preds[size_t(c)].score >= 0.5;
          const bool gold = val->docs[k].gold_labels[size_t(c)] != 0;
          if (pred && gold) ++tp;
          else if (pred) ++fp;
          else if (gold) ++fn;
        }
      }
      stats.val_micro_f1 = (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * double(tp) / double(2 * tp + fp + fn);
      // Ties keep the later epoch, so a flat early plateau never pins the
      // snapshot to a near-initial model.
      if (stats.val_micro_f1 >= best_f1) {
        best_f1 = stats.val_micro_f1;
        result.best_epoch = epoch;
        best_values.clear();
        for (Param* p : params) best_values.push_back(p->value);
      }
    } else {
      result.best_epoch = epoch;
    }
    result.log.push_back(stats);
  }

  if (!best_values.empty()) {
    std::vector<Param*> ps = model.params();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = best_values[i];
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint io
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'M', 'C', 'V', 'E', 'R', 'I', 'F', '1'};
}

VerifierModel make_model_for_load(Vocab vocab, VerifierConfig cfg) {
  // Parameter shapes come from the config; values are overwritten by load.
  return VerifierModel(std::move(vocab), cfg, 0);
}

void save_checkpoint(VerifierModel& model, const TrainingConfig& tcfg,
                     const std::string& fingerprint, const std::string& path) {
  json header;
  header["vocab"] = model.vocab().tokens;
  header["config"] = {{"emb_dim", model.config().emb_dim},
                      {"hidden_dim", model.config().hidden_dim},
                      {"emb_dropout", model.config().emb_dropout},
                      {"rep_dropout", model.config().rep_dropout},
                      {"pooling", model.config().pooling == VerifierConfig::Pooling::mean
                                      ? "mean"
                                      : "last"}};
  header["training"] = {{"learning_rate", tcfg.learning_rate},
                        {"weight_decay", tcfg.weight_decay},
                        {"epochs", tcfg.epochs},
                        {"seed", tcfg.seed},
                        {"clip_norm", tcfg.clip_norm}};
  header["fingerprint"] = fingerprint;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& p : model.raw_params()) {
    const uint32_t r = uint32_t(p.value.rows), c = uint32_t(p.value.cols);
    out.write(reinterpret_cast<const char*>(&r), sizeof r);
    out.write(reinterpret_cast<const char*>(&c), sizeof c);
    out.write(reinterpret_cast<const char*>(p.value.a.data()),
              std::streamsize(p.value.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write: " + path);
}

VerifierModel load_checkpoint(const std::string& path, std::string* fingerprint,
                              TrainingConfig* tcfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint " + path + " has an unknown format tag");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  in.read(hs.data(), std::streamsize(hlen));
  if (!in) throw IoError("checkpoint " + path + " is truncated");
  json header = json::parse(hs);

  Vocab vocab;
  vocab.tokens = header.at("vocab").get<std::vector<std::string>>();
  for (size_t i = 0; i < vocab.tokens.size(); ++i) vocab.index.emplace(vocab.tokens[i], int(i));
  VerifierConfig cfg;
  cfg.emb_dim = header.at("config").at("emb_dim").get<int>();
  cfg.hidden_dim = header.at("config").at("hidden_dim").get<int>();
  cfg.emb_dropout = header.at("config").at("emb_dropout").get<double>();
  cfg.rep_dropout = header.at("config").at("rep_dropout").get<double>();
  cfg.pooling = header.at("config").at("pooling").get<std::string>() == "last"
                    ? VerifierConfig::Pooling::last
                    : VerifierConfig::Pooling::mean;
  if (fingerprint) *fingerprint = header.value("fingerprint", "");
  if (tcfg) {
    tcfg->learning_rate = header.at("training").at("learning_rate").get<double>();
    tcfg->weight_decay = header.at("training").at("weight_decay").get<double>();
    tcfg->epochs = header.at("training").at("epochs").get<int>();
    tcfg->seed = header.at("training").at("seed").get<uint64_t>();
    tcfg->clip_norm = header.at("training").at("clip_norm").get<double>();
  }

  VerifierModel model = make_model_for_load(std::move(vocab), cfg);
  for (auto& p : model.raw_params()) {
    uint32_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), sizeof r);
    in.read(reinterpret_cast<char*>(&c), sizeof c);
    if (!in || int(r) != p.value.rows || int(c) != p.value.cols)
      throw IoError("checkpoint " + path + " has mismatched tensor shapes for " + p.name);
    in.read(reinterpret_cast<char*>(p.value.a.data()),
            std::streamsize(p.value.size() * sizeof(double)));
  }
  if (!in) throw IoError("checkpoint " + path + " is truncated");
  return model;
}

}  // namespace medcode
