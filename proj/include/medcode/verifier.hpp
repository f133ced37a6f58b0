#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "medcode/corpus.hpp"
#include "medcode/nn.hpp"
#include "medcode/proposer.hpp"
#include "medcode/segmenter.hpp"

namespace medcode {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lowercase word-level vocabulary with a single out-of-vocabulary token at
// index 0, built from the training documents and the code descriptions.
struct Vocab {
  std::vector<std::string> tokens;  // tokens[0] == "<unk>"
  std::unordered_map<std::string, int> index;

  int size() const { return int(tokens.size()); }
  int id_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? 0 : it->second;
  }
  static Vocab build(const Corpus& corpus, const LabelSpace& labels, int min_freq = 1);
};

// Empty input maps to the out-of-vocabulary token so every sequence has at
// least one step.
std::vector<int> encode_tokens(const Vocab& vocab, const std::string& text);

struct VerifierConfig {
  int emb_dim = 100;
  int hidden_dim = 512;  // LSTM hidden and output size
  double emb_dropout = 0.2;
  double rep_dropout = 0.2;
  enum class Pooling { mean, last };
  Pooling pooling = Pooling::mean;
};

struct TrainingConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.02;
  int epochs = 20;
  uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables clipping
};

struct CodePrediction {
  std::string code;
  double score = 0.0;                 // positive-class probability at the selected sentence
  std::optional<int> evidence_index;  // global sentence index, absent when S_k = 0
};

// Sentence encoder (single-layer LSTM over word embeddings), shared between
// evidence sentences and code descriptions, plus a per-label attention head
// that turns (sentence states, code query) into a 2-logit score.
class VerifierModel {
 public:
  VerifierModel() = default;
  VerifierModel(Vocab vocab, VerifierConfig cfg, uint64_t init_seed);

  const Vocab& vocab() const { return vocab_; }
  const VerifierConfig& config() const { return cfg_; }
  std::vector<nn::Param*> params();
  size_t param_count() const;

  struct Mode {
    bool training = false;
    Rng* dropout_rng = nullptr;
  };

  // Per-token hidden states, T x hidden.
  nn::Var encode_sentence(nn::Tape& tape, const std::vector<int>& tokens, const Mode& mode);
  // Pooled query vector for a code description, 1 x hidden.
  nn::Var encode_code(nn::Tape& tape, const std::vector<int>& desc_tokens, const Mode& mode);
  // Scaled dot-product attention over token states with the code query,
  // then a shared linear head over [context; query; context*query] -> 1 x 2.
  nn::Var attend(nn::Tape& tape, nn::Var sentence_states, nn::Var code_query);

  // Eval-mode conveniences.
  nn::Mat encode_sentence_eval(const std::string& sentence);
  nn::Mat encode_code_eval(const Code& code);
  std::array<double, 2> attend_eval(const std::string& sentence, const Code& code);

  // Serialization plumbing used by the checkpoint io below.
  const std::vector<nn::Param>& raw_params() const { return params_; }
  std::vector<nn::Param>& raw_params() { return params_; }

 private:
  Vocab vocab_;
  VerifierConfig cfg_;
  // emb (V x E), w_ih (E x 4H), w_hh (H x 4H), b_g (1 x 4H),
  // w_head (3H x 2), b_head (1 x 2)
  std::vector<nn::Param> params_;

  nn::Var lstm_states(nn::Tape& tape, nn::Var emb_rows);

  friend VerifierModel make_model_for_load(Vocab, VerifierConfig);
};

// w_j = softmax_j(max over the two logit dims of z_j); S x 1.
nn::Var sentence_weights(nn::Tape& tape, const std::vector<nn::Var>& logit_pairs);
std::vector<double> sentence_weight_values(const std::vector<std::array<double, 2>>& logit_pairs);

// The prediction rule: pick the sentence with the highest weight (ties take
// the lowest index) and return (index, positive-class probability there).
std::pair<int, double> select_evidence(const std::vector<std::array<double, 2>>& logit_pairs);

// Weighted two-class cross-entropy of every candidate sentence against the
// document-level gold label for the code.
nn::Var loss_gold(nn::Tape& tape, const std::vector<nn::Var>& logit_pairs, nn::Var weights,
                  int y_gold);
// Sum of binary cross-entropies of max-logit confidences against the
// sentence-level silver labels.
nn::Var loss_silver(nn::Tape& tape, const std::vector<nn::Var>& logit_pairs,
                    const std::vector<uint8_t>& y_silver);
nn::Var total_loss(nn::Tape& tape, const std::vector<nn::Var>& logit_pairs, nn::Var weights,
                   int y_gold, const std::vector<uint8_t>& y_silver, bool use_silver);

struct TrainOptions {
  bool use_silver = true;  // false reproduces the no-silver ablation
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_micro_f1 = 0.0;
};

struct TrainResult {
  VerifierModel model;
  std::vector<EpochStats> log;
  int skipped_docs = 0;  // documents with an empty candidate set
  int best_epoch = 0;
};

// One optimizer step per document; the loss sums L_{k,c} over every code in
// the label space. Deterministic given cfg.seed. When a validation split is
// provided the returned model is the best-epoch snapshot by micro F1 at a
// 0.5 threshold.
TrainResult train_verifier(const Corpus& train, const std::vector<CandidateSet>& train_cs,
                           const LabelSpace& labels, const VerifierConfig& vcfg,
                           const TrainingConfig& tcfg, const TrainOptions& opts = {},
                           const Corpus* val = nullptr,
                           const std::vector<CandidateSet>* val_cs = nullptr);

// Reusable code-query encodings for batch prediction with fixed parameters.
std::vector<nn::Mat> encode_all_codes_eval(VerifierModel& model, const LabelSpace& labels);

std::vector<CodePrediction> predict_document(VerifierModel& model,
                                             const SentenceIndexedDocument& doc,
                                             const CandidateSet& cs, const LabelSpace& labels,
                                             const std::vector<nn::Mat>* code_cache = nullptr);

CodePrediction predict_code(VerifierModel& model, const SentenceIndexedDocument& doc,
                            const CandidateSet& cs, const LabelSpace& labels, int code_index);

// Versioned binary checkpoint: refuses files with a different format tag.
void save_checkpoint(VerifierModel& model, const TrainingConfig& tcfg,
                     const std::string& fingerprint, const std::string& path);
VerifierModel load_checkpoint(const std::string& path, std::string* fingerprint = nullptr,
                              TrainingConfig* tcfg = nullptr);

}  // namespace medcode
