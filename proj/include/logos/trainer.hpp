#pragma once

// Training: grounding pretraining, answer fine-tuning over every
// (question, OCR source) pair, the warmup/step-decay schedule, and a
// finite-difference gradient checker for small models.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "logos/corpus.hpp"
#include "logos/model.hpp"

namespace logos {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t total_iters = 2000;
  double base_lr = 1e-3;
  std::size_t warmup_iters = 100;
  std::vector<std::size_t> decay_points{1167, 1583};
  double decay_factor = 0.1;
  std::uint64_t seed = 7;
  std::size_t eval_every = 250;
  std::size_t answer_vocab_size = 5000;
  std::size_t grounding_candidates = 4;
  // Grounding pretraining hides each candidate's label with this
  // probability, so referral must also be resolved from region features.
  double label_mask_rate = 0.5;
  // Probability that a fine-tuning example is replaced by an
  // answer-preserving relabelled copy (see AnswerPreservingAugmenter).
  double augment_rate = 0.8;

  void validate() const;
  // 48 x 24000 iterations at base_lr 1e-4, warmup 1000, decays at 14000 and
  // 19000.
  static TrainConfig full_scale();
  // Desk schedule for grounding pretraining: 200 iterations, warmup 20, no
  // decays.
  static TrainConfig grounding_default();
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

double lr_at(std::size_t iter, const TrainConfig& cfg);

class Adam {
 public:
  explicit Adam(const ParameterStore& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParameterStore& params, const Gradients& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Array> m_, v_;
};

struct TrainingPair {
  std::size_t item = 0;
  std::size_t source = 0;
};

// Visits every (item, source) pair exactly once per epoch, in a seeded
// shuffled order.
class PairSampler {
 public:
  PairSampler(std::size_t n_items, std::size_t n_sources, std::uint64_t seed);
  TrainingPair next();
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();
  std::vector<TrainingPair> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::mt19937_64 rng_;
};

struct FinetuneExample {
  ItemContext item;
  SourceContext source;
  StepTargets targets;
  std::size_t item_index = 0;
  std::size_t source_index = 0;
};

// One example per (item, source), item-major.
std::vector<FinetuneExample> prepare_finetune(const LogosModel& model, const Dataset& dataset);

// Mean loss over unmasked steps of the batch; gradients of that mean are
// added into `grads`.
double batch_gradients(const LogosModel& model, std::span<const FinetuneExample* const> batch, Gradients& grads);

// Stateless 64-bit seed derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

double finetune_step(LogosModel& model, Adam& adam, std::span<const FinetuneExample* const> batch, std::size_t iter,
                     const TrainConfig& cfg);

// Builds fresh fine-tuning examples from a training item: object labels are
// permuted together with their region features (question tokens follow), and
// OCR words are renamed injectively to answer-vocabulary words, in the gold
// answer too. The answer keeps its position, so the task is unchanged while
// item-specific word and label identities are not.
class AnswerPreservingAugmenter {
 public:
  AnswerPreservingAugmenter(const Dataset& train_set, const AnswerVocab& answers);
  FinetuneExample example(const LogosModel& model, std::size_t item_index, std::size_t source_index,
                          std::mt19937_64& rng) const;

 private:
  const Dataset* train_;
  std::vector<std::string> labels_;
  std::map<std::string, std::vector<double>> features_;
  std::vector<std::string> pool_;
};

struct GroundingExample {
  std::vector<std::size_t> question_ids;
  ItemContext candidates;
  std::size_t gold = 0;
};

// "where is the <label>?" over n candidate objects of one image, one example
// per image of the dataset's items with at least n objects.
std::vector<GroundingExample> referral_examples(const LogosModel& model, const Dataset& dataset,
                                                std::size_t n_candidates, std::uint64_t seed);

double grounding_loss_value(const LogosModel& model, const GroundingExample& ex);
double grounding_accuracy(const LogosModel& model, std::span<const GroundingExample> examples);

struct LogRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  bool has_val = false;
  double val_accuracy = 0.0;
};
using LogSink = std::function<void(const LogRecord&)>;

// Writes one JSON object per record.
LogSink jsonl_sink(std::ostream& os);

struct TrainReport {
  std::vector<double> losses;
  std::size_t best_iter = 0;
  double best_val_accuracy = -1.0;
};

TrainReport pretrain_grounding(LogosModel& model, std::span<const GroundingExample> examples, const TrainConfig& cfg,
                               const LogSink& log = {});

// Fine-tunes on train, evaluating on val every eval_every iterations and at
// the end; the parameters of the best evaluation are restored on return.
TrainReport train(LogosModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const LogSink& log = {});

// Builds a fresh model for a training split with the configured vocabulary.
LogosModel make_model(const Dataset& train_set, const ModelConfig& model_cfg, const TrainConfig& cfg);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_probes = 0;
  std::size_t n_params = 0;
  std::string warning;
};

// Small model whose gradient is checked: d_model 4, 2 heads, ffn 8.
ModelConfig grad_check_config();

// Central differences (h = 1e-5) against the analytic gradient of the full
// fine-tune loss plus the grounding loss, on n_probes random parameter
// entries. Relative error is |a - n| / max(|a|, |n|, 1e-3).
GradCheckResult grad_check(const ModelConfig& small_cfg, std::size_t n_probes, std::uint64_t seed);

}  // namespace logos
