#pragma once

// The answering network.
//
// A text encoder runs over question, object labels and OCR words. OCR tokens
// and objects are fused with their visual, layout and character features; a
// multimodal transformer runs over [question | objects | OCR | decoder
// prefix], and each decoder step scores the fixed answer vocabulary and every
// OCR token of the active source with a pointer head.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "logos/corpus.hpp"
#include "logos/phoc.hpp"
#include "logos/tensor.hpp"

namespace logos {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t text_layers = 3;
  std::size_t mm_layers = 2;
  std::size_t ffn_width = 128;
  std::size_t max_decode_steps = 12;
  std::size_t max_text_len = 256;
  int spatial_d = 32;
  std::size_t feature_width = 32;
  double cluster_epsilon = 0.02;

  std::size_t spatial_width() const { return 3 * static_cast<std::size_t>(spatial_d); }
  // Non-textual part of an OCR token's fused input: PHOC, layout descriptor,
  // region feature and box.
  std::size_t ocr_static_width() const { return kPhocWidth + spatial_width() + feature_width + 4; }
  std::size_t object_static_width() const { return feature_width + 4; }
  // Region features arrive as unit vectors; rows carry them at unit RMS per
  // component so they are not swamped by the PHOC and layout blocks.
  double feature_scale() const { return std::sqrt(static_cast<double>(feature_width)); }
  void validate() const;
};

// Input vocabulary of the text encoder: <pad>=0, <unk>=1, then words by
// descending count with lexicographic tie-break.
class TextVocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  TextVocab();
  static TextVocab from_words(std::vector<std::string> words);
  // Question tokens, object labels and OCR words of every source for the
  // images the items refer to; words seen fewer than min_count times map to
  // <unk>.
  static TextVocab build(const Dataset& train, std::size_t min_count = 2);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t i) const { return words_.at(i); }
  std::size_t id(const std::string& word) const;
  std::vector<std::string> content_words() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Question and object inputs of one item; shared by all OCR sources.
struct ItemContext {
  std::vector<std::size_t> question_ids;
  std::vector<std::size_t> label_ids;
  Array object_static;  // n_objects x object_static_width
};

// One OCR source's tokens for one image, in reading order (cluster, line,
// token).
struct SourceContext {
  std::string source_id;
  std::vector<std::string> words;
  std::vector<std::size_t> text_ids;
  std::vector<NormBox> boxes;
  Array ocr_static;  // n_tokens x ocr_static_width
  std::size_t size() const { return words.size(); }
};

struct StepDistribution {
  std::vector<double> probs;  // vocab positions, then OCR copy positions
  std::size_t n_vocab = 0;
  std::size_t n_copy = 0;
};

enum class Termination { kEnd, kLengthCap };

struct DecodedAnswer {
  std::vector<std::string> tokens;
  std::vector<std::size_t> positions;
  std::vector<double> step_probs;
  Termination terminated_by = Termination::kEnd;
  // Probability of <end> at the step that stopped decoding (0 when capped).
  double end_prob = 0.0;
  std::string text() const;
};

// Per decoding step, the positions a gold word may be produced from. An empty
// set marks a step excluded from the loss.
struct StepTargets {
  std::vector<std::vector<std::size_t>> valid;
  std::size_t n_vocab = 0;
  std::size_t n_copy = 0;
  // Representation fed back after each gold word: a copy position when the
  // word occurs among the OCR tokens, otherwise a vocabulary index.
  std::vector<std::size_t> feedback;
  std::size_t masked_steps() const;
};

class LogosModel {
 public:
  LogosModel(ModelConfig cfg, AnswerVocab answers, TextVocab text, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const AnswerVocab& answer_vocab() const { return answers_; }
  const TextVocab& text_vocab() const { return text_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  ItemContext prepare_item(const QAItem& item, const std::vector<ObjectRegion>& objects) const;
  SourceContext prepare_source(const std::vector<OcrLine>& lines, const std::vector<ObjectRegion>& objects,
                               const std::string& source_id) const;

  struct TextEncoding {
    Var question;
    Var objects;  // invalid when there are none
    Var ocr;      // invalid when there are none
  };
  TextEncoding encode_text(Tape& t, const std::vector<std::size_t>& question_ids,
                           const std::vector<std::size_t>& label_ids,
                           const std::vector<std::size_t>& ocr_ids) const;

  Var fuse_ocr(Tape& t, Var text_emb, const Array& ocr_static) const;
  Var fuse_object(Tape& t, Var label_emb, const Array& object_static) const;

  // Hidden states for [question | objects | ocr | decoder]. Empty segments
  // are passed as invalid Vars.
  Var mm_forward(Tape& t, Var question, Var objects, Var ocr, Var decoder,
                 std::vector<Array>* attention = nullptr) const;

  // decoder_hidden: S x d, ocr_hidden: N x d (invalid when N = 0).
  // Returns S x (V + N) logits.
  Var step_logits(Tape& t, Var decoder_hidden, Var ocr_hidden) const;

  DecodedAnswer decode_greedy(const ItemContext& item, const SourceContext& source) const;

  // Teacher-forced sum of per-step cross-entropies.
  Var finetune_loss(Tape& t, const ItemContext& item, const SourceContext& source,
                    const StepTargets& targets) const;

  // Candidate logits (1 x n) for a referral question over n >= 2 regions.
  Var grounding_logits(Tape& t, const std::vector<std::size_t>& question_ids, const ItemContext& candidates) const;
  std::vector<double> grounding_scores(const std::vector<std::size_t>& question_ids,
                                       const ItemContext& candidates) const;

 private:
  Var block(Tape& t, Var x, const std::string& prefix, const AttentionMask& mask,
            std::vector<Array>* attention) const;
  Var param(Tape& t, const std::string& name) const;
  void add_block_params(const std::string& prefix, std::mt19937_64& rng);
  Var decoder_inputs(Tape& t, Var ocr_fused, const std::vector<std::size_t>& positions) const;

  ModelConfig cfg_;
  AnswerVocab answers_;
  TextVocab text_;
  ParameterStore params_;
  Array text_positions_;     // max_text_len x d
  Array decoder_positions_;  // max_decode_steps x d
};

StepTargets build_step_targets(const std::vector<std::string>& gold_words, const AnswerVocab& vocab,
                               const std::vector<std::string>& ocr_words, std::size_t max_steps);

// Softmax of one logits row as a StepDistribution.
StepDistribution step_distribution(std::span<const double> logits, std::size_t n_vocab);

}  // namespace logos
