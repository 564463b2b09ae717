#pragma once

// Multi-source answering: decode once per OCR source, score each answer by
// the log product of its per-token probabilities, keep the best.

#include <span>
#include <string>
#include <vector>

#include "logos/corpus.hpp"
#include "logos/model.hpp"

namespace logos {

// Sum of log p over the steps; every p must lie in (0, 1].
double answer_confidence(std::span<const double> step_probs);

// Log score of a decoded answer. An empty answer scores the log of its <end>
// probability; <end> is not a factor otherwise.
double answer_log_score(const DecodedAnswer& answer);

struct SourceAnswer {
  std::string source_id;
  DecodedAnswer answer;
  double log_score = 0.0;
};

// Highest log score wins; ties go to the source listed first in `priority`
// (sources missing from it rank after listed ones, in candidate order).
const SourceAnswer& select_source(std::span<const SourceAnswer> candidates,
                                  const std::vector<std::string>& priority = {});

struct SelectionResult {
  std::string question_id;
  std::string answer;
  std::string selected_source;
  std::vector<SourceAnswer> candidates;
};

SelectionResult predict_with_selection(const LogosModel& model, const Dataset& dataset, const QAItem& item,
                                       const std::vector<std::string>& priority = {});

std::vector<SelectionResult> predict_dataset(const LogosModel& model, const Dataset& dataset,
                                             const std::vector<std::string>& priority = {});

}  // namespace logos
