#pragma once

// Leave-one-out VQA accuracy, ANLS, and the edit distance under both.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace logos {

struct QAItem;

// Edit distance over Unicode code points (UTF-8 input).
std::size_t levenshtein(std::string_view a, std::string_view b);

// ASCII lowercase, trim, collapse internal whitespace runs to one space.
std::string normalize_answer(std::string_view s);

inline constexpr double kAnlsThreshold = 0.5;

double anls_item(std::string_view prediction, std::span<const std::string> references, double tau = kAnlsThreshold);

// Mean over the 10 leave-one-out subsets of min(1, matches / 3).
double vqa_accuracy_item(std::string_view prediction, std::span<const std::string> answers);

struct Prediction {
  std::string question_id;
  std::string answer;
};

struct EvalRow {
  std::string question_id;
  std::string prediction;
  double accuracy = 0.0;
  double anls = 0.0;
};

struct EvalReport {
  std::size_t n_items = 0;
  double mean_accuracy = 0.0;
  double mean_anls = 0.0;
  bool empty = true;
  std::vector<EvalRow> rows;
};

// Rows follow the order of `predictions`; an unknown question_id is an
// IntegrityError.
EvalReport evaluate(std::span<const Prediction> predictions, std::span<const QAItem> items);

}  // namespace logos
