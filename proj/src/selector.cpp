#include "logos/selector.hpp"

#include <cmath>
#include <limits>

#include "logos/error.hpp"

namespace logos {

double answer_confidence(std::span<const double> step_probs) {
  double total = 0.0;
  for (double p : step_probs) {
    if (!(p > 0.0) || p > 1.0) throw ContractError("step probability " + std::to_string(p) + " outside (0, 1]");
    total += std::log(p);
  }
  return total;
}

double answer_log_score(const DecodedAnswer& answer) {
  if (answer.tokens.empty()) {
    const double p = answer.end_prob;
    return answer_confidence(std::span<const double>(&p, 1));
  }
  return answer_confidence(answer.step_probs);
}

const SourceAnswer& select_source(std::span<const SourceAnswer> candidates, const std::vector<std::string>& priority) {
  if (candidates.empty()) throw ContractError("select_source needs at least one candidate");
  auto rank = [&](std::size_t i) {
    for (std::size_t r = 0; r < priority.size(); ++r)
      if (priority[r] == candidates[i].source_id) return r;
    return priority.size() + i;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double a = candidates[i].log_score, b = candidates[best].log_score;
    if (a > b || (a == b && rank(i) < rank(best))) best = i;
  }
  return candidates[best];
}

SelectionResult predict_with_selection(const LogosModel& model, const Dataset& dataset, const QAItem& item,
                                       const std::vector<std::string>& priority) {
  if (dataset.sources.empty()) throw ContractError("prediction needs at least one OCR source");
  const auto& objects = dataset.objects_for(item.image_id);
  const ItemContext ctx = model.prepare_item(item, objects);
  SelectionResult out;
  out.question_id = item.question_id;
  for (const OcrSource& source : dataset.sources) {
    const SourceContext sc = model.prepare_source(source.lines(item.image_id), objects, source.id);
    SourceAnswer a;
    a.source_id = source.id;
    a.answer = model.decode_greedy(ctx, sc);
    a.log_score = answer_log_score(a.answer);
    out.candidates.push_back(std::move(a));
  }
  const SourceAnswer& chosen = select_source(out.candidates, priority.empty() ? dataset.source_ids() : priority);
  out.answer = chosen.answer.text();
  out.selected_source = chosen.source_id;
  return out;
}

std::vector<SelectionResult> predict_dataset(const LogosModel& model, const Dataset& dataset,
                                             const std::vector<std::string>& priority) {
  std::vector<SelectionResult> out;
  out.reserve(dataset.items.size());
  for (const QAItem& item : dataset.items) out.push_back(predict_with_selection(model, dataset, item, priority));
  return out;
}

}  // namespace logos
