#include "logos/metrics.hpp"

#include <algorithm>
#include <unordered_map>

#include "logos/corpus.hpp"
#include "logos/error.hpp"

namespace logos {
namespace {

std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = c;
    if (c >= 0xF0 && c < 0xF8) {
      extra = 3;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    }
    if (c >= 0xF8 || (c >= 0x80 && c < 0xC0) || i + extra >= s.size()) {
      extra = 0;
      cp = c;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok) {
      // Malformed sequence: count the lead byte as one unit.
      out.push_back(c);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) {
  const std::u32string x = decode_utf8(a), y = decode_utf8(b);
  if (x.empty()) return y.size();
  if (y.empty()) return x.size();
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
  }
  return out;
}

double anls_item(std::string_view prediction, std::span<const std::string> references, double tau) {
  if (references.empty()) throw ContractError("anls_item needs at least one reference");
  const std::string pred = normalize_answer(prediction);
  const std::size_t pred_len = decode_utf8(pred).size();
  double best = 0.0;
  for (const std::string& ref_raw : references) {
    const std::string ref = normalize_answer(ref_raw);
    const std::size_t longest = std::max(pred_len, decode_utf8(ref).size());
    const double s = longest == 0 ? 1.0 : 1.0 - static_cast<double>(levenshtein(pred, ref)) / static_cast<double>(longest);
    best = std::max(best, s >= tau ? s : 0.0);
  }
  return best;
}

double vqa_accuracy_item(std::string_view prediction, std::span<const std::string> answers) {
  if (answers.size() != 10) {
    throw ContractError("vqa accuracy needs exactly 10 answers, got " + std::to_string(answers.size()));
  }
  const std::string pred = normalize_answer(prediction);
  std::vector<bool> match(answers.size());
  int total = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    match[i] = normalize_answer(answers[i]) == pred;
    total += match[i];
  }
  // Sum of min(3, matches among the other nine), divided once at the end.
  int numer = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) numer += std::min(3, total - static_cast<int>(match[i]));
  return static_cast<double>(numer) / 30.0;
}

EvalReport evaluate(std::span<const Prediction> predictions, std::span<const QAItem> items) {
  std::unordered_map<std::string, const QAItem*> by_id;
  for (const QAItem& item : items) by_id.emplace(item.question_id, &item);
  EvalReport report;
  report.n_items = predictions.size();
  report.empty = predictions.empty();
  double acc = 0.0, anls = 0.0;
  for (const Prediction& p : predictions) {
    auto it = by_id.find(p.question_id);
    if (it == by_id.end()) throw IntegrityError("prediction for unknown question_id '" + p.question_id + "'");
    const auto answers = std::span<const std::string>(it->second->answers);
    EvalRow row{p.question_id, p.answer, vqa_accuracy_item(p.answer, answers), anls_item(p.answer, answers)};
    acc += row.accuracy;
    anls += row.anls;
    report.rows.push_back(std::move(row));
  }
  if (!report.empty) {
    report.mean_accuracy = acc / static_cast<double>(report.n_items);
    report.mean_anls = anls / static_cast<double>(report.n_items);
  }
  return report;
}

}  // namespace logos
