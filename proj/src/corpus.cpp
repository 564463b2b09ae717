#include "logos/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "json.hpp"
#include "logos/error.hpp"

namespace logos {

using nlohmann::json;

// --- lookups -----------------------------------------------------------------

const std::vector<OcrLine>& OcrSource::lines(const std::string& image_id) const {
  auto it = lines_by_image.find(image_id);
  if (it == lines_by_image.end()) {
    throw IntegrityError("image '" + image_id + "' has no record in OCR source '" + id + "'");
  }
  return it->second;
}

const OcrSource& Dataset::source(const std::string& id) const {
  for (const OcrSource& s : sources)
    if (s.id == id) return s;
  throw IntegrityError("unknown OCR source '" + id + "'");
}

std::vector<std::string> Dataset::source_ids() const {
  std::vector<std::string> out;
  for (const OcrSource& s : sources) out.push_back(s.id);
  return out;
}

const std::vector<ObjectRegion>& Dataset::objects_for(const std::string& image_id) const {
  auto it = objects.find(image_id);
  if (it == objects.end()) throw IntegrityError("image '" + image_id + "' has no object record");
  return it->second;
}

std::size_t Dataset::feature_width() const {
  for (const auto& image : object_image_order) {
    const auto& objs = objects.at(image);
    if (!objs.empty()) return objs.front().feature.size();
  }
  return 0;
}

// --- text --------------------------------------------------------------------

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> tokenize_question(std::string_view question) {
  std::string cleaned = to_lower(question);
  for (char& c : cleaned) {
    const auto u = static_cast<unsigned char>(c);
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'' || u >= 0x80;
    if (!keep) c = ' ';
  }
  return split_words(cleaned);
}

// --- vocabulary --------------------------------------------------------------

AnswerVocab::AnswerVocab() : words_{"<pad>", "<begin>", "<end>"} {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

AnswerVocab AnswerVocab::from_words(std::vector<std::string> content_words) {
  AnswerVocab v;
  for (auto& w : content_words) {
    if (v.index_.count(w)) throw ConfigError("duplicate vocabulary word '" + w + "'");
    v.index_.emplace(w, v.words_.size());
    v.words_.push_back(std::move(w));
  }
  return v;
}

AnswerVocab AnswerVocab::build(std::span<const std::string> train_answers, std::size_t max_words) {
  if (max_words < 1) throw ConfigError("vocabulary size must be at least 1");
  std::unordered_map<std::string, std::size_t> counts;
  for (const std::string& a : train_answers)
    for (auto& w : split_words(to_lower(a))) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > max_words) ranked.resize(max_words);
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) words.push_back(w);
  return from_words(std::move(words));
}

std::optional<std::size_t> AnswerVocab::index(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> AnswerVocab::content_words() const {
  return {words_.begin() + kNumSpecial, words_.end()};
}

std::vector<std::string> all_answers(std::span<const QAItem> items) {
  std::vector<std::string> out;
  for (const QAItem& item : items) out.insert(out.end(), item.answers.begin(), item.answers.end());
  return out;
}

// --- reading -----------------------------------------------------------------

namespace {

struct LineReader {
  std::filesystem::path path;
  std::ifstream in;
  std::size_t line_no = 0;

  explicit LineReader(const std::filesystem::path& p) : path(p), in(p) {
    if (!in) throw IoError("cannot open '" + p.string() + "'");
  }

  // Next non-blank record, or nullopt at end of file.
  std::optional<json> next() {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        json j = json::parse(line);
        if (!j.is_object()) fail("record is not a JSON object");
        return j;
      } catch (const json::parse_error& e) {
        fail(std::string("malformed JSON: ") + e.what());
      }
    }
    return std::nullopt;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(path.string(), line_no, what); }

  const json& field(const json& j, const char* key) const {
    auto it = j.find(key);
    if (it == j.end()) fail(std::string("missing field '") + key + "'");
    return *it;
  }

  std::string str(const json& j, const char* key) const {
    const json& v = field(j, key);
    if (!v.is_string()) fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }

  int integer(const json& j, const char* key) const {
    const json& v = field(j, key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(std::string("field '") + key + "' must be a nonnegative integer");
    return v.get<int>();
  }

  NormBox box(const json& j) const {
    const json& v = field(j, "box");
    if (!v.is_array() || v.size() != 4) fail("box must be an array of 4 numbers");
    double c[4];
    for (int i = 0; i < 4; ++i) {
      if (!v[i].is_number()) fail("box must be an array of 4 numbers");
      c[i] = v[i].get<double>();
    }
    NormBox b{c[0], c[1], c[2], c[3]};
    if (!b.valid()) fail("box outside the unit square or inverted");
    return b;
  }
};

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<QAItem> load_qa(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<QAItem> items;
  std::set<std::string> seen;
  while (auto j = r.next()) {
    QAItem item;
    item.question_id = r.str(*j, "question_id");
    item.image_id = r.str(*j, "image_id");
    item.question = to_lower(r.str(*j, "question"));
    item.question_tokens = tokenize_question(item.question);
    if (item.question_tokens.empty()) r.fail("question is empty");
    const json& answers = r.field(*j, "answers");
    if (!answers.is_array() || answers.size() != kAnswersPerQuestion) {
      r.fail("answers must be an array of exactly 10 strings");
    }
    for (const json& a : answers) {
      if (!a.is_string()) r.fail("answers must be an array of exactly 10 strings");
      item.answers.push_back(to_lower(a.get<std::string>()));
    }
    if (!seen.insert(item.question_id).second) r.fail("duplicate question_id '" + item.question_id + "'");
    items.push_back(std::move(item));
  }
  return items;
}

OcrSource load_ocr(const std::filesystem::path& path, const std::string& source_id) {
  LineReader r(path);
  OcrSource src;
  src.id = source_id;
  while (auto j = r.next()) {
    const std::string image = r.str(*j, "image_id");
    const std::string declared = r.str(*j, "source");
    if (declared != source_id) r.fail("record declares source '" + declared + "', expected '" + source_id + "'");
    if (src.lines_by_image.count(image)) r.fail("duplicate image_id '" + image + "'");
    const json& lines = r.field(*j, "lines");
    if (!lines.is_array()) r.fail("lines must be an array");
    std::vector<OcrLine> parsed;
    std::set<int> ids;
    for (const json& lj : lines) {
      OcrLine line;
      line.line_id = r.integer(lj, "line_id");
      if (!ids.insert(line.line_id).second) r.fail("duplicate line_id " + std::to_string(line.line_id));
      line.box = r.box(lj);
      line.source_id = source_id;
      const json& tokens = r.field(lj, "tokens");
      if (!tokens.is_array()) r.fail("tokens must be an array");
      for (const json& tj : tokens) {
        OcrToken tok;
        tok.text = to_lower(r.str(tj, "text"));
        if (trimmed(tok.text).empty()) r.fail("token text is empty");
        tok.box = r.box(tj);
        tok.line_id = line.line_id;
        tok.token_pos_in_line = static_cast<int>(line.tokens.size());
        tok.source_id = source_id;
        if (!line.box.contains(tok.box, 1e-6)) r.fail("token box lies outside its line box");
        if (!line.tokens.empty() && tok.box.center_x() < line.tokens.back().box.center_x()) {
          r.fail("tokens are not ordered left to right");
        }
        line.tokens.push_back(std::move(tok));
      }
      parsed.push_back(std::move(line));
    }
    src.image_order.push_back(image);
    src.lines_by_image.emplace(image, std::move(parsed));
  }
  return src;
}

void load_objects(const std::filesystem::path& path, Dataset& into) {
  LineReader r(path);
  std::size_t width = 0;
  bool have_width = false;
  while (auto j = r.next()) {
    const std::string image = r.str(*j, "image_id");
    if (into.objects.count(image)) r.fail("duplicate image_id '" + image + "'");
    const json& objs = r.field(*j, "objects");
    if (!objs.is_array()) r.fail("objects must be an array");
    std::vector<ObjectRegion> parsed;
    for (const json& oj : objs) {
      ObjectRegion o;
      o.label = to_lower(r.str(oj, "label"));
      if (o.label.empty()) r.fail("object label is empty");
      o.box = r.box(oj);
      const json& f = r.field(oj, "feature");
      if (!f.is_array()) r.fail("feature must be an array of numbers");
      for (const json& v : f) {
        if (!v.is_number()) r.fail("feature must be an array of numbers");
        o.feature.push_back(v.get<double>());
      }
      if (!have_width) {
        width = o.feature.size();
        have_width = true;
      } else if (o.feature.size() != width) {
        r.fail("feature width " + std::to_string(o.feature.size()) + " differs from " + std::to_string(width));
      }
      parsed.push_back(std::move(o));
    }
    into.object_image_order.push_back(image);
    into.objects.emplace(image, std::move(parsed));
  }
}

Dataset load_dataset(const std::filesystem::path& qa_path,
                     const std::vector<std::pair<std::string, std::filesystem::path>>& ocr_paths,
                     const std::filesystem::path& objects_path, std::string split) {
  Dataset ds;
  ds.split = std::move(split);
  ds.items = load_qa(qa_path);
  for (const auto& [id, path] : ocr_paths) {
    for (const auto& s : ds.sources)
      if (s.id == id) throw ConfigError("OCR source '" + id + "' registered twice");
    ds.sources.push_back(load_ocr(path, id));
  }
  load_objects(objects_path, ds);
  for (const QAItem& item : ds.items) {
    if (!ds.objects.count(item.image_id)) {
      throw IntegrityError("question '" + item.question_id + "' references unknown image '" + item.image_id + "'");
    }
    for (const OcrSource& s : ds.sources) {
      if (!s.lines_by_image.count(item.image_id)) {
        throw IntegrityError("question '" + item.question_id + "' references image '" + item.image_id +
                             "' missing from OCR source '" + s.id + "'");
      }
    }
  }
  for (const OcrSource& s : ds.sources) {
    for (const auto& image : s.image_order) {
      if (!ds.objects.count(image)) {
        throw IntegrityError("OCR source '" + s.id + "' references unknown image '" + image + "'");
      }
    }
  }
  return ds;
}

// --- writing -----------------------------------------------------------------

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

std::string quoted(const std::string& s) { return json(s).dump(); }

std::string box_json(const NormBox& b) {
  return "[" + fixed6(b.x1) + "," + fixed6(b.y1) + "," + fixed6(b.x2) + "," + fixed6(b.y2) + "]";
}

}  // namespace

void write_qa(std::ostream& os, std::span<const QAItem> items) {
  for (const QAItem& item : items) {
    os << "{\"question_id\":" << quoted(item.question_id) << ",\"image_id\":" << quoted(item.image_id)
       << ",\"question\":" << quoted(item.question) << ",\"answers\":[";
    for (std::size_t i = 0; i < item.answers.size(); ++i) os << (i ? "," : "") << quoted(item.answers[i]);
    os << "]}\n";
  }
}

void write_ocr(std::ostream& os, const OcrSource& source) {
  for (const std::string& image : source.image_order) {
    os << "{\"image_id\":" << quoted(image) << ",\"source\":" << quoted(source.id) << ",\"lines\":[";
    const auto& lines = source.lines_by_image.at(image);
    for (std::size_t l = 0; l < lines.size(); ++l) {
      const OcrLine& line = lines[l];
      os << (l ? "," : "") << "{\"line_id\":" << line.line_id << ",\"box\":" << box_json(line.box) << ",\"tokens\":[";
      for (std::size_t t = 0; t < line.tokens.size(); ++t) {
        os << (t ? "," : "") << "{\"text\":" << quoted(line.tokens[t].text) << ",\"box\":" << box_json(line.tokens[t].box)
           << "}";
      }
      os << "]}";
    }
    os << "]}\n";
  }
}

void write_objects(std::ostream& os, const Dataset& dataset) {
  for (const std::string& image : dataset.object_image_order) {
    os << "{\"image_id\":" << quoted(image) << ",\"objects\":[";
    const auto& objs = dataset.objects.at(image);
    for (std::size_t i = 0; i < objs.size(); ++i) {
      os << (i ? "," : "") << "{\"label\":" << quoted(objs[i].label) << ",\"box\":" << box_json(objs[i].box)
         << ",\"feature\":[";
      for (std::size_t k = 0; k < objs[i].feature.size(); ++k) os << (k ? "," : "") << fixed6(objs[i].feature[k]);
      os << "]}";
    }
    os << "]}\n";
  }
}

std::pair<std::string, std::filesystem::path> parse_source_arg(std::string_view arg) {
  const auto eq = arg.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == arg.size()) {
    throw ConfigError("OCR source must be given as ID=PATH, got '" + std::string(arg) + "'");
  }
  return {std::string(arg.substr(0, eq)), std::filesystem::path(std::string(arg.substr(eq + 1)))};
}

bool answerable_from(const Dataset& dataset, const QAItem& item, const std::string& source_id) {
  std::set<std::string> present;
  for (const OcrLine& line : dataset.source(source_id).lines(item.image_id))
    for (const OcrToken& t : line.tokens) present.insert(t.text);
  for (const std::string& w : split_words(to_lower(item.answers.front()))) {
    if (!present.count(w)) return false;
  }
  return true;
}

}  // namespace logos
