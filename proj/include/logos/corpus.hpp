#pragma once

// Data model and on-disk formats.
//
// Three JSONL files describe a split: QA items, one OCR file per source, and
// object regions. OCR and object files are keyed by image_id and may be
// shared between splits. All text is lowercased on ingestion, floats are
// written with six decimals, and records are written in the order they were
// read so a load/save cycle reproduces the input bytes.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "logos/geometry.hpp"

namespace logos {

inline constexpr std::size_t kAnswersPerQuestion = 10;

struct QAItem {
  std::string question_id;
  std::string image_id;
  std::string question;
  std::vector<std::string> question_tokens;
  std::vector<std::string> answers;
};

struct OcrToken {
  std::string text;
  NormBox box;
  int line_id = 0;
  int token_pos_in_line = 0;
  std::string source_id;
};

struct OcrLine {
  int line_id = 0;
  NormBox box;
  std::vector<OcrToken> tokens;
  std::string source_id;
};

struct ObjectRegion {
  std::string label;
  NormBox box;
  std::vector<double> feature;
};

// Per-source detections, in file order.
struct OcrSource {
  std::string id;
  std::vector<std::string> image_order;
  std::unordered_map<std::string, std::vector<OcrLine>> lines_by_image;

  const std::vector<OcrLine>& lines(const std::string& image_id) const;
};

struct Dataset {
  std::string split;
  std::vector<QAItem> items;
  std::vector<OcrSource> sources;  // registration order doubles as priority order
  std::vector<std::string> object_image_order;
  std::unordered_map<std::string, std::vector<ObjectRegion>> objects;

  const OcrSource& source(const std::string& id) const;
  std::vector<std::string> source_ids() const;
  const std::vector<ObjectRegion>& objects_for(const std::string& image_id) const;
  std::size_t feature_width() const;
};

// Lowercase, then split on anything that is not a letter, digit or apostrophe.
std::vector<std::string> tokenize_question(std::string_view question);
std::vector<std::string> split_words(std::string_view s);
std::string to_lower(std::string_view s);

// Answer vocabulary: <pad>=0, <begin>=1, <end>=2, then content words by
// descending frequency with lexicographic tie-break.
class AnswerVocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBegin = 1;
  static constexpr std::size_t kEnd = 2;
  static constexpr std::size_t kNumSpecial = 3;

  AnswerVocab();
  static AnswerVocab build(std::span<const std::string> train_answers, std::size_t max_words);
  static AnswerVocab from_words(std::vector<std::string> content_words);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t i) const { return words_.at(i); }
  std::optional<std::size_t> index(std::string_view word) const;
  std::vector<std::string> content_words() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Every answer string of every item, for vocabulary building.
std::vector<std::string> all_answers(std::span<const QAItem> items);

// --- file formats ------------------------------------------------------------

std::vector<QAItem> load_qa(const std::filesystem::path& path);
OcrSource load_ocr(const std::filesystem::path& path, const std::string& source_id);
void load_objects(const std::filesystem::path& path, Dataset& into);

// Loads and joins; every QA image must resolve in the objects file and in
// every OCR source, otherwise IntegrityError.
Dataset load_dataset(const std::filesystem::path& qa_path,
                     const std::vector<std::pair<std::string, std::filesystem::path>>& ocr_paths,
                     const std::filesystem::path& objects_path, std::string split = "");

void write_qa(std::ostream& os, std::span<const QAItem> items);
void write_ocr(std::ostream& os, const OcrSource& source);
void write_objects(std::ostream& os, const Dataset& dataset);

// Parses "A=path" pairs from the command line.
std::pair<std::string, std::filesystem::path> parse_source_arg(std::string_view arg);

// True when every gold answer word occurs among the source's tokens for the
// item's image.
bool answerable_from(const Dataset& dataset, const QAItem& item, const std::string& source_id);

}  // namespace logos
