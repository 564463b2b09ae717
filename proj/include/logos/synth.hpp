#pragma once

// Deterministic synthetic Text-VQA corpus.
//
// Every image is a 3x3 grid of labelled objects; some objects carry a block of
// text (one to four words over one to three lines). Each image gets one
// templated question about one text block. Each OCR source observes the same
// text through its own noise: token deletion and single-character
// substitution.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "logos/corpus.hpp"

namespace logos {

struct NoiseProfile {
  std::string source_id;
  double p_del = 0.0;
  double p_sub = 0.0;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t n_train = 200;
  std::size_t n_val = 50;
  std::size_t feature_width = 32;
  std::vector<NoiseProfile> sources{{"A", 0.15, 0.0}, {"B", 0.0, 0.15}};
};

// Ground truth kept beside the corpus for analysis; never read by the model.
struct SynthTruth {
  std::string question_id;
  std::string split;
  std::vector<std::string> answer_words;
  // Sources in which every token of the asked-about text block survived.
  std::vector<std::string> intact_sources;
};

struct SynthCorpus {
  Dataset train;  // sources and objects cover both splits
  Dataset val;
  std::vector<SynthTruth> truth;
};

inline const std::vector<std::string>& synth_labels() {
  static const std::vector<std::string> labels{"book",   "sign",   "jersey", "bottle", "poster",
                                               "banner", "shirt", "box",    "can",    "board"};
  return labels;
}

// Unit vector of the given width derived from (label, seed).
std::vector<double> label_feature(const std::string& label, std::uint64_t seed, std::size_t width);

SynthCorpus gen_synthetic(const SynthConfig& cfg);

// qa_train.jsonl, qa_val.jsonl, ocr_<id>.jsonl per source, objects.jsonl,
// truth.jsonl.
void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir);
std::vector<SynthTruth> load_truth(const std::filesystem::path& path);

}  // namespace logos
