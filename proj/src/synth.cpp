#include "logos/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "logos/error.hpp"

namespace logos {
namespace {

const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> pool{
      "stop",   "open",    "exit",    "sale",   "cafe",    "hotel",   "bank",    "park",   "taxi",   "bus",
      "pizza",  "coffee",  "bread",   "milk",   "juice",   "water",   "lemon",   "apple",  "mango",  "honey",
      "river",  "ocean",   "forest",  "desert", "island",  "valley",  "garden",  "street", "avenue", "bridge",
      "tower",  "castle",  "palace",  "temple", "market",  "school",  "library", "museum", "studio", "office",
      "north",  "south",   "east",    "west",   "central", "union",   "royal",   "grand",  "golden", "silver",
      "red",    "blue",    "green",   "yellow", "orange",  "purple",  "black",   "white",  "brown",  "pink",
      "tiger",  "eagle",   "falcon",  "wolf",   "bear",    "lion",    "shark",   "panda",  "fox",    "owl",
      "rocket", "comet",   "planet",  "star",   "moon",    "sun",     "cloud",   "storm",  "thunder", "rain",
      "king",   "queen",   "prince",  "knight", "pilot",   "doctor",  "chef",    "artist", "farmer", "sailor",
      "music",  "jazz",    "rock",    "dance",  "cinema",  "theater", "radio",   "video",  "photo",  "games",
      "fresh",  "daily",   "super",   "mega",   "extra",   "prime",   "smart",   "quick",  "happy",  "lucky",
      "one",    "two",     "three",   "four",   "five",    "seven",   "ten",     "zero",   "first",  "last",
      "city",   "county",  "village", "harbor", "airport", "station", "metro",   "tunnel", "canyon", "summit",
      "press",  "news",    "times",   "post",   "journal", "review",  "weekly",  "herald", "gazette", "echo",
      "vintage", "modern", "classic", "urban",  "wild",    "tiny",    "giant",   "brave",  "calm",   "bold"};
  return pool;
}

const char* kOrdinals[] = {"first", "second", "third", "fourth"};

constexpr double kCharWidth = 0.006;
constexpr double kTokenHeight = 0.018;
constexpr double kTokenSpace = 0.008;

double round6(double v) { return std::round(v * 1e6) / 1e6; }

NormBox round_box(NormBox b) { return {round6(b.x1), round6(b.y1), round6(b.x2), round6(b.y2)}; }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Block {
  std::size_t object = 0;
  std::vector<std::vector<std::string>> words;  // per line
  std::vector<std::vector<NormBox>> boxes;
};

struct Image {
  std::string id;
  std::vector<ObjectRegion> objects;
  std::vector<Block> blocks;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

Image layout_image(std::mt19937_64& rng, const std::string& id, const SynthConfig& cfg) {
  Image img;
  img.id = id;
  std::vector<int> cells(9);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<std::string> labels = synth_labels();
  std::shuffle(labels.begin(), labels.end(), rng);

  const std::size_t n_obj = 4 + pick(rng, 3);
  for (std::size_t o = 0; o < n_obj; ++o) {
    const double cx = (cells[o] % 3) / 3.0, cy = (cells[o] / 3) / 3.0;
    NormBox box{cx + uniform(rng, 0.015, 0.04), cy + uniform(rng, 0.015, 0.04),
                cx + 1.0 / 3 - uniform(rng, 0.015, 0.04), cy + 1.0 / 3 - uniform(rng, 0.015, 0.04)};
    img.objects.push_back({labels[o], round_box(box), label_feature(labels[o], cfg.seed, cfg.feature_width)});
  }

  std::vector<std::string> pool = word_pool();
  std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t next_word = 0;

  const std::size_t n_text = 2 + pick(rng, std::min<std::size_t>(5, n_obj) - 1);
  for (std::size_t b = 0; b < n_text; ++b) {
    Block block;
    block.object = b;
    const NormBox& obj = img.objects[b].box;
    const std::size_t n_words = 1 + pick(rng, 4);
    const std::size_t n_lines = 1 + pick(rng, std::min<std::size_t>(3, n_words));
    double y = obj.y1 + uniform(rng, 0.01, 0.04);
    const double x0 = obj.x1 + uniform(rng, 0.01, 0.03);
    for (std::size_t l = 0; l < n_lines; ++l) {
      const std::size_t in_line = n_words / n_lines + (l < n_words % n_lines ? 1 : 0);
      std::vector<std::string> words;
      std::vector<NormBox> boxes;
      double x = x0;
      for (std::size_t k = 0; k < in_line; ++k) {
        const std::string& w = pool[next_word++];
        const double width = kCharWidth * static_cast<double>(w.size());
        words.push_back(w);
        boxes.push_back(round_box({x, y, x + width, y + kTokenHeight}));
        x += width + kTokenSpace;
      }
      block.words.push_back(std::move(words));
      block.boxes.push_back(std::move(boxes));
      y += kTokenHeight + uniform(rng, 0.004, 0.012);
    }
    img.blocks.push_back(std::move(block));
  }
  return img;
}

// One source's view of an image. `intact[b]` reports whether block b survived
// without any change.
std::vector<OcrLine> observe(const Image& img, const NoiseProfile& noise, std::mt19937_64& rng,
                             std::vector<bool>& intact) {
  std::vector<OcrLine> lines;
  intact.assign(img.blocks.size(), true);
  for (std::size_t b = 0; b < img.blocks.size(); ++b) {
    const Block& block = img.blocks[b];
    for (std::size_t l = 0; l < block.words.size(); ++l) {
      OcrLine line;
      line.source_id = noise.source_id;
      for (std::size_t k = 0; k < block.words[l].size(); ++k) {
        const bool drop = uniform(rng, 0.0, 1.0) < noise.p_del;
        const bool sub = uniform(rng, 0.0, 1.0) < noise.p_sub;
        if (drop) {
          intact[b] = false;
          continue;
        }
        std::string text = block.words[l][k];
        if (sub) {
          const std::size_t pos = pick(rng, text.size());
          const int old = text[pos] - 'a';
          text[pos] = static_cast<char>('a' + (old + 1 + static_cast<int>(pick(rng, 25))) % 26);
          intact[b] = false;
        }
        OcrToken tok;
        tok.text = std::move(text);
        tok.box = block.boxes[l][k];
        tok.source_id = noise.source_id;
        line.tokens.push_back(std::move(tok));
      }
      if (line.tokens.empty()) continue;
      std::vector<NormBox> boxes;
      for (const auto& t : line.tokens) boxes.push_back(t.box);
      line.box = union_box(boxes);
      lines.push_back(std::move(line));
    }
  }
  std::stable_sort(lines.begin(), lines.end(), [](const OcrLine& a, const OcrLine& b) {
    return a.box.y1 != b.box.y1 ? a.box.y1 < b.box.y1 : a.box.x1 < b.box.x1;
  });
  for (std::size_t i = 0; i < lines.size(); ++i) {
    lines[i].line_id = static_cast<int>(i);
    for (std::size_t k = 0; k < lines[i].tokens.size(); ++k) {
      lines[i].tokens[k].line_id = static_cast<int>(i);
      lines[i].tokens[k].token_pos_in_line = static_cast<int>(k);
    }
  }
  return lines;
}

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

}  // namespace

std::vector<double> label_feature(const std::string& label, std::uint64_t seed, std::size_t width) {
  std::seed_seq seq{static_cast<std::uint32_t>(fnv1a(label)), static_cast<std::uint32_t>(fnv1a(label) >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> f(width);
  double norm2 = 0.0;
  for (double& v : f) {
    v = normal(rng);
    norm2 += v * v;
  }
  if (norm2 == 0.0) return f;
  for (double& v : f) v = round6(v / std::sqrt(norm2));
  return f;
}

SynthCorpus gen_synthetic(const SynthConfig& cfg) {
  if (cfg.sources.size() < 2) throw ConfigError("synthetic corpus needs at least 2 OCR sources");
  if (cfg.n_train + cfg.n_val < 1) throw ConfigError("synthetic corpus needs at least one image");
  if (cfg.feature_width < 1) throw ConfigError("feature width must be positive");
  std::set<std::string> ids;
  for (const auto& s : cfg.sources) {
    if (s.source_id.empty() || !ids.insert(s.source_id).second) {
      throw ConfigError("OCR source ids must be nonempty and distinct");
    }
    if (s.p_del < 0 || s.p_del > 1 || s.p_sub < 0 || s.p_sub > 1) throw ConfigError("noise probabilities must lie in [0, 1]");
  }

  std::seed_seq layout_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0u};
  std::mt19937_64 layout(layout_seq);
  std::vector<std::mt19937_64> noise;
  for (std::size_t s = 0; s < cfg.sources.size(); ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(s + 1)};
    noise.emplace_back(seq);
  }

  SynthCorpus out;
  Dataset shared;
  for (const auto& s : cfg.sources) shared.sources.push_back(OcrSource{s.source_id, {}, {}});
  std::vector<QAItem> items;

  const std::size_t n_images = cfg.n_train + cfg.n_val;
  for (std::size_t i = 0; i < n_images; ++i) {
    const Image img = layout_image(layout, padded("img", i), cfg);
    shared.object_image_order.push_back(img.id);
    shared.objects.emplace(img.id, img.objects);

    const std::size_t target = pick(layout, img.blocks.size());
    const Block& block = img.blocks[target];
    std::size_t n_words = 0;
    for (const auto& l : block.words) n_words += l.size();
    const std::string& label = img.objects[block.object].label;

    QAItem item;
    item.question_id = padded("q", i);
    item.image_id = img.id;
    std::vector<std::string> answer_words;
    const bool written = uniform(layout, 0.0, 1.0) < 0.7 && n_words <= 3;
    if (written) {
      item.question = "what is written on the " + label + "?";
      for (const auto& l : block.words) answer_words.insert(answer_words.end(), l.begin(), l.end());
    } else {
      const std::size_t j = pick(layout, block.words.front().size());
      item.question = std::string("what is the ") + kOrdinals[j] + " word on the " + label + "?";
      answer_words.push_back(block.words.front()[j]);
    }
    item.question_tokens = tokenize_question(item.question);
    std::string answer;
    for (const auto& w : answer_words) answer += (answer.empty() ? "" : " ") + w;
    item.answers.assign(kAnswersPerQuestion, answer);

    SynthTruth truth;
    truth.question_id = item.question_id;
    truth.split = i < cfg.n_train ? "train" : "val";
    truth.answer_words = answer_words;
    for (std::size_t s = 0; s < cfg.sources.size(); ++s) {
      std::vector<bool> intact;
      auto lines = observe(img, cfg.sources[s], noise[s], intact);
      shared.sources[s].image_order.push_back(img.id);
      shared.sources[s].lines_by_image.emplace(img.id, std::move(lines));
      if (intact[target]) truth.intact_sources.push_back(cfg.sources[s].source_id);
    }
    out.truth.push_back(std::move(truth));
    items.push_back(std::move(item));
  }

  out.train = shared;
  out.train.split = "train";
  out.train.items.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(cfg.n_train));
  out.val = std::move(shared);
  out.val.split = "val";
  out.val.items.assign(items.begin() + static_cast<std::ptrdiff_t>(cfg.n_train), items.end());
  return out;
}

void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const std::string& name) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw IoError("cannot write '" + (dir / name).string() + "'");
    return os;
  };
  {
    auto os = open("qa_train.jsonl");
    write_qa(os, corpus.train.items);
  }
  {
    auto os = open("qa_val.jsonl");
    write_qa(os, corpus.val.items);
  }
  for (const OcrSource& s : corpus.train.sources) {
    auto os = open("ocr_" + s.id + ".jsonl");
    write_ocr(os, s);
  }
  {
    auto os = open("objects.jsonl");
    write_objects(os, corpus.train);
  }
  auto os = open("truth.jsonl");
  for (const SynthTruth& t : corpus.truth) {
    nlohmann::ordered_json j;
    j["question_id"] = t.question_id;
    j["split"] = t.split;
    j["answer_words"] = t.answer_words;
    j["intact"] = t.intact_sources;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("failed writing synthetic corpus to '" + dir.string() + "'");
}

std::vector<SynthTruth> load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<SynthTruth> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SynthTruth t;
      t.question_id = j.at("question_id").get<std::string>();
      t.split = j.at("split").get<std::string>();
      t.answer_words = j.at("answer_words").get<std::vector<std::string>>();
      t.intact_sources = j.at("intact").get<std::vector<std::string>>();
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

}  // namespace logos
