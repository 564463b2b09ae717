// logoskit: command-line front end.
//
// Exit status: 0 success, 1 usage error, 2 data or contract error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "logos/checkpoint.hpp"
#include "logos/corpus.hpp"
#include "logos/error.hpp"
#include "logos/geometry.hpp"
#include "logos/metrics.hpp"
#include "logos/phoc.hpp"
#include "logos/selector.hpp"
#include "logos/svg.hpp"
#include "logos/synth.hpp"
#include "logos/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("LOGOSKIT_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw logos::ConfigError(std::string("LOGOSKIT_SEED is not an integer: '") + s + "'");
  return v;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw logos::IoError("cannot write '" + path.string() + "'");
  return os;
}

json read_json_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw logos::IoError("cannot read '" + path.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw logos::ParseError(path.string(), 0, e.what());
  }
}

std::vector<std::pair<std::string, fs::path>> parse_sources(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& a : args) out.push_back(logos::parse_source_arg(a));
  return out;
}

// A config file holds TrainConfig fields, plus an optional "model" object of
// ModelConfig fields. Precedence for the seed: --seed, then LOGOSKIT_SEED,
// then the file.
struct RunConfig {
  logos::TrainConfig train;
  logos::ModelConfig model;
};

RunConfig load_run_config(const std::string& path, logos::TrainConfig base, std::optional<std::uint64_t> flag_seed) {
  RunConfig rc{std::move(base), {}};
  if (!path.empty()) {
    json j = read_json_file(path);
    if (!j.is_object()) throw logos::ConfigError(path + ": config must be a JSON object");
    if (j.contains("model")) {
      rc.model = logos::model_config_from_json(j["model"]);
      j.erase("model");
    }
    rc.train = logos::train_config_from_json(j, rc.train);
  }
  if (const auto s = env_seed()) rc.train.seed = *s;
  if (flag_seed) rc.train.seed = *flag_seed;
  rc.train.validate();
  return rc;
}

ordered_json report_json(const logos::EvalReport& r, const std::string& metric) {
  const bool acc = metric != "anls", anls = metric != "acc";
  ordered_json j;
  j["n_items"] = r.n_items;
  if (acc) j["mean_accuracy"] = r.empty ? json(nullptr) : json(r.mean_accuracy);
  if (anls) j["mean_anls"] = r.empty ? json(nullptr) : json(r.mean_anls);
  j["rows"] = ordered_json::array();
  for (const auto& row : r.rows) {
    ordered_json o;
    o["question_id"] = row.question_id;
    o["prediction"] = row.prediction;
    if (acc) o["accuracy"] = row.accuracy;
    if (anls) o["anls"] = row.anls;
    j["rows"].push_back(std::move(o));
  }
  return j;
}

std::string report_table(const logos::EvalReport& r, const std::string& metric) {
  const bool acc = metric != "anls", anls = metric != "acc";
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-24s %-28s", "question_id", "prediction");
  os << buf << (acc ? "  accuracy" : "") << (anls ? "      anls" : "") << "\n";
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-24s %-28s", row.question_id.c_str(), row.prediction.c_str());
    os << buf;
    if (acc) {
      std::snprintf(buf, sizeof buf, "  %8.4f", row.accuracy);
      os << buf;
    }
    if (anls) {
      std::snprintf(buf, sizeof buf, "  %8.4f", row.anls);
      os << buf;
    }
    os << "\n";
  }
  std::snprintf(buf, sizeof buf, "%-24s %-28s", "mean", ("(" + std::to_string(r.n_items) + " items)").c_str());
  os << buf;
  if (acc) {
    std::snprintf(buf, sizeof buf, "  %8.4f", r.mean_accuracy);
    os << buf;
  }
  if (anls) {
    std::snprintf(buf, sizeof buf, "  %8.4f", r.mean_anls);
    os << buf;
  }
  os << "\n";
  return os.str();
}

std::vector<logos::Prediction> load_predictions(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw logos::IoError("cannot read '" + path.string() + "'");
  std::vector<logos::Prediction> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw logos::ParseError(path.string(), n, e.what());
    }
    if (!j.is_object() || !j.contains("question_id") || !j.contains("answer") || !j["question_id"].is_string() ||
        !j["answer"].is_string()) {
      throw logos::ParseError(path.string(), n, "expected string question_id and answer");
    }
    out.push_back({j["question_id"].get<std::string>(), j["answer"].get<std::string>()});
  }
  return out;
}

// Source id declared by the first record of an OCR file.
std::string declared_source(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw logos::IoError("cannot read '" + path.string() + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.is_object() && j.contains("source") && j["source"].is_string()) return j["source"].get<std::string>();
    } catch (const json::parse_error& e) {
      throw logos::ParseError(path.string(), n, e.what());
    }
    throw logos::ParseError(path.string(), n, "record has no string \"source\"");
  }
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"logoskit: scene-text VQA with layout clustering, copy decoding and OCR source selection"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic corpus");
  std::string gen_out;
  std::uint64_t gen_seed = 7;
  std::size_t gen_train = 200, gen_val = 50, gen_width = 32;
  gen->add_option("--out", gen_out, "Output directory")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--n-train", gen_train, "Training items");
  gen->add_option("--n-val", gen_val, "Validation items");
  gen->add_option("--feature-width", gen_width, "Region feature width");

  // cluster
  auto* clu = app.add_subcommand("cluster", "Cluster OCR lines per image");
  std::string clu_ocr, clu_svg, clu_out, clu_image;
  double clu_eps = 0.02;
  clu->add_option("--ocr", clu_ocr, "OCR JSONL file")->required();
  clu->add_option("--epsilon", clu_eps, "Reachability distance");
  clu->add_option("--svg", clu_svg, "Write an SVG of one image's clusters");
  clu->add_option("--image", clu_image, "Image drawn by --svg (default: first in file)");
  clu->add_option("--out", clu_out, "Write JSONL here instead of stdout");

  // phoc
  auto* ph = app.add_subcommand("phoc", "Print the set PHOC bits of a word");
  std::string ph_word;
  ph->add_option("word", ph_word, "Word")->required();

  // pretrain / train share the dataset options
  struct DataOpts {
    std::string qa, val_qa, objects;
    std::vector<std::string> ocr;
  };
  auto add_data = [](CLI::App* sub, DataOpts& d, bool val_required) {
    sub->add_option("--qa", d.qa, "Training QA JSONL")->required();
    auto* v = sub->add_option("--val-qa", d.val_qa, "Validation QA JSONL");
    if (val_required) v->required();
    sub->add_option("--ocr", d.ocr, "OCR source as ID=path; repeat per source")->required();
    sub->add_option("--objects", d.objects, "Objects JSONL")->required();
  };

  auto* pre = app.add_subcommand("pretrain", "Grounding pretraining");
  DataOpts pre_data;
  std::string pre_config, pre_ckpt, pre_log;
  std::optional<std::uint64_t> pre_seed;
  add_data(pre, pre_data, false);
  pre->add_option("--config", pre_config, "JSON config (TrainConfig fields, optional \"model\")");
  pre->add_option("--checkpoint", pre_ckpt, "Output checkpoint")->required();
  pre->add_option("--log", pre_log, "JSONL metrics log");
  pre->add_option("--seed", pre_seed, "Seed");

  auto* tr = app.add_subcommand("train", "Answer fine-tuning");
  DataOpts tr_data;
  std::string tr_config, tr_ckpt, tr_log, tr_init;
  std::optional<std::uint64_t> tr_seed;
  add_data(tr, tr_data, true);
  tr->add_option("--config", tr_config, "JSON config (TrainConfig fields, optional \"model\")");
  tr->add_option("--init", tr_init, "Start from this checkpoint");
  tr->add_option("--checkpoint", tr_ckpt, "Output checkpoint")->required();
  tr->add_option("--log", tr_log, "JSONL metrics log");
  tr->add_option("--seed", tr_seed, "Seed");

  auto* pr = app.add_subcommand("predict", "Decode every question from every source and select");
  std::string pr_ckpt, pr_qa, pr_objects, pr_out;
  std::vector<std::string> pr_ocr, pr_priority;
  pr->add_option("--checkpoint", pr_ckpt, "Model checkpoint")->required();
  pr->add_option("--qa", pr_qa, "QA JSONL")->required();
  pr->add_option("--ocr", pr_ocr, "OCR source as ID=path; repeat per source")->required();
  pr->add_option("--objects", pr_objects, "Objects JSONL")->required();
  pr->add_option("--out", pr_out, "Predictions JSONL")->required();
  pr->add_option("--priority", pr_priority, "Tie-break order of source ids (default: --ocr order)");

  auto* ev = app.add_subcommand("eval", "Score predictions");
  std::string ev_pred, ev_qa, ev_out, ev_metric = "both";
  ev->add_option("--pred", ev_pred, "Predictions JSONL")->required();
  ev->add_option("--qa", ev_qa, "QA JSONL")->required();
  ev->add_option("--metric", ev_metric, "acc, anls or both")->check(CLI::IsMember({"acc", "anls", "both"}));
  ev->add_option("--out", ev_out, "Also write the JSON report here");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check on a small model");
  std::size_t gc_probes = 50;
  std::uint64_t gc_seed = 5;
  bool gc_fault = false;
  gc->add_option("--probes", gc_probes, "Number of probed parameter entries");
  auto* gc_seed_opt = gc->add_option("--seed", gc_seed, "Probe seed");
  gc->add_flag("--fault", gc_fault, "Corrupt the GELU derivative first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      logos::SynthConfig sc;
      sc.seed = gen_seed;
      if (gen_seed_opt->count() == 0)
        if (const auto s = env_seed()) sc.seed = *s;
      sc.n_train = gen_train;
      sc.n_val = gen_val;
      sc.feature_width = gen_width;
      logos::write_synthetic(logos::gen_synthetic(sc), gen_out);
      std::cout << "wrote " << gen_train << " train and " << gen_val << " val items to " << gen_out << "\n";
    } else if (*clu) {
      const logos::OcrSource src = logos::load_ocr(clu_ocr, declared_source(clu_ocr));
      std::ofstream file;
      if (!clu_out.empty()) file = open_out(clu_out);
      std::ostream& os = clu_out.empty() ? std::cout : file;
      bool drawn = false;
      for (const std::string& image : src.image_order) {
        const auto& lines = src.lines(image);
        std::vector<logos::NormBox> boxes;
        for (const auto& l : lines) boxes.push_back(l.box);
        const logos::ClusterAssignment a = logos::cluster_lines(boxes, clu_eps);
        for (std::size_t i = 0; i < lines.size(); ++i) {
          ordered_json j;
          j["image_id"] = image;
          j["line_id"] = lines[i].line_id;
          j["cluster"] = a.cluster_of_line[i];
          os << j.dump() << "\n";
        }
        if (!clu_svg.empty() && !drawn && (clu_image.empty() || clu_image == image)) {
          logos::emit_cluster_svg(boxes, a, clu_svg);
          drawn = true;
        }
      }
      if (!clu_svg.empty() && !drawn) {
        if (!clu_image.empty()) throw logos::DataError("image '" + clu_image + "' not found in " + clu_ocr);
        logos::emit_cluster_svg({}, {}, clu_svg);
      }
    } else if (*ph) {
      const auto bits = logos::phoc_set_bits(logos::phoc_encode(ph_word));
      std::cout << "bits:";
      for (int b : bits) std::cout << " " << b;
      std::cout << "\ncount: " << bits.size() << "\n";
    } else if (*pre) {
      const RunConfig rc = load_run_config(pre_config, logos::TrainConfig::grounding_default(), pre_seed);
      const auto sources = parse_sources(pre_data.ocr);
      const logos::Dataset train = logos::load_dataset(pre_data.qa, sources, pre_data.objects, "train");
      logos::LogosModel model = logos::make_model(train, rc.model, rc.train);
      const auto examples = logos::referral_examples(model, train, rc.train.grounding_candidates, rc.train.seed);
      std::ofstream log_file;
      logos::LogSink sink;
      if (!pre_log.empty()) {
        log_file = open_out(pre_log);
        sink = logos::jsonl_sink(log_file);
      }
      const logos::TrainReport rep = logos::pretrain_grounding(model, examples, rc.train, sink);
      logos::save_checkpoint(model, pre_ckpt);
      ordered_json out;
      out["checkpoint"] = pre_ckpt;
      out["iters"] = rc.train.total_iters;
      out["final_loss"] = rep.losses.back();
      out["train_grounding_accuracy"] = logos::grounding_accuracy(model, examples);
      if (!pre_data.val_qa.empty()) {
        const logos::Dataset val = logos::load_dataset(pre_data.val_qa, sources, pre_data.objects, "val");
        const auto vex = logos::referral_examples(model, val, rc.train.grounding_candidates, rc.train.seed + 1);
        out["val_grounding_accuracy"] = logos::grounding_accuracy(model, vex);
      }
      std::cout << out.dump() << "\n";
    } else if (*tr) {
      const RunConfig rc = load_run_config(tr_config, logos::TrainConfig{}, tr_seed);
      const auto sources = parse_sources(tr_data.ocr);
      const logos::Dataset train = logos::load_dataset(tr_data.qa, sources, tr_data.objects, "train");
      const logos::Dataset val = logos::load_dataset(tr_data.val_qa, sources, tr_data.objects, "val");
      logos::LogosModel model =
          tr_init.empty() ? logos::make_model(train, rc.model, rc.train) : logos::load_checkpoint(tr_init);
      std::ofstream log_file;
      logos::LogSink sink;
      if (!tr_log.empty()) {
        log_file = open_out(tr_log);
        sink = logos::jsonl_sink(log_file);
      }
      const logos::TrainReport rep = logos::train(model, train, val, rc.train, sink);
      logos::save_checkpoint(model, tr_ckpt);
      ordered_json out;
      out["checkpoint"] = tr_ckpt;
      out["iters"] = rc.train.total_iters;
      out["best_iter"] = rep.best_iter;
      out["best_val_accuracy"] = rep.best_val_accuracy;
      std::cout << out.dump() << "\n";
    } else if (*pr) {
      const logos::LogosModel model = logos::load_checkpoint(pr_ckpt);
      const logos::Dataset data = logos::load_dataset(pr_qa, parse_sources(pr_ocr), pr_objects);
      const auto results = logos::predict_dataset(model, data, pr_priority);
      std::ofstream os = open_out(pr_out);
      for (const auto& r : results) {
        ordered_json j;
        j["question_id"] = r.question_id;
        j["answer"] = r.answer;
        j["selected_source"] = r.selected_source;
        j["candidates"] = ordered_json::array();
        for (const auto& c : r.candidates) {
          ordered_json cj;
          cj["source"] = c.source_id;
          cj["answer"] = c.answer.text();
          cj["log_score"] = c.log_score;
          j["candidates"].push_back(std::move(cj));
        }
        os << j.dump() << "\n";
      }
      if (!os) throw logos::IoError("write to '" + pr_out + "' failed");
    } else if (*ev) {
      const auto preds = load_predictions(ev_pred);
      const auto items = logos::load_qa(ev_qa);
      const logos::EvalReport rep = logos::evaluate(preds, items);
      const ordered_json j = report_json(rep, ev_metric);
      if (!ev_out.empty()) {
        std::ofstream os = open_out(ev_out);
        os << j.dump(2) << "\n";
      }
      std::cout << j.dump() << "\n\n" << report_table(rep, ev_metric);
    } else if (*gc) {
      std::uint64_t seed = gc_seed;
      if (gc_seed_opt->count() == 0)
        if (const auto s = env_seed()) seed = *s;
      logos::diagnostics::set_gelu_grad_fault(gc_fault);
      const logos::GradCheckResult r = logos::grad_check(logos::grad_check_config(), gc_probes, seed);
      logos::diagnostics::set_gelu_grad_fault(false);
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
      ordered_json j;
      j["max_rel_error"] = r.max_rel_error;
      j["n_probes"] = r.n_probes;
      j["n_params"] = r.n_params;
      j["fault"] = gc_fault;
      std::cout << j.dump() << "\n";
    }
  } catch (const logos::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
