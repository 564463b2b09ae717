#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "logos/error.hpp"
#include "logos/geometry.hpp"
#include "logos/svg.hpp"

namespace fs = std::filesystem;
using namespace logos;

namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("logoskit_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Runs logoskit with `args` (already shell-quoted where needed).
Run logoskit(const std::string& args, const std::string& env = "") {
  static const fs::path io = scratch("io");
  const fs::path out = io / "stdout", err = io / "stderr";
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(LOGOSKIT_BIN) + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string data_args(const fs::path& d, bool val) {
  std::string s = "--qa " + (d / "qa_train.jsonl").string() + " --ocr A=" + (d / "ocr_A.jsonl").string() +
                  " --ocr B=" + (d / "ocr_B.jsonl").string() + " --objects " + (d / "objects.jsonl").string();
  if (val) s += " --val-qa " + (d / "qa_val.jsonl").string();
  return s;
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("svg: no lines gives a valid empty document") {
  const std::string svg = cluster_svg({}, ClusterAssignment{});
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(count_of(svg, "data-cluster") == 0);
}

TEST_CASE("svg: lines of one cluster share a stroke colour") {
  const NormBox boxes[] = {{0.1, 0.1, 0.3, 0.15}, {0.1, 0.16, 0.3, 0.2}};
  const ClusterAssignment a = cluster_lines(boxes, 0.02);
  REQUIRE(a.n_clusters == 1);
  const std::string svg = cluster_svg(boxes, a);
  const std::string stroke = std::string("stroke=\"") + cluster_color(0) + "\"";
  CHECK(count_of(svg, stroke) == 2);
}

TEST_CASE("svg: three-cluster fixture matches the golden file") {
  const NormBox boxes[] = {
      {0.10, 0.10, 0.30, 0.15}, {0.10, 0.16, 0.30, 0.21}, {0.60, 0.10, 0.90, 0.14}, {0.20, 0.70, 0.50, 0.75}};
  const ClusterAssignment a = cluster_lines(boxes, 0.02);
  REQUIRE(a.n_clusters == 3);
  const std::string svg = cluster_svg(boxes, a);
  std::set<std::string> colours;
  for (int c = 0; c < 3; ++c) colours.insert(cluster_color(c));
  CHECK(colours.size() == 3);
  for (const auto& col : colours) CHECK(svg.find(col) != std::string::npos);
  CHECK(svg == slurp(fs::path(LOGOS_TEST_DATA) / "cluster3.svg"));

  const fs::path dir = scratch("svg");
  emit_cluster_svg(boxes, a, dir / "a.svg");
  emit_cluster_svg(boxes, a, dir / "b.svg");
  CHECK(slurp(dir / "a.svg") == svg);
  CHECK(slurp(dir / "b.svg") == svg);
}

TEST_CASE("svg: contract and I/O errors") {
  const NormBox boxes[] = {{0.1, 0.1, 0.2, 0.2}};
  CHECK_THROWS_AS(cluster_svg(boxes, ClusterAssignment{}), ContractError);
  ClusterAssignment neg{{-1}, 1};
  CHECK_THROWS_AS(cluster_svg(boxes, neg), ContractError);
  const ClusterAssignment ok{{0}, 1};
  CHECK_THROWS_AS(emit_cluster_svg(boxes, ok, "/proc/no/such/dir/x.svg"), IoError);
  CHECK(std::string(cluster_color(0)) == cluster_color(12));
}

TEST_CASE("cli: help, usage errors and data errors map to exit codes") {
  const Run help = logoskit("--help");
  CHECK(help.status == 0);
  CHECK(help.out.find("gen-synth") != std::string::npos);
  CHECK(logoskit("").status == 1);
  CHECK(logoskit("frobnicate").status == 1);
  CHECK(logoskit("phoc").status == 1);
  CHECK(logoskit("phoc abc --no-such-flag").status == 1);
  CHECK(logoskit("eval --pred x --qa y --metric f1").status == 1);

  const Run missing = logoskit("eval --pred /no/such/file --qa /no/such/file");
  CHECK(missing.status == 2);
  CHECK(missing.out.empty());
  CHECK_FALSE(missing.err.empty());

  const fs::path dir = scratch("bad");
  write_file(dir / "pred.jsonl", "{\"question_id\": 3}\n");
  write_file(dir / "qa.jsonl", "");
  CHECK(logoskit("eval --pred " + (dir / "pred.jsonl").string() + " --qa " + (dir / "qa.jsonl").string()).status == 2);
  CHECK(logoskit("gradcheck", "LOGOSKIT_SEED=abc").status == 2);
}

TEST_CASE("cli: phoc prints set bits and their count") {
  const Run r = logoskit("phoc a");
  REQUIRE(r.status == 0);
  // Each level-2 half holds exactly half of the one-character word; no finer
  // region reaches half, so only the two level-2 bits of 'a' are set.
  CHECK(r.out == "bits: 0 36\ncount: 2\n");
  const Run empty = logoskit("phoc ''");
  REQUIRE(empty.status == 0);
  CHECK(empty.out == "bits:\ncount: 0\n");
  CHECK(logoskit("phoc HeLLo").out == logoskit("phoc hello").out);
}

TEST_CASE("cli: eval on a hand-scored fixture") {
  const fs::path dir = scratch("eval");
  std::string qa;
  qa += R"({"question_id":"q1","image_id":"i1","question":"what?","answers":["stop","stop","stop","go","go","go","go","go","go","go"]})"
        "\n";
  qa += R"({"question_id":"q2","image_id":"i1","question":"which?","answers":["hello","hello","hello","hello","hello","hello","hello","hello","hello","hello"]})"
        "\n";
  write_file(dir / "qa.jsonl", qa);
  write_file(dir / "pred.jsonl", "{\"question_id\":\"q1\",\"answer\":\"STOP\"}\n{\"question_id\":\"q2\",\"answer\":\"help\"}\n");
  const Run r = logoskit("eval --pred " + (dir / "pred.jsonl").string() + " --qa " + (dir / "qa.jsonl").string() +
                         " --out " + (dir / "report.json").string());
  REQUIRE(r.status == 0);
  const auto report = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  // 3 of 10 annotators: 7 subsets keep all three (1.0), 3 keep two (2/3).
  CHECK(report["rows"][0]["accuracy"].get<double>() == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(report["rows"][1]["accuracy"].get<double>() == 0.0);
  // levenshtein(hello, help) = 2, so 1 - 2/5 = 0.6 clears the 0.5 threshold.
  CHECK(report["rows"][1]["anls"].get<double>() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(report["mean_accuracy"].get<double>() == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(r.out.find("mean") != std::string::npos);
  CHECK(nlohmann::json::parse(slurp(dir / "report.json")) == report);

  const Run acc = logoskit("eval --metric acc --pred " + (dir / "pred.jsonl").string() + " --qa " + (dir / "qa.jsonl").string());
  const auto acc_report = nlohmann::json::parse(acc.out.substr(0, acc.out.find('\n')));
  CHECK(acc_report.contains("mean_accuracy"));
  CHECK_FALSE(acc_report.contains("mean_anls"));
}

TEST_CASE("cli: gen-synth is byte-stable and LOGOSKIT_SEED overrides the default seed") {
  const fs::path dir = scratch("gen");
  REQUIRE(logoskit("gen-synth --out " + (dir / "a").string() + " --n-train 5 --n-val 2").status == 0);
  REQUIRE(logoskit("gen-synth --out " + (dir / "b").string() + " --n-train 5 --n-val 2").status == 0);
  REQUIRE(logoskit("gen-synth --out " + (dir / "c").string() + " --n-train 5 --n-val 2", "LOGOSKIT_SEED=8").status == 0);
  REQUIRE(logoskit("gen-synth --out " + (dir / "d").string() + " --n-train 5 --n-val 2 --seed 8").status == 0);
  for (const char* f : {"qa_train.jsonl", "qa_val.jsonl", "ocr_A.jsonl", "ocr_B.jsonl", "objects.jsonl", "truth.jsonl"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    CHECK(slurp(dir / "c" / f) == slurp(dir / "d" / f));
  }
  CHECK(slurp(dir / "a" / "ocr_A.jsonl") != slurp(dir / "c" / "ocr_A.jsonl"));
}

TEST_CASE("cli: cluster writes one record per line and an SVG") {
  const fs::path dir = scratch("cluster");
  REQUIRE(logoskit("gen-synth --out " + dir.string() + " --n-train 3 --n-val 0").status == 0);
  const Run r = logoskit("cluster --ocr " + (dir / "ocr_A.jsonl").string() + " --epsilon 0.02 --svg " +
                         (dir / "c.svg").string());
  REQUIRE(r.status == 0);
  std::size_t n_lines = 0;
  std::istringstream ocr(slurp(dir / "ocr_A.jsonl"));
  std::string line;
  std::string first_image;
  std::size_t first_image_lines = 0;
  while (std::getline(ocr, line)) {
    const auto j = nlohmann::json::parse(line);
    n_lines += j["lines"].size();
    if (first_image.empty()) {
      first_image = j["image_id"];
      first_image_lines = j["lines"].size();
    }
  }
  std::istringstream out(r.out);
  std::size_t n_records = 0;
  while (std::getline(out, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["cluster"].get<int>() >= 0);
    ++n_records;
  }
  CHECK(n_records == n_lines);
  CHECK(count_of(slurp(dir / "c.svg"), "data-cluster") == first_image_lines);
  CHECK(logoskit("cluster --ocr " + (dir / "ocr_A.jsonl").string() + " --svg " + (dir / "x.svg").string() +
                 " --image nowhere")
            .status == 2);
}

TEST_CASE("cli: smoke pipeline runs end to end and repeats byte for byte") {
  const std::string model = R"("model": {"d_model": 16, "n_heads": 2, "ffn_width": 32, "spatial_d": 4, "text_layers": 1, "mm_layers": 1})";
  auto pipeline = [&](const fs::path& dir) {
    REQUIRE(logoskit("gen-synth --out " + (dir / "data").string() + " --n-train 12 --n-val 4").status == 0);
    write_file(dir / "pre.json", "{\"batch_size\": 4, \"total_iters\": 10, \"warmup_iters\": 2, " + model + "}");
    write_file(dir / "ft.json",
               "{\"batch_size\": 4, \"total_iters\": 16, \"warmup_iters\": 2, \"decay_points\": [12], \"eval_every\": 8, " +
                   model + "}");
    const fs::path d = dir / "data";
    const Run pre = logoskit("pretrain " + data_args(d, true) + " --config " + (dir / "pre.json").string() +
                             " --checkpoint " + (dir / "pre.bin").string() + " --log " + (dir / "pre.jsonl").string());
    REQUIRE(pre.status == 0);
    const Run tr = logoskit("train " + data_args(d, true) + " --config " + (dir / "ft.json").string() + " --init " +
                            (dir / "pre.bin").string() + " --checkpoint " + (dir / "ft.bin").string() + " --log " +
                            (dir / "ft.jsonl").string());
    REQUIRE(tr.status == 0);
    const std::string val = "--qa " + (d / "qa_val.jsonl").string() + " --ocr A=" + (d / "ocr_A.jsonl").string() +
                            " --ocr B=" + (d / "ocr_B.jsonl").string() + " --objects " + (d / "objects.jsonl").string();
    REQUIRE(logoskit("predict --checkpoint " + (dir / "ft.bin").string() + " " + val + " --out " +
                     (dir / "pred.jsonl").string())
                .status == 0);
    REQUIRE(logoskit("eval --pred " + (dir / "pred.jsonl").string() + " --qa " + (d / "qa_val.jsonl").string() +
                     " --out " + (dir / "report.json").string())
                .status == 0);
  };
  const fs::path a = scratch("smoke_a"), b = scratch("smoke_b");
  pipeline(a);
  pipeline(b);
  for (const char* f : {"pre.bin", "pre.bin.json", "ft.bin", "ft.bin.json", "pre.jsonl", "ft.jsonl", "pred.jsonl",
                        "report.json"}) {
    INFO(f);
    CHECK(fs::file_size(a / f) > 0);
    CHECK(slurp(a / f) == slurp(b / f));
  }

  // The fine-tune log has one record per iteration plus validation fields.
  std::istringstream log(slurp(a / "ft.jsonl"));
  std::string line;
  std::size_t n = 0, with_val = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("iter"));
    CHECK(j.contains("lr"));
    CHECK(j.contains("loss"));
    with_val += !j["val_accuracy"].is_null();
    ++n;
  }
  CHECK(n == 16);
  CHECK(with_val == 2);

  std::istringstream preds(slurp(a / "pred.jsonl"));
  while (std::getline(preds, line)) {
    const auto j = nlohmann::json::parse(line);
    REQUIRE(j["candidates"].size() == 2);
    CHECK(j["candidates"][0]["source"] == "A");
    CHECK(j["candidates"][1]["source"] == "B");
    const bool a_wins = j["candidates"][0]["log_score"].get<double>() >= j["candidates"][1]["log_score"].get<double>();
    CHECK(j["selected_source"] == (a_wins ? "A" : "B"));
  }

  // A config key that is not a TrainConfig field is rejected.
  write_file(a / "typo.json", "{\"batch_sise\": 4}");
  CHECK(logoskit("train " + data_args(a / "data", true) + " --config " + (a / "typo.json").string() +
                 " --checkpoint " + (a / "x.bin").string())
            .status == 2);
}
