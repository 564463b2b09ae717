#include "logos/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "logos/error.hpp"
#include "logos/geometry.hpp"

namespace logos {

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even");
  if (max_decode_steps < 1) throw ConfigError("max_decode_steps must be at least 1");
  if (max_text_len < 1) throw ConfigError("max_text_len must be at least 1");
  if (spatial_d < 2 || spatial_d % 2 != 0) throw ConfigError("spatial_d must be even and at least 2");
  if (ffn_width == 0) throw ConfigError("ffn_width must be positive");
  if (!(cluster_epsilon > 0.0)) throw ConfigError("cluster_epsilon must be positive");
}

// --- text vocabulary ---------------------------------------------------------

TextVocab::TextVocab() : words_{"<pad>", "<unk>"} {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

TextVocab TextVocab::from_words(std::vector<std::string> words) {
  TextVocab v;
  for (auto& w : words) {
    if (v.index_.count(w)) throw ConfigError("duplicate text vocabulary word '" + w + "'");
    v.index_.emplace(w, v.words_.size());
    v.words_.push_back(std::move(w));
  }
  return v;
}

TextVocab TextVocab::build(const Dataset& train, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> images;
  for (const QAItem& item : train.items) {
    for (const auto& w : item.question_tokens) ++counts[w];
    images.push_back(item.image_id);
  }
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());
  for (const auto& image : images) {
    for (const auto& o : train.objects_for(image)) ++counts[o.label];
    for (const OcrSource& s : train.sources)
      for (const OcrLine& line : s.lines(image))
        for (const OcrToken& tok : line.tokens) ++counts[tok.text];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, c] : counts)
    if (c >= min_count) ranked.emplace_back(w, c);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) words.push_back(w);
  return from_words(std::move(words));
}

std::size_t TextVocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::string> TextVocab::content_words() const { return {words_.begin() + 2, words_.end()}; }

// --- small helpers -----------------------------------------------------------

namespace {

Array column_range(const Array& a, std::size_t begin, std::size_t end) {
  Array out({a.rows(), end - begin});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto src = a.row_span(r);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin), src.begin() + static_cast<std::ptrdiff_t>(end),
              out.row_span(r).begin());
  }
  return out;
}

}  // namespace

std::string DecodedAnswer::text() const {
  std::string out;
  for (const auto& w : tokens) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::size_t StepTargets::masked_steps() const {
  return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](const auto& v) { return v.empty(); }));
}

StepDistribution step_distribution(std::span<const double> logits, std::size_t n_vocab) {
  if (n_vocab > logits.size()) throw ShapeError("vocabulary width exceeds logits width");
  StepDistribution d;
  const Array p = softmax_row_values(logits);
  d.probs.assign(p.data().begin(), p.data().end());
  d.n_vocab = n_vocab;
  d.n_copy = logits.size() - n_vocab;
  return d;
}

StepTargets build_step_targets(const std::vector<std::string>& gold_words, const AnswerVocab& vocab,
                               const std::vector<std::string>& ocr_words, std::size_t max_steps) {
  if (gold_words.size() + 1 > max_steps) {
    throw ContractError("answer of " + std::to_string(gold_words.size()) + " words leaves no room for <end> within " +
                        std::to_string(max_steps) + " steps");
  }
  StepTargets out;
  out.n_vocab = vocab.size();
  out.n_copy = ocr_words.size();
  std::vector<std::string> lowered;
  for (const auto& w : ocr_words) lowered.push_back(to_lower(w));
  for (const auto& raw : gold_words) {
    const std::string w = to_lower(raw);
    std::vector<std::size_t> valid;
    std::size_t feedback = AnswerVocab::kPad;
    const auto vi = vocab.index(w);
    if (vi && *vi >= AnswerVocab::kNumSpecial) {
      valid.push_back(*vi);
      feedback = *vi;
    }
    bool copied = false;
    for (std::size_t n = 0; n < lowered.size(); ++n) {
      if (lowered[n] != w) continue;
      valid.push_back(out.n_vocab + n);
      if (!copied) feedback = out.n_vocab + n;
      copied = true;
    }
    out.valid.push_back(std::move(valid));
    out.feedback.push_back(feedback);
  }
  out.valid.push_back({AnswerVocab::kEnd});
  return out;
}

// --- construction ------------------------------------------------------------

namespace {

Array normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  Array a(std::move(shape));
  std::normal_distribution<double> nd(0.0, stddev);
  for (double& v : a.data()) v = nd(rng);
  return a;
}

Array position_table(std::size_t n, std::size_t d) {
  Array out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = sinusoidal_embedding(static_cast<std::int64_t>(i), static_cast<int>(d));
    std::copy(e.begin(), e.end(), out.row_span(i).begin());
  }
  return out;
}

}  // namespace

void LogosModel::add_block_params(const std::string& prefix, std::mt19937_64& rng) {
  const std::size_t d = cfg_.d_model, f = cfg_.ffn_width;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* m : {"wq", "wk", "wv", "wo"}) {
    params_.add(prefix + m, normal_init({d, d}, s, rng));
    params_.add(prefix + "b" + (m + 1), Array({d}));
  }
  params_.add(prefix + "ln1.g", Array({d}, 1.0));
  params_.add(prefix + "ln1.b", Array({d}));
  params_.add(prefix + "w1", normal_init({d, f}, s, rng));
  params_.add(prefix + "b1", Array({f}));
  params_.add(prefix + "w2", normal_init({f, d}, 1.0 / std::sqrt(static_cast<double>(f)), rng));
  params_.add(prefix + "b2", Array({d}));
  params_.add(prefix + "ln2.g", Array({d}, 1.0));
  params_.add(prefix + "ln2.b", Array({d}));
}

LogosModel::LogosModel(ModelConfig cfg, AnswerVocab answers, TextVocab text, std::uint64_t seed)
    : cfg_(cfg), answers_(std::move(answers)), text_(std::move(text)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.d_model;
  // Embedding tables sit beside unit-scale sinusoids ahead of a layer norm,
  // so they start at unit scale too; output heads start small.
  const double emb = 1.0, head = 0.02;

  params_.add("text.tok_emb", normal_init({text_.size(), d}, emb, rng));
  params_.add("text.seg_emb", normal_init({3, d}, emb, rng));
  params_.add("text.ln.g", Array({d}, 1.0));
  params_.add("text.ln.b", Array({d}));
  for (std::size_t l = 0; l < cfg_.text_layers; ++l) add_block_params("text.L" + std::to_string(l) + ".", rng);

  // The region-feature block of both fusion projections is one shared matrix.
  const std::size_t ocr_in = d + cfg_.ocr_static_width();
  const double ocr_std = 1.0 / std::sqrt(static_cast<double>(ocr_in));
  params_.add("region.w", normal_init({cfg_.feature_width, d}, ocr_std, rng));
  params_.add("ocr_fuse.w", normal_init({ocr_in - cfg_.feature_width, d}, ocr_std, rng));
  params_.add("ocr_fuse.b", Array({d}));
  params_.add("ocr_fuse.ln.g", Array({d}, 1.0));
  params_.add("ocr_fuse.ln.b", Array({d}));
  const std::size_t obj_in = d + cfg_.object_static_width();
  params_.add("obj_fuse.w", normal_init({obj_in - cfg_.feature_width, d}, 1.0 / std::sqrt(static_cast<double>(obj_in)), rng));
  params_.add("obj_fuse.b", Array({d}));
  params_.add("obj_fuse.ln.g", Array({d}, 1.0));
  params_.add("obj_fuse.ln.b", Array({d}));

  params_.add("mm.type_emb", normal_init({4, d}, head, rng));
  for (std::size_t l = 0; l < cfg_.mm_layers; ++l) add_block_params("mm.L" + std::to_string(l) + ".", rng);

  params_.add("dec.ans_emb", normal_init({answers_.size(), d}, emb, rng));
  params_.add("dec.ln.g", Array({d}, 1.0));
  params_.add("dec.ln.b", Array({d}));

  params_.add("head.vocab.w", normal_init({d, answers_.size()}, head, rng));
  params_.add("head.vocab.b", Array({answers_.size()}));
  const double copy_std = std::pow(static_cast<double>(d), -0.75);
  params_.add("head.copy.wo", normal_init({d, d}, copy_std, rng));
  params_.add("head.copy.bo", Array({d}));
  params_.add("head.copy.wd", normal_init({d, d}, copy_std, rng));
  params_.add("head.copy.bd", Array({d}));
  params_.add("head.ground.w", normal_init({1, d}, head, rng));

  text_positions_ = position_table(cfg_.max_text_len, d);
  decoder_positions_ = position_table(cfg_.max_decode_steps, d);
}

Var LogosModel::param(Tape& t, const std::string& name) const { return t.param(params_.get(name)); }

// --- inputs ------------------------------------------------------------------

ItemContext LogosModel::prepare_item(const QAItem& item, const std::vector<ObjectRegion>& objects) const {
  ItemContext ctx;
  for (const auto& w : item.question_tokens) ctx.question_ids.push_back(text_.id(w));
  if (ctx.question_ids.empty()) throw ContractError("question '" + item.question_id + "' has no tokens");
  ctx.object_static = Array({objects.size(), cfg_.object_static_width()});
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const ObjectRegion& obj = objects[o];
    if (obj.feature.size() != cfg_.feature_width) {
      throw ShapeError("object feature width " + std::to_string(obj.feature.size()) + " does not match model width " +
                       std::to_string(cfg_.feature_width));
    }
    ctx.label_ids.push_back(text_.id(obj.label));
    auto row = ctx.object_static.row_span(o);
    for (std::size_t k = 0; k < cfg_.feature_width; ++k) row[k] = obj.feature[k] * cfg_.feature_scale();
    const double box[4] = {obj.box.x1, obj.box.y1, obj.box.x2, obj.box.y2};
    std::copy(box, box + 4, row.begin() + static_cast<std::ptrdiff_t>(cfg_.feature_width));
  }
  return ctx;
}

SourceContext LogosModel::prepare_source(const std::vector<OcrLine>& lines, const std::vector<ObjectRegion>& objects,
                                         const std::string& source_id) const {
  SourceContext ctx;
  ctx.source_id = source_id;
  std::vector<const OcrLine*> kept;
  for (const OcrLine& l : lines)
    if (!l.tokens.empty()) kept.push_back(&l);
  if (kept.empty()) {
    ctx.ocr_static = Array({0, cfg_.ocr_static_width()});
    return ctx;
  }
  std::vector<NormBox> line_boxes;
  for (const OcrLine* l : kept) line_boxes.push_back(l->box);
  const ClusterAssignment clusters = cluster_lines(line_boxes, cfg_.cluster_epsilon);

  // Reading order: cluster, then line rank inside the cluster, then token.
  std::vector<std::size_t> order(kept.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const int ca = clusters.cluster_of_line[a], cb = clusters.cluster_of_line[b];
    if (ca != cb) return ca < cb;
    if (line_boxes[a].y1 != line_boxes[b].y1) return line_boxes[a].y1 < line_boxes[b].y1;
    return line_boxes[a].x1 < line_boxes[b].x1;
  });

  struct Placed {
    const OcrToken* token;
    int cluster, line, index;
  };
  std::vector<Placed> placed;
  // The line index is the line's position in detection order.
  for (std::size_t li : order) {
    const int c = clusters.cluster_of_line[li];
    for (std::size_t k = 0; k < kept[li]->tokens.size(); ++k) {
      placed.push_back({&kept[li]->tokens[k], c, static_cast<int>(li), static_cast<int>(k)});
    }
  }

  const std::size_t width = cfg_.ocr_static_width();
  ctx.ocr_static = Array({placed.size(), width});
  for (std::size_t n = 0; n < placed.size(); ++n) {
    const OcrToken& tok = *placed[n].token;
    ctx.words.push_back(to_lower(tok.text));
    ctx.text_ids.push_back(text_.id(ctx.words.back()));
    ctx.boxes.push_back(tok.box);
    auto row = ctx.ocr_static.row_span(n);
    std::size_t at = 0;
    for (int bit : phoc_encode(tok.text)) row[at++] = bit;
    for (double v : spatial_descriptor(placed[n].cluster, placed[n].line, placed[n].index, cfg_.spatial_d).embedding) {
      row[at++] = v;
    }
    std::size_t hits = 0;
    for (const ObjectRegion& obj : objects) {
      const NormBox center{tok.box.center_x(), tok.box.center_y(), tok.box.center_x(), tok.box.center_y()};
      if (!obj.box.contains(center)) continue;
      if (obj.feature.size() != cfg_.feature_width) throw ShapeError("object feature width does not match the model");
      for (std::size_t k = 0; k < cfg_.feature_width; ++k) row[at + k] += obj.feature[k] * cfg_.feature_scale();
      ++hits;
    }
    if (hits > 1) {
      for (std::size_t k = 0; k < cfg_.feature_width; ++k) row[at + k] /= static_cast<double>(hits);
    }
    at += cfg_.feature_width;
    for (double v : {tok.box.x1, tok.box.y1, tok.box.x2, tok.box.y2}) row[at++] = v;
  }
  return ctx;
}

// --- forward -----------------------------------------------------------------

Var LogosModel::block(Tape& t, Var x, const std::string& prefix, const AttentionMask& mask,
                      std::vector<Array>* attention) const {
  auto p = [&](const char* name) { return param(t, prefix + name); };
  const Var q = linear(t, x, p("wq"), p("bq"));
  const Var k = linear(t, x, p("wk"), p("bk"));
  const Var v = linear(t, x, p("wv"), p("bv"));
  const Var a = linear(t, multi_head_attention(t, q, k, v, mask, cfg_.n_heads, attention), p("wo"), p("bo"));
  x = layer_norm(t, add(t, x, a), p("ln1.g"), p("ln1.b"));
  const Var f = linear(t, gelu(t, linear(t, x, p("w1"), p("b1"))), p("w2"), p("b2"));
  return layer_norm(t, add(t, x, f), p("ln2.g"), p("ln2.b"));
}

LogosModel::TextEncoding LogosModel::encode_text(Tape& t, const std::vector<std::size_t>& question_ids,
                                                 const std::vector<std::size_t>& label_ids,
                                                 const std::vector<std::size_t>& ocr_ids) const {
  const std::size_t nq = question_ids.size(), no = label_ids.size(), nn = ocr_ids.size();
  const std::size_t n = nq + no + nn;
  if (nq == 0) throw ContractError("encode_text needs a nonempty question");
  if (n > cfg_.max_text_len) {
    throw CapacityError("text sequence of " + std::to_string(n) + " tokens exceeds the limit of " +
                        std::to_string(cfg_.max_text_len));
  }
  std::vector<std::size_t> ids, segs;
  ids.reserve(n);
  for (auto [list, seg] : {std::pair{&question_ids, 0}, std::pair{&label_ids, 1}, std::pair{&ocr_ids, 2}}) {
    for (std::size_t id : *list) {
      ids.push_back(id);
      segs.push_back(static_cast<std::size_t>(seg));
    }
  }
  Array pos({n, cfg_.d_model});
  std::copy_n(text_positions_.ptr(), n * cfg_.d_model, pos.ptr());
  Var x = add(t, embedding_lookup(t, param(t, "text.tok_emb"), ids), embedding_lookup(t, param(t, "text.seg_emb"), segs));
  x = add(t, x, t.constant(std::move(pos)));
  x = layer_norm(t, x, param(t, "text.ln.g"), param(t, "text.ln.b"));
  const AttentionMask mask = AttentionMask::full(n);
  for (std::size_t l = 0; l < cfg_.text_layers; ++l) x = block(t, x, "text.L" + std::to_string(l) + ".", mask, nullptr);

  TextEncoding out;
  out.question = slice_rows(t, x, 0, nq);
  if (no > 0) out.objects = slice_rows(t, x, nq, nq + no);
  if (nn > 0) out.ocr = slice_rows(t, x, nq + no, n);
  return out;
}

Var LogosModel::fuse_ocr(Tape& t, Var text_emb, const Array& ocr_static) const {
  const Array& te = t.value(text_emb);
  if (te.cols() != cfg_.d_model || ocr_static.cols() != cfg_.ocr_static_width() || te.rows() != ocr_static.rows()) {
    throw ShapeError("fuse_ocr expects " + std::to_string(te.rows()) + "x" + std::to_string(cfg_.d_model) + " and " +
                     std::to_string(te.rows()) + "x" + std::to_string(cfg_.ocr_static_width()) + ", got " +
                     te.shape_str() + " and " + ocr_static.shape_str());
  }
  const std::size_t f0 = kPhocWidth + cfg_.spatial_width(), f1 = f0 + cfg_.feature_width;
  const Var parts[] = {text_emb, t.constant(column_range(ocr_static, 0, f0)),
                       t.constant(column_range(ocr_static, f1, ocr_static.cols()))};
  const Var z = add(t, linear(t, concat_last(t, parts), param(t, "ocr_fuse.w"), param(t, "ocr_fuse.b")),
                    matmul(t, t.constant(column_range(ocr_static, f0, f1)), param(t, "region.w")));
  return layer_norm(t, z, param(t, "ocr_fuse.ln.g"), param(t, "ocr_fuse.ln.b"));
}

Var LogosModel::fuse_object(Tape& t, Var label_emb, const Array& object_static) const {
  const Array& le = t.value(label_emb);
  if (le.cols() != cfg_.d_model || object_static.cols() != cfg_.object_static_width() ||
      le.rows() != object_static.rows()) {
    throw ShapeError("fuse_object width mismatch: " + le.shape_str() + " and " + object_static.shape_str());
  }
  const std::size_t f1 = cfg_.feature_width;
  const Var parts[] = {label_emb, t.constant(column_range(object_static, f1, object_static.cols()))};
  const Var z = add(t, linear(t, concat_last(t, parts), param(t, "obj_fuse.w"), param(t, "obj_fuse.b")),
                    matmul(t, t.constant(column_range(object_static, 0, f1)), param(t, "region.w")));
  return layer_norm(t, z, param(t, "obj_fuse.ln.g"), param(t, "obj_fuse.ln.b"));
}

Var LogosModel::mm_forward(Tape& t, Var question, Var objects, Var ocr, Var decoder,
                           std::vector<Array>* attention) const {
  const Var type_emb = param(t, "mm.type_emb");
  std::vector<Var> parts;
  std::size_t n_ctx = 0, n_dec = 0;
  const Var segments[] = {question, objects, ocr, decoder};
  for (std::size_t s = 0; s < 4; ++s) {
    if (!segments[s].valid()) continue;
    const Array& v = t.value(segments[s]);
    if (v.size() == 0) continue;
    if (v.cols() != cfg_.d_model) throw ShapeError("mm_forward segment of width " + std::to_string(v.cols()));
    (s == 3 ? n_dec : n_ctx) += v.rows();
    parts.push_back(add_row(t, segments[s], slice_rows(t, type_emb, s, s + 1)));
  }
  if (parts.empty()) throw ContractError("mm_forward over an empty sequence");
  if (n_dec > cfg_.max_decode_steps) throw ContractError("decoder prefix longer than max_decode_steps");
  const std::size_t n = n_ctx + n_dec;
  AttentionMask mask;
  mask.n = n;
  mask.allowed.assign(n * n, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) mask.allowed[r * n + c] = c < n_ctx || (r >= n_ctx && c <= r);

  Var x = concat_rows(t, parts);
  for (std::size_t l = 0; l < cfg_.mm_layers; ++l) x = block(t, x, "mm.L" + std::to_string(l) + ".", mask, attention);
  return x;
}

Var LogosModel::step_logits(Tape& t, Var decoder_hidden, Var ocr_hidden) const {
  const Var vocab = linear(t, decoder_hidden, param(t, "head.vocab.w"), param(t, "head.vocab.b"));
  if (!ocr_hidden.valid() || t.value(ocr_hidden).size() == 0) return vocab;
  const Var po = linear(t, ocr_hidden, param(t, "head.copy.wo"), param(t, "head.copy.bo"));
  const Var pd = linear(t, decoder_hidden, param(t, "head.copy.wd"), param(t, "head.copy.bd"));
  const Var parts[] = {vocab, matmul_nt(t, pd, po)};
  return concat_last(t, parts);
}

Var LogosModel::decoder_inputs(Tape& t, Var ocr_fused, const std::vector<std::size_t>& positions) const {
  const std::size_t v = answers_.size();
  std::vector<Var> rows;
  std::vector<std::size_t> run;
  auto flush = [&] {
    if (run.empty()) return;
    rows.push_back(embedding_lookup(t, param(t, "dec.ans_emb"), run));
    run.clear();
  };
  for (std::size_t p : positions) {
    if (p < v) {
      run.push_back(p);
      continue;
    }
    flush();
    if (!ocr_fused.valid()) throw ContractError("copy position without OCR tokens");
    rows.push_back(slice_rows(t, ocr_fused, p - v, p - v + 1));
  }
  flush();
  Var x = rows.size() == 1 ? rows[0] : concat_rows(t, rows);
  const std::size_t s = positions.size();
  Array pos({s, cfg_.d_model});
  std::copy_n(decoder_positions_.ptr(), s * cfg_.d_model, pos.ptr());
  x = add(t, x, t.constant(std::move(pos)));
  return layer_norm(t, x, param(t, "dec.ln.g"), param(t, "dec.ln.b"));
}

Var LogosModel::finetune_loss(Tape& t, const ItemContext& item, const SourceContext& source,
                              const StepTargets& targets) const {
  const std::size_t n_ocr = source.size(), v = answers_.size();
  if (targets.n_vocab != v || targets.n_copy != n_ocr) throw ShapeError("step targets do not match vocab/OCR widths");
  const TextEncoding enc = encode_text(t, item.question_ids, item.label_ids, source.text_ids);
  const Var objects = enc.objects.valid() ? fuse_object(t, enc.objects, item.object_static) : Var{};
  const Var ocr = enc.ocr.valid() ? fuse_ocr(t, enc.ocr, source.ocr_static) : Var{};

  std::vector<std::size_t> inputs{AnswerVocab::kBegin};
  inputs.insert(inputs.end(), targets.feedback.begin(), targets.feedback.end());
  const Var dec = decoder_inputs(t, ocr, inputs);
  const Var h = mm_forward(t, enc.question, objects, ocr, dec);
  const std::size_t total = t.value(h).rows(), s = inputs.size();
  const Var dec_h = slice_rows(t, h, total - s, total);
  const Var ocr_h = n_ocr > 0 ? slice_rows(t, h, total - s - n_ocr, total - s) : Var{};
  const Var logits = step_logits(t, dec_h, ocr_h);

  Array target({s, v + n_ocr});
  for (std::size_t step = 0; step < s; ++step) {
    const auto& valid = targets.valid[step];
    for (std::size_t p : valid) target.at(step, p) += 1.0 / static_cast<double>(valid.size());
  }
  return soft_cross_entropy(t, logits, target);
}

DecodedAnswer LogosModel::decode_greedy(const ItemContext& item, const SourceContext& source) const {
  Tape t(false);
  const std::size_t n_ocr = source.size(), v = answers_.size();
  const TextEncoding enc = encode_text(t, item.question_ids, item.label_ids, source.text_ids);
  const Var objects = enc.objects.valid() ? fuse_object(t, enc.objects, item.object_static) : Var{};
  const Var ocr = enc.ocr.valid() ? fuse_ocr(t, enc.ocr, source.ocr_static) : Var{};

  auto surface = [&](std::size_t p) -> const std::string& { return p < v ? answers_.word(p) : source.words[p - v]; };

  DecodedAnswer out;
  out.terminated_by = Termination::kLengthCap;
  std::vector<std::size_t> inputs{AnswerVocab::kBegin};
  for (std::size_t step = 0; step < cfg_.max_decode_steps; ++step) {
    const Var dec = decoder_inputs(t, ocr, inputs);
    const Var h = mm_forward(t, enc.question, objects, ocr, dec);
    const std::size_t total = t.value(h).rows(), s = inputs.size();
    const Var last = slice_rows(t, h, total - 1, total);
    const Var ocr_h = n_ocr > 0 ? slice_rows(t, h, total - s - n_ocr, total - s) : Var{};
    const Array& logits = t.value(step_logits(t, last, ocr_h));
    const StepDistribution dist = step_distribution(logits.row_span(0), v);

    std::size_t best = AnswerVocab::kEnd;
    for (std::size_t p = 0; p < dist.probs.size(); ++p) {
      if (p == AnswerVocab::kPad || p == AnswerVocab::kBegin) continue;
      if (dist.probs[p] > dist.probs[best]) best = p;
    }
    if (best == AnswerVocab::kEnd) {
      out.terminated_by = Termination::kEnd;
      out.end_prob = dist.probs[AnswerVocab::kEnd];
      break;
    }
    const std::string& word = surface(best);
    double mass = 0.0;
    // Feed back the first OCR token with this surface form, as in training.
    std::size_t first_copy = best;
    bool have_copy = false;
    for (std::size_t p = 0; p < dist.probs.size(); ++p) {
      if (p < AnswerVocab::kNumSpecial || surface(p) != word) continue;
      mass += dist.probs[p];
      if (p >= v && !have_copy) {
        first_copy = p;
        have_copy = true;
      }
    }
    out.tokens.push_back(word);
    out.positions.push_back(best);
    out.step_probs.push_back(std::min(1.0, mass));
    if (inputs.size() == cfg_.max_decode_steps) break;
    inputs.push_back(first_copy);
  }
  return out;
}

Var LogosModel::grounding_logits(Tape& t, const std::vector<std::size_t>& question_ids,
                                 const ItemContext& candidates) const {
  const std::size_t n = candidates.label_ids.size();
  if (n < 2) throw ContractError("grounding needs at least 2 candidates, got " + std::to_string(n));
  const TextEncoding enc = encode_text(t, question_ids, candidates.label_ids, {});
  const Var fused = fuse_object(t, enc.objects, candidates.object_static);
  const Var h = mm_forward(t, enc.question, fused, Var{}, Var{});
  const std::size_t nq = question_ids.size();
  return matmul_nt(t, param(t, "head.ground.w"), slice_rows(t, h, nq, nq + n));
}

std::vector<double> LogosModel::grounding_scores(const std::vector<std::size_t>& question_ids,
                                                 const ItemContext& candidates) const {
  Tape t(false);
  const Array p = softmax_row_values(t.value(grounding_logits(t, question_ids, candidates)).row_span(0));
  return {p.data().begin(), p.data().end()};
}

}  // namespace logos
