#include "logos/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>

#include "logos/error.hpp"
#include "logos/metrics.hpp"
#include "logos/selector.hpp"
#include "logos/synth.hpp"

namespace logos {

using nlohmann::json;
using nlohmann::ordered_json;

// --- configuration -----------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (total_iters < 1) throw ConfigError("total_iters must be at least 1");
  if (warmup_iters >= total_iters) throw ConfigError("warmup_iters must be below total_iters");
  for (std::size_t i = 0; i < decay_points.size(); ++i) {
    if (decay_points[i] >= total_iters) throw ConfigError("decay points must lie below total_iters");
    if (i > 0 && decay_points[i] <= decay_points[i - 1]) throw ConfigError("decay points must be strictly increasing");
  }
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(decay_factor > 0.0) || decay_factor > 1.0) throw ConfigError("decay_factor must lie in (0, 1]");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (answer_vocab_size < 1) throw ConfigError("answer_vocab_size must be at least 1");
  if (grounding_candidates < 2) throw ConfigError("grounding_candidates must be at least 2");
  if (!(label_mask_rate >= 0.0 && label_mask_rate <= 1.0)) throw ConfigError("label_mask_rate must lie in [0, 1]");
  if (!(augment_rate >= 0.0 && augment_rate <= 1.0)) throw ConfigError("augment_rate must lie in [0, 1]");
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.batch_size = 48;
  c.total_iters = 24000;
  c.warmup_iters = 1000;
  c.decay_points = {14000, 19000};
  c.base_lr = 1e-4;
  return c;
}

TrainConfig TrainConfig::grounding_default() {
  TrainConfig c;
  c.total_iters = 200;
  c.warmup_iters = 20;
  c.decay_points = {};
  c.eval_every = 200;
  return c;
}

ordered_json train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["batch_size"] = c.batch_size;
  j["total_iters"] = c.total_iters;
  j["base_lr"] = c.base_lr;
  j["warmup_iters"] = c.warmup_iters;
  j["decay_points"] = c.decay_points;
  j["decay_factor"] = c.decay_factor;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["answer_vocab_size"] = c.answer_vocab_size;
  j["grounding_candidates"] = c.grounding_candidates;
  j["label_mask_rate"] = c.label_mask_rate;
  j["augment_rate"] = c.augment_rate;
  return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "total_iters") c.total_iters = v.get<std::size_t>();
      else if (k == "base_lr") c.base_lr = v.get<double>();
      else if (k == "warmup_iters") c.warmup_iters = v.get<std::size_t>();
      else if (k == "decay_points") c.decay_points = v.get<std::vector<std::size_t>>();
      else if (k == "decay_factor") c.decay_factor = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "eval_every") c.eval_every = v.get<std::size_t>();
      else if (k == "answer_vocab_size") c.answer_vocab_size = v.get<std::size_t>();
      else if (k == "grounding_candidates") c.grounding_candidates = v.get<std::size_t>();
      else if (k == "label_mask_rate") c.label_mask_rate = v.get<double>();
      else if (k == "augment_rate") c.augment_rate = v.get<double>();
      else throw ConfigError("unknown training config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double lr_at(std::size_t iter, const TrainConfig& cfg) {
  if (iter >= cfg.total_iters) {
    throw ContractError("iteration " + std::to_string(iter) + " outside [0, " + std::to_string(cfg.total_iters) + ")");
  }
  if (iter < cfg.warmup_iters) {
    return cfg.base_lr * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
  }
  double lr = cfg.base_lr;
  for (std::size_t p : cfg.decay_points)
    if (iter >= p) lr *= cfg.decay_factor;
  return lr;
}

// --- optimizer ---------------------------------------------------------------

Adam::Adam(const ParameterStore& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(ParameterStore& params, const Gradients& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ContractError("optimizer state does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    double* w = params[i].value.ptr();
    const double* g = grads[i].ptr();
    double* m = m_[i].ptr();
    double* v = v_[i].ptr();
    for (std::size_t k = 0, n = m_[i].size(); k < n; ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

// --- sampling ----------------------------------------------------------------

PairSampler::PairSampler(std::size_t n_items, std::size_t n_sources, std::uint64_t seed) : rng_(seed) {
  if (n_items == 0 || n_sources == 0) throw EmptyInputError("nothing to sample: no items or no OCR sources");
  for (std::size_t i = 0; i < n_items; ++i)
    for (std::size_t s = 0; s < n_sources; ++s) order_.push_back({i, s});
  reshuffle();
}

void PairSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

TrainingPair PairSampler::next() {
  if (cursor_ == order_.size()) {
    ++epoch_;
    reshuffle();
  }
  return order_[cursor_++];
}

// --- fine-tuning -------------------------------------------------------------

std::vector<FinetuneExample> prepare_finetune(const LogosModel& model, const Dataset& dataset) {
  std::vector<FinetuneExample> out;
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    const QAItem& item = dataset.items[i];
    const auto& objects = dataset.objects_for(item.image_id);
    const ItemContext ctx = model.prepare_item(item, objects);
    const auto gold = split_words(item.answers.front());
    for (std::size_t s = 0; s < dataset.sources.size(); ++s) {
      const OcrSource& src = dataset.sources[s];
      FinetuneExample ex;
      ex.item = ctx;
      ex.source = model.prepare_source(src.lines(item.image_id), objects, src.id);
      ex.targets = build_step_targets(gold, model.answer_vocab(), ex.source.words, model.config().max_decode_steps);
      ex.item_index = i;
      ex.source_index = s;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

double batch_gradients(const LogosModel& model, std::span<const FinetuneExample* const> batch, Gradients& grads) {
  if (batch.empty()) throw ContractError("empty training batch");
  std::size_t steps = 0;
  for (const FinetuneExample* ex : batch) steps += ex->targets.valid.size() - ex->targets.masked_steps();
  const double scale = 1.0 / static_cast<double>(steps);
  double total = 0.0;
  for (const FinetuneExample* ex : batch) {
    Tape t;
    const Var loss = model.finetune_loss(t, ex->item, ex->source, ex->targets);
    total += t.value(loss)[0];
    t.backward(loss, scale);
    t.accumulate_into(grads);
  }
  return total * scale;
}

double finetune_step(LogosModel& model, Adam& adam, std::span<const FinetuneExample* const> batch, std::size_t iter,
                     const TrainConfig& cfg) {
  Gradients grads(model.params());
  const double loss = batch_gradients(model, batch, grads);
  adam.step(model.params(), grads, lr_at(iter, cfg));
  return loss;
}

// --- grounding ---------------------------------------------------------------

std::vector<GroundingExample> referral_examples(const LogosModel& model, const Dataset& dataset,
                                                std::size_t n_candidates, std::uint64_t seed) {
  if (n_candidates < 2) throw DataError("grounding needs at least 2 candidates");
  std::mt19937_64 rng(seed);
  std::set<std::string> used;
  for (const QAItem& item : dataset.items) used.insert(item.image_id);
  std::vector<GroundingExample> out;
  for (const std::string& image : dataset.object_image_order) {
    if (!used.count(image)) continue;
    const auto& objects = dataset.objects_for(image);
    if (objects.size() < n_candidates) continue;
    std::vector<std::size_t> idx(objects.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n_candidates);
    std::vector<ObjectRegion> chosen;
    for (std::size_t i : idx) chosen.push_back(objects[i]);
    const std::size_t gold = std::uniform_int_distribution<std::size_t>(0, n_candidates - 1)(rng);
    QAItem q;
    q.question_id = image;
    q.question = "where is the " + chosen[gold].label + "?";
    q.question_tokens = tokenize_question(q.question);
    GroundingExample ex;
    ex.candidates = model.prepare_item(q, chosen);
    ex.question_ids = ex.candidates.question_ids;
    ex.gold = gold;
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

Var grounding_loss(Tape& t, const LogosModel& model, const GroundingExample& ex) {
  const Var logits = model.grounding_logits(t, ex.question_ids, ex.candidates);
  Array target({1, ex.candidates.label_ids.size()});
  target[ex.gold] = 1.0;
  return soft_cross_entropy(t, logits, target);
}

}  // namespace

double grounding_loss_value(const LogosModel& model, const GroundingExample& ex) {
  Tape t(false);
  return t.value(grounding_loss(t, model, ex))[0];
}

double grounding_accuracy(const LogosModel& model, std::span<const GroundingExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) {
    const auto p = model.grounding_scores(ex.question_ids, ex.candidates);
    hits += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == ex.gold;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

LogSink jsonl_sink(std::ostream& os) {
  return [&os](const LogRecord& r) {
    char buf[256];
    if (r.has_val) {
      std::snprintf(buf, sizeof buf, "{\"iter\":%zu,\"lr\":%.9g,\"loss\":%.9g,\"val_accuracy\":%.6f}\n", r.iter, r.lr,
                    r.loss, r.val_accuracy);
    } else {
      std::snprintf(buf, sizeof buf, "{\"iter\":%zu,\"lr\":%.9g,\"loss\":%.9g,\"val_accuracy\":null}\n", r.iter, r.lr,
                    r.loss);
    }
    os << buf;
  };
}

TrainReport pretrain_grounding(LogosModel& model, std::span<const GroundingExample> examples, const TrainConfig& cfg,
                               const LogSink& log) {
  cfg.validate();
  if (examples.empty()) throw EmptyInputError("no grounding examples");
  for (const auto& ex : examples)
    if (ex.candidates.label_ids.size() < 2) throw DataError("grounding example with fewer than 2 candidates");
  Adam adam(model.params());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  TrainReport report;
  for (std::size_t iter = 0; iter < cfg.total_iters; ++iter) {
    Gradients grads(model.params());
    const double scale = 1.0 / static_cast<double>(cfg.batch_size);
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const GroundingExample* ex = &examples[order[cursor++]];
      GroundingExample masked;
      if (cfg.label_mask_rate > 0.0) {
        masked = *ex;
        std::bernoulli_distribution hide(cfg.label_mask_rate);
        for (auto& id : masked.candidates.label_ids)
          if (hide(rng)) id = TextVocab::kUnk;
        ex = &masked;
      }
      Tape t;
      const Var l = grounding_loss(t, model, *ex);
      loss += t.value(l)[0] * scale;
      t.backward(l, scale);
      t.accumulate_into(grads);
    }
    const double lr = lr_at(iter, cfg);
    adam.step(model.params(), grads, lr);
    report.losses.push_back(loss);
    if (log) log({iter, lr, loss, false, 0.0});
  }
  report.best_iter = cfg.total_iters - 1;
  return report;
}

// --- fine-tuning loop --------------------------------------------------------

LogosModel make_model(const Dataset& train_set, const ModelConfig& model_cfg, const TrainConfig& cfg) {
  ModelConfig mc = model_cfg;
  const std::size_t width = train_set.feature_width();
  if (width != 0) mc.feature_width = width;
  return LogosModel(mc, AnswerVocab::build(all_answers(train_set.items), cfg.answer_vocab_size),
                    TextVocab::build(train_set), cfg.seed);
}

// --- augmentation ------------------------------------------------------------

AnswerPreservingAugmenter::AnswerPreservingAugmenter(const Dataset& train_set, const AnswerVocab& answers)
    : train_(&train_set) {
  for (const std::string& image : train_set.object_image_order) {
    for (const ObjectRegion& o : train_set.objects_for(image)) {
      if (features_.emplace(o.label, o.feature).second) labels_.push_back(o.label);
    }
  }
  std::sort(labels_.begin(), labels_.end());
  const auto words = answers.content_words();
  pool_.assign(words.begin(), words.end());
}

FinetuneExample AnswerPreservingAugmenter::example(const LogosModel& model, std::size_t item_index,
                                                   std::size_t source_index, std::mt19937_64& rng) const {
  const QAItem& original = train_->items.at(item_index);
  QAItem item = original;
  std::vector<ObjectRegion> objects = train_->objects_for(item.image_id);

  // Labels move together with their features, so every label keeps the
  // region feature it always has.
  std::vector<std::string> shuffled = labels_;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::map<std::string, std::string> relabel;
  for (std::size_t i = 0; i < labels_.size(); ++i) relabel[labels_[i]] = shuffled[i];
  for (ObjectRegion& o : objects) {
    o.label = relabel.at(o.label);
    o.feature = features_.at(o.label);
  }
  for (auto& tok : item.question_tokens) {
    auto it = relabel.find(tok);
    if (it != relabel.end()) tok = it->second;
  }

  // Every OCR word of the image (in any source) and every gold word gets a
  // distinct replacement.
  std::vector<std::string> gold = split_words(original.answers.front());
  std::set<std::string> seen(gold.begin(), gold.end());
  for (const OcrSource& src : train_->sources)
    for (const OcrLine& line : src.lines(item.image_id))
      for (const OcrToken& tok : line.tokens) seen.insert(to_lower(tok.text));
  std::vector<OcrLine> lines = train_->sources.at(source_index).lines(item.image_id);
  if (seen.size() <= pool_.size()) {
    std::vector<std::string> pool = pool_;
    std::map<std::string, std::string> rename;
    std::size_t next = 0;
    for (const std::string& w : seen) {
      std::swap(pool[next], pool[std::uniform_int_distribution<std::size_t>(next, pool.size() - 1)(rng)]);
      rename[w] = pool[next++];
    }
    for (auto& w : gold) w = rename.at(w);
    for (OcrLine& line : lines)
      for (OcrToken& tok : line.tokens) tok.text = rename.at(to_lower(tok.text));
  }

  FinetuneExample ex;
  ex.item = model.prepare_item(item, objects);
  ex.source = model.prepare_source(lines, objects, train_->sources[source_index].id);
  ex.targets = build_step_targets(gold, model.answer_vocab(), ex.source.words, model.config().max_decode_steps);
  ex.item_index = item_index;
  ex.source_index = source_index;
  return ex;
}

TrainReport train(LogosModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const LogSink& log) {
  cfg.validate();
  const std::vector<FinetuneExample> examples = prepare_finetune(model, train_set);
  PairSampler sampler(train_set.items.size(), train_set.sources.size(), cfg.seed);
  const std::size_t n_sources = train_set.sources.size();
  Adam adam(model.params());
  TrainReport report;
  std::vector<Array> best;
  const AnswerPreservingAugmenter augmenter(train_set, model.answer_vocab());
  std::vector<FinetuneExample> fresh(cfg.batch_size);

  for (std::size_t iter = 0; iter < cfg.total_iters; ++iter) {
    std::vector<const FinetuneExample*> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const TrainingPair p = sampler.next();
      std::mt19937_64 rng(mix_seed(cfg.seed ^ 0xa5a5a5a5ull, iter * cfg.batch_size + b));
      if (cfg.augment_rate > 0.0 && std::bernoulli_distribution(cfg.augment_rate)(rng)) {
        fresh[b] = augmenter.example(model, p.item, p.source, rng);
        batch.push_back(&fresh[b]);
      } else {
        batch.push_back(&examples[p.item * n_sources + p.source]);
      }
    }
    const double lr = lr_at(iter, cfg);
    const double loss = finetune_step(model, adam, batch, iter, cfg);
    report.losses.push_back(loss);

    LogRecord rec{iter, lr, loss, false, 0.0};
    const bool eval_now = (iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.total_iters;
    if (eval_now && !val_set.items.empty()) {
      std::vector<Prediction> preds;
      for (const auto& r : predict_dataset(model, val_set)) preds.push_back({r.question_id, r.answer});
      const double acc = evaluate(preds, val_set.items).mean_accuracy;
      rec.has_val = true;
      rec.val_accuracy = acc;
      if (acc > report.best_val_accuracy) {
        report.best_val_accuracy = acc;
        report.best_iter = iter;
        best.clear();
        for (const auto& p : model.params()) best.push_back(p->value);
      }
    }
    if (log) log(rec);
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < best.size(); ++i) model.params()[i].value = best[i];
  } else {
    report.best_iter = cfg.total_iters - 1;
  }
  return report;
}

// --- gradient check ----------------------------------------------------------

ModelConfig grad_check_config() {
  ModelConfig c;
  c.d_model = 4;
  c.n_heads = 2;
  c.ffn_width = 8;
  c.spatial_d = 2;
  c.feature_width = 4;
  c.max_text_len = 64;
  return c;
}

GradCheckResult grad_check(const ModelConfig& small_cfg, std::size_t n_probes, std::uint64_t seed) {
  SynthConfig sc;
  sc.seed = seed;
  sc.n_train = 2;
  sc.n_val = 0;
  sc.feature_width = small_cfg.feature_width;
  const SynthCorpus corpus = gen_synthetic(sc);
  TrainConfig tc;
  tc.seed = seed;
  LogosModel model(small_cfg, AnswerVocab::build(all_answers(corpus.train.items), tc.answer_vocab_size),
                   TextVocab::build(corpus.train, 1), seed);

  GradCheckResult result;
  result.n_params = model.params().scalar_count();
  if (result.n_params > 5000) {
    throw ConfigError("gradient check model has " + std::to_string(result.n_params) + " parameters; the limit is 5000");
  }
  if (n_probes == 0) {
    result.warning = "no probes requested; the check is vacuous";
    return result;
  }

  const auto examples = prepare_finetune(model, corpus.train);
  const FinetuneExample& ex = examples.front();
  const auto referral = referral_examples(model, corpus.train, 2, seed);
  auto loss_value = [&](Tape& t) {
    const Var a = model.finetune_loss(t, ex.item, ex.source, ex.targets);
    const Var b = grounding_loss(t, model, referral.front());
    return add(t, a, b);
  };

  Gradients analytic(model.params());
  {
    Tape t;
    const Var l = loss_value(t);
    t.backward(l);
    t.accumulate_into(analytic);
  }

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  const double h = 1e-5;
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    const std::size_t pi = std::uniform_int_distribution<std::size_t>(0, model.params().size() - 1)(rng);
    Parameter& p = model.params()[pi];
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, p.value.size() - 1)(rng);
    const double saved = p.value[k];
    p.value[k] = saved + h;
    double plus, minus;
    {
      Tape t(false);
      plus = t.value(loss_value(t))[0];
    }
    p.value[k] = saved - h;
    {
      Tape t(false);
      minus = t.value(loss_value(t))[0];
    }
    p.value[k] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double a = analytic[pi][k];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  result.n_probes = n_probes;
  return result;
}

}  // namespace logos
