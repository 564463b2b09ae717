#include "logos/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "logos/error.hpp"

namespace logos {

using nlohmann::json;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

ordered_json model_config_to_json(const ModelConfig& cfg) {
  ordered_json j;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["text_layers"] = cfg.text_layers;
  j["mm_layers"] = cfg.mm_layers;
  j["ffn_width"] = cfg.ffn_width;
  j["max_decode_steps"] = cfg.max_decode_steps;
  j["max_text_len"] = cfg.max_text_len;
  j["spatial_d"] = cfg.spatial_d;
  j["feature_width"] = cfg.feature_width;
  j["cluster_epsilon"] = cfg.cluster_epsilon;
  return j;
}

ModelConfig model_config_from_json(const json& j, ModelConfig cfg) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "d_model") cfg.d_model = v.get<std::size_t>();
      else if (k == "n_heads") cfg.n_heads = v.get<std::size_t>();
      else if (k == "text_layers") cfg.text_layers = v.get<std::size_t>();
      else if (k == "mm_layers") cfg.mm_layers = v.get<std::size_t>();
      else if (k == "ffn_width") cfg.ffn_width = v.get<std::size_t>();
      else if (k == "max_decode_steps") cfg.max_decode_steps = v.get<std::size_t>();
      else if (k == "max_text_len") cfg.max_text_len = v.get<std::size_t>();
      else if (k == "spatial_d") cfg.spatial_d = v.get<int>();
      else if (k == "feature_width") cfg.feature_width = v.get<std::size_t>();
      else if (k == "cluster_epsilon") cfg.cluster_epsilon = v.get<double>();
      else throw ConfigError("unknown model config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

void save_checkpoint(const LogosModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  ordered_json meta;
  meta["format"] = "logos-checkpoint-1";
  meta["config"] = model_config_to_json(model.config());
  meta["answer_vocab"] = model.answer_vocab().content_words();
  meta["text_vocab"] = model.text_vocab().content_words();
  ordered_json params = ordered_json::array();

  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw IoError("cannot write '" + path.string() + "'");
  std::size_t offset = 0;
  for (const auto& p : model.params()) {
    const Array& v = p->value;
    bin.write(reinterpret_cast<const char*>(v.ptr()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    ordered_json e;
    e["name"] = p->name;
    e["offset"] = offset;
    e["shape"] = v.shape();
    params.push_back(std::move(e));
    offset += v.size();
  }
  meta["params"] = std::move(params);
  if (!bin) throw IoError("failed writing '" + path.string() + "'");

  std::ofstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("cannot write '" + sidecar_path(path).string() + "'");
  side << meta.dump(1) << "\n";
  if (!side) throw IoError("failed writing '" + sidecar_path(path).string() + "'");
}

LogosModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw IoError("cannot open checkpoint sidecar '" + sidecar_path(path).string() + "'");
  json meta;
  try {
    meta = json::parse(side);
  } catch (const json::parse_error& e) {
    throw ParseError(sidecar_path(path).string(), 0, e.what());
  }
  try {
    if (meta.at("format") != "logos-checkpoint-1") throw IntegrityError("unsupported checkpoint format");
    const ModelConfig cfg = model_config_from_json(meta.at("config"));
    LogosModel model(cfg, AnswerVocab::from_words(meta.at("answer_vocab").get<std::vector<std::string>>()),
                     TextVocab::from_words(meta.at("text_vocab").get<std::vector<std::string>>()), 0);

    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::vector<char> raw((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (raw.size() % sizeof(double) != 0) throw IntegrityError("checkpoint size is not a whole number of reals");
    const std::size_t n_values = raw.size() / sizeof(double);

    const json& params = meta.at("params");
    if (params.size() != model.params().size()) {
      throw IntegrityError("checkpoint holds " + std::to_string(params.size()) + " parameters, model expects " +
                           std::to_string(model.params().size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = model.params()[i];
      const std::string name = params[i].at("name").get<std::string>();
      const Shape shape = params[i].at("shape").get<Shape>();
      const std::size_t offset = params[i].at("offset").get<std::size_t>();
      if (name != p.name) throw IntegrityError("checkpoint parameter '" + name + "' where '" + p.name + "' was expected");
      if (shape != p.value.shape()) {
        throw ShapeError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                         p.value.shape_str());
      }
      if (offset + p.value.size() > n_values) throw IntegrityError("checkpoint data truncated at '" + name + "'");
      std::memcpy(p.value.ptr(), raw.data() + offset * sizeof(double), p.value.size() * sizeof(double));
    }
    return model;
  } catch (const json::exception& e) {
    throw IntegrityError("malformed checkpoint sidecar: " + std::string(e.what()));
  }
}

}  // namespace logos
