#include "noduleclip/model/config.hpp"

#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"
#include "noduleclip/model/tokenizer.hpp"

namespace noduleclip::model {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("model config: " + what);
}

std::string mil_kind_name(MilKind k) { return k == MilKind::gated ? "gated" : "plain"; }

MilKind mil_kind_from(const std::string& s) {
  if (s == "plain") return MilKind::plain;
  if (s == "gated") return MilKind::gated;
  throw ValidationError("model config: unknown mil kind '" + s + "'");
}

std::string risk_input_name(RiskInput r) { return r == RiskInput::pooled ? "pooled" : "projected"; }

RiskInput risk_input_from(const std::string& s) {
  if (s == "projected") return RiskInput::projected;
  if (s == "pooled") return RiskInput::pooled;
  throw ValidationError("model config: unknown risk_input '" + s + "'");
}

}  // namespace

void ModelConfig::validate() const {
  require(vision.patch_size > 0 && vision.image_size % vision.patch_size == 0,
          "image_size must be divisible by patch_size");
  require(vision.width > 0 && vision.depth >= 0 && vision.heads > 0 && vision.width % vision.heads == 0,
          "vision width must be divisible by heads");
  require(text.width > 0 && text.depth >= 0 && text.heads > 0 && text.width % text.heads == 0,
          "text width must be divisible by heads");
  require(text.context_length >= 2, "context_length must be at least 2");
  require(text.vocab_size >= 3, "vocab_size must be at least 3");
  require(adapter.rank >= 0, "adapter rank must be non-negative");
  require(adapter.dropout >= 0.0 && adapter.dropout < 1.0, "adapter dropout must lie in [0, 1)");
  require(mil.hidden > 0, "mil hidden size must be positive");
  require(heads.embed_dim == 256, "embed_dim must be 256");
  require(heads.projection_hidden >= 0, "projection_hidden must be non-negative");
  require(temperature_init > 0.0, "temperature_init must be positive");
}

ModelConfig ModelConfig::pretrained_vit_b32() {
  ModelConfig c;
  c.preset = "vit-b32";
  c.vision = {224, 32, 768, 12, 12};
  c.text = {77, 49408, 512, 12, 8};
  c.mil.hidden = 128;
  c.tokenizer.kind = "bpe";
  c.tokenizer.max_merges = 49408 - 512 - 2;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.preset = "toy";
  c.vision = {224, 32, 64, 2, 4};
  c.tokenizer.kind = "toy";
  c.tokenizer.vocab = ToyTokenizer::builtin_vocabulary();
  c.text = {96, static_cast<int>(c.tokenizer.vocab.size()), 64, 2, 4};
  c.mil.hidden = 32;
  return c;
}

std::string to_string(TuningMode mode) {
  switch (mode) {
    case TuningMode::lora: return "lora";
    case TuningMode::probe: return "probe";
    case TuningMode::full: return "full";
  }
  return "lora";
}

TuningMode tuning_mode_from_string(const std::string& s) {
  if (s == "lora") return TuningMode::lora;
  if (s == "probe") return TuningMode::probe;
  if (s == "full") return TuningMode::full;
  throw ValidationError("unknown tuning mode '" + s + "' (expected lora, probe or full)");
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["preset"] = c.preset;
  j["vision"] = {{"image_size", c.vision.image_size}, {"patch_size", c.vision.patch_size}, {"width", c.vision.width},
                 {"depth", c.vision.depth}, {"heads", c.vision.heads}};
  j["text"] = {{"context_length", c.text.context_length}, {"vocab_size", c.text.vocab_size}, {"width", c.text.width},
               {"depth", c.text.depth}, {"heads", c.text.heads}};
  j["adapter"] = {{"rank", c.adapter.rank}, {"scale", c.adapter.scale}, {"dropout", c.adapter.dropout}};
  j["mil"] = {{"kind", mil_kind_name(c.mil.kind)}, {"hidden", c.mil.hidden}};
  j["heads"] = {{"embed_dim", c.heads.embed_dim},
                {"projection_hidden", c.heads.projection_hidden},
                {"projection_bias", c.heads.projection_bias},
                {"risk_input", risk_input_name(c.heads.risk_input)},
                {"enabled", c.heads.enabled}};
  j["tuning"] = to_string(c.tuning);
  j["temperature_init"] = c.temperature_init;
  j["tokenizer"] = {{"kind", c.tokenizer.kind},
                    {"vocab", c.tokenizer.vocab},
                    {"merges_path", c.tokenizer.merges_path},
                    {"max_merges", c.tokenizer.max_merges}};
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.preset = j.at("preset").get<std::string>();
    const auto& v = j.at("vision");
    c.vision = {v.at("image_size").get<int>(), v.at("patch_size").get<int>(), v.at("width").get<int>(),
                v.at("depth").get<int>(), v.at("heads").get<int>()};
    const auto& t = j.at("text");
    c.text = {t.at("context_length").get<int>(), t.at("vocab_size").get<int>(), t.at("width").get<int>(),
              t.at("depth").get<int>(), t.at("heads").get<int>()};
    const auto& a = j.at("adapter");
    c.adapter = {a.at("rank").get<int>(), a.at("scale").get<double>(), a.at("dropout").get<double>()};
    const auto& m = j.at("mil");
    c.mil = {mil_kind_from(m.at("kind").get<std::string>()), m.at("hidden").get<int>()};
    const auto& h = j.at("heads");
    c.heads.embed_dim = h.at("embed_dim").get<int>();
    c.heads.projection_hidden = h.at("projection_hidden").get<int>();
    c.heads.projection_bias = h.at("projection_bias").get<bool>();
    c.heads.risk_input = risk_input_from(h.at("risk_input").get<std::string>());
    c.heads.enabled = h.at("enabled").get<bool>();
    c.tuning = tuning_mode_from_string(j.at("tuning").get<std::string>());
    c.temperature_init = j.at("temperature_init").get<double>();
    const auto& tok = j.at("tokenizer");
    c.tokenizer.kind = tok.at("kind").get<std::string>();
    c.tokenizer.vocab = tok.at("vocab").get<std::vector<std::string>>();
    c.tokenizer.merges_path = tok.at("merges_path").get<std::string>();
    c.tokenizer.max_merges = tok.at("max_merges").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
}

}  // namespace noduleclip::model
