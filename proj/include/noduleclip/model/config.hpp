#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace noduleclip::model {

struct VisionConfig {
  int image_size = 224;
  int patch_size = 32;
  int width = 64;
  int depth = 2;
  int heads = 4;

  int grid() const { return image_size / patch_size; }
  int tokens() const { return grid() * grid() + 1; }
  int patch_dim() const { return 3 * patch_size * patch_size; }
};

struct TextConfig {
  int context_length = 96;
  int vocab_size = 0;
  int width = 64;
  int depth = 2;
  int heads = 4;
};

struct AdapterConfig {
  int rank = 2;  // 0 disables adapters
  double scale = 1.0;
  double dropout = 0.25;
};

enum class MilKind { plain, gated };

struct MilConfig {
  MilKind kind = MilKind::plain;
  int hidden = 128;
};

enum class RiskInput { projected, pooled };

struct HeadConfig {
  int embed_dim = 256;
  int projection_hidden = 0;  // 0 = single linear map
  bool projection_bias = false;
  RiskInput risk_input = RiskInput::projected;
  // Off only for parameter counting of a bare encoder pair.
  bool enabled = true;
};

// lora: adapters + heads train; probe: heads only; full: everything.
enum class TuningMode { lora, probe, full };

struct TokenizerConfig {
  std::string kind = "toy";           // "toy" or "bpe"
  std::vector<std::string> vocab;     // toy vocabulary, index = id
  std::string merges_path;            // bpe merges file
  int max_merges = -1;                // -1 keeps every merge
};

struct ModelConfig {
  std::string preset = "toy";
  VisionConfig vision;
  TextConfig text;
  AdapterConfig adapter;
  MilConfig mil;
  HeadConfig heads;
  TuningMode tuning = TuningMode::lora;
  double temperature_init = 0.03;
  TokenizerConfig tokenizer;

  void validate() const;

  // ViT-B/32 layout of the public image-text checkpoint.
  static ModelConfig pretrained_vit_b32();
  // Small encoders for CPU-scale experiments and tests; vocabulary from the
  // built-in toy tokenizer.
  static ModelConfig toy();
};

std::string to_string(TuningMode mode);
TuningMode tuning_mode_from_string(const std::string& s);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace noduleclip::model
