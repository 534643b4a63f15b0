#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noduleclip/common/tensor_archive.hpp"
#include "noduleclip/model/config.hpp"
#include "noduleclip/model/layers.hpp"
#include "noduleclip/model/tokenizer.hpp"
#include "noduleclip/preprocess/preprocess.hpp"

namespace noduleclip::model {

// Patch rows for a batch of view stacks: one row per (nodule, view, patch),
// laid out channel-major within the patch to match a conv patch embedding.
ag::Matrix extract_patches(const std::vector<const preprocess::ViewStack*>& stacks, int patch_size);

struct VisionEncoder {
  ag::Var conv1;  // width x (3 * patch * patch), no bias
  ag::Var class_embedding;
  ag::Var positional_embedding;
  LayerNorm ln_pre;
  Transformer transformer;
  LayerNorm ln_post;
  VisionConfig config;

  // patches: (images * grid^2) x patch_dim -> images x width class features.
  ag::Var forward(const ag::Matrix& patches, Eigen::Index images, const ForwardContext& ctx) const;
  // Same, starting from embedded patch tokens (images * grid^2) x width.
  ag::Var forward_tokens(const ag::Var& tokens, Eigen::Index images, const ForwardContext& ctx) const;
};

struct TextEncoder {
  ag::Var token_embedding;
  ag::Var positional_embedding;
  Transformer transformer;
  LayerNorm ln_final;
  TextConfig config;

  // Causal encoder; each sequence contributes the feature at its final (end) token.
  ag::Var forward(const std::vector<std::vector<int>>& sequences, const ForwardContext& ctx) const;
};

// Keeps the first context_length - 1 ids and the final (end) id of overlong sequences.
std::vector<int> truncate_tokens(const std::vector<int>& ids, int context_length);

struct MilOutput {
  ag::Var pooled;   // bags x width
  ag::Var weights;  // (bags * views) x 1, each bag on the simplex
};

// score_i = w^T tanh(V h_i + b) (times sigmoid(U h_i + c) when gated),
// weights = softmax over the bag, pooled = sum weight_i h_i.
struct MilAttention {
  Linear attention_v;
  Linear attention_u;  // gated only
  Linear attention_w;
  MilKind kind = MilKind::plain;

  MilOutput forward(const ag::Var& features, Eigen::Index bag_size, const ForwardContext& ctx) const;
};

struct ProjectionHead {
  Linear hidden;  // optional
  Linear out;

  ag::Var forward(const ag::Var& x, const ForwardContext& ctx) const;
};

struct ImageOutput {
  ag::Var view_features;  // (nodules * 9) x width
  MilOutput mil;
  ag::Var embedding;      // nodules x 256
  ag::Var logits;         // nodules x 2
};

struct TextOutput {
  ag::Var features;
  ag::Var embedding;
  ag::Var logits;
};

struct ParameterCounts {
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
  std::map<ParamGroup, std::int64_t> by_group;

  std::int64_t total() const { return trainable + frozen; }
  double trainable_fraction() const { return static_cast<double>(trainable) / static_cast<double>(total()); }
};

// Where frozen base weights come from, recorded so checkpoints can rebuild them.
struct BaseSource {
  std::string kind = "random";  // "random" or "archive"
  std::uint64_t seed = 0;
  std::string archive_path;
};

class ModelBundle {
 public:
  // layout_only records shapes without allocating (parameter counting only).
  ModelBundle(ModelConfig config, BaseSource base, bool layout_only = false);

  const ModelConfig& config() const { return config_; }
  const BaseSource& base_source() const { return base_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  bool layout_only() const { return !store_.materialized(); }

  const std::vector<ParamEntry>& parameters() const { return store_.entries(); }
  std::vector<ag::Var> trainable_parameters() const;
  std::vector<const ParamEntry*> trainable_entries() const;
  bool is_trainable(ParamGroup group) const;
  ParameterCounts count_parameters() const;
  // Order-sensitive hash of every frozen tensor's bytes.
  std::uint64_t frozen_hash() const;

  ImageOutput encode_image(const std::vector<const preprocess::ViewStack*>& stacks, const ForwardContext& ctx) const;
  // Lower-level pieces of encode_image.
  ag::Var encode_views(const std::vector<const preprocess::ViewStack*>& stacks, const ForwardContext& ctx) const;
  MilOutput mil_aggregate(const ag::Var& view_features, const ForwardContext& ctx) const;
  ag::Var project_image(const ag::Var& pooled, const ForwardContext& ctx) const;
  ag::Var predict_image_risk(const ag::Var& pooled, const ag::Var& embedding, const ForwardContext& ctx) const;

  TextOutput encode_text(const std::vector<std::vector<int>>& sequences, const ForwardContext& ctx) const;
  TextOutput encode_text(const std::vector<std::string>& texts, const ForwardContext& ctx) const;
  ag::Var encode_text_features(const std::vector<std::vector<int>>& sequences, const ForwardContext& ctx) const;
  ag::Var project_text(const ag::Var& features, const ForwardContext& ctx) const;
  ag::Var predict_text_risk(const ag::Var& features, const ag::Var& embedding, const ForwardContext& ctx) const;

  const ag::Var& log_temperature() const { return log_temperature_; }
  double temperature() const;

  const VisionEncoder& vision() const { return vision_; }
  const TextEncoder& text() const { return text_; }
  const MilAttention& mil() const { return mil_; }
  const Linear& image_head() const { return image_head_; }
  const Linear& text_head() const { return text_head_; }
  const ProjectionHead& image_projection() const { return image_projection_; }
  const ProjectionHead& text_projection() const { return text_projection_; }

  // Overwrites frozen base tensors from a float32/float64 archive; every base
  // tensor must be present with a matching shape.
  void load_base_weights(const TensorArchive& archive);
  void set_tensor(const std::string& name, const ag::Matrix& value);

 private:
  void require_heads() const;

  ModelConfig config_;
  BaseSource base_;
  ParamStore store_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  VisionEncoder vision_;
  TextEncoder text_;
  MilAttention mil_;
  ProjectionHead image_projection_;
  ProjectionHead text_projection_;
  Linear image_head_;
  Linear text_head_;
  ag::Var log_temperature_;
};

// Checkpoint = <stem>.ncta with every trainable tensor (float64, lossless) and
// <stem>.json with the model config, base source and caller metadata.
struct CheckpointMeta {
  int fold = -1;
  int epoch = -1;
  double val_auroc = 0.0;
  std::string rng_state;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const ModelBundle& bundle, const CheckpointMeta& meta, const std::filesystem::path& stem);
struct LoadedCheckpoint {
  std::unique_ptr<ModelBundle> bundle;
  CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace noduleclip::model
