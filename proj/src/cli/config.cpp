#include "noduleclip/cli.hpp"
#include "noduleclip/common/error.hpp"
#include "noduleclip/common/json_util.hpp"

namespace noduleclip::cli {
namespace {

std::optional<std::filesystem::path> optional_path(const nlohmann::json& j, const char* key, const std::string& w) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  std::string s;
  read_optional(j, key, s, w);
  return std::filesystem::path(s);
}

void read_path(const nlohmann::json& j, const char* key, std::filesystem::path& out, const std::string& w) {
  if (auto p = optional_path(j, key, w)) out = *p;
}

model::ModelConfig preset(const std::string& name) {
  if (name == "toy") return model::ModelConfig::toy();
  if (name == "vit-b32") return model::ModelConfig::pretrained_vit_b32();
  throw ValidationError("model.preset: unknown preset '" + name + "' (toy, vit-b32)");
}

nlohmann::json path_or_null(const std::optional<std::filesystem::path>& p) {
  return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"seed", "run_dir", "overwrite", "manifest", "cache_dir", "splits", "synth", "preprocess",
                      "split", "model", "train", "infer", "zeroshot", "evaluate"},
                     "config");
  RunConfig c;
  const std::string w = "config";
  read_optional(j, "seed", c.seed, w);
  read_path(j, "run_dir", c.run_dir, w);
  read_optional(j, "overwrite", c.overwrite, w);
  read_path(j, "manifest", c.manifest, w);
  c.cache_dir = optional_path(j, "cache_dir", w);
  c.splits = optional_path(j, "splits", w);

  if (j.contains("synth")) {
    const auto& s = j["synth"];
    require_known_keys(s, {"n_patients", "malignant_rate", "second_nodule_every"}, "synth");
    read_optional(s, "n_patients", c.synth.n_patients, "synth");
    read_optional(s, "malignant_rate", c.synth.malignant_rate, "synth");
    read_optional(s, "second_nodule_every", c.synth.second_nodule_every, "synth");
  }
  if (j.contains("preprocess")) {
    const auto& p = j["preprocess"];
    require_known_keys(p, {"image_size"}, "preprocess");
    read_optional(p, "image_size", c.preprocess.image_size, "preprocess");
  }
  if (j.contains("split")) {
    const auto& s = j["split"];
    require_known_keys(s, {"folds", "stratified"}, "split");
    read_optional(s, "folds", c.split.folds, "split");
    read_optional(s, "stratified", c.split.stratified, "split");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    require_known_keys(m, {"preset", "config", "base"}, "model");
    if (m.contains("config")) {
      if (m.contains("preset")) throw ValidationError("model: give either 'preset' or 'config', not both");
      try {
        c.model.config = model::model_config_from_json(m["config"]);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model.config: ") + e.what());
      }
    } else if (m.contains("preset")) {
      std::string name;
      read_optional(m, "preset", name, "model");
      c.model.config = preset(name);
    }
    if (m.contains("base")) {
      const auto& b = m["base"];
      require_known_keys(b, {"kind", "seed", "archive_path"}, "model.base");
      read_optional(b, "kind", c.model.base.kind, "model.base");
      read_optional(b, "seed", c.model.base.seed, "model.base");
      read_optional(b, "archive_path", c.model.base.archive_path, "model.base");
    }
  }
  // The training seed follows the global seed unless set explicitly.
  const bool train_seed = j.contains("train") && j["train"].contains("seed");
  if (j.contains("train")) c.train = train::train_config_from_json(j["train"]);
  if (!train_seed) c.train.seed = c.seed;
  if (j.contains("infer")) {
    const auto& s = j["infer"];
    require_known_keys(s, {"checkpoints", "mode", "batch_size"}, "infer");
    read_path(s, "checkpoints", c.infer.checkpoints, "infer");
    read_optional(s, "mode", c.infer.mode, "infer");
    read_optional(s, "batch_size", c.infer.batch_size, "infer");
  }
  if (j.contains("zeroshot")) {
    const auto& s = j["zeroshot"];
    require_known_keys(s, {"checkpoints", "fold", "feature", "classes", "tau"}, "zeroshot");
    read_path(s, "checkpoints", c.zeroshot.checkpoints, "zeroshot");
    read_optional(s, "fold", c.zeroshot.fold, "zeroshot");
    read_optional(s, "feature", c.zeroshot.feature, "zeroshot");
    read_optional(s, "classes", c.zeroshot.classes, "zeroshot");
    read_optional(s, "tau", c.zeroshot.tau, "zeroshot");
  }
  if (j.contains("evaluate")) {
    const auto& s = j["evaluate"];
    require_known_keys(s, {"predictions", "bootstrap_draws", "level", "recall_targets"}, "evaluate");
    read_path(s, "predictions", c.evaluate.predictions, "evaluate");
    read_optional(s, "bootstrap_draws", c.evaluate.bootstrap_draws, "evaluate");
    read_optional(s, "level", c.evaluate.level, "evaluate");
    read_optional(s, "recall_targets", c.evaluate.recall_targets, "evaluate");
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"run_dir", c.run_dir.string()},
          {"overwrite", c.overwrite},
          {"manifest", c.manifest.string()},
          {"cache_dir", path_or_null(c.cache_dir)},
          {"splits", path_or_null(c.splits)},
          {"synth",
           {{"n_patients", c.synth.n_patients},
            {"malignant_rate", c.synth.malignant_rate},
            {"second_nodule_every", c.synth.second_nodule_every}}},
          {"preprocess", {{"image_size", c.preprocess.image_size}}},
          {"split", {{"folds", c.split.folds}, {"stratified", c.split.stratified}}},
          {"model",
           {{"config", model::to_json(c.model.config)},
            {"base",
             {{"kind", c.model.base.kind}, {"seed", c.model.base.seed}, {"archive_path", c.model.base.archive_path}}}}},
          {"train", train::to_json(c.train)},
          {"infer",
           {{"checkpoints", c.infer.checkpoints.string()}, {"mode", c.infer.mode}, {"batch_size", c.infer.batch_size}}},
          {"zeroshot",
           {{"checkpoints", c.zeroshot.checkpoints.string()},
            {"fold", c.zeroshot.fold},
            {"feature", c.zeroshot.feature},
            {"classes", c.zeroshot.classes},
            {"tau", c.zeroshot.tau}}},
          {"evaluate",
           {{"predictions", c.evaluate.predictions.string()},
            {"bootstrap_draws", c.evaluate.bootstrap_draws},
            {"level", c.evaluate.level},
            {"recall_targets", c.evaluate.recall_targets}}}};
}

}  // namespace noduleclip::cli
