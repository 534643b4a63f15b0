#include <cmath>

#include "noduleclip/common/error.hpp"
#include "noduleclip/common/json_util.hpp"
#include "noduleclip/train.hpp"

namespace noduleclip::train {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string("train.") + name + " must be positive");
  };
  positive(learning_rate, "learning_rate");
  positive(adam_eps, "adam_eps");
  if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be non-negative");
  if (batch_size < 1) throw ValidationError("train.batch_size must be positive");
  if (epochs < 0) throw ValidationError("train.epochs must be non-negative");
  if (folds < 2) throw ValidationError("train.folds must be at least 2");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValidationError("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("train.beta2 must lie in [0, 1)");
  if (eval_batch < 1) throw ValidationError("train.eval_batch must be positive");
  if (prefetch < 0) throw ValidationError("train.prefetch must be non-negative");
  loss.validate();
  augmentation.validate();
  text_augmentation.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  const auto& a = c.augmentation;
  const auto& t = c.text_augmentation;
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"folds", c.folds},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"loss",
           {{"clip", c.loss.clip},
            {"ce_image", c.loss.ce_image},
            {"ce_text", c.loss.ce_text},
            {"class_weights", c.loss.class_weights}}},
          {"auto_class_weights", c.auto_class_weights},
          {"upsample_rare_features", c.upsample_rare_features},
          {"augmentation",
           {{"jitter_mm", a.jitter_mm},
            {"flip_prob", a.flip_prob},
            {"max_rotation_deg", a.max_rotation_deg},
            {"noise_mean", a.noise_mean},
            {"noise_std", a.noise_std},
            {"contrast_exponent_range", a.contrast_exponent_range}}},
          {"text_augmentation",
           {{"synonym_prob", t.synonym_prob}, {"crop_prob", t.crop_prob}, {"min_keep_ratio", t.min_keep_ratio}}},
          {"eval_batch", c.eval_batch},
          {"prefetch", c.prefetch}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string w = "train";
  require_known_keys(j,
                     {"learning_rate", "weight_decay", "batch_size", "epochs", "folds", "beta1", "beta2", "adam_eps",
                      "seed", "loss", "auto_class_weights", "upsample_rare_features", "augmentation",
                      "text_augmentation", "eval_batch", "prefetch"},
                     w);
  TrainConfig c;
  read_optional(j, "learning_rate", c.learning_rate, w);
  read_optional(j, "weight_decay", c.weight_decay, w);
  read_optional(j, "batch_size", c.batch_size, w);
  read_optional(j, "epochs", c.epochs, w);
  read_optional(j, "folds", c.folds, w);
  read_optional(j, "beta1", c.beta1, w);
  read_optional(j, "beta2", c.beta2, w);
  read_optional(j, "adam_eps", c.adam_eps, w);
  read_optional(j, "seed", c.seed, w);
  read_optional(j, "auto_class_weights", c.auto_class_weights, w);
  read_optional(j, "upsample_rare_features", c.upsample_rare_features, w);
  read_optional(j, "eval_batch", c.eval_batch, w);
  read_optional(j, "prefetch", c.prefetch, w);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    const std::string lw = w + ".loss";
    require_known_keys(l, {"clip", "ce_image", "ce_text", "class_weights"}, lw);
    read_optional(l, "clip", c.loss.clip, lw);
    read_optional(l, "ce_image", c.loss.ce_image, lw);
    read_optional(l, "ce_text", c.loss.ce_text, lw);
    read_optional(l, "class_weights", c.loss.class_weights, lw);
  }
  if (j.contains("augmentation")) {
    const auto& a = j["augmentation"];
    const std::string aw = w + ".augmentation";
    require_known_keys(a, {"jitter_mm", "flip_prob", "max_rotation_deg", "noise_mean", "noise_std",
                           "contrast_exponent_range"},
                       aw);
    read_optional(a, "jitter_mm", c.augmentation.jitter_mm, aw);
    read_optional(a, "flip_prob", c.augmentation.flip_prob, aw);
    read_optional(a, "max_rotation_deg", c.augmentation.max_rotation_deg, aw);
    read_optional(a, "noise_mean", c.augmentation.noise_mean, aw);
    read_optional(a, "noise_std", c.augmentation.noise_std, aw);
    read_optional(a, "contrast_exponent_range", c.augmentation.contrast_exponent_range, aw);
  }
  if (j.contains("text_augmentation")) {
    const auto& t = j["text_augmentation"];
    const std::string tw = w + ".text_augmentation";
    require_known_keys(t, {"synonym_prob", "crop_prob", "min_keep_ratio"}, tw);
    read_optional(t, "synonym_prob", c.text_augmentation.synonym_prob, tw);
    read_optional(t, "crop_prob", c.text_augmentation.crop_prob, tw);
    read_optional(t, "min_keep_ratio", c.text_augmentation.min_keep_ratio, tw);
  }
  c.validate();
  return c;
}

}  // namespace noduleclip::train
