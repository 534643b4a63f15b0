#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noduleclip/data_ingest.hpp"
#include "noduleclip/dataset.hpp"
#include "noduleclip/infer.hpp"
#include "noduleclip/model/bundle.hpp"
#include "noduleclip/objective.hpp"
#include "noduleclip/preprocess/augment.hpp"
#include "noduleclip/semantics/text_augment.hpp"

namespace noduleclip::train {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.1;
  int batch_size = 16;
  int epochs = 30;
  int folds = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  objective::LossWeights loss;
  // Inverse-frequency class weights from each fold's training labels;
  // otherwise loss.class_weights is used as given.
  bool auto_class_weights = true;
  bool upsample_rare_features = true;
  preprocess::AugmentationConfig augmentation;
  semantics::TextAugmentConfig text_augmentation;
  int eval_batch = 16;
  // Batches prepared ahead on a worker thread (0 = inline). Batch contents
  // depend only on (seed, fold, epoch, step, slot), so results are identical.
  int prefetch = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct SamplerWeights {
  std::vector<double> weights;  // mean 1
};

// weight(i) = mean over the present feature values of nodule i of
// 1 / count(value in cohort), renormalised to mean 1. Every nodule needs at
// least one present feature.
SamplerWeights build_sampler(std::span<const semantics::SemanticFeatureSet> cohort);

// Index drawn with probability proportional to weights (cumulative search).
std::size_t sample_index(std::span<const double> cumulative, Rng& rng);

// Decoupled weight decay (p <- p - lr * wd * p) followed by the Adam update
// with bias correction. Biases, layer-norm parameters and the temperature are
// not decayed.
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(const std::vector<const model::ParamEntry*>& params, Options options);

  // Parameters without a gradient this step are left untouched.
  void step();
  void zero_grad();
  int steps() const { return t_; }
  const Options& options() const { return options_; }

  static bool decays(const std::string& name);

 private:
  struct Slot {
    ag::Var var;
    ag::Matrix m, v;
    bool decay = true;
  };
  std::vector<Slot> slots_;
  Options options_;
  int t_ = 0;
};

// Newline-delimited JSON records, flushed per line.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::filesystem::path& path);
  void write(const nlohmann::json& record);
  bool enabled() const { return out_.is_open(); }

 private:
  std::ofstream out_;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_auroc = 0.0;  // NaN when validation has a single class
};

struct FoldResult {
  std::unique_ptr<model::ModelBundle> bundle;  // weights of the selected epoch
  model::CheckpointMeta meta;
  std::vector<EpochRecord> history;
  std::vector<std::size_t> val_indices;
  std::vector<double> val_probabilities;  // nodule level, selected epoch
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

// Patient-level (max over nodules) AUROC of `probabilities` for the samples
// at `indices`; NaN when only one class is present.
double patient_auroc(const dataset::Cohort& cohort, std::span<const std::size_t> indices,
                     std::span<const double> probabilities);

// Trains adapters, MIL, projections, heads and temperature on the split's
// training patients. Each epoch has ceil(N / batch_size) steps of batches
// drawn with replacement by sampler weight. Validation AUROC is computed
// after every epoch; the best epoch (ties to the later one) is kept, or the
// last epoch when validation is single-class. Zero epochs return the
// initialisation. A non-finite loss throws RuntimeFailure.
FoldResult train_fold(const dataset::Cohort& cohort, const ingest::FoldSplit& split, const TrainConfig& config,
                      const model::ModelConfig& model_config, const model::BaseSource& base, TrainLog* log = nullptr);

struct FoldSummary {
  int fold = 0;
  int best_epoch = 0;
  double val_auroc = 0.0;
  double train_auroc = 0.0;
  std::filesystem::path checkpoint;
  infer::BetaCalibrator calibrator;
  bool calibrated = false;  // false: identity map (single-class validation)
};

struct CvSummary {
  std::vector<FoldSummary> folds;
  double mean_val_auroc = 0.0;
  double std_val_auroc = 0.0;  // sample standard deviation (n - 1)
  double mean_train_auroc = 0.0;

  nlohmann::json to_json() const;
};

// One train_fold per split; each checkpoint (out_dir/fold_<k>) carries the
// fold's beta calibrator, fitted on its validation patients, in
// meta.extra["calibrator"]. Writes out_dir/cv_summary.json.
CvSummary run_cv(const dataset::Cohort& cohort, const std::vector<ingest::FoldSplit>& folds,
                 const TrainConfig& config, const model::ModelConfig& model_config, const model::BaseSource& base,
                 const std::filesystem::path& out_dir, TrainLog* log = nullptr);

// Calibrator stored in a checkpoint, identity when absent.
infer::BetaCalibrator checkpoint_calibrator(const model::CheckpointMeta& meta);

}  // namespace noduleclip::train
