#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "noduleclip/common/error.hpp"
#include "noduleclip/evaluate.hpp"
#include "noduleclip/train.hpp"

namespace noduleclip::train {
namespace {

struct Batch {
  std::vector<preprocess::ViewStack> stacks;
  std::vector<std::string> texts;
  std::vector<int> labels;
};

struct StepId {
  int epoch;
  int step;
};

class BatchFactory {
 public:
  BatchFactory(const dataset::Cohort& cohort, std::vector<std::size_t> train, const TrainConfig& config, int fold,
               int image_size)
      : cohort_(cohort), train_(std::move(train)), config_(config), fold_(fold), image_size_(image_size) {
    std::vector<double> weights(train_.size(), 1.0);
    if (config.upsample_rare_features) {
      std::vector<semantics::SemanticFeatureSet> features;
      for (auto i : train_) features.push_back(cohort[i].features);
      weights = build_sampler(features).weights;
    }
    cumulative_.resize(weights.size());
    std::partial_sum(weights.begin(), weights.end(), cumulative_.begin());
  }

  Batch make(StepId id) const {
    const auto f = static_cast<std::uint64_t>(fold_), e = static_cast<std::uint64_t>(id.epoch),
               s = static_cast<std::uint64_t>(id.step);
    Rng pick(derive_seed(config_.seed, {f, e, s, 0}));
    Batch b;
    for (int slot = 0; slot < config_.batch_size; ++slot) {
      const auto& sample = cohort_[train_[sample_index(cumulative_, pick)]];
      Rng item(derive_seed(config_.seed, {f, e, s, static_cast<std::uint64_t>(slot) + 1}));
      b.stacks.push_back(dataset::augmented_stack(sample, config_.augmentation, item, image_size_));
      b.texts.push_back(dataset::training_text(sample, config_.text_augmentation, item));
      b.labels.push_back(sample.label);
    }
    return b;
  }

 private:
  const dataset::Cohort& cohort_;
  std::vector<std::size_t> train_;
  const TrainConfig& config_;
  int fold_;
  int image_size_;
  std::vector<double> cumulative_;
};

// Produces batches for a fixed step sequence, optionally on a worker thread
// with a bounded queue. Order is fixed, so output does not depend on timing.
class BatchStream {
 public:
  BatchStream(const BatchFactory& factory, std::vector<StepId> steps, int capacity)
      : factory_(factory), steps_(std::move(steps)), capacity_(static_cast<std::size_t>(capacity)) {
    if (capacity_ > 0) worker_ = std::thread([this] { produce(); });
  }
  ~BatchStream() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  Batch next() {
    if (capacity_ == 0) return factory_.make(steps_[consumed_++]);
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    Batch b = std::move(queue_.front());
    queue_.pop_front();
    ++consumed_;
    cv_.notify_all();
    return b;
  }

 private:
  void produce() {
    try {
      for (const auto& id : steps_) {
        Batch b = factory_.make(id);
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return queue_.size() < capacity_ || stop_; });
        if (stop_) return;
        queue_.push_back(std::move(b));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mutex_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  const BatchFactory& factory_;
  std::vector<StepId> steps_;
  std::size_t capacity_;
  std::size_t consumed_ = 0;
  std::deque<Batch> queue_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

using Snapshot = std::map<std::string, ag::Matrix>;

Snapshot snapshot(const model::ModelBundle& bundle) {
  Snapshot s;
  for (const auto* e : bundle.trainable_entries()) s.emplace(e->name, e->var.value());
  return s;
}

void restore(model::ModelBundle& bundle, const Snapshot& s) {
  for (const auto& [name, value] : s) bundle.set_tensor(name, value);
}

std::vector<const preprocess::ViewStack*> eval_stacks(const dataset::Cohort& cohort,
                                                      std::span<const std::size_t> indices) {
  std::vector<const preprocess::ViewStack*> out;
  for (auto i : indices) out.push_back(&cohort[i].eval_stack);
  return out;
}

nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

double patient_auroc(const dataset::Cohort& cohort, std::span<const std::size_t> indices,
                     std::span<const double> probabilities) {
  if (indices.size() != probabilities.size()) throw ValidationError("indices and probabilities differ in length");
  std::vector<infer::NoduleRisk> risks;
  std::map<std::string, int> labels;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = cohort[indices[k]];
    risks.push_back({s.patient_id, s.nodule_id, probabilities[k], -1});
    labels[s.patient_id] = std::max(labels[s.patient_id], s.label);
  }
  std::vector<double> scores;
  std::vector<int> y;
  for (const auto& p : infer::aggregate_by_patient(risks)) {
    scores.push_back(p.probability);
    y.push_back(labels.at(p.patient_id));
  }
  const auto pos = std::count(y.begin(), y.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) return std::nan("");
  return evaluate::auroc(scores, y);
}

FoldResult train_fold(const dataset::Cohort& cohort, const ingest::FoldSplit& split, const TrainConfig& config,
                      const model::ModelConfig& model_config, const model::BaseSource& base, TrainLog* log) {
  config.validate();
  const auto train_idx = cohort.indices_for(split.train_patients);
  const auto val_idx = cohort.indices_for(split.val_patients);
  if (train_idx.empty()) throw ValidationError(fmt::format("fold {} has no training nodules", split.fold_index));
  if (val_idx.empty()) throw ValidationError(fmt::format("fold {} has no validation nodules", split.fold_index));
  for (const auto& p : split.train_patients) {
    if (split.val_patients.contains(p)) throw ValidationError("patient " + p + " is on both sides of a fold");
  }

  FoldResult result;
  result.bundle = std::make_unique<model::ModelBundle>(model_config, base);
  auto& bundle = *result.bundle;
  result.val_indices = val_idx;
  result.frozen_hash_before = bundle.frozen_hash();

  objective::LossWeights weights = config.loss;
  if (config.auto_class_weights) {
    std::vector<int> labels;
    for (auto i : train_idx) labels.push_back(cohort[i].label);
    weights.class_weights = objective::inverse_frequency_weights(labels);
  }

  const auto val_stacks = eval_stacks(cohort, val_idx);
  auto validate_now = [&] {
    return patient_auroc(cohort, val_idx, infer::predict_probabilities(bundle, val_stacks, config.eval_batch));
  };

  const int steps_per_epoch =
      static_cast<int>((train_idx.size() + static_cast<std::size_t>(config.batch_size) - 1) / config.batch_size);
  std::vector<StepId> plan;
  for (int e = 1; e <= config.epochs; ++e) {
    for (int s = 0; s < steps_per_epoch; ++s) plan.push_back({e, s});
  }
  const BatchFactory factory(cohort, train_idx, config, split.fold_index, model_config.vision.image_size);
  BatchStream stream(factory, plan, config.prefetch);
  AdamW optimizer(bundle.trainable_entries(),
                  {config.learning_rate, config.weight_decay, config.beta1, config.beta2, config.adam_eps});

  const double init_auroc = validate_now();
  result.history.push_back({0, std::nan(""), init_auroc});
  if (log) {
    log->write({{"type", "epoch"}, {"fold", split.fold_index}, {"epoch", 0}, {"val_auroc", json_number(init_auroc)}});
  }

  Snapshot best = snapshot(bundle);
  int best_epoch = 0;
  double best_auroc = init_auroc;
  bool have_finite = false;
  int global_step = 0;
  for (int e = 1; e <= config.epochs; ++e) {
    double loss_sum = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s, ++global_step) {
      const Batch batch = stream.next();
      std::vector<const preprocess::ViewStack*> stacks;
      for (const auto& st : batch.stacks) stacks.push_back(&st);
      Rng dropout_rng(derive_seed(config.seed, {static_cast<std::uint64_t>(split.fold_index),
                                                static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(s),
                                                0xd0u << 24}));
      const model::ForwardContext ctx{true, &dropout_rng};
      const auto image = bundle.encode_image(stacks, ctx);
      const auto text = bundle.encode_text(batch.texts, ctx);
      const auto terms = objective::total_loss(image.embedding, text.embedding, image.logits, text.logits,
                                               batch.labels, bundle.log_temperature(), weights);
      const double loss = terms.total.scalar();
      if (!std::isfinite(loss)) {
        throw RuntimeFailure(fmt::format(
            "non-finite loss at fold {} epoch {} step {} (lr {}): total {}, clip {}, ce_image {}, ce_text {}",
            split.fold_index, e, s, config.learning_rate, loss, terms.clip.scalar(), terms.ce_image.scalar(),
            terms.ce_text.scalar()));
      }
      ag::backward(terms.total);
      optimizer.step();
      optimizer.zero_grad();
      loss_sum += loss;
      if (log) {
        log->write({{"type", "step"},
                    {"fold", split.fold_index},
                    {"epoch", e},
                    {"step", global_step},
                    {"loss", loss},
                    {"clip", terms.clip.scalar()},
                    {"ce_image", terms.ce_image.scalar()},
                    {"ce_text", terms.ce_text.scalar()},
                    {"tau", bundle.temperature()},
                    {"lr", config.learning_rate}});
      }
    }
    const double val = validate_now();
    const double mean_loss = loss_sum / steps_per_epoch;
    result.history.push_back({e, mean_loss, val});
    if (log) {
      log->write({{"type", "epoch"},
                  {"fold", split.fold_index},
                  {"epoch", e},
                  {"mean_loss", mean_loss},
                  {"tau", bundle.temperature()},
                  {"val_auroc", json_number(val)}});
    }
    spdlog::info("fold {} epoch {}/{}: loss {:.4f}, val AUROC {:.4f}", split.fold_index, e, config.epochs, mean_loss,
                 val);
    const bool better = std::isfinite(val) && (!have_finite || val >= best_auroc);
    if (better || (!have_finite && !std::isfinite(val))) {
      // Without any finite validation value the latest epoch wins.
      best = snapshot(bundle);
      best_epoch = e;
      best_auroc = val;
      have_finite = have_finite || std::isfinite(val);
    }
  }
  restore(bundle, best);
  result.frozen_hash_after = bundle.frozen_hash();
  if (result.frozen_hash_after != result.frozen_hash_before) {
    throw RuntimeFailure("frozen base weights changed during training");
  }
  result.val_probabilities = infer::predict_probabilities(bundle, val_stacks, config.eval_batch);

  auto& meta = result.meta;
  meta.fold = split.fold_index;
  meta.epoch = best_epoch;
  meta.val_auroc = best_auroc;
  meta.rng_state = nlohmann::json{{"seed", config.seed}, {"fold", split.fold_index}, {"epochs_done", config.epochs}}
                       .dump();
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : result.history) {
    history.push_back({{"epoch", h.epoch}, {"mean_loss", json_number(h.mean_loss)}, {"val_auroc", json_number(h.val_auroc)}});
  }
  meta.extra["train_config"] = to_json(config);
  meta.extra["history"] = history;
  meta.extra["train_patients"] = split.train_patients;
  meta.extra["val_patients"] = split.val_patients;
  meta.extra["class_weights"] = weights.class_weights;
  if (log) {
    log->write({{"type", "fold"},
                {"fold", split.fold_index},
                {"best_epoch", best_epoch},
                {"val_auroc", json_number(best_auroc)}});
  }
  return result;
}

nlohmann::json CvSummary::to_json() const {
  nlohmann::json f = nlohmann::json::array();
  for (const auto& s : folds) {
    f.push_back({{"fold", s.fold},
                 {"best_epoch", s.best_epoch},
                 {"val_auroc", json_number(s.val_auroc)},
                 {"train_auroc", json_number(s.train_auroc)},
                 {"checkpoint", s.checkpoint.filename().string()},
                 {"calibrated", s.calibrated},
                 {"calibrator", s.calibrator.to_json()}});
  }
  return {{"folds", f},
          {"mean_val_auroc", json_number(mean_val_auroc)},
          {"std_val_auroc", json_number(std_val_auroc)},
          {"mean_train_auroc", json_number(mean_train_auroc)}};
}

CvSummary run_cv(const dataset::Cohort& cohort, const std::vector<ingest::FoldSplit>& folds,
                 const TrainConfig& config, const model::ModelConfig& model_config, const model::BaseSource& base,
                 const std::filesystem::path& out_dir, TrainLog* log) {
  if (folds.empty()) throw ValidationError("cross-validation needs at least one fold");
  std::filesystem::create_directories(out_dir);
  CvSummary summary;
  for (const auto& split : folds) {
    auto result = train_fold(cohort, split, config, model_config, base, log);

    FoldSummary fs;
    fs.fold = split.fold_index;
    fs.best_epoch = result.meta.epoch;
    fs.val_auroc = result.meta.val_auroc;

    // Patient-level calibration on this fold's validation patients.
    std::vector<infer::NoduleRisk> risks;
    std::map<std::string, int> labels;
    for (std::size_t k = 0; k < result.val_indices.size(); ++k) {
      const auto& s = cohort[result.val_indices[k]];
      risks.push_back({s.patient_id, s.nodule_id, result.val_probabilities[k], split.fold_index});
      labels[s.patient_id] = std::max(labels[s.patient_id], s.label);
    }
    std::vector<double> p;
    std::vector<int> y;
    for (const auto& r : infer::aggregate_by_patient(risks)) {
      p.push_back(r.probability);
      y.push_back(labels.at(r.patient_id));
    }
    const auto pos = std::count(y.begin(), y.end(), 1);
    fs.calibrated = pos > 0 && pos < static_cast<std::ptrdiff_t>(y.size());
    if (fs.calibrated) fs.calibrator = infer::fit_beta_calibration(p, y);
    result.meta.extra["calibrator"] = fs.calibrator.to_json();
    result.meta.extra["calibrated"] = fs.calibrated;

    const auto train_idx = cohort.indices_for(split.train_patients);
    fs.train_auroc = patient_auroc(
        cohort, train_idx, infer::predict_probabilities(*result.bundle, eval_stacks(cohort, train_idx), config.eval_batch));
    result.meta.extra["train_auroc"] = json_number(fs.train_auroc);

    fs.checkpoint = out_dir / fmt::format("fold_{}", split.fold_index);
    model::save_checkpoint(*result.bundle, result.meta, fs.checkpoint);
    spdlog::info("fold {}: best epoch {}, val AUROC {:.4f}, train AUROC {:.4f}", fs.fold, fs.best_epoch, fs.val_auroc,
                 fs.train_auroc);
    summary.folds.push_back(fs);
  }

  std::vector<double> vals;
  double train_sum = 0.0;
  for (const auto& f : summary.folds) {
    vals.push_back(f.val_auroc);
    train_sum += f.train_auroc;
  }
  const double n = static_cast<double>(vals.size());
  summary.mean_val_auroc = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
  summary.mean_train_auroc = train_sum / n;
  double ss = 0.0;
  for (double v : vals) ss += (v - summary.mean_val_auroc) * (v - summary.mean_val_auroc);
  summary.std_val_auroc = vals.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

  if (log) {
    log->write({{"type", "cv_summary"},
                {"mean_val_auroc", json_number(summary.mean_val_auroc)},
                {"std_val_auroc", json_number(summary.std_val_auroc)},
                {"mean_train_auroc", json_number(summary.mean_train_auroc)}});
  }
  std::ofstream os(out_dir / "cv_summary.json", std::ios::trunc);
  if (!os) throw RuntimeFailure("cannot write " + (out_dir / "cv_summary.json").string());
  os << summary.to_json().dump(2) << '\n';
  spdlog::info("cross-validation: val AUROC {:.4f} +/- {:.4f}", summary.mean_val_auroc, summary.std_val_auroc);
  return summary;
}

infer::BetaCalibrator checkpoint_calibrator(const model::CheckpointMeta& meta) {
  if (!meta.extra.contains("calibrator")) return {};
  return infer::BetaCalibrator::from_json(meta.extra.at("calibrator"));
}

}  // namespace noduleclip::train
