#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "noduleclip/model/bundle.hpp"
#include "noduleclip/semantics/prompts.hpp"

// Calibrated patient-level risk and zero-shot semantic-feature scoring.
namespace noduleclip::infer {

inline constexpr double kCalibrationEpsilon = 1e-6;

// p -> sigmoid(a ln p - b ln(1 - p) + c), with p clamped to [eps, 1 - eps].
struct BetaCalibrator {
  double a = 1.0;
  double b = 1.0;
  double c = 0.0;

  double apply(double p) const;
  std::vector<double> apply(std::span<const double> p) const;

  nlohmann::json to_json() const;
  static BetaCalibrator from_json(const nlohmann::json& j);
};

// Maximum-likelihood logistic fit on (ln p, -ln(1 - p)) by Newton's method.
// A negative a (or b) is projected to 0 and the remaining coefficients refit.
// Throws ValidationError unless both classes are present.
BetaCalibrator fit_beta_calibration(std::span<const double> probs, std::span<const int> labels);

struct NoduleRisk {
  std::string patient_id;
  std::string nodule_id;
  double probability = 0.0;
  int fold = -1;
};

struct PatientRisk {
  std::string patient_id;
  double probability = 0.0;
};

// Max over one patient's nodules. Throws on an empty list or mixed patients.
PatientRisk patient_aggregate(std::span<const NoduleRisk> risks);
// Groups by patient and aggregates each; output sorted by patient id.
std::vector<PatientRisk> aggregate_by_patient(std::span<const NoduleRisk> risks);

// Per-patient mean across folds. Every fold must cover the same patients.
std::vector<PatientRisk> ensemble(const std::vector<std::vector<PatientRisk>>& per_fold);

// Image-branch malignancy probability (softmax class 1) per stack, in
// batches of `batch_size`, without recording a graph.
std::vector<double> predict_probabilities(const model::ModelBundle& bundle,
                                          const std::vector<const preprocess::ViewStack*>& stacks,
                                          int batch_size = 16);

NoduleRisk infer_nodule(const model::ModelBundle& bundle, const preprocess::ViewStack& stack,
                        const std::string& patient_id, const std::string& nodule_id, int fold = -1);

// MIL-pooled projected image embeddings, one row per stack, L2-normalised.
ag::Matrix image_embeddings(const model::ModelBundle& bundle, const std::vector<const preprocess::ViewStack*>& stacks,
                            int batch_size = 16);
// Projected text embeddings of the candidate sentences, L2-normalised rows.
ag::Matrix text_embeddings(const model::ModelBundle& bundle, const std::vector<std::string>& sentences);

// softmax_j(cos(image, text_j) / tau). Throws with fewer than 2 candidates.
std::vector<double> zero_shot_scores(const Eigen::RowVectorXd& image_embedding, const ag::Matrix& candidates,
                                     double tau);

struct ZeroShotRow {
  std::string patient_id;
  std::string nodule_id;
  std::string feature;
  std::string cls;
  double probability = 0.0;
};

// Every query against every stack. tau <= 0 selects the checkpoint's learned
// temperature.
std::vector<ZeroShotRow> zero_shot(const model::ModelBundle& bundle,
                                   const std::vector<const preprocess::ViewStack*>& stacks,
                                   const std::vector<std::pair<std::string, std::string>>& ids,
                                   const std::vector<semantics::PromptSet>& queries, double tau = 0.0);

// CSV layouts: patient_id,nodule_id,fold,probability / patient_id,probability /
// nodule_id,feature,class,probability (zero-shot rows also carry patient_id first).
void write_nodule_risks(std::span<const NoduleRisk> risks, const std::filesystem::path& path);
std::vector<NoduleRisk> read_nodule_risks(const std::filesystem::path& path);
void write_patient_risks(std::span<const PatientRisk> risks, const std::filesystem::path& path);
std::vector<PatientRisk> read_patient_risks(const std::filesystem::path& path);
void write_zero_shot(std::span<const ZeroShotRow> rows, const std::filesystem::path& path);

}  // namespace noduleclip::infer
