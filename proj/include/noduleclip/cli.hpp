#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noduleclip/model/bundle.hpp"
#include "noduleclip/model/config.hpp"
#include "noduleclip/train.hpp"

// `noduleclip` command: synth, preprocess, split, train, infer, zeroshot, evaluate.
namespace noduleclip::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct SynthSection {
  int n_patients = 56;
  double malignant_rate = 0.4;
  int second_nodule_every = 4;
};

struct PreprocessSection {
  int image_size = preprocess::kModelImageSize;
};

struct SplitSection {
  int folds = 5;
  bool stratified = true;
};

struct ModelSection {
  model::ModelConfig config = model::ModelConfig::toy();
  model::BaseSource base;
};

struct InferSection {
  std::filesystem::path checkpoints;  // directory holding fold_<k> checkpoints
  // "ensemble": every fold scores every nodule, calibrated patient risks are
  // averaged. "out_of_fold": each nodule is scored by the fold that held it out.
  std::string mode = "ensemble";
  int batch_size = 16;
};

struct ZeroShotSection {
  std::filesystem::path checkpoints;
  int fold = -1;  // -1: out-of-fold scoring
  std::string feature = "Nodule Margin";  // annotation-file key
  std::vector<std::string> classes;  // empty: every class of the feature
  double tau = 0.0;                  // <= 0: learned temperature
};

struct EvaluateSection {
  std::filesystem::path predictions;
  int bootstrap_draws = 10000;
  double level = 0.95;
  std::vector<double> recall_targets{0.6, 0.7, 0.8, 0.9};
};

// One JSON document per run. Precedence: command-line flag, then config
// file, then NODULECLIP_SEED (seed only), then the defaults above.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  bool overwrite = false;
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> splits;
  SynthSection synth;
  PreprocessSection preprocess;
  SplitSection split;
  ModelSection model;
  train::TrainConfig train;
  InferSection infer;
  ZeroShotSection zeroshot;
  EvaluateSection evaluate;
};

// Unknown keys anywhere are rejected with their dotted path.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

// Entry point; returns the process exit code.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace noduleclip::cli
