#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <regex>
#include <set>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "noduleclip/cli.hpp"
#include "noduleclip/common/csv.hpp"
#include "noduleclip/common/error.hpp"
#include "noduleclip/common/random.hpp"
#include "noduleclip/dataset.hpp"
#include "noduleclip/evaluate.hpp"
#include "noduleclip/infer.hpp"
#include "noduleclip/preprocess/view_cache.hpp"
#include "noduleclip/semantics/report.hpp"
#include "noduleclip/synth.hpp"

namespace fs = std::filesystem;

namespace noduleclip::cli {
namespace {

// Artifacts of one run, listed in <run_dir>/manifest.txt on completion. The
// manifest's presence marks the directory as finished.
class RunDir {
 public:
  RunDir(const RunConfig& config, const char* command, bool reusable = false) : config_(config) {
    if (config.run_dir.empty()) throw ValidationError(std::string(command) + ": run_dir is required");
    root_ = config.run_dir;
    if (fs::exists(root_ / "manifest.txt") && !config.overwrite && !reusable) {
      throw ValidationError("run directory " + root_.string() +
                            " is already complete; pass --overwrite or choose a new directory");
    }
    fs::create_directories(root_);
    fs::remove(root_ / "manifest.txt");
  }

  const fs::path& root() const { return root_; }
  fs::path path(const fs::path& rel) const { return root_ / rel; }
  void add(const fs::path& rel) { artifacts_.insert(rel.generic_string()); }

  void finish() {
    std::ofstream cfg(root_ / "config.json", std::ios::trunc);
    cfg << to_json(config_).dump(2) << '\n';
    add("config.json");
    std::ofstream os(root_ / "manifest.txt", std::ios::trunc);
    for (const auto& a : artifacts_) os << a << '\n';
    if (!os) throw RuntimeFailure("cannot write " + (root_ / "manifest.txt").string());
  }

 private:
  const RunConfig& config_;
  fs::path root_;
  std::set<std::string> artifacts_;
};

void require_manifest(const RunConfig& c, const char* command) {
  if (c.manifest.empty()) throw ValidationError(std::string(command) + ": manifest is required");
  if (!fs::exists(c.manifest)) throw ValidationError(std::string(command) + ": manifest " + c.manifest.string() + " not found");
}

struct FoldCheckpoint {
  int fold = 0;
  fs::path stem;
  model::LoadedCheckpoint loaded;
};

// fold_<k>.json/.ncta pairs in `dir`, ordered by k.
std::vector<FoldCheckpoint> load_fold_checkpoints(const fs::path& dir, const char* command) {
  if (dir.empty()) throw ValidationError(std::string(command) + ": checkpoints directory is required");
  if (!fs::is_directory(dir)) throw ValidationError(std::string(command) + ": no checkpoint directory " + dir.string());
  const std::regex name(R"(fold_(\d+)\.json)");
  std::vector<FoldCheckpoint> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string file = e.path().filename().string();
    if (!std::regex_match(file, m, name)) continue;
    const fs::path stem = dir / ("fold_" + m[1].str());
    if (!fs::exists(stem.string() + ".ncta")) throw ValidationError("checkpoint " + stem.string() + ".ncta is missing");
    out.push_back({std::stoi(m[1].str()), stem, model::load_checkpoint(stem)});
  }
  if (out.empty()) throw ValidationError(std::string(command) + ": no fold_<k> checkpoints in " + dir.string());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.fold < b.fold; });
  return out;
}

std::set<std::string> validation_patients(const FoldCheckpoint& c) {
  const auto& extra = c.loaded.meta.extra;
  if (!extra.contains("val_patients")) {
    throw ValidationError("checkpoint " + c.stem.string() + " does not record its validation patients");
  }
  return extra.at("val_patients").get<std::set<std::string>>();
}

dataset::Cohort load_for_inference(const RunConfig& c, int image_size) {
  dataset::LoadOptions opts;
  opts.image_size = image_size;
  opts.load_volumes = false;
  opts.view_cache = c.cache_dir;
  return dataset::load_cohort(ingest::load_manifest(c.manifest), opts);
}

std::vector<const preprocess::ViewStack*> stacks_of(const dataset::Cohort& cohort, std::span<const std::size_t> idx) {
  std::vector<const preprocess::ViewStack*> out;
  for (auto i : idx) out.push_back(&cohort[i].eval_stack);
  return out;
}

std::vector<std::size_t> all_indices(const dataset::Cohort& cohort) {
  std::vector<std::size_t> idx(cohort.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

int cmd_synth(const RunConfig& c) {
  RunDir run(c, "synth");
  synth::SynthConfig sc;
  sc.n_patients = c.synth.n_patients;
  sc.seed = c.seed;
  sc.malignant_rate = c.synth.malignant_rate;
  sc.second_nodule_every = c.synth.second_nodule_every;
  const auto out = synth::write_cohort(sc, run.root());
  for (const auto& e : fs::recursive_directory_iterator(run.root())) {
    if (e.is_regular_file()) run.add(fs::relative(e.path(), run.root()));
  }
  run.finish();
  fmt::print("synth: {} patients, {} nodules -> {}\n", out.patients.size(), out.manifest.records.size(),
             out.manifest_path.string());
  return kExitOk;
}

int cmd_preprocess(const RunConfig& c) {
  require_manifest(c, "preprocess");
  const auto manifest = ingest::load_manifest(c.manifest);
  ingest::validate(manifest);
  // Existing cache entries are kept unless --overwrite, so reruns are no-ops.
  RunDir run(c, "preprocess", true);
  fs::create_directories(run.path("views"));
  fs::create_directories(run.path("reports"));

  std::map<std::string, std::shared_ptr<const preprocess::Volume>> volumes;
  std::map<std::string, std::string> volume_errors;
  std::map<std::string, std::map<std::pair<std::string, std::string>, semantics::SemanticFeatureSet>> annotations;
  std::vector<std::pair<std::string, std::string>> failures;
  int written = 0, reused = 0;

  for (std::size_t k = 0; k < manifest.records.size(); ++k) {
    const auto& r = manifest.records[k];
    const std::string stem = preprocess::cache_stem(r.patient_id, r.nodule_id);
    const fs::path view_rel = fs::path("views") / stem;
    const fs::path report_rel = fs::path("reports") / (stem + ".txt");
    if (!c.overwrite && preprocess::view_stack_cached(run.path(view_rel)) && fs::exists(run.path(report_rel))) {
      ++reused;
    } else {
      try {
        auto it = volumes.find(r.volume_uri);
        if (it == volumes.end()) {
          if (auto err = volume_errors.find(r.volume_uri); err != volume_errors.end()) throw RuntimeFailure(err->second);
          try {
            const auto raw = preprocess::read_nifti(manifest.resolve(r.volume_uri));
            it = volumes.emplace(r.volume_uri, std::make_shared<const preprocess::Volume>(preprocess::resample_isotropic(raw)))
                     .first;
          } catch (const std::exception& e) {
            volume_errors[r.volume_uri] = e.what();
            throw;
          }
        }
        const auto crop = preprocess::clip_normalize(preprocess::crop_nodule(*it->second, r.centroid_mm));
        const auto stack = preprocess::to_model_input(preprocess::slice_nine_planes(crop), {}, c.preprocess.image_size);

        semantics::SemanticFeatureSet features;
        if (r.semantics_uri) {
          auto ann = annotations.find(*r.semantics_uri);
          if (ann == annotations.end()) {
            std::map<std::pair<std::string, std::string>, semantics::SemanticFeatureSet> index;
            for (auto& a : semantics::load_annotations(manifest.resolve(*r.semantics_uri))) {
              index[{a.patient_id, a.nodule_id}] = std::move(a.features);
            }
            ann = annotations.emplace(*r.semantics_uri, std::move(index)).first;
          }
          if (auto f = ann->second.find({r.patient_id, r.nodule_id}); f != ann->second.end()) features = f->second;
        }
        Rng rng(derive_seed(c.seed, {static_cast<std::uint64_t>(k)}));
        const auto report = semantics::render_report(features, rng);

        preprocess::save_view_stack({r.patient_id, r.nodule_id, stack}, run.path(view_rel));
        std::ofstream os(run.path(report_rel), std::ios::trunc);
        os << report.text();
        if (!os) throw RuntimeFailure("cannot write " + run.path(report_rel).string());
        ++written;
      } catch (const std::exception& e) {
        failures.emplace_back(r.patient_id + "/" + r.nodule_id, e.what());
        continue;
      }
    }
    run.add(view_rel.string() + ".ncta");
    run.add(view_rel.string() + ".json");
    run.add(report_rel);
  }

  fmt::print("preprocess: {} written, {} already cached, {} failed\n", written, reused, failures.size());
  if (!failures.empty()) {
    std::ofstream os(run.path("failures.csv"), std::ios::trunc);
    os << "record,error\n";
    for (const auto& [rec, msg] : failures) {
      os << csv_field(rec) << ',' << csv_field(msg) << '\n';
      fmt::print(stderr, "  failed {}: {}\n", rec, msg);
    }
    // The directory stays incomplete so a fixed rerun resumes it.
    return kExitRuntime;
  }
  fs::remove(run.path("failures.csv"));
  run.finish();
  return kExitOk;
}

int cmd_split(const RunConfig& c) {
  require_manifest(c, "split");
  RunDir run(c, "split");
  const auto folds = ingest::make_patient_folds(ingest::load_manifest(c.manifest), c.split.folds, c.seed, c.split.stratified);
  ingest::save_splits(folds, run.path("splits.json"));
  run.add("splits.json");
  run.finish();
  fmt::print("split: {} folds -> {}\n", folds.size(), run.path("splits.json").string());
  return kExitOk;
}

int cmd_train(const RunConfig& c) {
  require_manifest(c, "train");
  c.model.config.validate();
  c.train.validate();
  RunDir run(c, "train");
  const auto manifest = ingest::load_manifest(c.manifest);

  std::vector<ingest::FoldSplit> folds;
  if (c.splits) {
    if (!fs::exists(*c.splits)) throw ValidationError("train: splits file " + c.splits->string() + " not found");
    folds = ingest::load_splits(*c.splits);
  } else {
    folds = ingest::make_patient_folds(manifest, c.train.folds, c.seed, c.split.stratified);
  }
  ingest::save_splits(folds, run.path("splits.json"));
  run.add("splits.json");

  dataset::LoadOptions opts;
  opts.image_size = c.model.config.vision.image_size;
  opts.view_cache = c.cache_dir;
  const auto cohort = dataset::load_cohort(manifest, opts);

  fs::remove(run.path("train_log.ndjson"));
  train::CvSummary summary;
  {
    train::TrainLog log(run.path("train_log.ndjson"));
    summary = train::run_cv(cohort, folds, c.train, c.model.config, c.model.base, run.path("checkpoints"), &log);
  }
  run.add("train_log.ndjson");
  run.add("checkpoints/cv_summary.json");
  for (const auto& f : summary.folds) {
    const auto rel = fs::relative(f.checkpoint, run.root()).generic_string();
    run.add(rel + ".ncta");
    run.add(rel + ".json");
  }
  run.finish();
  fmt::print("train: {} folds, validation AUROC {:.4f} +/- {:.4f}, train AUROC {:.4f}\n", summary.folds.size(),
             summary.mean_val_auroc, summary.std_val_auroc, summary.mean_train_auroc);
  return kExitOk;
}

int cmd_infer(const RunConfig& c) {
  require_manifest(c, "infer");
  if (c.infer.mode != "ensemble" && c.infer.mode != "out_of_fold") {
    throw ValidationError("infer.mode must be 'ensemble' or 'out_of_fold'");
  }
  if (c.infer.batch_size < 1) throw ValidationError("infer.batch_size must be positive");
  const auto checkpoints = load_fold_checkpoints(c.infer.checkpoints, "infer");
  RunDir run(c, "infer");
  const auto cohort = load_for_inference(c, checkpoints.front().loaded.bundle->config().vision.image_size);

  std::vector<infer::NoduleRisk> nodule_rows;
  std::vector<std::vector<infer::PatientRisk>> per_fold;
  std::vector<infer::PatientRisk> held_out;
  for (const auto& ck : checkpoints) {
    const auto idx = c.infer.mode == "ensemble" ? all_indices(cohort) : cohort.indices_for(validation_patients(ck));
    if (idx.empty()) continue;
    const auto probs = infer::predict_probabilities(*ck.loaded.bundle, stacks_of(cohort, idx), c.infer.batch_size);
    std::vector<infer::NoduleRisk> rows;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      rows.push_back({cohort[idx[k]].patient_id, cohort[idx[k]].nodule_id, probs[k], ck.fold});
    }
    nodule_rows.insert(nodule_rows.end(), rows.begin(), rows.end());
    const auto cal = train::checkpoint_calibrator(ck.loaded.meta);
    auto patients = infer::aggregate_by_patient(rows);
    for (auto& p : patients) p.probability = cal.apply(p.probability);
    if (c.infer.mode == "ensemble") {
      per_fold.push_back(std::move(patients));
    } else {
      held_out.insert(held_out.end(), patients.begin(), patients.end());
    }
  }
  std::vector<infer::PatientRisk> patients;
  if (c.infer.mode == "ensemble") {
    patients = infer::ensemble(per_fold);
  } else {
    std::sort(held_out.begin(), held_out.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    for (std::size_t i = 1; i < held_out.size(); ++i) {
      if (held_out[i].patient_id == held_out[i - 1].patient_id) {
        throw ValidationError("patient " + held_out[i].patient_id + " is held out by more than one fold");
      }
    }
    patients = std::move(held_out);
  }
  if (patients.empty()) throw ValidationError("infer: no manifest patient is covered by the checkpoints");

  infer::write_nodule_risks(nodule_rows, run.path("nodule_predictions.csv"));
  infer::write_patient_risks(patients, run.path("patient_predictions.csv"));
  run.add("nodule_predictions.csv");
  run.add("patient_predictions.csv");
  run.finish();
  fmt::print("infer: {} folds, {} nodule rows, {} patients ({})\n", checkpoints.size(), nodule_rows.size(),
             patients.size(), c.infer.mode);
  return kExitOk;
}

int cmd_zeroshot(const RunConfig& c) {
  require_manifest(c, "zeroshot");
  const auto feature = semantics::find_feature(c.zeroshot.feature);
  if (!feature) {
    std::string names;
    for (const auto& s : semantics::feature_catalog()) {
      if (s.kind != semantics::FeatureKind::numeric) names += (names.empty() ? "" : ", ") + std::string(s.name);
    }
    throw ValidationError("zeroshot.feature: unknown feature '" + c.zeroshot.feature + "' (one of: " + names + ")");
  }
  const auto prompts = c.zeroshot.classes.empty() ? semantics::zero_shot_prompts(*feature)
                                                  : semantics::zero_shot_prompts(*feature, c.zeroshot.classes);
  auto checkpoints = load_fold_checkpoints(c.zeroshot.checkpoints, "zeroshot");
  if (c.zeroshot.fold >= 0) {
    std::erase_if(checkpoints, [&](const auto& ck) { return ck.fold != c.zeroshot.fold; });
    if (checkpoints.empty()) throw ValidationError(fmt::format("zeroshot: no checkpoint for fold {}", c.zeroshot.fold));
  }
  RunDir run(c, "zeroshot");
  const auto cohort = load_for_inference(c, checkpoints.front().loaded.bundle->config().vision.image_size);

  std::vector<infer::ZeroShotRow> rows;
  for (const auto& ck : checkpoints) {
    const auto idx = c.zeroshot.fold >= 0 ? all_indices(cohort) : cohort.indices_for(validation_patients(ck));
    std::vector<std::pair<std::string, std::string>> ids;
    for (auto i : idx) ids.emplace_back(cohort[i].patient_id, cohort[i].nodule_id);
    auto part = infer::zero_shot(*ck.loaded.bundle, stacks_of(cohort, idx), ids, {prompts}, c.zeroshot.tau);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  infer::write_zero_shot(rows, run.path("zero_shot.csv"));
  run.add("zero_shot.csv");
  run.finish();
  fmt::print("zeroshot: {} rows for feature {}\n", rows.size(), semantics::spec(*feature).name);
  return kExitOk;
}

int cmd_evaluate(const RunConfig& c) {
  require_manifest(c, "evaluate");
  if (c.evaluate.predictions.empty()) throw ValidationError("evaluate: predictions file is required");
  if (!fs::exists(c.evaluate.predictions)) {
    throw ValidationError("evaluate: predictions file " + c.evaluate.predictions.string() + " not found");
  }
  RunDir run(c, "evaluate");
  const auto manifest = ingest::load_manifest(c.manifest);
  std::map<std::pair<std::string, std::string>, int> nodule_label;
  std::map<std::string, int> patient_label;
  for (const auto& r : manifest.records) {
    nodule_label[{r.patient_id, r.nodule_id}] = r.label_one_year;
    patient_label[r.patient_id] = std::max(patient_label[r.patient_id], r.label_one_year);
  }

  const auto table = read_csv(c.evaluate.predictions);
  const bool nodule_level = std::find(table.header.begin(), table.header.end(), "nodule_id") != table.header.end();
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> clusters;
  if (nodule_level) {
    // Fold ensembles list a nodule once per fold; their mean is scored.
    std::map<std::pair<std::string, std::string>, std::pair<double, int>> sums;
    for (const auto& r : infer::read_nodule_risks(c.evaluate.predictions)) {
      auto& s = sums[{r.patient_id, r.nodule_id}];
      s.first += r.probability;
      s.second += 1;
    }
    for (const auto& [key, s] : sums) {
      const auto it = nodule_label.find(key);
      if (it == nodule_label.end()) throw ValidationError("evaluate: nodule " + key.first + "/" + key.second + " not in manifest");
      scores.push_back(s.first / s.second);
      labels.push_back(it->second);
      clusters.push_back(key.first);
    }
  } else {
    for (const auto& r : infer::read_patient_risks(c.evaluate.predictions)) {
      const auto it = patient_label.find(r.patient_id);
      if (it == patient_label.end()) throw ValidationError("evaluate: patient " + r.patient_id + " not in manifest");
      scores.push_back(r.probability);
      labels.push_back(it->second);
    }
  }

  evaluate::BootstrapConfig boot;
  boot.n_draws = c.evaluate.bootstrap_draws;
  boot.seed = c.seed;
  boot.level = c.evaluate.level;
  const auto report = evaluate::evaluate_predictions(scores, labels, boot, c.evaluate.recall_targets, clusters);

  auto doc = report.to_json();
  doc["level"] = nodule_level ? "nodule" : "patient";
  doc["bootstrap_unit"] = "patient";
  doc["predictions"] = c.evaluate.predictions.string();
  std::ofstream js(run.path("metrics.json"), std::ios::trunc);
  js << doc.dump(2) << '\n';

  std::ofstream csv(run.path("metrics_table.csv"), std::ios::trunc);
  csv << "metric,point,lower,upper\n";
  csv << fmt::format("AUROC,{:.6f},{:.6f},{:.6f}\n", report.auroc, report.auroc_ci.lower, report.auroc_ci.upper);
  csv << fmt::format("AUPRC,{:.6f},{:.6f},{:.6f}\n", report.auprc, report.auprc_ci.lower, report.auprc_ci.upper);
  for (const auto& op : report.operating_points) {
    csv << fmt::format("Recall@{0:g},{1:.6f},,\nFPR@{0:g},{2:.6f},,\nPrecision@{0:g},{3:.6f},,\n", op.target_recall,
                       op.achieved_recall, op.fpr, op.precision);
  }
  if (!js || !csv) throw RuntimeFailure("cannot write metrics under " + run.root().string());
  run.add("metrics.json");
  run.add("metrics_table.csv");
  run.finish();
  fmt::print("evaluate: n {} ({} positive), AUROC {:.4f} [{:.4f}, {:.4f}], AUPRC {:.4f} [{:.4f}, {:.4f}]\n", report.n,
             report.n_positive, report.auroc, report.auroc_ci.lower, report.auroc_ci.upper, report.auprc,
             report.auprc_ci.lower, report.auprc_ci.upper);
  return kExitOk;
}

// Flags write into a JSON overlay at their config key, so a flag beats the
// config file and the file beats the defaults.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(flag, *value, help);
    bindings_.push_back({app, opt, [value, pointer](nlohmann::json& j) { j[nlohmann::json::json_pointer(pointer)] = *value; }});
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    auto* opt = app->add_flag(flag, *value, help);
    bindings_.push_back({app, opt, [value, pointer](nlohmann::json& j) { j[nlohmann::json::json_pointer(pointer)] = *value; }});
    return opt;
  }

  void apply(const CLI::App* active, nlohmann::json& j) const {
    for (const auto& b : bindings_) {
      if (b.app == active && b.opt->count() > 0) b.set(j);
    }
  }

 private:
  struct Binding {
    const CLI::App* app;
    CLI::Option* opt;
    std::function<void(nlohmann::json&)> set;
  };
  std::vector<Binding> bindings_;
};

nlohmann::json read_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream is(path);
  if (!is) throw ValidationError("config file " + path + " not found");
  try {
    auto j = nlohmann::json::parse(is);
    if (!j.is_object()) throw ValidationError("config file " + path + " must hold a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config file " + path + ": " + e.what());
  }
}

std::uint64_t seed_from_env(const char* text) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != std::string(text).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string("NODULECLIP_SEED must be a non-negative integer, got '") + text + "'");
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Nodule malignancy risk from CT crops and semantic reports"};
  app.require_subcommand(1, 1);
  Overrides ov;
  std::map<const CLI::App*, std::string> config_paths;
  std::map<const CLI::App*, std::function<int(const RunConfig&)>> handlers;

  auto command = [&](const char* name, const char* help, std::function<int(const RunConfig&)> handler) {
    auto* sub = app.add_subcommand(name, help);
    auto* path = &config_paths[sub];
    sub->add_option("--config", *path, "JSON run configuration");
    ov.add<std::string>(sub, "--run-dir", "/run_dir", "output directory");
    ov.add<std::uint64_t>(sub, "--seed", "/seed", "global seed (fallback: NODULECLIP_SEED, then 0)");
    ov.add_flag(sub, "--overwrite", "/overwrite", "replace a completed run directory");
    handlers[sub] = std::move(handler);
    return sub;
  };

  auto* synth = command("synth", "generate a synthetic cohort", cmd_synth);
  ov.add<int>(synth, "--n-patients", "/synth/n_patients", "number of patients (>= 10)");
  ov.add<double>(synth, "--malignant-rate", "/synth/malignant_rate", "fraction of malignant nodules");

  auto* pre = command("preprocess", "cache nine-plane view stacks and reports", cmd_preprocess);
  ov.add<std::string>(pre, "--manifest", "/manifest", "cohort manifest CSV");
  ov.add<int>(pre, "--image-size", "/preprocess/image_size", "model input size in pixels");

  auto* split = command("split", "patient-level cross-validation folds", cmd_split);
  ov.add<std::string>(split, "--manifest", "/manifest", "cohort manifest CSV");
  ov.add<int>(split, "--folds", "/split/folds", "number of folds");
  ov.add<bool>(split, "--stratified", "/split/stratified", "balance labels across folds (true/false)");

  auto* tr = command("train", "cross-validated fine-tuning", cmd_train);
  ov.add<std::string>(tr, "--manifest", "/manifest", "cohort manifest CSV");
  ov.add<std::string>(tr, "--cache-dir", "/cache_dir", "cached view stacks");
  ov.add<std::string>(tr, "--splits", "/splits", "fold file from `split`");
  ov.add<std::string>(tr, "--preset", "/model/preset", "model preset (toy, vit-b32)");
  ov.add<std::uint64_t>(tr, "--base-seed", "/model/base/seed", "seed of the random frozen base");
  ov.add<int>(tr, "--epochs", "/train/epochs", "epochs per fold");
  ov.add<double>(tr, "--lr", "/train/learning_rate", "learning rate");
  ov.add<int>(tr, "--batch-size", "/train/batch_size", "batch size");
  ov.add<int>(tr, "--folds", "/train/folds", "folds when no split file is given");
  ov.add<int>(tr, "--prefetch", "/train/prefetch", "batches prepared ahead on a worker thread");

  auto* inf = command("infer", "calibrated patient risk from fold checkpoints", cmd_infer);
  ov.add<std::string>(inf, "--manifest", "/manifest", "cohort manifest CSV");
  ov.add<std::string>(inf, "--cache-dir", "/cache_dir", "cached view stacks");
  ov.add<std::string>(inf, "--checkpoints", "/infer/checkpoints", "directory of fold_<k> checkpoints");
  ov.add<std::string>(inf, "--mode", "/infer/mode", "ensemble or out_of_fold");
  ov.add<int>(inf, "--batch-size", "/infer/batch_size", "inference batch size");

  auto* zs = command("zeroshot", "score semantic-feature prompts against images", cmd_zeroshot);
  ov.add<std::string>(zs, "--manifest", "/manifest", "cohort manifest CSV");
  ov.add<std::string>(zs, "--cache-dir", "/cache_dir", "cached view stacks");
  ov.add<std::string>(zs, "--checkpoints", "/zeroshot/checkpoints", "directory of fold_<k> checkpoints");
  ov.add<int>(zs, "--fold", "/zeroshot/fold", "single fold for every nodule (-1: out-of-fold)");
  ov.add<std::string>(zs, "--feature", "/zeroshot/feature", "semantic feature name");
  ov.add<std::vector<std::string>>(zs, "--classes", "/zeroshot/classes", "candidate classes")->delimiter(',');
  ov.add<double>(zs, "--tau", "/zeroshot/tau", "softmax temperature (<= 0: learned)");

  auto* ev = command("evaluate", "metrics with bootstrap intervals", cmd_evaluate);
  ov.add<std::string>(ev, "--manifest", "/manifest", "cohort manifest CSV with labels");
  ov.add<std::string>(ev, "--predictions", "/evaluate/predictions", "patient or nodule prediction CSV");
  ov.add<int>(ev, "--draws", "/evaluate/bootstrap_draws", "bootstrap resamples");
  ov.add<double>(ev, "--level", "/evaluate/level", "interval coverage");
  ov.add<std::vector<double>>(ev, "--recall-targets", "/evaluate/recall_targets", "operating-point recalls")
      ->delimiter(',');

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  const CLI::App* active = app.get_subcommands().front();
  try {
    auto doc = read_config_file(config_paths[active]);
    ov.apply(active, doc);
    if (!doc.contains("seed")) {
      if (const char* env = std::getenv("NODULECLIP_SEED")) doc["seed"] = seed_from_env(env);
    }
    const auto config = run_config_from_json(doc);
    return handlers.at(active)(config);
  } catch (const ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fmt::print(stderr, "failure: {}\n", e.what());
    return kExitRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace noduleclip::cli
