#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"
#include "noduleclip/synth.hpp"
#include "noduleclip/train.hpp"
#include "support/fixtures.hpp"
#include "support/tiny_model.hpp"

using namespace noduleclip;
using nc_test::seeded;
using nc_test::tiny_config;
using semantics::Feature;

namespace {

struct SmallCohort {
  dataset::Cohort cohort;
  std::vector<ingest::FoldSplit> folds;
};

const SmallCohort& small_cohort() {
  static const SmallCohort c = [] {
    synth::SynthConfig sc;
    sc.n_patients = 12;
    sc.seed = 17;
    const auto out = synth::write_cohort(sc, nc_test::temp_dir("train_cohort"));
    dataset::LoadOptions opts;
    opts.image_size = 64;
    SmallCohort r;
    r.cohort = dataset::load_cohort(out.manifest, opts);
    r.folds = ingest::make_patient_folds(out.manifest, 3, 2, true);
    return r;
  }();
  return c;
}

train::TrainConfig quick_config(int epochs = 2) {
  train::TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 4;
  c.epochs = epochs;
  c.folds = 3;
  c.seed = 5;
  return c;
}

void expect_same_trainables(const model::ModelBundle& a, const model::ModelBundle& b) {
  const auto ea = a.trainable_entries();
  const auto eb = b.trainable_entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(ea[i]->name, eb[i]->name);
    EXPECT_TRUE(ea[i]->var.value() == eb[i]->var.value()) << ea[i]->name;
  }
}

std::vector<nlohmann::json> read_ndjson(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::vector<nlohmann::json> out;
  for (std::string line; std::getline(is, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST(Sampler, WeightsAreMeanInverseFrequencies) {
  std::vector<semantics::SemanticFeatureSet> sets(3);
  for (auto& s : sets) s.set_category(Feature::consistency, "Solid");
  sets[0].set_binary(Feature::necrosis, true);
  sets[1].set_binary(Feature::necrosis, false);
  sets[2].set_binary(Feature::necrosis, false);
  // Raw: (1 + 1/3) / 2 and twice (1/2 + 1/3) / 2, mean 1/2.
  const auto w = train::build_sampler(sets).weights;
  ASSERT_EQ(w.size(), 3u);
  EXPECT_NEAR(w[0], 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(w[1], 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(w[2], 5.0 / 6.0, 1e-12);

  sets.emplace_back();
  EXPECT_THROW(train::build_sampler(sets), ValidationError);
  EXPECT_THROW(train::build_sampler({}), ValidationError);
}

TEST(Sampler, WeightsAverageToOneOnASyntheticCohort) {
  const auto& c = small_cohort().cohort;
  std::vector<semantics::SemanticFeatureSet> sets;
  for (const auto& s : c.samples()) sets.push_back(s.features);
  const auto w = train::build_sampler(sets).weights;
  double mean = 0.0;
  for (double x : w) {
    EXPECT_GT(x, 0.0);
    mean += x;
  }
  EXPECT_NEAR(mean / static_cast<double>(w.size()), 1.0, 1e-12);
}

TEST(Sampler, DrawFrequenciesFollowWeights) {
  const std::vector<double> weights{1.0, 3.0, 0.0, 4.0};
  std::vector<double> cumulative;
  double acc = 0.0;
  for (double w : weights) cumulative.push_back(acc += w);
  Rng rng(12);
  std::vector<int> counts(4, 0);
  const int n = 80000;
  for (int i = 0; i < n; ++i) ++counts[train::sample_index(cumulative, rng)];
  for (std::size_t k = 0; k < 4; ++k) {
    const double p = weights[k] / acc;
    EXPECT_NEAR(counts[k] / static_cast<double>(n), p, 4.0 * std::sqrt(p * (1 - p) / n) + 1e-12) << k;
  }
  EXPECT_THROW(train::sample_index(std::vector<double>{}, rng), ValidationError);
}

TEST(AdamW, StepMatchesAHandComputedUpdate) {
  ag::Matrix coeff(1, 2);
  coeff << 0.5, -2.0;
  ag::Matrix start(1, 2);
  start << 1.0, 1.0;
  model::ParamEntry w{"proj.weight", 1, 2, model::ParamGroup::projection, ag::parameter(start)};
  model::ParamEntry b{"proj.bias", 1, 2, model::ParamGroup::projection, ag::parameter(start)};
  model::ParamEntry idle{"other.weight", 1, 2, model::ParamGroup::projection, ag::parameter(start)};
  auto c = ag::parameter(coeff);
  c.set_requires_grad(false);

  const train::AdamW::Options o{0.1, 0.5, 0.9, 0.99, 1e-8};
  train::AdamW opt({&w, &b, &idle}, o);
  std::array<double, 2> m{}, v{}, pw{1.0, 1.0}, pb{1.0, 1.0};
  for (int t = 1; t <= 3; ++t) {
    ag::backward(ag::add(ag::sum(ag::mul(w.var, c)), ag::sum(ag::mul(b.var, c))));
    opt.step();
    opt.zero_grad();
    for (int j = 0; j < 2; ++j) {
      const double g = coeff(0, j);
      m[j] = o.beta1 * m[j] + (1 - o.beta1) * g;
      v[j] = o.beta2 * v[j] + (1 - o.beta2) * g * g;
      const double update = o.lr * (m[j] / (1 - std::pow(o.beta1, t))) /
                            (std::sqrt(v[j] / (1 - std::pow(o.beta2, t))) + o.eps);
      pw[j] = pw[j] * (1 - o.lr * o.weight_decay) - update;
      pb[j] -= update;
    }
  }
  EXPECT_EQ(opt.steps(), 3);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(w.var.value()(0, j), pw[j], 1e-14);
    EXPECT_NEAR(b.var.value()(0, j), pb[j], 1e-14);
  }
  // No gradient, no change: not even weight decay.
  EXPECT_TRUE(idle.var.value() == start);
}

TEST(AdamW, DecayExclusions) {
  EXPECT_TRUE(train::AdamW::decays("image_projection.weight"));
  EXPECT_TRUE(train::AdamW::decays("mil.attention.weight"));
  EXPECT_FALSE(train::AdamW::decays("image_projection.bias"));
  EXPECT_FALSE(train::AdamW::decays("text.blocks.0.ln_1.weight"));
  EXPECT_FALSE(train::AdamW::decays("vision.ln_post.weight"));
  EXPECT_FALSE(train::AdamW::decays("log_temperature"));
}

TEST(TrainConfig, JsonRoundTripAndRejection) {
  auto c = quick_config(7);
  c.loss.class_weights = {0.7, 1.3};
  c.augmentation.noise_std = 0.05;
  c.text_augmentation.crop_prob = 0.25;
  const auto j = train::to_json(c);
  EXPECT_EQ(train::to_json(train::train_config_from_json(j)), j);

  auto bad = j;
  bad["learning_rte"] = 1.0;
  EXPECT_THROW(train::train_config_from_json(bad), ValidationError);
  bad = j;
  bad["augmentation"]["jiter_mm"] = 1.0;
  EXPECT_THROW(train::train_config_from_json(bad), ValidationError);
  bad = j;
  bad["batch_size"] = 0;
  EXPECT_THROW(train::train_config_from_json(bad), ValidationError);
  bad = j;
  bad["beta2"] = 1.0;
  EXPECT_THROW(train::train_config_from_json(bad), ValidationError);
  EXPECT_EQ(train::train_config_from_json(nlohmann::json::object()).epochs, train::TrainConfig{}.epochs);
}

TEST(TrainFold, ZeroEpochsKeepTheInitialisation) {
  const auto& sc = small_cohort();
  const auto r = train::train_fold(sc.cohort, sc.folds[0], quick_config(0), tiny_config(), seeded(3));
  const model::ModelBundle fresh(tiny_config(), seeded(3));
  expect_same_trainables(*r.bundle, fresh);
  EXPECT_EQ(r.meta.epoch, 0);
  ASSERT_EQ(r.history.size(), 1u);
}

TEST(TrainFold, SeededRunsAreIdenticalWithOrWithoutPrefetch) {
  const auto& sc = small_cohort();
  const auto a = train::train_fold(sc.cohort, sc.folds[1], quick_config(), tiny_config(), seeded(3));
  const auto b = train::train_fold(sc.cohort, sc.folds[1], quick_config(), tiny_config(), seeded(3));
  expect_same_trainables(*a.bundle, *b.bundle);
  auto threaded = quick_config();
  threaded.prefetch = 2;
  const auto c = train::train_fold(sc.cohort, sc.folds[1], threaded, tiny_config(), seeded(3));
  expect_same_trainables(*a.bundle, *c.bundle);
  EXPECT_EQ(a.frozen_hash_before, a.frozen_hash_after);

  // Training moved the trainable tensors away from the initialisation.
  const model::ModelBundle fresh(tiny_config(), seeded(3));
  double moved = 0.0;
  const auto ea = a.bundle->trainable_entries(), ef = fresh.trainable_entries();
  for (std::size_t i = 0; i < ea.size(); ++i) moved += (ea[i]->var.value() - ef[i]->var.value()).cwiseAbs().sum();
  EXPECT_GT(moved, 0.0);
}

TEST(TrainFold, SelectedEpochIsTheLastBestAndReloadReproducesIt) {
  const auto& sc = small_cohort();
  const auto r = train::train_fold(sc.cohort, sc.folds[2], quick_config(3), tiny_config(), seeded(8));
  ASSERT_EQ(r.history.size(), 4u);
  int expected = 0;
  double best = r.history[0].val_auroc;
  for (const auto& h : r.history) {
    if (h.val_auroc >= best) {
      best = h.val_auroc;
      expected = h.epoch;
    }
  }
  EXPECT_EQ(r.meta.epoch, expected);
  EXPECT_EQ(r.meta.val_auroc, best);

  const auto stem = nc_test::temp_dir("train_ckpt") / "fold";
  model::save_checkpoint(*r.bundle, r.meta, stem);
  const auto loaded = model::load_checkpoint(stem);
  std::vector<const preprocess::ViewStack*> stacks;
  for (auto i : r.val_indices) stacks.push_back(&sc.cohort[i].eval_stack);
  const auto probs = infer::predict_probabilities(*loaded.bundle, stacks);
  EXPECT_NEAR(train::patient_auroc(sc.cohort, r.val_indices, probs), r.meta.val_auroc, 1e-6);
  EXPECT_EQ(loaded.meta.epoch, r.meta.epoch);
  EXPECT_EQ(loaded.bundle->frozen_hash(), r.frozen_hash_after);
}

TEST(TrainFold, DivergenceIsReportedWithStepAndRate) {
  const auto& sc = small_cohort();
  auto c = quick_config(1);
  c.learning_rate = 1e300;
  try {
    train::train_fold(sc.cohort, sc.folds[0], c, tiny_config(), seeded(3));
    FAIL() << "expected a non-finite loss";
  } catch (const RuntimeFailure& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr 1e+300"), std::string::npos) << msg;
  }
}

TEST(TrainFold, RejectsLeakingSplits) {
  const auto& sc = small_cohort();
  auto split = sc.folds[0];
  split.train_patients.insert(*split.val_patients.begin());
  EXPECT_THROW(train::train_fold(sc.cohort, split, quick_config(), tiny_config(), seeded(3)), ValidationError);
}

TEST(RunCv, SummaryAgreesWithTheLogAndCheckpoints) {
  const auto& sc = small_cohort();
  const auto dir = nc_test::temp_dir("train_cv");
  auto c = quick_config(1);
  train::CvSummary summary;
  {
    train::TrainLog log(dir / "log.ndjson");
    summary = train::run_cv(sc.cohort, sc.folds, c, tiny_config(), seeded(3), dir / "run", &log);
  }
  ASSERT_EQ(summary.folds.size(), 3u);

  std::vector<double> logged;
  int steps = 0;
  for (const auto& r : read_ndjson(dir / "log.ndjson")) {
    if (r["type"] == "fold") logged.push_back(r["val_auroc"].get<double>());
    if (r["type"] == "step") {
      ++steps;
      EXPECT_TRUE(std::isfinite(r["loss"].get<double>()));
    }
  }
  ASSERT_EQ(logged.size(), 3u);
  EXPECT_GT(steps, 0);
  double mean = 0.0;
  for (double v : logged) mean += v / 3.0;
  double ss = 0.0;
  for (double v : logged) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(summary.mean_val_auroc, mean, 1e-12);
  EXPECT_NEAR(summary.std_val_auroc, std::sqrt(ss / 2.0), 1e-12);

  const auto on_disk = nlohmann::json::parse(std::ifstream(dir / "run" / "cv_summary.json"));
  EXPECT_EQ(on_disk, summary.to_json());
  std::set<std::uint64_t> distinct;
  for (const auto& f : summary.folds) {
    const auto loaded = model::load_checkpoint(f.checkpoint);
    EXPECT_EQ(loaded.meta.fold, f.fold);
    const auto cal = train::checkpoint_calibrator(loaded.meta);
    EXPECT_EQ(cal.a, f.calibrator.a);
    EXPECT_EQ(cal.c, f.calibrator.c);
    EXPECT_EQ(loaded.meta.extra.at("val_patients").size(), sc.folds[static_cast<std::size_t>(f.fold)].val_patients.size());
    std::uint64_t h = 0;
    for (const auto* e : loaded.bundle->trainable_entries()) {
      h = h * 31 + std::hash<double>{}(e->var.value().sum());
    }
    distinct.insert(h);
  }
  EXPECT_EQ(distinct.size(), 3u);
}
