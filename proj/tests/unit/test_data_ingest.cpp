#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "noduleclip/common/error.hpp"
#include "noduleclip/data_ingest.hpp"
#include "support/fixtures.hpp"

using namespace noduleclip;
using namespace noduleclip::ingest;

namespace {

// n patients; patient i has 1 + i % 3 nodules, positive when i % 4 == 0.
CohortManifest cohort(int n) {
  CohortManifest m;
  m.name = "test";
  for (int p = 0; p < n; ++p) {
    for (int k = 0; k <= p % 3; ++k) {
      NoduleRecord r;
      r.patient_id = "P" + std::to_string(1000 + p);
      r.nodule_id = "N" + std::to_string(k);
      r.volume_uri = "vol/" + r.patient_id + ".nii.gz";
      r.centroid_mm = {1.0 * p, 2.0 * k, -3.5};
      r.label_one_year = (p % 4 == 0 && k == 0) ? 1 : 0;
      if (k == 1) r.semantics_uri = "sem/" + r.patient_id + ".json";
      m.records.push_back(r);
    }
  }
  return m;
}

}  // namespace

TEST(Manifest, SaveLoadRoundTrip) {
  const auto dir = nc_test::temp_dir("manifest");
  const auto m = cohort(10);
  save_manifest(m, dir / "cohort.csv");
  const auto back = load_manifest(dir / "cohort.csv");
  ASSERT_EQ(back.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(back.records[i].patient_id, m.records[i].patient_id);
    EXPECT_EQ(back.records[i].nodule_id, m.records[i].nodule_id);
    EXPECT_EQ(back.records[i].centroid_mm, m.records[i].centroid_mm);
    EXPECT_EQ(back.records[i].label_one_year, m.records[i].label_one_year);
    EXPECT_EQ(back.records[i].semantics_uri, m.records[i].semantics_uri);
  }
  EXPECT_EQ(back.base_dir, dir);
  EXPECT_EQ(back.resolve("vol/a.nii.gz"), dir / "vol/a.nii.gz");
  EXPECT_EQ(back.resolve("/abs/a.nii.gz"), std::filesystem::path("/abs/a.nii.gz"));
}

TEST(Manifest, PatientLabelsAreMaxOverNodules) {
  const auto m = cohort(8);
  const auto labels = m.patient_labels();
  EXPECT_EQ(labels.size(), 8u);
  EXPECT_EQ(labels.at("P1000"), 1);
  EXPECT_EQ(labels.at("P1004"), 1);
  EXPECT_EQ(labels.at("P1001"), 0);
  EXPECT_EQ(m.patients().front(), "P1000");
}

TEST(Manifest, ValidationNamesTheProblem) {
  auto m = cohort(3);
  EXPECT_NO_THROW(validate(m));
  auto dup = m;
  dup.records.push_back(dup.records.front());
  EXPECT_THROW(validate(dup), ValidationError);
  auto bad_label = m;
  bad_label.records[0].label_one_year = 2;
  EXPECT_THROW(validate(bad_label), ValidationError);
  auto nan = m;
  nan.records[0].centroid_mm[1] = std::nan("");
  EXPECT_THROW(validate(nan), ValidationError);
  EXPECT_THROW(validate(CohortManifest{}), ValidationError);
}

TEST(Manifest, RejectsMalformedFiles) {
  const auto dir = nc_test::temp_dir("manifest_bad");
  {
    std::ofstream os(dir / "hdr.csv");
    os << "patient,nodule\nA,B\n";
  }
  EXPECT_THROW(load_manifest(dir / "hdr.csv"), ValidationError);
  {
    std::ofstream os(dir / "num.csv");
    os << "patient_id,nodule_id,volume_uri,cx_mm,cy_mm,cz_mm,label,semantics_uri\nA,1,v,1.0,abc,2,0,\n";
  }
  EXPECT_THROW(load_manifest(dir / "num.csv"), ValidationError);
  EXPECT_THROW(load_manifest(dir / "missing.csv"), ValidationError);
}

TEST(Split, HoldOutIsPatientDisjointAndDeterministic) {
  const auto m = cohort(40);
  const auto [train, test] = hold_out_test(m, 0.25, 9);
  const auto train_patients = train.patients();
  std::set<std::string> a(train_patients.begin(), train_patients.end());
  const auto tp = test.patients();
  for (const auto& p : tp) EXPECT_FALSE(a.contains(p));
  EXPECT_EQ(a.size() + tp.size(), 40u);
  EXPECT_EQ(tp.size(), 10u);
  EXPECT_EQ(train.records.size() + test.records.size(), m.records.size());
  EXPECT_EQ(hold_out_test(m, 0.25, 9).second.patients(), tp);
  EXPECT_NE(hold_out_test(m, 0.25, 10).second.patients(), tp);
  EXPECT_THROW(hold_out_test(m, 0.0, 9), ValidationError);
  EXPECT_THROW(hold_out_test(cohort(2), 0.1, 9), ValidationError);
}

TEST(Split, StratifiedHoldOutBalancesPositives) {
  const auto m = cohort(40);  // 10 positive patients
  const auto [train, test] = hold_out_test(m, 0.3, 3, true);
  int pos = 0;
  for (const auto& [p, y] : test.patient_labels()) pos += y;
  EXPECT_EQ(pos, 3);
}

TEST(Split, FoldsPartitionPatients) {
  const auto m = cohort(23);
  const auto folds = make_patient_folds(m, 5, 4);
  ASSERT_EQ(folds.size(), 5u);
  std::multiset<std::string> val_union;
  for (const auto& f : folds) {
    EXPECT_GE(f.val_patients.size(), 4u);
    EXPECT_LE(f.val_patients.size(), 5u);
    for (const auto& p : f.val_patients) {
      EXPECT_FALSE(f.train_patients.contains(p));
      val_union.insert(p);
    }
    EXPECT_EQ(f.train_patients.size() + f.val_patients.size(), 23u);
  }
  EXPECT_EQ(val_union.size(), 23u);
  EXPECT_EQ(std::set<std::string>(val_union.begin(), val_union.end()).size(), 23u);
  EXPECT_THROW(make_patient_folds(m, 1, 4), ValidationError);
  EXPECT_THROW(make_patient_folds(cohort(3), 5, 4), ValidationError);
}

TEST(Split, SplitsFileRoundTrip) {
  const auto dir = nc_test::temp_dir("splits");
  const auto folds = make_patient_folds(cohort(12), 3, 1, true);
  save_splits(folds, dir / "splits.json");
  const auto back = load_splits(dir / "splits.json");
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].fold_index, folds[i].fold_index);
    EXPECT_EQ(back[i].train_patients, folds[i].train_patients);
    EXPECT_EQ(back[i].val_patients, folds[i].val_patients);
  }
  {
    std::ofstream os(dir / "bad.json");
    os << "{not json";
  }
  EXPECT_THROW(load_splits(dir / "bad.json"), ValidationError);
}
