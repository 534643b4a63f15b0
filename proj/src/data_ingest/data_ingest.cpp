#include "noduleclip/data_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "noduleclip/common/csv.hpp"
#include "noduleclip/common/error.hpp"
#include "noduleclip/common/random.hpp"

namespace noduleclip::ingest {
namespace {

const std::vector<std::string> kHeader = {"patient_id", "nodule_id", "volume_uri", "cx_mm",
                                          "cy_mm",      "cz_mm",     "label",      "semantics_uri"};

std::string row_tag(std::size_t row) { return "row " + std::to_string(row + 1); }

double parse_number(const std::string& text, std::size_t row, const char* column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    // stod accepts "nan"/"inf", which the finiteness check reports below
    throw ValidationError(row_tag(row) + ": column " + column + " is not a number: '" + text + "'");
  }
}

std::vector<std::string> shuffled(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  shuffle(ids, rng);
  return ids;
}

// Shuffled patient order; stratified mode lists shuffled positives then
// shuffled negatives, each drawn from its own derived stream.
std::vector<std::string> patient_order(const CohortManifest& m, std::uint64_t seed, bool stratified) {
  if (!stratified) return shuffled(m.patients(), seed);
  std::vector<std::string> pos, neg;
  for (const auto& [pid, label] : m.patient_labels()) (label ? pos : neg).push_back(pid);
  auto order = shuffled(pos, derive_seed(seed, {1}));
  auto rest = shuffled(neg, derive_seed(seed, {0}));
  order.insert(order.end(), rest.begin(), rest.end());
  return order;
}

}  // namespace

std::vector<std::string> CohortManifest::patients() const {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.patient_id);
  return {ids.begin(), ids.end()};
}

std::map<std::string, int> CohortManifest::patient_labels() const {
  std::map<std::string, int> labels;
  for (const auto& r : records) {
    auto [it, inserted] = labels.emplace(r.patient_id, r.label_one_year);
    if (!inserted) it->second = std::max(it->second, r.label_one_year);
  }
  return labels;
}

CohortManifest CohortManifest::subset(const std::set<std::string>& patient_set, std::string subset_name) const {
  CohortManifest out;
  out.name = std::move(subset_name);
  out.base_dir = base_dir;
  for (const auto& r : records) {
    if (patient_set.contains(r.patient_id)) out.records.push_back(r);
  }
  return out;
}

std::filesystem::path CohortManifest::resolve(const std::string& uri) const {
  std::filesystem::path p(uri);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

void validate(const CohortManifest& manifest) {
  if (manifest.records.empty()) throw ValidationError("manifest '" + manifest.name + "' has no records");
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.patient_id.empty()) throw ValidationError(row_tag(i) + ": empty patient_id");
    if (r.nodule_id.empty()) throw ValidationError(row_tag(i) + ": empty nodule_id");
    if (r.label_one_year != 0 && r.label_one_year != 1) throw ValidationError(row_tag(i) + ": label outside {0,1}");
    if (!all_finite(r.centroid_mm)) throw ValidationError(row_tag(i) + ": non-finite centroid");
    auto [it, inserted] = seen.emplace(std::make_pair(r.patient_id, r.nodule_id), i);
    if (!inserted) {
      throw ValidationError(row_tag(i) + ": duplicate (patient_id, nodule_id) = (" + r.patient_id + ", " +
                            r.nodule_id + "), first seen at " + row_tag(it->second));
    }
  }
}

CohortManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("manifest not found: " + path.string());
  const CsvTable table = read_csv(path);
  if (table.header != kHeader) {
    throw ValidationError("manifest header must be patient_id,nodule_id,volume_uri,cx_mm,cy_mm,cz_mm,label,semantics_uri");
  }
  CohortManifest m;
  m.name = path.stem().string();
  m.base_dir = path.parent_path();
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    NoduleRecord r;
    r.patient_id = row[0];
    r.nodule_id = row[1];
    r.volume_uri = row[2];
    r.centroid_mm = {parse_number(row[3], i, "cx_mm"), parse_number(row[4], i, "cy_mm"),
                     parse_number(row[5], i, "cz_mm")};
    if (row[6] == "0") {
      r.label_one_year = 0;
    } else if (row[6] == "1") {
      r.label_one_year = 1;
    } else {
      throw ValidationError(row_tag(i) + ": label outside {0,1}: '" + row[6] + "'");
    }
    if (!row[7].empty()) r.semantics_uri = row[7];
    m.records.push_back(std::move(r));
  }
  validate(m);
  return m;
}

void save_manifest(const CohortManifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw RuntimeFailure("cannot write manifest: " + path.string());
  os << "patient_id,nodule_id,volume_uri,cx_mm,cy_mm,cz_mm,label,semantics_uri\n";
  os.precision(17);
  for (const auto& r : manifest.records) {
    os << csv_field(r.patient_id) << ',' << csv_field(r.nodule_id) << ',' << csv_field(r.volume_uri) << ','
       << r.centroid_mm[0] << ',' << r.centroid_mm[1] << ',' << r.centroid_mm[2] << ',' << r.label_one_year << ','
       << csv_field(r.semantics_uri.value_or("")) << '\n';
  }
}

std::pair<CohortManifest, CohortManifest> hold_out_test(const CohortManifest& manifest, double fraction,
                                                        std::uint64_t seed, bool stratified) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("hold-out fraction must lie in (0, 1)");
  const auto all = manifest.patients();
  if (all.size() < 2) throw ValidationError("hold-out needs at least 2 patients");

  std::set<std::string> test;
  if (!stratified) {
    const auto order = shuffled(all, seed);
    const auto n_test = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(all.size())));
    test.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  } else {
    std::vector<std::string> pos, neg;
    for (const auto& [pid, label] : manifest.patient_labels()) (label ? pos : neg).push_back(pid);
    for (auto [group, stream] : {std::pair{&pos, 1ULL}, std::pair{&neg, 0ULL}}) {
      const auto order = shuffled(*group, derive_seed(seed, {stream}));
      const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(order.size())));
      test.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    }
  }
  if (test.empty() || test.size() == all.size()) {
    throw ValidationError("hold-out fraction leaves one side without patients");
  }
  std::set<std::string> train;
  for (const auto& p : all) {
    if (!test.contains(p)) train.insert(p);
  }
  return {manifest.subset(train, manifest.name + "_train"), manifest.subset(test, manifest.name + "_test")};
}

std::vector<FoldSplit> make_patient_folds(const CohortManifest& manifest, int k, std::uint64_t seed,
                                          bool stratified) {
  if (k < 2) throw ValidationError("k-fold split needs k >= 2");
  const auto all = manifest.patients();
  if (all.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("k-fold split needs at least k patients (have " + std::to_string(all.size()) + ")");
  }
  const auto order = patient_order(manifest, seed, stratified);
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) folds[f].fold_index = f;
  for (std::size_t i = 0; i < order.size(); ++i) folds[i % static_cast<std::size_t>(k)].val_patients.insert(order[i]);
  for (auto& fold : folds) {
    for (const auto& p : all) {
      if (!fold.val_patients.contains(p)) fold.train_patients.insert(p);
    }
  }
  return folds;
}

void save_splits(const std::vector<FoldSplit>& folds, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["folds"] = nlohmann::json::array();
  for (const auto& f : folds) {
    doc["folds"].push_back({{"fold_index", f.fold_index},
                            {"train_patients", std::vector<std::string>(f.train_patients.begin(), f.train_patients.end())},
                            {"val_patients", std::vector<std::string>(f.val_patients.begin(), f.val_patients.end())}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw RuntimeFailure("cannot write splits: " + path.string());
  os << doc.dump(2) << '\n';
}

std::vector<FoldSplit> load_splits(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open splits file: " + path.string());
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed splits file " + path.string() + ": " + e.what());
  }
  std::vector<FoldSplit> folds;
  for (const auto& f : doc.at("folds")) {
    FoldSplit s;
    s.fold_index = f.at("fold_index").get<int>();
    for (const auto& p : f.at("train_patients")) s.train_patients.insert(p.get<std::string>());
    for (const auto& p : f.at("val_patients")) s.val_patients.insert(p.get<std::string>());
    folds.push_back(std::move(s));
  }
  return folds;
}

}  // namespace noduleclip::ingest
