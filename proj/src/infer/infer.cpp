#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

#include "noduleclip/common/csv.hpp"
#include "noduleclip/common/error.hpp"
#include "noduleclip/infer.hpp"

namespace noduleclip::infer {
namespace {

double parse_probability(const std::string& s, const std::filesystem::path& path) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !(v >= 0.0 && v <= 1.0)) {
    throw ValidationError(path.string() + ": probability '" + s + "' is not a number in [0, 1]");
  }
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw RuntimeFailure("cannot write " + path.string());
  return os;
}

template <class Fn>
void for_batches(std::size_t n, int batch_size, Fn fn) {
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    fn(start, std::min(n, start + static_cast<std::size_t>(batch_size)));
  }
}

ag::Matrix normalize_rows(ag::Matrix m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
  return m;
}

}  // namespace

PatientRisk patient_aggregate(std::span<const NoduleRisk> risks) {
  if (risks.empty()) throw ValidationError("patient aggregation needs at least one nodule");
  PatientRisk out{risks.front().patient_id, risks.front().probability};
  for (const auto& r : risks) {
    if (r.patient_id != out.patient_id) {
      throw ValidationError("patient aggregation mixes patients " + out.patient_id + " and " + r.patient_id);
    }
    out.probability = std::max(out.probability, r.probability);
  }
  return out;
}

std::vector<PatientRisk> aggregate_by_patient(std::span<const NoduleRisk> risks) {
  std::map<std::string, std::vector<NoduleRisk>> groups;
  for (const auto& r : risks) groups[r.patient_id].push_back(r);
  std::vector<PatientRisk> out;
  for (const auto& [id, list] : groups) out.push_back(patient_aggregate(list));
  return out;
}

std::vector<PatientRisk> ensemble(const std::vector<std::vector<PatientRisk>>& per_fold) {
  if (per_fold.empty()) throw ValidationError("ensemble needs at least one fold");
  std::map<std::string, std::vector<double>> by_patient;
  for (std::size_t f = 0; f < per_fold.size(); ++f) {
    std::set<std::string> seen;
    for (const auto& r : per_fold[f]) {
      if (!seen.insert(r.patient_id).second) {
        throw ValidationError(fmt::format("fold {} lists patient {} twice", f, r.patient_id));
      }
      by_patient[r.patient_id].push_back(r.probability);
    }
  }
  std::vector<PatientRisk> out;
  for (const auto& [id, values] : by_patient) {
    if (values.size() != per_fold.size()) {
      throw ValidationError("patient " + id + " is missing from some folds' predictions");
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    out.push_back({id, sum / static_cast<double>(values.size())});
  }
  return out;
}

std::vector<double> predict_probabilities(const model::ModelBundle& bundle,
                                          const std::vector<const preprocess::ViewStack*>& stacks, int batch_size) {
  ag::NoGradGuard no_grad;
  const model::ForwardContext ctx{};
  std::vector<double> out;
  out.reserve(stacks.size());
  for_batches(stacks.size(), batch_size, [&](std::size_t lo, std::size_t hi) {
    const std::vector<const preprocess::ViewStack*> batch(stacks.begin() + static_cast<std::ptrdiff_t>(lo),
                                                          stacks.begin() + static_cast<std::ptrdiff_t>(hi));
    const ag::Matrix logits = bundle.encode_image(batch, ctx).logits.value();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      // softmax class 1 of two logits
      out.push_back(1.0 / (1.0 + std::exp(logits(r, 0) - logits(r, 1))));
    }
  });
  return out;
}

NoduleRisk infer_nodule(const model::ModelBundle& bundle, const preprocess::ViewStack& stack,
                        const std::string& patient_id, const std::string& nodule_id, int fold) {
  return {patient_id, nodule_id, predict_probabilities(bundle, {&stack}, 1).front(), fold};
}

ag::Matrix image_embeddings(const model::ModelBundle& bundle, const std::vector<const preprocess::ViewStack*>& stacks,
                            int batch_size) {
  ag::NoGradGuard no_grad;
  const model::ForwardContext ctx{};
  ag::Matrix out(static_cast<Eigen::Index>(stacks.size()), bundle.config().heads.embed_dim);
  for_batches(stacks.size(), batch_size, [&](std::size_t lo, std::size_t hi) {
    const std::vector<const preprocess::ViewStack*> batch(stacks.begin() + static_cast<std::ptrdiff_t>(lo),
                                                          stacks.begin() + static_cast<std::ptrdiff_t>(hi));
    out.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)) =
        bundle.encode_image(batch, ctx).embedding.value();
  });
  return normalize_rows(std::move(out));
}

ag::Matrix text_embeddings(const model::ModelBundle& bundle, const std::vector<std::string>& sentences) {
  ag::NoGradGuard no_grad;
  return normalize_rows(bundle.encode_text(sentences, model::ForwardContext{}).embedding.value());
}

std::vector<double> zero_shot_scores(const Eigen::RowVectorXd& image_embedding, const ag::Matrix& candidates,
                                     double tau) {
  if (candidates.rows() < 2) throw ValidationError("zero-shot scoring needs at least 2 candidates");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("zero-shot temperature must be positive");
  if (candidates.cols() != image_embedding.size()) throw ValidationError("embedding widths differ");
  const double in = image_embedding.norm();
  std::vector<double> logits(static_cast<std::size_t>(candidates.rows()));
  for (Eigen::Index j = 0; j < candidates.rows(); ++j) {
    const double cn = candidates.row(j).norm();
    const double cosine = in > 0.0 && cn > 0.0 ? image_embedding.dot(candidates.row(j)) / (in * cn) : 0.0;
    logits[static_cast<std::size_t>(j)] = cosine / tau;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) total += (l = std::exp(l - top));
  for (double& l : logits) l /= total;
  return logits;
}

std::vector<ZeroShotRow> zero_shot(const model::ModelBundle& bundle,
                                   const std::vector<const preprocess::ViewStack*>& stacks,
                                   const std::vector<std::pair<std::string, std::string>>& ids,
                                   const std::vector<semantics::PromptSet>& queries, double tau) {
  if (ids.size() != stacks.size()) throw ValidationError("zero-shot ids and stacks differ in length");
  const double t = tau > 0.0 ? tau : bundle.temperature();
  const ag::Matrix images = image_embeddings(bundle, stacks);
  std::vector<ZeroShotRow> rows;
  for (const auto& q : queries) {
    const ag::Matrix text = text_embeddings(bundle, q.sentences);
    const std::string feature(semantics::spec(q.feature).name);
    for (Eigen::Index i = 0; i < images.rows(); ++i) {
      const auto probs = zero_shot_scores(images.row(i), text, t);
      for (std::size_t j = 0; j < probs.size(); ++j) {
        const auto& [patient, nodule] = ids[static_cast<std::size_t>(i)];
        rows.push_back({patient, nodule, feature, q.classes[j], probs[j]});
      }
    }
  }
  return rows;
}

void write_nodule_risks(std::span<const NoduleRisk> risks, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "patient_id,nodule_id,fold,probability\n";
  for (const auto& r : risks) {
    os << csv_field(r.patient_id) << ',' << csv_field(r.nodule_id) << ',' << r.fold << ','
       << fmt::format("{:.17g}", r.probability) << '\n';
  }
}

std::vector<NoduleRisk> read_nodule_risks(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto p = t.column("patient_id"), n = t.column("nodule_id"), f = t.column("fold"), pr = t.column("probability");
  std::vector<NoduleRisk> out;
  for (const auto& row : t.rows) {
    int fold = 0;
    try {
      fold = std::stoi(row[f]);
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ": fold '" + row[f] + "' is not an integer");
    }
    out.push_back({row[p], row[n], parse_probability(row[pr], path), fold});
  }
  return out;
}

void write_patient_risks(std::span<const PatientRisk> risks, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "patient_id,probability\n";
  for (const auto& r : risks) os << csv_field(r.patient_id) << ',' << fmt::format("{:.17g}", r.probability) << '\n';
}

std::vector<PatientRisk> read_patient_risks(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto p = t.column("patient_id"), pr = t.column("probability");
  std::vector<PatientRisk> out;
  for (const auto& row : t.rows) out.push_back({row[p], parse_probability(row[pr], path)});
  return out;
}

void write_zero_shot(std::span<const ZeroShotRow> rows, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "patient_id,nodule_id,feature,class,probability\n";
  for (const auto& r : rows) {
    os << csv_field(r.patient_id) << ',' << csv_field(r.nodule_id) << ',' << csv_field(r.feature) << ','
       << csv_field(r.cls) << ',' << fmt::format("{:.17g}", r.probability) << '\n';
  }
}

}  // namespace noduleclip::infer
