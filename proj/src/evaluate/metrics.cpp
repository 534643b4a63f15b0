#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "noduleclip/common/error.hpp"
#include "noduleclip/common/random.hpp"
#include "noduleclip/evaluate.hpp"

namespace noduleclip::evaluate {
namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("label outside {0,1} at index " + std::to_string(i));
    if (!std::isfinite(scores[i])) throw ValidationError("non-finite score at index " + std::to_string(i));
  }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {pos, labels.size() - pos};
}

void require_both_classes(std::span<const int> labels, const char* what) {
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) throw ValidationError(std::string(what) + " needs both classes present");
}

std::vector<std::size_t> order_descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  require_both_classes(labels, "AUROC");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of doubled average ranks of the positives keeps everything integral.
  double pos_rank2 = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double rank2 = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]] == 1) pos_rank2 += rank2;
    }
    i = j;
  }
  const auto [pos, neg] = class_counts(labels);
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  const double u2 = pos_rank2 - p * (p + 1.0);
  return u2 / (2.0 * p * n);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0) throw ValidationError("AUPRC needs at least one positive");
  const auto idx = order_descending(scores);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::vector<OperatingPoint> operating_points(std::span<const double> scores, std::span<const int> labels,
                                             std::span<const double> targets) {
  check_inputs(scores, labels);
  require_both_classes(labels, "operating points");
  std::vector<double> pos_scores, neg_scores;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? pos_scores : neg_scores).push_back(scores[i]);
  std::sort(pos_scores.begin(), pos_scores.end(), std::greater<>());
  std::sort(neg_scores.begin(), neg_scores.end(), std::greater<>());

  struct Candidate {
    double threshold, recall, fpr, precision;
  };
  std::vector<Candidate> candidates;
  const double P = static_cast<double>(pos_scores.size()), N = static_cast<double>(neg_scores.size());
  for (std::size_t i = 0; i < pos_scores.size();) {
    const double t = pos_scores[i];
    std::size_t j = i;
    while (j < pos_scores.size() && pos_scores[j] == t) ++j;
    const auto fp = static_cast<double>(
        std::upper_bound(neg_scores.begin(), neg_scores.end(), t, std::greater<>()) - neg_scores.begin());
    const double tp = static_cast<double>(j);
    candidates.push_back({t, tp / P, fp / N, tp / (tp + fp)});
    i = j;
  }

  constexpr double kTieTolerance = 1e-9;
  std::vector<OperatingPoint> out;
  for (double target : targets) {
    if (!(target >= 0.0 && target <= 1.0)) throw ValidationError("recall target outside [0, 1]");
    const Candidate* best = nullptr;
    double best_dist = 0.0;
    for (const auto& c : candidates) {
      const double dist = std::abs(c.recall - target);
      if (!best || dist < best_dist - kTieTolerance ||
          (std::abs(dist - best_dist) <= kTieTolerance && c.recall > best->recall)) {
        best = &c;
        best_dist = dist;
      }
    }
    out.push_back({target, best->recall, best->fpr, best->precision, best->threshold});
  }
  return out;
}

void BootstrapConfig::validate() const {
  if (n_draws < 1) throw ValidationError("bootstrap needs at least one draw");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("bootstrap level must lie in (0, 1)");
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, const Metric& metric,
                      const BootstrapConfig& config, std::span<const std::string> clusters) {
  config.validate();
  check_inputs(scores, labels);
  metric(scores, labels);  // undefined on the full sample -> throws

  // Resampling units: single rows, or all rows of one cluster.
  std::vector<std::vector<std::size_t>> units;
  if (clusters.empty()) {
    for (std::size_t i = 0; i < scores.size(); ++i) units.push_back({i});
  } else {
    if (clusters.size() != scores.size()) throw ValidationError("cluster ids and scores differ in length");
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      auto [it, fresh] = slot.try_emplace(clusters[i], units.size());
      if (fresh) units.emplace_back();
      units[it->second].push_back(i);
    }
  }

  constexpr int kMaxRedraws = 10000;
  std::vector<double> stats(static_cast<std::size_t>(config.n_draws));
  std::vector<double> s;
  std::vector<int> y;
  for (int d = 0; d < config.n_draws; ++d) {
    Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(d)}));
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) throw RuntimeFailure("bootstrap could not draw a resample with both classes");
      s.clear();
      y.clear();
      for (std::size_t k = 0; k < units.size(); ++k) {
        for (std::size_t i : units[rng.index(units.size())]) {
          s.push_back(scores[i]);
          y.push_back(labels[i]);
        }
      }
      const auto pos = std::count(y.begin(), y.end(), 1);
      if (pos > 0 && pos < static_cast<std::ptrdiff_t>(y.size())) break;
    }
    stats[static_cast<std::size_t>(d)] = metric(s, y);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - config.level;
  return {quantile_sorted(stats, alpha / 2.0), quantile_sorted(stats, 1.0 - alpha / 2.0)};
}

double weighted_auroc(const Eigen::MatrixXd& scores, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(scores.rows());
  if (labels.size() != n) throw ValidationError("score rows and labels differ in length");
  const auto k = static_cast<int>(scores.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int l : labels) {
    if (l < 0 || l >= k) throw ValidationError("class label outside the score columns");
    ++counts[static_cast<std::size_t>(l)];
  }
  std::vector<double> aucs, weights;
  std::vector<double> column(n);
  std::vector<int> one_vs_rest(n);
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores(static_cast<Eigen::Index>(i), c);
      one_vs_rest[i] = labels[i] == c ? 1 : 0;
    }
    if (counts[static_cast<std::size_t>(c)] == n) break;  // single class; caught below
    aucs.push_back(auroc(column, one_vs_rest));
    weights.push_back(static_cast<double>(counts[static_cast<std::size_t>(c)]));
  }
  if (aucs.size() < 2) throw ValidationError("weighted AUROC needs at least 2 classes present");
  // Binary problems give the same AUROC for both columns; return it untouched.
  if (std::all_of(aucs.begin(), aucs.end(), [&](double a) { return a == aucs.front(); })) return aucs.front();
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double out = 0.0;
  for (std::size_t i = 0; i < aucs.size(); ++i) out += weights[i] / total * aucs[i];
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& op : operating_points) {
    ops.push_back({{"target_recall", op.target_recall},
                   {"achieved_recall", op.achieved_recall},
                   {"fpr", op.fpr},
                   {"precision", op.precision},
                   {"threshold", op.threshold}});
  }
  return {{"n", n},
          {"n_positive", n_positive},
          {"auroc", auroc},
          {"auprc", auprc},
          {"ci", {{"auroc", {auroc_ci.lower, auroc_ci.upper}}, {"auprc", {auprc_ci.lower, auprc_ci.upper}}}},
          {"bootstrap", {{"n_draws", bootstrap.n_draws}, {"seed", bootstrap.seed}, {"level", bootstrap.level}}},
          {"operating_points", ops}};
}

MetricsReport evaluate_predictions(std::span<const double> scores, std::span<const int> labels,
                                   const BootstrapConfig& bootstrap, std::span<const double> targets,
                                   std::span<const std::string> clusters) {
  MetricsReport r;
  r.n = scores.size();
  r.n_positive = class_counts(labels).first;
  r.auroc = evaluate::auroc(scores, labels);
  r.auprc = evaluate::auprc(scores, labels);
  r.bootstrap = bootstrap;
  const Metric auc = [](auto s, auto y) { return evaluate::auroc(s, y); };
  const Metric ap = [](auto s, auto y) { return evaluate::auprc(s, y); };
  r.auroc_ci = bootstrap_ci(scores, labels, auc, bootstrap, clusters);
  r.auprc_ci = bootstrap_ci(scores, labels, ap, bootstrap, clusters);
  r.operating_points = evaluate::operating_points(scores, labels, targets);
  return r;
}

}  // namespace noduleclip::evaluate
