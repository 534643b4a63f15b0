#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace noduleclip::evaluate {

// Mann-Whitney form: P(positive outranks negative), ties count one half.
// Throws ValidationError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Average precision: sum over distinct thresholds (descending) of
// (recall_k - recall_{k-1}) * precision_k. Tied scores form one threshold.
double auprc(std::span<const double> scores, std::span<const int> labels);

struct OperatingPoint {
  double target_recall = 0.0;
  double achieved_recall = 0.0;
  double fpr = 0.0;
  double precision = 0.0;
  double threshold = 0.0;  // predicted positive when score >= threshold
};

inline const std::vector<double> kDefaultRecallTargets{0.6, 0.7, 0.8, 0.9};

// Candidate thresholds are the distinct positive-class scores, so each
// attainable recall is reached at the highest threshold that achieves it.
// Equal distance to a target resolves toward the higher recall.
std::vector<OperatingPoint> operating_points(std::span<const double> scores, std::span<const int> labels,
                                             std::span<const double> targets = kDefaultRecallTargets);

using Metric = std::function<double(std::span<const double>, std::span<const int>)>;

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapConfig {
  int n_draws = 10000;
  std::uint64_t seed = 0;
  double level = 0.95;
  void validate() const;
};

// Percentile interval (linear interpolation between order statistics). Draw d
// uses its own stream derive_seed(seed, {d}); single-class resamples are
// redrawn from that stream. With `clusters` non-empty, whole clusters (e.g.
// patients) are resampled instead of rows.
Interval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, const Metric& metric,
                      const BootstrapConfig& config = {}, std::span<const std::string> clusters = {});

// Linear-interpolation quantile of sorted values, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

// One-vs-rest AUROC per class present in `labels`, weighted by prevalence.
// scores: samples x classes; labels index the columns.
double weighted_auroc(const Eigen::MatrixXd& scores, std::span<const int> labels);

struct MetricsReport {
  std::size_t n = 0;
  std::size_t n_positive = 0;
  double auroc = 0.0;
  double auprc = 0.0;
  Interval auroc_ci;
  Interval auprc_ci;
  std::vector<OperatingPoint> operating_points;
  BootstrapConfig bootstrap;

  nlohmann::json to_json() const;
};

MetricsReport evaluate_predictions(std::span<const double> scores, std::span<const int> labels,
                                   const BootstrapConfig& bootstrap = {},
                                   std::span<const double> targets = kDefaultRecallTargets,
                                   std::span<const std::string> clusters = {});

struct StatTestResult {
  std::string test;
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<std::vector<double>> pairwise;  // post-hoc p-values, k x k

  nlohmann::json to_json() const;
};

// Zero differences are dropped; ranks of |d| use averages for ties. The
// statistic is min(W+, W-). Exact two-sided p-value for n <= 25 (conditional
// on the tie pattern), normal approximation with tie correction above.
StatTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

// groups[j][i]: treatment j on block i. Friedman chi-square with tie
// correction and k - 1 degrees of freedom, Nemenyi pairwise p-values from the
// studentized range distribution with infinite degrees of freedom. When
// every block is fully tied the statistic is 0 and p = 1.
StatTestResult friedman_nemenyi(const std::vector<std::vector<double>>& groups);

// P(Q <= q) for the studentized range of k independent standard normals.
double studentized_range_cdf(double q, int k);

}  // namespace noduleclip::evaluate
