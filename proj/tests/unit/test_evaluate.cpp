#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "noduleclip/common/error.hpp"
#include "noduleclip/common/random.hpp"
#include "noduleclip/evaluate.hpp"
#include "support/metric_oracles.hpp"

using namespace noduleclip;
using namespace noduleclip::evaluate;
using namespace nc_test;

TEST(Auroc, HandCase) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(auroc(s, y), 0.75);
  EXPECT_EQ(oracle_auroc(s, y), 0.75);
}

TEST(Auroc, SeparatedTiedAndErrors) {
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 1}), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValidationError);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}), ValidationError);
  EXPECT_THROW(auroc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ValidationError);
}

TEST(Auroc, MatchesPairOracleExactly) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = random_dataset(rng);
    EXPECT_EQ(auroc(d.scores, d.labels), oracle_auroc(d.scores, d.labels));
  }
  for (int trial = 0; trial < 3; ++trial) {
    const auto d = random_dataset(rng, 1000);
    EXPECT_EQ(auroc(d.scores, d.labels), oracle_auroc(d.scores, d.labels));
  }
}

TEST(Auroc, InvariantUnderMonotoneTransforms) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = random_dataset(rng);
    std::vector<double> t(d.scores.size());
    std::transform(d.scores.begin(), d.scores.end(), t.begin(), [](double x) { return std::exp(3.0 * x) - 7.0; });
    EXPECT_EQ(auroc(t, d.labels), auroc(d.scores, d.labels));
  }
}

TEST(Auprc, ClosedFormsAndOracle) {
  EXPECT_EQ(auprc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  for (int n : {2, 5, 17}) {
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = 1.0 - 0.01 * i;
    y.back() = 1;
    EXPECT_NEAR(auprc(s, y), 1.0 / n, 1e-15);
  }
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_NEAR(auprc(s, y), oracle_auprc(s, y), 1e-9);
  EXPECT_NEAR(auprc(s, y), 0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-12);
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = random_dataset(rng);
    EXPECT_EQ(auprc(d.scores, d.labels), oracle_auprc(d.scores, d.labels));
  }
  EXPECT_THROW(auprc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), ValidationError);
}

TEST(OperatingPoints, PerfectSeparation) {
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    s.push_back(0.9 + 0.001 * i);
    y.push_back(1);
    s.push_back(0.1 + 0.001 * i);
    y.push_back(0);
  }
  for (const auto& op : operating_points(s, y)) {
    EXPECT_EQ(op.fpr, 0.0);
    EXPECT_EQ(op.precision, 1.0);
  }
}

TEST(OperatingPoints, TieGoesToHigherRecall) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5, 0.3, 0.2};
  const std::vector<int> y{1, 1, 1, 1, 1, 0, 0};
  const auto ops = operating_points(s, y);
  ASSERT_EQ(ops.size(), 4u);
  EXPECT_EQ(ops[0].achieved_recall, 0.6);
  EXPECT_EQ(ops[1].achieved_recall, 0.8);  // 0.6 and 0.8 equally far from 0.7
  EXPECT_EQ(ops[2].achieved_recall, 0.8);
  EXPECT_EQ(ops[3].achieved_recall, 1.0);
  EXPECT_EQ(ops[1].threshold, 0.6);
}

TEST(OperatingPoints, MatchBruteForceSweep) {
  const std::vector<double> targets{0.6, 0.7, 0.8, 0.9};
  const std::vector<double> hs{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> hy{0, 0, 1, 1};
  Rng rng(4);
  std::vector<Dataset> sets{{hs, hy}};
  for (int trial = 0; trial < 200; ++trial) sets.push_back(random_dataset(rng));
  sets.push_back(random_dataset(rng, 1000));
  for (const auto& d : sets) {
    const auto got = operating_points(d.scores, d.labels, targets);
    const auto want = oracle_operating_points(d.scores, d.labels, targets);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].achieved_recall, want[i].achieved_recall);
      EXPECT_EQ(got[i].fpr, want[i].fpr);
      EXPECT_EQ(got[i].precision, want[i].precision);
      EXPECT_EQ(got[i].threshold, want[i].threshold);
    }
  }
}

TEST(Bootstrap, ConstantMetricGivesPointInterval) {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9, 0.95};
  const std::vector<int> y{0, 0, 1, 1, 1};
  const Metric auc = [](auto a, auto b) { return auroc(a, b); };
  const auto ci = bootstrap_ci(s, y, auc, {500, 3, 0.95});
  EXPECT_EQ(ci.lower, 1.0);
  EXPECT_EQ(ci.upper, 1.0);
}

TEST(Bootstrap, DeterministicAndMatchesIndependentResampler) {
  Rng data_rng(5);
  Dataset d;
  for (int i = 0; i < 20; ++i) {
    d.labels.push_back(i % 3 == 0 ? 1 : 0);
    d.scores.push_back(data_rng.uniform() + 0.4 * d.labels.back());
  }
  const Metric auc = [](auto a, auto b) { return auroc(a, b); };
  const BootstrapConfig cfg{2000, 77, 0.95};
  const auto ci = bootstrap_ci(d.scores, d.labels, auc, cfg);
  const auto again = bootstrap_ci(d.scores, d.labels, auc, cfg);
  EXPECT_EQ(ci.lower, again.lower);
  EXPECT_EQ(ci.upper, again.upper);

  // Second implementation of the stated procedure.
  std::vector<double> stats;
  for (int draw = 0; draw < cfg.n_draws; ++draw) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(draw)}));
    std::vector<double> s;
    std::vector<int> y;
    do {
      s.clear();
      y.clear();
      for (int i = 0; i < 20; ++i) {
        const auto k = rng.index(20);
        s.push_back(d.scores[k]);
        y.push_back(d.labels[k]);
      }
    } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
    stats.push_back(oracle_auroc(s, y));
  }
  std::sort(stats.begin(), stats.end());
  auto pct = [&](double q) {
    const double h = (stats.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(h);
    return stats[lo] + (h - lo) * (stats[std::min(lo + 1, stats.size() - 1)] - stats[lo]);
  };
  EXPECT_NEAR(ci.lower, pct(0.025), 1e-12);
  EXPECT_NEAR(ci.upper, pct(0.975), 1e-12);
  EXPECT_LT(ci.lower, ci.upper);
}

TEST(Bootstrap, IntervalNarrowsWithSampleSize) {
  const Metric auc = [](auto a, auto b) { return auroc(a, b); };
  auto mean_width = [&](int n) {
    double total = 0.0;
    for (std::uint64_t rep = 0; rep < 8; ++rep) {
      Rng rng(derive_seed(100, {static_cast<std::uint64_t>(n), rep}));
      std::vector<double> s;
      std::vector<int> y;
      for (int i = 0; i < n; ++i) {
        y.push_back(rng.bernoulli(0.4) ? 1 : 0);
        s.push_back(rng.normal(y.back() * 1.0, 1.0));
      }
      y[0] = 0;
      y[1] = 1;
      const auto ci = bootstrap_ci(s, y, auc, {400, rep, 0.95});
      total += ci.upper - ci.lower;
    }
    return total / 8.0;
  };
  const double w30 = mean_width(30), w120 = mean_width(120), w480 = mean_width(480);
  EXPECT_GT(w30, w120);
  EXPECT_GT(w120, w480);
}

TEST(Bootstrap, ClusterResamplingKeepsPatientsTogether) {
  // Every cluster has two rows, so a clustered resample always has 30 rows.
  std::vector<double> s;
  std::vector<int> y;
  std::vector<std::string> c;
  Rng rng(6);
  for (int p = 0; p < 15; ++p) {
    const int label = p % 2;
    const double v = rng.uniform() + 0.3 * label;
    for (int k = 0; k < 2; ++k) {
      s.push_back(v);
      y.push_back(label);
      c.push_back("P" + std::to_string(p));
    }
  }
  const Metric count_rows = [](auto a, auto) { return static_cast<double>(a.size()); };
  const auto ci = bootstrap_ci(s, y, count_rows, {200, 1, 0.95}, c);
  EXPECT_EQ(ci.lower, 30.0);
  EXPECT_EQ(ci.upper, 30.0);
  EXPECT_THROW(bootstrap_ci(s, y, count_rows, {200, 1, 0.95}, std::vector<std::string>{"a"}), ValidationError);
}

TEST(Bootstrap, UndefinedFullSampleRejected) {
  const Metric auc = [](auto a, auto b) { return auroc(a, b); };
  EXPECT_THROW(bootstrap_ci(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}, auc), ValidationError);
  EXPECT_THROW(BootstrapConfig({0, 1, 0.95}).validate(), ValidationError);
}

TEST(WeightedAuroc, BinaryReductionAndPerfectSeparation) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = random_dataset(rng);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(d.scores.size()), 2);
    for (std::size_t i = 0; i < d.scores.size(); ++i) {
      m(static_cast<Eigen::Index>(i), 1) = d.scores[i];
      m(static_cast<Eigen::Index>(i), 0) = -d.scores[i];
    }
    EXPECT_EQ(weighted_auroc(m, d.labels), auroc(d.scores, d.labels));
  }
  Eigen::MatrixXd perfect = Eigen::MatrixXd::Zero(6, 3);
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  for (int i = 0; i < 6; ++i) perfect(i, y[static_cast<std::size_t>(i)]) = 1.0;
  EXPECT_EQ(weighted_auroc(perfect, y), 1.0);
}

TEST(WeightedAuroc, ThreeClassHandCase) {
  Eigen::MatrixXd m(6, 3);
  m << 0.7, 0.2, 0.1,  //
      0.3, 0.4, 0.3,   //
      0.2, 0.5, 0.3,   //
      0.4, 0.35, 0.25,  //
      0.1, 0.3, 0.6,   //
      0.5, 0.1, 0.4;
  const std::vector<int> y{0, 0, 1, 1, 2, 0};
  double expected = 0.0;
  const int count[3] = {3, 2, 1};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> col(6);
    std::vector<int> ovr(6);
    for (int i = 0; i < 6; ++i) {
      col[static_cast<std::size_t>(i)] = m(i, c);
      ovr[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] == c;
    }
    expected += count[c] / 6.0 * oracle_auroc(col, ovr);
  }
  EXPECT_NEAR(weighted_auroc(m, y), expected, 1e-12);
  // An absent class is dropped and the weights renormalised.
  Eigen::MatrixXd four(6, 4);
  four << m, Eigen::VectorXd::Constant(6, 0.5);
  EXPECT_NEAR(weighted_auroc(four, y), expected, 1e-12);
  EXPECT_THROW(weighted_auroc(m, std::vector<int>{1, 1, 1, 1, 1, 1}), ValidationError);
}

TEST(Wilcoxon, FiveSameSignFloor) {
  const std::vector<double> a{0.91, 0.88, 0.90, 0.86, 0.89};
  const std::vector<double> b{0.85, 0.80, 0.84, 0.83, 0.82};
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 0.0625);
  EXPECT_DOUBLE_EQ(wilcoxon_signed_rank(b, a).p_value, 0.0625);
}

TEST(Wilcoxon, ErrorsAndZeroDifferences) {
  const std::vector<double> a{1, 2, 3};
  try {
    wilcoxon_signed_rank(a, a);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "all differences zero");
  }
  EXPECT_THROW(wilcoxon_signed_rank(a, std::vector<double>{1, 2}), ValidationError);
}

TEST(Wilcoxon, MatchesExhaustiveSignEnumeration) {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(11));
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(std::round(rng.normal() * 4.0) / 4.0);
      b.push_back(std::round(rng.normal() * 4.0) / 4.0 + 0.1 * (i % 2));
    }
    std::vector<double> d;
    for (int i = 0; i < n; ++i) {
      if (a[i] != b[i]) d.push_back(std::abs(a[i] - b[i]));
    }
    if (d.size() < 2) continue;
    // Average ranks by counting.
    std::vector<double> ranks;
    for (double x : d) {
      double less = 0, equal = 0;
      for (double z : d) {
        less += z < x;
        equal += z == x;
      }
      ranks.push_back(less + (equal + 1.0) / 2.0);
    }
    double observed_plus = 0.0, total = 0.0;
    for (int i = 0, k = 0; i < n; ++i) {
      if (a[i] == b[i]) continue;
      total += ranks[static_cast<std::size_t>(k)];
      if (a[i] > b[i]) observed_plus += ranks[static_cast<std::size_t>(k)];
      ++k;
    }
    const double observed = std::min(observed_plus, total - observed_plus);
    const auto m = d.size();
    double extreme = 0.0;
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      double plus = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (mask & (1u << i)) plus += ranks[i];
      }
      if (std::min(plus, total - plus) <= observed + 1e-9) extreme += 1.0;
    }
    const auto r = wilcoxon_signed_rank(a, b);
    EXPECT_EQ(r.statistic, observed);
    EXPECT_NEAR(r.p_value, extreme / std::ldexp(1.0, static_cast<int>(m)), 1e-12) << "n=" << m;
  }
  // n = 6 hand case; reference value from an independent statistics package.
  const std::vector<double> a{0.9, 0.85, 0.7, 0.95, 0.6, 0.82};
  const std::vector<double> b{0.8, 0.86, 0.65, 0.9, 0.62, 0.7};
  EXPECT_NEAR(wilcoxon_signed_rank(a, b).p_value, 0.125, 1e-12);
}

TEST(Wilcoxon, LargeSampleNormalApproximation) {
  std::vector<double> a, b;
  for (int i = 0; i < 40; ++i) {
    a.push_back(std::sin(1.3 * i));
    b.push_back(0.8 * std::sin(1.3 * i) + 0.3 * std::cos(0.7 * i));
  }
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.statistic, 408.0);
  EXPECT_NEAR(r.p_value, 0.9785533759834825, 1e-9);
}

TEST(Friedman, IdenticalGroupsAndErrors) {
  const std::vector<double> g{0.8, 0.7, 0.9, 0.85};
  const auto r = friedman_nemenyi({g, g, g});
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  for (const auto& row : r.pairwise) {
    for (double p : row) EXPECT_EQ(p, 1.0);
  }
  EXPECT_THROW(friedman_nemenyi({g, g}), ValidationError);
  EXPECT_THROW(friedman_nemenyi({g, g, {1.0}}), ValidationError);
}

TEST(Friedman, HandCaseMatchesRankSumFormula) {
  const std::vector<std::vector<double>> g{
      {0.81, 0.79, 0.85, 0.70, 0.77}, {0.80, 0.75, 0.86, 0.68, 0.74}, {0.78, 0.74, 0.80, 0.69, 0.70}};
  // Within-block ranks by hand: block 3 ranks (2, 3, 1), all others (3, 2, 1).
  const double R[3] = {3 + 3 + 2 + 3 + 3, 2 + 2 + 3 + 1 + 2, 1 + 1 + 1 + 2 + 1};
  const double n = 5, k = 3;
  const double expected = 12.0 / (n * k * (k + 1)) * (R[0] * R[0] + R[1] * R[1] + R[2] * R[2]) - 3 * n * (k + 1);
  const auto r = friedman_nemenyi(g);
  EXPECT_NEAR(r.statistic, expected, 1e-12);
  EXPECT_NEAR(r.statistic, 6.4, 1e-12);
  EXPECT_NEAR(r.p_value, std::exp(-6.4 / 2.0), 1e-12);  // chi-square with 2 df
  EXPECT_NEAR(r.p_value, 0.04076220397836611, 1e-12);

  // Nemenyi: mean rank difference over sqrt(k(k+1)/(6n)), studentized range.
  const double se = std::sqrt(k * (k + 1) / (6 * n));
  EXPECT_NEAR(r.pairwise[0][2], 1.0 - studentized_range_cdf((R[0] - R[2]) / n / se * std::sqrt(2.0), 3), 1e-12);
  EXPECT_EQ(r.pairwise[0][2], r.pairwise[2][0]);
  EXPECT_LT(r.pairwise[0][2], r.pairwise[0][1]);
}

TEST(Friedman, TieCorrectionAndBlockPermutation) {
  const std::vector<std::vector<double>> g{{1, 2, 3, 3, 5}, {1, 3, 2, 3, 4}, {2, 2, 1, 3, 3}};
  const auto r = friedman_nemenyi(g);
  EXPECT_NEAR(r.statistic, 1.0, 1e-12);
  EXPECT_NEAR(r.p_value, 0.6065306597126321, 1e-12);
  const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
  auto permuted = g;
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < 5; ++i) permuted[j][i] = g[j][perm[i]];
  }
  EXPECT_EQ(friedman_nemenyi(permuted).statistic, r.statistic);
}

TEST(StudentizedRange, ClosedFormAndTableValues) {
  for (double q : {0.3, 1.0, 2.0, 3.5}) {
    // Range of two standard normals is |Z1 - Z2| ~ |N(0, 2)|.
    const double expected = std::erf(q / 2.0);
    EXPECT_NEAR(studentized_range_cdf(q, 2), expected, 1e-10);
  }
  EXPECT_NEAR(studentized_range_cdf(3.314, 3), 0.95, 1e-3);
  EXPECT_NEAR(studentized_range_cdf(3.633, 4), 0.95, 1e-3);
  EXPECT_NEAR(studentized_range_cdf(3.858, 5), 0.95, 1e-3);
  EXPECT_NEAR(studentized_range_cdf(2.5, 5), 0.6074572367587359, 1e-8);
  EXPECT_EQ(studentized_range_cdf(0.0, 3), 0.0);
}

TEST(Report, EvaluatePredictionsFillsEveryField) {
  Rng rng(9);
  const auto d = random_dataset(rng);
  const auto r = evaluate_predictions(d.scores, d.labels, {300, 2, 0.95});
  EXPECT_EQ(r.n, d.scores.size());
  EXPECT_EQ(r.auroc, auroc(d.scores, d.labels));
  EXPECT_EQ(r.operating_points.size(), 4u);
  const auto j = r.to_json();
  EXPECT_EQ(j["ci"]["auroc"].size(), 2u);
  EXPECT_EQ(j["bootstrap"]["n_draws"], 300);
}
