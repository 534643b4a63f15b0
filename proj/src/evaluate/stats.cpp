#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "noduleclip/common/error.hpp"
#include "noduleclip/evaluate.hpp"

namespace noduleclip::evaluate {
namespace {

// Average ranks (1-based) of `values`, plus the tie-group sizes.
std::vector<double> average_ranks(std::span<const double> values, std::vector<std::size_t>* ties = nullptr) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && values[idx[j]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[idx[t]] = r;
    if (ties && j - i > 1) ties->push_back(j - i);
    i = j;
  }
  return ranks;
}

double tie_sum(const std::vector<std::size_t>& ties) {
  double s = 0.0;
  for (auto t : ties) {
    const double d = static_cast<double>(t);
    s += d * d * d - d;
  }
  return s;
}

}  // namespace

StatTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("Wilcoxon needs paired samples of equal length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (!std::isfinite(diff)) throw ValidationError("non-finite paired difference");
    if (diff != 0.0) d.push_back(diff);
  }
  if (d.empty()) throw ValidationError("all differences zero");
  if (d.size() < 2) throw ValidationError("Wilcoxon needs at least 2 non-zero differences");

  std::vector<double> abs_d(d.size());
  std::transform(d.begin(), d.end(), abs_d.begin(), [](double x) { return std::abs(x); });
  std::vector<std::size_t> ties;
  const auto ranks = average_ranks(abs_d, &ties);
  double w_plus = 0.0, total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += ranks[i];
    if (d[i] > 0) w_plus += ranks[i];
  }
  const double w = std::min(w_plus, total - w_plus);
  const auto n = d.size();

  StatTestResult r;
  r.test = "wilcoxon_signed_rank";
  r.statistic = w;
  if (n <= 25) {
    // Doubled ranks are integers; count sign assignments by subset-sum DP.
    std::vector<int> rank2(n);
    for (std::size_t i = 0; i < n; ++i) rank2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
    const int max_sum = std::accumulate(rank2.begin(), rank2.end(), 0);
    std::vector<double> count(static_cast<std::size_t>(max_sum) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (int r2 : rank2) {
      for (int s = reach; s >= 0; --s) count[static_cast<std::size_t>(s + r2)] += count[static_cast<std::size_t>(s)];
      reach += r2;
    }
    const auto w2 = static_cast<int>(std::lround(2.0 * w));
    double tail = 0.0;
    for (int s = 0; s <= w2; ++s) tail += count[static_cast<std::size_t>(s)];
    r.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_sum(ties) / 48.0;
    const double z = (w - mean) / std::sqrt(var);
    r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::normal(), z));
  }
  return r;
}

double studentized_range_cdf(double q, int k) {
  if (k < 2) throw ValidationError("studentized range needs k >= 2");
  if (q <= 0.0) return 0.0;
  const boost::math::normal norm;
  auto f = [&](double z) {
    const double inner = boost::math::cdf(norm, z) - boost::math::cdf(norm, z - q);
    return boost::math::pdf(norm, z) * std::pow(inner, k - 1);
  };
  const double v = static_cast<double>(k) *
                   boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -12.0, 12.0 + q, 15, 1e-13);
  return std::clamp(v, 0.0, 1.0);
}

StatTestResult friedman_nemenyi(const std::vector<std::vector<double>>& groups) {
  const std::size_t k = groups.size();
  if (k < 3) throw ValidationError("Friedman test needs k >= 3 groups");
  const std::size_t n = groups.front().size();
  for (const auto& g : groups) {
    if (g.size() != n) throw ValidationError("Friedman test needs groups of equal length");
  }
  if (n < 1) throw ValidationError("Friedman test needs at least one block");

  std::vector<double> rank_sum(k, 0.0);
  std::vector<std::size_t> ties;
  std::vector<double> block(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) block[j] = groups[j][i];
    const auto r = average_ranks(block, &ties);
    for (std::size_t j = 0; j < k; ++j) rank_sum[j] += r[j];
  }
  const double kk = static_cast<double>(k), nn = static_cast<double>(n);
  double ss = 0.0;
  for (double R : rank_sum) ss += R * R;
  const double raw = 12.0 / (nn * kk * (kk + 1.0)) * ss - 3.0 * nn * (kk + 1.0);
  const double correction = 1.0 - tie_sum(ties) / (nn * (kk * kk * kk - kk));

  StatTestResult r;
  r.test = "friedman_nemenyi";
  if (correction <= 1e-12) {
    r.statistic = 0.0;
    r.p_value = 1.0;
  } else {
    r.statistic = std::max(0.0, raw / correction);
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(kk - 1.0), r.statistic));
  }

  const double se = std::sqrt(kk * (kk + 1.0) / (6.0 * nn));
  r.pairwise.assign(k, std::vector<double>(k, 1.0));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      const double diff = std::abs(rank_sum[a] - rank_sum[b]) / nn;
      const double p = 1.0 - studentized_range_cdf(diff / se * std::sqrt(2.0), static_cast<int>(k));
      r.pairwise[a][b] = r.pairwise[b][a] = std::clamp(p, 0.0, 1.0);
    }
  }
  return r;
}

nlohmann::json StatTestResult::to_json() const {
  return {{"test", test}, {"statistic", statistic}, {"p_value", p_value}, {"pairwise", pairwise}};
}

}  // namespace noduleclip::evaluate
