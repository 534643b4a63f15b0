#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "noduleclip/common/random.hpp"
#include "noduleclip/evaluate.hpp"

// Brute-force references for the ranking metrics.
namespace nc_test {

using noduleclip::Rng;
using noduleclip::evaluate::OperatingPoint;

struct Dataset {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Random dataset with both classes and deliberately coarse scores so ties occur.
inline Dataset random_dataset(Rng& rng, std::size_t max_n = 50) {
  Dataset d;
  const std::size_t n = 2 + rng.index(max_n - 1);
  const double grid = rng.bernoulli(0.5) ? 10.0 : 1000.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.bernoulli(0.4) ? 1 : 0;
    d.labels.push_back(y);
    d.scores.push_back(std::round((rng.uniform() + 0.3 * y) * grid) / grid);
  }
  d.labels[0] = 0;
  d.labels[1] = 1;
  return d;
}

inline double oracle_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return good / pairs;
}

struct Sweep {
  double threshold, tp, fp;
};

// Every distinct score as a threshold, highest first, counted from scratch.
inline std::vector<Sweep> sweep(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  std::vector<Sweep> out;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] == 1 ? tp : fp) += 1;
    }
    out.push_back({t, tp, fp});
  }
  return out;
}

inline double oracle_auprc(const std::vector<double>& s, const std::vector<int>& y) {
  const double P = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double ap = 0.0, prev = 0.0;
  for (const auto& p : sweep(s, y)) {
    const double recall = p.tp / P;
    ap += (recall - prev) * (p.tp / (p.tp + p.fp));
    prev = recall;
  }
  return ap;
}

// For each target: the attainable recall closest to it (ties to the higher
// recall), at the threshold with the fewest false positives for that recall.
inline std::vector<OperatingPoint> oracle_operating_points(const std::vector<double>& s, const std::vector<int>& y,
                                                    const std::vector<double>& targets) {
  const double P = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double N = static_cast<double>(y.size()) - P;
  std::map<double, Sweep> best_for_tp;  // keyed by tp
  for (const auto& p : sweep(s, y)) {
    if (p.tp == 0) continue;
    auto it = best_for_tp.find(p.tp);
    if (it == best_for_tp.end() || p.fp < it->second.fp) best_for_tp[p.tp] = p;
  }
  std::vector<OperatingPoint> out;
  for (double target : targets) {
    const Sweep* chosen = nullptr;
    for (const auto& [tp, p] : best_for_tp) {
      const double d = std::abs(tp / P - target);
      if (!chosen) {
        chosen = &p;
        continue;
      }
      const double dc = std::abs(chosen->tp / P - target);
      if (d < dc - 1e-9 || (std::abs(d - dc) <= 1e-9 && tp > chosen->tp)) chosen = &p;
    }
    out.push_back({target, chosen->tp / P, chosen->fp / N, chosen->tp / (chosen->tp + chosen->fp), chosen->threshold});
  }
  return out;
}

}  // namespace nc_test
