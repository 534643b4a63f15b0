#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "noduleclip/common/error.hpp"
#include "noduleclip/infer.hpp"

namespace noduleclip::infer {
namespace {

// Keeps the Hessian invertible and the fit finite on separable data.
constexpr double kRidge = 1e-3;
constexpr int kMaxNewtonSteps = 200;

double clamp_prob(double p) {
  if (!std::isfinite(p)) throw ValidationError("non-finite probability");
  return std::clamp(p, kCalibrationEpsilon, 1.0 - kCalibrationEpsilon);
}

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct Design {
  Eigen::MatrixXd x;  // n x 3: ln p, -ln(1 - p), 1
  Eigen::VectorXd y;
};

double objective(const Design& d, const Eigen::Vector3d& theta) {
  const Eigen::VectorXd z = d.x * theta;
  double nll = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) nll += log1pexp(z(i)) - d.y(i) * z(i);
  return nll + 0.5 * kRidge * (theta(0) * theta(0) + theta(1) * theta(1));
}

// Newton with step halving over the coefficients flagged in `free`; the rest stay 0.
Eigen::Vector3d newton_fit(const Design& d, const std::array<bool, 3>& free) {
  std::vector<int> idx;
  for (int j = 0; j < 3; ++j) {
    if (free[static_cast<std::size_t>(j)]) idx.push_back(j);
  }
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
  double f = objective(d, theta);
  for (int it = 0; it < kMaxNewtonSteps; ++it) {
    const Eigen::VectorXd z = d.x * theta;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z(i)));
      const double w = p * (1.0 - p);
      for (Eigen::Index r = 0; r < m; ++r) {
        const double xr = d.x(i, idx[static_cast<std::size_t>(r)]);
        g(r) += (p - d.y(i)) * xr;
        for (Eigen::Index c = 0; c < m; ++c) h(r, c) += w * xr * d.x(i, idx[static_cast<std::size_t>(c)]);
      }
    }
    for (Eigen::Index r = 0; r < m; ++r) {
      if (idx[static_cast<std::size_t>(r)] < 2) {
        g(r) += kRidge * theta(idx[static_cast<std::size_t>(r)]);
        h(r, r) += kRidge;
      }
    }
    h.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = h.ldlt().solve(g);
    double t = 1.0;
    Eigen::Vector3d next = theta;
    double f_next = f;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      next = theta;
      for (Eigen::Index r = 0; r < m; ++r) next(idx[static_cast<std::size_t>(r)]) -= t * step(r);
      f_next = objective(d, next);
      if (f_next <= f) break;
    }
    const double moved = (next - theta).cwiseAbs().maxCoeff();
    theta = next;
    const bool flat = f - f_next <= 1e-14 * std::max(1.0, std::abs(f));
    f = f_next;
    if (moved < 1e-10 || flat) break;
  }
  return theta;
}

}  // namespace

double BetaCalibrator::apply(double p) const {
  const double q = clamp_prob(p);
  const double z = a * std::log(q) - b * std::log1p(-q) + c;
  return 1.0 / (1.0 + std::exp(-z));
}

std::vector<double> BetaCalibrator::apply(std::span<const double> p) const {
  std::vector<double> out(p.size());
  std::transform(p.begin(), p.end(), out.begin(), [&](double x) { return apply(x); });
  return out;
}

nlohmann::json BetaCalibrator::to_json() const { return {{"a", a}, {"b", b}, {"c", c}}; }

BetaCalibrator BetaCalibrator::from_json(const nlohmann::json& j) {
  BetaCalibrator cal{j.at("a").get<double>(), j.at("b").get<double>(), j.at("c").get<double>()};
  if (!(cal.a >= 0.0 && cal.b >= 0.0 && std::isfinite(cal.c))) {
    throw ValidationError("beta calibrator needs a, b >= 0 and finite c");
  }
  return cal;
}

BetaCalibrator fit_beta_calibration(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size()) throw ValidationError("probabilities and labels differ in length");
  Design d{Eigen::MatrixXd(static_cast<Eigen::Index>(probs.size()), 3),
           Eigen::VectorXd(static_cast<Eigen::Index>(probs.size()))};
  int positives = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("calibration labels must be 0 or 1");
    const double q = clamp_prob(probs[i]);
    const auto r = static_cast<Eigen::Index>(i);
    d.x(r, 0) = std::log(q);
    d.x(r, 1) = -std::log1p(-q);
    d.x(r, 2) = 1.0;
    d.y(r) = labels[i];
    positives += labels[i];
  }
  if (positives == 0 || positives == static_cast<int>(probs.size())) {
    throw ValidationError("beta calibration needs both classes present");
  }

  std::array<bool, 3> free{true, true, true};
  Eigen::Vector3d theta = newton_fit(d, free);
  // Project onto a, b >= 0: drop the most negative slope and refit.
  while (true) {
    int worst = -1;
    for (int j = 0; j < 2; ++j) {
      if (free[static_cast<std::size_t>(j)] && theta(j) < 0.0 && (worst < 0 || theta(j) < theta(worst))) worst = j;
    }
    if (worst < 0) break;
    free[static_cast<std::size_t>(worst)] = false;
    theta = newton_fit(d, free);
  }
  return {std::max(0.0, theta(0)), std::max(0.0, theta(1)), theta(2)};
}

}  // namespace noduleclip::infer
