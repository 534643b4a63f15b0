#include <algorithm>
#include <cmath>
#include <map>

#include "noduleclip/common/error.hpp"
#include "noduleclip/train.hpp"

namespace noduleclip::train {

SamplerWeights build_sampler(std::span<const semantics::SemanticFeatureSet> cohort) {
  if (cohort.empty()) throw ValidationError("sampler needs a non-empty cohort");
  std::vector<std::vector<std::pair<std::string, std::string>>> values;
  std::map<std::pair<std::string, std::string>, int> frequency;
  for (const auto& f : cohort) {
    values.push_back(f.feature_values());
    for (const auto& v : values.back()) ++frequency[v];
  }
  SamplerWeights out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].empty()) {
      throw ValidationError("sampler: nodule " + std::to_string(i) + " has no annotated semantic feature");
    }
    double sum = 0.0;
    for (const auto& v : values[i]) sum += 1.0 / frequency[v];
    out.weights.push_back(sum / static_cast<double>(values[i].size()));
  }
  double mean = 0.0;
  for (double w : out.weights) mean += w;
  mean /= static_cast<double>(out.weights.size());
  for (double& w : out.weights) w /= mean;
  return out;
}

std::size_t sample_index(std::span<const double> cumulative, Rng& rng) {
  if (cumulative.empty() || !(cumulative.back() > 0.0)) throw ValidationError("sampling from empty weights");
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

bool AdamW::decays(const std::string& name) {
  if (name == "log_temperature") return false;
  const std::string bias = ".bias", weight = ".weight";
  if (name.size() >= bias.size() && name.compare(name.size() - bias.size(), bias.size(), bias) == 0) return false;
  if (name.size() > weight.size() && name.compare(name.size() - weight.size(), weight.size(), weight) == 0) {
    const std::string owner = name.substr(0, name.size() - weight.size());
    const auto dot = owner.rfind('.');
    const std::string leaf = dot == std::string::npos ? owner : owner.substr(dot + 1);
    if (leaf.rfind("ln_", 0) == 0) return false;
  }
  return true;
}

AdamW::AdamW(const std::vector<const model::ParamEntry*>& params, Options options) : options_(options) {
  for (const auto* p : params) {
    if (!p->var.defined()) throw ValidationError("optimizer given an unallocated parameter " + p->name);
    slots_.push_back({p->var, ag::Matrix::Zero(p->rows, p->cols), ag::Matrix::Zero(p->rows, p->cols), decays(p->name)});
  }
}

void AdamW::step() {
  ++t_;
  const auto& o = options_;
  const double c1 = 1.0 - std::pow(o.beta1, t_);
  const double c2 = 1.0 - std::pow(o.beta2, t_);
  for (auto& s : slots_) {
    if (!s.var.has_grad()) continue;
    const ag::Matrix& g = s.var.grad();
    ag::Matrix& p = s.var.mutable_value();
    if (s.decay && o.weight_decay > 0.0) p *= 1.0 - o.lr * o.weight_decay;
    s.m = o.beta1 * s.m + (1.0 - o.beta1) * g;
    s.v = o.beta2 * s.v + (1.0 - o.beta2) * g.cwiseProduct(g);
    p.array() -= o.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + o.eps);
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.var.zero_grad();
}

TrainLog::TrainLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw RuntimeFailure("cannot open training log " + path.string());
}

void TrainLog::write(const nlohmann::json& record) {
  if (!out_.is_open()) return;
  out_ << record.dump() << '\n';
  out_.flush();
}

}  // namespace noduleclip::train
