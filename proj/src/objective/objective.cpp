#include "noduleclip/objective.hpp"

#include <cmath>
#include <string>

#include "noduleclip/common/error.hpp"

namespace noduleclip::objective {
namespace {

void check_batch(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau) {
  if (image.rows() != text.rows() || image.cols() != text.cols()) {
    throw ValidationError("image and text embeddings must have the same shape");
  }
  if (image.rows() < 2) throw ValidationError("InfoNCE needs a batch of at least 2");
  if (log_tau.rows() != 1 || log_tau.cols() != 1 || !std::isfinite(log_tau.scalar())) {
    throw ValidationError("temperature must be a finite positive scalar");
  }
}

// Mean negative log-probability of the diagonal under row-wise softmax.
ag::Var diagonal_nll(const ag::Var& logits) {
  std::vector<int> diag(static_cast<std::size_t>(logits.rows()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  return ag::scale(ag::mean(ag::pick(ag::log_softmax_rows(logits), diag)), -1.0);
}

ag::Var nonzero_scale(const ag::Var& v, double w) { return w == 1.0 ? v : ag::scale(v, w); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {clip, ce_image, ce_text, class_weights[0], class_weights[1]}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("loss weights must be finite and non-negative");
  }
  if (clip == 0.0 && ce_image == 0.0 && ce_text == 0.0) throw ValidationError("at least one loss weight must be positive");
  if (class_weights[0] == 0.0 && class_weights[1] == 0.0) throw ValidationError("class weights must not both be zero");
}

std::array<double, 2> inverse_frequency_weights(const std::vector<int>& labels) {
  double n[2] = {0.0, 0.0};
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("label outside {0,1}");
    n[y] += 1.0;
  }
  if (n[0] == 0.0 || n[1] == 0.0) return {1.0, 1.0};
  const double w0 = 1.0 / n[0];
  const double w1 = 1.0 / n[1];
  const double mean = 0.5 * (w0 + w1);
  return {w0 / mean, w1 / mean};
}

ag::Var log_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("temperature must be positive");
  return ag::constant(ag::Matrix::Constant(1, 1, std::log(tau)));
}

ag::Var similarity_logits(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau) {
  check_batch(image, text, log_tau);
  const ag::Var sim = ag::matmul_nt(ag::l2_normalize_rows(image), ag::l2_normalize_rows(text));
  return ag::mul_scalar(sim, ag::exp(ag::scale(log_tau, -1.0)));
}

ag::Var info_nce_image(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau) {
  return diagonal_nll(similarity_logits(image, text, log_tau));
}

ag::Var info_nce_semantic(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau) {
  return diagonal_nll(ag::transpose(similarity_logits(image, text, log_tau)));
}

ag::Var clip_loss(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau) {
  const ag::Var logits = similarity_logits(image, text, log_tau);
  return ag::scale(ag::add(diagonal_nll(logits), diagonal_nll(ag::transpose(logits))), 0.5);
}

ag::Var weighted_cross_entropy(const ag::Var& logits, const std::vector<int>& labels,
                               const std::array<double, 2>& class_weights) {
  if (logits.cols() != 2 || logits.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw ValidationError("cross-entropy expects B x 2 logits and B labels");
  }
  if (labels.empty()) throw ValidationError("cross-entropy on an empty batch");
  ag::Matrix w(logits.rows(), 1);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw ValidationError("label outside {0,1} at batch index " + std::to_string(i));
    w(static_cast<Eigen::Index>(i), 0) = class_weights[static_cast<std::size_t>(y)];
    total += class_weights[static_cast<std::size_t>(y)];
  }
  if (!(total > 0.0)) throw ValidationError("zero total weight");
  const ag::Var nll = ag::pick(ag::log_softmax_rows(logits), labels);
  return ag::scale(ag::sum(ag::mul(nll, ag::constant(std::move(w)))), -1.0 / total);
}

LossTerms total_loss(const ag::Var& image_embedding, const ag::Var& text_embedding, const ag::Var& image_logits,
                     const ag::Var& text_logits, const std::vector<int>& labels, const ag::Var& log_tau,
                     const LossWeights& weights) {
  weights.validate();
  LossTerms t;
  t.clip = clip_loss(image_embedding, text_embedding, log_tau);
  t.ce_image = weighted_cross_entropy(image_logits, labels, weights.class_weights);
  t.ce_text = weighted_cross_entropy(text_logits, labels, weights.class_weights);
  std::vector<ag::Var> parts;
  if (weights.clip != 0.0) parts.push_back(nonzero_scale(t.clip, weights.clip));
  if (weights.ce_image != 0.0) parts.push_back(nonzero_scale(t.ce_image, weights.ce_image));
  if (weights.ce_text != 0.0) parts.push_back(nonzero_scale(t.ce_text, weights.ce_text));
  t.total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) t.total = ag::add(t.total, parts[i]);
  return t;
}

}  // namespace noduleclip::objective
