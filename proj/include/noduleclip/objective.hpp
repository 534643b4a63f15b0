#pragma once

#include <array>
#include <vector>

#include "noduleclip/model/autograd.hpp"

// Contrastive alignment plus class-weighted cross-entropy on both branches.
namespace noduleclip::objective {

struct LossWeights {
  double clip = 1.0;
  double ce_image = 1.0;
  double ce_text = 1.0;
  std::array<double, 2> class_weights{1.0, 1.0};

  void validate() const;
};

// Inverse class frequency, rescaled so the two weights average 1. A class
// missing from `labels` gets weight 1 and the other class keeps weight 1.
std::array<double, 2> inverse_frequency_weights(const std::vector<int>& labels);

// 1 x 1 log-temperature constant; throws for tau <= 0.
ag::Var log_temperature(double tau);

// Cosine similarity matrix of the row-normalized inputs divided by
// exp(log_tau): entry (i, j) pairs image row i with text row j.
ag::Var similarity_logits(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau);

// -(1/B) sum_i log softmax_j(sim(I_i, S_j) / tau)[i]
ag::Var info_nce_image(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau);
// -(1/B) sum_i log softmax_k(sim(I_k, S_i) / tau)[i]
ag::Var info_nce_semantic(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau);
// Mean of the two InfoNCE terms.
ag::Var clip_loss(const ag::Var& image, const ag::Var& text, const ag::Var& log_tau);

// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i]
ag::Var weighted_cross_entropy(const ag::Var& logits, const std::vector<int>& labels,
                               const std::array<double, 2>& class_weights);

struct LossTerms {
  ag::Var total;
  ag::Var clip;
  ag::Var ce_image;
  ag::Var ce_text;
};

LossTerms total_loss(const ag::Var& image_embedding, const ag::Var& text_embedding, const ag::Var& image_logits,
                     const ag::Var& text_logits, const std::vector<int>& labels, const ag::Var& log_tau,
                     const LossWeights& weights);

}  // namespace noduleclip::objective
