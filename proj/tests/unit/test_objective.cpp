#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "noduleclip/common/error.hpp"
#include "noduleclip/common/random.hpp"
#include "noduleclip/objective.hpp"
#include "support/gradcheck.hpp"

namespace ag = noduleclip::ag;
namespace obj = noduleclip::objective;
using noduleclip::Rng;
using noduleclip::ValidationError;

namespace {

ag::Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  ag::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Plain-loop InfoNCE from the definition; `transpose` swaps the roles of
// the two embedding sets.
double oracle_info_nce(const ag::Matrix& I, const ag::Matrix& S, double tau, bool transpose) {
  const auto B = I.rows();
  auto cosine = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); };
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    double denom = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
      const double s = transpose ? cosine(I.row(j), S.row(i)) : cosine(I.row(i), S.row(j));
      denom += std::exp(s / tau);
    }
    total += -std::log(std::exp(cosine(I.row(i), S.row(i)) / tau) / denom);
  }
  return total / static_cast<double>(B);
}

}  // namespace

TEST(Objective, IdenticalRowsGiveLogB) {
  Rng rng(1);
  for (int B : {2, 4, 16}) {
    ag::Matrix row = random_matrix(1, 256, rng);
    const ag::Var I = ag::constant(row.replicate(B, 1));
    const ag::Var S = ag::constant(row.replicate(B, 1));
    for (double tau : {0.03, 1.0}) {
      const auto lt = obj::log_temperature(tau);
      EXPECT_NEAR(obj::info_nce_image(I, S, lt).scalar(), std::log(B), 1e-9);
      EXPECT_NEAR(obj::info_nce_semantic(I, S, lt).scalar(), std::log(B), 1e-9);
      EXPECT_NEAR(obj::clip_loss(I, S, lt).scalar(), std::log(B), 1e-9);
    }
  }
}

TEST(Objective, TwoByTwoClosedForm) {
  const ag::Var I = ag::constant(ag::Matrix::Identity(2, 4));
  const ag::Var S = ag::constant(ag::Matrix::Identity(2, 4));
  const double expected = std::log(1.0 + std::exp(-1.0));
  EXPECT_NEAR(expected, 0.31326, 1e-5);
  EXPECT_NEAR(obj::info_nce_image(I, S, obj::log_temperature(1.0)).scalar(), expected, 1e-12);
  EXPECT_NEAR(obj::clip_loss(I, S, obj::log_temperature(1.0)).scalar(), expected, 1e-12);
  EXPECT_LT(obj::clip_loss(I, S, obj::log_temperature(1e-3)).scalar(), 1e-12);
}

TEST(Objective, SemanticTermMatchesTransposedOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const ag::Matrix I = random_matrix(2 + trial, 6, rng);
    const ag::Matrix S = random_matrix(2 + trial, 6, rng);
    const double tau = 0.1 + 0.3 * trial;
    const auto lt = obj::log_temperature(tau);
    const double img = obj::info_nce_image(ag::constant(I), ag::constant(S), lt).scalar();
    const double sem = obj::info_nce_semantic(ag::constant(I), ag::constant(S), lt).scalar();
    EXPECT_NEAR(img, oracle_info_nce(I, S, tau, false), 1e-10);
    EXPECT_NEAR(sem, oracle_info_nce(I, S, tau, true), 1e-10);
    EXPECT_NEAR(obj::clip_loss(ag::constant(I), ag::constant(S), lt).scalar(), 0.5 * (img + sem), 1e-12);
  }
}

TEST(Objective, SymmetricSimilarityMakesBothTermsEqual) {
  Rng rng(3);
  const ag::Matrix X = random_matrix(5, 8, rng);
  const auto lt = obj::log_temperature(0.5);
  const double img = obj::info_nce_image(ag::constant(X), ag::constant(X), lt).scalar();
  const double sem = obj::info_nce_semantic(ag::constant(X), ag::constant(X), lt).scalar();
  EXPECT_NEAR(img, sem, 1e-12);
  EXPECT_NEAR(obj::clip_loss(ag::constant(X), ag::constant(X), lt).scalar(), img, 1e-12);
}

TEST(Objective, InvalidBatchesAndTemperatures) {
  const ag::Var one = ag::constant(ag::Matrix::Ones(1, 4));
  EXPECT_THROW(obj::clip_loss(one, one, obj::log_temperature(1.0)), ValidationError);
  EXPECT_THROW(obj::log_temperature(0.0), ValidationError);
  EXPECT_THROW(obj::log_temperature(-1.0), ValidationError);
}

TEST(Objective, CrossEntropyUniformLogits) {
  const ag::Var logits = ag::constant(ag::Matrix::Zero(3, 2));
  EXPECT_NEAR(obj::weighted_cross_entropy(logits, {0, 1, 1}, {1.0, 1.0}).scalar(), std::log(2.0), 1e-12);
}

TEST(Objective, CrossEntropyZeroTotalWeight) {
  const ag::Var logits = ag::constant(ag::Matrix::Zero(2, 2));
  try {
    obj::weighted_cross_entropy(logits, {1, 1}, {1.0, 0.0});
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("zero total weight"), std::string::npos);
  }
  EXPECT_THROW(obj::weighted_cross_entropy(logits, {0, 2}, {1.0, 1.0}), ValidationError);
}

TEST(Objective, CrossEntropyHandBatch) {
  ag::Matrix l(2, 2);
  l << 0.3, -1.2, 2.0, 0.5;
  const std::vector<int> y{1, 0};
  const double w[2] = {1.0, 3.0};
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double lse = std::log(std::exp(l(i, 0)) + std::exp(l(i, 1)));
    num += w[y[i]] * (lse - l(i, y[i]));
    den += w[y[i]];
  }
  EXPECT_NEAR(obj::weighted_cross_entropy(ag::constant(l), y, {1.0, 3.0}).scalar(), num / den, 1e-12);
}

TEST(Objective, TotalLossComposition) {
  Rng rng(4);
  const ag::Var I = ag::constant(random_matrix(4, 16, rng));
  const ag::Var S = ag::constant(random_matrix(4, 16, rng));
  const ag::Var li = ag::constant(random_matrix(4, 2, rng));
  const ag::Var lt_ = ag::constant(random_matrix(4, 2, rng));
  const std::vector<int> y{0, 1, 1, 0};
  const auto tau = obj::log_temperature(0.07);
  const double clip = obj::clip_loss(I, S, tau).scalar();
  const double cei = obj::weighted_cross_entropy(li, y, {1.0, 1.0}).scalar();
  const double cet = obj::weighted_cross_entropy(lt_, y, {1.0, 1.0}).scalar();

  obj::LossWeights w;
  EXPECT_NEAR(obj::total_loss(I, S, li, lt_, y, tau, w).total.scalar(), clip + cei + cet, 1e-12);
  w.ce_image = w.ce_text = 0.0;
  EXPECT_NEAR(obj::total_loss(I, S, li, lt_, y, tau, w).total.scalar(), clip, 1e-12);
  w.clip = 2.0;
  EXPECT_NEAR(obj::total_loss(I, S, li, lt_, y, tau, w).total.scalar(), 2.0 * clip, 1e-12);
  w.clip = 0.0;
  EXPECT_THROW(obj::total_loss(I, S, li, lt_, y, tau, w), ValidationError);
}

TEST(Objective, PermutationEquivariance) {
  Rng rng(5);
  const ag::Matrix I = random_matrix(6, 10, rng), S = random_matrix(6, 10, rng);
  const ag::Matrix li = random_matrix(6, 2, rng), lt_ = random_matrix(6, 2, rng);
  const std::vector<int> y{0, 1, 0, 0, 1, 1};
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  ag::Matrix Ip(6, 10), Sp(6, 10), lip(6, 2), ltp(6, 2);
  std::vector<int> yp(6);
  for (int i = 0; i < 6; ++i) {
    Ip.row(i) = I.row(perm[i]);
    Sp.row(i) = S.row(perm[i]);
    lip.row(i) = li.row(perm[i]);
    ltp.row(i) = lt_.row(perm[i]);
    yp[i] = y[perm[i]];
  }
  const auto tau = obj::log_temperature(0.2);
  obj::LossWeights w;
  w.class_weights = {0.7, 1.3};
  const double a = obj::total_loss(ag::constant(I), ag::constant(S), ag::constant(li), ag::constant(lt_), y, tau, w)
                       .total.scalar();
  const double b = obj::total_loss(ag::constant(Ip), ag::constant(Sp), ag::constant(lip), ag::constant(ltp), yp, tau, w)
                       .total.scalar();
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  ag::Var I = ag::parameter(random_matrix(4, 6, rng));
  ag::Var S = ag::parameter(random_matrix(4, 6, rng));
  ag::Var li = ag::parameter(random_matrix(4, 2, rng));
  ag::Var lt_ = ag::parameter(random_matrix(4, 2, rng));
  ag::Var tau = ag::parameter(ag::Matrix::Constant(1, 1, std::log(0.3)));
  const std::vector<int> y{1, 0, 0, 1};
  obj::LossWeights w;
  w.class_weights = {0.5, 1.5};
  auto loss = [&] { return obj::total_loss(I, S, li, lt_, y, tau, w).total; };
  ag::backward(loss());
  for (ag::Var* p : {&I, &S, &li, &lt_, &tau}) {
    for (Eigen::Index r = 0; r < p->rows(); ++r) {
      for (Eigen::Index c = 0; c < p->cols(); ++c) {
        const double numeric = nc_test::numeric_grad(*p, r, c, [&] { return loss().scalar(); }, 1e-6);
        EXPECT_LT(nc_test::relative_error(p->grad()(r, c), numeric, 1e-7), 1e-4);
      }
    }
  }
}

TEST(Objective, ClipLossIsNonNegative) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const ag::Var I = ag::constant(random_matrix(5, 4, rng));
    const ag::Var S = ag::constant(random_matrix(5, 4, rng));
    EXPECT_GE(obj::clip_loss(I, S, obj::log_temperature(0.01 + 0.1 * trial)).scalar(), 0.0);
  }
}

TEST(Objective, InverseFrequencyWeights) {
  const auto w = obj::inverse_frequency_weights({0, 0, 0, 1});
  EXPECT_NEAR(0.5 * (w[0] + w[1]), 1.0, 1e-12);
  EXPECT_NEAR(w[1] / w[0], 3.0, 1e-12);
  const auto same = obj::inverse_frequency_weights({1, 1});
  EXPECT_EQ(same[0], 1.0);
  EXPECT_EQ(same[1], 1.0);
}
