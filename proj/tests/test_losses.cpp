// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "scmd/losses.hpp"
#include "support/grad_cases.hpp"

namespace scmd {
namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  ad::Tape t;
  const std::vector<int> labels{2};
  EXPECT_NEAR(ce_loss(t.constant(Matrix::Zero(1, 4)), labels).value()(0, 0), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, MatchesLogSoftmaxPick) {
  ad::Tape t;
  const std::vector<int> labels{0, 1};
  const Matrix z = mat({{2.0, -1.0, 0.5}, {0.0, 3.0, 1.0}});
  const Matrix ce = ce_loss(t.constant(z), labels).value();
  for (Index i = 0; i < 2; ++i) {
    const double lse = std::log(z.row(i).array().exp().sum());
    EXPECT_NEAR(ce(i, 0), lse - z(i, labels[static_cast<std::size_t>(i)]), 1e-14);
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  ad::Tape t;
  const std::vector<int> labels{3};
  EXPECT_THROW(ce_loss(t.constant(Matrix::Zero(1, 3)), labels), Error);
}

TEST(KlDiv, PointMassAgainstUniform) {
  EXPECT_NEAR(kl_div(vec({1.0, 0.0}), vec({0.5, 0.5})), std::numbers::ln2, 1e-15);
}

TEST(KlDiv, IdenticalIsZero) {
  const Vector p = vec({0.2, 0.3, 0.5});
  EXPECT_EQ(kl_div(p, p), 0.0);
}

TEST(KlDiv, RejectsBadArguments) {
  EXPECT_THROW(kl_div(vec({0.5, 0.5}), vec({1.0, 0.0})), Error);
  EXPECT_THROW(kl_div(vec({0.6, 0.6}), vec({0.5, 0.5})), Error);
  EXPECT_THROW(kl_div(vec({0.5, 0.5}), vec({0.5, 0.25, 0.25})), Error);
  EXPECT_THROW(kl_div(vec({1.5, -0.5}), vec({0.5, 0.5})), Error);
}

TEST(KlDiv, NonNegativeOnRandomPairs) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const Matrix pq = testing::random_simplex_rows(rng, 2, 2 + trial % 9);
    const Vector p = pq.row(0).transpose(), q = pq.row(1).transpose();
    EXPECT_GE(kl_div(p, q), 0.0);
  }
}

TEST(KlRows, AgreesWithKlDiv) {
  Rng rng(12);
  const Matrix p = testing::random_simplex_rows(rng, 5, 4);
  const Matrix q = testing::random_simplex_rows(rng, 5, 4);
  ad::Tape t;
  const Matrix k = kl_rows(p, t.constant(q.array().log().matrix())).value();
  for (Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(k(i, 0), kl_div(p.row(i).transpose(), q.row(i).transpose()), 1e-12);
  }
}

TEST(LogitsDistill, SelfDistillationIsZero) {
  Rng rng(13);
  const Matrix z = testing::randn(rng, 6, 4);
  const Matrix p = softmax_rows(z, 2.0);
  ad::Tape t;
  EXPECT_NEAR(logits_distill_loss(t.constant(z), p, 2.0).scalar(), 0.0, 1e-13);
}

TEST(LogitsDistill, FrozenOracleValues) {
  const Matrix zs = mat({{0.3, -1.2, 2.0}, {1.5, 0.1, -0.4}, {-0.7, 0.9, 0.2}, {2.2, 2.1, -3.0}});
  const Matrix pt = mat({{0.2, 0.1, 0.7}, {0.6, 0.3, 0.1}, {0.25, 0.5, 0.25}, {0.4, 0.6, 0.0}});
  ad::Tape t;
  const Matrix per = logits_kl_per_sample(t.constant(zs), pt, 2.5).value();
  const double want[] = {0.041406170440255158, 0.058452701045036526, 0.015802958174356785,
                         0.086102285211914487};
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(per(i, 0), want[i], 1e-12);
  EXPECT_NEAR(logits_distill_loss(t.constant(zs), pt, 2.5).scalar(), 0.31525642948681709, 1e-12);
  EXPECT_NEAR(logits_distill_loss(t.constant(zs), pt, 2.5, false).scalar(), 0.31525642948681709 / 6.25, 1e-12);
}

TEST(LogitsDistill, TemperatureSquaredScaling) {
  Rng rng(14);
  const Matrix z = testing::randn(rng, 3, 5);
  const Matrix p = testing::random_simplex_rows(rng, 3, 5);
  ad::Tape t;
  const double a = logits_distill_loss(t.constant(z), p, 4.0, true).scalar();
  const double b = logits_distill_loss(t.constant(z), p, 4.0, false).scalar();
  EXPECT_NEAR(a, 16.0 * b, 1e-12);
}

TEST(CrossModality, FrozenOracleValues) {
  const Matrix proj = testing::unit_rows(mat({{0.5, -1.0, 2.0}, {1.0, 1.0, 0.25}}));
  const Matrix text = testing::unit_rows(mat({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.6, 0.0, 0.8}}));
  const Matrix soft = mat({{0.1, 0.2, 0.7}, {0.5, 0.4, 0.1}});
  ad::Tape t;
  const Matrix per = cm_kl_per_sample(t.constant(proj), text, soft, 10.0, 2.0).value();
  EXPECT_NEAR(per(0, 0), 0.81709737761677048, 1e-12);
  EXPECT_NEAR(per(1, 0), 0.041941513358190713, 1e-12);
  EXPECT_NEAR(cm_loss(t.constant(proj), text, soft, 10.0, 2.0).scalar(), 1.7180777819499224, 1e-12);
}

TEST(CrossModality, LogitsAreScaledCosines) {
  const Matrix proj = testing::unit_rows(mat({{1.0, 1.0}}));
  const Matrix text = mat({{1.0, 0.0}, {0.0, -1.0}});
  ad::Tape t;
  const Matrix l = cm_logits(t.constant(proj), text, 4.0).value();
  EXPECT_NEAR(l(0, 0), 4.0 / std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(l(0, 1), -4.0 / std::sqrt(2.0), 1e-14);
}

TEST(CrossModality, RejectsNonUnitRows) {
  ad::Tape t;
  const Matrix text = mat({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_THROW(cm_logits(t.constant(mat({{2.0, 0.0}})), text, 1.0), Error);
  EXPECT_THROW(cm_logits(t.constant(mat({{1.0, 0.0}})), mat({{0.5, 0.0}, {0.0, 1.0}}), 1.0), Error);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(validate(w));
  w.temperature = 0.0;
  EXPECT_THROW(validate(w), Error);
  w = LossWeights{};
  w.ce_weight = -0.1;
  EXPECT_THROW(validate(w), Error);
  w = LossWeights{};
  w.gamma = 0.0;
  EXPECT_THROW(validate(w), Error);
}

TEST(CombinedLoss, SumOfWeightedTerms) {
  Rng rng(15);
  const Matrix z = testing::randn(rng, 4, 3);
  const Matrix proj = testing::unit_rows(testing::randn(rng, 4, 5));
  const Matrix text = testing::unit_rows(testing::randn(rng, 3, 5));
  const Matrix soft = testing::random_simplex_rows(rng, 4, 3);
  const std::vector<int> labels{0, 2, 1, 1};
  LossWeights w;
  w.ce_weight = 0.7;
  w.logits_weight = 0.4;
  w.cm_weight = 0.3;
  w.temperature = 2.0;
  ad::Tape t;
  const LossBreakdown b =
      combined_loss(w, 6.0, LossInputs{t.constant(z), labels, t.constant(proj), &soft, &text});
  const double ce = mean(ce_loss(t.constant(z), labels)).scalar();
  const double lg = logits_distill_loss(t.constant(z), soft, 2.0).scalar();
  const double cm = cm_loss(t.constant(proj), text, soft, 6.0, 2.0).scalar();
  EXPECT_NEAR(b.ce, 0.7 * ce, 1e-13);
  EXPECT_NEAR(b.logits, 0.4 * lg, 1e-13);
  EXPECT_NEAR(b.cm, 0.3 * cm, 1e-13);
  EXPECT_NEAR(b.total.scalar(), b.ce + b.logits + b.cm, 1e-13);
}

TEST(CombinedLoss, ZeroWeightTermsNeedNoInputs) {
  const Matrix z = mat({{1.0, 0.0}});
  const std::vector<int> labels{0};
  LossWeights w;
  w.logits_weight = 0.0;
  w.cm_weight = 0.0;
  ad::Tape t;
  const LossBreakdown b = combined_loss(w, 1.0, LossInputs{t.constant(z), labels, {}, nullptr, nullptr});
  EXPECT_EQ(b.logits, 0.0);
  EXPECT_EQ(b.cm, 0.0);
  EXPECT_NEAR(b.total.scalar(), std::log1p(std::exp(-1.0)), 1e-14);
}

TEST(KlDiv, ZeroOnlyForEqualArguments) {
  Rng rng(16);
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix pq = testing::random_simplex_rows(rng, 2, 5);
    const Vector p = pq.row(0).transpose(), q = pq.row(1).transpose();
    EXPECT_GT(kl_div(p, q), 0.0);
    EXPECT_LE(kl_div(p, p), 1e-9);
  }
}

TEST(CrossEntropy, InvariantToPerRowLogitShift) {
  Rng rng(17);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  const std::vector<int> labels{0, 1, 2, 1, 0, 2};
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix z = testing::randn(rng, 6, 3, 3.0);
    Matrix zs = z;
    for (Index i = 0; i < zs.rows(); ++i) zs.row(i).array() += shift(rng);
    ad::Tape t;
    const Matrix a = ce_loss(t.constant(z), labels).value(), b = ce_loss(t.constant(zs), labels).value();
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(CombinedLoss, NonNegativeForNonNegativeWeights) {
  Rng rng(18);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  const std::vector<int> labels{0, 1, 2, 2, 1};
  for (int trial = 0; trial < 200; ++trial) {
    LossWeights w;
    w.ce_weight = u(rng);
    w.logits_weight = u(rng);
    w.cm_weight = u(rng);
    w.temperature = 0.5 + u(rng) * 3.0;
    const Matrix z = testing::randn(rng, 5, 3, 2.0);
    const Matrix proj = testing::unit_rows(testing::randn(rng, 5, 4));
    const Matrix text = testing::unit_rows(testing::randn(rng, 3, 4));
    const Matrix soft = testing::random_simplex_rows(rng, 5, 3);
    ad::Tape t;
    const LossBreakdown b =
        combined_loss(w, 5.0, LossInputs{t.constant(z), labels, t.constant(proj), &soft, &text});
    EXPECT_GE(b.total.scalar(), 0.0);
  }
}

}  // namespace
}  // namespace scmd
