// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "scmd/error.hpp"
#include "scmd/losses.hpp"
#include "scmd/student.hpp"
#include "support/grad_cases.hpp"

namespace scmd {
namespace {

StudentConfig config(std::uint64_t seed = 0) {
  StudentConfig c;
  c.input_dim = 6;
  c.hidden_dims = {8, 5};
  c.num_classes = 3;
  c.teacher_embed_dim = 4;
  c.init_seed = seed;
  return c;
}

double max_abs(const StudentParams& p) {
  double m = 0.0;
  for_each_tensor(p, [&](const Matrix& t) {
    if (t.size() > 0) m = std::max(m, t.cwiseAbs().maxCoeff());
  });
  return m;
}

TEST(Init, ParameterCountMatchesLayout) {
  const StudentParams p = init_student(config());
  const std::size_t expected = (6 * 8 + 8) + (8 * 5 + 5) + (5 * 3 + 3) + (5 * 4 + 4);
  EXPECT_EQ(p.parameter_count(), expected);
  EXPECT_EQ(p.classifier.weight.rows(), 3);
  EXPECT_EQ(p.classifier.weight.cols(), 5);
  EXPECT_EQ(p.projector.weight.rows(), 4);
  EXPECT_TRUE(all_finite(p));
}

TEST(Init, DeterministicPerSeed) {
  EXPECT_TRUE(bitwise_equal(init_student(config(3)), init_student(config(3))));
  EXPECT_FALSE(bitwise_equal(init_student(config(3)), init_student(config(4))));
}

TEST(Init, BiasesAreZero) {
  const StudentParams p = init_student(config());
  for (const auto& l : p.hidden) EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.classifier.bias.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.projector.bias.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Init, WeightStdNearHeScale) {
  StudentConfig c;
  c.input_dim = 32;
  c.hidden_dims = {64, 64};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    c.init_seed = seed;
    const StudentParams p = init_student(c);
    for (const auto& l : p.hidden) {
      const double he = std::sqrt(2.0 / static_cast<double>(l.weight.cols()));
      const double mean = l.weight.mean();
      const double sd = std::sqrt((l.weight.array() - mean).square().sum() / static_cast<double>(l.weight.size() - 1));
      EXPECT_LT(sd, 3.0 * he);
      EXPECT_GT(sd, he / 3.0);
      EXPECT_NEAR(sd, he, 0.1 * he);
    }
  }
}

TEST(Init, RejectsZeroDims) {
  StudentConfig c = config();
  c.hidden_dims = {8, 0};
  EXPECT_THROW(init_student(c), Error);
  c = config();
  c.num_classes = 0;
  EXPECT_THROW(init_student(c), Error);
}

TEST(Forward, ZeroWeightsGiveZeroFeatures) {
  StudentParams p = zeros_like(init_student(config()));
  Rng rng(41);
  ad::Tape t;
  const BoundStudent s = bind(t, p);
  EXPECT_EQ(forward_features(s, t.constant(testing::randn(rng, 4, 6))).value(), Matrix::Zero(4, 5));
}

TEST(Forward, BatchedMatchesSingleRows) {
  const StudentParams p = init_student(config());
  Rng rng(42);
  const Matrix x = testing::randn(rng, 7, 6);
  ad::Tape t;
  const BoundStudent s = bind(t, p);
  const Matrix batched = forward_logits(s, t.constant(x)).value();
  for (Index i = 0; i < x.rows(); ++i) {
    const Matrix one = forward_logits(s, t.constant(x.row(i))).value();
    EXPECT_LE((one - batched.row(i)).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_LE((predict_logits(p, x) - batched).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, ClassifierBiasShiftsLogitsExactly) {
  StudentParams p = init_student(config());
  Rng rng(43);
  const Matrix x = testing::randn(rng, 5, 6);
  const Matrix before = predict_logits(p, x);
  p.classifier.bias << 0.5, -1.0, 2.0;
  const Matrix after = predict_logits(p, x);
  for (Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(after(i, 0) - before(i, 0), 0.5, 1e-14);
    EXPECT_NEAR(after(i, 1) - before(i, 1), -1.0, 1e-14);
    EXPECT_NEAR(after(i, 2) - before(i, 2), 2.0, 1e-14);
  }
}

TEST(Forward, WrongInputWidthIsDimensionError) {
  const StudentParams p = init_student(config());
  ad::Tape t;
  const BoundStudent s = bind(t, p);
  try {
    forward_logits(s, t.constant(Matrix::Zero(2, 5)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(Forward, InferenceNeverCallsProjector) {
  const StudentParams p = init_student(config());
  Rng rng(44);
  const Matrix x = testing::randn(rng, 9, 6);
  const auto before = projector_calls();
  predict_logits(p, x);
  ad::Tape t;
  forward_logits(bind(t, p), t.constant(x));
  EXPECT_EQ(projector_calls() - before, 0u);
  const BoundStudent s = bind(t, p);
  project(s, forward_features(s, t.constant(x)));
  EXPECT_EQ(projector_calls() - before, 1u);
}

TEST(Project, RowsAreUnitNorm) {
  const StudentParams p = init_student(config());
  Rng rng(45);
  ad::Tape t;
  const BoundStudent s = bind(t, p);
  const Matrix z = project(s, forward_features(s, t.constant(testing::randn(rng, 10, 6)))).value();
  for (Index i = 0; i < z.rows(); ++i) EXPECT_NEAR(z.row(i).norm(), 1.0, 1e-12);
}

TEST(Project, IdentityProjectorNormalizesFeatures) {
  StudentConfig c = config();
  c.teacher_embed_dim = 5;
  StudentParams p = init_student(c);
  p.projector.weight = Matrix::Identity(5, 5);
  Rng rng(46);
  ad::Tape t;
  const BoundStudent s = bind(t, p);
  const ad::Var f = forward_features(s, t.constant(testing::randn(rng, 6, 6)));
  Matrix expected = f.value();
  for (Index i = 0; i < expected.rows(); ++i) {
    if (expected.row(i).norm() > 0.0) expected.row(i).normalize();
  }
  const Matrix z = project(s, f).value();
  EXPECT_LE((z - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Project, ZeroFeatureRowIsSurfaced) {
  StudentParams p = zeros_like(init_student(config()));
  ad::Tape t;
  const BoundStudent s = bind(t, p);
  try {
    project(s, forward_features(s, t.constant(Matrix::Ones(1, 6))));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateVector);
  }
}

struct Wiring {
  StudentParams ce, logits, cm;
};

Wiring term_gradients(std::uint64_t seed) {
  const StudentConfig c = config(seed);
  const StudentParams p = init_student(c);
  Rng rng(derive_seed(seed, {47}));
  const Matrix x = testing::randn(rng, 8, 6);
  const Matrix soft = testing::random_simplex_rows(rng, 8, 3);
  const Matrix text = testing::unit_rows(testing::randn(rng, 3, 4));
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1};
  auto grad_of = [&](int term) {
    ad::Tape t;
    const BoundStudent s = bind(t, p);
    const ad::Var f = forward_features(s, t.constant(x));
    ad::Var loss;
    if (term == 0) loss = ad::mean(ce_loss(forward_logits_from_features(s, f), labels));
    if (term == 1) loss = logits_distill_loss(forward_logits_from_features(s, f), soft, 3.0);
    if (term == 2) loss = cm_loss(project(s, f), text, soft, 10.0, 3.0);
    t.backward(loss);
    return gradients(s, p);
  };
  return Wiring{grad_of(0), grad_of(1), grad_of(2)};
}

TEST(GradientWiring, ProjectorOnlyLearnsFromCmTerm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Wiring w = term_gradients(seed);
    EXPECT_EQ(w.ce.projector.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(w.ce.projector.bias.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(w.logits.projector.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(w.logits.projector.bias.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(w.cm.projector.weight.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(GradientWiring, ClassifierGetsNothingFromCmTerm) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Wiring w = term_gradients(seed);
    EXPECT_EQ(w.cm.classifier.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(w.cm.classifier.bias.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(w.ce.classifier.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(w.cm.hidden[0].weight.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(GradientWiring, BackboneAndProjectionPassFiniteDifferences) {
  const testing::GradientSweep sweep = testing::gradient_sweep(3);
  EXPECT_LT(sweep.worst, 1e-4) << sweep.worst_case;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint c{config(), init_student(config(9)), 1234};
  c.params.classifier.bias << 0.1, 1.0 / 3.0, -2.5e-300;
  const io::Bytes bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_TRUE(bitwise_equal(back.params, c.params));
  EXPECT_EQ(back.step, 1234);
  EXPECT_EQ(back.config.hidden_dims, c.config.hidden_dims);
  EXPECT_EQ(back.config.teacher_embed_dim, 4);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, FileRoundTripAndCorruption) {
  const Checkpoint c{config(), init_student(config(2)), 7};
  const auto path = std::filesystem::temp_directory_path() / "scmd_test_student.ckpt";
  save_checkpoint(c, path);
  EXPECT_TRUE(bitwise_equal(load_checkpoint(path).params, c.params));
  std::filesystem::remove(path);
  io::Bytes bytes = encode_checkpoint(c);
  bytes[bytes.size() / 2] ^= 1;
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCrcMismatch);
  }
}

TEST(Checkpoint, TeacherMagicIsRejected) {
  io::Bytes bytes = encode_checkpoint(Checkpoint{config(), init_student(config()), 0});
  const std::string_view other = "SCMD-TA1";
  std::copy(other.begin(), other.end(), bytes.begin());
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBadMagic);
  }
}

TEST(Params, ZerosLikeAndFiniteness) {
  StudentParams p = init_student(config());
  EXPECT_EQ(max_abs(zeros_like(p)), 0.0);
  EXPECT_EQ(layout_for(config()).parameter_count(), p.parameter_count());
  p.hidden[1].weight(0, 0) = std::nan("");
  EXPECT_FALSE(all_finite(p));
}

}  // namespace
}  // namespace scmd
