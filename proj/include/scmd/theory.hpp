// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scmd/error.hpp"
#include "scmd/types.hpp"

/// Exact checks of the total-variation risk bounds on finite supports.
///
/// Distributions are probability vectors over a support {0, ..., K-1}.
/// Total variation uses the L1 convention sum_k |p_k - q_k|, so it ranges
/// over [0, 2]. Losses must lie in [0, 1].
namespace scmd::theory {

inline constexpr double kProbabilityTolerance = 1e-12;

template <typename Derived>
void validate_distribution(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  if (p.size() == 0 || (p.array() < Scalar(0)).any() ||
      std::abs(static_cast<double>(p.sum()) - 1.0) > 1e-9) {
    throw Error(ErrorKind::kParameter, "not a probability vector");
  }
}

template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar tv(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::kParameter, "tv: support sizes differ (" + std::to_string(p.size()) +
                                           " vs " + std::to_string(q.size()) + ")");
  }
  return (p - q).cwiseAbs().sum();
}

/// Expected loss sum_k p_k * loss_k; every loss must lie in [0, 1].
template <typename DerivedL, typename DerivedP>
typename DerivedP::Scalar risk(const Eigen::MatrixBase<DerivedL>& loss, const Eigen::MatrixBase<DerivedP>& p) {
  using Scalar = typename DerivedP::Scalar;
  if (loss.size() != p.size()) throw Error(ErrorKind::kParameter, "risk: support sizes differ");
  if ((loss.array() < Scalar(0)).any() || (loss.array() > Scalar(1)).any()) {
    throw Error(ErrorKind::kContract, "risk: per-point loss outside [0, 1]");
  }
  return p.dot(loss.template cast<Scalar>());
}

using LabelingFunction = std::vector<int>;
/// Predicted label per support point.
using Hypothesis = std::vector<int>;
using Family = std::vector<Vector>;

/// 0-1 loss table of `h` against `labeling`.
Vector zero_one_loss(const Hypothesis& h, const LabelingFunction& labeling);

double risk(const Hypothesis& h, const Vector& p, const LabelingFunction& labeling);

/// Mean loss over a sample of support indices.
double empirical_risk(const Vector& loss, std::span<const std::size_t> sample);
double empirical_risk(const Hypothesis& h, const LabelingFunction& labeling,
                      std::span<const std::size_t> sample);

struct Lemma1Report {
  std::size_t trials = 0;
  std::size_t violations = 0;
  /// max over trials of r(P') - r(P) - tv(P', P); never above 0 when the
  /// bound holds.
  double max_excess = -2.0;
  double mean_slack = 0.0;
};

/// Random (P, P', labeling, h) on supports of size 2..max_support with 0-1
/// loss; counts violations of r(P') <= r(P) + tv(P', P) beyond 1e-12.
Lemma1Report check_lemma1(std::size_t trials, int max_support, std::uint64_t seed,
                          int num_classes = 3);

inline constexpr std::size_t kMaxRademacherClass = 64;
inline constexpr std::size_t kMaxRademacherSample = 14;

/// Exact (1/2^n) sum_sigma max_l (1/n) sum_i sigma_i l(x_i) by enumeration.
/// `losses` is |class| x n: row h holds hypothesis h's loss on each sample point.
double rademacher_exact(const Matrix& losses);

/// Loss matrix of a hypothesis class on a sample of support indices.
Matrix class_losses(const std::vector<Hypothesis>& hypotheses, const LabelingFunction& labeling,
                    std::span<const std::size_t> sample);

/// xi = 2 R + sqrt(ln(1/delta) / (2 n)).
double xi_term(double rademacher, std::size_t n, double delta);

struct Lemma2Report {
  std::size_t resamples = 0;
  std::size_t violations = 0;
  double violation_rate = 0.0;
  double delta = 0.0;
  /// delta + 3 sqrt(delta (1 - delta) / resamples).
  double allowed_rate = 0.0;
  double tv = 0.0;
  double mean_rademacher = 0.0;
  double mean_xi = 0.0;
  double mean_slack = 0.0;
};

/// Random binary-label instance: distributions P and P' = 0.7 P + 0.3 Q on
/// `support` points, a random labeling and `class_size` random hypotheses.
struct Lemma2Instance {
  std::vector<Hypothesis> hypotheses;
  Vector p;
  Vector p_test;
  LabelingFunction labeling;
};

Lemma2Instance make_lemma2_instance(int support, std::size_t class_size, std::uint64_t seed);

/// Draws `resamples` i.i.d. samples of size n from P, picks the empirical
/// risk minimiser (ties to the lowest index) and checks
/// r(P') <= r_hat + tv(P', P) + xi with the exact Rademacher term.
Lemma2Report check_lemma2(const std::vector<Hypothesis>& hypotheses, const Vector& p,
                          const Vector& p_test, const LabelingFunction& labeling, std::size_t n,
                          double delta, std::size_t resamples, std::uint64_t seed);

/// Mean of tv(p, member) over the family.
double avg_tv_to_set(const Vector& p, const Family& family);

/// Member with the largest average tv to the family; ties to the lowest index.
std::size_t select_s1(const Family& family);
/// Seeded uniform choice.
std::size_t select_s2(const Family& family, std::uint64_t seed);

/// Mixture families P_i = (1 - a_i) A + a_i B with A, B on disjoint halves
/// of the support and the test distribution P' = B.
struct Lemma3Construction {
  std::size_t family_size = 5;
  int support_size = 8;
  /// When set, every trial uses these mixing weights.
  std::optional<std::vector<double>> fixed_alphas;
  /// Otherwise `family_size - num_outliers` weights from `cluster_alpha`
  /// and `num_outliers` from `outlier_alpha`, uniformly.
  std::pair<double, double> cluster_alpha{0.0, 1.0};
  std::pair<double, double> outlier_alpha{0.0, 1.0};
  std::size_t num_outliers = 0;
};

/// One member pulled toward P' beyond a cluster near A: the additivity
/// assumption is exact for that member.
inline Lemma3Construction outlier_toward_test_regime() {
  Lemma3Construction c;
  c.family_size = 5;
  c.support_size = 8;
  c.cluster_alpha = {0.0, 0.2};
  c.outlier_alpha = {0.7, 1.0};
  c.num_outliers = 1;
  return c;
}

struct Lemma3Report {
  std::size_t trials = 0;
  /// |tv(set, P') - tv(set, P_i) - tv(P_i, P')| over all members and trials.
  double mean_residual = 0.0;
  double max_residual = 0.0;
  /// Same residual restricted to the member s1 picks.
  double mean_residual_s1 = 0.0;
  double max_residual_s1 = 0.0;
  double e_tv_s1 = 0.0;
  /// Monte Carlo with one random pick per trial.
  double e_tv_s2 = 0.0;
  /// Exact expectation over the uniform pick, averaged over trials.
  double e_tv_s2_exact = 0.0;
  /// Mean of min_i tv(P_i, P').
  double e_tv_inf = 0.0;
  bool conclusion_holds = false;  // e_tv_s1 <= e_tv_s2_exact
  bool assumption_holds = false;  // max_residual_s1 <= 1e-9
};

Lemma3Report check_lemma3(const Lemma3Construction& construction, std::size_t trials,
                          std::uint64_t seed);

}  // namespace scmd::theory
