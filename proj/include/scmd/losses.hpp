// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>

#include "scmd/autodiff.hpp"
#include "scmd/error.hpp"
#include "scmd/types.hpp"

namespace scmd {

/// Weights of the combined objective
///   ce_weight * CE + logits_weight * L_logits + cm_weight * L_CM.
struct LossWeights {
  double ce_weight = 1.0;
  double logits_weight = 0.5;
  double cm_weight = 0.5;
  double temperature = 3.0;
  /// Student-side cosine scale; unset means "use the teacher's logit scale".
  std::optional<double> gamma;
  /// Multiply both KL terms by T^2.
  bool scale_by_t_squared = true;

  double kl_scale() const { return scale_by_t_squared ? temperature * temperature : 1.0; }
};

void validate(const LossWeights& w);

inline constexpr double kDistributionTolerance = 1e-6;

/// KL(p || q) = sum p_i (log p_i - log q_i) with 0 log 0 = 0. Both arguments
/// must be probability vectors and q must be positive wherever p is.
///
/// Summed as the terms p_i log(p_i / q_i) - p_i + q_i, each non-negative,
/// so rounding can never push the result below zero.
template <typename DerivedP, typename DerivedQ>
double kl_div(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::kParameter, "kl_div: sizes differ");
  }
  const double sp = p.sum();
  const double sq = q.sum();
  if (std::abs(sp - 1.0) > kDistributionTolerance || std::abs(sq - 1.0) > kDistributionTolerance ||
      (p.array() < 0.0).any() || (q.array() < 0.0).any()) {
    throw Error(ErrorKind::kParameter, "kl_div: arguments must be probability vectors");
  }
  double total = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double pi = p.derived().coeff(i);
    const double qi = q.derived().coeff(i);
    if (pi == 0.0) {
      total += qi;
      continue;
    }
    if (!(qi > 0.0)) throw Error(ErrorKind::kParameter, "kl_div: q has zero mass where p does not");
    total += std::max(0.0, pi * (std::log(pi) - std::log(qi)) - pi + qi);
  }
  return total;
}

/// Row-wise tempered softmax without a tape.
Matrix softmax_rows(const Matrix& logits, double temperature);

/// Per-sample cross-entropy, -log softmax(logits)[label]; returns B x 1.
ad::Var ce_loss(ad::Var logits, std::span<const int> labels);

/// Per-row KL(p_i || q_i) given constant rows p and log q on the tape; B x 1.
ad::Var kl_rows(const Matrix& p, ad::Var log_q);

/// Per-sample KL(p^t || softmax_t(student_logits, T)), unscaled; B x 1.
ad::Var logits_kl_per_sample(ad::Var student_logits, const Matrix& teacher_soft, double temperature);

/// mean_i s * KL(p^t_i || softmax_t(z_i, T)) with s = T^2 when scaled.
ad::Var logits_distill_loss(ad::Var student_logits, const Matrix& teacher_soft, double temperature,
                            bool scale_by_t_squared = true);

/// gamma * projected . text^T, B x C. Both operands must have unit rows.
ad::Var cm_logits(ad::Var projected, const Matrix& text_embeddings, double gamma);

/// Per-sample KL(p^t || softmax_t(gamma * projected . text^T, T)), unscaled; B x 1.
ad::Var cm_kl_per_sample(ad::Var projected, const Matrix& text_embeddings,
                         const Matrix& teacher_soft, double gamma, double temperature);

/// Cross-modality loss: batch mean of the scaled per-sample KL.
ad::Var cm_loss(ad::Var projected, const Matrix& text_embeddings, const Matrix& teacher_soft,
                double gamma, double temperature, bool scale_by_t_squared = true);

/// Inputs for the combined objective on one (already selected) batch.
/// Unused terms may be left invalid when their weight is zero.
struct LossInputs {
  ad::Var logits;           // B x C
  std::span<const int> labels;
  ad::Var projected;        // B x d_t, unit rows
  const Matrix* teacher_soft = nullptr;     // B x C
  const Matrix* text_embeddings = nullptr;  // C x d_t
};

struct LossBreakdown {
  ad::Var total;
  double ce = 0.0;      // weighted
  double logits = 0.0;  // weighted
  double cm = 0.0;      // weighted
};

/// ce_weight * mean(CE) + logits_weight * L_logits + cm_weight * L_CM.
/// Terms with zero weight are not evaluated.
LossBreakdown combined_loss(const LossWeights& w, double gamma, const LossInputs& in);

}  // namespace scmd
