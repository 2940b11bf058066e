// SPDX-License-Identifier: Apache-2.0
#include "scmd/losses.hpp"

namespace scmd {

void validate(const LossWeights& w) {
  if (w.ce_weight < 0.0 || w.logits_weight < 0.0 || w.cm_weight < 0.0) {
    throw Error(ErrorKind::kParameter, "loss weights must be non-negative");
  }
  if (!(w.temperature > 0.0)) throw Error(ErrorKind::kParameter, "temperature must be positive");
  if (w.gamma && !(*w.gamma > 0.0)) throw Error(ErrorKind::kParameter, "gamma must be positive");
}

Matrix softmax_rows(const Matrix& logits, double temperature) {
  ad::Tape tape;
  return ad::softmax_t(tape.constant(logits), temperature).value();
}

ad::Var ce_loss(ad::Var logits, std::span<const int> labels) {
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) {
      throw Error(ErrorKind::kParameter, "ce_loss: label " + std::to_string(y) + " outside [0, " +
                                             std::to_string(logits.cols()) + ")");
    }
  }
  return ad::mul_scalar(ad::pick(ad::log_softmax_t(logits, 1.0), labels), -1.0);
}

ad::Var kl_rows(const Matrix& p, ad::Var log_q) {
  if (p.rows() != log_q.rows() || p.cols() != log_q.cols()) {
    throw Error(ErrorKind::kDimension, "kl_rows: teacher and student shapes differ");
  }
  for (Index i = 0; i < p.rows(); ++i) {
    if (std::abs(p.row(i).sum() - 1.0) > kDistributionTolerance || (p.row(i).array() < 0.0).any()) {
      throw Error(ErrorKind::kParameter, "kl_rows: row " + std::to_string(i) + " is not a distribution");
    }
  }
  // sum p log p is constant; 0 log 0 contributes nothing.
  Matrix entropy_term(p.rows(), 1);
  for (Index i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) > 0.0) s += p(i, j) * std::log(p(i, j));
    }
    entropy_term(i, 0) = s;
  }
  ad::Tape& tape = log_q.tape();
  return ad::sub(tape.constant(entropy_term), ad::row_sum(ad::mul(tape.constant(p), log_q)));
}

ad::Var logits_kl_per_sample(ad::Var student_logits, const Matrix& teacher_soft, double temperature) {
  return kl_rows(teacher_soft, ad::log_softmax_t(student_logits, temperature));
}

ad::Var logits_distill_loss(ad::Var student_logits, const Matrix& teacher_soft, double temperature,
                            bool scale_by_t_squared) {
  const double s = scale_by_t_squared ? temperature * temperature : 1.0;
  return ad::mul_scalar(ad::mean(logits_kl_per_sample(student_logits, teacher_soft, temperature)), s);
}

ad::Var cm_logits(ad::Var projected, const Matrix& text_embeddings, double gamma) {
  auto check_unit = [](const Matrix& m, const char* what) {
    for (Index i = 0; i < m.rows(); ++i) {
      if (std::abs(m.row(i).norm() - 1.0) > 1e-5) {
        throw Error(ErrorKind::kContract, std::string("cm_loss: ") + what + " row " +
                                              std::to_string(i) + " is not unit norm");
      }
    }
  };
  check_unit(projected.value(), "projected");
  check_unit(text_embeddings, "text embedding");
  if (!(gamma > 0.0)) throw Error(ErrorKind::kParameter, "cm_loss: gamma must be positive");
  ad::Tape& tape = projected.tape();
  return ad::mul_scalar(ad::matmul(projected, tape.constant(text_embeddings.transpose())), gamma);
}

ad::Var cm_kl_per_sample(ad::Var projected, const Matrix& text_embeddings,
                         const Matrix& teacher_soft, double gamma, double temperature) {
  return kl_rows(teacher_soft, ad::log_softmax_t(cm_logits(projected, text_embeddings, gamma), temperature));
}

ad::Var cm_loss(ad::Var projected, const Matrix& text_embeddings, const Matrix& teacher_soft,
                double gamma, double temperature, bool scale_by_t_squared) {
  const double s = scale_by_t_squared ? temperature * temperature : 1.0;
  return ad::mul_scalar(
      ad::mean(cm_kl_per_sample(projected, text_embeddings, teacher_soft, gamma, temperature)), s);
}

LossBreakdown combined_loss(const LossWeights& w, double gamma, const LossInputs& in) {
  validate(w);
  LossBreakdown out;
  ad::Var total = ad::mul_scalar(ad::mean(ce_loss(in.logits, in.labels)), w.ce_weight);
  out.ce = total.scalar();
  if (w.logits_weight != 0.0) {
    if (in.teacher_soft == nullptr) throw Error(ErrorKind::kParameter, "combined_loss: logits term needs teacher targets");
    ad::Var term = ad::mul_scalar(
        logits_distill_loss(in.logits, *in.teacher_soft, w.temperature, w.scale_by_t_squared), w.logits_weight);
    out.logits = term.scalar();
    total = ad::add(total, term);
  }
  if (w.cm_weight != 0.0) {
    if (in.teacher_soft == nullptr || in.text_embeddings == nullptr || !in.projected.valid()) {
      throw Error(ErrorKind::kParameter, "combined_loss: CM term needs projection, text and teacher targets");
    }
    ad::Var term = ad::mul_scalar(cm_loss(in.projected, *in.text_embeddings, *in.teacher_soft, gamma,
                                          w.temperature, w.scale_by_t_squared),
                                  w.cm_weight);
    out.cm = term.scalar();
    total = ad::add(total, term);
  }
  out.total = total;
  return out;
}

}  // namespace scmd
