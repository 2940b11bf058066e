// SPDX-License-Identifier: Apache-2.0
#include "scmd/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scmd {

std::string_view to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::kNone: return "none";
    case SelectionStrategy::kCe: return "ce";
    case SelectionStrategy::kKl: return "kl";
    case SelectionStrategy::kDistill: return "distill";
    case SelectionStrategy::kFocal: return "focal";
  }
  return "none";
}

SelectionStrategy parse_strategy(std::string_view name) {
  for (auto s : {SelectionStrategy::kNone, SelectionStrategy::kCe, SelectionStrategy::kKl,
                 SelectionStrategy::kDistill, SelectionStrategy::kFocal}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorKind::kParameter, "unknown selection strategy '" + std::string(name) + "'");
}

void validate(const SelectionConfig& c) {
  if (!(c.fraction > 0.0 && c.fraction <= 1.0)) {
    throw Error(ErrorKind::kParameter, "selection fraction must lie in (0, 1]");
  }
  if (!(c.focal_gamma >= 0.0)) throw Error(ErrorKind::kParameter, "focal_gamma must be >= 0");
}

void validate(const ScheduleConfig& c) {
  if (!(c.full_batch_fraction >= 0.0 && c.full_batch_fraction < 1.0)) {
    throw Error(ErrorKind::kParameter, "full_batch_fraction must lie in [0, 1)");
  }
  if (c.total_steps < 1) throw Error(ErrorKind::kParameter, "total_steps must be >= 1");
}

Vector score_samples(const SelectionConfig& cfg, const LossWeights& w, const PerSampleTerms& terms) {
  const Index n = terms.ce.size();
  switch (cfg.strategy) {
    case SelectionStrategy::kNone:
      return Vector::Zero(n);
    case SelectionStrategy::kCe:
      return terms.ce;
    case SelectionStrategy::kKl:
      if (!terms.logits_kl) throw Error(ErrorKind::kParameter, "kl scoring needs teacher targets");
      return *terms.logits_kl;
    case SelectionStrategy::kDistill: {
      Vector s = w.ce_weight * terms.ce;
      if (w.logits_weight != 0.0) {
        if (!terms.logits_kl) throw Error(ErrorKind::kParameter, "distill scoring needs the logits KL");
        s += w.logits_weight * w.kl_scale() * *terms.logits_kl;
      }
      if (w.cm_weight != 0.0) {
        if (!terms.cm_kl) throw Error(ErrorKind::kParameter, "distill scoring needs the CM KL");
        s += w.cm_weight * w.kl_scale() * *terms.cm_kl;
      }
      return s;
    }
    case SelectionStrategy::kFocal: {
      // p_true = exp(-CE), so the focal loss is (1 - p_true)^g * CE.
      Vector s(n);
      for (Index i = 0; i < n; ++i) {
        const double ce = terms.ce(i);
        s(i) = std::pow(-std::expm1(-ce), cfg.focal_gamma) * ce;
      }
      return s;
    }
  }
  return Vector::Zero(n);
}

IndexList select_hard(std::span<const double> scores, double fraction) {
  const std::size_t n = scores.size();
  IndexList idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (fraction >= 1.0 || n == 0) return idx;
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))), 1, n);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

bool is_full_batch_step(std::int64_t t, const ScheduleConfig& schedule) {
  const auto boundary = static_cast<std::int64_t>(
      std::ceil((1.0 - schedule.full_batch_fraction) * static_cast<double>(schedule.total_steps)));
  return t >= boundary;
}

}  // namespace scmd
