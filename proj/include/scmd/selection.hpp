// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "scmd/losses.hpp"
#include "scmd/types.hpp"

namespace scmd {

enum class SelectionStrategy { kNone, kCe, kKl, kDistill, kFocal };

std::string_view to_string(SelectionStrategy s);
SelectionStrategy parse_strategy(std::string_view name);

struct SelectionConfig {
  SelectionStrategy strategy = SelectionStrategy::kCe;
  /// Fraction of each batch kept, in (0, 1].
  double fraction = 1.0 / 3.0;
  double focal_gamma = 2.0;
};

void validate(const SelectionConfig& c);

/// Trailing fraction of training trained on the full batch.
struct ScheduleConfig {
  double full_batch_fraction = 0.25;
  std::int64_t total_steps = 1;
};

void validate(const ScheduleConfig& c);

/// Per-sample values a scorer may need. CE is always required except for
/// `kNone`; the KL terms are unscaled.
struct PerSampleTerms {
  Vector ce;
  std::optional<Vector> logits_kl;
  std::optional<Vector> cm_kl;
};

/// Hardness score per sample; larger means harder.
///   ce      -> CE
///   kl      -> KL(p^t || p^s)
///   distill -> per-sample weighted objective
///   focal   -> -(1 - p_true)^focal_gamma * log p_true
///   none    -> 0
Vector score_samples(const SelectionConfig& cfg, const LossWeights& w, const PerSampleTerms& terms);

/// The ceil(fraction * B) indices with the largest scores, ascending; ties
/// go to the lower index. fraction >= 1 keeps everything.
IndexList select_hard(std::span<const double> scores, double fraction);

/// True iff step t falls in the trailing full-batch phase:
/// t >= ceil((1 - full_batch_fraction) * total_steps).
bool is_full_batch_step(std::int64_t t, const ScheduleConfig& schedule);

}  // namespace scmd
