// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scmd/data.hpp"
#include "scmd/losses.hpp"
#include "scmd/selection.hpp"
#include "scmd/student.hpp"
#include "scmd/teacher.hpp"

namespace scmd {

enum class OptimizerKind { kAdam, kSgdMomentum };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double momentum = 0.9;  // sgd_momentum only
  std::size_t batch_size = 32;
  std::int64_t total_steps = 1000;
  LossWeights loss;
  SelectionConfig selection;
  /// Trailing fraction of steps trained without selection.
  double full_batch_fraction = 0.25;
  /// Weight averaging starts at ceil(ma_start_frac * total_steps).
  double ma_start_frac = 0.5;
  std::int64_t eval_every = 100;
  std::uint64_t seed = 0;
  /// Layout of the student; input, class and embedding sizes are filled
  /// in from the data and the teacher.
  std::vector<int> hidden_dims{64, 64};
  bool projector_bias = true;
  /// Teacher embedding size when training without a teacher.
  int embed_dim_without_teacher = 16;
};

void validate(const TrainConfig& c);
ScheduleConfig schedule_of(const TrainConfig& c);
StudentConfig student_config_for(const TrainConfig& c, const DomainDataset& train,
                                 const TeacherArtifact* teacher);
/// True when the run needs teacher targets at all.
bool needs_teacher(const TrainConfig& c);

/// AdamW (beta 0.9 / 0.999, eps 1e-8) or SGD with momentum; weight decay is
/// decoupled from the gradient in both.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const StudentParams& like);
  void step(StudentParams& params, const StudentParams& grads);
  std::int64_t steps_taken() const { return t_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double weight_decay_;
  double momentum_;
  StudentParams m_;
  StudentParams v_;
  std::int64_t t_ = 0;
};

/// Uniform running mean of parameter snapshots.
struct MAState {
  StudentParams mean;
  std::int64_t count = 0;
  std::int64_t start_step = 0;
};

MAState make_ma(const StudentParams& like, std::int64_t start_step);
/// mean += (params - mean) / (count + 1); count += 1.
void update_ma(MAState& ma, const StudentParams& params, std::int64_t step);

/// Fraction of argmax-correct predictions. Never evaluates the projector.
double evaluate(const StudentParams& params, const DomainDataset& data);

struct StepRecord {
  std::int64_t step = 0;
  double total = 0.0;
  double ce = 0.0;
  double logits = 0.0;
  double cm = 0.0;
  std::size_t batch_size = 0;
  std::size_t selected = 0;
  bool full_batch = false;
};

struct EvalRecord {
  std::int64_t step = 0;
  double val_raw = 0.0;
  double test_raw = 0.0;
  std::optional<double> val_ma;
  std::optional<double> test_ma;

  /// Accuracy of the model used for selection: averaged when available.
  double val() const { return val_ma.value_or(val_raw); }
  double test() const { return test_ma.value_or(test_raw); }
};

struct TrainReport {
  TrainConfig config;
  StudentConfig student;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double final_val_raw = 0.0;
  double final_test_raw = 0.0;
  std::optional<double> final_val_ma;
  std::optional<double> final_test_ma;
  std::size_t selected_eval = 0;
  std::int64_t selected_step = 0;
  double selected_val = 0.0;
  double selected_test = 0.0;
  double wall_clock_seconds = 0.0;

  StudentParams final_params;
  std::optional<StudentParams> ma_params;
};

/// Index of the first maximum of a validation curve. Throws on an empty curve.
std::size_t select_model_by_val(std::span<const double> curve);
std::size_t select_model_by_val(const TrainReport& report);

/// Observer called after every optimizer step.
using StepObserver = std::function<void(const StepRecord&, const IndexList& kept)>;

struct TrainHooks {
  StepObserver on_step;
  /// Progress lines go here when set.
  std::ostream* progress = nullptr;
};

/// Selective distillation loop. Each step draws a batch; outside the
/// trailing full-batch phase the batch is scored by the configured strategy
/// and only the hardest fraction enters the objective.
TrainReport train(const TrainConfig& cfg, const DomainDataset& train_data,
                  const DomainDataset& val_data, const TeacherArtifact* teacher,
                  const DomainDataset& test_data, const TrainHooks& hooks = {});

/// Unscaled per-sample terms for one batch, computed without gradients.
PerSampleTerms per_sample_terms(const StudentParams& params, const StudentConfig& student,
                                const Matrix& x, std::span<const int> labels,
                                const Matrix* teacher_soft, const Matrix* text_embeddings,
                                double gamma, const TrainConfig& cfg);

}  // namespace scmd
