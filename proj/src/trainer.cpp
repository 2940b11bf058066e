// SPDX-License-Identifier: Apache-2.0
#include "scmd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "scmd/error.hpp"
#include "scmd/random.hpp"

namespace scmd {

std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd_momentum";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  throw Error(ErrorKind::kParameter, "unknown optimizer '" + std::string(name) + "'");
}

void validate(const TrainConfig& c) {
  if (c.total_steps < 1) throw Error(ErrorKind::kParameter, "total_steps must be >= 1");
  if (c.batch_size < 1) throw Error(ErrorKind::kParameter, "batch_size must be >= 1");
  if (!(c.lr >= 0.0) || !(c.weight_decay >= 0.0)) {
    throw Error(ErrorKind::kParameter, "lr and weight_decay must be >= 0");
  }
  if (!(c.ma_start_frac >= 0.0 && c.ma_start_frac < 1.0)) {
    throw Error(ErrorKind::kParameter, "ma_start_frac must lie in [0, 1)");
  }
  if (c.eval_every < 1) throw Error(ErrorKind::kParameter, "eval_every must be >= 1");
  validate(c.loss);
  validate(c.selection);
  validate(schedule_of(c));
}

ScheduleConfig schedule_of(const TrainConfig& c) {
  return ScheduleConfig{c.full_batch_fraction, c.total_steps};
}

bool needs_teacher(const TrainConfig& c) {
  return c.loss.logits_weight != 0.0 || c.loss.cm_weight != 0.0 ||
         c.selection.strategy == SelectionStrategy::kKl ||
         c.selection.strategy == SelectionStrategy::kDistill;
}

StudentConfig student_config_for(const TrainConfig& c, const DomainDataset& train,
                                 const TeacherArtifact* teacher) {
  StudentConfig s;
  s.input_dim = train.feature_dim;
  s.hidden_dims = c.hidden_dims;
  s.num_classes = train.num_classes;
  s.teacher_embed_dim = teacher ? teacher->embed_dim() : c.embed_dim_without_teacher;
  s.init_seed = derive_seed(c.seed, {31});
  s.projector_bias = c.projector_bias;
  return s;
}

Optimizer::Optimizer(const TrainConfig& cfg, const StudentParams& like)
    : kind_(cfg.optimizer),
      lr_(cfg.lr),
      weight_decay_(cfg.weight_decay),
      momentum_(cfg.momentum),
      m_(zeros_like(like)),
      v_(zeros_like(like)) {}

void Optimizer::step(StudentParams& params, const StudentParams& grads) {
  ++t_;
  if (kind_ == OptimizerKind::kAdam) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    std::vector<Matrix*> ms;
    std::vector<Matrix*> vs;
    for_each_tensor(m_, [&](Matrix& t) { ms.push_back(&t); });
    for_each_tensor(v_, [&](Matrix& t) { vs.push_back(&t); });
    std::size_t k = 0;
    zip_tensors(params, grads, [&](Matrix& p, const Matrix& g) {
      Matrix& m = *ms[k];
      Matrix& v = *vs[k];
      ++k;
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      const Matrix update =
          ((m.array() / c1) / ((v.array() / c2).sqrt() + kEps)).matrix() + weight_decay_ * p;
      p -= lr_ * update;
    });
  } else {
    std::vector<Matrix*> ms;
    for_each_tensor(m_, [&](Matrix& t) { ms.push_back(&t); });
    std::size_t k = 0;
    zip_tensors(params, grads, [&](Matrix& p, const Matrix& g) {
      Matrix& m = *ms[k++];
      m = momentum_ * m + g;
      const Matrix update = m + weight_decay_ * p;
      p -= lr_ * update;
    });
  }
}

MAState make_ma(const StudentParams& like, std::int64_t start_step) {
  return MAState{zeros_like(like), 0, start_step};
}

void update_ma(MAState& ma, const StudentParams& params, std::int64_t step) {
  if (step < ma.start_step) {
    throw Error(ErrorKind::kContract, "update_ma: step precedes the averaging start");
  }
  const double inv = 1.0 / static_cast<double>(ma.count + 1);
  zip_tensors(ma.mean, params, [&](Matrix& mean, const Matrix& p) { mean += (p - mean) * inv; });
  ++ma.count;
}

double evaluate(const StudentParams& params, const DomainDataset& data) {
  if (data.empty()) throw Error(ErrorKind::kParameter, "evaluate: empty dataset");
  const Matrix logits = predict_logits(params, data.all_features());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Index best = 0;
    logits.row(static_cast<Index>(i)).maxCoeff(&best);
    if (best == data.samples[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::size_t select_model_by_val(std::span<const double> curve) {
  if (curve.empty()) throw Error(ErrorKind::kParameter, "select_model_by_val: no evaluations");
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i] > curve[best]) best = i;
  }
  return best;
}

std::size_t select_model_by_val(const TrainReport& report) {
  std::vector<double> curve;
  curve.reserve(report.evals.size());
  for (const auto& e : report.evals) curve.push_back(e.val());
  return select_model_by_val(curve);
}

PerSampleTerms per_sample_terms(const StudentParams& params, const StudentConfig& student,
                                const Matrix& x, std::span<const int> labels,
                                const Matrix* teacher_soft, const Matrix* text_embeddings,
                                double gamma, const TrainConfig& cfg) {
  ad::Tape tape;
  const BoundStudent s = bind(tape, params, student.projector_bias, false);
  ad::Var features = forward_features(s, tape.constant(x));
  ad::Var logits = forward_logits_from_features(s, features);
  PerSampleTerms terms;
  terms.ce = ce_loss(logits, labels).value().col(0);
  const auto strategy = cfg.selection.strategy;
  const bool want_logits_kl = strategy == SelectionStrategy::kKl ||
                              (strategy == SelectionStrategy::kDistill && cfg.loss.logits_weight != 0.0);
  const bool want_cm_kl = strategy == SelectionStrategy::kDistill && cfg.loss.cm_weight != 0.0;
  if (want_logits_kl) {
    if (!teacher_soft) throw Error(ErrorKind::kParameter, "per_sample_terms: teacher targets required");
    terms.logits_kl = logits_kl_per_sample(logits, *teacher_soft, cfg.loss.temperature).value().col(0);
  }
  if (want_cm_kl) {
    if (!teacher_soft || !text_embeddings) {
      throw Error(ErrorKind::kParameter, "per_sample_terms: teacher embeddings required");
    }
    terms.cm_kl = cm_kl_per_sample(project(s, features), *text_embeddings, *teacher_soft, gamma,
                                   cfg.loss.temperature)
                      .value()
                      .col(0);
  }
  return terms;
}

namespace {

std::string diagnostics(const StepRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "step=" << r.step << " total=" << r.total << " ce=" << r.ce
     << " logits=" << r.logits << " cm=" << r.cm << " batch=" << r.batch_size
     << " selected=" << r.selected;
  return os.str();
}

}  // namespace

TrainReport train(const TrainConfig& cfg, const DomainDataset& train_data,
                  const DomainDataset& val_data, const TeacherArtifact* teacher,
                  const DomainDataset& test_data, const TrainHooks& hooks) {
  validate(cfg);
  const auto started = std::chrono::steady_clock::now();
  if (train_data.empty()) throw Error(ErrorKind::kParameter, "train: empty training set");
  const bool use_teacher = needs_teacher(cfg);
  if (use_teacher && teacher == nullptr) {
    throw Error(ErrorKind::kParameter, "train: configuration needs a teacher");
  }
  if (use_teacher) {
    for (const auto& s : train_data.samples) {
      if (!teacher->image_embeddings.contains(s.id)) {
        throw Error(ErrorKind::kLookup, "train: teacher has no image embedding for id " + std::to_string(s.id));
      }
    }
    if (teacher->num_classes() != train_data.num_classes) {
      throw Error(ErrorKind::kParameter, "train: teacher and data disagree on the class count");
    }
  }

  TrainReport report;
  report.config = cfg;
  report.student = student_config_for(cfg, train_data, use_teacher ? teacher : nullptr);
  StudentParams params = init_student(report.student);
  Optimizer opt(cfg, params);
  const auto ma_start = static_cast<std::int64_t>(
      std::ceil(cfg.ma_start_frac * static_cast<double>(cfg.total_steps)));
  MAState ma = make_ma(params, ma_start);
  const ScheduleConfig schedule = schedule_of(cfg);
  const double gamma = cfg.loss.gamma.value_or(use_teacher ? teacher->logit_scale : 1.0);
  const Matrix* text = use_teacher ? &teacher->text_embeddings : nullptr;

  std::vector<IndexList> batches;
  std::size_t next_batch = 0;
  std::uint64_t epoch = 0;
  report.steps.reserve(static_cast<std::size_t>(cfg.total_steps));

  for (std::int64_t t = 0; t < cfg.total_steps; ++t) {
    if (next_batch == batches.size()) {
      batches = make_batches(train_data, cfg.batch_size, derive_seed(cfg.seed, {41, epoch++}));
      next_batch = 0;
    }
    const IndexList& batch = batches[next_batch++];
    const Matrix x = train_data.features(batch);
    const Labels y = train_data.labels(batch);
    Matrix soft;
    if (use_teacher) {
      const auto ids = train_data.ids(batch);
      soft = teacher_soft_targets(*teacher, ids, cfg.loss.temperature);
    }

    const bool full = cfg.selection.strategy == SelectionStrategy::kNone ||
                      is_full_batch_step(t, schedule);
    IndexList keep;
    if (full) {
      keep.resize(batch.size());
      for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    } else {
      const PerSampleTerms terms = per_sample_terms(params, report.student, x, y,
                                                    use_teacher ? &soft : nullptr, text, gamma, cfg);
      const Vector scores = score_samples(cfg.selection, cfg.loss, terms);
      keep = select_hard(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
                         cfg.selection.fraction);
    }

    ad::Tape tape;
    const BoundStudent bound = bind(tape, params, report.student.projector_bias);
    ad::Var xs = ad::gather_rows(tape.constant(x), keep);
    Labels ys;
    ys.reserve(keep.size());
    for (std::size_t k : keep) ys.push_back(y[k]);
    Matrix soft_kept;
    if (use_teacher) {
      soft_kept.resize(static_cast<Index>(keep.size()), soft.cols());
      for (std::size_t i = 0; i < keep.size(); ++i) {
        soft_kept.row(static_cast<Index>(i)) = soft.row(static_cast<Index>(keep[i]));
      }
    }
    ad::Var features = forward_features(bound, xs);
    LossInputs in;
    in.logits = forward_logits_from_features(bound, features);
    in.labels = ys;
    if (use_teacher) {
      in.teacher_soft = &soft_kept;
      in.text_embeddings = text;
    }
    if (cfg.loss.cm_weight != 0.0) in.projected = project(bound, features);
    const LossBreakdown loss = combined_loss(cfg.loss, gamma, in);

    StepRecord rec{t, loss.total.scalar(), loss.ce, loss.logits, loss.cm, batch.size(), keep.size(), full};
    if (!std::isfinite(rec.total)) {
      throw Error(ErrorKind::kDivergence, "non-finite loss: " + diagnostics(rec));
    }
    tape.backward(loss.total);
    opt.step(params, gradients(bound, params));
    if (!all_finite(params)) {
      throw Error(ErrorKind::kDivergence, "non-finite parameters after update: " + diagnostics(rec));
    }
    if (t >= ma_start) update_ma(ma, params, t);
    report.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec, keep);

    if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.total_steps) {
      EvalRecord e;
      e.step = t;
      e.val_raw = val_data.empty() ? 0.0 : evaluate(params, val_data);
      e.test_raw = test_data.empty() ? 0.0 : evaluate(params, test_data);
      if (ma.count > 0) {
        e.val_ma = val_data.empty() ? 0.0 : evaluate(ma.mean, val_data);
        e.test_ma = test_data.empty() ? 0.0 : evaluate(ma.mean, test_data);
      }
      report.evals.push_back(e);
      if (hooks.progress) {
        *hooks.progress << "step " << t << " loss " << rec.total << " ce " << rec.ce << " logits "
                        << rec.logits << " cm " << rec.cm << " selected " << rec.selected << '/'
                        << rec.batch_size << " val " << e.val() << '\n';
      }
    }
  }

  const EvalRecord& last = report.evals.back();
  report.final_val_raw = last.val_raw;
  report.final_test_raw = last.test_raw;
  report.final_val_ma = last.val_ma;
  report.final_test_ma = last.test_ma;
  report.selected_eval = select_model_by_val(report);
  report.selected_step = report.evals[report.selected_eval].step;
  report.selected_val = report.evals[report.selected_eval].val();
  report.selected_test = report.evals[report.selected_eval].test();
  report.final_params = std::move(params);
  if (ma.count > 0) report.ma_params = std::move(ma.mean);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace scmd
