// SPDX-License-Identifier: Apache-2.0
#include "scmd/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "scmd/binary_io.hpp"
#include "scmd/error.hpp"

namespace scmd {
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kDatasetFile = "dataset.csv";
constexpr std::string_view kTeacherFile = "teacher.scmdta";

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<int> domains_of(const RunConfig& c, const DomainDataset& ds) {
  if (!c.experiment.held_out_domains.empty()) return c.experiment.held_out_domains;
  std::vector<int> all;
  for (int d = 0; d < ds.num_domains; ++d) all.push_back(d);
  return all;
}

bool any_needs_teacher(const RunConfig& c, const std::vector<AlgorithmSpec>& algorithms) {
  return std::any_of(algorithms.begin(), algorithms.end(),
                     [&](const AlgorithmSpec& a) { return needs_teacher(configure(c.train, a)); });
}

ExperimentTable run_table(const RunConfig& c, const std::vector<AlgorithmSpec>& algorithms,
                          std::size_t workers) {
  const DomainDataset ds = load_or_generate(c);
  std::optional<TeacherArtifact> teacher;
  if (any_needs_teacher(c, algorithms)) teacher = load_or_build_teacher(c, ds);
  ExperimentOptions opt;
  opt.held_out = domains_of(c, ds);
  opt.seeds = c.experiment.seeds;
  opt.train_fraction = c.experiment.train_fraction;
  opt.workers = workers;
  return run_experiment(ds, c.train, teacher ? &*teacher : nullptr, algorithms, opt);
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig c = g.config ? load_run_config(*g.config) : parse_run_config(Json::object());
  if (g.seed) {
    c.train.seed = *g.seed;
    c.sweep.sweep_seed = *g.seed;
    c.theory.seed = *g.seed;
  }
  if (g.out) c.output_dir = *g.out;
  return c;
}

DomainDataset load_or_generate(const RunConfig& c) {
  if (c.data.path) return load_dataset(*c.data.path);
  return gen_synthetic(c.data.synthetic);
}

TeacherArtifact load_or_build_teacher(const RunConfig& c, const DomainDataset& ds) {
  if (c.teacher.artifact) return load_artifact(*c.teacher.artifact);
  return make_oracle_teacher(c.teacher.oracle, ds);
}

fs::path cmd_gen_data(const RunConfig& c, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const fs::path path = out_dir / kDatasetFile;
  save_dataset(gen_synthetic(c.data.synthetic), path);
  return path;
}

fs::path cmd_oracle_teacher(const RunConfig& c, const DomainDataset& ds, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const fs::path path = out_dir / kTeacherFile;
  save_artifact(make_oracle_teacher(c.teacher.oracle, ds), path);
  return path;
}

Json cmd_train(const RunConfig& c, const fs::path& out_dir, std::ostream* progress) {
  const DomainDataset ds = load_or_generate(c);
  const TrainConfig cfg = configure(c.train, parse_algorithm(c.experiment.algorithm));
  std::optional<TeacherArtifact> teacher;
  if (needs_teacher(cfg)) teacher = load_or_build_teacher(c, ds);
  const int held_out = c.experiment.held_out;
  auto [pool, test] = split_lodo(ds, held_out);
  auto [train_set, val_set] = split_train_val(pool, c.experiment.train_fraction,
                                              derive_seed(cfg.seed, {51, static_cast<std::uint64_t>(held_out)}));
  TrainHooks hooks;
  hooks.progress = progress;
  const TrainReport r = train(cfg, train_set, val_set, teacher ? &*teacher : nullptr, test, hooks);

  ensure_dir(out_dir);
  Json report = to_json(r, &c);
  report["held_out"] = held_out;
  report["algorithm"] = c.experiment.algorithm;
  save_checkpoint(Checkpoint{r.student, r.final_params, r.config.total_steps}, out_dir / "final.ckpt");
  if (r.ma_params) {
    save_checkpoint(Checkpoint{r.student, *r.ma_params, r.config.total_steps}, out_dir / "ma.ckpt");
  }
  io::write_text_atomic(out_dir / "report.json", dump(report));
  return report;
}

Json cmd_eval(const fs::path& checkpoint, const DomainDataset& ds, std::optional<int> domain) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.config.input_dim != ds.feature_dim || ck.config.num_classes != ds.num_classes) {
    throw Error(ErrorKind::kParameter, "checkpoint does not match the dataset dimensions");
  }
  Json out{{"checkpoint", checkpoint.string()}, {"step", ck.step}};
  if (domain) {
    if (*domain < 0 || *domain >= ds.num_domains) {
      throw Error(ErrorKind::kParameter, "domain " + std::to_string(*domain) + " outside [0, " +
                                             std::to_string(ds.num_domains) + ")");
    }
    auto [rest, held] = split_lodo(ds, *domain);
    out["domain"] = *domain;
    out["num_samples"] = held.size();
    out["accuracy"] = evaluate(ck.params, held);
  } else {
    out["domain"] = nullptr;
    out["num_samples"] = ds.size();
    out["accuracy"] = evaluate(ck.params, ds);
  }
  return out;
}

ExperimentTable cmd_ablate(const RunConfig& c, std::size_t workers) {
  std::vector<AlgorithmSpec> variants;
  for (auto s : {SelectionStrategy::kNone, SelectionStrategy::kKl, SelectionStrategy::kDistill,
                 SelectionStrategy::kFocal, SelectionStrategy::kCe}) {
    variants.push_back({AlgorithmSpec::Kind::kScmdVariant, s});
  }
  return run_table(c, variants, workers);
}

ExperimentTable cmd_experiment(const RunConfig& c, std::size_t workers) {
  std::vector<AlgorithmSpec> algorithms;
  for (const auto& name : c.experiment.algorithms) algorithms.push_back(parse_algorithm(name));
  return run_table(c, algorithms, workers);
}

SweepResult cmd_sweep(const RunConfig& c, std::size_t workers) {
  const DomainDataset ds = load_or_generate(c);
  const TeacherArtifact teacher = load_or_build_teacher(c, ds);
  SweepOptions opt;
  opt.n_trials = c.sweep.n_trials;
  opt.seeds_per_trial = c.sweep.seeds_per_trial;
  opt.sweep_seed = c.sweep.sweep_seed;
  opt.held_out = c.experiment.held_out;
  opt.train_fraction = c.experiment.train_fraction;
  opt.workers = workers;
  return sweep(ds, c.train, &teacher, c.sweep.space, opt);
}

Json cmd_verify_theory(const RunConfig& c) {
  const auto& t = c.theory;
  const auto l1 = theory::check_lemma1(t.lemma1_trials, t.lemma1_max_support, t.seed);
  const auto inst = theory::make_lemma2_instance(t.lemma2_support, t.lemma2_class_size, t.seed);
  const auto l2 = theory::check_lemma2(inst.hypotheses, inst.p, inst.p_test, inst.labeling, t.lemma2_n,
                                       t.lemma2_delta, t.lemma2_resamples, t.seed);
  const auto l3 = theory::check_lemma3(t.lemma3, t.lemma3_trials, t.seed);
  Json j1 = to_json(l1);
  j1["max_support"] = t.lemma1_max_support;
  j1["passed"] = l1.violations == 0;
  Json j2 = to_json(l2);
  j2["support"] = t.lemma2_support;
  j2["class_size"] = t.lemma2_class_size;
  j2["n"] = t.lemma2_n;
  j2["passed"] = l2.violation_rate <= l2.allowed_rate;
  Json j3 = to_json(l3);
  j3["family_size"] = t.lemma3.fixed_alphas ? t.lemma3.fixed_alphas->size() : t.lemma3.family_size;
  return Json{{"seed", t.seed}, {"lemma1", j1}, {"lemma2", j2}, {"lemma3", j3}};
}

std::string cmd_inspect_teacher(const fs::path& path) {
  const TeacherArtifact a = load_artifact(path);
  std::ostringstream os;
  os << "file: " << path.string() << '\n'
     << "crc: ok\n"
     << "classes: " << a.num_classes() << '\n'
     << "embed_dim: " << a.embed_dim() << '\n'
     << "logit_scale: " << fmt(a.logit_scale) << '\n'
     << "prompt_template: " << a.prompt_template << '\n'
     << "image_embeddings: " << a.image_embeddings.size() << '\n';
  const auto prompts = render_prompts(a.class_names, a.prompt_template);
  for (int c = 0; c < a.num_classes(); ++c) {
    os << "  class " << c << " '" << prompts[static_cast<std::size_t>(c)]
       << "' norm " << fmt(a.text_embeddings.row(c).norm(), 9) << '\n';
  }
  if (a.has_image_embeddings()) {
    double lo = 1e300, hi = -1e300;
    for (const auto& [id, v] : a.image_embeddings) {
      lo = std::min(lo, v.norm());
      hi = std::max(hi, v.norm());
    }
    os << "image_norm_range: [" << fmt(lo, 9) << ", " << fmt(hi, 9) << "]\n";
  }
  if (a.extra_header_json != "{}") os << "extra_header: " << a.extra_header_json << '\n';
  return os.str();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Selective cross-modality distillation toolkit"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "seed override (train, sweep and theory)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--workers", g.workers, "parallel training runs")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic multi-domain dataset");
  auto* oracle = app.add_subcommand("oracle-teacher", "build the oracle teacher artifact");
  std::optional<std::string> oracle_dataset;
  oracle->add_option("--dataset", oracle_dataset, "dataset file (default: data section)");
  auto* train_cmd = app.add_subcommand("train", "train one student and write report and checkpoints");
  auto* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset");
  std::string eval_checkpoint;
  std::optional<std::string> eval_dataset;
  std::optional<int> eval_domain;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "dataset file (default: data section)");
  eval_cmd->add_option("--domain", eval_domain, "evaluate on this domain only");
  auto* ablate = app.add_subcommand("ablate", "selection-strategy ablation table");
  auto* experiment = app.add_subcommand("experiment", "leave-one-domain-out comparison table");
  auto* sweep_cmd = app.add_subcommand("sweep", "random hyperparameter search");
  auto* theory_cmd = app.add_subcommand("verify-theory", "brute-force checks of the risk bounds");
  auto* inspect = app.add_subcommand("inspect-teacher", "summarise a teacher artifact");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "artifact file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    const RunConfig c = resolve_config(g);
    const fs::path out_dir = c.output_dir;
    if (gen->parsed()) {
      out << "wrote " << cmd_gen_data(c, out_dir).string() << '\n';
    } else if (oracle->parsed()) {
      const DomainDataset ds = oracle_dataset ? load_dataset(*oracle_dataset) : load_or_generate(c);
      const fs::path path = cmd_oracle_teacher(c, ds, out_dir);
      out << "wrote " << path.string() << " (teacher accuracy "
          << fmt(teacher_accuracy(load_artifact(path), ds)) << ")\n";
    } else if (train_cmd->parsed()) {
      const Json r = cmd_train(c, out_dir, &out);
      out << "selected step " << r["selected"]["step"].get<std::int64_t>() << " val "
          << fmt(r["selected"]["val"].get<double>()) << " test " << fmt(r["selected"]["test"].get<double>())
          << "\nwrote " << (out_dir / "report.json").string() << '\n';
    } else if (eval_cmd->parsed()) {
      const DomainDataset ds = eval_dataset ? load_dataset(*eval_dataset) : load_or_generate(c);
      const Json r = cmd_eval(eval_checkpoint, ds, eval_domain);
      ensure_dir(out_dir);
      io::write_text_atomic(out_dir / "eval.json", dump(r));
      out << dump(r);
    } else if (ablate->parsed() || experiment->parsed()) {
      const bool is_ablate = ablate->parsed();
      const ExperimentTable t = is_ablate ? cmd_ablate(c, g.workers) : cmd_experiment(c, g.workers);
      ensure_dir(out_dir);
      const std::string stem = is_ablate ? "ablation" : "experiment";
      io::write_text_atomic(out_dir / (stem + "_cells.csv"), t.cells_csv());
      io::write_text_atomic(out_dir / (stem + ".csv"), t.to_csv());
      out << t.to_csv();
      for (const auto& row : t.rows) {
        if (row.failed_cells) throw Error(ErrorKind::kDivergence, row.algorithm + ": " +
                                                                      std::to_string(row.failed_cells) +
                                                                      " runs failed, see " + stem + "_cells.csv");
      }
    } else if (sweep_cmd->parsed()) {
      const SweepResult s = cmd_sweep(c, g.workers);
      ensure_dir(out_dir);
      io::write_text_atomic(out_dir / "sweep.csv", s.to_csv());
      RunConfig best = c;
      best.train = s.ranked.front().config;
      Json j{{"trial", s.ranked.front().index},
             {"mean_val", s.ranked.front().mean_val},
             {"mean_test", s.ranked.front().mean_test},
             {"config", to_json(best)}};
      io::write_text_atomic(out_dir / "best_config.json", dump(j));
      out << s.to_csv();
    } else if (theory_cmd->parsed()) {
      const Json r = cmd_verify_theory(c);
      ensure_dir(out_dir);
      for (const char* lemma : {"lemma1", "lemma2", "lemma3"}) {
        io::write_text_atomic(out_dir / (std::string(lemma) + ".json"), dump(r[lemma]));
      }
      out << dump(r);
      if (!r["lemma1"]["passed"].get<bool>() || !r["lemma2"]["passed"].get<bool>()) {
        throw Error(ErrorKind::kValidation, "risk bound violated, see " + out_dir.string());
      }
    } else if (inspect->parsed()) {
      out << cmd_inspect_teacher(inspect_path);
    }
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace scmd
