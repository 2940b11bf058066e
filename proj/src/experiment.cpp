// SPDX-License-Identifier: Apache-2.0
#include "scmd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "scmd/error.hpp"

namespace scmd {

std::string AlgorithmSpec::name() const {
  switch (kind) {
    case Kind::kErm: return "ERM";
    case Kind::kVanillaKd: return "VanillaKD";
    case Kind::kScmdLogits: return "SCMD_logits";
    case Kind::kScmdFull: return "SCMD_full";
    case Kind::kScmdVariant: return "SCMD_variant(" + std::string(to_string(strategy)) + ")";
  }
  return "?";
}

AlgorithmSpec parse_algorithm(std::string_view name) {
  using Kind = AlgorithmSpec::Kind;
  if (name == "ERM") return {Kind::kErm, SelectionStrategy::kNone};
  if (name == "VanillaKD") return {Kind::kVanillaKd, SelectionStrategy::kNone};
  if (name == "SCMD_logits") return {Kind::kScmdLogits, SelectionStrategy::kCe};
  if (name == "SCMD_full") return {Kind::kScmdFull, SelectionStrategy::kCe};
  constexpr std::string_view prefix = "SCMD_variant(";
  if (name.starts_with(prefix) && name.ends_with(")")) {
    const auto inner = name.substr(prefix.size(), name.size() - prefix.size() - 1);
    return {Kind::kScmdVariant, parse_strategy(inner)};
  }
  throw Error(ErrorKind::kParameter, "unknown algorithm '" + std::string(name) + "'");
}

TrainConfig configure(const TrainConfig& base, const AlgorithmSpec& algorithm) {
  using Kind = AlgorithmSpec::Kind;
  TrainConfig c = base;
  switch (algorithm.kind) {
    case Kind::kErm:
      c.loss.logits_weight = 0.0;
      c.loss.cm_weight = 0.0;
      c.selection.strategy = SelectionStrategy::kNone;
      c.full_batch_fraction = 0.0;
      break;
    case Kind::kVanillaKd:
      c.loss.cm_weight = 0.0;
      c.selection.strategy = SelectionStrategy::kNone;
      c.full_batch_fraction = 0.0;
      break;
    case Kind::kScmdLogits:
      c.loss.cm_weight = 0.0;
      c.selection.strategy = SelectionStrategy::kCe;
      break;
    case Kind::kScmdFull:
      c.selection.strategy = SelectionStrategy::kCe;
      break;
    case Kind::kScmdVariant:
      c.selection.strategy = algorithm.strategy;
      break;
  }
  return c;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  double s = 0.0;
  for (double v : values) s += v;
  r.mean = s / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

std::vector<ExperimentRow> aggregate(const std::vector<ExperimentCell>& cells,
                                     const std::vector<std::string>& algorithms,
                                     const std::vector<int>& held_out,
                                     const std::vector<std::uint64_t>& seeds) {
  std::vector<ExperimentRow> rows;
  for (const auto& alg : algorithms) {
    ExperimentRow row;
    row.algorithm = alg;
    std::map<std::pair<int, std::uint64_t>, double> acc;
    for (const auto& c : cells) {
      if (c.algorithm != alg) continue;
      if (c.ok) {
        acc[{c.held_out, c.seed}] = c.test_accuracy;
      } else {
        ++row.failed_cells;
      }
    }
    for (int d : held_out) {
      std::vector<double> v;
      for (auto s : seeds) {
        if (auto it = acc.find({d, s}); it != acc.end()) v.push_back(it->second);
      }
      row.per_domain.push_back(mean_std(v));
    }
    std::vector<double> per_seed_avg;
    for (auto s : seeds) {
      double total = 0.0;
      bool complete = true;
      for (int d : held_out) {
        auto it = acc.find({d, s});
        if (it == acc.end()) {
          complete = false;
          break;
        }
        total += it->second;
      }
      if (complete && !held_out.empty()) per_seed_avg.push_back(total / static_cast<double>(held_out.size()));
    }
    row.average = mean_std(per_seed_avg);
    rows.push_back(std::move(row));
  }
  return rows;
}

ExperimentTable run_experiment(const DomainDataset& dataset, const TrainConfig& base,
                               const TeacherArtifact* teacher,
                               const std::vector<AlgorithmSpec>& algorithms,
                               const ExperimentOptions& options) {
  ExperimentTable table;
  table.seeds = options.seeds;
  table.held_out = options.held_out;
  if (table.held_out.empty()) {
    for (int d = 0; d < dataset.num_domains; ++d) table.held_out.push_back(d);
  }
  if (algorithms.empty() || table.seeds.empty()) {
    throw Error(ErrorKind::kParameter, "run_experiment: need at least one algorithm and one seed");
  }
  for (const auto& a : algorithms) {
    for (int d : table.held_out) {
      for (auto s : table.seeds) table.cells.push_back(ExperimentCell{a.name(), d, s, false, 0.0, 0.0, {}});
    }
  }
  // Splits are shared by every algorithm for a given (domain, seed).
  parallel_for(table.cells.size(), options.workers, [&](std::size_t i) {
    ExperimentCell& cell = table.cells[i];
    const std::size_t per_alg = table.held_out.size() * table.seeds.size();
    const AlgorithmSpec& alg = algorithms[i / per_alg];
    try {
      auto [pool, test] = split_lodo(dataset, cell.held_out);
      auto [train_set, val_set] =
          split_train_val(pool, options.train_fraction,
                          derive_seed(cell.seed, {51, static_cast<std::uint64_t>(cell.held_out)}));
      TrainConfig cfg = configure(base, alg);
      cfg.seed = cell.seed;
      const TrainReport r = train(cfg, train_set, val_set, teacher, test);
      cell.val_accuracy = r.selected_val;
      cell.test_accuracy = r.selected_test;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });
  std::vector<std::string> names;
  for (const auto& a : algorithms) names.push_back(a.name());
  table.rows = aggregate(table.cells, names, table.held_out, table.seeds);
  return table;
}

namespace {
std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}
}  // namespace

std::string ExperimentTable::to_csv() const {
  std::ostringstream os;
  os << "algorithm";
  for (int d : held_out) os << ",domain_" << d << "_mean,domain_" << d << "_std";
  os << ",avg_mean,avg_std,num_seeds,failed_cells\n";
  for (const auto& r : rows) {
    os << csv_escape(r.algorithm);
    for (const auto& m : r.per_domain) os << ',' << fmt(m.mean) << ',' << fmt(m.std);
    os << ',' << fmt(r.average.mean) << ',' << fmt(r.average.std) << ',' << r.average.n << ','
       << r.failed_cells << '\n';
  }
  return os.str();
}

std::string ExperimentTable::cells_csv() const {
  std::ostringstream os;
  os << "algorithm,held_out,seed,ok,val_accuracy,test_accuracy,error\n";
  for (const auto& c : cells) {
    os << csv_escape(c.algorithm) << ',' << c.held_out << ',' << c.seed << ',' << (c.ok ? 1 : 0) << ','
       << fmt(c.val_accuracy) << ',' << fmt(c.test_accuracy) << ',' << csv_escape(c.error) << '\n';
  }
  return os.str();
}

TrainConfig sample_config(const TrainConfig& base, const SearchSpace& space, Rng& rng) {
  auto uniform = [&](std::pair<double, double> r) {
    return std::uniform_real_distribution<double>(r.first, r.second)(rng);
  };
  auto choice = [&](const std::vector<double>& v) {
    if (v.empty()) throw Error(ErrorKind::kParameter, "sweep: empty choice list");
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  TrainConfig c = base;
  c.loss.logits_weight = uniform(space.logits_weight);
  c.loss.cm_weight = uniform(space.cm_weight);
  c.full_batch_fraction = uniform(space.full_batch_fraction);
  c.selection.fraction = choice(space.selection_fraction);
  c.loss.temperature = uniform(space.temperature);
  c.lr = choice(space.lr);
  c.weight_decay = choice(space.weight_decay);
  return c;
}

SweepResult sweep(const DomainDataset& dataset, const TrainConfig& base,
                  const TeacherArtifact* teacher, const SearchSpace& space,
                  const SweepOptions& options) {
  if (options.n_trials == 0 || options.seeds_per_trial == 0) {
    throw Error(ErrorKind::kParameter, "sweep: need at least one trial and one seed");
  }
  SweepResult result;
  Rng rng(derive_seed(options.sweep_seed, {61}));
  for (std::size_t i = 0; i < options.n_trials; ++i) {
    SweepTrial t;
    t.index = i;
    t.config = sample_config(base, space, rng);
    t.val_accuracies.assign(options.seeds_per_trial, 0.0);
    t.test_accuracies.assign(options.seeds_per_trial, 0.0);
    result.ranked.push_back(std::move(t));
  }
  auto [pool, test] = split_lodo(dataset, options.held_out);
  std::mutex err_mu;
  parallel_for(options.n_trials * options.seeds_per_trial, options.workers, [&](std::size_t job) {
    SweepTrial& trial = result.ranked[job / options.seeds_per_trial];
    const std::size_t k = job % options.seeds_per_trial;
    try {
      TrainConfig cfg = trial.config;
      cfg.seed = derive_seed(options.sweep_seed, {62, k});
      auto [train_set, val_set] = split_train_val(pool, options.train_fraction, cfg.seed);
      const TrainReport r = train(cfg, train_set, val_set, teacher, test);
      trial.val_accuracies[k] = r.selected_val;
      trial.test_accuracies[k] = r.selected_test;
    } catch (const std::exception& e) {
      std::lock_guard lock(err_mu);
      trial.error = e.what();
    }
  });
  for (auto& t : result.ranked) {
    t.mean_val = mean_std(t.val_accuracies).mean;
    t.mean_test = mean_std(t.test_accuracies).mean;
    if (!t.error.empty()) t.mean_val = -1.0;
  }
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [](const SweepTrial& a, const SweepTrial& b) { return a.mean_val > b.mean_val; });
  return result;
}

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os << "rank,trial,lambda_logits,lambda_cm,temperature,selection_fraction,full_batch_fraction,lr,"
        "weight_decay,mean_val,mean_test,error\n";
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& t = ranked[r];
    os << r << ',' << t.index << ',' << fmt(t.config.loss.logits_weight) << ','
       << fmt(t.config.loss.cm_weight) << ',' << fmt(t.config.loss.temperature) << ','
       << fmt(t.config.selection.fraction) << ',' << fmt(t.config.full_batch_fraction) << ','
       << fmt(t.config.lr) << ',' << fmt(t.config.weight_decay) << ',' << fmt(t.mean_val) << ','
       << fmt(t.mean_test) << ',' << csv_escape(t.error) << '\n';
  }
  return os.str();
}

}  // namespace scmd
