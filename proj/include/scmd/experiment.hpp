// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scmd/random.hpp"
#include "scmd/trainer.hpp"

namespace scmd {

/// Algorithms compared in the leave-one-domain-out driver.
///   ERM          cross-entropy only
///   VanillaKD    CE + logits KL on every sample
///   SCMD_logits  CE + logits KL with CE-based selection
///   SCMD_full    CE + logits KL + CM with CE-based selection
///   SCMD_variant(s) SCMD_full with selection strategy s
struct AlgorithmSpec {
  enum class Kind { kErm, kVanillaKd, kScmdLogits, kScmdFull, kScmdVariant };
  Kind kind = Kind::kScmdFull;
  SelectionStrategy strategy = SelectionStrategy::kCe;

  std::string name() const;
};

AlgorithmSpec parse_algorithm(std::string_view name);
/// Applies the algorithm's loss and selection settings to a base config.
TrainConfig configure(const TrainConfig& base, const AlgorithmSpec& algorithm);

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct ExperimentCell {
  std::string algorithm;
  int held_out = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string error;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> values);

struct ExperimentRow {
  std::string algorithm;
  std::vector<MeanStd> per_domain;  // aligned with ExperimentTable::held_out
  MeanStd average;                  // over seeds of the per-seed domain average
  std::size_t failed_cells = 0;
};

struct ExperimentTable {
  std::vector<int> held_out;
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentCell> cells;
  std::vector<ExperimentRow> rows;

  std::string to_csv() const;
  std::string cells_csv() const;
};

struct ExperimentOptions {
  std::vector<int> held_out;  // empty = every domain
  std::vector<std::uint64_t> seeds{0};
  double train_fraction = 0.8;
  std::size_t workers = 1;
};

/// For each held-out domain x algorithm x seed: split the remaining domains
/// 80/20, train, select by training-domain validation and record the
/// held-out accuracy of the selected model.
ExperimentTable run_experiment(const DomainDataset& dataset, const TrainConfig& base,
                               const TeacherArtifact* teacher,
                               const std::vector<AlgorithmSpec>& algorithms,
                               const ExperimentOptions& options);

/// Aggregates raw cells into rows; exposed so tables can be recomputed.
std::vector<ExperimentRow> aggregate(const std::vector<ExperimentCell>& cells,
                                     const std::vector<std::string>& algorithms,
                                     const std::vector<int>& held_out,
                                     const std::vector<std::uint64_t>& seeds);

/// Random-search ranges. Pairs are uniform bounds; vectors are choices.
struct SearchSpace {
  std::pair<double, double> logits_weight{0.5, 1.0};
  std::pair<double, double> cm_weight{0.5, 1.0};
  std::pair<double, double> full_batch_fraction{0.2, 0.4};
  std::vector<double> selection_fraction{0.2, 0.25, 0.3};
  std::pair<double, double> temperature{2.0, 5.0};
  std::vector<double> lr{1e-3};
  std::vector<double> weight_decay{1e-4, 1e-6};
};

/// Draws one configuration from the space on top of `base`.
TrainConfig sample_config(const TrainConfig& base, const SearchSpace& space, Rng& rng);

struct SweepTrial {
  std::size_t index = 0;
  TrainConfig config;
  std::vector<double> val_accuracies;
  std::vector<double> test_accuracies;
  double mean_val = 0.0;
  double mean_test = 0.0;
  std::string error;
};

struct SweepResult {
  std::vector<SweepTrial> ranked;  // best mean validation accuracy first

  std::string to_csv() const;
};

struct SweepOptions {
  std::size_t n_trials = 5;
  std::size_t seeds_per_trial = 3;
  std::uint64_t sweep_seed = 0;
  int held_out = 0;
  double train_fraction = 0.8;
  std::size_t workers = 1;
};

/// Samples `n_trials` configs, trains each with `seeds_per_trial` seeds and
/// ranks by mean validation accuracy on the training domains.
SweepResult sweep(const DomainDataset& dataset, const TrainConfig& base,
                  const TeacherArtifact* teacher, const SearchSpace& space,
                  const SweepOptions& options);

}  // namespace scmd
