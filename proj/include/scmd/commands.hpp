// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "scmd/config.hpp"

namespace scmd {

/// Flags shared by every subcommand; each overrides the config file.
struct GlobalOptions {
  std::optional<std::string> config;
  /// Replaces train.seed, sweep.sweep_seed and theory.seed.
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t workers = 1;
};

RunConfig resolve_config(const GlobalOptions& g);

/// Dataset named by `data.path`, otherwise generated from `data`.
DomainDataset load_or_generate(const RunConfig& c);
/// Artifact named by `teacher.artifact`, otherwise the oracle teacher.
TeacherArtifact load_or_build_teacher(const RunConfig& c, const DomainDataset& ds);

std::filesystem::path cmd_gen_data(const RunConfig& c, const std::filesystem::path& out_dir);
std::filesystem::path cmd_oracle_teacher(const RunConfig& c, const DomainDataset& ds,
                                         const std::filesystem::path& out_dir);
/// Trains `experiment.algorithm` on all domains but `experiment.held_out`;
/// writes report.json, final.ckpt and (when averaging ran) ma.ckpt.
Json cmd_train(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream* progress);
/// Accuracy of a checkpoint on one domain (or every domain when unset).
Json cmd_eval(const std::filesystem::path& checkpoint, const DomainDataset& ds,
              std::optional<int> domain);
/// One row per selection strategy {none, kl, distill, focal, ce}.
ExperimentTable cmd_ablate(const RunConfig& c, std::size_t workers);
ExperimentTable cmd_experiment(const RunConfig& c, std::size_t workers);
SweepResult cmd_sweep(const RunConfig& c, std::size_t workers);
Json cmd_verify_theory(const RunConfig& c);
std::string cmd_inspect_teacher(const std::filesystem::path& path);

/// Entry point of the `scmd` binary. Errors print one line
/// `error: <kind>: <message>` to `err` and return a nonzero code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scmd
