// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scmd/data.hpp"
#include "scmd/experiment.hpp"
#include "scmd/teacher.hpp"
#include "scmd/theory.hpp"
#include "scmd/trainer.hpp"

namespace scmd {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kFidelityNote =
    "desk-scale run: MLP student on synthetic latent-rotation domains with an oracle teacher and "
    "uniform parameter averaging; numbers are not comparable to image-benchmark results";

struct DataSection {
  SyntheticConfig synthetic;
  /// Load this dataset file instead of generating one.
  std::optional<std::string> path;
};

struct TeacherSection {
  OracleTeacherConfig oracle;
  /// Load this artifact instead of building the oracle teacher.
  std::optional<std::string> artifact;
};

struct ExperimentSection {
  std::string algorithm = "SCMD_full";           // train
  std::vector<std::string> algorithms{"ERM", "VanillaKD", "SCMD_logits", "SCMD_full"};
  int held_out = 0;                              // train
  std::vector<int> held_out_domains;             // empty = all
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double train_fraction = 0.8;
};

struct SweepSection {
  std::size_t n_trials = 5;
  std::size_t seeds_per_trial = 3;
  std::uint64_t sweep_seed = 0;
  SearchSpace space;
};

struct TheorySection {
  std::uint64_t seed = 0;
  std::size_t lemma1_trials = 100000;
  int lemma1_max_support = 16;
  int lemma2_support = 8;
  std::size_t lemma2_class_size = 32;
  std::size_t lemma2_n = 12;
  double lemma2_delta = 0.1;
  std::size_t lemma2_resamples = 1000;
  theory::Lemma3Construction lemma3 = theory::outlier_toward_test_regime();
  std::size_t lemma3_trials = 2000;
};

/// Whole-run configuration. Sections map one-to-one onto module configs;
/// `schedule.full_batch_fraction` and `student.*` fold into TrainConfig.
struct RunConfig {
  DataSection data;
  TeacherSection teacher;
  TrainConfig train;
  ExperimentSection experiment;
  SweepSection sweep;
  TheorySection theory;
  std::string output_dir = "out";
};

/// Parses and validates a config document. Unknown keys anywhere are
/// collected and reported together as one kConfiguration error.
RunConfig parse_run_config(const Json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
Json to_json(const RunConfig& c);

Json to_json(const SyntheticConfig& c);
Json to_json(const OracleTeacherConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const StudentConfig& c);
Json to_json(const theory::Lemma1Report& r);
Json to_json(const theory::Lemma2Report& r);
Json to_json(const theory::Lemma3Report& r);

/// Full training record. `run` is echoed verbatim when given.
Json to_json(const TrainReport& r, const RunConfig* run = nullptr);

/// Pretty-printed JSON with a trailing newline.
std::string dump(const Json& j);

}  // namespace scmd
