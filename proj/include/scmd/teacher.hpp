// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scmd/binary_io.hpp"
#include "scmd/data.hpp"
#include "scmd/types.hpp"

namespace scmd {

inline constexpr std::string_view kTeacherMagic = "SCMD-TA1";
inline constexpr double kUnitNormTolerance = 1e-5;

/// Frozen teacher knowledge: unit-norm class text embeddings, optional
/// per-sample image embeddings and the logit scale applied to cosines.
struct TeacherArtifact {
  std::vector<std::string> class_names;
  std::string prompt_template = "this is a photo of a {}";
  Matrix text_embeddings;  // C x d_t, unit rows
  double logit_scale = 100.0;
  std::map<SampleId, Vector> image_embeddings;  // ascending ids, unit rows
  /// Header keys written by other producers (e.g. model identifier); kept
  /// so a load/save cycle does not drop them.
  std::string extra_header_json = "{}";

  int num_classes() const { return static_cast<int>(text_embeddings.rows()); }
  int embed_dim() const { return static_cast<int>(text_embeddings.cols()); }
  bool has_image_embeddings() const { return !image_embeddings.empty(); }
};

/// Throws kValidation naming the first offending row or field.
void validate(const TeacherArtifact& a);

io::Bytes encode_artifact(const TeacherArtifact& a);
TeacherArtifact decode_artifact(std::span<const std::uint8_t> bytes);

void save_artifact(const TeacherArtifact& a, const std::filesystem::path& path);
TeacherArtifact load_artifact(const std::filesystem::path& path);

/// Substitutes each class name into the single `{}` of `template_str`.
std::vector<std::string> render_prompts(std::span<const std::string> class_names,
                                        const std::string& template_str);

struct OracleTeacherConfig {
  int embed_dim = 16;
  std::uint64_t anchor_seed = 0;
  double image_noise = 0.3;
  double logit_scale = 100.0;
  std::string prompt_template = "this is a photo of a {}";
};

/// Synthetic teacher: random near-orthogonal class anchors (pairwise cosine
/// < 0.5) as text embeddings, and per-sample image embeddings
/// normalize(anchor[label] + noise).
TeacherArtifact make_oracle_teacher(const OracleTeacherConfig& cfg, const DomainDataset& ds);

/// Row i = softmax_t(logit_scale * image_i . text^T, T).
Matrix teacher_soft_targets(const TeacherArtifact& a, std::span<const SampleId> ids,
                            double temperature);

/// Zero-shot accuracy: argmax of the cosine logits against the true label.
double teacher_accuracy(const TeacherArtifact& a, const DomainDataset& ds);

}  // namespace scmd
