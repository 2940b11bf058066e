// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scmd/autodiff.hpp"
#include "scmd/binary_io.hpp"
#include "scmd/types.hpp"

namespace scmd {

struct StudentConfig {
  int input_dim = 16;
  std::vector<int> hidden_dims{64, 64};
  int num_classes = 4;
  int teacher_embed_dim = 16;
  std::uint64_t init_seed = 0;
  bool projector_bias = true;
};

/// y = x W^T + b, with W stored out x in.
struct Dense {
  Matrix weight;
  Matrix bias;  // 1 x out
};

struct StudentParams {
  std::vector<Dense> hidden;
  Dense classifier;
  Dense projector;

  std::size_t parameter_count() const;
};

/// Visits every parameter tensor in a fixed order.
template <typename Params, typename F>
void for_each_tensor(Params& p, F&& f) {
  for (auto& layer : p.hidden) {
    f(layer.weight);
    f(layer.bias);
  }
  f(p.classifier.weight);
  f(p.classifier.bias);
  f(p.projector.weight);
  f(p.projector.bias);
}

/// Visits matching tensors of two same-layout parameter sets.
template <typename A, typename B, typename F>
void zip_tensors(A& a, B& b, F&& f) {
  std::vector<decltype(&a.classifier.weight)> lhs;
  std::vector<decltype(&b.classifier.weight)> rhs;
  for_each_tensor(a, [&](auto& t) { lhs.push_back(&t); });
  for_each_tensor(b, [&](auto& t) { rhs.push_back(&t); });
  if (lhs.size() != rhs.size()) throw Error(ErrorKind::kContract, "parameter layouts differ");
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i]->rows() != rhs[i]->rows() || lhs[i]->cols() != rhs[i]->cols()) {
      throw Error(ErrorKind::kContract, "parameter shapes differ at tensor " + std::to_string(i));
    }
    f(*lhs[i], *rhs[i]);
  }
}

/// Zero tensors with the layout of `like`.
StudentParams zeros_like(const StudentParams& like);
bool all_finite(const StudentParams& p);
bool bitwise_equal(const StudentParams& a, const StudentParams& b);

/// He-scaled Gaussian weights (std sqrt(2 / fan_in)), zero biases.
StudentParams init_student(const StudentConfig& cfg);

/// Parameters placed on a tape as gradient-tracking leaves.
struct BoundStudent {
  std::vector<std::pair<ad::Var, ad::Var>> hidden;
  std::pair<ad::Var, ad::Var> classifier;
  std::pair<ad::Var, ad::Var> projector;
  bool projector_bias = true;
};

BoundStudent bind(ad::Tape& tape, const StudentParams& p, bool projector_bias = true,
                  bool requires_grad = true);
/// Collects the gradients accumulated on the bound leaves; absent ones are zero.
StudentParams gradients(const BoundStudent& bound, const StudentParams& like);

/// ReLU MLP output of the last hidden layer, B x h.
ad::Var forward_features(const BoundStudent& s, ad::Var x);
/// Classifier head over `forward_features`, B x C. Never touches the projector.
ad::Var forward_logits_from_features(const BoundStudent& s, ad::Var features);
ad::Var forward_logits(const BoundStudent& s, ad::Var x);
/// Linear projection into the teacher embedding space followed by row-wise
/// L2 normalisation, B x d_t.
ad::Var project(const BoundStudent& s, ad::Var features);

/// Number of `project` calls made by this thread (instrumentation).
std::uint64_t projector_calls();

/// Inference-only logits for a feature matrix.
Matrix predict_logits(const StudentParams& p, const Matrix& x);

inline constexpr std::string_view kCheckpointMagic = "SCMD-CK1";

struct Checkpoint {
  StudentConfig config;
  StudentParams params;
  std::int64_t step = 0;
};

/// Same framing as teacher artifacts with a little-endian f64 payload.
io::Bytes encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Layout implied by a config, with zero values.
StudentParams layout_for(const StudentConfig& cfg);

}  // namespace scmd
