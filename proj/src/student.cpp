// SPDX-License-Identifier: Apache-2.0
#include "scmd/student.hpp"

#include <cmath>
#include <cstring>

#include <json.hpp>

#include "scmd/error.hpp"
#include "scmd/random.hpp"

namespace scmd {

using nlohmann::json;

namespace {

thread_local std::uint64_t g_projector_calls = 0;

void validate_config(const StudentConfig& cfg) {
  bool ok = cfg.input_dim >= 1 && cfg.num_classes >= 1 && cfg.teacher_embed_dim >= 1 &&
            !cfg.hidden_dims.empty();
  for (int h : cfg.hidden_dims) ok = ok && h >= 1;
  if (!ok) throw Error(ErrorKind::kConfiguration, "student: all dimensions must be >= 1");
}

Dense zero_dense(int in, int out) {
  return Dense{Matrix::Zero(out, in), Matrix::Zero(1, out)};
}

}  // namespace

std::size_t StudentParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const Matrix& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

StudentParams layout_for(const StudentConfig& cfg) {
  validate_config(cfg);
  StudentParams p;
  int in = cfg.input_dim;
  for (int h : cfg.hidden_dims) {
    p.hidden.push_back(zero_dense(in, h));
    in = h;
  }
  p.classifier = zero_dense(in, cfg.num_classes);
  p.projector = zero_dense(in, cfg.teacher_embed_dim);
  return p;
}

StudentParams zeros_like(const StudentParams& like) {
  StudentParams z = like;
  for_each_tensor(z, [](Matrix& t) { t.setZero(); });
  return z;
}

bool all_finite(const StudentParams& p) {
  bool ok = true;
  for_each_tensor(p, [&](const Matrix& t) { ok = ok && t.allFinite(); });
  return ok;
}

bool bitwise_equal(const StudentParams& a, const StudentParams& b) {
  bool eq = true;
  zip_tensors(a, b, [&](const Matrix& x, const Matrix& y) {
    eq = eq && std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0;
  });
  return eq;
}

StudentParams init_student(const StudentConfig& cfg) {
  StudentParams p = layout_for(cfg);
  Rng rng(derive_seed(cfg.init_seed, {21}));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto he = [&](Dense& d) {
    const double std = std::sqrt(2.0 / static_cast<double>(d.weight.cols()));
    for (Index i = 0; i < d.weight.rows(); ++i) {
      for (Index j = 0; j < d.weight.cols(); ++j) d.weight(i, j) = std * normal(rng);
    }
  };
  for (auto& layer : p.hidden) he(layer);
  he(p.classifier);
  he(p.projector);
  return p;
}

BoundStudent bind(ad::Tape& tape, const StudentParams& p, bool projector_bias, bool requires_grad) {
  BoundStudent b;
  b.projector_bias = projector_bias;
  auto leaf = [&](const Dense& d) {
    return std::pair{tape.leaf(d.weight, requires_grad), tape.leaf(d.bias, requires_grad)};
  };
  for (const auto& layer : p.hidden) b.hidden.push_back(leaf(layer));
  b.classifier = leaf(p.classifier);
  b.projector = leaf(p.projector);
  return b;
}

StudentParams gradients(const BoundStudent& bound, const StudentParams& like) {
  StudentParams g = zeros_like(like);
  auto take = [](Matrix& dst, ad::Var v) {
    if (v.grad().size() != 0) dst = v.grad();
  };
  for (std::size_t i = 0; i < g.hidden.size(); ++i) {
    take(g.hidden[i].weight, bound.hidden[i].first);
    take(g.hidden[i].bias, bound.hidden[i].second);
  }
  take(g.classifier.weight, bound.classifier.first);
  take(g.classifier.bias, bound.classifier.second);
  take(g.projector.weight, bound.projector.first);
  take(g.projector.bias, bound.projector.second);
  return g;
}

namespace {
ad::Var affine(ad::Var x, const std::pair<ad::Var, ad::Var>& layer, bool with_bias = true) {
  ad::Var y = ad::matmul(x, ad::transpose(layer.first));
  return with_bias ? ad::add_row(y, layer.second) : y;
}
}  // namespace

ad::Var forward_features(const BoundStudent& s, ad::Var x) {
  if (s.hidden.empty() || x.cols() != s.hidden.front().first.cols()) {
    throw Error(ErrorKind::kDimension, "forward_features: input has " + std::to_string(x.cols()) +
                                           " columns, expected " +
                                           std::to_string(s.hidden.empty() ? 0 : s.hidden.front().first.cols()));
  }
  ad::Var h = x;
  for (const auto& layer : s.hidden) h = ad::relu(affine(h, layer));
  return h;
}

ad::Var forward_logits_from_features(const BoundStudent& s, ad::Var features) {
  return affine(features, s.classifier);
}

ad::Var forward_logits(const BoundStudent& s, ad::Var x) {
  return forward_logits_from_features(s, forward_features(s, x));
}

ad::Var project(const BoundStudent& s, ad::Var features) {
  ++g_projector_calls;
  return ad::l2_normalize(affine(features, s.projector, s.projector_bias));
}

std::uint64_t projector_calls() { return g_projector_calls; }

Matrix predict_logits(const StudentParams& p, const Matrix& x) {
  ad::Tape tape;
  const BoundStudent s = bind(tape, p, true, false);
  return forward_logits(s, tape.constant(x)).value();
}

namespace {

json config_json(const StudentConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"hidden_dims", c.hidden_dims},
              {"num_classes", c.num_classes},
              {"teacher_embed_dim", c.teacher_embed_dim},
              {"init_seed", c.init_seed},
              {"projector_bias", c.projector_bias}};
}

}  // namespace

io::Bytes encode_checkpoint(const Checkpoint& c) {
  json header{{"format_version", 1},
              {"config", config_json(c.config)},
              {"step", c.step},
              {"num_parameters", c.params.parameter_count()}};
  io::Bytes payload;
  payload.reserve(8 * c.params.parameter_count());
  for_each_tensor(c.params, [&](const Matrix& t) {
    for (Index k = 0; k < t.size(); ++k) io::put_f64(payload, t.data()[k]);
  });
  return io::frame(kCheckpointMagic, header.dump(), payload);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  const io::Unframed un = io::unframe(kCheckpointMagic, bytes);
  Checkpoint c;
  std::size_t declared = 0;
  try {
    const json header = json::parse(un.header_json);
    const json& cfg = header.at("config");
    c.config.input_dim = cfg.at("input_dim").get<int>();
    c.config.hidden_dims = cfg.at("hidden_dims").get<std::vector<int>>();
    c.config.num_classes = cfg.at("num_classes").get<int>();
    c.config.teacher_embed_dim = cfg.at("teacher_embed_dim").get<int>();
    c.config.init_seed = cfg.at("init_seed").get<std::uint64_t>();
    c.config.projector_bias = cfg.value("projector_bias", true);
    c.step = header.at("step").get<std::int64_t>();
    declared = header.at("num_parameters").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("checkpoint: header: ") + e.what());
  }
  c.params = layout_for(c.config);
  if (declared != c.params.parameter_count()) {
    throw Error(ErrorKind::kValidation, "checkpoint: parameter count does not match config");
  }
  io::Reader r(un.payload);
  for_each_tensor(c.params, [&](Matrix& t) {
    for (Index k = 0; k < t.size(); ++k) t.data()[k] = r.f64();
  });
  if (r.remaining() != 0) throw Error(ErrorKind::kValidation, "checkpoint: trailing payload bytes");
  if (!all_finite(c.params)) throw Error(ErrorKind::kValidation, "checkpoint: non-finite parameter");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace scmd
