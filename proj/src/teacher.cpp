// SPDX-License-Identifier: Apache-2.0
#include "scmd/teacher.hpp"

#include <cmath>

#include <json.hpp>

#include "scmd/autodiff.hpp"
#include "scmd/error.hpp"
#include "scmd/random.hpp"

namespace scmd {

using nlohmann::json;

namespace {

void check_unit_rows(const Matrix& m, const char* what) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitNormTolerance) {
      throw Error(ErrorKind::kValidation, std::string(what) + " row " + std::to_string(i) +
                                              " has norm " + std::to_string(n) + ", expected 1");
    }
  }
}

}  // namespace

void validate(const TeacherArtifact& a) {
  if (a.text_embeddings.rows() < 1 || a.text_embeddings.cols() < 1) {
    throw Error(ErrorKind::kValidation, "teacher: empty text embeddings");
  }
  if (static_cast<Index>(a.class_names.size()) != a.text_embeddings.rows()) {
    throw Error(ErrorKind::kValidation, "teacher: " + std::to_string(a.class_names.size()) +
                                            " class names for " +
                                            std::to_string(a.text_embeddings.rows()) + " text rows");
  }
  if (!(a.logit_scale > 0.0) || !std::isfinite(a.logit_scale)) {
    throw Error(ErrorKind::kValidation, "teacher: logit_scale must be positive");
  }
  check_unit_rows(a.text_embeddings, "text embedding");
  for (const auto& [id, emb] : a.image_embeddings) {
    if (emb.size() != a.text_embeddings.cols()) {
      throw Error(ErrorKind::kValidation, "teacher: image embedding for id " + std::to_string(id) +
                                              " has wrong dimension");
    }
    const double n = emb.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitNormTolerance) {
      throw Error(ErrorKind::kValidation, "image embedding for id " + std::to_string(id) +
                                              " has norm " + std::to_string(n) + ", expected 1");
    }
  }
}

io::Bytes encode_artifact(const TeacherArtifact& a) {
  json header = json::parse(a.extra_header_json.empty() ? "{}" : a.extra_header_json);
  header["format_version"] = 1;
  header["num_classes"] = a.num_classes();
  header["embed_dim"] = a.embed_dim();
  header["num_samples"] = a.image_embeddings.size();
  header["logit_scale"] = a.logit_scale;
  header["prompt_template"] = a.prompt_template;
  header["class_names"] = a.class_names;
  header["has_image_embeddings"] = a.has_image_embeddings();

  io::Bytes payload;
  payload.reserve(4 * static_cast<std::size_t>(a.text_embeddings.size()) +
                  a.image_embeddings.size() * (8 + 4 * static_cast<std::size_t>(a.embed_dim())));
  for (Index i = 0; i < a.text_embeddings.rows(); ++i) {
    for (Index j = 0; j < a.text_embeddings.cols(); ++j) {
      io::put_f32(payload, static_cast<float>(a.text_embeddings(i, j)));
    }
  }
  if (a.has_image_embeddings()) {
    for (const auto& [id, emb] : a.image_embeddings) io::put_u64(payload, id);
    for (const auto& [id, emb] : a.image_embeddings) {
      for (Index j = 0; j < emb.size(); ++j) io::put_f32(payload, static_cast<float>(emb(j)));
    }
  }
  return io::frame(kTeacherMagic, header.dump(), payload);
}

TeacherArtifact decode_artifact(std::span<const std::uint8_t> bytes) {
  const io::Unframed un = io::unframe(kTeacherMagic, bytes);
  json header;
  try {
    header = json::parse(un.header_json);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("teacher: bad JSON header: ") + e.what());
  }
  TeacherArtifact a;
  std::size_t num_classes = 0;
  std::size_t embed_dim = 0;
  std::size_t num_samples = 0;
  bool has_images = false;
  try {
    if (header.at("format_version").get<int>() != 1) {
      throw Error(ErrorKind::kValidation, "teacher: unsupported format_version");
    }
    num_classes = header.at("num_classes").get<std::size_t>();
    embed_dim = header.at("embed_dim").get<std::size_t>();
    num_samples = header.at("num_samples").get<std::size_t>();
    a.logit_scale = header.at("logit_scale").get<double>();
    a.prompt_template = header.at("prompt_template").get<std::string>();
    a.class_names = header.at("class_names").get<std::vector<std::string>>();
    has_images = header.at("has_image_embeddings").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("teacher: header field: ") + e.what());
  }
  json extra = header;
  for (const char* k : {"format_version", "num_classes", "embed_dim", "num_samples", "logit_scale",
                        "prompt_template", "class_names", "has_image_embeddings"}) {
    extra.erase(k);
  }
  a.extra_header_json = extra.dump();

  io::Reader r(un.payload);
  a.text_embeddings.resize(static_cast<Index>(num_classes), static_cast<Index>(embed_dim));
  for (Index i = 0; i < a.text_embeddings.rows(); ++i) {
    for (Index j = 0; j < a.text_embeddings.cols(); ++j) a.text_embeddings(i, j) = r.f32();
  }
  if (has_images) {
    std::vector<SampleId> ids(num_samples);
    for (auto& id : ids) id = r.u64();
    for (SampleId id : ids) {
      Vector emb(static_cast<Index>(embed_dim));
      for (Index j = 0; j < emb.size(); ++j) emb(j) = r.f32();
      if (!a.image_embeddings.emplace(id, std::move(emb)).second) {
        throw Error(ErrorKind::kValidation, "teacher: duplicate sample id " + std::to_string(id));
      }
    }
  }
  if (r.remaining() != 0) {
    throw Error(ErrorKind::kValidation, "teacher: " + std::to_string(r.remaining()) +
                                            " trailing payload bytes");
  }
  validate(a);
  return a;
}

void save_artifact(const TeacherArtifact& a, const std::filesystem::path& path) {
  validate(a);
  io::write_file_atomic(path, encode_artifact(a));
}

TeacherArtifact load_artifact(const std::filesystem::path& path) {
  return decode_artifact(io::read_file(path));
}

std::vector<std::string> render_prompts(std::span<const std::string> class_names,
                                        const std::string& template_str) {
  const auto first = template_str.find("{}");
  if (first == std::string::npos) {
    throw Error(ErrorKind::kTemplate, "prompt template has no '{}' placeholder");
  }
  if (template_str.find("{}", first + 2) != std::string::npos) {
    throw Error(ErrorKind::kTemplate, "prompt template has more than one '{}' placeholder");
  }
  std::vector<std::string> out;
  out.reserve(class_names.size());
  for (const auto& name : class_names) {
    std::string p = template_str;
    p.replace(first, 2, name);
    out.push_back(std::move(p));
  }
  return out;
}

TeacherArtifact make_oracle_teacher(const OracleTeacherConfig& cfg, const DomainDataset& ds) {
  const int c = ds.num_classes;
  if (cfg.embed_dim < c || c < 1) {
    throw Error(ErrorKind::kConfiguration, "oracle teacher: embed_dim must be >= num_classes");
  }
  if (!(cfg.image_noise >= 0.0) || !(cfg.logit_scale > 0.0)) {
    throw Error(ErrorKind::kConfiguration, "oracle teacher: need image_noise >= 0, logit_scale > 0");
  }
  TeacherArtifact a;
  a.logit_scale = cfg.logit_scale;
  a.prompt_template = cfg.prompt_template;
  for (int k = 0; k < c; ++k) a.class_names.push_back("class_" + std::to_string(k));
  const auto prompts = render_prompts(a.class_names, a.prompt_template);
  a.extra_header_json = json{{"prompts", prompts}, {"source", "oracle"}}.dump();

  Rng rng(derive_seed(cfg.anchor_seed, {11}));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw_unit = [&] {
    Vector v(cfg.embed_dim);
    for (Index j = 0; j < v.size(); ++j) v(j) = normal(rng);
    return Vector(v / v.norm());
  };

  a.text_embeddings.resize(c, cfg.embed_dim);
  int tries = 0;
  for (int k = 0; k < c; ++k) {
    while (true) {
      if (++tries > 1000) {
        throw Error(ErrorKind::kConfiguration, "oracle teacher: anchor resampling failed after 1000 tries");
      }
      const Vector v = draw_unit();
      bool ok = true;
      for (int prev = 0; prev < k && ok; ++prev) ok = a.text_embeddings.row(prev).dot(v) < 0.5;
      if (ok) {
        a.text_embeddings.row(k) = v.transpose();
        break;
      }
    }
  }

  for (const auto& s : ds.samples) {
    Rng srng(derive_seed(cfg.anchor_seed, {12, s.id}));
    Vector v = a.text_embeddings.row(s.label).transpose();
    for (Index j = 0; j < v.size(); ++j) v(j) += cfg.image_noise * normal(srng);
    const double n = v.norm();
    if (!(n > ad::kNormEpsilon)) {
      throw Error(ErrorKind::kDegenerateVector, "oracle teacher: zero image embedding for id " +
                                                    std::to_string(s.id));
    }
    a.image_embeddings.emplace(s.id, v / n);
  }
  // Match what a saved artifact holds so in-memory and loaded teachers agree.
  auto to_f32 = [](double x) { return static_cast<double>(static_cast<float>(x)); };
  a.text_embeddings = a.text_embeddings.unaryExpr(to_f32);
  for (auto& [id, emb] : a.image_embeddings) emb = emb.unaryExpr(to_f32);
  return a;
}

Matrix teacher_soft_targets(const TeacherArtifact& a, std::span<const SampleId> ids,
                            double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorKind::kParameter, "teacher_soft_targets: temperature must be positive");
  }
  Matrix img(static_cast<Index>(ids.size()), a.embed_dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = a.image_embeddings.find(ids[i]);
    if (it == a.image_embeddings.end()) {
      throw Error(ErrorKind::kLookup, "teacher: no image embedding for sample id " + std::to_string(ids[i]));
    }
    img.row(static_cast<Index>(i)) = it->second.transpose();
  }
  const Matrix logits = a.logit_scale * img * a.text_embeddings.transpose();
  ad::Tape tape;
  return ad::softmax_t(tape.constant(logits), temperature).value();
}

double teacher_accuracy(const TeacherArtifact& a, const DomainDataset& ds) {
  if (ds.empty()) throw Error(ErrorKind::kParameter, "teacher_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& s : ds.samples) {
    auto it = a.image_embeddings.find(s.id);
    if (it == a.image_embeddings.end()) {
      throw Error(ErrorKind::kLookup, "teacher: no image embedding for sample id " + std::to_string(s.id));
    }
    Index best = 0;
    (a.text_embeddings * it->second).maxCoeff(&best);
    if (best == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace scmd
