// SPDX-License-Identifier: Apache-2.0
#include "scmd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "scmd/binary_io.hpp"
#include "scmd/error.hpp"
#include "scmd/random.hpp"

namespace scmd {

using nlohmann::json;

Matrix DomainDataset::features(std::span<const std::size_t> positions) const {
  Matrix x(static_cast<Index>(positions.size()), feature_dim);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    x.row(static_cast<Index>(i)) = samples.at(positions[i]).x.transpose();
  }
  return x;
}

Labels DomainDataset::labels(std::span<const std::size_t> positions) const {
  Labels y;
  y.reserve(positions.size());
  for (std::size_t p : positions) y.push_back(samples.at(p).label);
  return y;
}

std::vector<SampleId> DomainDataset::ids(std::span<const std::size_t> positions) const {
  std::vector<SampleId> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(samples.at(p).id);
  return out;
}

Matrix DomainDataset::all_features() const {
  Matrix x(static_cast<Index>(samples.size()), feature_dim);
  for (std::size_t i = 0; i < samples.size(); ++i) x.row(static_cast<Index>(i)) = samples[i].x.transpose();
  return x;
}

Labels DomainDataset::all_labels() const {
  Labels y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

int gold_label(double u, double v, int num_classes) {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / num_classes;
    const double score = u * std::cos(angle) + v * std::sin(angle);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

Vector DomainTransform::apply(const Eigen::Vector2d& latent, int domain) const {
  return embedding * (per_domain.at(static_cast<std::size_t>(domain)) * latent);
}

DomainTransform make_domain_transform(const SyntheticConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, {1}));
  std::normal_distribution<double> normal(0.0, 1.0);
  DomainTransform t;
  for (int m = 0; m < cfg.num_domains; ++m) {
    const double angle = m * cfg.shift_strength;
    Eigen::Matrix2d rot;
    rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    const double sx = std::exp(cfg.shift_strength * normal(rng));
    const double sy = std::exp(cfg.shift_strength * normal(rng));
    t.per_domain.push_back(rot * Eigen::Vector2d(sx, sy).asDiagonal());
  }
  t.embedding.resize(cfg.feature_dim, 2);
  for (Index i = 0; i < t.embedding.rows(); ++i) {
    for (Index j = 0; j < 2; ++j) t.embedding(i, j) = normal(rng);
  }
  return t;
}

DomainDataset gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2 || cfg.num_domains < 2 || cfg.feature_dim < 2 ||
      cfg.samples_per_domain < 1) {
    throw Error(ErrorKind::kParameter, "gen_synthetic: need C >= 2, M >= 2, D >= 2, n >= 1");
  }
  if (!(cfg.noise >= 0.0) || !std::isfinite(cfg.shift_strength)) {
    throw Error(ErrorKind::kParameter, "gen_synthetic: noise must be >= 0 and shift finite");
  }
  const DomainTransform transform = make_domain_transform(cfg);
  Rng rng(derive_seed(cfg.seed, {2}));
  std::normal_distribution<double> normal(0.0, 1.0);

  DomainDataset ds;
  ds.num_classes = cfg.num_classes;
  ds.num_domains = cfg.num_domains;
  ds.feature_dim = cfg.feature_dim;
  ds.config = cfg;
  ds.samples.reserve(static_cast<std::size_t>(cfg.num_domains) * cfg.samples_per_domain);

  constexpr int kMaxRejections = 100000;
  SampleId next_id = 0;
  for (int m = 0; m < cfg.num_domains; ++m) {
    for (int k = 0; k < cfg.samples_per_domain; ++k) {
      const int c = k % cfg.num_classes;
      const double angle = 2.0 * std::numbers::pi * c / cfg.num_classes;
      Eigen::Vector2d latent;
      int tries = 0;
      // Rejection keeps classes balanced while labels stay the gold label.
      do {
        if (++tries > kMaxRejections) {
          throw Error(ErrorKind::kParameter, "gen_synthetic: noise too large to draw class " +
                                                 std::to_string(c));
        }
        latent << std::cos(angle) + cfg.noise * normal(rng), std::sin(angle) + cfg.noise * normal(rng);
      } while (gold_label(latent.x(), latent.y(), cfg.num_classes) != c);
      ds.samples.push_back(LabeledSample{next_id++, transform.apply(latent, m), c, m});
    }
  }
  return ds;
}

namespace {

DomainDataset empty_like(const DomainDataset& ds) {
  DomainDataset out;
  out.num_classes = ds.num_classes;
  out.num_domains = ds.num_domains;
  out.feature_dim = ds.feature_dim;
  out.config = ds.config;
  return out;
}

}  // namespace

std::pair<DomainDataset, DomainDataset> split_lodo(const DomainDataset& ds, int held_out) {
  if (held_out < 0 || held_out >= ds.num_domains) {
    throw Error(ErrorKind::kParameter, "split_lodo: domain " + std::to_string(held_out) +
                                           " not in [0, " + std::to_string(ds.num_domains) + ")");
  }
  auto train = empty_like(ds);
  auto test = empty_like(ds);
  for (const auto& s : ds.samples) (s.domain == held_out ? test : train).samples.push_back(s);
  return {std::move(train), std::move(test)};
}

std::pair<DomainDataset, DomainDataset> split_train_val(const DomainDataset& ds,
                                                        double train_fraction,
                                                        std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::kParameter, "split_train_val: fraction must lie in (0, 1)");
  }
  if (ds.empty()) throw Error(ErrorKind::kParameter, "split_train_val: empty dataset");

  std::vector<IndexList> by_domain(static_cast<std::size_t>(ds.num_domains));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    by_domain.at(static_cast<std::size_t>(ds.samples[i].domain)).push_back(i);
  }
  IndexList train_pos;
  IndexList val_pos;
  for (std::size_t d = 0; d < by_domain.size(); ++d) {
    auto& pos = by_domain[d];
    Rng rng(derive_seed(seed, {3, d}));
    std::shuffle(pos.begin(), pos.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(pos.size())));
    train_pos.insert(train_pos.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_train));
    val_pos.insert(val_pos.end(), pos.begin() + static_cast<std::ptrdiff_t>(n_train), pos.end());
  }
  std::sort(train_pos.begin(), train_pos.end());
  std::sort(val_pos.begin(), val_pos.end());
  auto train = empty_like(ds);
  auto val = empty_like(ds);
  for (std::size_t p : train_pos) train.samples.push_back(ds.samples[p]);
  for (std::size_t p : val_pos) val.samples.push_back(ds.samples[p]);
  return {std::move(train), std::move(val)};
}

std::vector<IndexList> make_batches(const DomainDataset& ds, std::size_t batch_size,
                                    std::uint64_t epoch_seed) {
  if (batch_size == 0) throw Error(ErrorKind::kParameter, "make_batches: batch_size must be >= 1");
  IndexList perm(ds.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(derive_seed(epoch_seed, {4}));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<IndexList> batches;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(perm.size(), start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

json config_to_json(const SyntheticConfig& c) {
  return json{{"num_classes", c.num_classes},   {"num_domains", c.num_domains},
              {"samples_per_domain", c.samples_per_domain},
              {"feature_dim", c.feature_dim},   {"shift_strength", c.shift_strength},
              {"noise", c.noise},               {"seed", c.seed}};
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::kValidation, "dataset: bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

void save_dataset(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ostringstream os;
  json header{{"format", "scmd-dataset"}, {"format_version", 1},
              {"num_classes", ds.num_classes}, {"num_domains", ds.num_domains},
              {"feature_dim", ds.feature_dim}, {"num_samples", ds.size()},
              {"seed", ds.config.seed}, {"config", config_to_json(ds.config)}};
  os << header.dump() << '\n';
  os << "id,domain,label";
  for (int j = 0; j < ds.feature_dim; ++j) os << ",x" << j;
  os << '\n';
  for (const auto& s : ds.samples) {
    os << s.id << ',' << s.domain << ',' << s.label;
    for (Index j = 0; j < s.x.size(); ++j) os << ',' << format_double(s.x(j));
    os << '\n';
  }
  io::write_text_atomic(path, os.str());
}

DomainDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kTruncated, "dataset: missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("dataset: bad header: ") + e.what());
  }
  DomainDataset ds;
  try {
    ds.num_classes = header.at("num_classes").get<int>();
    ds.num_domains = header.at("num_domains").get<int>();
    ds.feature_dim = header.at("feature_dim").get<int>();
    const auto& c = header.at("config");
    ds.config.num_classes = c.at("num_classes").get<int>();
    ds.config.num_domains = c.at("num_domains").get<int>();
    ds.config.samples_per_domain = c.at("samples_per_domain").get<int>();
    ds.config.feature_dim = c.at("feature_dim").get<int>();
    ds.config.shift_strength = c.at("shift_strength").get<double>();
    ds.config.noise = c.at("noise").get<double>();
    ds.config.seed = c.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("dataset: header field: ") + e.what());
  }
  const auto expected = header.value("num_samples", std::size_t{0});
  std::getline(in, line);  // column names
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() != static_cast<std::size_t>(3 + ds.feature_dim)) {
      throw Error(ErrorKind::kValidation, "dataset: row has " + std::to_string(cells.size()) + " cells");
    }
    LabeledSample s;
    s.id = static_cast<SampleId>(parse_double(cells[0]));
    s.domain = static_cast<int>(parse_double(cells[1]));
    s.label = static_cast<int>(parse_double(cells[2]));
    if (s.domain < 0 || s.domain >= ds.num_domains || s.label < 0 || s.label >= ds.num_classes) {
      throw Error(ErrorKind::kValidation, "dataset: label or domain out of range for id " + std::to_string(s.id));
    }
    s.x.resize(ds.feature_dim);
    for (int j = 0; j < ds.feature_dim; ++j) s.x(j) = parse_double(cells[static_cast<std::size_t>(3 + j)]);
    ds.samples.push_back(std::move(s));
  }
  if (expected != 0 && expected != ds.size()) {
    throw Error(ErrorKind::kTruncated, "dataset: expected " + std::to_string(expected) + " rows, read " +
                                           std::to_string(ds.size()));
  }
  return ds;
}

}  // namespace scmd
