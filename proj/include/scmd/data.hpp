// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scmd/types.hpp"

namespace scmd {

struct LabeledSample {
  SampleId id = 0;
  Vector x;
  int label = 0;
  int domain = 0;
};

/// Generator settings for the latent-rotation domain-shift family.
struct SyntheticConfig {
  int num_classes = 4;
  int num_domains = 4;
  int samples_per_domain = 200;
  int feature_dim = 16;
  double shift_strength = 0.3;
  double noise = 0.15;
  std::uint64_t seed = 0;
};

struct DomainDataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  int num_domains = 0;
  int feature_dim = 0;
  SyntheticConfig config;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// Stacks the features of the given sample positions into a B x D matrix.
  Matrix features(std::span<const std::size_t> positions) const;
  Labels labels(std::span<const std::size_t> positions) const;
  std::vector<SampleId> ids(std::span<const std::size_t> positions) const;
  Matrix all_features() const;
  Labels all_labels() const;
};

/// Gold labeling function: index of the nearest class centroid on the unit
/// circle (centroid c sits at angle 2*pi*c/C).
int gold_label(double u, double v, int num_classes);

/// Maps a latent point through the transform of domain `domain` and the
/// shared embedding into feature space.
struct DomainTransform {
  std::vector<Eigen::Matrix2d> per_domain;  // rotation * diagonal scaling
  Matrix embedding;                         // D x 2
  Vector apply(const Eigen::Vector2d& latent, int domain) const;
};

DomainTransform make_domain_transform(const SyntheticConfig& cfg);

DomainDataset gen_synthetic(const SyntheticConfig& cfg);

/// Leave-one-domain-out partition: (training domains, held-out domain).
std::pair<DomainDataset, DomainDataset> split_lodo(const DomainDataset& ds, int held_out);

/// Per-domain stratified shuffle split; round(fraction * n_d) per domain go to train.
std::pair<DomainDataset, DomainDataset> split_train_val(const DomainDataset& ds,
                                                        double train_fraction,
                                                        std::uint64_t seed);

/// Random permutation of sample positions chunked into batches; the last
/// batch may be short. Positions index into `ds.samples`.
std::vector<IndexList> make_batches(const DomainDataset& ds, std::size_t batch_size,
                                    std::uint64_t epoch_seed);

/// Dataset text file: one JSON header line, one CSV column line, then rows
/// `id,domain,label,x0,...,x{D-1}` with doubles printed to round-trip.
void save_dataset(const DomainDataset& ds, const std::filesystem::path& path);
DomainDataset load_dataset(const std::filesystem::path& path);

}  // namespace scmd
