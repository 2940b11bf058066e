// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include <Eigen/QR>

#include "scmd/data.hpp"
#include "scmd/error.hpp"
#include "scmd/random.hpp"
#include "support/linear_probe.hpp"

namespace scmd {
namespace {

std::set<SampleId> id_set(const DomainDataset& ds) {
  std::set<SampleId> out;
  for (const auto& s : ds.samples) out.insert(s.id);
  return out;
}

SyntheticConfig small(int classes = 3, int domains = 3, int per_domain = 30) {
  SyntheticConfig c;
  c.num_classes = classes;
  c.num_domains = domains;
  c.samples_per_domain = per_domain;
  c.feature_dim = 8;
  return c;
}

TEST(GoldLabel, NearestCentroidOnCircle) {
  EXPECT_EQ(gold_label(1.0, 0.0, 4), 0);
  EXPECT_EQ(gold_label(0.0, 1.0, 4), 1);
  EXPECT_EQ(gold_label(-1.0, 0.1, 4), 2);
  EXPECT_EQ(gold_label(0.1, -2.0, 4), 3);
  EXPECT_EQ(gold_label(-0.5, 0.0, 2), 1);
}

TEST(Generator, SameSeedIsBitwiseIdentical) {
  const DomainDataset a = gen_synthetic(small()), b = gen_synthetic(small());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].id, b.samples[i].id);
    EXPECT_EQ(a.samples[i].label, b.samples[i].label);
    EXPECT_EQ(a.samples[i].domain, b.samples[i].domain);
    EXPECT_EQ(a.samples[i].x, b.samples[i].x);
  }
}

TEST(Generator, DifferentSeedsDiffer) {
  SyntheticConfig c = small();
  const DomainDataset a = gen_synthetic(c);
  c.seed = 1;
  EXPECT_NE(a.all_features(), gen_synthetic(c).all_features());
}

TEST(Generator, EveryDomainPopulatedAndClassesBalanced) {
  const DomainDataset ds = gen_synthetic(small(4, 5, 37));
  EXPECT_EQ(ds.size(), 5u * 37u);
  std::map<std::pair<int, int>, int> counts;
  std::set<int> domains;
  for (const auto& s : ds.samples) {
    ++counts[{s.domain, s.label}];
    domains.insert(s.domain);
    EXPECT_EQ(s.x.size(), 8);
  }
  EXPECT_EQ(domains.size(), 5u);
  for (int m = 0; m < 5; ++m) {
    for (int c = 0; c < 4; ++c) EXPECT_LE(std::abs(counts[{m, c}] - 37.0 / 4.0), 1.0);
  }
}

TEST(Generator, IdsAreUnique) {
  const DomainDataset ds = gen_synthetic(small());
  EXPECT_EQ(id_set(ds).size(), ds.size());
}

TEST(Generator, NoShiftNoNoiseDomainsCoincide) {
  SyntheticConfig c = small(4, 3, 12);
  c.shift_strength = 0.0;
  c.noise = 0.0;
  const DomainDataset ds = gen_synthetic(c);
  const auto [src, test] = split_lodo(ds, 2);
  const auto probe = testing::LinearProbe::fit(src);
  for (int m = 0; m < 3; ++m) {
    const auto [rest, dm] = split_lodo(ds, m);
    EXPECT_EQ(probe.accuracy(dm), 1.0) << m;
  }
  for (const auto& s : ds.samples) {
    EXPECT_LE((s.x - ds.samples[static_cast<std::size_t>(s.label)].x).norm(), 1e-12);
  }
}

TEST(Generator, LabelIsGoldLabelOfRecoveredLatent) {
  SyntheticConfig c = small(5, 4, 40);
  c.shift_strength = 0.7;
  const DomainDataset ds = gen_synthetic(c);
  const DomainTransform t = make_domain_transform(c);
  for (const auto& s : ds.samples) {
    const Matrix a = t.embedding * t.per_domain[static_cast<std::size_t>(s.domain)];
    const Eigen::Vector2d z = a.colPivHouseholderQr().solve(s.x);
    EXPECT_LE((a * z - s.x).norm(), 1e-9);
    EXPECT_EQ(gold_label(z.x(), z.y(), c.num_classes), s.label) << s.id;
  }
}

TEST(Generator, RejectsInvalidCounts) {
  SyntheticConfig c = small();
  c.num_classes = 1;
  EXPECT_THROW(gen_synthetic(c), Error);
  c = small();
  c.num_domains = 1;
  EXPECT_THROW(gen_synthetic(c), Error);
  c = small();
  c.feature_dim = 1;
  EXPECT_THROW(gen_synthetic(c), Error);
  c = small();
  c.noise = -0.1;
  EXPECT_THROW(gen_synthetic(c), Error);
}

// Pilot: C=2, noise 0.1, shift 0.3, seed 0; ridge probe on the 80% split
// of domains {0,1,2}. Both accuracies are 1.0 because two well separated
// clusters stay linearly separable under rotations below pi/2; the gap
// shows in the probe's mean true-class margin.
TEST(Generator, HeldOutDomainScoresLowerThanValidation) {
  SyntheticConfig c;
  c.num_classes = 2;
  c.noise = 0.1;
  c.shift_strength = 0.3;
  const DomainDataset ds = gen_synthetic(c);
  const auto [src, test] = split_lodo(ds, 3);
  const auto [train, val] = split_train_val(src, 0.8, 0);
  const auto probe = testing::LinearProbe::fit(train);
  EXPECT_EQ(probe.accuracy(val), 1.0);
  EXPECT_EQ(probe.accuracy(test), 1.0);
  EXPECT_NEAR(probe.mean_margin(val), 0.98063600959609198, 1e-9);
  EXPECT_NEAR(probe.mean_margin(test), 0.44307692000979981, 1e-9);
  EXPECT_LT(probe.mean_margin(test), probe.mean_margin(val));
}

TEST(Generator, FourClassHeldOutAccuracyGap) {
  SyntheticConfig c;
  c.num_classes = 4;
  c.noise = 0.1;
  c.shift_strength = 0.3;
  const DomainDataset ds = gen_synthetic(c);
  const auto [src, test] = split_lodo(ds, 3);
  const auto [train, val] = split_train_val(src, 0.8, 0);
  const auto probe = testing::LinearProbe::fit(train);
  EXPECT_EQ(probe.accuracy(val), 1.0);
  EXPECT_EQ(probe.accuracy(test), 0.945);
}

TEST(SplitLodo, TwoDomains) {
  const DomainDataset ds = gen_synthetic(small(3, 2, 20));
  const auto [train, test] = split_lodo(ds, 1);
  for (const auto& s : train.samples) EXPECT_EQ(s.domain, 0);
  for (const auto& s : test.samples) EXPECT_EQ(s.domain, 1);
}

TEST(SplitLodo, IsPartition) {
  const DomainDataset ds = gen_synthetic(small(3, 4, 25));
  for (int held = 0; held < 4; ++held) {
    const auto [train, test] = split_lodo(ds, held);
    EXPECT_EQ(train.size() + test.size(), ds.size());
    const auto a = id_set(train), b = id_set(test);
    std::vector<SampleId> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    EXPECT_TRUE(both.empty());
    EXPECT_EQ(train.num_classes, ds.num_classes);
    EXPECT_EQ(test.feature_dim, ds.feature_dim);
  }
}

TEST(SplitLodo, OutOfRangeDomain) {
  const DomainDataset ds = gen_synthetic(small());
  EXPECT_THROW(split_lodo(ds, 3), Error);
  EXPECT_THROW(split_lodo(ds, -1), Error);
}

TEST(SplitTrainVal, EightyTwentyPerDomain) {
  const DomainDataset ds = gen_synthetic(small(4, 3, 100));
  const auto [train, val] = split_train_val(ds, 0.8, 7);
  std::map<int, int> tr, va;
  for (const auto& s : train.samples) ++tr[s.domain];
  for (const auto& s : val.samples) ++va[s.domain];
  for (int m = 0; m < 3; ++m) {
    EXPECT_EQ(tr[m], 80);
    EXPECT_EQ(va[m], 20);
  }
}

TEST(SplitTrainVal, DeterministicAndPartition) {
  const DomainDataset ds = gen_synthetic(small(3, 3, 41));
  const auto [a1, b1] = split_train_val(ds, 0.7, 3);
  const auto [a2, b2] = split_train_val(ds, 0.7, 3);
  EXPECT_EQ(a1.ids(std::vector<std::size_t>{0, 1, 2}), a2.ids(std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(id_set(a1), id_set(a2));
  EXPECT_EQ(id_set(b1), id_set(b2));
  auto all = id_set(a1);
  for (auto id : id_set(b1)) EXPECT_TRUE(all.insert(id).second);
  EXPECT_EQ(all, id_set(ds));
}

TEST(SplitTrainVal, SeedChangesSplit) {
  const DomainDataset ds = gen_synthetic(small(3, 3, 41));
  EXPECT_NE(id_set(split_train_val(ds, 0.8, 1).second), id_set(split_train_val(ds, 0.8, 2).second));
}

TEST(SplitTrainVal, RejectsBadArguments) {
  const DomainDataset ds = gen_synthetic(small());
  EXPECT_THROW(split_train_val(DomainDataset{}, 0.8, 0), Error);
  EXPECT_THROW(split_train_val(ds, 0.0, 0), Error);
  EXPECT_THROW(split_train_val(ds, 1.0, 0), Error);
}

TEST(MakeBatches, LargeBatchIsWholeDataset) {
  const DomainDataset ds = gen_synthetic(small(3, 2, 10));
  const auto batches = make_batches(ds, 1000, 5);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].size(), ds.size());
}

TEST(MakeBatches, EveryPositionOncePerEpoch) {
  const DomainDataset ds = gen_synthetic(small(3, 3, 17));
  for (std::size_t bs : {1u, 7u, 16u, 51u}) {
    const auto batches = make_batches(ds, bs, 9);
    std::vector<int> seen(ds.size(), 0);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      if (b + 1 < batches.size()) EXPECT_EQ(batches[b].size(), bs);
      for (auto p : batches[b]) ++seen[p];
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));
  }
}

TEST(MakeBatches, SeedDeterminesOrder) {
  const DomainDataset ds = gen_synthetic(small(2, 2, 16));
  EXPECT_EQ(make_batches(ds, 8, 3), make_batches(ds, 8, 3));
  EXPECT_NE(make_batches(ds, 8, 3), make_batches(ds, 8, 4));
}

TEST(DatasetFile, RoundTripIsExact) {
  const DomainDataset ds = gen_synthetic(small(3, 2, 9));
  const auto path = std::filesystem::temp_directory_path() / "scmd_test_dataset.csv";
  save_dataset(ds, path);
  const DomainDataset back = load_dataset(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.num_classes, ds.num_classes);
  EXPECT_EQ(back.num_domains, ds.num_domains);
  EXPECT_EQ(back.all_features(), ds.all_features());
  EXPECT_EQ(back.all_labels(), ds.all_labels());
  EXPECT_EQ(id_set(back), id_set(ds));
}

TEST(DatasetFile, MissingFileIsIoError) {
  try {
    load_dataset("/nonexistent/scmd.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

}  // namespace
}  // namespace scmd
