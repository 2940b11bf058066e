// SPDX-License-Identifier: Apache-2.0
#include "scmd/theory.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <random>

#include "scmd/random.hpp"

namespace scmd::theory {
namespace {

constexpr double kBoundSlack = 1e-12;

void check_labels(const Hypothesis& h, const LabelingFunction& labeling) {
  if (h.size() != labeling.size()) {
    throw Error(ErrorKind::kParameter, "hypothesis covers " + std::to_string(h.size()) +
                                           " points, labeling covers " + std::to_string(labeling.size()));
  }
}

// Dirichlet(1) draw; with probability 1/4 a random subset of the support is
// zeroed so boundary cases show up.
Vector random_distribution(int k, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution sparse(0.25);
  std::bernoulli_distribution keep(0.5);
  Vector p(k);
  for (int i = 0; i < k; ++i) p(i) = expo(rng);
  if (sparse(rng)) {
    const int anchor = std::uniform_int_distribution<int>(0, k - 1)(rng);
    for (int i = 0; i < k; ++i) {
      if (i != anchor && !keep(rng)) p(i) = 0.0;
    }
  }
  return p / p.sum();
}

std::vector<std::size_t> draw_sample(const Vector& p, std::size_t n, Rng& rng) {
  std::discrete_distribution<std::size_t> dist(p.data(), p.data() + p.size());
  std::vector<std::size_t> out(n);
  for (auto& s : out) s = dist(rng);
  return out;
}

}  // namespace

Vector zero_one_loss(const Hypothesis& h, const LabelingFunction& labeling) {
  check_labels(h, labeling);
  Vector loss(static_cast<Index>(h.size()));
  for (std::size_t i = 0; i < h.size(); ++i) loss(static_cast<Index>(i)) = h[i] == labeling[i] ? 0.0 : 1.0;
  return loss;
}

double risk(const Hypothesis& h, const Vector& p, const LabelingFunction& labeling) {
  return risk(zero_one_loss(h, labeling), p);
}

double empirical_risk(const Vector& loss, std::span<const std::size_t> sample) {
  if (sample.empty()) throw Error(ErrorKind::kParameter, "empirical_risk: empty sample");
  double s = 0.0;
  for (std::size_t i : sample) {
    if (i >= static_cast<std::size_t>(loss.size())) {
      throw Error(ErrorKind::kParameter, "empirical_risk: sample point outside the support");
    }
    const double l = loss(static_cast<Index>(i));
    if (l < 0.0 || l > 1.0) throw Error(ErrorKind::kContract, "empirical_risk: loss outside [0, 1]");
    s += l;
  }
  return s / static_cast<double>(sample.size());
}

double empirical_risk(const Hypothesis& h, const LabelingFunction& labeling,
                      std::span<const std::size_t> sample) {
  return empirical_risk(zero_one_loss(h, labeling), sample);
}

Lemma1Report check_lemma1(std::size_t trials, int max_support, std::uint64_t seed, int num_classes) {
  if (max_support < 2) throw Error(ErrorKind::kParameter, "check_lemma1: support must have at least 2 points");
  if (num_classes < 2) throw Error(ErrorKind::kParameter, "check_lemma1: need at least 2 classes");
  Rng rng(derive_seed(seed, {71}));
  std::uniform_int_distribution<int> support(2, max_support);
  std::uniform_int_distribution<int> label(0, num_classes - 1);
  std::bernoulli_distribution same(0.05);

  Lemma1Report r;
  r.trials = trials;
  double slack_sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const int k = support(rng);
    const Vector p = random_distribution(k, rng);
    const Vector q = same(rng) ? p : random_distribution(k, rng);
    LabelingFunction f(static_cast<std::size_t>(k));
    Hypothesis h(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      f[static_cast<std::size_t>(i)] = label(rng);
      h[static_cast<std::size_t>(i)] = label(rng);
    }
    const Vector loss = zero_one_loss(h, f);
    const double excess = risk(loss, q) - risk(loss, p) - tv(q, p);
    r.max_excess = std::max(r.max_excess, excess);
    slack_sum += -excess;
    if (excess > kBoundSlack) ++r.violations;
  }
  r.mean_slack = trials ? slack_sum / static_cast<double>(trials) : 0.0;
  return r;
}

double rademacher_exact(const Matrix& losses) {
  const auto h = static_cast<std::size_t>(losses.rows());
  const auto n = static_cast<std::size_t>(losses.cols());
  if (h == 0 || n == 0) throw Error(ErrorKind::kParameter, "rademacher_exact: empty class or sample");
  if (h > kMaxRademacherClass || n > kMaxRademacherSample) {
    throw Error(ErrorKind::kCapacity, "rademacher_exact: |class| = " + std::to_string(h) + ", n = " +
                                          std::to_string(n) + " exceeds the exact limits (" +
                                          std::to_string(kMaxRademacherClass) + ", " +
                                          std::to_string(kMaxRademacherSample) + ")");
  }
  // Gray-code walk over sign vectors: one column update per pattern.
  Vector sums = -losses.rowwise().sum();
  std::vector<int> sigma(n, -1);
  const std::uint64_t patterns = std::uint64_t{1} << n;
  double total = sums.maxCoeff();
  for (std::uint64_t g = 1; g < patterns; ++g) {
    const auto j = static_cast<std::size_t>(std::countr_zero(g));
    sigma[j] = -sigma[j];
    sums += (2.0 * sigma[j]) * losses.col(static_cast<Index>(j));
    total += sums.maxCoeff();
  }
  return total / static_cast<double>(patterns) / static_cast<double>(n);
}

Matrix class_losses(const std::vector<Hypothesis>& hypotheses, const LabelingFunction& labeling,
                    std::span<const std::size_t> sample) {
  Matrix out(static_cast<Index>(hypotheses.size()), static_cast<Index>(sample.size()));
  for (std::size_t r = 0; r < hypotheses.size(); ++r) {
    check_labels(hypotheses[r], labeling);
    for (std::size_t c = 0; c < sample.size(); ++c) {
      if (sample[c] >= labeling.size()) throw Error(ErrorKind::kParameter, "class_losses: sample point outside the support");
      out(static_cast<Index>(r), static_cast<Index>(c)) =
          hypotheses[r][sample[c]] == labeling[sample[c]] ? 0.0 : 1.0;
    }
  }
  return out;
}

double xi_term(double rademacher, std::size_t n, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorKind::kParameter, "delta must lie in (0, 1)");
  if (n == 0) throw Error(ErrorKind::kParameter, "xi_term: n must be positive");
  return 2.0 * rademacher + std::sqrt(std::log(1.0 / delta) / (2.0 * static_cast<double>(n)));
}

Lemma2Instance make_lemma2_instance(int support, std::size_t class_size, std::uint64_t seed) {
  if (support < 2) throw Error(ErrorKind::kParameter, "make_lemma2_instance: support must have at least 2 points");
  if (class_size == 0) throw Error(ErrorKind::kParameter, "make_lemma2_instance: empty class");
  Rng rng(derive_seed(seed, {74}));
  std::bernoulli_distribution coin(0.5);
  Lemma2Instance inst;
  inst.p = random_distribution(support, rng);
  inst.p_test = 0.7 * inst.p + 0.3 * random_distribution(support, rng);
  inst.p_test /= inst.p_test.sum();
  inst.labeling.resize(static_cast<std::size_t>(support));
  for (auto& y : inst.labeling) y = coin(rng) ? 1 : 0;
  for (std::size_t h = 0; h < class_size; ++h) {
    Hypothesis hyp(static_cast<std::size_t>(support));
    for (auto& y : hyp) y = coin(rng) ? 1 : 0;
    inst.hypotheses.push_back(std::move(hyp));
  }
  return inst;
}

Lemma2Report check_lemma2(const std::vector<Hypothesis>& hypotheses, const Vector& p,
                          const Vector& p_test, const LabelingFunction& labeling, std::size_t n,
                          double delta, std::size_t resamples, std::uint64_t seed) {
  if (hypotheses.empty()) throw Error(ErrorKind::kParameter, "check_lemma2: empty hypothesis class");
  validate_distribution(p);
  validate_distribution(p_test);
  if (p.size() != p_test.size() || static_cast<std::size_t>(p.size()) != labeling.size()) {
    throw Error(ErrorKind::kParameter, "check_lemma2: support sizes differ");
  }
  xi_term(0.0, n, delta);

  std::vector<Vector> loss;
  std::vector<double> test_risk;
  for (const auto& h : hypotheses) {
    loss.push_back(zero_one_loss(h, labeling));
    test_risk.push_back(risk(loss.back(), p_test));
  }

  Lemma2Report r;
  r.resamples = resamples;
  r.delta = delta;
  r.tv = tv(p_test, p);
  r.allowed_rate = delta + 3.0 * std::sqrt(delta * (1.0 - delta) / static_cast<double>(std::max<std::size_t>(resamples, 1)));
  Rng rng(derive_seed(seed, {72}));
  double rad_sum = 0.0, xi_sum = 0.0, slack_sum = 0.0;
  for (std::size_t s = 0; s < resamples; ++s) {
    const auto sample = draw_sample(p, n, rng);
    std::size_t best = 0;
    double best_risk = std::numeric_limits<double>::infinity();
    for (std::size_t h = 0; h < loss.size(); ++h) {
      const double e = empirical_risk(loss[h], sample);
      if (e < best_risk) {
        best_risk = e;
        best = h;
      }
    }
    const double rad = rademacher_exact(class_losses(hypotheses, labeling, sample));
    const double xi = xi_term(rad, n, delta);
    const double slack = best_risk + r.tv + xi - test_risk[best];
    rad_sum += rad;
    xi_sum += xi;
    slack_sum += slack;
    if (slack < -kBoundSlack) ++r.violations;
  }
  if (resamples) {
    const auto m = static_cast<double>(resamples);
    r.violation_rate = static_cast<double>(r.violations) / m;
    r.mean_rademacher = rad_sum / m;
    r.mean_xi = xi_sum / m;
    r.mean_slack = slack_sum / m;
  }
  return r;
}

double avg_tv_to_set(const Vector& p, const Family& family) {
  if (family.empty()) throw Error(ErrorKind::kParameter, "avg_tv_to_set: empty family");
  double s = 0.0;
  for (const auto& q : family) s += tv(p, q);
  return s / static_cast<double>(family.size());
}

std::size_t select_s1(const Family& family) {
  if (family.empty()) throw Error(ErrorKind::kParameter, "select_s1: empty family");
  std::size_t best = 0;
  double best_value = -1.0;
  for (std::size_t i = 0; i < family.size(); ++i) {
    const double v = avg_tv_to_set(family[i], family);
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  return best;
}

std::size_t select_s2(const Family& family, std::uint64_t seed) {
  if (family.empty()) throw Error(ErrorKind::kParameter, "select_s2: empty family");
  Rng rng(seed);
  return std::uniform_int_distribution<std::size_t>(0, family.size() - 1)(rng);
}

Lemma3Report check_lemma3(const Lemma3Construction& c, std::size_t trials, std::uint64_t seed) {
  if (c.support_size < 2 || c.support_size % 2 != 0) {
    throw Error(ErrorKind::kParameter, "check_lemma3: support size must be even and at least 2");
  }
  const std::size_t m = c.fixed_alphas ? c.fixed_alphas->size() : c.family_size;
  if (m == 0) throw Error(ErrorKind::kParameter, "check_lemma3: empty family");
  if (!c.fixed_alphas && c.num_outliers > m) {
    throw Error(ErrorKind::kParameter, "check_lemma3: more outliers than members");
  }
  auto check_range = [](std::pair<double, double> r) {
    if (!(0.0 <= r.first && r.first <= r.second && r.second <= 1.0)) {
      throw Error(ErrorKind::kParameter, "check_lemma3: mixing range must lie in [0, 1]");
    }
  };
  check_range(c.cluster_alpha);
  check_range(c.outlier_alpha);
  if (c.fixed_alphas) {
    for (double a : *c.fixed_alphas) check_range({a, a});
  }

  const int half = c.support_size / 2;
  Rng rng(derive_seed(seed, {73}));
  Lemma3Report r;
  r.trials = trials;
  double res_sum = 0.0, res_s1_sum = 0.0, s1_sum = 0.0, s2_sum = 0.0, s2_exact_sum = 0.0, inf_sum = 0.0;
  std::size_t res_count = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    Vector a = Vector::Zero(c.support_size);
    Vector b = Vector::Zero(c.support_size);
    std::exponential_distribution<double> expo(1.0);
    for (int i = 0; i < half; ++i) {
      a(i) = expo(rng);
      b(half + i) = expo(rng);
    }
    a /= a.sum();
    b /= b.sum();

    std::vector<double> alphas;
    if (c.fixed_alphas) {
      alphas = *c.fixed_alphas;
    } else {
      auto draw = [&](std::pair<double, double> range) {
        return std::uniform_real_distribution<double>(range.first, range.second)(rng);
      };
      for (std::size_t i = 0; i < m - c.num_outliers; ++i) alphas.push_back(draw(c.cluster_alpha));
      for (std::size_t i = 0; i < c.num_outliers; ++i) alphas.push_back(draw(c.outlier_alpha));
    }
    Family family;
    for (double alpha : alphas) family.push_back((1.0 - alpha) * a + alpha * b);
    const Vector& p_test = b;

    const double set_to_test = avg_tv_to_set(p_test, family);
    const std::size_t s1 = select_s1(family);
    std::vector<double> to_test(m);
    for (std::size_t i = 0; i < m; ++i) {
      to_test[i] = tv(family[i], p_test);
      const double residual = std::abs(set_to_test - avg_tv_to_set(family[i], family) - to_test[i]);
      res_sum += residual;
      ++res_count;
      r.max_residual = std::max(r.max_residual, residual);
      if (i == s1) {
        res_s1_sum += residual;
        r.max_residual_s1 = std::max(r.max_residual_s1, residual);
      }
    }
    const std::size_t s2 = select_s2(family, rng());
    s1_sum += to_test[s1];
    s2_sum += to_test[s2];
    double mean = 0.0;
    for (double v : to_test) mean += v;
    s2_exact_sum += mean / static_cast<double>(m);
    inf_sum += *std::min_element(to_test.begin(), to_test.end());
  }
  if (trials) {
    const auto n = static_cast<double>(trials);
    r.mean_residual = res_sum / static_cast<double>(res_count);
    r.mean_residual_s1 = res_s1_sum / n;
    r.e_tv_s1 = s1_sum / n;
    r.e_tv_s2 = s2_sum / n;
    r.e_tv_s2_exact = s2_exact_sum / n;
    r.e_tv_inf = inf_sum / n;
  }
  r.conclusion_holds = r.e_tv_s1 <= r.e_tv_s2_exact + kBoundSlack;
  r.assumption_holds = r.max_residual_s1 <= 1e-9;
  return r;
}

}  // namespace scmd::theory
