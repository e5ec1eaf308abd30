#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ctcdro/errors.hpp"
#include "ctcdro/sampler.hpp"

using namespace ctcdro;

TEST_CASE("single group is always drawn") {
  Rng rng = make_rng(0, "test");
  for (int i = 0; i < 100; ++i) CHECK(sample_group(1, rng) == 0);
}

TEST_CASE("uniform group frequencies within 5 sigma") {
  Rng rng = make_rng(0, "sampler");
  const int n = 60000, G = 6;
  std::vector<int> counts(G, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_group(G, rng))];
  const double p = 1.0 / G, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - n * p) <= 5 * sigma);
}

TEST_CASE("group draws are seed-deterministic") {
  Rng a = make_rng(4, "sampler"), b = make_rng(4, "sampler");
  for (int i = 0; i < 1000; ++i) CHECK(sample_group(5, a) == sample_group(5, b));
}

TEST_CASE("proportional group sampling") {
  GroupSampler s({100, 300}, GroupSampling::proportional);
  Rng rng = make_rng(1, "sampler");
  const int n = 40000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += s.sample(rng);
  const double sigma = std::sqrt(n * 0.75 * 0.25);
  CHECK(std::abs(ones - 0.75 * n) <= 5 * sigma);
  CHECK(parse_group_sampling("uniform") == GroupSampling::uniform);
  CHECK_THROWS(parse_group_sampling("weighted"));
}

TEST_CASE("make_batch duration examples") {
  Rng rng = make_rng(0, "test");
  std::vector<double> dur(5, 3.0);
  PoolCycler pool({0, 1, 2, 3, 4});
  auto b = make_batch(pool, dur, 2, 10.0, rng);
  CHECK(b.utterances.size() == 4);
  CHECK(b.total_duration == 12.0);
  CHECK(b.group == 2);

  std::vector<double> one{60.0};
  PoolCycler single({0});
  auto s = make_batch(single, one, 0, 10.0, rng);
  CHECK(s.utterances.size() == 1);
  CHECK(s.total_duration == 60.0);

  PoolCycler exact({0, 1, 2, 3, 4});
  auto e = make_batch(exact, dur, 0, 9.0, rng);
  CHECK(e.utterances.size() == 3);
  CHECK(e.total_duration == 9.0);
}

TEST_CASE("duration bound and purity over random pools") {
  Rng rng = make_rng(2, "test");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 30);
    std::vector<double> dur(n);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      dur[i] = 0.1 + 3 * uniform01(rng);
      ids[i] = i;
    }
    const double dmax = *std::max_element(dur.begin(), dur.end());
    const double target = 0.5 + 10 * uniform01(rng);
    PoolCycler pool(ids);
    for (int k = 0; k < 20; ++k) {
      auto b = make_batch(pool, dur, 1, target, rng);
      CHECK(b.total_duration >= target);
      CHECK(b.total_duration - target < dmax);
      for (auto u : b.utterances) CHECK(u < n);
    }
  }
}

TEST_CASE("epoch coverage without replacement") {
  Rng rng = make_rng(3, "test");
  std::vector<std::size_t> ids{10, 11, 12, 13, 14, 15, 16};
  PoolCycler pool(ids);
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < ids.size(); ++i) CHECK(seen.insert(pool.next(rng)).second);
    CHECK(seen.size() == ids.size());
  }
  CHECK(pool.epoch() >= 4);
}

TEST_CASE("with replacement draws stay in the pool") {
  Rng rng = make_rng(3, "test");
  PoolCycler pool({4, 5, 6}, true);
  std::set<std::size_t> seen;
  for (int i = 0; i < 300; ++i) seen.insert(pool.next(rng));
  CHECK(seen == std::set<std::size_t>{4, 5, 6});
}

TEST_CASE("mixed batches have fixed size") {
  Rng rng = make_rng(3, "test");
  MixedBatcher mb({0, 1, 2, 3, 4}, 3);
  for (int i = 0; i < 10; ++i) CHECK(mb.next(rng).size() == 3);
  CHECK_THROWS_AS(MixedBatcher({0, 1}, 0), ConfigInvalid);
}

TEST_CASE("loss ledger") {
  CHECK_THROWS(LossLedger(0));
  LossLedger l(2);
  CHECK_FALSE(l.ready());
  l.record(0, 5.0);
  CHECK(l.entries(0).size() == 1);
  CHECK(l.entries(1).empty());
  CHECK_FALSE(l.ready());
  CHECK_THROWS_AS(l.drain(), NotReady);
  l.record(0, 5.0);
  CHECK(l.entries(0).size() == 2);
  l.record(1, 6.0);
  CHECK(l.ready());
  auto L = l.drain();
  CHECK(L == GroupLosses{5.0, 6.0});
  CHECK(l.entries(0).empty());
  CHECK_THROWS_AS(l.drain(), NotReady);

  l.record(0, 2.0);
  l.record(0, 4.0);
  l.record(1, 6.0);
  CHECK(l.drain() == GroupLosses{3.0, 6.0});
  CHECK_THROWS(l.record(1, std::nan("")));
}

TEST_CASE("ledger conservation") {
  Rng rng = make_rng(5, "test");
  LossLedger l(4);
  std::vector<double> sums(4, 0.0);
  std::vector<int> counts(4, 0);
  while (!l.ready()) {
    const int g = sample_group(4, rng);
    const double v = 100 * uniform01(rng);
    l.record(g, v);
    sums[static_cast<std::size_t>(g)] += v;
    ++counts[static_cast<std::size_t>(g)];
  }
  auto L = l.drain();
  for (std::size_t g = 0; g < 4; ++g) CHECK(L[g] * counts[g] == doctest::Approx(sums[g]).epsilon(1e-12));
}
