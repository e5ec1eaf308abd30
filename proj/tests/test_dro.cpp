#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ctcdro/dro.hpp"
#include "ctcdro/errors.hpp"
#include "ctcdro/rng.hpp"

using namespace ctcdro;

namespace {

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> q(n);
  for (auto& v : q) v = 0.05 + uniform01(rng);
  const double s = sum(q);
  for (auto& v : q) v /= s;
  // land exactly on the simplex
  q.back() = 1.0 - std::accumulate(q.begin(), q.end() - 1, 0.0);
  return q;
}

}  // namespace

TEST_CASE("GroupWeights validation") {
  CHECK_THROWS_AS(GroupWeights({0.5, 0.6}), InvalidWeights);
  CHECK_THROWS_AS(GroupWeights({1.5, -0.5}), InvalidWeights);
  CHECK_THROWS_AS(GroupWeights({}), InvalidWeights);
  auto u = GroupWeights::uniform(4);
  for (std::size_t g = 0; g < 4; ++g) CHECK(u[g] == 0.25);
}

TEST_CASE("group DRO update") {
  auto q = GroupWeights::uniform(2);
  std::vector<double> same{1, 1};
  auto a = group_dro_update(q, same, 1.0);
  CHECK(a[0] == doctest::Approx(0.5));

  std::vector<double> L{1, 2};
  auto b = group_dro_update(q, L, 1.0);
  const double e = std::exp(1.0);
  CHECK(b[0] == doctest::Approx(1 / (1 + e)).epsilon(1e-14));
  CHECK(b[1] == doctest::Approx(e / (1 + e)).epsilon(1e-14));
  CHECK(b[0] == doctest::Approx(0.26894).epsilon(1e-4));

  auto c = group_dro_update(GroupWeights({1.0, 0.0}), L, 1.0);
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 0.0);
}

TEST_CASE("group DRO update survives huge exponents") {
  std::vector<double> L{1e6, 1e6 + 1};
  auto q = group_dro_update(GroupWeights::uniform(2), L, 1.0);
  CHECK(q[1] == doctest::Approx(std::exp(1.0) / (1 + std::exp(1.0))));
}

TEST_CASE("smoothed update") {
  std::vector<double> same{3, 3};
  auto a = ctc_dro_update(GroupWeights::uniform(2), same, {0.7, 0.1});
  CHECK(a[0] == doctest::Approx(0.5));

  std::vector<double> L{1, 1};
  auto q = ctc_dro_update(GroupWeights({0.8, 0.2}), L, {1.0, 0.1});
  const double u0 = 0.8 * std::exp(1 / 0.9), u1 = 0.2 * std::exp(1 / 0.3);
  CHECK(q[0] == doctest::Approx(u0 / (u0 + u1)).epsilon(1e-14));
  CHECK(q[0] == doctest::Approx(0.3024).epsilon(1e-3));
  CHECK(q[1] == doctest::Approx(0.6976).epsilon(1e-3));
}

TEST_CASE("smoothed update division guard") {
  std::vector<double> L{1, 1};
  CHECK_THROWS_AS(ctc_dro_update(GroupWeights({1.0, 0.0}), L, {1.0, 0.0}), DivisionByZero);
  CHECK_NOTHROW(ctc_dro_update(GroupWeights({1.0, 0.0}), L, {1.0, 0.5}));
}

TEST_CASE("loss vector must match and be finite") {
  std::vector<double> short_L{1};
  CHECK_THROWS(group_dro_update(GroupWeights::uniform(2), short_L, 1.0));
  std::vector<double> nan_L{1, std::nan("")};
  CHECK_THROWS(ctc_dro_update(GroupWeights::uniform(2), nan_L, {}));
}

TEST_CASE("large alpha recovers the group DRO update") {
  Rng rng = make_rng(5, "test");
  const double alpha = 1e8, eta = 1e-2;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + uniform_index(rng, 5);
    GroupWeights q(random_simplex(rng, n));
    std::vector<double> L(n);
    for (auto& l : L) l = 10 * uniform01(rng);
    auto a = ctc_dro_update(q, L, {eta * alpha, alpha});
    auto b = group_dro_update(q, L, eta);
    for (std::size_t g = 0; g < n; ++g) CHECK(std::abs(a[g] - b[g]) <= 1e-6);
  }
}

TEST_CASE("optimal weights") {
  std::vector<double> a{1, 3};
  auto oa = optimal_weights(a, 0.5);
  CHECK(oa.q[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(oa.q[1] == doctest::Approx(1.0));
  CHECK_FALSE(oa.valid);

  std::vector<double> b{2, 2};
  auto ob = optimal_weights(b, 1.0);
  CHECK(ob.valid);
  CHECK(ob.q[0] == doctest::Approx(0.5));

  std::vector<double> c{1, 2, 3};
  auto oc = optimal_weights(c, 0.1);
  CHECK(oc.valid);
  CHECK(oc.q[0] == doctest::Approx(1.3 / 6 - 0.1));
  CHECK(oc.q[1] == doctest::Approx(2.6 / 6 - 0.1));
  CHECK(oc.q[2] == doctest::Approx(0.55));
  CHECK(sum(oc.q) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("simplex preservation") {
  Rng rng = make_rng(6, "test");
  const double etas[] = {1e-3, 1e-4, 1.0};
  const double alphas[] = {0.1, 0.5, 1.0};
  for (int i = 0; i < 2000; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 8);
    GroupWeights q(random_simplex(rng, n));
    std::vector<double> L(n);
    for (auto& l : L) l = 500 * uniform01(rng);
    const double eta = etas[uniform_index(rng, 3)];
    for (auto out : {group_dro_update(q, L, eta), ctc_dro_update(q, L, {eta, alphas[uniform_index(rng, 3)]})}) {
      CHECK(std::abs(sum(out.values()) - 1.0) <= 1e-12);
      for (double v : out.values()) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("larger loss gets the larger factor, invariant to scaling") {
  Rng rng = make_rng(8, "test");
  for (int i = 0; i < 200; ++i) {
    GroupWeights q(random_simplex(rng, 3));
    std::vector<double> L{uniform01(rng), uniform01(rng), uniform01(rng)};
    const double c = 0.1 + 10 * uniform01(rng);
    std::vector<double> Lc{c * L[0], c * L[1], c * L[2]};
    auto argmax_factor = [&](const GroupWeights& p) {
      std::size_t best = 0;
      for (std::size_t g = 1; g < 3; ++g)
        if (p[g] / q[g] > p[best] / q[best]) best = g;
      return best;
    };
    auto gd = group_dro_update(q, L, 0.5);
    auto gdc = group_dro_update(q, Lc, 0.5);
    const std::size_t Lmax = static_cast<std::size_t>(std::max_element(L.begin(), L.end()) - L.begin());
    CHECK(argmax_factor(gd) == Lmax);
    CHECK(argmax_factor(gdc) == Lmax);
    // equal q isolates the loss term of the smoothed rule
    auto u = GroupWeights::uniform(3);
    auto sd = ctc_dro_update(u, L, {0.5, 1.0});
    auto sdc = ctc_dro_update(u, Lc, {0.5, 1.0});
    const std::size_t a = static_cast<std::size_t>(std::max_element(sd.values().begin(), sd.values().end()) - sd.values().begin());
    const std::size_t b = static_cast<std::size_t>(std::max_element(sdc.values().begin(), sdc.values().end()) - sdc.values().begin());
    CHECK(a == Lmax);
    CHECK(b == Lmax);
  }
}

TEST_CASE("gap closing under equal losses") {
  GroupWeights q({0.8, 0.2});
  std::vector<double> L{10, 10};
  double gap = 0.6;
  int steps = 0;
  while (gap >= 1e-3) {
    q = ctc_dro_update(q, L, {1e-3, 1.0});
    const double next = std::abs(q[0] - q[1]);
    REQUIRE(next < gap);
    gap = next;
    REQUIRE(++steps <= 10000);
  }
}

TEST_CASE("iterated smoothed update converges to the closed-form optimum") {
  Rng rng = make_rng(9, "test");
  int done = 0;
  while (done < 20) {
    const std::size_t n = 2 + uniform_index(rng, 3);
    std::vector<double> L(n);
    for (auto& l : L) l = 1 + 4 * uniform01(rng);
    const double alpha = 1.0;
    auto opt = optimal_weights(L, alpha);
    if (!opt.valid) continue;
    ++done;
    auto q = GroupWeights::uniform(n);
    for (int t = 0; t < 20000; ++t) q = ctc_dro_update(q, L, {0.05, alpha});
    for (std::size_t g = 0; g < n; ++g) CHECK(std::abs(q[g] - opt.q[g]) <= 1e-4);
  }
}

TEST_CASE("loss normalization") {
  UtteranceLoss u{6.0, 3, 2};
  CHECK(normalize_loss(u, LossNorm::frame) == 2.0);
  CHECK(normalize_loss(u, LossNorm::target) == 3.0);
  CHECK(normalize_loss(u, LossNorm::none) == 6.0);
  CHECK(normalize_loss({6.0, 3, 0}, LossNorm::target) == 6.0);
  std::vector<UtteranceLoss> items{u, {4.0, 4, 4}};
  CHECK(normalize_losses(items, LossNorm::frame) == std::vector<double>{2.0, 1.0});
  CHECK(parse_loss_norm("target") == LossNorm::target);
  CHECK_THROWS(parse_loss_norm("utterance"));
}

TEST_CASE("descent scaling") {
  CHECK(scale_for_descent(10.0, 1.0 / 6, 6) == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(scale_for_descent(10.0, 0.5, 6) == 30.0);
  CHECK(scale_for_descent(0.0, 0.3, 4) == 0.0);
}
