#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "e2d2/schedule.hpp"
#include "e2d2/vocab.hpp"

using namespace e2d2;

namespace {
const NoiseSchedule kSched{};
constexpr Token kMaskId = vocab::kMask;
}  // namespace

TEST_CASE("alpha boundaries and linear value") {
  CHECK(alpha(kSched, 0.0) == 1.0);
  CHECK(alpha(kSched, 1.0) == 0.0);
  CHECK(alpha(kSched, 0.25) == doctest::Approx(0.75));
  CHECK_THROWS_AS(alpha(kSched, -0.1), std::domain_error);
  CHECK_THROWS_AS(alpha(kSched, 1.1), std::domain_error);
}

TEST_CASE("q_sample boundary identities") {
  Rng rng(1);
  TokenSeq x = {5, 9, 200, 3, 77};
  LatentSequence z0 = q_sample(x, 0.0, kSched, rng, kMaskId);
  CHECK(z0.ids == x);
  LatentSequence z1 = q_sample(x, 1.0, kSched, rng, kMaskId);
  for (Token id : z1.ids) CHECK(id == kMaskId);
}

TEST_CASE("q_sample rejects MASK in clean input") {
  Rng rng(1);
  TokenSeq x = {5, kMaskId};
  CHECK_THROWS_AS(q_sample(x, 0.5, kSched, rng, kMaskId), std::invalid_argument);
}

TEST_CASE("q_sample masked fraction concentrates at t=0.5") {
  Rng rng(42);
  TokenSeq x(10000, 7);
  LatentSequence z = q_sample(x, 0.5, kSched, rng, kMaskId);
  std::int64_t masked = 0;
  for (Token id : z.ids) masked += id == kMaskId ? 1 : 0;
  const double frac = double(masked) / 10000.0;
  CHECK(std::abs(frac - 0.5) < 3.0 * 0.005);  // binomial 3 sigma
}

TEST_CASE("two-state property holds for any t") {
  Rng rng(9);
  TokenSeq x = {1, 2, 3, 4, 5, 6, 7, 8};
  for (int trial = 0; trial < 200; ++trial) {
    const double t = rng.uniform();
    LatentSequence z = q_sample(x, t, kSched, rng, kMaskId);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK((z.ids[i] == x[i] || z.ids[i] == kMaskId));
  }
}

TEST_CASE("reverse posterior") {
  // carry-over: unmasked token is a point mass
  TwoPointDist d = reverse_posterior(42, 42, 0.2, 0.8, kSched, kMaskId);
  CHECK(d.p_token == 1.0);
  CHECK(d.p_mask == 0.0);

  // s = 0 forces full unmask
  d = reverse_posterior(kMaskId, 42, 0.0, 0.7, kSched, kMaskId);
  CHECK(d.p_token == doctest::Approx(1.0));

  // linear schedule, t=1, s=0.5
  d = reverse_posterior(kMaskId, 42, 0.5, 1.0, kSched, kMaskId);
  CHECK(d.p_token == doctest::Approx(0.5));

  CHECK_THROWS_AS(reverse_posterior(kMaskId, 42, 0.8, 0.2, kSched, kMaskId), std::domain_error);
}

TEST_CASE("loss weight is 1/t for the linear schedule") {
  CHECK(loss_weight(kSched, 1.0) == doctest::Approx(1.0));
  CHECK(loss_weight(kSched, 0.5) == doctest::Approx(2.0));
  CHECK(loss_weight(kSched, 0.25) == doctest::Approx(4.0));
  CHECK_THROWS_AS(loss_weight(kSched, 1e-4), std::domain_error);
}

TEST_CASE("sample_t stratification") {
  Rng rng(5);
  auto one = sample_t(1, rng, kSched);
  CHECK(one.size() == 1);
  CHECK(one[0] >= kSched.t_min);
  CHECK(one[0] <= 1.0);

  auto four = sample_t(4, rng, kSched);
  for (int i = 0; i < 4; ++i) {
    CHECK(four[std::size_t(i)] >= std::max(kSched.t_min, i / 4.0));
    CHECK(four[std::size_t(i)] < (i + 1) / 4.0 + 1e-12);
  }

  auto big = sample_t(1000, rng, kSched);
  double mean = 0;
  for (double t : big) mean += t;
  mean /= 1000.0;
  CHECK(std::abs(mean - 0.5) < 0.02);
}

TEST_CASE("per-step unmask probabilities compose to full unmask at t=0") {
  // Product of survival probabilities telescopes to (1 - alpha(0)) / (1 - alpha(1)) = 0.
  for (std::int64_t steps : {1, 2, 7, 64}) {
    double p_masked = 1.0;
    for (std::int64_t i = steps; i >= 1; --i) {
      const double t = double(i) / double(steps);
      const double s = double(i - 1) / double(steps);
      p_masked *= 1.0 - unmask_probability(kSched, s, t);
    }
    CHECK(p_masked == doctest::Approx(0.0).epsilon(1e-12));
  }

  // And the simulated chain ends fully unmasked.
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t steps = 8;
    bool masked = true;
    for (std::int64_t i = steps; i >= 1; --i) {
      const double t = double(i) / double(steps);
      const double s = double(i - 1) / double(steps);
      if (masked && rng.uniform() < unmask_probability(kSched, s, t)) masked = false;
    }
    CHECK_FALSE(masked);
  }
}

TEST_CASE("composed reverse steps never remask") {
  Rng rng(13);
  const std::int64_t steps = 16;
  for (int trial = 0; trial < 100; ++trial) {
    Token z = kMaskId;
    bool was_clean = false;
    for (std::int64_t i = steps; i >= 1; --i) {
      const double t = double(i) / double(steps);
      const double s = double(i - 1) / double(steps);
      TwoPointDist d = reverse_posterior(z, 42, s, t, kSched, kMaskId);
      z = rng.uniform() < d.p_token ? d.token : kMaskId;
      if (was_clean) CHECK(z == 42);  // zero probability of moving back to MASK
      if (z != kMaskId) was_clean = true;
    }
    CHECK(z == 42);
  }
}
