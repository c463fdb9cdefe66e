// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "sbd/approximator.hpp"
#include "sbd/error.hpp"
#include "sbd/rng.hpp"

namespace sbd {
namespace {

NetShape policy(std::size_t in, std::size_t width, std::size_t depth, std::size_t agents) {
  return {HeadKind::Policy, in, width, depth, agents};
}

NetShape meta(std::size_t in, std::size_t width, std::size_t depth) {
  return {HeadKind::MetaWeight, in, width, depth, 2};
}

std::vector<double> random_input(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal();
  return x;
}

TEST(Forward, ZeroParametersGiveUniformAndHalf) {
  const auto p = zero_params(policy(5, 8, 3, 4));
  const auto out = forward(p, std::vector<double>(5, 1.3));
  for (double q : out.agent_probs) EXPECT_EQ(q, 0.25);
  EXPECT_EQ(out.alpha, 0.5);
  const auto m = zero_params(meta(5, 8, 2));
  EXPECT_EQ(forward(m, std::vector<double>(5, -2.0)).lambda, 0.5);
}

TEST(Forward, OutputsStayInsideUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = init_deterministic(policy(6, 8, 3, 3), static_cast<std::uint64_t>(trial));
    for (auto& v : p.values) v *= 4.0;
    const auto out = forward(p, random_input(rng, 6));
    EXPECT_GT(out.alpha, 0.0);
    EXPECT_LT(out.alpha, 1.0);
    EXPECT_NEAR(std::accumulate(out.agent_probs.begin(), out.agent_probs.end(), 0.0), 1.0, 1e-9);
    for (double q : out.agent_probs) EXPECT_GE(q, 0.0);
  }
}

TEST(Forward, RejectsDimensionMismatch) {
  const auto p = init_deterministic(policy(4, 8, 2, 2), 1);
  EXPECT_THROW(forward(p, std::vector<double>(5, 0.0)), ShapeError);
}

TEST(Forward, DeterministicForFixedSeed) {
  const auto a = init_deterministic(policy(16 + 1 + 4, 32, 4, 4), 42);
  const auto b = init_deterministic(policy(16 + 1 + 4, 32, 4, 4), 42);
  const std::vector<double> x(21, 0.25);
  const auto oa = forward(a, x), ob = forward(b, x);
  EXPECT_EQ(oa.agent_probs, ob.agent_probs);
  EXPECT_EQ(oa.alpha, ob.alpha);
}

TEST(Forward, NonFiniteActivationIsANumericError) {
  auto p = init_deterministic(policy(3, 4, 2, 2), 1);
  p.values[0] = 1e308;
  EXPECT_THROW(forward(p, std::vector<double>{1e308, 1e308, 1e308}), NumericError);
}

TEST(Backward, ConstantLossHasZeroGradient) {
  const auto p = init_deterministic(policy(5, 8, 3, 3), 2);
  const auto r = backward(p, std::vector<double>(5, 0.7), HeadCotangent{{0.0, 0.0, 0.0}, 0.0, 0.0});
  for (double g : r.gradient.values) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SingleLinearLayerSquaredLossMatchesClosedForm) {
  // raw = W x + b with loss |raw - y|^2 has dL/dW = 2 (Wx + b - y) x^T.
  Rng rng(8);
  const NetShape s = policy(4, 1, 1, 2);  // 3 raw outputs
  auto p = init_deterministic(s, 5);
  const auto x = random_input(rng, 4);
  const std::vector<double> y = {0.3, -0.2, 0.9};
  Matrix<double> xm(4, 1);
  for (int i = 0; i < 4; ++i) xm(i, 0) = x[static_cast<std::size_t>(i)];
  ForwardCache<double> cache;
  const Matrix<double> raw = forward_raw<double>(s, p.values.data(), xm, &cache);
  Matrix<double> d(3, 1);
  for (int r = 0; r < 3; ++r) d(r, 0) = 2.0 * (raw(r, 0) - y[static_cast<std::size_t>(r)]);
  std::vector<double> grad(s.parameter_count(), 0.0);
  backward_raw<double>(s, p.values.data(), cache, d, grad.data(), nullptr);

  // Oracle evaluated directly from the weights in column-major layout.
  for (std::size_t r = 0; r < 3; ++r) {
    double z = p.values[12 + r];
    for (std::size_t c = 0; c < 4; ++c) z += p.values[r + 3 * c] * x[c];
    const double e = 2.0 * (z - y[r]);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(grad[r + 3 * c], e * x[c], 1e-14);
    EXPECT_NEAR(grad[12 + r], e, 1e-14);
  }
}

TEST(Backward, MatchesFiniteDifferencesOnRandomNets) {
  EXPECT_LT(oracle::random_gradient_checks(2024, 100), 1e-4);
}

TEST(Backward, InputCotangentMatchesFiniteDifferences) {
  Rng rng(77);
  const auto p = init_deterministic(policy(5, 6, 3, 3), 9);
  const auto x = random_input(rng, 5);
  oracle::HeadLoss loss{{0.2, 0.3, 0.5, 0.1}, {1.0, 1.5, 0.5, 2.0}};
  const auto r = backward(p, x, loss.cotangent(forward(p, x), HeadKind::Policy));
  ASSERT_EQ(r.input_cotangent.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    auto xp = x, xm = x;
    xp[i] += 1e-5;
    xm[i] -= 1e-5;
    const double fd = (loss.value(forward(p, xp), HeadKind::Policy) - loss.value(forward(p, xm), HeadKind::Policy)) / 2e-5;
    EXPECT_NEAR(r.input_cotangent[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Init, SameSeedSameParameters) {
  EXPECT_EQ(init_deterministic(policy(21, 32, 4, 4), 7).values, init_deterministic(policy(21, 32, 4, 4), 7).values);
}

TEST(Init, DifferentSeedsDiffer) {
  EXPECT_NE(init_deterministic(policy(21, 32, 4, 4), 7).values, init_deterministic(policy(21, 32, 4, 4), 8).values);
}

TEST(Init, FanInSixteenBoundsFirstLayer) {
  const NetShape s = policy(16, 16, 3, 2);
  const auto p = init_deterministic(s, 3);
  // Every layer has fan-in 16 here, so every entry lies within 1/sqrt(16).
  double largest = 0.0;
  for (double v : p.values) largest = std::max(largest, std::abs(v));
  EXPECT_LE(largest, 0.25);
  EXPECT_GT(largest, 0.2);
}

TEST(Shape, RejectsInvalidShapes) {
  EXPECT_THROW(policy(0, 4, 2, 2).validate(), ShapeError);
  EXPECT_THROW(policy(3, 4, 0, 2).validate(), ShapeError);
  EXPECT_THROW(policy(3, 4, 2, 0).validate(), ShapeError);
}

TEST(Serialization, RoundTripIsBitExact) {
  auto p = init_deterministic(policy(7, 5, 3, 3), 11);
  p.values[3] = 1.0 / 3.0;
  p.values[4] = -0.0;
  p.values[5] = 5e-324;
  const auto q = deserialize(serialize(p));
  EXPECT_EQ(q.shape, p.shape);
  ASSERT_EQ(q.values.size(), p.values.size());
  for (std::size_t i = 0; i < p.values.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(q.values[i]), std::bit_cast<std::uint64_t>(p.values[i]));
}

TEST(Serialization, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "sbd_params_roundtrip.txt";
  const auto p = init_deterministic(meta(4, 6, 2), 12);
  save_params(p, path.string());
  EXPECT_EQ(load_params(path.string()).values, p.values);
  std::filesystem::remove(path);
}

TEST(Serialization, RejectsUnknownVersionAndCorruptInput) {
  const auto text = serialize(init_deterministic(meta(2, 3, 2), 1));
  auto bumped = text;
  const auto pos = bumped.find(" 1\n");
  ASSERT_NE(pos, std::string::npos);
  bumped[pos + 1] = '9';
  EXPECT_THROW(deserialize(bumped), UnsupportedVersion);
  EXPECT_THROW(deserialize(text.substr(0, text.size() / 2)), ParseError);
}

}  // namespace
}  // namespace sbd
