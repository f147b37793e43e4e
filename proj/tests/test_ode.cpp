// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>

#include "molflow/error.hpp"
#include "molflow/ode.hpp"

using namespace molflow;
using ad::Tensor;

namespace {

SolverConfig tight(double tol) {
  SolverConfig c;
  c.rtol = tol;
  c.atol = tol;
  return c;
}

SolverConfig rk4(std::size_t steps) {
  SolverConfig c;
  c.fixed_step = true;
  c.fixed_steps = steps;
  return c;
}

Tensor decay(double, const Tensor& y) {
  Tensor k = y;
  for (double& v : k.data()) v = -v;
  return k;
}

Tensor oscillator(double, const Tensor& y) { return Tensor::from_rows({{y[1], -y[0]}}); }

}  // namespace

TEST(Ode, ExponentialDecay) {
  SolveStats stats;
  const Tensor y = integrate(decay, Tensor::scalar(1.0), 0.0, 1.0, tight(1e-10), &stats);
  EXPECT_NEAR(y.item(), std::exp(-1.0), 1e-9);
  EXPECT_GT(stats.accepted, 1u);
  EXPECT_GT(stats.evaluations, 6 * stats.accepted);
}

TEST(Ode, BackwardInTimeRecoversStart) {
  const Tensor y1 = integrate(decay, Tensor::scalar(1.0), 0.0, 2.0, tight(1e-10));
  const Tensor y0 = integrate(decay, y1, 2.0, 0.0, tight(1e-10));
  EXPECT_NEAR(y1.item(), std::exp(-2.0), 1e-9);
  EXPECT_NEAR(y0.item(), 1.0, 1e-8);
}

TEST(Ode, OscillatorFullPeriod) {
  const Tensor y0 = Tensor::from_rows({{1.0, 0.0}});
  const Tensor y = integrate(oscillator, y0, 0.0, 2.0 * std::numbers::pi, tight(1e-10));
  EXPECT_NEAR(y[0], 1.0, 1e-8);
  EXPECT_NEAR(y[1], 0.0, 1e-8);
}

TEST(Ode, PolynomialInTimeIsExactInOneStep) {
  // Fifth order: a quartic rate integrates exactly, and the embedded error
  // vanishes up to rounding.
  auto rate = [](double t, const Tensor&) { return Tensor::scalar(5.0 * t * t * t * t); };
  const Tensor y0 = Tensor::scalar(0.0);
  const auto st = rk45_step(rate, 0.0, y0, rate(0.0, y0), 0.7);
  EXPECT_NEAR(st.y.item(), std::pow(0.7, 5), 1e-15);
  EXPECT_NEAR(st.k_end.item(), 5.0 * std::pow(0.7, 4), 1e-15);
}

TEST(Ode, ErrorEstimateVanishesForConstantRate) {
  auto rate = [](double, const Tensor&) { return Tensor::from_rows({{2.0, -1.0}}); };
  const Tensor y0 = Tensor::from_rows({{0.0, 0.0}});
  const auto st = rk45_step(rate, 0.0, y0, rate(0.0, y0), 0.5);
  EXPECT_NEAR(st.y[0], 1.0, 1e-15);
  EXPECT_NEAR(st.y[1], -0.5, 1e-15);
  for (double e : st.error) EXPECT_NEAR(e, 0.0, 1e-15);
}

TEST(Ode, ErrorNormExample) {
  SolverConfig c;
  c.rtol = 0.1;
  c.atol = 1.0;
  const Tensor a = Tensor::from_rows({{0.0, 10.0}});
  const Tensor b = Tensor::from_rows({{0.0, 0.0}});
  const std::vector<double> err = {1.0, 2.0};
  // scales 1 and 2: sqrt((1 + 1) / 2)
  EXPECT_DOUBLE_EQ(error_norm(a, b, err, c), 1.0);
}

TEST(Ode, TighterToleranceIsMoreAccurate) {
  double previous = 1.0;
  for (double tol : {1e-3, 1e-6, 1e-9}) {
    const Tensor y = integrate(oscillator, Tensor::from_rows({{1.0, 0.0}}), 0.0, 10.0, tight(tol));
    const double err = std::hypot(y[0] - std::cos(10.0), y[1] + std::sin(10.0));
    EXPECT_LT(err, previous);
    EXPECT_LT(err, 100.0 * tol);
    previous = err;
  }
}

TEST(Ode, FixedRk4IsFourthOrder) {
  auto err = [](std::size_t n) {
    return std::abs(integrate(decay, Tensor::scalar(1.0), 0.0, 1.0, rk4(n)).item() - std::exp(-1.0));
  };
  const double ratio = err(8) / err(16);
  EXPECT_NEAR(ratio, 16.0, 1.0);
}

TEST(Ode, FixedRk4StepCount) {
  SolveStats stats;
  integrate(decay, Tensor::scalar(1.0), 0.0, 1.0, rk4(5), &stats);
  EXPECT_EQ(stats.accepted, 5u);
  EXPECT_EQ(stats.evaluations, 20u);
  // one RK4 step of y' = -y: 1 - h + h^2/2 - h^3/6 + h^4/24
  const double one = integrate(decay, Tensor::scalar(1.0), 0.0, 1.0, rk4(1)).item();
  EXPECT_DOUBLE_EQ(one, 1.0 - 1.0 + 0.5 - 1.0 / 6 + 1.0 / 24);
}

TEST(Ode, ZeroSpanReturnsInput) {
  SolveStats stats;
  const Tensor y = integrate(decay, Tensor::scalar(3.0), 0.5, 0.5, SolverConfig{}, &stats);
  EXPECT_EQ(y.item(), 3.0);
  EXPECT_EQ(stats.evaluations, 0u);
}

TEST(Ode, StepExhaustionThrows) {
  SolverConfig c = tight(1e-12);
  c.max_steps = 2;
  try {
    integrate(oscillator, Tensor::from_rows({{1.0, 0.0}}), 0.0, 100.0, c);
    FAIL();
  } catch (const IntegrationError& e) {
    EXPECT_GE(e.t_reached(), 0.0);
    EXPECT_LT(e.t_reached(), 100.0);
  }
}

TEST(Ode, NonFiniteRateThrows) {
  auto rate = [](double t, const Tensor& y) {
    return t > 0.3 ? Tensor::scalar(std::numeric_limits<double>::quiet_NaN()) : y;
  };
  EXPECT_THROW(integrate(rate, Tensor::scalar(1.0), 0.0, 1.0, SolverConfig{}), IntegrationError);
  EXPECT_THROW(integrate(rate, Tensor::scalar(1.0), 0.0, 1.0, rk4(4)), IntegrationError);
}

TEST(Ode, DynamicsErrorBecomesIntegrationError) {
  auto rate = [](double, const Tensor&) -> Tensor { throw DynamicsError("boom"); };
  EXPECT_THROW(integrate(rate, Tensor::scalar(1.0), 0.0, 1.0, SolverConfig{}), IntegrationError);
}

TEST(Ode, InvalidConfig) {
  SolverConfig c;
  c.rtol = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = rk4(0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = SolverConfig{};
  c.max_steps = 0;
  EXPECT_THROW(integrate(decay, Tensor::scalar(1.0), 0.0, 1.0, c), ConfigError);
}
