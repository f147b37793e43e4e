// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "molflow/error.hpp"
#include "molflow/parameters.hpp"

using namespace molflow;
using namespace molflow::ad;

namespace {

ParameterStore small_store(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ParameterStore s;
  Tensor w(3, 4), b(1, 4), v(4, 1);
  for (Tensor* t : {&w, &b, &v}) {
    for (double& x : t->data()) x = n(rng);
  }
  s.add("w", w);
  s.add("b", b);
  s.add("v", v);
  return s;
}

// Scalar swish MLP over a fixed input, gradients via the tape.
struct Mlp {
  ParameterStore& params;
  Tensor x;
  double operator()() const {
    Tape tape;
    const std::vector<Var> p = params.bind(tape, false);
    return value(tape, p).value().item();
  }
  Var value(Tape& tape, const std::vector<Var>& p) const {
    const Var h = swish(matmul(tape.constant(x), p[0]) + expand_rows(p[1], x.rows()));
    return sum(matmul(h, p[2]));
  }
  Gradients grads() const {
    Tape tape;
    const std::vector<Var> p = params.bind(tape, true);
    return backward(value(tape, p), p);
  }
};

}  // namespace

TEST(Parameters, NamesAreUniqueAndOrdered) {
  ParameterStore s = small_store(1);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.name(1), "b");
  EXPECT_EQ(s.index("v"), 2u);
  EXPECT_FALSE(s.find("missing").has_value());
  EXPECT_EQ(s.scalar_count(), 12u + 4u + 4u);
  EXPECT_THROW(s.add("w", Tensor(1, 1)), ConfigError);
}

TEST(Parameters, JsonRoundTripIsBitExact) {
  const ParameterStore a = small_store(2);
  ParameterStore b = small_store(3);
  const std::string text = a.to_json().dump();
  b.load_json(nlohmann::json::parse(text));
  EXPECT_TRUE(a == b);
}

TEST(Parameters, LoadRejectsShapeOrNameMismatch) {
  ParameterStore a = small_store(2);
  nlohmann::json j = a.to_json();
  ParameterStore other;
  other.add("w", Tensor(2, 2));
  EXPECT_THROW(other.load_json(j), ConfigError);
}

TEST(Parameters, GlobalNorm) {
  Gradients g = {Tensor::from_rows({{3.0}}), Tensor::from_rows({{4.0, 0.0}})};
  EXPECT_DOUBLE_EQ(global_norm(g), 5.0);
  const Gradients z = zero_gradients(small_store(1));
  EXPECT_EQ(global_norm(z), 0.0);
}

TEST(Parameters, CheckGradientsLinearIsExact) {
  ParameterStore s = small_store(4);
  const Tensor c = Tensor::from_rows({{0.5, -1.0, 2.0, 0.25}});
  auto fn = [&]() {
    double v = 0.0;
    for (std::size_t i = 0; i < 4; ++i) v += c[i] * s.value(1)[i];
    return v;
  };
  Gradients g = zero_gradients(s);
  g[1] = c;
  std::vector<ParamCoord> coords;
  for (std::size_t i = 0; i < 4; ++i) coords.push_back({1, i});
  EXPECT_LT(check_gradients(fn, s, g, coords).max_relative_error, 1e-9);
}

TEST(Parameters, CheckGradientsSwishMlp) {
  ParameterStore s = small_store(5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor x(5, 3);
  for (double& v : x.data()) v = n(rng);
  const Mlp mlp{s, x};
  const Gradients g = mlp.grads();
  const auto coords = sample_coords(s, 12, 7);
  EXPECT_EQ(coords.size(), 12u);
  EXPECT_LT(check_gradients(mlp, s, g, coords).max_relative_error, 1e-5);
}

TEST(Parameters, IgnoredParameterHasZeroGradients) {
  ParameterStore s = small_store(8);
  s.add("unused", Tensor(2, 2, 1.0));
  Tensor x(2, 3, 0.5);
  const Mlp mlp{s, x};
  Gradients g = mlp.grads();
  g.push_back(Tensor(2, 2));
  const std::vector<ParamCoord> coords = {{3, 0}, {3, 3}};
  const GradientCheckReport rep = check_gradients(mlp, s, g, coords);
  for (const GradientCheckEntry& e : rep.entries) {
    EXPECT_LT(std::abs(e.analytic), 1e-12);
    EXPECT_LT(std::abs(e.numeric), 1e-12);
  }
}

TEST(Parameters, CheckGradientsRestoresValues) {
  ParameterStore s = small_store(9);
  const ParameterStore before = s;
  const Mlp mlp{s, Tensor(2, 3, 0.1)};
  check_gradients(mlp, s, mlp.grads(), sample_coords(s, 5, 1));
  EXPECT_TRUE(s == before);
}
