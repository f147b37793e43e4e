// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// Dormand-Prince 5(4) with embedded error control, plus a fixed-step RK4
// fallback. Generic over the state type through StateOps<S>, so the same
// solver advances plain tensors at inference and taped variables in training
// (where backpropagating through the accepted steps gives the gradient).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "molflow/autodiff.hpp"
#include "molflow/error.hpp"

namespace molflow {

struct SolverConfig {
  double rtol = 1e-3;
  double atol = 1e-3;
  std::size_t max_steps = 10000;
  bool fixed_step = false;
  std::size_t fixed_steps = 8;  // RK4 steps over the interval when fixed_step

  void validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("solver tolerances must be positive");
    if (max_steps == 0) throw ConfigError("solver max_steps must be >= 1");
    if (fixed_step && fixed_steps == 0) throw ConfigError("solver fixed_steps must be >= 1");
  }
};

struct SolveStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;
};

//! Required operations on a state type:
//!   static S combine(const S& y, double h, std::span<const double> c,
//!                    std::span<const S* const> k);   // y + h * sum c_i k_i
//!   static void values(const S& s, std::vector<double>& out);  // flattened
template <class S>
struct StateOps;

template <>
struct StateOps<ad::Tensor> {
  static ad::Tensor combine(const ad::Tensor& y, double h, std::span<const double> c,
                            std::span<const ad::Tensor* const> k) {
    ad::Tensor out = y;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c[i] == 0.0) continue;
      const double w = h * c[i];
      auto src = k[i]->data();
      auto dst = out.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
    }
    return out;
  }
  static void values(const ad::Tensor& s, std::vector<double>& out) {
    out.assign(s.data().begin(), s.data().end());
  }
};

namespace dopri {

inline constexpr std::array<double, 7> kC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr std::array<std::array<double, 6>, 7> kA = {{
    {0, 0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
    {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
}};
// 5th-order weights equal the last row of A; E = b5 - b4.
inline constexpr std::array<double, 7> kE = {71.0 / 57600,      0.0,         -71.0 / 16695,
                                             71.0 / 1920,       -17253.0 / 339200,
                                             22.0 / 525,        -1.0 / 40};

inline constexpr double kSafety = 0.9;
inline constexpr double kMinFactor = 0.2;
inline constexpr double kMaxFactor = 5.0;

}  // namespace dopri

//! RMS over all entries of err / (atol + rtol * max(|y0|, |y1|)).
template <class S>
double error_norm(const S& y0, const S& y1, std::span<const double> err, const SolverConfig& cfg) {
  std::vector<double> a, b;
  StateOps<S>::values(y0, a);
  StateOps<S>::values(y1, b);
  if (err.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double sc = cfg.atol + cfg.rtol * std::max(std::abs(a[i]), std::abs(b[i]));
    const double r = err[i] / sc;
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(err.size()));
}

template <class S>
struct Rk45Step {
  S y;                      // 5th-order solution
  std::vector<double> error;  // flattened embedded error estimate, already times h
  S k_end;                  // rate at the new point (first stage of the next step)
};

//! One Dormand-Prince step of size h from (t, y) given k1 = rate(t, y).
template <class S, class Rate>
Rk45Step<S> rk45_step(Rate&& rate, double t, const S& y, const S& k1, double h,
                      SolveStats* stats = nullptr) {
  using namespace dopri;
  std::array<S, 7> k{};
  k[0] = k1;
  std::array<const S*, 6> ptr{};
  for (std::size_t s = 1; s < 7; ++s) {
    for (std::size_t j = 0; j < s; ++j) ptr[j] = &k[j];
    const S ys = StateOps<S>::combine(y, h, std::span<const double>(kA[s].data(), s),
                                      std::span<const S* const>(ptr.data(), s));
    if (s == 6) {
      k[6] = rate(t + h, ys);
      if (stats) ++stats->evaluations;
      std::vector<double> err, kv;
      for (std::size_t j = 0; j < 7; ++j) {
        if (kE[j] == 0.0) continue;
        StateOps<S>::values(k[j], kv);
        if (err.empty()) err.assign(kv.size(), 0.0);
        for (std::size_t i = 0; i < kv.size(); ++i) err[i] += h * kE[j] * kv[i];
      }
      return Rk45Step<S>{ys, std::move(err), k[6]};
    }
    k[s] = rate(t + kC[s] * h, ys);
    if (stats) ++stats->evaluations;
  }
  return {};  // unreachable
}

//! Integrates dy/dt = rate(t, y) from t0 to t1 (either direction). Throws
//! IntegrationError (empty molecule id) on step exhaustion, step underflow, or
//! non-finite stages.
template <class S, class Rate>
S integrate(Rate&& rate, S y, double t0, double t1, const SolverConfig& cfg,
            SolveStats* stats = nullptr) {
  cfg.validate();
  const double span = t1 - t0;
  if (span == 0.0) return y;
  const double dir = span > 0 ? 1.0 : -1.0;
  double t = t0;
  auto finite = [](const S& s) {
    std::vector<double> v;
    StateOps<S>::values(s, v);
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  auto eval = [&](double tt, const S& s) {
    S k;
    try {
      k = rate(tt, s);
    } catch (const DynamicsError& e) {
      throw IntegrationError("", tt, e.what());
    }
    if (stats) ++stats->evaluations;
    if (!finite(k)) throw IntegrationError("", tt, "non-finite rate");
    return k;
  };

  if (cfg.fixed_step) {
    const double h = span / static_cast<double>(cfg.fixed_steps);
    static constexpr std::array<double, 1> half = {0.5};
    static constexpr std::array<double, 1> one = {1.0};
    static constexpr std::array<double, 4> w = {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6};
    for (std::size_t n = 0; n < cfg.fixed_steps; ++n) {
      const double tn = t0 + h * static_cast<double>(n);
      const S k1 = eval(tn, y);
      const S* p1 = &k1;
      const S k2 = eval(tn + 0.5 * h, StateOps<S>::combine(y, h, half, std::span(&p1, 1)));
      const S* p2 = &k2;
      const S k3 = eval(tn + 0.5 * h, StateOps<S>::combine(y, h, half, std::span(&p2, 1)));
      const S* p3 = &k3;
      const S k4 = eval(tn + h, StateOps<S>::combine(y, h, one, std::span(&p3, 1)));
      const std::array<const S*, 4> ks = {&k1, &k2, &k3, &k4};
      y = StateOps<S>::combine(y, h, w, ks);
      if (stats) ++stats->accepted;
    }
    return y;
  }

  std::vector<double> v0, v1;
  auto scaled_norm = [&](const S& a, const S& ref) {
    StateOps<S>::values(a, v0);
    StateOps<S>::values(ref, v1);
    double s = 0.0;
    for (std::size_t i = 0; i < v0.size(); ++i) {
      const double r = v0[i] / (cfg.atol + cfg.rtol * std::abs(v1[i]));
      s += r * r;
    }
    return v0.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v0.size()));
  };

  S k1 = eval(t, y);

  // Initial step: Hairer, Norsett & Wanner heuristic, one extra evaluation.
  double h;
  {
    const double d0 = scaled_norm(y, y);
    const double d1 = scaled_norm(k1, y);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, std::abs(span));
    const double c = dir * h0;
    const S* pk = &k1;
    const S y1 = StateOps<S>::combine(y, 1.0, std::span<const double>(&c, 1), std::span(&pk, 1));
    const S f1 = eval(t + dir * h0, y1);
    StateOps<S>::values(f1, v0);
    std::vector<double> fk;
    StateOps<S>::values(k1, fk);
    StateOps<S>::values(y, v1);
    double s = 0.0;
    for (std::size_t i = 0; i < v0.size(); ++i) {
      const double r = (v0[i] - fk[i]) / (cfg.atol + cfg.rtol * std::abs(v1[i]));
      s += r * r;
    }
    const double d2 = v0.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v0.size())) / h0;
    const double dmax = std::max(d1, d2);
    if (dmax <= 1e-15) {
      h = std::abs(span);  // degenerate dynamics: one step covers the interval
    } else {
      h = std::min(100.0 * h0, std::pow(0.01 / dmax, 1.0 / 5.0));
    }
    h = std::min(h, std::abs(span));
  }

  bool last_rejected = false;
  for (std::size_t step = 0;; ++step) {
    if (step >= cfg.max_steps) {
      throw IntegrationError("", t, "exceeded " + std::to_string(cfg.max_steps) + " steps");
    }
    const double remaining = std::abs(t1 - t);
    const bool final_step = h >= remaining;
    const double hs = dir * (final_step ? remaining : h);
    if (std::abs(hs) < 1e-12 * std::abs(span)) throw IntegrationError("", t, "step size underflow");
    Rk45Step<S> st = rk45_step(eval, t, y, k1, hs);
    const bool ok = finite(st.y) && std::all_of(st.error.begin(), st.error.end(),
                                                 [](double x) { return std::isfinite(x); });
    const double norm = ok ? error_norm(y, st.y, st.error, cfg) : INFINITY;
    if (norm <= 1.0) {
      t = final_step ? t1 : t + hs;
      y = std::move(st.y);
      k1 = std::move(st.k_end);
      if (stats) ++stats->accepted;
      if (final_step) return y;
      double factor = norm == 0.0 ? dopri::kMaxFactor
                                  : dopri::kSafety * std::pow(norm, -1.0 / 5.0);
      factor = std::clamp(factor, dopri::kMinFactor, dopri::kMaxFactor);
      if (last_rejected) factor = std::min(factor, 1.0);
      h = std::abs(hs) * factor;
      last_rejected = false;
    } else {
      if (stats) ++stats->rejected;
      double factor = std::isfinite(norm) ? dopri::kSafety * std::pow(norm, -1.0 / 5.0)
                                          : dopri::kMinFactor;
      factor = std::clamp(factor, dopri::kMinFactor, 1.0);
      h = std::abs(hs) * factor;
      last_rejected = true;
    }
  }
}

}  // namespace molflow
