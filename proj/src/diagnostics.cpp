// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "molflow/error.hpp"
#include "molflow/train.hpp"

namespace molflow {

using ad::Tensor;

void perturb_parameters(ad::ParameterStore& params, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double& v : params.value(i).data()) v += noise(rng);
  }
}

void strengthen_diagonal(ConfFlowModel& model, double gain) {
  ad::ParameterStore& ps = model.parameters();
  for (const CnfSlot& c : model.cnfs()) {
    for (const BlockParams& b : c.blocks) {
      Tensor& w1 = ps.value(b.omega.first.weight);
      Tensor& w2 = ps.value(b.omega.second.weight);
      // omega's input starts with the c_in coordinate columns
      for (std::size_t d = 0; d < std::min(b.c_in, w1.cols()); ++d) w1(d, d) += gain;
      for (std::size_t d = 0; d < std::min(w2.rows(), w2.cols()); ++d) w2(d, d) += gain;
    }
  }
}

std::vector<std::string> templates_up_to(std::size_t max_atoms) {
  std::vector<std::string> out;
  for (std::size_t n = 4; n <= std::min<std::size_t>(12, max_atoms); ++n) {
    out.push_back("chain-" + std::to_string(n));
  }
  for (std::size_t n = 3; n <= 9 && n + 2 <= max_atoms; ++n) {
    out.push_back("ring-" + std::to_string(n));
  }
  for (std::size_t n = 5; n <= std::min<std::size_t>(12, max_atoms); ++n) {
    out.push_back("branched-" + std::to_string(n));
  }
  return out;
}

Dataset random_toy_molecules(std::size_t count, std::size_t max_atoms, std::uint64_t seed,
                             std::size_t conformers) {
  const std::vector<std::string> names = templates_up_to(max_atoms);
  if (names.empty()) throw ConfigError("no toy template fits " + std::to_string(max_atoms) + " atoms");
  std::mt19937_64 rng(seed);
  ToySpec spec;
  spec.conformers = conformers;
  for (std::size_t i = 0; i < count; ++i) spec.templates.push_back(names[rng() % names.size()]);
  return generate_toy_dataset(spec, rng());
}

MolecularGraph permute_atoms(const MolecularGraph& graph, std::span<const std::size_t> perm) {
  if (perm.size() != graph.atom_count()) throw ShapeError("permute_atoms: permutation size");
  MolecularGraph out = graph;
  for (std::size_t i = 0; i < perm.size(); ++i) out.atoms[perm[i]] = graph.atoms[i];
  for (Edge& e : out.edges) {
    const std::size_t a = perm[e.i], b = perm[e.j];
    e.i = std::min(a, b);
    e.j = std::max(a, b);
  }
  std::sort(out.edges.begin(), out.edges.end(), [](const Edge& a, const Edge& b) {
    return std::pair(a.i, a.j) < std::pair(b.i, b.j);
  });
  return out;
}

Tensor permute_rows(const Tensor& x, std::span<const std::size_t> perm) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(perm[i], c) = x(i, c);
  }
  return out;
}

Tensor map_coordinates(const ConfFlowModel& model, const GraphBatch& batch, const Tensor& z,
                       bool inverse) {
  const std::size_t layers = model.config().layers;
  const Tensor none;
  Tensor y = z;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t l = inverse ? layers - 1 - k : k;
    y = model.apply_layer(l, inverse, batch, y, none, false).z;
  }
  return y;
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

Tensor gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Desk-sized model with non-trivial dynamics.
ConfFlowModel perturbed_model(const Dataset& data, const SolverConfig& solver, TraceMode trace,
                              std::uint64_t seed, double scale) {
  FlowConfig cfg = desk_flow_config();
  cfg.solver = solver;
  cfg.trace = trace;
  ConfFlowModel model(cfg, compute_feature_stats(data), seed);
  perturb_parameters(model.parameters(), scale, seed + 1);
  return model;
}

CheckResult finish(std::string name, double measured, double threshold, Clock::time_point t0,
                   std::string detail = {}) {
  CheckResult r;
  r.name = std::move(name);
  r.measured = measured;
  r.threshold = threshold;
  r.passed = std::isfinite(measured) && measured < threshold;
  r.seconds = since(t0);
  r.detail = std::move(detail);
  return r;
}

}  // namespace

CheckResult check_roundtrip(CheckLevel level, double tolerance, double threshold) {
  const auto t0 = Clock::now();
  const std::size_t count = level == CheckLevel::Full ? 20 : 5;
  const Dataset data = random_toy_molecules(count, 12, 101);
  SolverConfig solver;
  solver.rtol = tolerance;
  solver.atol = tolerance;
  const ConfFlowModel model = perturbed_model(data, solver, TraceMode::Hutchinson, 7, 0.1);
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (const Molecule& m : data) {
    const GraphBatch batch = model.prepare(m.graph);
    const Tensor z = gaussian(batch.atoms, 3, rng);
    const Tensor x = map_coordinates(model, batch, z, false);
    const Tensor back = map_coordinates(model, batch, x, true);
    for (std::size_t i = 0; i < z.size(); ++i) {
      worst = std::max(worst, std::abs(back.data()[i] - z.data()[i]));
    }
  }
  char name[64];
  std::snprintf(name, sizeof name, "roundtrip-tol%.0e", tolerance);
  return finish(name, worst, threshold, t0, std::to_string(count) + " molecules");
}

std::vector<CheckResult> check_trace_oracle(CheckLevel level) {
  const auto t0 = Clock::now();
  const bool full = level == CheckLevel::Full;
  const std::size_t count = full ? 5 : 2;
  const std::size_t probes = full ? 10000 : 2000;
  const std::size_t chunk = 500;
  const Dataset data = random_toy_molecules(count, 6, 202);
  ConfFlowModel model = perturbed_model(data, SolverConfig{}, TraceMode::Hutchinson, 13, 0.05);
  strengthen_diagonal(model, 1.0);
  std::mt19937_64 rng(17);
  double worst_trace = 0.0, worst_frob = 0.0;
  for (const Molecule& m : data) {
    const GraphBatch one = model.prepare(m.graph);
    const Tensor z = gaussian(one.atoms, 3, rng);
    const double t = 0.5;
    const Tensor jac = dynamics_jacobian(model, 0, one, z, t);
    double trace = 0.0, frob = 0.0;
    for (std::size_t r = 0; r < jac.rows(); ++r) {
      trace += jac(r, r);
      for (std::size_t c = 0; c < jac.cols(); ++c) frob += jac(r, c) * jac(r, c);
    }
    const GraphBatch many = replicate_batch(one, chunk);
    Tensor zs(many.atoms, 3);
    for (std::size_t k = 0; k < chunk; ++k) {
      for (std::size_t a = 0; a < one.atoms; ++a) {
        for (std::size_t d = 0; d < 3; ++d) zs(k * one.atoms + a, d) = z(a, d);
      }
    }
    double sum_trace = 0.0, sum_frob = 0.0;
    for (std::size_t done = 0; done < probes; done += chunk) {
      Tensor eps(many.atoms, 3);
      for (double& v : eps.data()) v = (rng() >> 63) != 0 ? 1.0 : -1.0;
      const ProbeEstimate est = probe_estimate(model, 0, many, zs, t, eps);
      for (std::size_t k = 0; k < chunk; ++k) {
        sum_trace += est.trace[k];
        sum_frob += est.frob[k];
      }
    }
    const double n = static_cast<double>((probes + chunk - 1) / chunk * chunk);
    worst_trace = std::max(worst_trace, std::abs(sum_trace / n - trace) / std::abs(trace));
    worst_frob = std::max(worst_frob, std::abs(sum_frob / n - frob) / frob);
  }
  const std::string detail =
      std::to_string(count) + " molecules, " + std::to_string(probes) + " probes";
  return {finish("trace-estimator", worst_trace, 0.01, t0, detail),
          finish("frobenius-estimator", worst_frob, 0.02, t0, detail)};
}

CheckResult check_gradient(CheckLevel level) {
  const auto t0 = Clock::now();
  ToySpec spec;
  spec.templates = {"chain-5", "ring-4"};
  spec.conformers = 2;
  const Dataset data = generate_toy_dataset(spec, 303);
  SolverConfig solver;
  solver.fixed_step = true;
  solver.fixed_steps = 4;
  ConfFlowModel model = perturbed_model(data, solver, TraceMode::Hutchinson, 19, 0.1);
  std::vector<GraphBatch> batches;
  for (const Molecule& m : data) batches.push_back(model.prepare(m.graph));
  std::vector<TrainRow> rows;
  std::vector<Probes> probes;
  std::mt19937_64 rng(23);
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows.push_back({&batches[i], center_conformation(data[i].conformers[0]).coords});
    probes.push_back(model.draw_probes(batches[i].atoms, rng));
  }
  const BatchLoss analytic = batch_loss(model, rows, probes, 0.2, 0.2, true);
  const auto fn = [&]() { return batch_loss(model, rows, probes, 0.2, 0.2, false).loss; };
  const std::size_t count = level == CheckLevel::Full ? 20 : 8;
  const std::vector<ad::ParamCoord> coords = ad::sample_coords(model.parameters(), count, 29);
  const ad::GradientCheckReport rep =
      ad::check_gradients(fn, model.parameters(), analytic.grads, coords, 1e-5, 1e-6);
  return finish("gradient-check", rep.max_relative_error, 1e-4, t0,
                std::to_string(count) + " coordinates");
}

CheckResult check_equivariance(CheckLevel level) {
  const auto t0 = Clock::now();
  const std::size_t trials = level == CheckLevel::Full ? 20 : 5;
  const Dataset data = random_toy_molecules(trials, 12, 404);
  const ConfFlowModel model = perturbed_model(data, SolverConfig{}, TraceMode::Hutchinson, 31, 0.1);
  std::mt19937_64 rng(37);
  double worst = 0.0;
  for (const Molecule& m : data) {
    const std::size_t n = m.graph.atom_count();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor z = gaussian(n, 3, rng);
    const Tensor f = model.dynamics(0, model.prepare(m.graph), z, 0.3);
    const Tensor fp =
        model.dynamics(0, model.prepare(permute_atoms(m.graph, perm)), permute_rows(z, perm), 0.3);
    const Tensor expect = permute_rows(f, perm);
    for (std::size_t i = 0; i < fp.size(); ++i) {
      worst = std::max(worst, std::abs(fp.data()[i] - expect.data()[i]));
    }
  }
  return finish("permutation-equivariance", worst, 1e-9, t0,
                std::to_string(trials) + " permutations");
}

CheckResult check_identity_init(CheckLevel level) {
  const auto t0 = Clock::now();
  const std::size_t count = level == CheckLevel::Full ? 10 : 3;
  const Dataset data = random_toy_molecules(count, 12, 505);
  const ConfFlowModel model(desk_flow_config(), compute_feature_stats(data), 41);
  std::mt19937_64 rng(43);
  double worst = 0.0;
  for (const Molecule& m : data) {
    const GraphBatch batch = model.prepare(m.graph);
    const Tensor z = gaussian(batch.atoms, 3, rng);
    const Tensor x = map_coordinates(model, batch, z, false);
    for (std::size_t i = 0; i < z.size(); ++i) {
      worst = std::max(worst, std::abs(x.data()[i] - z.data()[i]));
    }
  }
  return finish("identity-at-init", worst, 1e-8, t0, std::to_string(count) + " molecules");
}

std::vector<CheckResult> run_checks(CheckLevel level,
                                    const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> out;
  auto push = [&](CheckResult r) {
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  };
  auto guarded = [&](std::vector<std::string> names, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      for (std::string& name : names) {
        CheckResult r;
        r.name = std::move(name);
        r.measured = std::numeric_limits<double>::infinity();
        r.detail = std::string("error: ") + e.what();
        push(std::move(r));
      }
    }
  };
  guarded({"roundtrip-tol1e-03"}, [&] { push(check_roundtrip(level, 1e-3, 2e-3)); });
  guarded({"roundtrip-tol1e-08"}, [&] { push(check_roundtrip(level, 1e-8, 1e-6)); });
  guarded({"trace-estimator", "frobenius-estimator"}, [&] {
    for (CheckResult& r : check_trace_oracle(level)) push(std::move(r));
  });
  guarded({"gradient-check"}, [&] { push(check_gradient(level)); });
  guarded({"permutation-equivariance"}, [&] { push(check_equivariance(level)); });
  guarded({"identity-at-init"}, [&] { push(check_identity_init(level)); });
  return out;
}

std::string format_check(const CheckResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-4s %-26s measured %.3e  threshold %.1e  %.1fs  %s",
                r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured, r.threshold, r.seconds,
                r.detail.c_str());
  return buf;
}

}  // namespace molflow
