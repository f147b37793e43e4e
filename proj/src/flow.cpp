// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "molflow/error.hpp"
#include "molflow/threads.hpp"

namespace molflow {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void FlowConfig::validate() const {
  if (layers == 0 || layers % 2 == 0) throw ConfigError("flow: layer count must be odd");
  if (gcpt.blocks == 0 || gcpt.rounds == 0 || gcpt.hidden == 0 || gcpt.coord_width == 0) {
    throw ConfigError("flow: blocks, rounds, hidden and coord_width must be >= 1");
  }
  if (!(t1 != t0) || !std::isfinite(t0) || !std::isfinite(t1)) {
    throw ConfigError("flow: integration interval must be non-empty");
  }
  solver.validate();
}

json FlowConfig::to_json() const {
  return {{"layers", layers},
          {"blocks", gcpt.blocks},
          {"rounds", gcpt.rounds},
          {"hidden", gcpt.hidden},
          {"coord_width", gcpt.coord_width},
          {"rtol", solver.rtol},
          {"atol", solver.atol},
          {"max_steps", solver.max_steps},
          {"fixed_step", solver.fixed_step},
          {"fixed_steps", solver.fixed_steps},
          {"trace", trace == TraceMode::Exact ? "exact" : "hutchinson"},
          {"t0", t0},
          {"t1", t1}};
}

FlowConfig FlowConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("flow config: expected object");
  static const std::set<std::string> known = {"layers", "blocks",     "rounds",      "hidden",
                                              "coord_width", "rtol",  "atol",        "max_steps",
                                              "fixed_step",  "fixed_steps", "trace", "t0", "t1"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.count(it.key()) == 0) throw ConfigError("flow config: unknown key '" + it.key() + "'");
  }
  FlowConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.gcpt.blocks = j.value("blocks", c.gcpt.blocks);
    c.gcpt.rounds = j.value("rounds", c.gcpt.rounds);
    c.gcpt.hidden = j.value("hidden", c.gcpt.hidden);
    c.gcpt.coord_width = j.value("coord_width", c.gcpt.coord_width);
    c.solver.rtol = j.value("rtol", c.solver.rtol);
    c.solver.atol = j.value("atol", c.solver.atol);
    c.solver.max_steps = j.value("max_steps", c.solver.max_steps);
    c.solver.fixed_step = j.value("fixed_step", c.solver.fixed_step);
    c.solver.fixed_steps = j.value("fixed_steps", c.solver.fixed_steps);
    const std::string trace = j.value("trace", std::string("hutchinson"));
    if (trace == "hutchinson") {
      c.trace = TraceMode::Hutchinson;
    } else if (trace == "exact") {
      c.trace = TraceMode::Exact;
    } else {
      throw ConfigError("flow config: trace must be 'hutchinson' or 'exact'");
    }
    c.t0 = j.value("t0", c.t0);
    c.t1 = j.value("t1", c.t1);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("flow config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// State arithmetic

using TState = Augmented<Tensor>;
using VState = Augmented<Var>;

TState StateOps<TState>::combine(const TState& y, double h, std::span<const double> c,
                                 std::span<const TState* const> k) {
  std::vector<const Tensor*> part(k.size());
  auto one = [&](const Tensor& base, Tensor TState::*member) {
    for (std::size_t i = 0; i < k.size(); ++i) part[i] = &(k[i]->*member);
    return StateOps<Tensor>::combine(base, h, c, part);
  };
  return {one(y.z, &TState::z), one(y.dlogp, &TState::dlogp), one(y.ke, &TState::ke),
          one(y.jf, &TState::jf)};
}

void StateOps<TState>::values(const TState& s, std::vector<double>& out) {
  out.clear();
  for (const Tensor* t : {&s.z, &s.dlogp, &s.ke, &s.jf}) {
    out.insert(out.end(), t->data().begin(), t->data().end());
  }
}

VState StateOps<VState>::combine(const VState& y, double h, std::span<const double> c,
                                 std::span<const VState* const> k) {
  auto one = [&](const Var& base, Var VState::*member) {
    Var out = base;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c[i] == 0.0) continue;
      out = out + ad::scale(k[i]->*member, h * c[i]);
    }
    return out;
  };
  return {one(y.z, &VState::z), one(y.dlogp, &VState::dlogp), one(y.ke, &VState::ke),
          one(y.jf, &VState::jf)};
}

void StateOps<VState>::values(const VState& s, std::vector<double>& out) {
  out.clear();
  for (const Var* v : {&s.z, &s.dlogp, &s.ke, &s.jf}) {
    out.insert(out.end(), v->value().data().begin(), v->value().data().end());
  }
}

// ---------------------------------------------------------------------------
// Helpers

Var member_sum(const GraphBatch& batch, const Var& x) {
  ad::Tape& tape = x.tape();
  const Var rows = ad::matmul(x, tape.constant(Tensor(x.cols(), 1, 1.0)));
  return ad::segment_sum(rows, batch.member_of, batch.members.size());
}

Tensor standard_normal_logp(const GraphBatch& batch, const Tensor& z) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out(batch.members.size(), 1);
  for (std::size_t a = 0; a < batch.atoms; ++a) {
    double s = 0.0;
    for (std::size_t d = 0; d < 3; ++d) s += -0.5 * z(a, d) * z(a, d) - half_log_2pi;
    out[(*batch.member_of)[a]] += s;
  }
  return out;
}

namespace {

std::string member_ids(const GraphBatch& batch) {
  std::string ids;
  for (const BatchMember& m : batch.members) ids += (ids.empty() ? "" : ",") + m.id;
  return ids;
}

Tensor member_counts(const GraphBatch& batch) {
  Tensor c(batch.members.size(), 1);
  for (std::size_t k = 0; k < batch.members.size(); ++k) {
    c[k] = static_cast<double>(batch.members[k].atom_count);
  }
  return c;
}

//! Rates of the augmented state for one CNF on `z`'s tape.
VState cnf_rates(const ConfFlowModel& model, std::size_t cnf, const GraphBatch& batch,
                 const NetworkState& emb, std::span<const Var> p, const Var& z, double t,
                 const Tensor& probe, bool track, bool create_graph) {
  ad::Tape& tape = z.tape();
  const std::size_t k = batch.members.size();
  const Var f = eval_dynamics(batch, emb, z, t, model.cnfs()[cnf].blocks, p);
  if (!track) {
    const Var zero = tape.constant(Tensor(k, 1));
    return {f, zero, zero, zero};
  }
  const Var ke = member_sum(batch, ad::square(f));
  Var trace, frob;
  if (model.config().trace == TraceMode::Hutchinson) {
    if (probe.rows() != batch.atoms || probe.cols() != 3) {
      throw ShapeError("cnf: probe shape " + probe.shape_string() + " does not match batch");
    }
    const Var eps = tape.constant(probe);
    const Var v = ad::vjp(f, eps, z, create_graph);
    trace = member_sum(batch, v * eps);
    frob = member_sum(batch, ad::square(v));
  } else {
    std::size_t max_atoms = 0;
    for (const BatchMember& m : batch.members) max_atoms = std::max(max_atoms, m.atom_count);
    for (std::size_t b = 0; b < 3 * max_atoms; ++b) {
      Tensor basis(batch.atoms, 3);
      for (const BatchMember& m : batch.members) {
        if (b / 3 < m.atom_count) basis(m.atom_offset + b / 3, b % 3) = 1.0;
      }
      const Var e = tape.constant(std::move(basis));
      const Var v = ad::vjp(f, e, z, create_graph);
      const Var tr = member_sum(batch, v * e);
      const Var fr = member_sum(batch, ad::square(v));
      trace = trace.valid() ? trace + tr : tr;
      frob = frob.valid() ? frob + fr : fr;
    }
    if (!trace.valid()) {
      trace = tape.constant(Tensor(k, 1));
      frob = trace;
    }
  }
  return {f, ad::scale(trace, -1.0), ke, frob};
}

[[noreturn]] void rethrow_with_ids(const IntegrationError& e, const GraphBatch& batch) {
  if (!e.molecule_id().empty()) throw e;
  std::string what = e.what();
  const auto colon = what.find(": ");
  throw IntegrationError(member_ids(batch), e.t_reached(),
                         colon == std::string::npos ? what : what.substr(colon + 2));
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

ConfFlowModel::ConfFlowModel(const FlowConfig& config, const FeatureStats& stats,
                             std::uint64_t seed)
    : config_(config), stats_(stats) {
  config_.validate();
  std::mt19937_64 rng(seed);
  embedding_ = register_embedding(params_, "embed", node_feature_width(), edge_feature_width(),
                                  config_.gcpt.hidden, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    if (l % 2 == 0) {
      const std::string n = "actnorm" + std::to_string(l / 2);
      ActNormSlot a;
      a.log_scale = params_.add(n + ".log_scale", Tensor(1, 3));
      a.shift = params_.add(n + ".shift", Tensor(1, 3));
      actnorms_.push_back(a);
    } else {
      CnfSlot c;
      c.blocks = register_dynamics(params_, "cnf" + std::to_string(l / 2), config_.gcpt, rng);
      cnfs_.push_back(std::move(c));
    }
  }
}

bool ConfFlowModel::actnorm_initialized() const {
  return std::all_of(actnorms_.begin(), actnorms_.end(),
                     [](const ActNormSlot& a) { return a.initialized; });
}

GraphBatch ConfFlowModel::prepare(const MolecularGraph& graph) const {
  return make_batch(augment_edges(graph), stats_);
}

Probes ConfFlowModel::draw_probes(std::size_t atoms, std::mt19937_64& rng) const {
  Probes out;
  for (std::size_t c = 0; c < cnfs_.size(); ++c) {
    Tensor eps(atoms, 3);
    for (double& v : eps.data()) v = (rng() >> 63) != 0 ? 1.0 : -1.0;
    out.push_back(std::move(eps));
  }
  return out;
}

FlowResult ConfFlowModel::apply_layer(std::size_t layer, bool inverse, const GraphBatch& batch,
                                      const Tensor& z, const Tensor& probe,
                                      bool track_density) const {
  if (layer >= config_.layers) throw ConfigError("apply_layer: layer out of range");
  if (z.rows() != batch.atoms || z.cols() != 3) {
    throw ShapeError("flow: coordinates " + z.shape_string() + " do not match batch of " +
                     std::to_string(batch.atoms) + " atoms");
  }
  const std::size_t k = batch.members.size();
  FlowResult r;
  r.ke = Tensor(k, 1);
  r.jf = Tensor(k, 1);
  if (layer % 2 == 0) {
    const ActNormSlot& a = actnorms_[layer / 2];
    const Tensor& ls = params_.value(a.log_scale);
    const Tensor& sh = params_.value(a.shift);
    double total = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
      if (std::exp(ls[d]) < 1e-8) throw DynamicsError("actnorm: degenerate scale");
      total += ls[d];
    }
    r.z = Tensor(z.rows(), 3);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t d = 0; d < 3; ++d) {
        r.z(i, d) = inverse ? (z(i, d) - sh[d]) * std::exp(-ls[d]) : z(i, d) * std::exp(ls[d]) + sh[d];
      }
    }
    r.logdet = member_counts(batch);
    for (double& v : r.logdet.data()) v *= inverse ? -total : total;
    return r;
  }

  const std::size_t cnf = layer / 2;
  auto rate = [&](double t, const TState& y) {
    ad::Tape tape;
    const std::vector<Var> p = params_.bind(tape, false);
    const NetworkState emb = embed(tape, batch, embedding_, p);
    const Var zv = tape.leaf(y.z, true);
    const VState r = cnf_rates(*this, cnf, batch, emb, p, zv, t, probe, track_density, false);
    return TState{r.z.value(), r.dlogp.value(), r.ke.value(), r.jf.value()};
  };
  TState y0{z, Tensor(k, 1), Tensor(k, 1), Tensor(k, 1)};
  TState y1;
  try {
    y1 = inverse ? integrate(rate, y0, config_.t1, config_.t0, config_.solver, &r.stats)
                 : integrate(rate, y0, config_.t0, config_.t1, config_.solver, &r.stats);
  } catch (const IntegrationError& e) {
    rethrow_with_ids(e, batch);
  }
  r.z = std::move(y1.z);
  r.logdet = std::move(y1.dlogp);
  for (double& v : r.logdet.data()) v = -v;
  r.ke = std::move(y1.ke);
  r.jf = std::move(y1.jf);
  if (inverse) {
    for (double& v : r.ke.data()) v = -v;
    for (double& v : r.jf.data()) v = -v;
  }
  return r;
}

namespace {

void accumulate(FlowResult& total, FlowResult&& layer) {
  total.z = std::move(layer.z);
  auto add_into = [](Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  add_into(total.logdet, layer.logdet);
  add_into(total.ke, layer.ke);
  add_into(total.jf, layer.jf);
  total.stats.accepted += layer.stats.accepted;
  total.stats.rejected += layer.stats.rejected;
  total.stats.evaluations += layer.stats.evaluations;
}

FlowResult empty_result(const GraphBatch& batch, const Tensor& z) {
  const std::size_t k = batch.members.size();
  FlowResult r;
  r.z = z;
  r.logdet = Tensor(k, 1);
  r.ke = Tensor(k, 1);
  r.jf = Tensor(k, 1);
  return r;
}

const Tensor kNoProbe;

const Tensor& probe_for(const Probes& probes, std::size_t cnf, bool needed) {
  if (!needed) return kNoProbe;
  if (cnf >= probes.size()) throw ConfigError("flow: missing Hutchinson probe for CNF block");
  return probes[cnf];
}

}  // namespace

FlowResult ConfFlowModel::forward(const GraphBatch& batch, const Tensor& z, const Probes& probes,
                                  bool track_density) const {
  const bool need = track_density && config_.trace == TraceMode::Hutchinson;
  FlowResult total = empty_result(batch, z);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const Tensor& probe = l % 2 == 1 ? probe_for(probes, l / 2, need) : kNoProbe;
    accumulate(total, apply_layer(l, false, batch, total.z, probe, track_density));
  }
  return total;
}

FlowResult ConfFlowModel::inverse(const GraphBatch& batch, const Tensor& x,
                                  const Probes& probes) const {
  const bool need = config_.trace == TraceMode::Hutchinson;
  FlowResult total = empty_result(batch, x);
  for (std::size_t l = config_.layers; l-- > 0;) {
    const Tensor& probe = l % 2 == 1 ? probe_for(probes, l / 2, need) : kNoProbe;
    accumulate(total, apply_layer(l, true, batch, total.z, probe, true));
  }
  return total;
}

void ConfFlowModel::initialize_actnorm(const GraphBatch& batch, const Tensor& x) {
  if (actnorm_initialized()) return;
  if (x.rows() < 2) throw ConfigError("actnorm: initialization needs at least 2 atoms");
  Tensor z = x;
  const Tensor none;
  for (std::size_t l = config_.layers; l-- > 0;) {
    if (l % 2 == 0) {
      ActNormSlot& a = actnorms_[l / 2];
      if (!a.initialized) {
        Tensor& ls = params_.value(a.log_scale);
        Tensor& sh = params_.value(a.shift);
        for (std::size_t d = 0; d < 3; ++d) {
          double mean = 0.0;
          for (std::size_t i = 0; i < z.rows(); ++i) mean += z(i, d);
          mean /= static_cast<double>(z.rows());
          double var = 0.0;
          for (std::size_t i = 0; i < z.rows(); ++i) var += (z(i, d) - mean) * (z(i, d) - mean);
          var /= static_cast<double>(z.rows());
          sh[d] = mean;
          ls[d] = std::log(std::max(std::sqrt(var), 1e-6));
        }
        a.initialized = true;
      }
    }
    z = apply_layer(l, true, batch, z, none, false).z;
  }
}

std::vector<double> ConfFlowModel::nll_per_dim(const GraphBatch& batch, const Tensor& x,
                                               const Probes& probes) const {
  const FlowResult r = inverse(batch, x, probes);
  const Tensor logp = standard_normal_logp(batch, r.z);
  std::vector<double> out(batch.members.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = -(logp[k] + r.logdet[k]) / (3.0 * static_cast<double>(batch.members[k].atom_count));
  }
  return out;
}

Tensor ConfFlowModel::dynamics(std::size_t cnf, const GraphBatch& batch, const Tensor& z,
                               double t) const {
  ad::Tape tape;
  const std::vector<Var> p = params_.bind(tape, false);
  const NetworkState emb = embed(tape, batch, embedding_, p);
  return eval_dynamics(batch, emb, tape.leaf(z), t, cnfs_.at(cnf).blocks, p).value();
}

FlowVars ConfFlowModel::inverse_graph(ad::Tape& tape, std::span<const Var> p,
                                      const GraphBatch& batch, const Var& x,
                                      const Probes& probes) const {
  const std::size_t k = batch.members.size();
  const Tensor counts = member_counts(batch);
  const NetworkState emb = embed(tape, batch, embedding_, p);
  const bool need = config_.trace == TraceMode::Hutchinson;
  FlowVars out;
  out.z = x;
  Var logdet, ke, jf;
  auto accumulate_var = [](Var& acc, const Var& v) { acc = acc.valid() ? acc + v : v; };
  for (std::size_t l = config_.layers; l-- > 0;) {
    if (l % 2 == 0) {
      const ActNormSlot& a = actnorms_[l / 2];
      const Var ls = p[a.log_scale];
      const Var inv_scale = ad::expand_rows(ad::exp(ad::scale(ls, -1.0)), batch.atoms);
      out.z = (out.z - ad::expand_rows(p[a.shift], batch.atoms)) * inv_scale;
      accumulate_var(logdet, ad::scale(ad::matmul(tape.constant(counts), ad::sum(ls)), -1.0));
      continue;
    }
    const std::size_t cnf = l / 2;
    const Tensor& probe = probe_for(probes, cnf, need);
    auto rate = [&](double t, const VState& y) {
      const Var z = y.z.requires_grad() ? y.z : tape.leaf(y.z.value(), true);
      return cnf_rates(*this, cnf, batch, emb, p, z, t, probe, true, true);
    };
    const Var zero = tape.constant(Tensor(k, 1));
    VState y1;
    try {
      y1 = integrate(rate, VState{out.z, zero, zero, zero}, config_.t1, config_.t0,
                     config_.solver);
    } catch (const IntegrationError& e) {
      rethrow_with_ids(e, batch);
    }
    out.z = y1.z;
    accumulate_var(logdet, ad::scale(y1.dlogp, -1.0));
    accumulate_var(ke, ad::scale(y1.ke, -1.0));
    accumulate_var(jf, ad::scale(y1.jf, -1.0));
  }
  const Var zero = tape.constant(Tensor(k, 1));
  out.logdet = logdet.valid() ? logdet : zero;
  out.ke = ke.valid() ? ke : zero;
  out.jf = jf.valid() ? jf : zero;
  return out;
}

json ConfFlowModel::to_json() const {
  json flags = json::array();
  for (const ActNormSlot& a : actnorms_) flags.push_back(a.initialized);
  return {{"config", config_.to_json()},
          {"feature_stats", stats_.to_json()},
          {"actnorm_initialized", std::move(flags)},
          {"parameters", params_.to_json()}};
}

ConfFlowModel ConfFlowModel::from_json(const json& j) {
  try {
    ConfFlowModel m(FlowConfig::from_json(j.at("config")),
                    FeatureStats::from_json(j.at("feature_stats")), 0);
    m.params_.load_json(j.at("parameters"));
    const auto flags = j.at("actnorm_initialized").get<std::vector<bool>>();
    if (flags.size() != m.actnorms_.size()) throw ConfigError("checkpoint: actnorm count mismatch");
    for (std::size_t i = 0; i < flags.size(); ++i) m.actnorms_[i].initialized = flags[i];
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sampling

ProbeEstimate probe_estimate(const ConfFlowModel& model, std::size_t cnf, const GraphBatch& batch,
                             const Tensor& z, double t, const Tensor& probe) {
  if (probe.rows() != batch.atoms || probe.cols() != 3) {
    throw ShapeError("probe_estimate: probe shape " + probe.shape_string());
  }
  ad::Tape tape;
  const std::vector<Var> p = model.parameters().bind(tape, false);
  const NetworkState emb = embed(tape, batch, model.embedding(), p);
  const Var zv = tape.leaf(z, true);
  const Var f = eval_dynamics(batch, emb, zv, t, model.cnfs().at(cnf).blocks, p);
  const Var eps = tape.constant(probe);
  const Var v = ad::vjp(f, eps, zv, false);
  return {member_sum(batch, v * eps).value(), member_sum(batch, ad::square(v)).value()};
}

Tensor dynamics_jacobian(const ConfFlowModel& model, std::size_t cnf, const GraphBatch& batch,
                         const Tensor& z, double t) {
  ad::Tape tape;
  const std::vector<Var> p = model.parameters().bind(tape, false);
  const NetworkState emb = embed(tape, batch, model.embedding(), p);
  const Var zv = tape.leaf(z, true);
  const Var f = eval_dynamics(batch, emb, zv, t, model.cnfs().at(cnf).blocks, p);
  const std::size_t n = 3 * batch.atoms;
  Tensor jac(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    Tensor e(batch.atoms, 3);
    e(r / 3, r % 3) = 1.0;
    const Tensor row = ad::vjp(f, e, zv);
    for (std::size_t c = 0; c < n; ++c) jac(r, c) = row(c / 3, c % 3);
  }
  return jac;
}

SampleOutcome sample(const ConfFlowModel& model, const MolecularGraph& graph, std::size_t n,
                     std::uint64_t seed, std::size_t threads) {
  SampleOutcome out;
  if (n == 0) return out;
  const GraphBatch batch = model.prepare(graph);
  const std::size_t m = graph.atom_count();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor> latents;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor z(m, 3);
    for (double& v : z.data()) v = normal(rng);
    latents.push_back(std::move(z));
  }
  std::vector<std::optional<Tensor>> results(n);
  std::vector<std::string> errors(n);
  parallel_for(n, threads, [&](std::size_t i) {
    try {
      results[i] = model.forward(batch, latents[i], {}, false).z;
    } catch (const IntegrationError& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i]) {
      out.conformers.push_back(make_conformation(graph, std::move(*results[i])));
    } else {
      out.failures.push_back("draw " + std::to_string(i) + ": " + errors[i]);
    }
  }
  return out;
}

}  // namespace molflow
