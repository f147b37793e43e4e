// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// The flow stack: activation-normalization layers interleaved with
// continuous normalizing flow blocks whose dynamics come from the GCPT.
//
// Direction convention: "forward" maps latent -> data (sampling), "inverse"
// maps data -> latent (likelihood). Everything operates on a GraphBatch so a
// batch of molecules, or n replicas of one molecule, integrate together;
// per-member quantities are K x 1 columns.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "molflow/autodiff.hpp"
#include "molflow/gcpt.hpp"
#include "molflow/molgraph.hpp"
#include "molflow/ode.hpp"
#include "molflow/parameters.hpp"

namespace molflow {

enum class TraceMode { Hutchinson, Exact };

struct FlowConfig {
  std::size_t layers = 5;  // L, odd: ActNorm, CNF, ActNorm, ..., ActNorm
  GcptConfig gcpt;
  SolverConfig solver;
  TraceMode trace = TraceMode::Hutchinson;
  double t0 = 0.0;
  double t1 = 1.0;

  std::size_t cnf_count() const { return layers / 2; }
  void validate() const;
  nlohmann::json to_json() const;
  static FlowConfig from_json(const nlohmann::json& j);
};

//! Augmented ODE state: coordinates plus per-member accumulators.
template <class T>
struct Augmented {
  T z;      // atoms x 3
  T dlogp;  // K x 1, integral of -trace
  T ke;     // K x 1, integral of |f|^2
  T jf;     // K x 1, integral of |eps^T J|^2
};

template <>
struct StateOps<Augmented<ad::Tensor>> {
  using S = Augmented<ad::Tensor>;
  static S combine(const S& y, double h, std::span<const double> c, std::span<const S* const> k);
  static void values(const S& s, std::vector<double>& out);
};

template <>
struct StateOps<Augmented<ad::Var>> {
  using S = Augmented<ad::Var>;
  static S combine(const S& y, double h, std::span<const double> c, std::span<const S* const> k);
  static void values(const S& s, std::vector<double>& out);
};

//! Result of pushing a batch through one layer or the whole stack.
struct FlowResult {
  ad::Tensor z;
  ad::Tensor logdet;  // K x 1, log|det| of the map actually applied
  ad::Tensor ke;      // K x 1
  ad::Tensor jf;      // K x 1
  SolveStats stats;
};

struct FlowVars {
  ad::Var z;
  ad::Var logdet;
  ad::Var ke;
  ad::Var jf;
};

//! Per-CNF probe matrices (atoms x 3 each). Empty means "draw from rng".
using Probes = std::vector<ad::Tensor>;

struct ActNormSlot {
  std::size_t log_scale = 0;  // 1 x 3
  std::size_t shift = 0;      // 1 x 3
  bool initialized = false;
};

struct CnfSlot {
  std::vector<BlockParams> blocks;
};

class ConfFlowModel {
 public:
  ConfFlowModel(const FlowConfig& config, const FeatureStats& stats, std::uint64_t seed);

  const FlowConfig& config() const noexcept { return config_; }
  FlowConfig& mutable_config() noexcept { return config_; }
  const FeatureStats& feature_stats() const noexcept { return stats_; }
  ad::ParameterStore& parameters() noexcept { return params_; }
  const ad::ParameterStore& parameters() const noexcept { return params_; }
  const EmbeddingParams& embedding() const noexcept { return embedding_; }
  const std::vector<CnfSlot>& cnfs() const noexcept { return cnfs_; }
  std::vector<ActNormSlot>& actnorms() noexcept { return actnorms_; }
  const std::vector<ActNormSlot>& actnorms() const noexcept { return actnorms_; }
  bool actnorm_initialized() const;

  //! Batch for a graph that has not been augmented yet.
  GraphBatch prepare(const MolecularGraph& graph) const;

  //! Draws one Rademacher probe per CNF block.
  Probes draw_probes(std::size_t atoms, std::mt19937_64& rng) const;

  //! Latent -> data. With track_density off, only coordinates are integrated.
  FlowResult forward(const GraphBatch& batch, const ad::Tensor& z, const Probes& probes,
                     bool track_density = true) const;
  //! Data -> latent.
  FlowResult inverse(const GraphBatch& batch, const ad::Tensor& x, const Probes& probes) const;

  //! Data -> latent on a tape, differentiable w.r.t. the bound parameters `p`.
  FlowVars inverse_graph(ad::Tape& tape, std::span<const ad::Var> p, const GraphBatch& batch,
                         const ad::Var& x, const Probes& probes) const;

  //! Sets shift/scale of every uninitialized ActNorm from the inverse pass of
  //! `x` so its output has zero mean and unit std per axis. Runs once.
  void initialize_actnorm(const GraphBatch& batch, const ad::Tensor& x);

  //! Per-member nll in nats per coordinate of data `x`.
  std::vector<double> nll_per_dim(const GraphBatch& batch, const ad::Tensor& x,
                                  const Probes& probes) const;

  //! Single layer access for tests: layer index in [0, L).
  FlowResult apply_layer(std::size_t layer, bool inverse, const GraphBatch& batch,
                         const ad::Tensor& z, const ad::Tensor& probe,
                         bool track_density = true) const;

  //! Dynamics of CNF `cnf` evaluated on plain tensors (no density terms).
  ad::Tensor dynamics(std::size_t cnf, const GraphBatch& batch, const ad::Tensor& z,
                      double t) const;

  nlohmann::json to_json() const;
  static ConfFlowModel from_json(const nlohmann::json& j);

 private:
  FlowConfig config_;
  FeatureStats stats_;
  ad::ParameterStore params_;
  EmbeddingParams embedding_;
  std::vector<ActNormSlot> actnorms_;
  std::vector<CnfSlot> cnfs_;
};

//! Standard-normal log density summed per member (K x 1).
ad::Tensor standard_normal_logp(const GraphBatch& batch, const ad::Tensor& z);

//! Per-member sum over atoms of row sums of `x` (atoms x C) -> K x 1.
ad::Var member_sum(const GraphBatch& batch, const ad::Var& x);

//! Per-member eps^T J eps and |eps^T J|^2 of CNF `cnf` at (z, t), J = df/dz.
struct ProbeEstimate {
  ad::Tensor trace;  // K x 1
  ad::Tensor frob;   // K x 1
};
ProbeEstimate probe_estimate(const ConfFlowModel& model, std::size_t cnf, const GraphBatch& batch,
                             const ad::Tensor& z, double t, const ad::Tensor& probe);

//! Dense (3A x 3A) Jacobian of CNF `cnf`'s dynamics, row-major coordinate order.
ad::Tensor dynamics_jacobian(const ConfFlowModel& model, std::size_t cnf, const GraphBatch& batch,
                             const ad::Tensor& z, double t);

struct SampleOutcome {
  std::vector<Conformation> conformers;
  std::vector<std::string> failures;  // one message per failed draw
};

//! n i.i.d. draws for one molecule. Latents come from `seed` in draw order;
//! each draw is integrated on its own, so one failure leaves the others.
SampleOutcome sample(const ConfFlowModel& model, const MolecularGraph& graph, std::size_t n,
                     std::uint64_t seed, std::size_t threads = 1);

}  // namespace molflow
