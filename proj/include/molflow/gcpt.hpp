// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// Graph-conditional point transformer: the message-passing network whose
// output defines the flow dynamics dZ/dt.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "molflow/autodiff.hpp"
#include "molflow/molgraph.hpp"
#include "molflow/parameters.hpp"

namespace molflow {

struct GcptConfig {
  std::size_t blocks = 3;        // S
  std::size_t rounds = 2;        // R
  std::size_t hidden = 128;      // e
  std::size_t coord_width = 32;  // interior coordinate dimensionality
};

//! One member of a GraphBatch: a contiguous atom range.
struct BatchMember {
  std::string id;
  std::size_t atom_offset = 0;
  std::size_t atom_count = 0;
};

//! Disjoint union of molecular graphs with edges expanded to both directions.
//! Directed edge k carries a message from src[k] to tgt[k].
struct GraphBatch {
  std::vector<BatchMember> members;
  std::size_t atoms = 0;
  ad::Tensor node_features;  // atoms x a
  ad::Tensor edge_features;  // undirected edges x b
  ad::Index src;
  ad::Index tgt;
  ad::Index undirected;      // directed edge -> row of edge_features
  ad::Tensor inv_degree;     // atoms x 1, zero for isolated atoms
  ad::Index member_of;       // atom -> member

  std::size_t directed_edges() const { return src ? src->size() : 0; }
};

//! Batch of one molecule. The graph must already carry auxiliary edges if
//! they are wanted.
GraphBatch make_batch(const MolecularGraph& graph, const FeatureStats& stats);
GraphBatch make_batch(const EncodedGraph& encoded, const MolecularGraph& graph);
GraphBatch concat_batches(std::span<const GraphBatch> parts);
//! `copies` disjoint replicas of `one`.
GraphBatch replicate_batch(const GraphBatch& one, std::size_t copies);

// ---------------------------------------------------------------------------
// Parameters. Structs hold indices into a ParameterStore.

struct LinearParams {
  std::size_t weight = 0;  // in x out
  std::size_t bias = 0;    // 1 x out
};

//! Two linear layers with swish between.
struct MlpParams {
  LinearParams first;
  LinearParams second;
};

struct EmbeddingParams {
  LinearParams node;
  LinearParams edge;
};

struct LayerParams {
  LinearParams phi, psi, alpha;
  MlpParams delta, gamma, theta;
};

struct BlockParams {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::vector<LayerParams> layers;
  MlpParams omega;
};

//! (c_in, c_out) of every block: 3 -> w -> ... -> w -> 3.
std::vector<std::pair<std::size_t, std::size_t>> coordinate_ladder(const GcptConfig& config);

EmbeddingParams register_embedding(ad::ParameterStore& store, const std::string& prefix,
                                   std::size_t node_width, std::size_t edge_width,
                                   std::size_t hidden, std::mt19937_64& rng);

//! Final linear layers of gamma, theta and omega start at zero, so at
//! initialization each layer is the identity on (H_V, H_E) and the dynamics
//! vanish.
std::vector<BlockParams> register_dynamics(ad::ParameterStore& store, const std::string& prefix,
                                           const GcptConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Evaluation. `p` are the store's parameters bound onto the tape in use.

struct NetworkState {
  ad::Var nodes;  // atoms x e
  ad::Var edges;  // directed edges x e
};

ad::Var linear(const ad::Var& x, const LinearParams& lp, std::span<const ad::Var> p);
ad::Var mlp(const ad::Var& x, const MlpParams& mp, std::span<const ad::Var> p);

//! Node and edge embeddings; edge rows are expanded to both directions.
NetworkState embed(ad::Tape& tape, const GraphBatch& batch, const EmbeddingParams& ep,
                   std::span<const ad::Var> p);

NetworkState gcpt_layer(const GraphBatch& batch, const NetworkState& h, const ad::Var& z,
                        double t, const LayerParams& lp, std::span<const ad::Var> p);

//! Skip of z to c_out columns plus omega([z, h_i, mean edge state, t]).
ad::Var coordinate_update(const GraphBatch& batch, const NetworkState& h, const ad::Var& z,
                          double t, const BlockParams& bp, std::span<const ad::Var> p);

//! dZ/dt = z_final - Z. Throws DynamicsError on non-finite output.
ad::Var eval_dynamics(const GraphBatch& batch, const NetworkState& embedded, const ad::Var& z,
                      double t, std::span<const BlockParams> blocks, std::span<const ad::Var> p);

}  // namespace molflow
