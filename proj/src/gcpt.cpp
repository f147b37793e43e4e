// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/gcpt.hpp"

#include <cmath>

#include "molflow/error.hpp"

namespace molflow {

using ad::Index;
using ad::Tensor;
using ad::Var;

GraphBatch make_batch(const EncodedGraph& encoded, const MolecularGraph& graph) {
  const std::size_t m = graph.atom_count();
  if (encoded.node_features.rows() != m || encoded.edge_features.rows() != graph.edges.size()) {
    throw ShapeError("make_batch: encoded features do not match graph '" + graph.id + "'");
  }
  GraphBatch b;
  b.members.push_back({graph.id, 0, m});
  b.atoms = m;
  b.node_features = encoded.node_features;
  b.edge_features = encoded.edge_features;
  std::vector<std::size_t> src, tgt, und;
  std::vector<double> degree(m, 0.0);
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const Edge& e = graph.edges[k];
    src.insert(src.end(), {e.j, e.i});
    tgt.insert(tgt.end(), {e.i, e.j});
    und.insert(und.end(), {k, k});
    degree[e.i] += 1.0;
    degree[e.j] += 1.0;
  }
  b.inv_degree = Tensor(m, 1);
  for (std::size_t a = 0; a < m; ++a) b.inv_degree[a] = degree[a] > 0 ? 1.0 / degree[a] : 0.0;
  b.src = ad::make_index(std::move(src));
  b.tgt = ad::make_index(std::move(tgt));
  b.undirected = ad::make_index(std::move(und));
  b.member_of = ad::zeros_index(m);
  return b;
}

GraphBatch make_batch(const MolecularGraph& graph, const FeatureStats& stats) {
  return make_batch(encode_features(graph, stats), graph);
}

GraphBatch concat_batches(std::span<const GraphBatch> parts) {
  GraphBatch out;
  std::size_t node_width = 0, edge_width = 0, edges = 0;
  for (const GraphBatch& p : parts) {
    out.atoms += p.atoms;
    edges += p.edge_features.rows();
    node_width = p.node_features.cols();
    edge_width = p.edge_features.cols();
  }
  out.node_features = Tensor(out.atoms, node_width);
  out.edge_features = Tensor(edges, edge_width);
  out.inv_degree = Tensor(out.atoms, 1);
  std::vector<std::size_t> src, tgt, und, member;
  std::size_t atom_base = 0, edge_base = 0;
  for (const GraphBatch& p : parts) {
    if (p.node_features.cols() != node_width || p.edge_features.cols() != edge_width) {
      throw ShapeError("concat_batches: feature widths differ");
    }
    std::copy(p.node_features.data().begin(), p.node_features.data().end(),
              out.node_features.data().begin() + atom_base * node_width);
    std::copy(p.edge_features.data().begin(), p.edge_features.data().end(),
              out.edge_features.data().begin() + edge_base * edge_width);
    std::copy(p.inv_degree.data().begin(), p.inv_degree.data().end(),
              out.inv_degree.data().begin() + atom_base);
    for (std::size_t k = 0; k < p.directed_edges(); ++k) {
      src.push_back((*p.src)[k] + atom_base);
      tgt.push_back((*p.tgt)[k] + atom_base);
      und.push_back((*p.undirected)[k] + edge_base);
    }
    for (std::size_t a = 0; a < p.atoms; ++a) member.push_back((*p.member_of)[a] + out.members.size());
    for (BatchMember m : p.members) {
      m.atom_offset += atom_base;
      out.members.push_back(std::move(m));
    }
    atom_base += p.atoms;
    edge_base += p.edge_features.rows();
  }
  out.src = ad::make_index(std::move(src));
  out.tgt = ad::make_index(std::move(tgt));
  out.undirected = ad::make_index(std::move(und));
  out.member_of = ad::make_index(std::move(member));
  return out;
}

GraphBatch replicate_batch(const GraphBatch& one, std::size_t copies) {
  std::vector<GraphBatch> parts(copies, one);
  return concat_batches(parts);
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> coordinate_ladder(const GcptConfig& config) {
  if (config.blocks == 0) throw ConfigError("gcpt: need at least one block");
  std::vector<std::pair<std::size_t, std::size_t>> ladder;
  std::size_t c = 3;
  for (std::size_t s = 0; s < config.blocks; ++s) {
    const std::size_t next = s + 1 == config.blocks ? 3 : config.coord_width;
    ladder.emplace_back(c, next);
    c = next;
  }
  return ladder;
}

namespace {

LinearParams register_linear(ad::ParameterStore& store, const std::string& name, std::size_t in,
                             std::size_t out, std::mt19937_64& rng, bool zero = false) {
  Tensor w(in, out);
  if (!zero) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : w.data()) v = u(rng);
  }
  LinearParams lp;
  lp.weight = store.add(name + ".w", std::move(w));
  lp.bias = store.add(name + ".b", Tensor(1, out));
  return lp;
}

MlpParams register_mlp(ad::ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t hidden, std::size_t out, std::mt19937_64& rng,
                       bool zero_final) {
  MlpParams mp;
  mp.first = register_linear(store, name + ".0", in, hidden, rng);
  mp.second = register_linear(store, name + ".1", hidden, out, rng, zero_final);
  return mp;
}

Var time_column(ad::Tape& tape, std::size_t rows, double t) {
  return tape.constant(Tensor(rows, 1, t));
}

}  // namespace

EmbeddingParams register_embedding(ad::ParameterStore& store, const std::string& prefix,
                                   std::size_t node_width, std::size_t edge_width,
                                   std::size_t hidden, std::mt19937_64& rng) {
  EmbeddingParams ep;
  ep.node = register_linear(store, prefix + ".node", node_width, hidden, rng);
  ep.edge = register_linear(store, prefix + ".edge", edge_width, hidden, rng);
  return ep;
}

std::vector<BlockParams> register_dynamics(ad::ParameterStore& store, const std::string& prefix,
                                           const GcptConfig& config, std::mt19937_64& rng) {
  if (config.rounds == 0) throw ConfigError("gcpt: need at least one message-passing round");
  if (config.hidden == 0 || config.coord_width == 0) throw ConfigError("gcpt: zero width");
  const std::size_t e = config.hidden;
  std::vector<BlockParams> blocks;
  const auto ladder = coordinate_ladder(config);
  for (std::size_t s = 0; s < ladder.size(); ++s) {
    BlockParams bp;
    std::tie(bp.c_in, bp.c_out) = ladder[s];
    const std::string bname = prefix + ".block" + std::to_string(s);
    for (std::size_t r = 0; r < config.rounds; ++r) {
      const std::string n = bname + ".layer" + std::to_string(r);
      LayerParams lp;
      lp.phi = register_linear(store, n + ".phi", e + 1, e, rng);
      lp.psi = register_linear(store, n + ".psi", e + 1, e, rng);
      lp.alpha = register_linear(store, n + ".alpha", e + 1, e, rng);
      lp.delta = register_mlp(store, n + ".delta", bp.c_in + 1, e, e, rng, false);
      lp.gamma = register_mlp(store, n + ".gamma", 2 * e + 1, e, e, rng, true);
      lp.theta = register_mlp(store, n + ".theta", 2 * e + 1, e, e, rng, true);
      bp.layers.push_back(lp);
    }
    bp.omega = register_mlp(store, bname + ".omega", bp.c_in + 2 * e + 1, e, bp.c_out, rng, true);
    blocks.push_back(std::move(bp));
  }
  return blocks;
}

// ---------------------------------------------------------------------------

Var linear(const Var& x, const LinearParams& lp, std::span<const Var> p) {
  const Var& w = p[lp.weight];
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: input " + x.value().shape_string() + " vs weight " +
                     w.value().shape_string());
  }
  return ad::matmul(x, w) + ad::expand_rows(p[lp.bias], x.rows());
}

Var mlp(const Var& x, const MlpParams& mp, std::span<const Var> p) {
  return linear(ad::swish(linear(x, mp.first, p)), mp.second, p);
}

NetworkState embed(ad::Tape& tape, const GraphBatch& batch, const EmbeddingParams& ep,
                   std::span<const Var> p) {
  const Var nodes = tape.reference(batch.node_features);
  const Var edges = tape.reference(batch.edge_features);
  NetworkState h;
  h.nodes = linear(nodes, ep.node, p);
  h.edges = ad::gather(linear(edges, ep.edge, p), batch.undirected);
  return h;
}

NetworkState gcpt_layer(const GraphBatch& batch, const NetworkState& h, const Var& z, double t,
                        const LayerParams& lp, std::span<const Var> p) {
  ad::Tape& tape = z.tape();
  const std::size_t m = batch.atoms;
  const Var tn = time_column(tape, m, t);
  const Var te = time_column(tape, batch.directed_edges(), t);

  const Var d = ad::gather(z, batch.tgt) - ad::gather(z, batch.src);
  const Var delta = mlp(ad::concat({d, te}), lp.delta, p);

  const Var ht = ad::concat({h.nodes, tn});
  const Var hi = ad::gather(linear(ht, lp.psi, p), batch.tgt);
  const Var hj = ad::gather(linear(ht, lp.phi, p), batch.src);
  const Var hhat = mlp(ad::concat({hi - hj + h.edges, delta, te}), lp.gamma, p);

  const Var rho = ad::segment_softmax(hhat, batch.tgt, m);
  const Var values = ad::gather(linear(ht, lp.alpha, p), batch.src) + delta;
  const Var msg = ad::segment_sum(rho * values, batch.tgt, m);

  NetworkState out;
  out.nodes = h.nodes + mlp(ad::concat({h.nodes, msg, tn}), lp.theta, p);
  out.edges = h.edges + hhat;
  return out;
}

Var coordinate_update(const GraphBatch& batch, const NetworkState& h, const Var& z, double t,
                      const BlockParams& bp, std::span<const Var> p) {
  ad::Tape& tape = z.tape();
  const std::size_t m = batch.atoms;
  if (z.cols() != bp.c_in) {
    throw ShapeError("coordinate_update: z has " + std::to_string(z.cols()) +
                     " columns, block expects " + std::to_string(bp.c_in));
  }
  const std::size_t e = h.nodes.cols();
  Tensor inv(m, e);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t c = 0; c < e; ++c) inv(a, c) = batch.inv_degree[a];
  }
  const Var edge_mean =
      ad::segment_sum(h.edges, batch.tgt, m) * tape.constant(std::move(inv));
  Var skip = z;
  if (bp.c_out > bp.c_in) {
    skip = ad::pad_cols(z, 0, bp.c_out);
  } else if (bp.c_out < bp.c_in) {
    skip = ad::slice_cols(z, 0, bp.c_out);
  }
  return skip + mlp(ad::concat({z, h.nodes, edge_mean, time_column(tape, m, t)}), bp.omega, p);
}

Var eval_dynamics(const GraphBatch& batch, const NetworkState& embedded, const Var& z, double t,
                  std::span<const BlockParams> blocks, std::span<const Var> p) {
  if (z.rows() != batch.atoms || z.cols() != 3) {
    throw ShapeError("eval_dynamics: expected " + std::to_string(batch.atoms) + "x3 coordinates, got " +
                     z.value().shape_string());
  }
  NetworkState h = embedded;
  Var zc = z;
  for (const BlockParams& bp : blocks) {
    for (const LayerParams& lp : bp.layers) h = gcpt_layer(batch, h, zc, t, lp, p);
    zc = coordinate_update(batch, h, zc, t, bp, p);
  }
  if (zc.cols() != 3) throw ShapeError("eval_dynamics: final block must output 3 columns");
  Var out = zc - z;
  if (!out.value().all_finite()) {
    std::string ids;
    for (const BatchMember& m : batch.members) ids += (ids.empty() ? "" : ",") + m.id;
    throw DynamicsError("non-finite dynamics at t=" + std::to_string(t) + " for " + ids);
  }
  return out;
}

}  // namespace molflow
