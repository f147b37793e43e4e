// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "molflow/diagnostics.hpp"
#include "molflow/error.hpp"
#include "molflow/gcpt.hpp"

using namespace molflow;
using ad::Tensor;
using ad::Var;

namespace {

using Vec = std::vector<double>;

// ---- plain-double reference implementation ---------------------------------

Vec lin(const Vec& x, const Tensor& w, const Tensor& b) {
  Vec y(w.cols());
  for (std::size_t o = 0; o < w.cols(); ++o) {
    y[o] = b[o];
    for (std::size_t i = 0; i < x.size(); ++i) y[o] += x[i] * w(i, o);
  }
  return y;
}

Vec swish(Vec x) {
  for (double& v : x) v = v / (1.0 + std::exp(-v));
  return x;
}

Vec cat(std::initializer_list<Vec> parts) {
  Vec out;
  for (const Vec& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Vec row(const Tensor& t, std::size_t r) {
  return Vec(t.data().begin() + r * t.cols(), t.data().begin() + (r + 1) * t.cols());
}

struct Ref {
  const ad::ParameterStore& s;
  Vec linear(const Vec& x, const LinearParams& lp) const {
    return lin(x, s.value(lp.weight), s.value(lp.bias));
  }
  Vec mlp(const Vec& x, const MlpParams& mp) const {
    return linear(swish(linear(x, mp.first)), mp.second);
  }
};

Vec add(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}
Vec sub(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

struct RefState {
  std::vector<Vec> nodes;
  std::vector<Vec> edges;  // directed, same order as the batch
};

RefState ref_layer(const Ref& ref, const GraphBatch& b, const RefState& h, const std::vector<Vec>& z,
                   double t, const LayerParams& lp) {
  const std::size_t m = b.atoms, de = b.directed_edges();
  const Vec tv = {t};
  std::vector<Vec> delta(de), hhat(de);
  for (std::size_t k = 0; k < de; ++k) {
    const std::size_t i = (*b.tgt)[k], j = (*b.src)[k];
    delta[k] = ref.mlp(cat({sub(z[i], z[j]), tv}), lp.delta);
    const Vec pre = add(sub(ref.linear(cat({h.nodes[i], tv}), lp.psi),
                            ref.linear(cat({h.nodes[j], tv}), lp.phi)),
                        h.edges[k]);
    hhat[k] = ref.mlp(cat({pre, delta[k], tv}), lp.gamma);
  }
  const std::size_t e = h.nodes[0].size();
  RefState out = h;
  for (std::size_t i = 0; i < m; ++i) {
    Vec msg(e, 0.0);
    for (std::size_t c = 0; c < e; ++c) {
      double mx = -1e300;
      for (std::size_t k = 0; k < de; ++k) {
        if ((*b.tgt)[k] == i) mx = std::max(mx, hhat[k][c]);
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < de; ++k) {
        if ((*b.tgt)[k] == i) norm += std::exp(hhat[k][c] - mx);
      }
      for (std::size_t k = 0; k < de; ++k) {
        if ((*b.tgt)[k] != i) continue;
        const Vec a = ref.linear(cat({h.nodes[(*b.src)[k]], tv}), lp.alpha);
        msg[c] += std::exp(hhat[k][c] - mx) / norm * (a[c] + delta[k][c]);
      }
    }
    out.nodes[i] = add(h.nodes[i], ref.mlp(cat({h.nodes[i], msg, tv}), lp.theta));
  }
  for (std::size_t k = 0; k < de; ++k) out.edges[k] = add(h.edges[k], hhat[k]);
  return out;
}

std::vector<Vec> ref_coordinates(const Ref& ref, const GraphBatch& b, const RefState& h,
                                 const std::vector<Vec>& z, double t, const BlockParams& bp) {
  std::vector<Vec> out(b.atoms);
  const std::size_t e = h.nodes[0].size();
  for (std::size_t i = 0; i < b.atoms; ++i) {
    Vec mean(e, 0.0);
    std::size_t deg = 0;
    for (std::size_t k = 0; k < b.directed_edges(); ++k) {
      if ((*b.tgt)[k] != i) continue;
      mean = add(mean, h.edges[k]);
      ++deg;
    }
    for (double& v : mean) v = deg > 0 ? v / static_cast<double>(deg) : 0.0;
    Vec skip(bp.c_out, 0.0);
    for (std::size_t c = 0; c < std::min(bp.c_in, bp.c_out); ++c) skip[c] = z[i][c];
    out[i] = add(skip, ref.mlp(cat({z[i], h.nodes[i], mean, {t}}), bp.omega));
  }
  return out;
}

// ---- fixtures -----------------------------------------------------------------

struct Net {
  ad::ParameterStore store;
  EmbeddingParams ep;
  std::vector<BlockParams> blocks;
  GraphBatch batch;
};

Net make_net(const MolecularGraph& graph, const GcptConfig& cfg, bool augment, double noise) {
  Net n;
  std::mt19937_64 rng(5);
  const MolecularGraph g = augment ? augment_edges(graph) : graph;
  n.ep = register_embedding(n.store, "embed", node_feature_width(), edge_feature_width(), cfg.hidden, rng);
  n.blocks = register_dynamics(n.store, "cnf", cfg, rng);
  if (noise > 0) perturb_parameters(n.store, noise, 6);
  n.batch = make_batch(g, compute_feature_stats(std::vector<MolecularGraph>{graph}));
  return n;
}

Tensor gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

std::vector<Vec> rows(const Tensor& t) {
  std::vector<Vec> out;
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back(row(t, r));
  return out;
}

double max_diff(const Tensor& a, const std::vector<Vec>& b) {
  double worst = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) worst = std::max(worst, std::abs(a(r, c) - b[r][c]));
  }
  return worst;
}

GcptConfig small_config() {
  GcptConfig c;
  c.blocks = 3;
  c.rounds = 2;
  c.hidden = 4;
  c.coord_width = 5;
  return c;
}

}  // namespace

TEST(Gcpt, Ladder) {
  GcptConfig c;
  EXPECT_EQ(coordinate_ladder(c),
            (std::vector<std::pair<std::size_t, std::size_t>>{{3, 32}, {32, 32}, {32, 3}}));
  c.blocks = 1;
  EXPECT_EQ(coordinate_ladder(c), (std::vector<std::pair<std::size_t, std::size_t>>{{3, 3}}));
}

TEST(Gcpt, EmbedZeroWeightsGiveBias) {
  Net n = make_net(toy_graph("chain-4"), small_config(), true, 0.0);
  Tensor& w = n.store.value(n.ep.node.weight);
  w = Tensor(w.rows(), w.cols());
  n.store.value(n.ep.node.bias) = Tensor::from_rows({{0.5, -1.0, 2.0, 0.25}});
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  for (std::size_t r = 0; r < h.nodes.rows(); ++r) {
    EXPECT_EQ(row(h.nodes.value(), r), (Vec{0.5, -1.0, 2.0, 0.25}));
  }
  EXPECT_EQ(h.edges.rows(), n.batch.directed_edges());
}

TEST(Gcpt, EmbedScalarToy) {
  ad::ParameterStore s;
  LinearParams lp{s.add("w", Tensor::scalar(2.0)), s.add("b", Tensor::scalar(0.0))};
  ad::Tape tape;
  const auto p = s.bind(tape, false);
  EXPECT_EQ(linear(tape.leaf(Tensor::scalar(3.0)), lp, p).value().item(), 6.0);
}

TEST(Gcpt, EmbedRejectsWrongWidth) {
  Net n = make_net(toy_graph("chain-4"), small_config(), true, 0.0);
  n.batch.node_features = Tensor(n.batch.atoms, 5);
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  EXPECT_THROW(embed(tape, n.batch, n.ep, p), ShapeError);
}

TEST(Gcpt, EmbedPermutesRows) {
  const MolecularGraph g = toy_graph("branched-6");
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Net a = make_net(g, small_config(), true, 0.1);
  Net b = make_net(permute_atoms(g, perm), small_config(), true, 0.1);
  ad::Tape ta, tb;
  const auto pa = a.store.bind(ta, false);
  const auto pb = b.store.bind(tb, false);
  const Tensor ha = embed(ta, a.batch, a.ep, pa).nodes.value();
  const Tensor hb = embed(tb, b.batch, b.ep, pb).nodes.value();
  EXPECT_EQ(permute_rows(ha, perm), hb);
}

TEST(Gcpt, DirectedEdgesAreAntisymmetricPairs) {
  Net n = make_net(toy_graph("ring-5"), small_config(), true, 0.0);
  const GraphBatch& b = n.batch;
  ASSERT_EQ(b.directed_edges() % 2, 0u);
  const Tensor z = gaussian(b.atoms, 3, 1);
  ad::Tape tape;
  const Var zv = tape.leaf(z);
  const Tensor d = (ad::gather(zv, b.tgt) - ad::gather(zv, b.src)).value();
  for (std::size_t k = 0; k < b.directed_edges(); k += 2) {
    EXPECT_EQ((*b.src)[k], (*b.tgt)[k + 1]);
    EXPECT_EQ((*b.tgt)[k], (*b.src)[k + 1]);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(d(k, c), -d(k + 1, c));
  }
}

TEST(Gcpt, LayerIsIdentityWithZeroResidualHeads) {
  Net n = make_net(toy_graph("chain-6"), small_config(), true, 0.0);
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  const NetworkState out =
      gcpt_layer(n.batch, h, tape.leaf(gaussian(n.batch.atoms, 3, 2)), 0.4, n.blocks[0].layers[0], p);
  EXPECT_EQ(out.nodes.value(), h.nodes.value());
  EXPECT_EQ(out.edges.value(), h.edges.value());
}

TEST(Gcpt, LayerMatchesReference) {
  for (const char* name : {"chain-5", "ring-4", "branched-6"}) {
    Net n = make_net(toy_graph(name), small_config(), true, 0.3);
    const Ref ref{n.store};
    ad::Tape tape;
    const auto p = n.store.bind(tape, false);
    const NetworkState h = embed(tape, n.batch, n.ep, p);
    const Tensor z = gaussian(n.batch.atoms, 3, 3);
    const NetworkState out = gcpt_layer(n.batch, h, tape.leaf(z), 0.7, n.blocks[0].layers[0], p);
    const RefState expect = ref_layer(ref, n.batch, {rows(h.nodes.value()), rows(h.edges.value())},
                                      rows(z), 0.7, n.blocks[0].layers[0]);
    EXPECT_LT(max_diff(out.nodes.value(), expect.nodes), 1e-12) << name;
    EXPECT_LT(max_diff(out.edges.value(), expect.edges), 1e-12) << name;
  }
}

TEST(Gcpt, SingleNeighbourMessageIsAlphaPlusDelta) {
  // Two atoms, one bond: each softmax is over a singleton.
  const MolecularGraph g = toy_graph("chain-4");
  MolecularGraph pair = g;
  pair.atoms.resize(2);
  pair.edges = {g.edges[0]};
  Net n = make_net(pair, small_config(), false, 0.3);
  const LayerParams& lp = n.blocks[0].layers[0];
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  const Tensor z = gaussian(2, 3, 4);
  const double t = 0.25;
  const NetworkState out = gcpt_layer(n.batch, h, tape.leaf(z), t, lp, p);
  const Ref ref{n.store};
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t j = 1 - i;
    const Vec hi = row(h.nodes.value(), i), hj = row(h.nodes.value(), j);
    const Vec delta = ref.mlp(cat({sub(row(z, i), row(z, j)), {t}}), lp.delta);
    const Vec msg = add(ref.linear(cat({hj, {t}}), lp.alpha), delta);
    const Vec expect = add(hi, ref.mlp(cat({hi, msg, {t}}), lp.theta));
    for (std::size_t c = 0; c < expect.size(); ++c) EXPECT_NEAR(out.nodes.value()(i, c), expect[c], 1e-12);
  }
}

TEST(Gcpt, IsolatedNodeGetsZeroMessage) {
  MolecularGraph one;
  one.id = "single";
  one.atoms = {toy_graph("chain-4").atoms[0]};
  Net n = make_net(one, small_config(), false, 0.3);
  const LayerParams& lp = n.blocks[0].layers[0];
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  const NetworkState out = gcpt_layer(n.batch, h, tape.leaf(gaussian(1, 3, 5)), 0.5, lp, p);
  const Ref ref{n.store};
  const Vec hi = row(h.nodes.value(), 0);
  const Vec expect = add(hi, ref.mlp(cat({hi, Vec(hi.size(), 0.0), {0.5}}), lp.theta));
  for (std::size_t c = 0; c < expect.size(); ++c) EXPECT_NEAR(out.nodes.value()(0, c), expect[c], 1e-12);
  const Var zc = coordinate_update(n.batch, out, tape.leaf(gaussian(1, 3, 5)), 0.5, n.blocks[0], p);
  EXPECT_TRUE(zc.value().all_finite());
}

TEST(Gcpt, AttentionWeightsAreDistributions) {
  Net n = make_net(toy_graph("branched-7"), small_config(), true, 0.5);
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const Tensor logits = gaussian(n.batch.directed_edges(), 4, 6);
  const Tensor rho = ad::segment_softmax(tape.leaf(logits), n.batch.tgt, n.batch.atoms).value();
  for (std::size_t i = 0; i < n.batch.atoms; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < n.batch.directed_edges(); ++k) {
        if ((*n.batch.tgt)[k] != i) continue;
        EXPECT_GE(rho(k, c), 0.0);
        EXPECT_LE(rho(k, c), 1.0);
        s += rho(k, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Gcpt, CoordinateUpdateZeroOmegaGivesSkipPlusBias) {
  Net n = make_net(toy_graph("chain-5"), small_config(), true, 0.0);
  const BlockParams& bp = n.blocks[0];
  Tensor bias(1, bp.c_out);
  for (std::size_t c = 0; c < bp.c_out; ++c) bias[c] = 0.1 * static_cast<double>(c + 1);
  n.store.value(bp.omega.second.bias) = bias;
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  const Tensor z = gaussian(n.batch.atoms, 3, 7);
  const Tensor zc = coordinate_update(n.batch, h, tape.leaf(z), 0.3, bp, p).value();
  for (std::size_t i = 0; i < n.batch.atoms; ++i) {
    for (std::size_t c = 0; c < bp.c_out; ++c) {
      EXPECT_DOUBLE_EQ(zc(i, c), (c < 3 ? z(i, c) : 0.0) + bias[c]);
    }
  }
}

TEST(Gcpt, CoordinateUpdateMatchesReference) {
  Net n = make_net(toy_graph("ring-6"), small_config(), true, 0.3);
  const Ref ref{n.store};
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  for (const BlockParams& bp : n.blocks) {
    const Tensor z = gaussian(n.batch.atoms, bp.c_in, 8);
    const Tensor zc = coordinate_update(n.batch, h, tape.leaf(z), 0.6, bp, p).value();
    const auto expect = ref_coordinates(ref, n.batch, {rows(h.nodes.value()), rows(h.edges.value())},
                                        rows(z), 0.6, bp);
    EXPECT_LT(max_diff(zc, expect), 1e-12);
  }
}

TEST(Gcpt, IsomorphicNodesGetIdenticalCoordinates) {
  MolecularGraph g = toy_graph("chain-4");
  g.atoms[0] = g.atoms[3];  // symmetric C-C-C-C
  Net n = make_net(g, small_config(), true, 0.3);
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const Tensor z(4, 3);
  NetworkState h = embed(tape, n.batch, n.ep, p);
  const Var zv = tape.leaf(z);
  for (const LayerParams& lp : n.blocks[0].layers) h = gcpt_layer(n.batch, h, zv, 0.2, lp, p);
  const Tensor zc = coordinate_update(n.batch, h, zv, 0.2, n.blocks[0], p).value();
  for (std::size_t c = 0; c < zc.cols(); ++c) EXPECT_NEAR(zc(0, c), zc(3, c), 1e-14);
}

TEST(Gcpt, DynamicsVanishAtInit) {
  Net n = make_net(toy_graph("branched-8"), small_config(), true, 0.0);
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  const Tensor f =
      eval_dynamics(n.batch, h, tape.leaf(gaussian(n.batch.atoms, 3, 9)), 0.5, n.blocks, p).value();
  EXPECT_EQ(f.max_abs(), 0.0);
}

TEST(Gcpt, DynamicsComposeBlocks) {
  Net n = make_net(toy_graph("chain-6"), small_config(), true, 0.3);
  const Ref ref{n.store};
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h0 = embed(tape, n.batch, n.ep, p);
  const Tensor z = gaussian(n.batch.atoms, 3, 10);
  const Tensor f = eval_dynamics(n.batch, h0, tape.leaf(z), 0.8, n.blocks, p).value();
  RefState h{rows(h0.nodes.value()), rows(h0.edges.value())};
  std::vector<Vec> zc = rows(z);
  for (const BlockParams& bp : n.blocks) {
    for (const LayerParams& lp : bp.layers) h = ref_layer(ref, n.batch, h, zc, 0.8, lp);
    zc = ref_coordinates(ref, n.batch, h, zc, 0.8, bp);
  }
  for (std::size_t i = 0; i < zc.size(); ++i) zc[i] = sub(zc[i], row(z, i));
  EXPECT_LT(max_diff(f, zc), 1e-11);
}

TEST(Gcpt, DynamicsAreNotTranslationEquivariant) {
  Net n = make_net(toy_graph("chain-6"), small_config(), true, 0.3);
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  const NetworkState h = embed(tape, n.batch, n.ep, p);
  const Tensor z = gaussian(n.batch.atoms, 3, 11);
  Tensor moved = z;
  for (std::size_t i = 0; i < z.rows(); ++i) moved(i, 0) += 1.0;
  const Tensor a = eval_dynamics(n.batch, h, tape.leaf(z), 0.5, n.blocks, p).value();
  const Tensor b = eval_dynamics(n.batch, h, tape.leaf(moved), 0.5, n.blocks, p).value();
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Gcpt, DynamicsPermutationEquivariant) {
  std::mt19937_64 rng(12);
  for (const char* name : {"chain-7", "ring-5", "branched-9"}) {
    const MolecularGraph g = toy_graph(name);
    std::vector<std::size_t> perm(g.atom_count());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Net a = make_net(g, small_config(), true, 0.3);
    Net b = make_net(permute_atoms(g, perm), small_config(), true, 0.3);
    const Tensor z = gaussian(g.atom_count(), 3, 13);
    ad::Tape ta, tb;
    const auto pa = a.store.bind(ta, false);
    const auto pb = b.store.bind(tb, false);
    const Tensor fa =
        eval_dynamics(a.batch, embed(ta, a.batch, a.ep, pa), ta.leaf(z), 0.4, a.blocks, pa).value();
    const Tensor fb = eval_dynamics(b.batch, embed(tb, b.batch, b.ep, pb),
                                    tb.leaf(permute_rows(z, perm)), 0.4, b.blocks, pb)
                          .value();
    const Tensor expect = permute_rows(fa, perm);
    for (std::size_t i = 0; i < fb.size(); ++i) EXPECT_NEAR(fb[i], expect[i], 1e-9) << name;
  }
}

TEST(Gcpt, DynamicsGradientCheck) {
  Net n = make_net(toy_graph("ring-4"), small_config(), true, 0.3);
  const Tensor z = gaussian(n.batch.atoms, 3, 14);
  const Tensor w = gaussian(n.batch.atoms, 3, 15);
  auto value = [&](ad::Tape& tape, const std::vector<Var>& p) {
    const Var f = eval_dynamics(n.batch, embed(tape, n.batch, n.ep, p), tape.leaf(z), 0.5, n.blocks, p);
    return ad::sum(f * tape.constant(w));
  };
  ad::Tape tape;
  const auto p = n.store.bind(tape, true);
  const ad::Gradients g = ad::backward(value(tape, p), p);
  auto fn = [&]() {
    ad::Tape t2;
    return value(t2, n.store.bind(t2, false)).value().item();
  };
  const auto coords = ad::sample_coords(n.store, 30, 16);
  EXPECT_LT(ad::check_gradients(fn, n.store, g, coords).max_relative_error, 1e-5);
}

TEST(Gcpt, NonFiniteDynamicsThrow) {
  Net n = make_net(toy_graph("chain-4"), small_config(), true, 0.3);
  ad::Tape tape;
  const auto p = n.store.bind(tape, false);
  Tensor z(n.batch.atoms, 3);
  z(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(eval_dynamics(n.batch, embed(tape, n.batch, n.ep, p), tape.leaf(z), 0.5, n.blocks, p),
               DynamicsError);
}
