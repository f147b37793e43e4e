// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/molgraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>
#include <utility>

#include "molflow/error.hpp"

namespace molflow {

namespace {

constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

struct IntRange {
  const char* name;
  int lo;
  int hi;
};

// Declared ranges of the numeric node channels, in encoding order.
constexpr std::array<IntRange, kNodeNumericChannels> kNodeRanges = {{
    {"atomic_number", 1, 119},
    {"degree", 0, 10},
    {"formal_charge", -5, 5},
    {"total_h", 0, 8},
    {"implicit_valence", 1, 15},
    {"total_valence", 1, 15},
    {"radical_electrons", 0, 4},
}};

constexpr IntRange kShortestPathRange = {"shortest_path", 1, 3};

std::array<std::optional<int>, kNodeNumericChannels> node_numeric(const AtomAttributes& a) {
  return {a.atomic_number, a.degree,         a.formal_charge,    a.total_h,
          a.implicit_valence, a.total_valence, a.radical_electrons};
}

void check_range(const IntRange& r, const std::optional<int>& v, const std::string& where) {
  if (v && (*v < r.lo || *v > r.hi)) {
    throw ValidationError(where + ": " + r.name + "=" + std::to_string(*v) + " outside [" +
                          std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
  }
}

template <class Enum>
std::size_t enum_slot(Enum value, std::size_t slots, const char* field) {
  const auto raw = static_cast<std::size_t>(value);
  if (raw >= slots) {
    throw EncodingError(std::string(field) + ": value " + std::to_string(raw) +
                        " outside declared vocabulary");
  }
  return raw;
}

void set_numeric(double* dst, const std::optional<int>& v, const IntRange& r, double mean,
                 double sd) {
  if (!v) {
    dst[0] = 0.0;
    dst[1] = 1.0;
    return;
  }
  if (*v < r.lo || *v > r.hi) {
    throw EncodingError(std::string(r.name) + ": value " + std::to_string(*v) +
                        " outside declared range");
  }
  dst[0] = (static_cast<double>(*v) - mean) / sd;
  dst[1] = 0.0;
}

// Numeric channels: 2 columns each. Enums: hybridization 7, chirality 4.
constexpr std::size_t kHybridizationSlots = 7;
constexpr std::size_t kChiralitySlots = 4;
constexpr std::size_t kBondTypeSlots = 5;
constexpr std::size_t kStereoSlots = 6;

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  std::pair<double, double> mean_std() const {
    if (count == 0) return {0.0, 1.0};
    const double n = static_cast<double>(count);
    const double m = sum / n;
    const double var = std::max(0.0, sum_sq / n - m * m);
    return {m, std::max(std::sqrt(var), kStdFloor)};
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// MolecularGraph

bool MolecularGraph::has_auxiliary_edges() const noexcept {
  return std::any_of(edges.begin(), edges.end(),
                     [](const Edge& e) { return !e.attributes.bonded(); });
}

void MolecularGraph::validate() const {
  const std::string where = "molecule '" + id + "'";
  if (atoms.empty()) throw ValidationError(where + ": no atoms");
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    const auto values = node_numeric(atoms[a]);
    const std::string atom_where = where + " atom " + std::to_string(a);
    for (std::size_t c = 0; c < kNodeNumericChannels; ++c) {
      check_range(kNodeRanges[c], values[c], atom_where);
    }
    if (atoms[a].total_h && atoms[a].total_valence &&
        *atoms[a].total_h > *atoms[a].total_valence) {
      throw ValidationError(atom_where + ": total_h exceeds total_valence");
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const Edge& e : edges) {
    const std::string edge_where =
        where + " edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ")";
    if (e.i >= atoms.size() || e.j >= atoms.size()) {
      throw ValidationError(edge_where + ": atom index out of range (M=" +
                            std::to_string(atoms.size()) + ")");
    }
    if (e.i == e.j) throw ValidationError(edge_where + ": self-loop");
    if (e.i > e.j) throw ValidationError(edge_where + ": expected i < j");
    if (!seen.emplace(e.i, e.j).second) throw ValidationError(edge_where + ": duplicate edge");
    check_range(kShortestPathRange, e.attributes.shortest_path, edge_where);
    const int sp = e.attributes.shortest_path.value_or(0);
    if (e.attributes.bonded() ? sp != 1 : (sp != 2 && sp != 3)) {
      throw ValidationError(edge_where +
                            ": shortest_path must be 1 for bonds and 2 or 3 for auxiliary edges");
    }
  }
  const auto dist = bonded_distances(*this);
  for (std::size_t a = 1; a < atoms.size(); ++a) {
    if (dist[0][a] == kUnreachable) {
      throw ValidationError(where + ": bonded graph is disconnected (atom " + std::to_string(a) +
                            ")");
    }
  }
}

std::vector<std::vector<std::size_t>> bonded_distances(const MolecularGraph& graph) {
  const std::size_t m = graph.atom_count();
  std::vector<std::vector<std::size_t>> adj(m);
  for (const Edge& e : graph.edges) {
    if (!e.attributes.bonded() || e.i >= m || e.j >= m) continue;
    adj[e.i].push_back(e.j);
    adj[e.j].push_back(e.i);
  }
  std::vector<std::vector<std::size_t>> dist(m, std::vector<std::size_t>(m, kUnreachable));
  for (std::size_t s = 0; s < m; ++s) {
    std::deque<std::size_t> queue{s};
    dist[s][s] = 0;
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      for (std::size_t v : adj[u]) {
        if (dist[s][v] != kUnreachable) continue;
        dist[s][v] = dist[s][u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

MolecularGraph augment_edges(const MolecularGraph& graph) {
  if (graph.has_auxiliary_edges()) {
    throw ValidationError("molecule '" + graph.id + "': auxiliary edges already present");
  }
  MolecularGraph out = graph;
  const auto dist = bonded_distances(graph);
  for (std::size_t i = 0; i < graph.atom_count(); ++i) {
    for (std::size_t j = i + 1; j < graph.atom_count(); ++j) {
      if (dist[i][j] != 2 && dist[i][j] != 3) continue;
      Edge e;
      e.i = i;
      e.j = j;
      e.attributes.shortest_path = static_cast<int>(dist[i][j]);
      out.edges.push_back(e);
    }
  }
  std::stable_sort(out.edges.begin(), out.edges.end(), [](const Edge& a, const Edge& b) {
    return std::pair(a.i, a.j) < std::pair(b.i, b.j);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Conformation

std::size_t Conformation::heavy_count() const noexcept {
  return static_cast<std::size_t>(std::count(heavy_mask.begin(), heavy_mask.end(), true));
}

std::vector<bool> heavy_mask(const MolecularGraph& graph) {
  std::vector<bool> mask(graph.atom_count());
  for (std::size_t a = 0; a < graph.atom_count(); ++a) {
    mask[a] = graph.atoms[a].atomic_number.value_or(0) != 1;
  }
  return mask;
}

Conformation make_conformation(const MolecularGraph& graph, ad::Tensor coords) {
  if (coords.rows() != graph.atom_count() || coords.cols() != 3) {
    throw ValidationError("molecule '" + graph.id + "': conformer shape " +
                          coords.shape_string() + " != [" + std::to_string(graph.atom_count()) +
                          "x3]");
  }
  if (!coords.all_finite()) {
    throw ValidationError("molecule '" + graph.id + "': non-finite coordinates");
  }
  return Conformation{std::move(coords), heavy_mask(graph)};
}

Conformation center_conformation(const Conformation& conformation) {
  Conformation out = conformation;
  const std::size_t m = out.coords.rows();
  if (m == 0) return out;
  for (std::size_t d = 0; d < 3; ++d) {
    double mean = 0.0;
    for (std::size_t a = 0; a < m; ++a) mean += out.coords(a, d);
    mean /= static_cast<double>(m);
    for (std::size_t a = 0; a < m; ++a) out.coords(a, d) -= mean;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features

nlohmann::json FeatureStats::to_json() const {
  return {{"node_mean", node_mean},
          {"node_std", node_std},
          {"edge_mean", edge_mean},
          {"edge_std", edge_std}};
}

FeatureStats FeatureStats::from_json(const nlohmann::json& j) {
  FeatureStats s;
  j.at("node_mean").get_to(s.node_mean);
  j.at("node_std").get_to(s.node_std);
  j.at("edge_mean").get_to(s.edge_mean);
  j.at("edge_std").get_to(s.edge_std);
  for (double sd : s.node_std) {
    if (!(sd >= kStdFloor)) throw ConfigError("feature stats: std below floor");
  }
  for (double sd : s.edge_std) {
    if (!(sd >= kStdFloor)) throw ConfigError("feature stats: std below floor");
  }
  return s;
}

FeatureStats compute_feature_stats(const std::vector<MolecularGraph>& graphs) {
  if (graphs.empty()) throw ConfigError("compute_feature_stats: empty dataset");
  std::array<Moments, kNodeNumericChannels> node;
  Moments edge;
  for (const MolecularGraph& g : graphs) {
    for (const AtomAttributes& a : g.atoms) {
      const auto values = node_numeric(a);
      for (std::size_t c = 0; c < kNodeNumericChannels; ++c) {
        if (values[c]) node[c].add(static_cast<double>(*values[c]));
      }
    }
    // Edge statistics cover the auxiliary edges the model is fed as well.
    const MolecularGraph ext = g.has_auxiliary_edges() ? g : augment_edges(g);
    for (const Edge& e : ext.edges) {
      if (e.attributes.shortest_path) edge.add(static_cast<double>(*e.attributes.shortest_path));
    }
  }
  FeatureStats s;
  for (std::size_t c = 0; c < kNodeNumericChannels; ++c) {
    std::tie(s.node_mean[c], s.node_std[c]) = node[c].mean_std();
  }
  std::tie(s.edge_mean[0], s.edge_std[0]) = edge.mean_std();
  return s;
}

FeatureStats compute_feature_stats(const Dataset& dataset) {
  std::vector<MolecularGraph> graphs;
  graphs.reserve(dataset.size());
  for (const Molecule& m : dataset) graphs.push_back(m.graph);
  return compute_feature_stats(graphs);
}

std::size_t node_feature_width() {
  return 2 * kNodeNumericChannels + kHybridizationSlots + kChiralitySlots + 2;
}

std::size_t edge_feature_width() {
  return kBondTypeSlots + kStereoSlots + 2 + 2 * kEdgeNumericChannels + kRingSizeCount;
}

EncodedGraph encode_features(const MolecularGraph& graph, const FeatureStats& stats) {
  const std::size_t a = node_feature_width();
  const std::size_t b = edge_feature_width();
  EncodedGraph out{ad::Tensor(graph.atom_count(), a), ad::Tensor(graph.edges.size(), b)};
  for (std::size_t i = 0; i < graph.atom_count(); ++i) {
    const AtomAttributes& atom = graph.atoms[i];
    double* row = out.node_features.data().data() + i * a;
    const auto values = node_numeric(atom);
    std::size_t col = 0;
    for (std::size_t c = 0; c < kNodeNumericChannels; ++c, col += 2) {
      set_numeric(row + col, values[c], kNodeRanges[c], stats.node_mean[c], stats.node_std[c]);
    }
    row[col + enum_slot(atom.hybridization, kHybridizationSlots, "hybridization")] = 1.0;
    col += kHybridizationSlots;
    row[col + enum_slot(atom.chirality, kChiralitySlots, "chirality")] = 1.0;
    col += kChiralitySlots;
    row[col++] = atom.is_aromatic ? 1.0 : 0.0;
    row[col++] = atom.is_in_ring ? 1.0 : 0.0;
  }
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const EdgeAttributes& e = graph.edges[k].attributes;
    double* row = out.edge_features.data().data() + k * b;
    std::size_t col = 0;
    row[col + enum_slot(e.bond_type, kBondTypeSlots, "bond_type")] = 1.0;
    col += kBondTypeSlots;
    row[col + enum_slot(e.stereo, kStereoSlots, "stereo")] = 1.0;
    col += kStereoSlots;
    row[col++] = e.is_conjugated ? 1.0 : 0.0;
    row[col++] = e.is_same_ring ? 1.0 : 0.0;
    set_numeric(row + col, e.shortest_path, kShortestPathRange, stats.edge_mean[0],
                stats.edge_std[0]);
    col += 2;
    for (std::size_t r = 0; r < kRingSizeCount; ++r) row[col + r] = e.in_ring_size[r] ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace molflow
