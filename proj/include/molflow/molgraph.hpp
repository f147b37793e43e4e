// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// Molecular graph data model: atoms, bonded and auxiliary edges, attribute
// encoding, conformations, and the JSON-lines dataset format.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "molflow/autodiff.hpp"

namespace molflow {

enum class Hybridization { S, SP, SP2, SP3, SP3D, SP3D2, None };
enum class Chirality { CW, CCW, Other, None };
enum class BondType { Single, Double, Triple, Aromatic, None };
enum class BondStereo { Z, E, Cis, Trans, Any, None };

inline constexpr std::size_t kRingSizeMin = 3;
inline constexpr std::size_t kRingSizeCount = 7;  // ring sizes 3..9

//! Per-atom attributes. Absent integer fields are std::nullopt; the enum
//! `None` values double as the absent slot.
struct AtomAttributes {
  std::optional<int> atomic_number;
  Hybridization hybridization = Hybridization::None;
  std::optional<int> degree;
  std::optional<int> formal_charge;
  std::optional<int> total_h;
  std::optional<int> implicit_valence;
  std::optional<int> total_valence;
  std::optional<int> radical_electrons;
  Chirality chirality = Chirality::None;
  bool is_aromatic = false;
  bool is_in_ring = false;

  friend bool operator==(const AtomAttributes&, const AtomAttributes&) = default;
};

struct EdgeAttributes {
  BondType bond_type = BondType::None;
  BondStereo stereo = BondStereo::None;
  bool is_conjugated = false;
  bool is_same_ring = false;
  std::optional<int> shortest_path;
  std::array<bool, kRingSizeCount> in_ring_size{};

  bool bonded() const noexcept { return bond_type != BondType::None; }

  friend bool operator==(const EdgeAttributes&, const EdgeAttributes&) = default;
};

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  EdgeAttributes attributes;

  friend bool operator==(const Edge&, const Edge&) = default;
};

//! Undirected graph; each edge stored once with i < j.
struct MolecularGraph {
  std::string id;
  std::vector<AtomAttributes> atoms;
  std::vector<Edge> edges;

  std::size_t atom_count() const noexcept { return atoms.size(); }
  bool has_auxiliary_edges() const noexcept;
  //! Throws ValidationError naming the molecule on any invariant violation.
  void validate() const;

  friend bool operator==(const MolecularGraph&, const MolecularGraph&) = default;
};

//! M x 3 coordinates (Angstrom) and the heavy-atom mask.
struct Conformation {
  ad::Tensor coords;
  std::vector<bool> heavy_mask;

  std::size_t atom_count() const noexcept { return coords.rows(); }
  std::size_t heavy_count() const noexcept;

  friend bool operator==(const Conformation&, const Conformation&) = default;
};

std::vector<bool> heavy_mask(const MolecularGraph& graph);
Conformation make_conformation(const MolecularGraph& graph, ad::Tensor coords);

struct Molecule {
  MolecularGraph graph;
  std::vector<Conformation> conformers;

  friend bool operator==(const Molecule&, const Molecule&) = default;
};

using Dataset = std::vector<Molecule>;

// ---------------------------------------------------------------------------
// Graph operations

//! Adds auxiliary edges between atoms at bonded shortest-path distance 2 or 3.
//! Rejects graphs that already carry auxiliary edges.
MolecularGraph augment_edges(const MolecularGraph& graph);

//! Bonded shortest-path distances (SIZE_MAX when unreachable).
std::vector<std::vector<std::size_t>> bonded_distances(const MolecularGraph& graph);

//! Translates coordinates so the per-axis mean is zero.
Conformation center_conformation(const Conformation& conformation);

// ---------------------------------------------------------------------------
// Feature encoding

inline constexpr double kStdFloor = 1e-6;
inline constexpr std::size_t kNodeNumericChannels = 7;
inline constexpr std::size_t kEdgeNumericChannels = 1;

struct FeatureStats {
  std::array<double, kNodeNumericChannels> node_mean{};
  std::array<double, kNodeNumericChannels> node_std{};
  std::array<double, kEdgeNumericChannels> edge_mean{};
  std::array<double, kEdgeNumericChannels> edge_std{};

  nlohmann::json to_json() const;
  static FeatureStats from_json(const nlohmann::json& j);

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

//! Population mean/std of the numeric attribute channels over all atoms and
//! edges that carry a value, edges taken after augment_edges. Throws
//! ConfigError on an empty dataset.
FeatureStats compute_feature_stats(const std::vector<MolecularGraph>& graphs);
FeatureStats compute_feature_stats(const Dataset& dataset);

struct EncodedGraph {
  ad::Tensor node_features;  // M x node_feature_width()
  ad::Tensor edge_features;  // |E| x edge_feature_width()
};

std::size_t node_feature_width();
std::size_t edge_feature_width();

//! Fixed layout: numeric fields as (z-score, absent flag), enums one-hot with
//! an absent slot, booleans as 0/1.
EncodedGraph encode_features(const MolecularGraph& graph, const FeatureStats& stats);

// ---------------------------------------------------------------------------
// JSON-lines dataset

nlohmann::json molecule_to_json(const Molecule& molecule);
Molecule molecule_from_json(const nlohmann::json& j);

Dataset parse_dataset(std::istream& in);
Dataset parse_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const Dataset& dataset);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);

// ---------------------------------------------------------------------------
// Toy data

//! Template names: "chain-N" (N in 4..12), "ring-N" (N-membered ring, N in 3..9,
//! with a two-atom side chain), "branched-N" (N in 5..12).
struct ToySpec {
  std::vector<std::string> templates;
  std::size_t conformers = 5;
};

//! Conformers come from randomizing torsions of a rigid template with fixed
//! bond lengths and angles; deterministic for a fixed seed.
Dataset generate_toy_dataset(const ToySpec& spec, std::uint64_t seed);

//! Bonded graph for a toy template name (no coordinates).
MolecularGraph toy_graph(const std::string& name);

}  // namespace molflow
