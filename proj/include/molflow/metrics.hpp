// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// Conformer-ensemble evaluation: aligned RMSD, coverage / matching / mismatch
// scores and distance-distribution MMD.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "molflow/molgraph.hpp"

namespace molflow {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3d = std::array<double, 3>;

struct AlignmentResult {
  Mat3 rotation{};     // applied to the centered first set
  Vec3d translation{};  // x_aligned = R x + translation
  double rmsd = 0.0;
};

//! Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
//! Eigenvalues descending; eigenvectors in the columns of `vectors`.
struct SymmetricEigen3 {
  Vec3d values{};
  Mat3 vectors{};
};
SymmetricEigen3 jacobi_eigen3(const Mat3& a, double tol = 1e-12, int max_sweeps = 50);

//! Optimal proper rigid superposition of `a` onto `b` over the selected atoms
//! (heavy atoms of `a` when heavy_only, else all).
AlignmentResult kabsch_rmsd(const Conformation& a, const Conformation& b, bool heavy_only = true);

struct EnsembleScores {
  double cov = 0.0;
  double mat = 0.0;
  double mis = 0.0;
};

//! rmsd[g][r]: generated g vs reference r. Strict inequalities: a reference
//! is covered when some RMSD < delta; a generated sample is a mismatch when
//! every RMSD > delta.
EnsembleScores score_matrix(const std::vector<std::vector<double>>& rmsd, double delta);

std::vector<std::vector<double>> rmsd_matrix(const std::vector<Conformation>& generated,
                                             const std::vector<Conformation>& reference,
                                             bool heavy_only);

EnsembleScores score_ensembles(const std::vector<Conformation>& generated,
                               const std::vector<Conformation>& reference, double delta,
                               bool heavy_only = true);

struct Summary {
  double mean = 0.0;
  double median = 0.0;
};

Summary summarize(std::vector<double> values);

struct MoleculeScore {
  std::string id;
  std::size_t generated = 0;
  std::size_t reference = 0;
  std::size_t masked_atoms = 0;
  EnsembleScores scores;
};

struct ScoreReport {
  std::vector<MoleculeScore> molecules;
  Summary cov, mat, mis;
  double delta = 0.0;
  bool heavy_only = true;
};

ScoreReport score_dataset(std::vector<MoleculeScore> molecules, double delta, bool heavy_only);

// ---------------------------------------------------------------------------
// Distance distributions

enum class MmdVariant { Single, Pair, All };

//! Distances over the extended (bonded + 2/3-hop) edge set, one row per
//! conformer. Edges touching hydrogen are dropped unless with_hydrogen.
struct DistanceSamples {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::vector<double>> rows;  // conformer -> distance per edge
};

DistanceSamples distance_samples(const MolecularGraph& graph,
                                 const std::vector<Conformation>& conformers,
                                 bool with_hydrogen = false);

//! Median of nonzero pairwise Euclidean distances among `points`; 1 if none.
double median_bandwidth(const std::vector<std::vector<double>>& points);

//! Unbiased MMD^2 with a Gaussian kernel exp(-|x-y|^2 / (2 h^2)).
double mmd2_unbiased(const std::vector<std::vector<double>>& x,
                     const std::vector<std::vector<double>>& y, double bandwidth);

struct MmdResult {
  double estimate = 0.0;           // max(estimate, 0)
  std::vector<double> bandwidths;  // one per kernel evaluated
};

MmdResult mmd(const DistanceSamples& generated, const DistanceSamples& reference,
              MmdVariant variant, std::uint64_t seed = 0, std::size_t max_pairs = 500);

const char* to_string(MmdVariant v);

// ---------------------------------------------------------------------------
// Serialization

struct MmdSection {
  std::string id;
  MmdResult single, pair, all;
};

nlohmann::json report_json(const ScoreReport& report, const std::vector<MmdSection>& mmd = {});
std::string report_text(const ScoreReport& report, const std::vector<MmdSection>& mmd = {});

}  // namespace molflow
