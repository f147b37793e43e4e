// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// Self-checks run by `molflow check`: invertibility, trace estimator vs dense
// Jacobian, gradient check, permutation equivariance, identity at init.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "molflow/flow.hpp"
#include "molflow/molgraph.hpp"
#include "molflow/parameters.hpp"

namespace molflow {

enum class CheckLevel { Fast, Full };

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;  // pass iff measured < threshold
  double seconds = 0.0;
  std::string detail;
};

//! Adds N(0, scale^2) to every parameter scalar.
void perturb_parameters(ad::ParameterStore& params, double scale, std::uint64_t seed);

//! Adds `gain` to the leading diagonal of both omega layers of every block, so
//! each coordinate's dynamics depend mostly on itself.
void strengthen_diagonal(ConfFlowModel& model, double gain);

//! Toy template names whose molecules have at most `max_atoms` atoms.
std::vector<std::string> templates_up_to(std::size_t max_atoms);

//! `count` toy molecules drawn from templates_up_to(max_atoms).
Dataset random_toy_molecules(std::size_t count, std::size_t max_atoms, std::uint64_t seed,
                             std::size_t conformers = 2);

//! Relabels atoms: old atom i becomes atom perm[i].
MolecularGraph permute_atoms(const MolecularGraph& graph, std::span<const std::size_t> perm);
ad::Tensor permute_rows(const ad::Tensor& x, std::span<const std::size_t> perm);

//! Coordinates only, no density terms. inverse=false maps latent -> data.
ad::Tensor map_coordinates(const ConfFlowModel& model, const GraphBatch& batch,
                           const ad::Tensor& z, bool inverse);

CheckResult check_roundtrip(CheckLevel level, double tolerance, double threshold);
std::vector<CheckResult> check_trace_oracle(CheckLevel level);
CheckResult check_gradient(CheckLevel level);
CheckResult check_equivariance(CheckLevel level);
CheckResult check_identity_init(CheckLevel level);

std::vector<CheckResult> run_checks(CheckLevel level,
                                    const std::function<void(const CheckResult&)>& on_result = {});

std::string format_check(const CheckResult& r);

}  // namespace molflow
