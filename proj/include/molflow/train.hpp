// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// Maximum-likelihood training with kinetic-energy and Jacobian-norm
// regularizers, Adam and global-norm clipping.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "molflow/flow.hpp"
#include "molflow/molgraph.hpp"
#include "molflow/parameters.hpp"

namespace molflow {

//! Small model that trains on one core in minutes. The full-size setting is
//! full_flow_config().
FlowConfig desk_flow_config();
FlowConfig full_flow_config();

struct TrainConfig {
  double lambda_k = 0.2;
  double lambda_j = 0.2;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;    // conformer rows per step; full-size runs use 125
  std::size_t iterations = 500;  // full-size runs use 32000
  double clip = 0.05;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 100;
  bool log_wall_time = false;  // wall time breaks byte-identical logs, so opt in
  std::size_t threads = 1;
  FlowConfig model = desk_flow_config();

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
};

//! Scales `grads` to norm `clip` if larger, then applies one Adam update.
//! Returns the pre-clip global norm.
double clip_and_step(ad::Gradients& grads, AdamState& adam, ad::ParameterStore& params,
                     double learning_rate, double clip);

//! One training row: a prepared graph batch and its centered coordinates.
struct TrainRow {
  const GraphBatch* batch = nullptr;
  ad::Tensor coords;
};

struct BatchLoss {
  double loss = 0.0;
  double nll = 0.0;      // atom-weighted mean nll per dimension
  double ke = 0.0;       // KE / 3A
  double jf = 0.0;       // JF / 3A
  ad::Gradients grads;   // empty unless requested
};

//! loss = nll + lambda_k * KE/(3A) + lambda_j * JF/(3A), A = total atoms.
//! `probes[r]` holds the per-CNF probes of row r.
BatchLoss batch_loss(const ConfFlowModel& model, std::span<const TrainRow> rows,
                     std::span<const Probes> probes, double lambda_k, double lambda_j,
                     bool with_gradients, std::size_t threads = 1);

struct TrainRecord {
  std::size_t iteration = 0;
  double nll_per_dim = 0.0;
  double ke = 0.0;
  double jf = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
};

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_record;
  std::function<void(std::size_t iteration, const ConfFlowModel&)> on_checkpoint;
};

//! Rows are all (molecule, conformer) pairs, centered. Throws DivergenceError
//! when the loss exceeds 1e6, turns non-finite, or integration fails.
std::vector<TrainRecord> train(const Dataset& dataset, ConfFlowModel& model,
                               const TrainConfig& config, const TrainHooks& hooks = {});

void write_log_header(std::ostream& out, bool wall_time);
void write_log_row(std::ostream& out, const TrainRecord& r, bool wall_time);

nlohmann::json checkpoint_json(const ConfFlowModel& model, std::size_t iteration);
ConfFlowModel load_checkpoint(const std::string& path);

}  // namespace molflow
