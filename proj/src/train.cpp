// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>

#include "molflow/error.hpp"
#include "molflow/threads.hpp"

namespace molflow {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

namespace {
constexpr double kDivergence = 1e6;
}

FlowConfig desk_flow_config() {
  FlowConfig c;
  c.gcpt.hidden = 16;
  c.gcpt.coord_width = 16;
  c.gcpt.blocks = 3;
  c.gcpt.rounds = 2;
  c.solver.fixed_step = true;
  c.solver.fixed_steps = 4;
  return c;
}

FlowConfig full_flow_config() {
  FlowConfig c;
  c.gcpt.hidden = 128;
  c.gcpt.coord_width = 32;
  return c;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(lambda_k >= 0.0) || !(lambda_j >= 0.0)) {
    throw ConfigError("train: regularizer weights must be >= 0");
  }
  if (!(clip > 0.0)) throw ConfigError("train: clip must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (threads == 0) throw ConfigError("train: threads must be >= 1");
  model.validate();
}

json TrainConfig::to_json() const {
  return {{"lambda_k", lambda_k},
          {"lambda_j", lambda_j},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"iterations", iterations},
          {"clip", clip},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"log_wall_time", log_wall_time},
          {"threads", threads},
          {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config: expected object");
  static const std::set<std::string> known = {
      "lambda_k", "lambda_j",         "learning_rate", "batch_size", "iterations", "clip",
      "seed",     "checkpoint_every", "log_wall_time", "threads",    "model"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.count(it.key()) == 0) throw ConfigError("train config: unknown key '" + it.key() + "'");
  }
  TrainConfig c;
  try {
    c.lambda_k = j.value("lambda_k", c.lambda_k);
    c.lambda_j = j.value("lambda_j", c.lambda_j);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    c.clip = j.value("clip", c.clip);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_wall_time = j.value("log_wall_time", c.log_wall_time);
    c.threads = j.value("threads", c.threads);
    if (j.contains("model")) {
      // Missing model keys fall back to the desk preset, not the generic defaults.
      json merged = desk_flow_config().to_json();
      merged.update(j.at("model"));
      c.model = FlowConfig::from_json(merged);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer

double clip_and_step(ad::Gradients& grads, AdamState& adam, ad::ParameterStore& params,
                     double learning_rate, double clip) {
  if (grads.size() != params.size()) throw ShapeError("clip_and_step: gradient count mismatch");
  const double norm = ad::global_norm(grads);
  if (norm > clip) {
    const double f = clip / norm;
    for (Tensor& g : grads) {
      for (double& v : g.data()) v *= f;
    }
  }
  if (adam.m.empty()) {
    adam.m = ad::zero_gradients(params);
    adam.v = ad::zero_gradients(params);
  }
  ++adam.step;
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params.value(i).data();
    auto g = grads[i].data();
    auto m = adam.m[i].data();
    auto v = adam.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
      v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
      w[k] -= learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + adam.eps);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Loss

namespace {

struct RowTerms {
  double nll_sum = 0.0;  // -(log p + logdet), nats, summed over the row's coordinates
  double ke = 0.0;
  double jf = 0.0;
  ad::Gradients grads;
};

RowTerms row_terms(const ConfFlowModel& model, const TrainRow& row, const Probes& probes,
                   double weight_nll, double weight_k, double weight_j, bool with_gradients) {
  const GraphBatch& batch = *row.batch;
  ad::Tape tape;
  const std::vector<Var> p = model.parameters().bind(tape, with_gradients);
  const Var x = tape.constant(row.coords);
  const FlowVars fv = model.inverse_graph(tape, p, batch, x, probes);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double dims = 3.0 * static_cast<double>(batch.atoms);
  const Var logp = ad::scale(ad::sum(ad::square(fv.z)), -0.5);
  const Var nll = ad::scale(logp + ad::sum(fv.logdet), -1.0);
  RowTerms out;
  out.nll_sum = nll.value().item() + dims * half_log_2pi;
  out.ke = ad::sum(fv.ke).value().item();
  out.jf = ad::sum(fv.jf).value().item();
  if (with_gradients) {
    const Var total = ad::scale(nll, weight_nll) + ad::scale(ad::sum(fv.ke), weight_k) +
                      ad::scale(ad::sum(fv.jf), weight_j);
    out.grads = ad::backward(total, p);
  }
  return out;
}

}  // namespace

BatchLoss batch_loss(const ConfFlowModel& model, std::span<const TrainRow> rows,
                     std::span<const Probes> probes, double lambda_k, double lambda_j,
                     bool with_gradients, std::size_t threads) {
  if (rows.empty()) throw ConfigError("batch_loss: empty batch");
  if (probes.size() != rows.size()) throw ConfigError("batch_loss: one probe set per row required");
  std::size_t atoms = 0;
  for (const TrainRow& r : rows) atoms += r.batch->atoms;
  const double norm = 1.0 / (3.0 * static_cast<double>(atoms));
  std::vector<RowTerms> terms(rows.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    terms[i] = row_terms(model, rows[i], probes[i], norm, lambda_k * norm, lambda_j * norm,
                         with_gradients);
  });
  BatchLoss out;
  if (with_gradients) out.grads = ad::zero_gradients(model.parameters());
  for (const RowTerms& t : terms) {
    out.nll += t.nll_sum * norm;
    out.ke += t.ke * norm;
    out.jf += t.jf * norm;
    if (with_gradients) {
      for (std::size_t i = 0; i < out.grads.size(); ++i) {
        auto dst = out.grads[i].data();
        auto src = t.grads[i].data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }
  out.loss = out.nll + lambda_k * out.ke + lambda_j * out.jf;
  return out;
}

// ---------------------------------------------------------------------------
// Loop

std::vector<TrainRecord> train(const Dataset& dataset, ConfFlowModel& model,
                               const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  std::vector<TrainRecord> records;
  if (dataset.empty()) throw ConfigError("train: empty dataset");

  std::vector<GraphBatch> batches;
  batches.reserve(dataset.size());
  for (const Molecule& m : dataset) batches.push_back(model.prepare(m.graph));
  std::vector<TrainRow> all;
  std::vector<std::string> row_ids;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (const Conformation& c : dataset[i].conformers) {
      all.push_back({&batches[i], center_conformation(c).coords});
      row_ids.push_back(dataset[i].graph.id);
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_batch = [&]() {
    std::vector<std::size_t> pick;
    const std::size_t want = std::min(config.batch_size, all.size());
    while (pick.size() < want) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      pick.push_back(order[cursor++]);
    }
    return pick;
  };

  AdamState adam;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const std::vector<std::size_t> pick = next_batch();
    std::vector<TrainRow> rows;
    std::vector<Probes> probes;
    for (std::size_t r : pick) {
      rows.push_back(all[r]);
      probes.push_back(model.draw_probes(all[r].batch->atoms, rng));
    }
    if (!model.actnorm_initialized()) {
      std::vector<GraphBatch> parts;
      std::vector<double> coords;
      for (const TrainRow& r : rows) {
        parts.push_back(*r.batch);
        coords.insert(coords.end(), r.coords.data().begin(), r.coords.data().end());
      }
      GraphBatch joined = concat_batches(parts);
      model.initialize_actnorm(joined, Tensor(joined.atoms, 3, std::move(coords)));
    }
    auto ids = [&]() {
      std::string s;
      for (std::size_t r : pick) s += (s.empty() ? "" : ",") + row_ids[r];
      return s;
    };
    BatchLoss bl;
    try {
      bl = batch_loss(model, rows, probes, config.lambda_k, config.lambda_j, true, config.threads);
    } catch (const IntegrationError& e) {
      throw DivergenceError("iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(bl.loss) || bl.loss > kDivergence) {
      throw DivergenceError("iteration " + std::to_string(it) + ": loss " +
                            std::to_string(bl.loss) + " on batch [" + ids() + "]");
    }
    for (const Tensor& g : bl.grads) {
      if (!g.all_finite()) {
        throw DivergenceError("iteration " + std::to_string(it) +
                              ": non-finite gradient on batch [" + ids() + "]");
      }
    }
    TrainRecord rec;
    rec.iteration = it;
    rec.nll_per_dim = bl.nll;
    rec.ke = bl.ke;
    rec.jf = bl.jf;
    rec.grad_norm = clip_and_step(bl.grads, adam, model.parameters(), config.learning_rate,
                                  config.clip);
    rec.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && it % config.checkpoint_every == 0) {
      hooks.on_checkpoint(it, model);
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// I/O

void write_log_header(std::ostream& out, bool wall_time) {
  out << "iteration,nll_per_dim,ke,jf,grad_norm" << (wall_time ? ",wall_time" : "") << '\n';
}

void write_log_row(std::ostream& out, const TrainRecord& r, bool wall_time) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", r.iteration, r.nll_per_dim, r.ke,
                r.jf, r.grad_norm);
  out << buf;
  if (wall_time) {
    std::snprintf(buf, sizeof buf, ",%.3f", r.wall_time);
    out << buf;
  }
  out << '\n';
}

json checkpoint_json(const ConfFlowModel& model, std::size_t iteration) {
  json j = model.to_json();
  j["iteration"] = iteration;
  return j;
}

ConfFlowModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint '" + path + "': " + e.what());
  }
  j.erase("iteration");
  return ConfFlowModel::from_json(j);
}

}  // namespace molflow
