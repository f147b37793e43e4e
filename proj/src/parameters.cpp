// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "molflow/error.hpp"

namespace molflow::ad {

std::size_t ParameterStore::add(std::string name, Tensor value) {
  if (lookup_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
  lookup_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterStore::index(const std::string& name) const {
  auto found = find(name);
  if (!found) throw ConfigError("unknown parameter '" + name + "'");
  return *found;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

std::vector<Var> ParameterStore::bind(Tape& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(values_.size());
  for (const Tensor& t : values_) vars.push_back(tape.reference(t, requires_grad));
  return vars;
}

nlohmann::json ParameterStore::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const Tensor& t = values_[i];
    out.push_back({{"name", names_[i]},
                   {"shape", {t.rows(), t.cols()}},
                   {"values", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  return out;
}

void ParameterStore::load_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != values_.size()) {
    throw ConfigError("checkpoint parameter count mismatch");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto& entry = j[i];
    const std::string name = entry.at("name").get<std::string>();
    if (name != names_[i]) {
      throw ConfigError("checkpoint parameter " + std::to_string(i) + " is '" + name +
                        "', expected '" + names_[i] + "'");
    }
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != values_[i].rows() || shape[1] != values_[i].cols()) {
      throw ConfigError("checkpoint shape mismatch for '" + name + "'");
    }
    values_[i] = Tensor(shape[0], shape[1], entry.at("values").get<std::vector<double>>());
  }
}

Gradients zero_gradients(const ParameterStore& params) {
  Gradients g;
  g.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    g.emplace_back(params.value(i).rows(), params.value(i).cols());
  }
  return g;
}

double global_norm(const Gradients& grads) {
  double s = 0.0;
  for (const Tensor& t : grads) {
    for (double v : t.data()) s += v * v;
  }
  return std::sqrt(s);
}

GradientCheckReport check_gradients(const std::function<double()>& fn, ParameterStore& params,
                                    const Gradients& analytic, std::span<const ParamCoord> coords,
                                    double h, double floor) {
  GradientCheckReport report;
  for (const ParamCoord& c : coords) {
    double& x = params.value(c.param)[c.offset];
    const double saved = x;
    x = saved + h;
    const double up = fn();
    x = saved - h;
    const double down = fn();
    x = saved;
    GradientCheckEntry e;
    e.coord = c;
    e.analytic = analytic.at(c.param)[c.offset];
    e.numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
    e.relative_error = std::abs(e.analytic - e.numeric) / denom;
    report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
    report.entries.push_back(e);
  }
  return report;
}

std::vector<ParamCoord> sample_coords(const ParameterStore& params, std::size_t count,
                                      std::uint64_t seed) {
  const std::size_t total = params.scalar_count();
  count = std::min(count, total);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total == 0 ? 0 : total - 1);
  std::set<std::size_t> chosen;
  while (chosen.size() < count) chosen.insert(pick(rng));
  std::vector<ParamCoord> coords;
  std::size_t base = 0;
  std::size_t p = 0;
  for (std::size_t flat : chosen) {
    while (flat >= base + params.value(p).size()) {
      base += params.value(p).size();
      ++p;
    }
    coords.push_back({p, flat - base});
  }
  return coords;
}

}  // namespace molflow::ad
