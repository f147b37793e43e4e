// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "molflow/autodiff.hpp"

namespace molflow::ad {

//! Named trainable tensors in registration order.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index(const std::string& name) const;
  std::size_t scalar_count() const;

  //! One leaf per parameter, referencing the stored tensors.
  std::vector<Var> bind(Tape& tape, bool requires_grad) const;

  nlohmann::json to_json() const;
  //! Replaces values from a checkpoint; names and shapes must match exactly.
  void load_json(const nlohmann::json& j);

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

//! Gradients parallel to a ParameterStore.
using Gradients = std::vector<Tensor>;

Gradients zero_gradients(const ParameterStore& params);
double global_norm(const Gradients& grads);

struct ParamCoord {
  std::size_t param = 0;
  std::size_t offset = 0;
};

struct GradientCheckEntry {
  ParamCoord coord;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::vector<GradientCheckEntry> entries;
};

//! Central-difference check of `analytic` against `fn` at the given
//! coordinates. Relative error is |a - n| / max(|a|, |n|, floor).
GradientCheckReport check_gradients(const std::function<double()>& fn, ParameterStore& params,
                                    const Gradients& analytic, std::span<const ParamCoord> coords,
                                    double h = 1e-5, double floor = 1e-6);

//! `count` distinct coordinates drawn uniformly over all scalars.
std::vector<ParamCoord> sample_coords(const ParameterStore& params, std::size_t count,
                                      std::uint64_t seed);

}  // namespace molflow::ad
