// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace molflow {

//! Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class AutodiffError : public Error {
 public:
  using Error::Error;
};

//! Non-finite value produced while evaluating the flow dynamics.
class DynamicsError : public Error {
 public:
  using Error::Error;
};

//! ODE solver failure; carries the molecule(s) involved and the time reached.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& molecule_id, double t_reached, const std::string& what)
      : Error("integration failed for '" + molecule_id + "' at t=" + std::to_string(t_reached) +
              ": " + what),
        molecule_id_(molecule_id),
        t_reached_(t_reached) {}
  const std::string& molecule_id() const noexcept { return molecule_id_; }
  double t_reached() const noexcept { return t_reached_; }

 private:
  std::string molecule_id_;
  double t_reached_;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace molflow
