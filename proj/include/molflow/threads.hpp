// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace molflow {

//! Worker cap from CONFFLOW_THREADS (default: hardware concurrency, >= 1).
std::size_t configured_threads();

//! Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
//! thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace molflow
