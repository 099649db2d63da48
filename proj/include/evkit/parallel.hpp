// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <functional>

namespace evkit {

/// Worker cap: EVKIT_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers
/// finish. Results must not depend on which worker runs an index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace evkit
