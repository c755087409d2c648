// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

namespace tomeforge {

/// Worker cap: TOME_FORGE_THREADS when set (minimum 1), otherwise the
/// hardware concurrency.
int thread_budget();

/// Runs fn(i) for i in [0, count) across at most thread_budget() threads.
/// Falls back to a plain loop for a budget of 1.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace tomeforge
