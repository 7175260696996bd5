#pragma once

// Deterministic parallelism helpers. parallel_for only hands out disjoint
// index ranges (callers do per-index writes, never shared accumulation), and
// every floating-point reduction in the library goes through pairwise_sum,
// whose result depends only on the element order — not on the worker count.

#include <cstddef>
#include <functional>
#include <span>

namespace octquant {

/// Worker count used by parallel_for. 0 restores the default
/// (OCT_QUANT_THREADS env var if set, else hardware concurrency).
void set_worker_count(std::size_t n);
std::size_t worker_count();

/// Runs fn over [0, n) split into contiguous [begin, end) chunks, one chunk
/// per worker. fn must only write to locations derived from its own indices.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn);

/// Pairwise (cascade) summation; bit-identical for a fixed element order.
double pairwise_sum(std::span<const double> values);

/// Pairwise summation of fn(0), ..., fn(n-1) without materialising a buffer.
double pairwise_sum(std::size_t n,
                    const std::function<double(std::size_t)>& fn);

}  // namespace octquant
