#include "octquant/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace octquant {

namespace {

std::size_t default_workers() {
  if (const char* env = std::getenv("OCT_QUANT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && n > 0) return static_cast<std::size_t>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

std::atomic<std::size_t> g_workers{0};  // 0 = resolve lazily

}  // namespace

void set_worker_count(std::size_t n) { g_workers.store(n); }

std::size_t worker_count() {
  const std::size_t n = g_workers.load();
  return n > 0 ? n : default_workers();
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }

  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};

  auto run = [&](std::size_t begin, std::size_t end) {
    try {
      fn(begin, end);
    } catch (...) {
      bool expected = false;
      if (failed.compare_exchange_strong(expected, true))
        first_error = std::current_exception();
    }
  };

  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(begin + chunk, n);
    if (begin >= end) break;
    threads.emplace_back(run, begin, end);
  }
  run(0, std::min(chunk, n));
  for (auto& t : threads) t.join();

  if (first_error) std::rethrow_exception(first_error);
}

namespace {

double pairwise_block(std::span<const double> values) {
  constexpr std::size_t kLeaf = 32;
  if (values.size() <= kLeaf) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_block(values.first(half)) +
         pairwise_block(values.subspan(half));
}

double pairwise_fn(std::size_t begin, std::size_t end,
                   const std::function<double(std::size_t)>& fn) {
  constexpr std::size_t kLeaf = 32;
  if (end - begin <= kLeaf) {
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += fn(i);
    return sum;
  }
  const std::size_t mid = begin + (end - begin) / 2;
  return pairwise_fn(begin, mid, fn) + pairwise_fn(mid, end, fn);
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  return pairwise_block(values);
}

double pairwise_sum(std::size_t n,
                    const std::function<double(std::size_t)>& fn) {
  if (n == 0) return 0.0;
  return pairwise_fn(0, n, fn);
}

}  // namespace octquant
