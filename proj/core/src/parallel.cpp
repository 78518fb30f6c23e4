#include "leafvit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace leafvit {

namespace {

std::atomic<std::size_t> thread_override{0};

std::size_t env_threads() {
  static const std::size_t value = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LEAFVIT_THREADS")) {
      try {
        const long n = std::stol(env);
        if (n >= 1) return std::min<std::size_t>(static_cast<std::size_t>(n), hw);
      } catch (const std::exception&) {
      }
    }
    return hw;
  }();
  return value;
}

}  // namespace

std::size_t worker_threads() {
  const std::size_t o = thread_override.load();
  return o ? o : env_threads();
}

void set_worker_threads(std::size_t n) { thread_override.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t begin = chunk; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    threads.emplace_back([&, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  try {
    body(0, std::min(n, chunk));
  } catch (...) {
    std::lock_guard lock(failure_mutex);
    if (!failure) failure = std::current_exception();
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace leafvit
