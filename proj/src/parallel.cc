#include "fusionforge/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace fusionforge {

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body) {
  std::vector<std::exception_ptr> errors(count);
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

unsigned threads_from_env(unsigned fallback) {
  const char* raw = std::getenv("FUSIONFORGE_THREADS");
  if (raw == nullptr) return fallback;
  try {
    const long value = std::stol(raw);
    return value >= 1 ? static_cast<unsigned>(value) : fallback;
  } catch (...) {
    return fallback;
  }
}

}  // namespace fusionforge
