#include "crackseg/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace crackseg {

namespace {
std::atomic<int> g_num_threads{1};
}

void set_num_threads(int n) { g_num_threads.store(n < 1 ? 1 : n); }

int num_threads() { return g_num_threads.load(); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) {
    return;
  }
  const int threads = std::min<std::int64_t>(num_threads(), n);
  if (threads <= 1) {
    body(0, n);
    return;
  }
  const std::int64_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    const std::int64_t begin = t * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) {
      break;
    }
    workers.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& w : workers) {
    w.join();
  }
}

}  // namespace crackseg
