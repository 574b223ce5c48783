// SPDX-License-Identifier: Apache-2.0
#include "common.hpp"

#include <atomic>
#include <cstdio>
#include <thread>
#include <vector>

namespace pwtk {

namespace {
std::atomic<int> g_threads{1};
}

int thread_count() { return g_threads.load(); }

void set_thread_count(int n) {
  if (n < 1) n = 1;
  g_threads.store(n);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const int workers = thread_count();
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(t);
  std::atomic<std::size_t> next{0};
  for (std::size_t w = 0; w < t; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

void log_step(const std::string& stage, const std::string& event, const std::string& detail_json) {
  std::fprintf(stderr, "{\"stage\":\"%s\",\"event\":\"%s\",\"detail\":%s}\n", stage.c_str(), event.c_str(),
               detail_json.c_str());
  std::fflush(stderr);
}

}  // namespace pwtk
