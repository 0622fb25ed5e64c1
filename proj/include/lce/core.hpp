#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lce {

// Error taxonomy mirrors the CLI exit codes: config/usage problems and I/O
// failures are distinguishable from plain invariant violations.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

namespace detail {
template <class... Args>
[[noreturn]] void fail(const char* file, int line, Args&&... args) {
  std::ostringstream oss;
  oss << file << ":" << line << ": ";
  (oss << ... << args);
  throw Error(oss.str());
}
}  // namespace detail

#define LCE_CHECK(cond, ...)                                 \
  do {                                                       \
    if (!(cond))                                             \
      ::lce::detail::fail(__FILE__, __LINE__, "check failed: " #cond " — ", \
                          __VA_ARGS__);                      \
  } while (0)

using index_t = std::int64_t;

// Thread cap for internal parallelism. LCE_THREADS=0/unset means one thread
// per hardware core.
inline int max_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("LCE_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

// Splits [0, n) into contiguous chunks, one worker per chunk. Each index is
// written by exactly one worker, so results do not depend on the split —
// determinism holds for any LCE_THREADS value.
inline void parallel_for(index_t n, const std::function<void(index_t, index_t)>& body) {
  const int nt = max_threads();
  if (n <= 0) return;
  if (nt <= 1 || n < 2048) {
    body(0, n);
    return;
  }
  const int workers = static_cast<int>(std::min<index_t>(nt, n));
  const index_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) {
    index_t b = w * chunk;
    index_t e = std::min<index_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(0, std::min<index_t>(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace lce
