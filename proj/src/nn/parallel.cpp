#include "canht/nn/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#include "canht/core/error.hpp"

namespace canht::nn {

namespace {

int resolve_thread_count() {
  if (const char* env = std::getenv("CANHT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1 || n > 4096)
      throw config_error("CANHT_THREADS must be an integer in [1, 4096]");
    return static_cast<int>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

thread_local bool g_inside_parallel = false;

// Pool of thread_count()-1 helpers; the calling thread always executes chunk 0,
// so a single-lane configuration never context-switches. The instance is
// intentionally leaked: helpers block on the condition variable forever and
// joining them at static destruction would hang or terminate.
class Pool {
 public:
  static Pool& instance() {
    static Pool* pool = new Pool(thread_count());
    return *pool;
  }

  void run(std::int64_t n,
           const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    const int lanes = lanes_;
    if (lanes == 1 || n == 1 || g_inside_parallel) {
      body(0, n);
      return;
    }
    const std::int64_t chunk = (n + lanes - 1) / lanes;
    int with_work = 0;
    {
      std::lock_guard<std::mutex> lock(mu_);
      body_ = &body;
      n_ = n;
      chunk_ = chunk;
      for (int lane = 1; lane < lanes; ++lane) {
        if (lane * chunk < n) ++with_work;
      }
      pending_ = with_work;
      ++generation_;
    }
    cv_go_.notify_all();
    g_inside_parallel = true;
    body(0, std::min<std::int64_t>(chunk, n));
    g_inside_parallel = false;
    if (with_work > 0) {
      std::unique_lock<std::mutex> lock(mu_);
      cv_done_.wait(lock, [&] { return pending_ == 0; });
    }
  }

 private:
  explicit Pool(int lanes) : lanes_(lanes) {
    for (int lane = 1; lane < lanes; ++lane) {
      workers_.emplace_back([this, lane] { worker(lane); });
      workers_.back().detach();
    }
  }

  void worker(int lane) {
    std::uint64_t seen = 0;
    g_inside_parallel = true;
    for (;;) {
      const std::function<void(std::int64_t, std::int64_t)>* body = nullptr;
      std::int64_t begin = 0, end = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_go_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        begin = lane * chunk_;
        end = std::min<std::int64_t>(begin + chunk_, n_);
        if (begin >= n_) continue;
        body = body_;
      }
      (*body)(begin, end);
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--pending_ == 0) cv_done_.notify_all();
      }
    }
  }

  int lanes_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_go_, cv_done_;
  const std::function<void(std::int64_t, std::int64_t)>* body_ = nullptr;
  std::int64_t n_ = 0, chunk_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
};

}  // namespace

int thread_count() {
  static const int n = resolve_thread_count();
  return n;
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  Pool::instance().run(n, body);
}

}  // namespace canht::nn
