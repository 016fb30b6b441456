#include "wiper/parallel.hpp"

#include <atomic>

namespace wiper {
namespace {
std::atomic<std::size_t> g_thread_limit{1};
}

void set_thread_limit(std::size_t n) noexcept { g_thread_limit.store(n == 0 ? 1 : n); }
std::size_t thread_limit() noexcept { return g_thread_limit.load(); }

}  // namespace wiper
