#include "omg/tensor.hpp"

#include "omg/hash.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

namespace omg {

namespace {

std::atomic<bool> g_serial{false};

std::uint64_t mix_u32(std::uint64_t h, std::uint32_t v) {
  std::byte bytes[4];
  std::memcpy(bytes, &v, 4);
  return fnv1a64(std::span<const std::byte>(bytes, 4), h);
}

}  // namespace

template <class S>
std::uint64_t checksum(const TensorList<S>& tensors) {
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& t : tensors) {
    h = fnv1a64(t.name, h);
    h = mix_u32(h, static_cast<std::uint32_t>(t.value->rows()));
    h = mix_u32(h, static_cast<std::uint32_t>(t.value->cols()));
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      const float f = static_cast<float>(t.value->data()[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      h = mix_u32(h, bits);
    }
  }
  return h;
}

template std::uint64_t checksum<float>(const TensorList<float>&);
template std::uint64_t checksum<double>(const TensorList<double>&);

void set_serial_mode(bool serial) { g_serial.store(serial); }
bool serial_mode() { return g_serial.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, bool serial) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, n);
  if (serial || workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            next.store(n);
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace omg
