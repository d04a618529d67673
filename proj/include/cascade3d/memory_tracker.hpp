#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <new>
#include <vector>

namespace cascade3d {

// Process-wide accounting of tensor and volume payload bytes. Only buffers
// allocated through TrackedAllocator are counted; scratch space inside
// kernels (im2col columns and the like) is deliberately outside the model.
class MemoryTracker {
 public:
  static MemoryTracker& instance();

  void on_allocate(std::size_t bytes) noexcept;
  void on_deallocate(std::size_t bytes) noexcept;

  std::int64_t current() const noexcept { return current_.load(std::memory_order_relaxed); }
  std::int64_t peak() const noexcept { return peak_.load(std::memory_order_relaxed); }

  // Resets the watermark to the current level and returns the previous peak.
  std::int64_t reset_peak() noexcept;
  // Raises the watermark to at least `value`.
  void restore_peak(std::int64_t value) noexcept;

 private:
  std::atomic<std::int64_t> current_{0};
  std::atomic<std::int64_t> peak_{0};
};

// Fixed 64-byte alignment keeps vectorised reductions in the same order on
// every run.
inline constexpr std::size_t kBufferAlignment = 64;

template <typename T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    auto* p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
    MemoryTracker::instance().on_allocate(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    MemoryTracker::instance().on_deallocate(n * sizeof(T));
    ::operator delete(p, std::align_val_t{kBufferAlignment});
  }

  template <typename U>
  bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using TrackedVector = std::vector<T, TrackedAllocator<T>>;

// High-water mark of tracked bytes above the level at construction. Scopes
// nest; an inner scope does not hide allocations from the outer one.
class MemoryScope {
 public:
  MemoryScope() noexcept;
  ~MemoryScope();
  MemoryScope(const MemoryScope&) = delete;
  MemoryScope& operator=(const MemoryScope&) = delete;

  std::int64_t baseline() const noexcept { return baseline_; }
  std::int64_t peak_above_baseline() const noexcept;

 private:
  std::int64_t baseline_;
  std::int64_t outer_peak_;
};

// Runs `run` and returns the high-water mark of tracked bytes it allocated.
std::int64_t measure_runtime_memory(const std::function<void()>& run);

}  // namespace cascade3d
