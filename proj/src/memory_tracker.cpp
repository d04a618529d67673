#include "cascade3d/memory_tracker.hpp"

#include <algorithm>

namespace cascade3d {

MemoryTracker& MemoryTracker::instance() {
  static MemoryTracker tracker;
  return tracker;
}

void MemoryTracker::on_allocate(std::size_t bytes) noexcept {
  const auto now = current_.fetch_add(static_cast<std::int64_t>(bytes), std::memory_order_relaxed) +
                   static_cast<std::int64_t>(bytes);
  auto seen = peak_.load(std::memory_order_relaxed);
  while (now > seen && !peak_.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
  }
}

void MemoryTracker::on_deallocate(std::size_t bytes) noexcept {
  current_.fetch_sub(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
}

std::int64_t MemoryTracker::reset_peak() noexcept {
  return peak_.exchange(current(), std::memory_order_relaxed);
}

void MemoryTracker::restore_peak(std::int64_t value) noexcept {
  auto seen = peak_.load(std::memory_order_relaxed);
  while (value > seen && !peak_.compare_exchange_weak(seen, value, std::memory_order_relaxed)) {
  }
}

MemoryScope::MemoryScope() noexcept
    : baseline_(MemoryTracker::instance().current()),
      outer_peak_(MemoryTracker::instance().reset_peak()) {}

MemoryScope::~MemoryScope() { MemoryTracker::instance().restore_peak(outer_peak_); }

std::int64_t MemoryScope::peak_above_baseline() const noexcept {
  return std::max<std::int64_t>(0, MemoryTracker::instance().peak() - baseline_);
}

std::int64_t measure_runtime_memory(const std::function<void()>& run) {
  MemoryScope scope;
  if (run) run();
  return scope.peak_above_baseline();
}

}  // namespace cascade3d
