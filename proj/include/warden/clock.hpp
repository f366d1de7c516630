#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace warden {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() const override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }
};

// Simulated time for scenario runs; starts at a fixed epoch so transcripts
// are reproducible.
class ManualClock final : public Clock {
 public:
  static constexpr std::int64_t kEpochMs = 1'650'000'000'000;

  explicit ManualClock(std::int64_t start_ms = kEpochMs) : now_(start_ms) {}
  std::int64_t now_ms() const override { return now_.load(); }
  void advance(std::int64_t ms) { now_ += ms; }

 private:
  std::atomic<std::int64_t> now_;
};

}  // namespace warden
