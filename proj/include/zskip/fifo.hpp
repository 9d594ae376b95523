// Bounded FIFO channels and the cooperative scheduler that drives engine units.
//
// Units never block: try_push on a full queue and try_pop on an empty one
// fail and are counted as stalls, and the scheduler simply moves on. A pass
// in which no unit makes progress while work remains is a deadlock.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zskip/errors.hpp"

namespace zskip {

template <typename T>
class BoundedFifo {
 public:
  explicit BoundedFifo(std::size_t depth, std::string name = {}) : depth_(depth), name_(std::move(name)) {
    if (depth_ == 0) throw Error("fifo depth must be at least 1");
  }

  bool full() const { return items_.size() >= depth_; }
  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  std::size_t depth() const { return depth_; }
  const std::string& name() const { return name_; }

  bool try_push(T v) {
    if (full()) {
      ++push_stalls_;
      return false;
    }
    items_.push_back(std::move(v));
    ++pushed_;
    return true;
  }

  std::optional<T> try_pop() {
    if (items_.empty()) {
      ++pop_stalls_;
      return std::nullopt;
    }
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  const T* peek() const { return items_.empty() ? nullptr : &items_.front(); }

  std::int64_t push_stalls() const { return push_stalls_; }
  std::int64_t pop_stalls() const { return pop_stalls_; }
  std::int64_t pushed() const { return pushed_; }

 private:
  std::size_t depth_;
  std::string name_;
  std::deque<T> items_;
  std::int64_t push_stalls_ = 0;
  std::int64_t pop_stalls_ = 0;
  std::int64_t pushed_ = 0;
};

class Unit {
 public:
  explicit Unit(std::string name) : name_(std::move(name)) {}
  virtual ~Unit() = default;
  const std::string& name() const { return name_; }
  // Does at most one unit of work; returns false if nothing could be done.
  virtual bool step() = 0;

 private:
  std::string name_;
};

// Steps every unit once per pass until done() holds. With a nonzero seed the
// order of units is reshuffled on every pass. Throws DeadlockError carrying
// snapshot() when a whole pass makes no progress.
inline std::int64_t run_units(std::span<Unit* const> units, const std::function<bool()>& done,
                              const std::function<std::string()>& snapshot, std::uint64_t seed = 0) {
  std::vector<Unit*> order(units.begin(), units.end());
  std::mt19937_64 rng(seed);
  std::int64_t passes = 0;
  while (!done()) {
    if (seed != 0) std::shuffle(order.begin(), order.end(), rng);
    bool progressed = false;
    for (Unit* u : order) progressed = u->step() || progressed;
    ++passes;
    if (!progressed && !done()) throw DeadlockError("deadlock: no unit can progress; " + snapshot());
  }
  return passes;
}

}  // namespace zskip
