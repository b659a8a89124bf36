#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "vbl/error.hpp"
#include "vbl/scene.hpp"

namespace vbl {

/// Per-measurement quantization bits in canonical layout order. Entries are
/// real during continuous optimization and integral once discretized.
class BitAllocation {
 public:
  BitAllocation() = default;
  explicit BitAllocation(std::vector<double> bits) : bits_(std::move(bits)) {}
  BitAllocation(std::size_t dimension, double value) : bits_(dimension, value) {}

  std::size_t size() const { return bits_.size(); }
  double operator[](std::size_t i) const { return bits_[i]; }
  double& operator[](std::size_t i) { return bits_[i]; }

  std::span<const double> span() const { return bits_; }
  std::span<double> span() { return bits_; }
  const std::vector<double>& values() const { return bits_; }

  double sum() const { return std::accumulate(bits_.begin(), bits_.end(), 0.0); }

  bool is_integral() const {
    for (double b : bits_) {
      if (b != std::floor(b)) return false;
    }
    return true;
  }

  bool operator==(const BitAllocation&) const = default;

 private:
  std::vector<double> bits_;
};

/// Length must match the scenario; entries finite and nonnegative.
inline void check_allocation(const Scenario& s, std::span<const double> bits) {
  if (bits.size() != s.dimension()) {
    throw Error(ErrorCode::dimension_mismatch,
                "allocation has " + std::to_string(bits.size()) + " entries, scenario needs " +
                    std::to_string(s.dimension()));
  }
  for (double b : bits) {
    if (!(b >= 0.0) || !std::isfinite(b)) {
      throw Error(ErrorCode::invalid_input, "allocation entries must be finite and nonnegative");
    }
  }
}

}  // namespace vbl
