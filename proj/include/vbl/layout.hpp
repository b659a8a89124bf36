#pragma once

#include <cassert>
#include <cstddef>

namespace vbl {

enum class MeasurementKind { pixel, range };

/// A single scalar measurement. For pixel measurements `first` is the
/// feature, `second` the vehicle and `axis` is 0 (x) or 1 (y). For range
/// measurements `first < second` are the two vehicles and `axis` is 2.
struct MeasurementId {
  MeasurementKind kind;
  std::size_t first;
  std::size_t second;
  int axis;
};

/// Canonical ordering of the bit-allocation vector.
///
/// Pixel x-coordinates of every (feature, vehicle) pair come first, then the
/// y-coordinates, each block row-major with the feature index outer and the
/// vehicle index inner. Range measurements follow, one per unordered vehicle
/// pair in lexicographic order.
class MeasurementLayout {
 public:
  MeasurementLayout() = default;
  MeasurementLayout(std::size_t n_features, std::size_t n_vehicles)
      : n_f_(n_features), n_v_(n_vehicles) {}

  std::size_t n_features() const { return n_f_; }
  std::size_t n_vehicles() const { return n_v_; }
  std::size_t n_nodes() const { return n_f_ + n_v_; }

  std::size_t pixel_count() const { return 2 * n_f_ * n_v_; }
  std::size_t pair_count() const { return n_v_ * (n_v_ - 1) / 2; }
  std::size_t dimension() const { return pixel_count() + pair_count(); }
  std::size_t fim_size() const { return 3 * n_nodes(); }

  std::size_t pixel(std::size_t feature, std::size_t vehicle, int axis) const {
    assert(feature < n_f_ && vehicle < n_v_ && (axis == 0 || axis == 1));
    return static_cast<std::size_t>(axis) * n_f_ * n_v_ + feature * n_v_ + vehicle;
  }

  /// Index of the range measurement between vehicles a and b (any order).
  std::size_t range(std::size_t a, std::size_t b) const {
    assert(a != b && a < n_v_ && b < n_v_);
    if (a > b) {
      const std::size_t t = a;
      a = b;
      b = t;
    }
    // pairs before row a: sum_{r<a} (n_v - 1 - r)
    const std::size_t before = a * (2 * n_v_ - a - 1) / 2;
    return pixel_count() + before + (b - a - 1);
  }

  bool is_pixel(std::size_t index) const { return index < pixel_count(); }

  MeasurementId decode(std::size_t index) const {
    assert(index < dimension());
    if (index < pixel_count()) {
      const std::size_t block = n_f_ * n_v_;
      const int axis = static_cast<int>(index / block);
      const std::size_t rem = index % block;
      return {MeasurementKind::pixel, rem / n_v_, rem % n_v_, axis};
    }
    std::size_t rem = index - pixel_count();
    std::size_t a = 0;
    while (rem >= n_v_ - 1 - a) {
      rem -= n_v_ - 1 - a;
      ++a;
    }
    return {MeasurementKind::range, a, a + 1 + rem, 2};
  }

  /// Node offsets in the stacked position vector: features first, then vehicles.
  std::size_t feature_node(std::size_t feature) const { return feature; }
  std::size_t vehicle_node(std::size_t vehicle) const { return n_f_ + vehicle; }

 private:
  std::size_t n_f_ = 0;
  std::size_t n_v_ = 0;
};

}  // namespace vbl
