// numerics.hpp - 8-bit sign+magnitude fixed point and the integer arithmetic
// shared by the packer, the engine and the reference oracle.
//
// Every value flowing through the accelerator is a QVal: one sign bit and a
// 7-bit magnitude. Products are accumulated at full width in a 32-bit Acc and
// brought back to QVal by a per-layer power-of-two shift (round half away
// from zero), optionally followed by ReLU.
#pragma once

#include <cstdint>
#include <compare>

namespace zskip {

inline constexpr int kMaxMagnitude = 127;

class QVal {
 public:
  constexpr QVal() = default;

  // Saturates the magnitude to 127 and canonicalizes zero to (+, 0).
  constexpr QVal(bool negative, int magnitude)
      : magnitude_(static_cast<std::uint8_t>(magnitude < 0 ? 0
                                             : magnitude > kMaxMagnitude
                                                 ? kMaxMagnitude
                                                 : magnitude)),
        negative_(negative && magnitude_ != 0) {}

  // Saturating conversion from a signed integer.
  static constexpr QVal from_int(std::int64_t v) {
    if (v < 0) return QVal(true, v < -kMaxMagnitude ? kMaxMagnitude : static_cast<int>(-v));
    return QVal(false, v > kMaxMagnitude ? kMaxMagnitude : static_cast<int>(v));
  }

  constexpr bool negative() const { return negative_; }
  constexpr int magnitude() const { return magnitude_; }
  constexpr bool is_zero() const { return magnitude_ == 0; }
  constexpr int to_int() const { return negative_ ? -int(magnitude_) : int(magnitude_); }

  // Wire encoding: bit 7 = sign, bits 6..0 = magnitude.
  constexpr std::uint8_t to_byte() const {
    return static_cast<std::uint8_t>((negative_ ? 0x80 : 0x00) | magnitude_);
  }
  // Returns false for 0x80 (negative zero), which no writer ever produces.
  static constexpr bool from_byte(std::uint8_t b, QVal& out) {
    if (b == 0x80) return false;
    out = QVal((b & 0x80) != 0, b & 0x7F);
    return true;
  }

  friend constexpr bool operator==(QVal a, QVal b) = default;

  // Signed order: -127 < ... < 0 < ... < +127.
  friend constexpr std::strong_ordering operator<=>(QVal a, QVal b) {
    return a.to_int() <=> b.to_int();
  }

 private:
  std::uint8_t magnitude_ = 0;
  bool negative_ = false;
};

using Acc = std::int32_t;

struct LayerQuant {
  double weight_scale = 1.0;
  int act_shift = 0;
  bool apply_relu = true;
};

// Throws QuantizationError if weight_scale <= 0 or act_shift outside [0, 31].
void validate(const LayerQuant& q);

// sign(x) * min(127, round_half_away(|x| * scale)). Throws QuantizationError
// for non-finite x or non-positive scale.
QVal quantize(double x, double scale);

// Inverse scaling of quantize, used by tests and reports.
inline double dequantize(QVal v, double scale) { return v.to_int() / scale; }

// Signed product of two QVals, in [-16129, 16129].
constexpr std::int32_t mul(QVal a, QVal b) {
  const std::int32_t p = a.magnitude() * b.magnitude();
  return a.negative() != b.negative() ? -p : p;
}

// round_half_away(value / 2^shift), ReLU if requested, saturate to QVal.
QVal requantize(Acc value, const LayerQuant& q);

// Integer division by 2^shift with round half away from zero.
std::int64_t shift_round(std::int64_t value, int shift);

// round_half_away_from_zero for reals.
double round_half_away(double x);

}  // namespace zskip
