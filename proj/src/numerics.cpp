#include "zskip/numerics.hpp"

#include <cmath>
#include <string>

#include "zskip/errors.hpp"

namespace zskip {

void validate(const LayerQuant& q) {
  if (!(q.weight_scale > 0.0) || !std::isfinite(q.weight_scale))
    throw QuantizationError("weight_scale must be a positive finite value, got " +
                            std::to_string(q.weight_scale));
  if (q.act_shift < 0 || q.act_shift > 31)
    throw QuantizationError("act_shift must be in [0, 31], got " + std::to_string(q.act_shift));
}

double round_half_away(double x) { return std::round(x); }

QVal quantize(double x, double scale) {
  if (!std::isfinite(x)) throw QuantizationError("cannot quantize non-finite value");
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw QuantizationError("quantization scale must be positive and finite");
  const double m = round_half_away(std::fabs(x) * scale);
  const int mag = m >= kMaxMagnitude ? kMaxMagnitude : static_cast<int>(m);
  return QVal(x < 0.0, mag);
}

std::int64_t shift_round(std::int64_t value, int shift) {
  if (shift == 0) return value;
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  if (value >= 0) return (value + half) >> shift;
  return -((-value + half) >> shift);
}

QVal requantize(Acc value, const LayerQuant& q) {
  std::int64_t v = shift_round(value, q.act_shift);
  if (q.apply_relu && v < 0) v = 0;
  return QVal::from_int(v);
}

}  // namespace zskip
