// oracle.hpp - plain reference implementations in the engine's integer
// arithmetic. Slow and obvious on purpose; everything else is checked
// against these.
#pragma once

#include <span>
#include <vector>

#include "zskip/layout.hpp"
#include "zskip/netmodel.hpp"
#include "zskip/numerics.hpp"

namespace zskip {

struct PlanarTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<QVal> values;  // (c*height + y)*width + x

  PlanarTensor() = default;
  PlanarTensor(int c, int h, int w)
      : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w) {}

  QVal& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  QVal at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  Shape shape() const { return {channels, height, width}; }
  friend bool operator==(const PlanarTensor&, const PlanarTensor&) = default;
};

PlanarTensor to_planar(const TiledTensor& t);
TiledTensor to_tiled(const PlanarTensor& p);

// Valid stride-1 convolution; weights are [out][in][k][k]. Throws ShapeError.
PlanarTensor conv2d_ref(const PlanarTensor& in, std::span<const QVal> weights, int out_channels, int kernel,
                        std::span<const Acc> bias, const LayerQuant& q);
PlanarTensor conv2d_ref(const PlanarTensor& in, const LayerSpec& conv);

// Pre-requantization accumulators of the same convolution.
std::vector<std::int64_t> conv2d_acc_ref(const PlanarTensor& in, std::span<const QVal> weights, int out_channels,
                                         int kernel, std::span<const Acc> bias);

PlanarTensor maxpool_ref(const PlanarTensor& in, const PoolParams& p);
PlanarTensor pad_ref(const PlanarTensor& in, int border);

struct RefResult {
  // One per model layer; host layers hold an N x 1 x 1 tensor.
  std::vector<PlanarTensor> activations;
  std::vector<QVal> scores;  // output of the last layer when it is a host layer
};

// Runs the whole quantized model; fully connected layers use run_fc_host.
RefResult infer_ref(const NetworkModel& m, const PlanarTensor& image);

}  // namespace zskip
