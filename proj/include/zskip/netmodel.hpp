// netmodel.hpp - network description, manifest I/O, pruning and quantization.
//
// This is the offline side of the flow: a JSON manifest names the layers and
// raw float32 tensor files; the model is shape-checked on load, optionally
// magnitude-pruned, then quantized to sign+magnitude weights with a per-layer
// max-abs scale.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "zskip/layout.hpp"
#include "zskip/numerics.hpp"

namespace zskip {

enum class LayerKind { Conv, Pad, MaxPool, FullyConnected, Flatten };

const char* to_string(LayerKind k);

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::size_t elements() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

struct ConvParams {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
};

struct PadParams {
  int border = 0;
};

struct PoolParams {
  int window_h = 2;
  int window_w = 2;
  int stride_h = 2;
  int stride_w = 2;
};

struct FcParams {
  int in_features = 0;
  int out_features = 0;
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  ConvParams conv;
  PadParams pad;
  PoolParams pool;
  FcParams fc;

  LayerQuant quant;
  bool weight_scale_given = false;
  bool act_shift_given = false;

  // Real weights: conv [out][in][k][k], fc [out][in]. Empty for geometry-only layers.
  std::vector<double> weights;
  std::vector<double> bias;  // per output; empty means zero bias

  // Filled by quantize_network.
  std::vector<QVal> qweights;
  std::vector<Acc> bias_acc;

  // Filled by shape checking.
  Shape input;
  Shape output;

  bool has_weights() const { return !weights.empty(); }
  bool is_quantized() const { return !qweights.empty(); }
  bool is_weighted() const { return kind == LayerKind::Conv || kind == LayerKind::FullyConnected; }
  std::size_t weight_count() const;

  // Quantized conv weight (o, c, i, j).
  QVal qweight(int o, int c, int i, int j) const {
    const int k = conv.kernel;
    return qweights[((static_cast<std::size_t>(o) * conv.in_channels + c) * k + i) * k + j];
  }
};

struct NetworkModel {
  std::string name;
  Shape input;
  double input_scale = 1.0;
  std::vector<double> input_mean;  // per input channel; empty means no mean subtraction
  std::vector<LayerSpec> layers;

  const LayerSpec& layer(const std::string& name) const;
};

// Computes input/output shapes for every layer and validates layer parameters.
// Throws ShapeError naming the offending layer.
void check_shapes(NetworkModel& m);

NetworkModel load_network(const std::string& manifest_path);
// Parses a manifest document; relative tensor paths resolve against base_dir.
NetworkModel parse_network(const std::string& json_text, const std::string& base_dir);
// Writes manifest.json-style output plus tensor files next to it.
void save_network(const NetworkModel& m, const std::string& manifest_path);

std::vector<float> read_f32_file(const std::string& path, std::size_t expected_count);
void write_f32_file(const std::string& path, std::span<const double> values);

struct LayerSparsity {
  std::string layer;
  std::int64_t total = 0;
  std::int64_t nonzero = 0;
  std::array<std::int64_t, kTileSize + 1> tile_histogram{};  // conv layers only
};

struct SparsityReport {
  std::vector<LayerSparsity> layers;
  const LayerSparsity& at(const std::string& layer) const;
};

// Counts quantized weights when present, otherwise real weights.
SparsityReport sparsity_report(const NetworkModel& m);

struct PruneRule {
  enum class Mode { Threshold, TargetSparsity };
  Mode mode = Mode::Threshold;
  double value = 0.0;

  static PruneRule threshold(double t) { return {Mode::Threshold, t}; }
  static PruneRule sparsity(double s) { return {Mode::TargetSparsity, s}; }
};

struct PruneResult {
  NetworkModel model;
  SparsityReport report;
};

// Threshold mode zeroes |w| < t. Sparsity mode picks the smallest threshold
// that zeroes at least the requested fraction of the layer's weights.
double threshold_for_sparsity(std::span<const double> weights, double target);
PruneResult prune_magnitude(const NetworkModel& m, const PruneRule& every_layer);
PruneResult prune_magnitude(const NetworkModel& m, const std::map<std::string, PruneRule>& rules);

// Default act_shift when the manifest gives none: keeps the activation scale
// roughly constant across the layer.
int default_act_shift(double weight_scale);

// Per-layer max-abs weight scale, quantized weights and bias accumulator inits.
NetworkModel quantize_network(const NetworkModel& m);

// Activation scale at the input of every layer (index = layer), plus the final
// output scale at index layers.size().
std::vector<double> activation_scales(const NetworkModel& m);

// Subtracts the per-channel mean (empty = none), quantizes with the model's
// input scale and tiles. Throws ShapeError on size mismatch.
TiledTensor ingest_planar(std::span<const float> planar, std::span<const double> mean,
                          const NetworkModel& m);
TiledTensor ingest_image(const std::string& path, std::span<const double> mean,
                         const NetworkModel& m);

}  // namespace zskip
