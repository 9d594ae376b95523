// synthetic.hpp - generated weights and networks.
//
// Synthetic weights let geometry-only models (the VGG-16 preset) run through
// the packer and the cycle model. Random toy networks drive the
// engine-versus-oracle sweeps.
#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "zskip/netmodel.hpp"
#include "zskip/oracle.hpp"

namespace zskip {

struct SyntheticWeights {
  // Probability that a position inside the k x k support is zero.
  double sparsity = 0.0;
  // When >= 0, every weight tile gets exactly min(exact_nnz, k*k) nonzeros
  // at random positions instead.
  int exact_nnz = -1;
};

// Fills quantized weights of every conv layer with random nonzero values
// (magnitude 1..127, random sign) on the drawn pattern. Zero biases,
// weight_scale 1 and act_shift 7. Fully connected layers are left alone.
NetworkModel synthesize_weights(const NetworkModel& m, const SyntheticWeights& s, std::uint64_t seed);

struct ToyNetOptions {
  int max_conv_layers = 3;
  int max_channels = 8;
  int max_size = 16;
  int max_kernel = 3;
  double max_pruning = 0.9;
  bool allow_pool = true;
  bool allow_pad = true;
};

// Random conv/pad/2x2-pool stack with real weights, magnitude-pruned by a
// random fraction and quantized.
NetworkModel random_toy_network(std::mt19937_64& rng, const ToyNetOptions& opt = {});

// Random planar image covering the full signed range.
PlanarTensor random_image(std::mt19937_64& rng, const Shape& s);

// 13 conv, 13 pad, 5 max-pool and 3 fully connected layers; geometry only.
NetworkModel vgg16_geometry();

}  // namespace zskip
