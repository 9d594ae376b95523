#include "zskip/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "zskip/errors.hpp"

namespace zskip {

namespace {

QVal random_nonzero(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> mag(1, kMaxMagnitude);
  std::bernoulli_distribution neg(0.5);
  return QVal(neg(rng), mag(rng));
}

}  // namespace

NetworkModel synthesize_weights(const NetworkModel& src, const SyntheticWeights& s, std::uint64_t seed) {
  if (s.exact_nnz < 0 && !(s.sparsity >= 0.0 && s.sparsity <= 1.0))
    throw Error("synthetic sparsity must lie in [0, 1]");
  NetworkModel m = src;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution zero(std::clamp(s.sparsity, 0.0, 1.0));
  for (auto& l : m.layers) {
    if (l.kind != LayerKind::Conv) continue;
    const int k = l.conv.kernel;
    const int support = k * k;
    l.weights.clear();
    l.bias.clear();
    l.qweights.assign(static_cast<std::size_t>(l.conv.out_channels) * l.conv.in_channels * support, QVal{});
    l.bias_acc.assign(l.conv.out_channels, 0);
    l.quant = LayerQuant{1.0, 7, true};
    std::vector<int> positions(support);
    for (std::size_t t = 0; t < l.qweights.size() / support; ++t) {
      QVal* tile = l.qweights.data() + t * support;
      if (s.exact_nnz >= 0) {
        std::iota(positions.begin(), positions.end(), 0);
        std::shuffle(positions.begin(), positions.end(), rng);
        for (int i = 0; i < std::min(s.exact_nnz, support); ++i) tile[positions[i]] = random_nonzero(rng);
      } else {
        for (int i = 0; i < support; ++i)
          if (!zero(rng)) tile[i] = random_nonzero(rng);
      }
    }
  }
  return m;
}

NetworkModel random_toy_network(std::mt19937_64& rng, const ToyNetOptions& opt) {
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  NetworkModel m;
  m.name = "toy";
  m.input = {uniform(1, opt.max_channels), uniform(std::max(4, opt.max_size / 2), opt.max_size),
             uniform(std::max(4, opt.max_size / 2), opt.max_size)};
  m.input_scale = 1.0;
  int c = m.input.channels, h = m.input.height, w = m.input.width;
  const int convs = uniform(1, opt.max_conv_layers);
  std::uniform_real_distribution<double> weight(-1.0, 1.0);
  for (int i = 0; i < convs; ++i) {
    const std::string id = std::to_string(i + 1);
    if (opt.allow_pad && chance(0.6)) {
      LayerSpec pad;
      pad.name = "pad" + id;
      pad.kind = LayerKind::Pad;
      pad.pad.border = uniform(1, 2);
      h += 2 * pad.pad.border;
      w += 2 * pad.pad.border;
      m.layers.push_back(pad);
    }
    LayerSpec conv;
    conv.name = "conv" + id;
    conv.kind = LayerKind::Conv;
    conv.conv.kernel = uniform(1, std::min({opt.max_kernel, h, w}));
    conv.conv.in_channels = c;
    conv.conv.out_channels = uniform(1, opt.max_channels);
    conv.weights.resize(static_cast<std::size_t>(conv.conv.out_channels) * c * conv.conv.kernel * conv.conv.kernel);
    for (auto& v : conv.weights) v = weight(rng);
    conv.bias.resize(conv.conv.out_channels);
    for (auto& b : conv.bias) b = weight(rng) * 0.05;
    double max_abs = 0.0;
    for (double v : conv.weights) max_abs = std::max(max_abs, std::fabs(v));
    // Fixed before pruning so that a fully pruned layer still quantizes.
    conv.quant.weight_scale = kMaxMagnitude / max_abs;
    conv.weight_scale_given = true;
    conv.quant.apply_relu = chance(0.7);
    // Keep accumulators in a range where requantized outputs are not all saturated.
    const double fan_in = static_cast<double>(c) * conv.conv.kernel * conv.conv.kernel;
    conv.quant.act_shift = 7 + static_cast<int>(std::ceil(std::log2(std::sqrt(fan_in)))) + uniform(-1, 1);
    conv.act_shift_given = true;
    c = conv.conv.out_channels;
    h -= conv.conv.kernel - 1;
    w -= conv.conv.kernel - 1;
    m.layers.push_back(conv);
    if (opt.allow_pool && h >= 2 && w >= 2 && chance(0.4)) {
      LayerSpec pool;
      pool.name = "pool" + id;
      pool.kind = LayerKind::MaxPool;
      pool.pool = PoolParams{2, 2, 2, 2};
      h = (h - 2) / 2 + 1;
      w = (w - 2) / 2 + 1;
      m.layers.push_back(pool);
    }
  }
  check_shapes(m);
  const double prune = std::uniform_real_distribution<double>(0.0, opt.max_pruning)(rng);
  NetworkModel pruned = prune > 0.0 ? prune_magnitude(m, PruneRule::sparsity(prune)).model : m;
  return quantize_network(pruned);
}

PlanarTensor random_image(std::mt19937_64& rng, const Shape& s) {
  PlanarTensor p(s.channels, s.height, s.width);
  std::uniform_int_distribution<int> v(-kMaxMagnitude, kMaxMagnitude);
  for (auto& x : p.values) x = QVal::from_int(v(rng));
  return p;
}

NetworkModel vgg16_geometry() {
  NetworkModel m;
  m.name = "vgg16";
  m.input = {3, 224, 224};
  const int blocks[5][2] = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
  int c = 3;
  for (int b = 0; b < 5; ++b) {
    for (int i = 0; i < blocks[b][0]; ++i) {
      const std::string id = std::to_string(b + 1) + "_" + std::to_string(i + 1);
      LayerSpec pad;
      pad.name = "pad" + id;
      pad.kind = LayerKind::Pad;
      pad.pad.border = 1;
      m.layers.push_back(pad);
      LayerSpec conv;
      conv.name = "conv" + id;
      conv.kind = LayerKind::Conv;
      conv.conv = {c, blocks[b][1], 3};
      m.layers.push_back(conv);
      c = blocks[b][1];
    }
    LayerSpec pool;
    pool.name = "pool" + std::to_string(b + 1);
    pool.kind = LayerKind::MaxPool;
    m.layers.push_back(pool);
  }
  const int fcs[3][2] = {{512 * 7 * 7, 4096}, {4096, 4096}, {4096, 1000}};
  for (int i = 0; i < 3; ++i) {
    LayerSpec fc;
    fc.name = "fc" + std::to_string(i + 6);
    fc.kind = LayerKind::FullyConnected;
    fc.fc = {fcs[i][0], fcs[i][1]};
    fc.quant.apply_relu = i < 2;
    m.layers.push_back(fc);
  }
  check_shapes(m);
  return m;
}

}  // namespace zskip
