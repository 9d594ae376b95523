#include "zskip/oracle.hpp"

#include <algorithm>

#include "zskip/driver.hpp"
#include "zskip/errors.hpp"

namespace zskip {

PlanarTensor to_planar(const TiledTensor& t) {
  PlanarTensor p(t.channels(), t.height(), t.width());
  p.values = untile_tensor(t);
  return p;
}

TiledTensor to_tiled(const PlanarTensor& p) { return tile_tensor(p.values, p.channels, p.width, p.height); }

std::vector<std::int64_t> conv2d_acc_ref(const PlanarTensor& in, std::span<const QVal> w, int out_channels, int k,
                                         std::span<const Acc> bias) {
  if (k < 1 || in.height < k || in.width < k) throw ShapeError("input smaller than the kernel");
  if (w.size() != static_cast<std::size_t>(out_channels) * in.channels * k * k)
    throw ShapeError("weight count does not match the layer geometry");
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels))
    throw ShapeError("bias count does not match the output channels");
  const int ho = in.height - k + 1, wo = in.width - k + 1;
  std::vector<std::int64_t> acc(static_cast<std::size_t>(out_channels) * ho * wo);
  for (int o = 0; o < out_channels; ++o)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        std::int64_t sum = bias.empty() ? 0 : bias[o];
        for (int c = 0; c < in.channels; ++c)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              sum += mul(w[((static_cast<std::size_t>(o) * in.channels + c) * k + i) * k + j], in.at(c, y + i, x + j));
        acc[(static_cast<std::size_t>(o) * ho + y) * wo + x] = sum;
      }
  return acc;
}

PlanarTensor conv2d_ref(const PlanarTensor& in, std::span<const QVal> w, int out_channels, int k,
                        std::span<const Acc> bias, const LayerQuant& q) {
  const auto acc = conv2d_acc_ref(in, w, out_channels, k, bias);
  PlanarTensor out(out_channels, in.height - k + 1, in.width - k + 1);
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = requantize(static_cast<Acc>(acc[i]), q);
  return out;
}

PlanarTensor conv2d_ref(const PlanarTensor& in, const LayerSpec& conv) {
  if (conv.kind != LayerKind::Conv) throw ShapeError("layer '" + conv.name + "' is not a conv layer");
  if (in.channels != conv.conv.in_channels)
    throw ShapeError("layer '" + conv.name + "' expects " + std::to_string(conv.conv.in_channels) + " channels");
  return conv2d_ref(in, conv.qweights, conv.conv.out_channels, conv.conv.kernel, conv.bias_acc, conv.quant);
}

PlanarTensor maxpool_ref(const PlanarTensor& in, const PoolParams& p) {
  if (p.window_h < 1 || p.window_w < 1 || p.stride_h < 1 || p.stride_w < 1)
    throw ShapeError("pool window and stride must be positive");
  if (in.height < p.window_h || in.width < p.window_w) throw ShapeError("input smaller than the pool window");
  PlanarTensor out(in.channels, (in.height - p.window_h) / p.stride_h + 1, (in.width - p.window_w) / p.stride_w + 1);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        QVal m = in.at(c, y * p.stride_h, x * p.stride_w);
        for (int i = 0; i < p.window_h; ++i)
          for (int j = 0; j < p.window_w; ++j) m = std::max(m, in.at(c, y * p.stride_h + i, x * p.stride_w + j));
        out.at(c, y, x) = m;
      }
  return out;
}

PlanarTensor pad_ref(const PlanarTensor& in, int b) {
  if (b < 0) throw ShapeError("pad border must be non-negative");
  PlanarTensor out(in.channels, in.height + 2 * b, in.width + 2 * b);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) out.at(c, y + b, x + b) = in.at(c, y, x);
  return out;
}

RefResult infer_ref(const NetworkModel& m, const PlanarTensor& image) {
  if (image.shape() != m.input)
    throw ShapeError("image " + to_string(image.shape()) + " does not match model input " + to_string(m.input));
  RefResult r;
  PlanarTensor cur = image;
  for (const auto& l : m.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        if (!l.is_quantized()) throw Error("layer '" + l.name + "' is not quantized");
        cur = conv2d_ref(cur, l);
        break;
      case LayerKind::Pad:
        cur = pad_ref(cur, l.pad.border);
        break;
      case LayerKind::MaxPool:
        cur = maxpool_ref(cur, l.pool);
        break;
      case LayerKind::FullyConnected:
      case LayerKind::Flatten: {
        auto out = run_fc_host(l, cur.values).out;
        cur = PlanarTensor(static_cast<int>(out.size()), 1, 1);
        cur.values = std::move(out);
        break;
      }
    }
    r.activations.push_back(cur);
  }
  if (!m.layers.empty() && (m.layers.back().kind == LayerKind::FullyConnected || m.layers.back().kind == LayerKind::Flatten))
    r.scores = cur.values;
  return r;
}

}  // namespace zskip
