// Shared helpers for the unit tests.
#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "zskip/netmodel.hpp"
#include "zskip/numerics.hpp"

namespace zskip::testing {

inline QVal q(int v) { return QVal::from_int(v); }

inline std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

inline QVal random_qval(std::mt19937_64& rng) {
  return QVal::from_int(std::uniform_int_distribution<int>(-127, 127)(rng));
}

inline std::vector<QVal> random_qvals(std::mt19937_64& rng, std::size_t n) {
  std::vector<QVal> v(n);
  for (auto& x : v) x = random_qval(rng);
  return v;
}

// Quantized conv layer with explicit weights [out][in][k][k] and zero bias.
inline LayerSpec make_conv(const std::string& name, int in, int out, int k, std::vector<QVal> w,
                           LayerQuant quant = {1.0, 0, false}) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Conv;
  l.conv = {in, out, k};
  l.quant = quant;
  l.weight_scale_given = l.act_shift_given = true;
  l.qweights = std::move(w);
  l.bias_acc.assign(out, 0);
  return l;
}

inline LayerSpec make_pad(const std::string& name, int border) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Pad;
  l.pad.border = border;
  return l;
}

inline LayerSpec make_pool(const std::string& name, int window, int stride) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::MaxPool;
  l.pool = {window, window, stride, stride};
  return l;
}

inline NetworkModel make_model(Shape input, std::vector<LayerSpec> layers) {
  NetworkModel m;
  m.name = "test";
  m.input = input;
  m.layers = std::move(layers);
  check_shapes(m);
  return m;
}

}  // namespace zskip::testing
