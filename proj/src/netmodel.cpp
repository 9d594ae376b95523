#include "zskip/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "zskip/binio.hpp"
#include "zskip/errors.hpp"

namespace zskip {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Pad: return "pad";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

std::size_t LayerSpec::weight_count() const {
  if (kind == LayerKind::Conv)
    return static_cast<std::size_t>(conv.out_channels) * conv.in_channels * conv.kernel *
           conv.kernel;
  if (kind == LayerKind::FullyConnected)
    return static_cast<std::size_t>(fc.out_features) * fc.in_features;
  return 0;
}

const LayerSpec& NetworkModel::layer(const std::string& n) const {
  for (const auto& l : layers)
    if (l.name == n) return l;
  throw Error("no layer named '" + n + "'");
}

const LayerSparsity& SparsityReport::at(const std::string& n) const {
  for (const auto& l : layers)
    if (l.layer == n) return l;
  throw Error("no sparsity entry for layer '" + n + "'");
}

namespace {

[[noreturn]] void shape_fail(const LayerSpec& l, const std::string& msg) {
  throw ShapeError("layer '" + l.name + "' (" + to_string(l.kind) + "): " + msg);
}

std::size_t out_count(const LayerSpec& l) {
  return l.kind == LayerKind::Conv ? static_cast<std::size_t>(l.conv.out_channels)
                                   : static_cast<std::size_t>(l.fc.out_features);
}

}  // namespace

void check_shapes(NetworkModel& m) {
  if (m.input.channels <= 0 || m.input.height <= 0 || m.input.width <= 0)
    throw ShapeError("network input shape must be positive, got " + to_string(m.input));
  if (!m.input_mean.empty() && m.input_mean.size() != static_cast<std::size_t>(m.input.channels))
    throw ShapeError("input_mean needs one value per input channel");
  Shape cur = m.input;
  bool host_section = false;
  for (auto& l : m.layers) {
    l.input = cur;
    if (host_section && l.kind != LayerKind::FullyConnected && l.kind != LayerKind::Flatten)
      shape_fail(l, "only fc/flatten layers may follow a fully connected layer");
    switch (l.kind) {
      case LayerKind::Conv: {
        const auto& p = l.conv;
        if (p.kernel < 1 || p.kernel > kTileDim) shape_fail(l, "kernel must be in [1, 4]");
        if (p.in_channels <= 0 || p.out_channels <= 0) shape_fail(l, "channel counts must be positive");
        if (cur.channels != p.in_channels)
          shape_fail(l, "expects " + std::to_string(p.in_channels) + " input channels, previous layer produces " +
                            std::to_string(cur.channels));
        if (cur.height < p.kernel || cur.width < p.kernel)
          shape_fail(l, "input " + to_string(cur) + " smaller than kernel");
        cur = {p.out_channels, cur.height - p.kernel + 1, cur.width - p.kernel + 1};
        break;
      }
      case LayerKind::Pad:
        if (l.pad.border < 0) shape_fail(l, "border must be non-negative");
        cur = {cur.channels, cur.height + 2 * l.pad.border, cur.width + 2 * l.pad.border};
        break;
      case LayerKind::MaxPool: {
        const auto& p = l.pool;
        if (p.window_h < 1 || p.window_w < 1 || p.window_h > kTileDim || p.window_w > kTileDim)
          shape_fail(l, "pool window must be in [1, 4] per dimension");
        if (p.stride_h < 1 || p.stride_w < 1) shape_fail(l, "pool stride must be positive");
        if (cur.height < p.window_h || cur.width < p.window_w)
          shape_fail(l, "input " + to_string(cur) + " smaller than pool window");
        cur = {cur.channels, (cur.height - p.window_h) / p.stride_h + 1,
               (cur.width - p.window_w) / p.stride_w + 1};
        break;
      }
      case LayerKind::FullyConnected:
        if (l.fc.in_features <= 0 || l.fc.out_features <= 0) shape_fail(l, "feature counts must be positive");
        if (cur.elements() != static_cast<std::size_t>(l.fc.in_features))
          shape_fail(l, "expects " + std::to_string(l.fc.in_features) + " inputs, previous layer produces " +
                            std::to_string(cur.elements()));
        cur = {l.fc.out_features, 1, 1};
        host_section = true;
        break;
      case LayerKind::Flatten:
        cur = {static_cast<int>(cur.elements()), 1, 1};
        host_section = true;
        break;
    }
    l.output = cur;
    if (l.is_weighted()) {
      if (l.has_weights() && l.weights.size() != l.weight_count())
        shape_fail(l, "weight tensor has " + std::to_string(l.weights.size()) + " values, expected " +
                          std::to_string(l.weight_count()));
      if (l.is_quantized() && l.qweights.size() != l.weight_count())
        shape_fail(l, "quantized weight tensor has wrong size");
      if (!l.bias.empty() && l.bias.size() != out_count(l)) shape_fail(l, "bias has wrong size");
      if (!l.bias_acc.empty() && l.bias_acc.size() != out_count(l))
        shape_fail(l, "bias accumulator init has wrong size");
    }
  }
}

std::vector<float> read_f32_file(const std::string& path, std::size_t expected_count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("missing tensor file " + path);
  std::vector<float> out(expected_count);
  for (auto& v : out) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
      const int c = is.get();
      if (c == std::char_traits<char>::eof())
        throw LoadError("tensor file " + path + " is shorter than " +
                        std::to_string(expected_count) + " float32 values");
      bits |= std::uint32_t(static_cast<std::uint8_t>(c)) << (8 * i);
    }
    std::memcpy(&v, &bits, sizeof v);
  }
  if (!binio::at_eof(is)) throw LoadError("tensor file " + path + " has trailing data");
  return out;
}

void write_f32_file(const std::string& path, std::span<const double> values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  for (double d : values) {
    const float f = static_cast<float>(d);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    binio::put_u32(os, bits);
  }
}

namespace {

LayerKind parse_kind(const std::string& s, const std::string& layer) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "pad") return LayerKind::Pad;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "fc") return LayerKind::FullyConnected;
  if (s == "flatten") return LayerKind::Flatten;
  throw LoadError("layer '" + layer + "': unknown kind '" + s + "'");
}

std::pair<int, int> pair_param(const json& p, const char* key, std::pair<int, int> dflt) {
  if (!p.contains(key)) return dflt;
  const auto& v = p.at(key);
  if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
  if (v.is_array() && v.size() == 2) return {v[0].get<int>(), v[1].get<int>()};
  throw LoadError(std::string("parameter '") + key + "' must be an integer or [h, w]");
}

std::string resolve(const std::string& base_dir, const std::string& file) {
  const fs::path p(file);
  return p.is_absolute() ? p.string() : (fs::path(base_dir) / p).string();
}

std::vector<QVal> read_qweights(const std::string& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("missing tensor file " + path);
  std::vector<QVal> out(count);
  for (auto& v : out) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw LoadError("quantized weight file " + path + " truncated");
    if (!QVal::from_byte(static_cast<std::uint8_t>(c), v))
      throw LoadError("quantized weight file " + path + " contains negative zero");
  }
  if (!binio::at_eof(is)) throw LoadError("quantized weight file " + path + " has trailing data");
  return out;
}

std::vector<Acc> read_i32_file(const std::string& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("missing tensor file " + path);
  std::vector<Acc> out(count);
  try {
    for (auto& v : out) v = binio::get_i32(is, "bias accumulators");
  } catch (const FormatError&) {
    throw LoadError("bias accumulator file " + path + " truncated");
  }
  return out;
}

LayerSpec parse_layer(const json& j, const std::string& base_dir, std::size_t index) {
  LayerSpec l;
  l.name = j.value("name", "layer" + std::to_string(index));
  l.kind = parse_kind(j.at("kind").get<std::string>(), l.name);
  const json p = j.value("params", json::object());
  switch (l.kind) {
    case LayerKind::Conv:
      l.conv.in_channels = p.at("in_channels").get<int>();
      l.conv.out_channels = p.at("out_channels").get<int>();
      l.conv.kernel = p.value("kernel", 3);
      break;
    case LayerKind::Pad:
      l.pad.border = p.value("border", 1);
      break;
    case LayerKind::MaxPool: {
      std::tie(l.pool.window_h, l.pool.window_w) = pair_param(p, "window", {2, 2});
      std::tie(l.pool.stride_h, l.pool.stride_w) = pair_param(p, "stride", {2, 2});
      break;
    }
    case LayerKind::FullyConnected:
      l.fc.in_features = p.at("in_features").get<int>();
      l.fc.out_features = p.at("out_features").get<int>();
      break;
    case LayerKind::Flatten:
      break;
  }
  if (l.is_weighted()) {
    l.quant.apply_relu = p.value("relu", true);
    if (p.contains("weight_scale")) {
      l.quant.weight_scale = p.at("weight_scale").get<double>();
      l.weight_scale_given = true;
    }
    if (p.contains("act_shift")) {
      l.quant.act_shift = p.at("act_shift").get<int>();
      l.act_shift_given = true;
    }
    const std::size_t n = l.weight_count();
    const std::size_t outs = out_count(l);
    if (j.contains("weights_file")) {
      const auto w = read_f32_file(resolve(base_dir, j.at("weights_file").get<std::string>()), n);
      l.weights.assign(w.begin(), w.end());
    }
    if (j.contains("bias_file")) {
      const auto b = read_f32_file(resolve(base_dir, j.at("bias_file").get<std::string>()), outs);
      l.bias.assign(b.begin(), b.end());
    }
    if (j.contains("qweights_file")) {
      if (!l.weight_scale_given || !l.act_shift_given)
        throw LoadError("layer '" + l.name + "': quantized weights need weight_scale and act_shift");
      l.qweights = read_qweights(resolve(base_dir, j.at("qweights_file").get<std::string>()), n);
      if (j.contains("qbias_file"))
        l.bias_acc = read_i32_file(resolve(base_dir, j.at("qbias_file").get<std::string>()), outs);
      else
        l.bias_acc.assign(outs, 0);
    }
  }
  return l;
}

}  // namespace

NetworkModel parse_network(const std::string& json_text, const std::string& base_dir) {
  NetworkModel m;
  try {
    const json doc = json::parse(json_text);
    m.name = doc.value("name", "network");
    const auto& in = doc.at("input");
    if (!in.is_array() || in.size() != 3) throw LoadError("'input' must be [channels, height, width]");
    m.input = {in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
    m.input_scale = doc.value("input_scale", 1.0);
    if (!(m.input_scale > 0.0)) throw LoadError("input_scale must be positive");
    if (doc.contains("input_mean")) m.input_mean = doc.at("input_mean").get<std::vector<double>>();
    std::size_t i = 0;
    for (const auto& lj : doc.at("layers")) m.layers.push_back(parse_layer(lj, base_dir, i++));
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed manifest: ") + e.what());
  }
  try {
    check_shapes(m);
  } catch (const ShapeError& e) {
    throw LoadError(e.what());
  }
  return m;
}

NetworkModel load_network(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw LoadError("cannot open manifest " + manifest_path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_network(ss.str(), fs::path(manifest_path).parent_path().string());
}

void save_network(const NetworkModel& m, const std::string& manifest_path) {
  const fs::path mp(manifest_path);
  const fs::path dir = mp.has_parent_path() ? mp.parent_path() : fs::path(".");
  const std::string stem = mp.stem().string();
  json doc;
  doc["name"] = m.name;
  doc["input"] = {m.input.channels, m.input.height, m.input.width};
  doc["input_scale"] = m.input_scale;
  if (!m.input_mean.empty()) doc["input_mean"] = m.input_mean;
  doc["layers"] = json::array();
  for (const auto& l : m.layers) {
    json lj;
    lj["name"] = l.name;
    lj["kind"] = to_string(l.kind);
    json p = json::object();
    switch (l.kind) {
      case LayerKind::Conv:
        p["in_channels"] = l.conv.in_channels;
        p["out_channels"] = l.conv.out_channels;
        p["kernel"] = l.conv.kernel;
        break;
      case LayerKind::Pad: p["border"] = l.pad.border; break;
      case LayerKind::MaxPool:
        p["window"] = {l.pool.window_h, l.pool.window_w};
        p["stride"] = {l.pool.stride_h, l.pool.stride_w};
        break;
      case LayerKind::FullyConnected:
        p["in_features"] = l.fc.in_features;
        p["out_features"] = l.fc.out_features;
        break;
      case LayerKind::Flatten: break;
    }
    if (l.is_weighted()) {
      p["relu"] = l.quant.apply_relu;
      if (l.weight_scale_given || l.is_quantized()) p["weight_scale"] = l.quant.weight_scale;
      if (l.act_shift_given || l.is_quantized()) p["act_shift"] = l.quant.act_shift;
      const std::string base = stem + "." + l.name;
      if (l.has_weights()) {
        write_f32_file((dir / (base + ".w.f32")).string(), l.weights);
        lj["weights_file"] = base + ".w.f32";
      }
      if (!l.bias.empty()) {
        write_f32_file((dir / (base + ".b.f32")).string(), l.bias);
        lj["bias_file"] = base + ".b.f32";
      }
      if (l.is_quantized()) {
        std::ofstream qw(dir / (base + ".qw"), std::ios::binary);
        for (QVal v : l.qweights) binio::put_u8(qw, v.to_byte());
        lj["qweights_file"] = base + ".qw";
        std::ofstream qb(dir / (base + ".qb"), std::ios::binary);
        for (Acc a : l.bias_acc) binio::put_i32(qb, a);
        lj["qbias_file"] = base + ".qb";
      }
    }
    lj["params"] = p;
    doc["layers"].push_back(lj);
  }
  std::ofstream os(mp);
  if (!os) throw Error("cannot open " + manifest_path + " for writing");
  os << doc.dump(2) << "\n";
}

SparsityReport sparsity_report(const NetworkModel& m) {
  SparsityReport r;
  for (const auto& l : m.layers) {
    if (!l.is_weighted() || (!l.is_quantized() && !l.has_weights())) continue;
    LayerSparsity s;
    s.layer = l.name;
    s.total = static_cast<std::int64_t>(l.weight_count());
    auto nonzero_at = [&](std::size_t i) {
      return l.is_quantized() ? !l.qweights[i].is_zero() : l.weights[i] != 0.0;
    };
    for (std::size_t i = 0; i < l.weight_count(); ++i) s.nonzero += nonzero_at(i) ? 1 : 0;
    if (l.kind == LayerKind::Conv) {
      const std::size_t per_tile = static_cast<std::size_t>(l.conv.kernel) * l.conv.kernel;
      for (std::size_t t = 0; t < l.weight_count() / per_tile; ++t) {
        int nnz = 0;
        for (std::size_t i = 0; i < per_tile; ++i) nnz += nonzero_at(t * per_tile + i) ? 1 : 0;
        ++s.tile_histogram[nnz];
      }
    }
    r.layers.push_back(s);
  }
  return r;
}

double threshold_for_sparsity(std::span<const double> weights, double target) {
  if (!(target >= 0.0 && target < 1.0))
    throw Error("target sparsity must be in [0, 1), got " + std::to_string(target));
  if (weights.empty()) return 0.0;
  const auto needed = static_cast<std::size_t>(std::ceil(target * static_cast<double>(weights.size())));
  if (needed == 0) return 0.0;
  std::vector<double> mags(weights.size());
  std::transform(weights.begin(), weights.end(), mags.begin(), [](double w) { return std::fabs(w); });
  std::nth_element(mags.begin(), mags.begin() + (needed - 1), mags.end());
  // Smallest t with #{|w| < t} >= needed.
  return std::nextafter(mags[needed - 1], std::numeric_limits<double>::infinity());
}

namespace {

void prune_layer(LayerSpec& l, const PruneRule& rule) {
  if (!l.has_weights()) return;
  double t = rule.value;
  if (rule.mode == PruneRule::Mode::TargetSparsity) {
    t = threshold_for_sparsity(l.weights, rule.value);
  } else if (!(t >= 0.0)) {
    throw Error("prune threshold must be non-negative");
  }
  for (double& w : l.weights)
    if (std::fabs(w) < t) w = 0.0;
  l.qweights.clear();
  l.bias_acc.clear();
}

}  // namespace

PruneResult prune_magnitude(const NetworkModel& m, const PruneRule& every_layer) {
  if (every_layer.mode == PruneRule::Mode::TargetSparsity &&
      !(every_layer.value >= 0.0 && every_layer.value < 1.0))
    throw Error("target sparsity must be in [0, 1)");
  PruneResult r{m, {}};
  for (auto& l : r.model.layers)
    if (l.is_weighted()) prune_layer(l, every_layer);
  r.report = sparsity_report(r.model);
  return r;
}

PruneResult prune_magnitude(const NetworkModel& m, const std::map<std::string, PruneRule>& rules) {
  PruneResult r{m, {}};
  for (auto& l : r.model.layers) {
    const auto it = rules.find(l.name);
    if (it != rules.end() && l.is_weighted()) prune_layer(l, it->second);
  }
  r.report = sparsity_report(r.model);
  return r;
}

int default_act_shift(double weight_scale) {
  const double s = std::round(std::log2(weight_scale));
  return static_cast<int>(std::clamp(s, 0.0, 31.0));
}

std::vector<double> activation_scales(const NetworkModel& m) {
  std::vector<double> s;
  s.reserve(m.layers.size() + 1);
  double cur = m.input_scale;
  for (const auto& l : m.layers) {
    s.push_back(cur);
    if (l.is_weighted()) cur = cur * l.quant.weight_scale / std::ldexp(1.0, l.quant.act_shift);
  }
  s.push_back(cur);
  return s;
}

NetworkModel quantize_network(const NetworkModel& src) {
  NetworkModel m = src;
  double in_scale = m.input_scale;
  for (auto& l : m.layers) {
    if (l.is_weighted()) {
      if (l.has_weights()) {
        if (!l.weight_scale_given) {
          double max_abs = 0.0;
          for (double w : l.weights) max_abs = std::max(max_abs, std::fabs(w));
          if (max_abs == 0.0)
            throw QuantizationError("layer '" + l.name + "': all weights are zero, scale undefined");
          l.quant.weight_scale = kMaxMagnitude / max_abs;
        }
        if (!l.act_shift_given) l.quant.act_shift = default_act_shift(l.quant.weight_scale);
        validate(l.quant);
        l.qweights.resize(l.weights.size());
        for (std::size_t i = 0; i < l.weights.size(); ++i)
          l.qweights[i] = quantize(l.weights[i], l.quant.weight_scale);
        const std::size_t outs = out_count(l);
        l.bias_acc.assign(outs, 0);
        for (std::size_t o = 0; o < l.bias.size(); ++o) {
          const double b = round_half_away(l.bias[o] * l.quant.weight_scale * in_scale);
          if (std::fabs(b) >= 2147483648.0)
            throw QuantizationError("layer '" + l.name + "': bias overflows the accumulator");
          l.bias_acc[o] = static_cast<Acc>(b);
        }
      } else if (!l.is_quantized()) {
        throw QuantizationError("layer '" + l.name + "' has no weights to quantize");
      }
      in_scale = in_scale * l.quant.weight_scale / std::ldexp(1.0, l.quant.act_shift);
    }
  }
  return m;
}

TiledTensor ingest_planar(std::span<const float> planar, std::span<const double> mean,
                          const NetworkModel& m) {
  const Shape& s = m.input;
  if (planar.size() != s.elements())
    throw ShapeError("image has " + std::to_string(planar.size()) + " values, network expects " +
                     to_string(s));
  if (!mean.empty() && mean.size() != static_cast<std::size_t>(s.channels))
    throw ShapeError("mean needs one value per input channel");
  std::vector<QVal> q(planar.size());
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  for (std::size_t i = 0; i < planar.size(); ++i) {
    const double mu = mean.empty() ? 0.0 : mean[i / plane];
    q[i] = quantize(static_cast<double>(planar[i]) - mu, m.input_scale);
  }
  return tile_tensor(q, s.channels, s.width, s.height);
}

TiledTensor ingest_image(const std::string& path, std::span<const double> mean,
                         const NetworkModel& m) {
  std::vector<float> raw;
  try {
    raw = read_f32_file(path, m.input.elements());
  } catch (const LoadError& e) {
    throw ShapeError(std::string("image ingest: ") + e.what());
  }
  return ingest_planar(raw, mean, m);
}

}  // namespace zskip
