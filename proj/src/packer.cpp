#include "zskip/packer.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "zskip/binio.hpp"
#include "zskip/errors.hpp"

namespace zskip {

WeightTile weight_tile(const LayerSpec& layer, int o, int c) {
  WeightTile w;
  const int k = std::min(layer.conv.kernel, kTileDim);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) w.at(i, j) = layer.qweight(o, c, i, j);
  return w;
}

void PackedWeightTile::push_back(PackedEntry e) {
  if (size_ >= kTileSize) throw FormatError("packed weight tile holds at most 16 entries");
  entries_[size_++] = e;
}

void validate(const PackedWeightTile& p) {
  int prev = -1;
  for (const auto& e : p.entries()) {
    if (e.offset >= kTileSize) throw FormatError("packed offset " + std::to_string(e.offset) + " > 15");
    if (static_cast<int>(e.offset) <= prev)
      throw FormatError("packed offsets must be strictly increasing (offset " +
                        std::to_string(e.offset) + " after " + std::to_string(prev) + ")");
    if (e.weight.is_zero()) throw FormatError("packed entry with zero weight");
    prev = e.offset;
  }
}

PackedWeightTile pack_tile(const WeightTile& w) {
  PackedWeightTile p;
  for (int i = 0; i < kTileSize; ++i)
    if (!w.values[i].is_zero()) p.push_back({static_cast<std::uint8_t>(i), w.values[i]});
  return p;
}

WeightTile unpack_tile(const PackedWeightTile& p) {
  validate(p);
  WeightTile w;
  for (const auto& e : p.entries()) w.values[e.offset] = e.weight;
  return w;
}

int PackedWeightGroup::max_entries() const {
  int m = 0;
  for (const auto& f : filters) m = std::max(m, f.size());
  return m;
}

int PackedWeightGroup::total_entries() const {
  int n = 0;
  for (const auto& f : filters) n += f.size();
  return n;
}

int PackedWeightGroup::cycle_count() const { return std::max(kMinGroupCycles, max_entries()); }

int PackedLayer::channel_slot(int c, int in_channels) {
  const int unit = c % kStagingUnits;
  int slot = 0;
  for (int u = 0; u < unit; ++u) slot += (in_channels - u + kStagingUnits - 1) / kStagingUnits;
  return slot + c / kStagingUnits;
}

const PackedWeightGroup& PackedLayer::group(int fg, int c) const {
  return groups.at(static_cast<std::size_t>(fg) * in_channels + channel_slot(c, in_channels));
}

PackedWeightGroup& PackedLayer::group(int fg, int c) {
  return groups.at(static_cast<std::size_t>(fg) * in_channels + channel_slot(c, in_channels));
}

std::int64_t PackedLayer::total_entries() const {
  std::int64_t n = 0;
  for (const auto& g : groups) n += g.total_entries();
  return n;
}

const PackedLayer* PackedNetwork::find(int layer_index) const {
  for (const auto& l : layers)
    if (l.layer_index == layer_index) return &l;
  return nullptr;
}

std::vector<int> consumption_order(int in_channels) {
  std::vector<int> order;
  order.reserve(in_channels);
  for (int u = 0; u < kStagingUnits; ++u)
    for (int c = u; c < in_channels; c += kStagingUnits) order.push_back(c);
  return order;
}

PackedLayer pack_layer(const LayerSpec& layer, int layer_index) {
  if (layer.kind != LayerKind::Conv) throw Error("layer '" + layer.name + "' is not a conv layer");
  if (!layer.is_quantized()) throw Error("layer '" + layer.name + "' is not quantized");
  if (layer.conv.kernel > kTileDim) throw Error("kernel larger than a tile");
  PackedLayer p;
  p.layer_index = layer_index;
  p.kernel = layer.conv.kernel;
  p.in_channels = layer.conv.in_channels;
  p.out_channels = layer.conv.out_channels;
  p.filter_groups = ceil_div(p.out_channels, kFiltersPerGroup);
  p.groups.reserve(static_cast<std::size_t>(p.filter_groups) * p.in_channels);
  const auto order = consumption_order(p.in_channels);
  for (int fg = 0; fg < p.filter_groups; ++fg)
    for (int c : order) {
      PackedWeightGroup g;
      for (int f = 0; f < kFiltersPerGroup; ++f) {
        const int o = fg * kFiltersPerGroup + f;
        if (o < p.out_channels) g.filters[f] = pack_tile(weight_tile(layer, o, c));
      }
      p.groups.push_back(g);
    }
  return p;
}

PackedNetwork pack_network(const NetworkModel& m) {
  PackedNetwork n;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].kind == LayerKind::Conv) n.layers.push_back(pack_layer(m.layers[i], static_cast<int>(i)));
  return n;
}

std::vector<QVal> unpack_layer(const PackedLayer& p) {
  const int k = p.kernel;
  std::vector<QVal> w(static_cast<std::size_t>(p.out_channels) * p.in_channels * k * k);
  for (int fg = 0; fg < p.filter_groups; ++fg)
    for (int c = 0; c < p.in_channels; ++c) {
      const auto& g = p.group(fg, c);
      for (int f = 0; f < kFiltersPerGroup; ++f) {
        const int o = fg * kFiltersPerGroup + f;
        if (o >= p.out_channels) continue;
        const WeightTile t = unpack_tile(g.filters[f]);
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j)
            w[((static_cast<std::size_t>(o) * p.in_channels + c) * k + i) * k + j] = t.at(i, j);
      }
    }
  return w;
}

void write_packed_layer(std::ostream& os, const PackedLayer& p) {
  os.write("ZSKP", 4);
  binio::put_u8(os, kPackedFormatVersion);
  binio::put_u32(os, static_cast<std::uint32_t>(p.layer_index));
  binio::put_u32(os, static_cast<std::uint32_t>(p.filter_groups));
  binio::put_u32(os, static_cast<std::uint32_t>(p.in_channels));
  binio::put_u32(os, static_cast<std::uint32_t>(p.out_channels));
  binio::put_u8(os, static_cast<std::uint8_t>(p.kernel));
  for (const auto& g : p.groups)
    for (const auto& f : g.filters) {
      binio::put_u8(os, static_cast<std::uint8_t>(f.size()));
      for (const auto& e : f.entries()) {
        binio::put_u8(os, e.offset);
        binio::put_u8(os, e.weight.to_byte());
      }
    }
}

PackedLayer read_packed_layer(std::istream& is) {
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(binio::get_u8(is, "packed stream magic"));
  if (std::string(magic, 4) != "ZSKP") throw FormatError("bad packed stream magic");
  const auto version = binio::get_u8(is, "packed stream version");
  if (version != kPackedFormatVersion)
    throw FormatError("unsupported packed stream version " + std::to_string(version));
  PackedLayer p;
  p.layer_index = static_cast<int>(binio::get_u32(is, "packed stream header"));
  const auto fgs = binio::get_u32(is, "packed stream header");
  const auto cin = binio::get_u32(is, "packed stream header");
  const auto cout = binio::get_u32(is, "packed stream header");
  p.kernel = binio::get_u8(is, "packed stream header");
  constexpr std::uint32_t kLimit = 1u << 16;
  if (cin == 0 || cin > kLimit || cout == 0 || cout > kLimit)
    throw FormatError("packed stream channel counts out of range");
  if (p.kernel < 1 || p.kernel > kTileDim) throw FormatError("packed stream kernel out of range");
  p.in_channels = static_cast<int>(cin);
  p.out_channels = static_cast<int>(cout);
  p.filter_groups = static_cast<int>(fgs);
  if (p.filter_groups != ceil_div(p.out_channels, kFiltersPerGroup))
    throw FormatError("packed stream filter-group count inconsistent with out channels");
  p.groups.resize(static_cast<std::size_t>(p.filter_groups) * p.in_channels);
  for (auto& g : p.groups)
    for (auto& f : g.filters) {
      const int count = binio::get_u8(is, "packed group count");
      if (count > kTileSize) throw FormatError("packed tile count " + std::to_string(count) + " exceeds 16");
      for (int e = 0; e < count; ++e) {
        PackedEntry entry;
        entry.offset = binio::get_u8(is, "packed entry");
        if (!QVal::from_byte(binio::get_u8(is, "packed entry"), entry.weight))
          throw FormatError("packed entry with negative zero weight");
        const int row = entry.offset / kTileDim, col = entry.offset % kTileDim;
        if (entry.offset < kTileSize && (row >= p.kernel || col >= p.kernel))
          throw FormatError("packed offset " + std::to_string(entry.offset) + " outside kernel support");
        f.push_back(entry);
      }
      validate(f);
    }
  return p;
}

void write_packed_network(std::ostream& os, const PackedNetwork& n) {
  for (const auto& l : n.layers) write_packed_layer(os, l);
}

PackedNetwork read_packed_network(std::istream& is) {
  PackedNetwork n;
  while (!binio::at_eof(is)) n.layers.push_back(read_packed_layer(is));
  return n;
}

void save_packed(const std::string& path, const PackedNetwork& n) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_packed_network(os, n);
}

PackedNetwork load_packed(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_packed_network(is);
}

}  // namespace zskip
