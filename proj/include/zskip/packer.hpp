// packer.hpp - offline zero-weight packing.
//
// Each k x k kernel (k <= 4) sits in a 4x4 weight tile with kernel value
// (i, j) at intra-tile offset 4*i + j. Packing keeps only the nonzero weights
// as (offset, weight) records in ascending offset order. Four filters are
// processed concurrently, so records are grouped per (filter-group, input
// channel); a group occupies max(4, largest record count) cycles.
//
// Stream order matches the engine: filter-group outer, then channels in
// round-robin order per staging unit (unit u owns channels u, u+4, ...).
//
// Binary layout of one layer stream (all integers little-endian):
//   "ZSKP" | u8 version | u32 layer index | u32 filter groups | u32 in channels
//   | u32 out channels | u8 kernel
//   then per group, 4 sub-streams: u8 count, count x (u8 offset, u8 weight)
// with weight bit 7 = sign and bits 6..0 = magnitude. A network file is the
// concatenation of its layer streams.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "zskip/layout.hpp"
#include "zskip/netmodel.hpp"
#include "zskip/numerics.hpp"

namespace zskip {

inline constexpr int kFiltersPerGroup = 4;
inline constexpr int kStagingUnits = 4;
// Four IFM tiles are loaded per weight tile at one tile per cycle.
inline constexpr int kMinGroupCycles = 4;
inline constexpr std::uint8_t kPackedFormatVersion = 1;

using WeightTile = Tile;

// Places kernel (o, c) of a quantized conv layer into a weight tile.
WeightTile weight_tile(const LayerSpec& layer, int out_channel, int in_channel);

struct PackedEntry {
  std::uint8_t offset = 0;
  QVal weight;
  friend bool operator==(const PackedEntry&, const PackedEntry&) = default;
};

class PackedWeightTile {
 public:
  std::span<const PackedEntry> entries() const { return {entries_.data(), size_}; }
  int size() const { return size_; }
  bool empty() const { return size_ == 0; }
  // No validation; see validate().
  void push_back(PackedEntry e);

  friend bool operator==(const PackedWeightTile& a, const PackedWeightTile& b) {
    return a.size_ == b.size_ &&
           std::equal(a.entries_.begin(), a.entries_.begin() + a.size_, b.entries_.begin());
  }

 private:
  std::array<PackedEntry, kTileSize> entries_{};
  std::uint8_t size_ = 0;
};

// Throws FormatError for descending/duplicate offsets, offsets > 15 or zero weights.
void validate(const PackedWeightTile& p);

PackedWeightTile pack_tile(const WeightTile& w);
WeightTile unpack_tile(const PackedWeightTile& p);

struct PackedWeightGroup {
  std::array<PackedWeightTile, kFiltersPerGroup> filters;

  int max_entries() const;
  int total_entries() const;
  // max(4, largest record count among the four filters).
  int cycle_count() const;
  friend bool operator==(const PackedWeightGroup&, const PackedWeightGroup&) = default;
};

struct PackedLayer {
  int layer_index = 0;
  int kernel = 3;
  int in_channels = 0;
  int out_channels = 0;
  int filter_groups = 0;
  std::vector<PackedWeightGroup> groups;  // consumption order

  // Position of channel c within one filter-group's run of groups.
  static int channel_slot(int c, int in_channels);
  const PackedWeightGroup& group(int filter_group, int channel) const;
  PackedWeightGroup& group(int filter_group, int channel);
  std::int64_t total_entries() const;

  friend bool operator==(const PackedLayer&, const PackedLayer&) = default;
};

struct PackedNetwork {
  std::vector<PackedLayer> layers;
  // Returns nullptr when the model layer has no packed stream.
  const PackedLayer* find(int layer_index) const;
  friend bool operator==(const PackedNetwork&, const PackedNetwork&) = default;
};

// Channel order of one filter-group run: unit 0's channels, then unit 1's, ...
std::vector<int> consumption_order(int in_channels);

PackedLayer pack_layer(const LayerSpec& layer, int layer_index);
// Packs every conv layer; throws Error for unquantized conv layers.
PackedNetwork pack_network(const NetworkModel& m);

// Writes the unpacked weights of a packed layer back into a dense vector
// [out][in][k][k] (filters beyond out_channels are dropped).
std::vector<QVal> unpack_layer(const PackedLayer& p);

void write_packed_layer(std::ostream& os, const PackedLayer& p);
PackedLayer read_packed_layer(std::istream& is);
void write_packed_network(std::ostream& os, const PackedNetwork& n);
PackedNetwork read_packed_network(std::istream& is);
void save_packed(const std::string& path, const PackedNetwork& n);
PackedNetwork load_packed(const std::string& path);

}  // namespace zskip
