// layout.hpp - 4x4 tile data representation.
//
// A feature map of C channels is stored as one row-major grid of 4x4 tiles
// per channel; within a tile, values are row-major (idx = 4*row + col).
// Tiles extending past the logical width/height hold canonical zeros. The
// grid is addressable one tile past its right and bottom edge; those reads
// return the zero tile, so every OFM tile coordinate can fetch its 2x2 block.
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "zskip/numerics.hpp"

namespace zskip {

inline constexpr int kTileDim = 4;
inline constexpr int kTileSize = kTileDim * kTileDim;

constexpr int tile_index(int row, int col) { return kTileDim * row + col; }

struct Tile {
  std::array<QVal, kTileSize> values{};

  QVal& at(int row, int col) { return values[tile_index(row, col)]; }
  QVal at(int row, int col) const { return values[tile_index(row, col)]; }
  bool is_zero() const;

  friend bool operator==(const Tile&, const Tile&) = default;
};

// The 8x8 pixel block formed by tiles (tx,ty), (tx+1,ty), (tx,ty+1), (tx+1,ty+1).
struct Block8 {
  std::array<QVal, 64> values{};
  QVal at(int row, int col) const { return values[row * 8 + col]; }
  QVal& at(int row, int col) { return values[row * 8 + col]; }
};

constexpr int ceil_div(int a, int b) { return (a + b - 1) / b; }

class TiledTensor {
 public:
  TiledTensor() = default;
  // Zero-filled tensor of the given logical shape.
  TiledTensor(int channels, int width, int height);

  int channels() const { return channels_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int tile_cols() const { return tile_cols_; }
  int tile_rows() const { return tile_rows_; }
  std::size_t tile_count() const { return tiles_.size(); }

  std::size_t linear_index(int c, int tx, int ty) const {
    return (static_cast<std::size_t>(c) * tile_rows_ + ty) * tile_cols_ + tx;
  }

  // Tiles inside the stored grid; throws LayoutError otherwise.
  const Tile& tile(int c, int tx, int ty) const;
  Tile& tile(int c, int tx, int ty);

  // Same as tile(), but the one-past ring (tx == tile_cols or ty == tile_rows)
  // reads as the zero tile.
  const Tile& tile_or_zero(int c, int tx, int ty) const;

  QVal value(int c, int y, int x) const;
  void set_value(int c, int y, int x, QVal v);

  std::span<const Tile> tiles() const { return tiles_; }
  std::span<Tile> tiles() { return tiles_; }

  friend bool operator==(const TiledTensor&, const TiledTensor&) = default;

 private:
  void check_coords(int c, int tx, int ty, int max_tx, int max_ty) const;

  int channels_ = 0;
  int width_ = 0;
  int height_ = 0;
  int tile_cols_ = 0;
  int tile_rows_ = 0;
  std::vector<Tile> tiles_;
};

// planar is channel-major, then row-major: index (c*height + y)*width + x.
TiledTensor tile_tensor(std::span<const QVal> planar, int channels, int width, int height);
std::vector<QVal> untile_tensor(const TiledTensor& t);

// Throws LayoutError unless tx < tile_cols and ty < tile_rows.
Block8 read_block_2x2(const TiledTensor& t, int c, int tx, int ty);

struct Stripe {
  int first_tile_row = 0;
  int num_tile_rows = 0;
  int end_tile_row() const { return first_tile_row + num_tile_rows; }
  friend bool operator==(const Stripe&, const Stripe&) = default;
};

// Disjoint stripes of at most rows_per_stripe tile rows covering [0, tile_rows).
std::vector<Stripe> partition_stripes(int tile_rows, int rows_per_stripe);

struct BankConfig {
  int num_banks = 4;
  std::int64_t tiles_per_bank = 11000;
};

struct BankPlan {
  std::vector<std::vector<int>> channels;  // per bank / staging unit
  std::vector<std::int64_t> tiles;         // per bank
};

// Round-robin channel assignment (channel c -> bank c mod staging_units) for a
// region of tile_cols x tile_rows tiles per channel.
BankPlan plan_banks(int channels, int tile_cols, int tile_rows, const BankConfig& cfg,
                    int staging_units);
BankPlan plan_banks(const TiledTensor& t, const BankConfig& cfg, int staging_units);

// Tiled memory image: little-endian u32 header (channels, width, height,
// tile_cols, tile_rows), then tiles in storage order, 16 bytes each.
void write_image(std::ostream& os, const TiledTensor& t);
TiledTensor read_image(std::istream& is);
void save_image(const std::string& path, const TiledTensor& t);
TiledTensor load_image(const std::string& path);

}  // namespace zskip
