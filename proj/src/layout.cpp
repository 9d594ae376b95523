#include "zskip/layout.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include "zskip/binio.hpp"
#include "zskip/errors.hpp"

namespace zskip {

namespace {
const Tile kZeroTile{};
}  // namespace

bool Tile::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](QVal v) { return v.is_zero(); });
}

TiledTensor::TiledTensor(int channels, int width, int height)
    : channels_(channels), width_(width), height_(height) {
  if (channels < 0 || width < 0 || height < 0)
    throw LayoutError("negative tensor dimension");
  tile_cols_ = ceil_div(width, kTileDim);
  tile_rows_ = ceil_div(height, kTileDim);
  tiles_.assign(static_cast<std::size_t>(channels) * tile_cols_ * tile_rows_, Tile{});
}

void TiledTensor::check_coords(int c, int tx, int ty, int max_tx, int max_ty) const {
  if (c < 0 || c >= channels_ || tx < 0 || ty < 0 || tx > max_tx || ty > max_ty)
    throw LayoutError("tile (c=" + std::to_string(c) + ", tx=" + std::to_string(tx) +
                      ", ty=" + std::to_string(ty) + ") outside " + std::to_string(channels_) +
                      "x" + std::to_string(tile_cols_) + "x" + std::to_string(tile_rows_) +
                      " tile grid");
}

const Tile& TiledTensor::tile(int c, int tx, int ty) const {
  check_coords(c, tx, ty, tile_cols_ - 1, tile_rows_ - 1);
  return tiles_[linear_index(c, tx, ty)];
}

Tile& TiledTensor::tile(int c, int tx, int ty) {
  check_coords(c, tx, ty, tile_cols_ - 1, tile_rows_ - 1);
  return tiles_[linear_index(c, tx, ty)];
}

const Tile& TiledTensor::tile_or_zero(int c, int tx, int ty) const {
  check_coords(c, tx, ty, tile_cols_, tile_rows_);
  if (tx == tile_cols_ || ty == tile_rows_) return kZeroTile;
  return tiles_[linear_index(c, tx, ty)];
}

QVal TiledTensor::value(int c, int y, int x) const {
  if (y < 0 || x < 0 || y >= height_ || x >= width_)
    throw LayoutError("pixel (" + std::to_string(y) + ", " + std::to_string(x) +
                      ") outside logical feature map");
  return tile(c, x / kTileDim, y / kTileDim).at(y % kTileDim, x % kTileDim);
}

void TiledTensor::set_value(int c, int y, int x, QVal v) {
  if (y < 0 || x < 0 || y >= height_ || x >= width_)
    throw LayoutError("pixel (" + std::to_string(y) + ", " + std::to_string(x) +
                      ") outside logical feature map");
  tile(c, x / kTileDim, y / kTileDim).at(y % kTileDim, x % kTileDim) = v;
}

TiledTensor tile_tensor(std::span<const QVal> planar, int channels, int width, int height) {
  const std::size_t expected = static_cast<std::size_t>(channels) * width * height;
  if (channels < 0 || width < 0 || height < 0 || planar.size() != expected)
    throw LayoutError("planar size " + std::to_string(planar.size()) + " does not match " +
                      std::to_string(channels) + "x" + std::to_string(height) + "x" +
                      std::to_string(width));
  TiledTensor t(channels, width, height);
  std::size_t i = 0;
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) t.set_value(c, y, x, planar[i++]);
  return t;
}

std::vector<QVal> untile_tensor(const TiledTensor& t) {
  std::vector<QVal> out;
  out.reserve(static_cast<std::size_t>(t.channels()) * t.width() * t.height());
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x) out.push_back(t.value(c, y, x));
  return out;
}

Block8 read_block_2x2(const TiledTensor& t, int c, int tx, int ty) {
  if (c < 0 || c >= t.channels() || tx < 0 || ty < 0 || tx >= t.tile_cols() ||
      ty >= t.tile_rows())
    throw LayoutError("2x2 block anchor (c=" + std::to_string(c) + ", tx=" +
                      std::to_string(tx) + ", ty=" + std::to_string(ty) + ") out of grid");
  Block8 b;
  for (int qy = 0; qy < 2; ++qy)
    for (int qx = 0; qx < 2; ++qx) {
      const Tile& src = t.tile_or_zero(c, tx + qx, ty + qy);
      for (int r = 0; r < kTileDim; ++r)
        for (int col = 0; col < kTileDim; ++col)
          b.at(qy * kTileDim + r, qx * kTileDim + col) = src.at(r, col);
    }
  return b;
}

std::vector<Stripe> partition_stripes(int tile_rows, int rows_per_stripe) {
  if (rows_per_stripe <= 0) throw LayoutError("stripe height must be positive");
  std::vector<Stripe> out;
  for (int r = 0; r < tile_rows; r += rows_per_stripe)
    out.push_back({r, std::min(rows_per_stripe, tile_rows - r)});
  return out;
}

BankPlan plan_banks(int channels, int tile_cols, int tile_rows, const BankConfig& cfg,
                    int staging_units) {
  if (cfg.num_banks < 1) throw LayoutError("bank count must be at least 1");
  if (staging_units != cfg.num_banks)
    throw LayoutError("staging unit count " + std::to_string(staging_units) +
                      " differs from bank count " + std::to_string(cfg.num_banks));
  BankPlan plan;
  plan.channels.resize(staging_units);
  plan.tiles.assign(staging_units, 0);
  const std::int64_t per_channel = std::int64_t{tile_cols} * tile_rows;
  for (int c = 0; c < channels; ++c) {
    plan.channels[c % staging_units].push_back(c);
    plan.tiles[c % staging_units] += per_channel;
  }
  for (int b = 0; b < staging_units; ++b)
    if (plan.tiles[b] > cfg.tiles_per_bank)
      throw CapacityError("bank " + std::to_string(b) + " needs " + std::to_string(plan.tiles[b]) +
                          " tiles, capacity is " + std::to_string(cfg.tiles_per_bank));
  return plan;
}

BankPlan plan_banks(const TiledTensor& t, const BankConfig& cfg, int staging_units) {
  return plan_banks(t.channels(), t.tile_cols(), t.tile_rows(), cfg, staging_units);
}

void write_image(std::ostream& os, const TiledTensor& t) {
  binio::put_u32(os, static_cast<std::uint32_t>(t.channels()));
  binio::put_u32(os, static_cast<std::uint32_t>(t.width()));
  binio::put_u32(os, static_cast<std::uint32_t>(t.height()));
  binio::put_u32(os, static_cast<std::uint32_t>(t.tile_cols()));
  binio::put_u32(os, static_cast<std::uint32_t>(t.tile_rows()));
  for (const Tile& tile : t.tiles())
    for (QVal v : tile.values) binio::put_u8(os, v.to_byte());
}

TiledTensor read_image(std::istream& is) {
  const auto channels = binio::get_u32(is, "image header");
  const auto width = binio::get_u32(is, "image header");
  const auto height = binio::get_u32(is, "image header");
  const auto tile_cols = binio::get_u32(is, "image header");
  const auto tile_rows = binio::get_u32(is, "image header");
  constexpr std::uint32_t kLimit = 1u << 16;
  if (channels > kLimit || width > kLimit || height > kLimit)
    throw FormatError("image header dimensions out of range");
  TiledTensor t(static_cast<int>(channels), static_cast<int>(width), static_cast<int>(height));
  if (tile_cols != static_cast<std::uint32_t>(t.tile_cols()) ||
      tile_rows != static_cast<std::uint32_t>(t.tile_rows()))
    throw FormatError("image header tile grid inconsistent with width/height");
  for (Tile& tile : t.tiles())
    for (QVal& v : tile.values)
      if (!QVal::from_byte(binio::get_u8(is, "image tiles"), v))
        throw FormatError("negative zero in image data");
  // Padding slots must be canonical zero.
  for (int c = 0; c < t.channels(); ++c)
    for (int ty = 0; ty < t.tile_rows(); ++ty)
      for (int tx = 0; tx < t.tile_cols(); ++tx)
        for (int r = 0; r < kTileDim; ++r)
          for (int q = 0; q < kTileDim; ++q) {
            const int y = ty * kTileDim + r;
            const int x = tx * kTileDim + q;
            if ((y >= t.height() || x >= t.width()) && !t.tile(c, tx, ty).at(r, q).is_zero())
              throw FormatError("nonzero value in tile padding");
          }
  return t;
}

void save_image(const std::string& path, const TiledTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_image(os, t);
}

TiledTensor load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_image(is);
}

}  // namespace zskip
