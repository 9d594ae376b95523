// Lowering of pad and max-pool layers onto the pad/pool datapath.
//
// Output tiles are built one instruction at a time. An instruction reads a
// single source tile; each of the four MAX units reduces the source values
// its mask selects, and the selectors route unit results to output pixels.
//
// Padding moves each interior pixel through a single-bit mask, grouped by
// source tile. A pooling window contained in one input tile is reduced
// directly. Windows that straddle tiles are gathered first: phase 0 copies
// the window into a scratch tile, phase 1 reduces the scratch tile.
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "zskip/driver.hpp"
#include "zskip/errors.hpp"

namespace zskip {

namespace {

// One pixel move or reduction: bits of the source tile feeding output index dst.
struct Route {
  std::uint16_t mask = 0;
  int dst = 0;
};

using TileKey = std::pair<int, int>;  // (ty, tx), ordered row-major

void emit_chunks(std::vector<PadPoolInstr>& out, const PadPoolInstr& proto,
                 const std::vector<Route>& routes) {
  for (std::size_t start = 0; start < routes.size(); start += kMaxUnits) {
    PadPoolInstr ins = proto;
    for (int k = 0; k < kMaxUnits && start + k < routes.size(); ++k) {
      ins.masks[k] = routes[start + k].mask;
      ins.selectors[routes[start + k].dst] = static_cast<std::uint8_t>(k + 1);
    }
    out.push_back(ins);
  }
}

std::uint16_t bit(int row, int col) { return static_cast<std::uint16_t>(1u << tile_index(row, col)); }

}  // namespace

PadPoolLowering lower_pad(const Shape& input, int border) {
  if (border < 0) throw PlanningError("pad border must be non-negative");
  PadPoolLowering low;
  const int h_out = input.height + 2 * border;
  const int w_out = input.width + 2 * border;
  for (int oty = 0; oty < ceil_div(h_out, kTileDim); ++oty)
    for (int otx = 0; otx < ceil_div(w_out, kTileDim); ++otx) {
      std::map<TileKey, std::vector<Route>> by_source;
      for (int r = 0; r < kTileDim; ++r)
        for (int q = 0; q < kTileDim; ++q) {
          const int sy = oty * kTileDim + r - border;
          const int sx = otx * kTileDim + q - border;
          if (sy < 0 || sx < 0 || sy >= input.height || sx >= input.width) continue;
          by_source[{sy / kTileDim, sx / kTileDim}].push_back(
              {bit(sy % kTileDim, sx % kTileDim), tile_index(r, q)});
        }
      for (const auto& [key, routes] : by_source) {
        PadPoolInstr proto;
        proto.src_ty = key.first;
        proto.src_tx = key.second;
        proto.dst_tx = otx;
        proto.dst_ty = oty;
        emit_chunks(low.instrs, proto, routes);
      }
    }
  return low;
}

PadPoolLowering lower_maxpool(const Shape& input, const PoolParams& p) {
  if (p.window_h < 1 || p.window_w < 1 || p.stride_h < 1 || p.stride_w < 1)
    throw PlanningError("pool window and stride must be positive");
  if (p.window_h > kTileDim || p.window_w > kTileDim)
    throw PlanningError("pool window larger than a tile");
  if (p.window_h > input.height || p.window_w > input.width)
    throw PlanningError("pool window larger than the input");
  const int h_out = (input.height - p.window_h) / p.stride_h + 1;
  const int w_out = (input.width - p.window_w) / p.stride_w + 1;

  struct Gathered {
    int oy, ox, y0, x0;
  };
  std::vector<Gathered> gathered;
  PadPoolLowering low;
  for (int oty = 0; oty < ceil_div(h_out, kTileDim); ++oty)
    for (int otx = 0; otx < ceil_div(w_out, kTileDim); ++otx) {
      std::map<TileKey, std::vector<Route>> direct;
      for (int r = 0; r < kTileDim; ++r)
        for (int q = 0; q < kTileDim; ++q) {
          const int oy = oty * kTileDim + r, ox = otx * kTileDim + q;
          if (oy >= h_out || ox >= w_out) continue;
          const int y0 = oy * p.stride_h, x0 = ox * p.stride_w;
          const int y1 = y0 + p.window_h - 1, x1 = x0 + p.window_w - 1;
          if (y0 / kTileDim != y1 / kTileDim || x0 / kTileDim != x1 / kTileDim) {
            gathered.push_back({oy, ox, y0, x0});
            continue;
          }
          std::uint16_t mask = 0;
          for (int i = y0; i <= y1; ++i)
            for (int j = x0; j <= x1; ++j) mask |= bit(i % kTileDim, j % kTileDim);
          direct[{y0 / kTileDim, x0 / kTileDim}].push_back({mask, tile_index(r, q)});
        }
      for (const auto& [key, routes] : direct) {
        PadPoolInstr proto;
        proto.src_ty = key.first;
        proto.src_tx = key.second;
        proto.dst_tx = otx;
        proto.dst_ty = oty;
        emit_chunks(low.instrs, proto, routes);
      }
    }
  if (gathered.empty()) return low;

  // Scratch tile g holds window g at its top-left corner.
  const int count = static_cast<int>(gathered.size());
  const int sw = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
  const int sh = ceil_div(count, sw);
  low.phases = 2;
  low.scratch = Shape{input.channels, sh * kTileDim, sw * kTileDim};
  std::vector<PadPoolInstr> reduce;
  std::uint16_t window_mask = 0;
  for (int i = 0; i < p.window_h; ++i)
    for (int j = 0; j < p.window_w; ++j) window_mask |= bit(i, j);
  for (int g = 0; g < count; ++g) {
    const auto& w = gathered[g];
    std::map<TileKey, std::vector<Route>> by_source;
    for (int i = 0; i < p.window_h; ++i)
      for (int j = 0; j < p.window_w; ++j) {
        const int y = w.y0 + i, x = w.x0 + j;
        by_source[{y / kTileDim, x / kTileDim}].push_back({bit(y % kTileDim, x % kTileDim), tile_index(i, j)});
      }
    for (const auto& [key, routes] : by_source) {
      PadPoolInstr proto;
      proto.dest = TensorRef::Scratch;
      proto.src_ty = key.first;
      proto.src_tx = key.second;
      proto.dst_tx = g % sw;
      proto.dst_ty = g / sw;
      emit_chunks(low.instrs, proto, routes);
    }
    PadPoolInstr ins;
    ins.phase = 1;
    ins.source = TensorRef::Scratch;
    ins.src_tx = g % sw;
    ins.src_ty = g / sw;
    ins.dst_tx = w.ox / kTileDim;
    ins.dst_ty = w.oy / kTileDim;
    ins.masks[0] = window_mask;
    ins.selectors[tile_index(w.oy % kTileDim, w.ox % kTileDim)] = 1;
    reduce.push_back(ins);
  }
  low.instrs.insert(low.instrs.end(), reduce.begin(), reduce.end());
  return low;
}

void apply_padpool(const PadPoolInstr& instr, const Tile& input, Tile& output) {
  std::array<QVal, kMaxUnits> result{};
  for (int k = 0; k < kMaxUnits; ++k) {
    bool first = true;
    for (int i = 0; i < kTileSize; ++i)
      if (instr.masks[k] & (1u << i)) {
        if (first || input.values[i] > result[k]) result[k] = input.values[i];
        first = false;
      }
  }
  for (int i = 0; i < kTileSize; ++i) {
    const int sel = instr.selectors[i];
    if (sel == kKeep) continue;
    if (sel > kMaxUnits || instr.masks[sel - 1] == 0)
      throw EngineFault("pad/pool selector " + std::to_string(sel) + " names an empty MAX unit");
    output.values[i] = result[sel - 1];
  }
}

}  // namespace zskip
