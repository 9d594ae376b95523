#include <doctest.h>

#include <random>

#include "support.hpp"
#include "zskip/driver.hpp"
#include "zskip/errors.hpp"
#include "zskip/oracle.hpp"

using namespace zskip;
using namespace zskip::testing;

namespace {

// Replays a lowering on every channel, phase by phase.
TiledTensor run_lowering(const PadPoolLowering& low, const TiledTensor& in, const Shape& out_shape) {
  TiledTensor out(out_shape.channels, out_shape.width, out_shape.height);
  TiledTensor scratch;
  if (low.scratch.channels > 0) scratch = TiledTensor(low.scratch.channels, low.scratch.width, low.scratch.height);
  auto pick = [&](TensorRef r) -> TiledTensor& {
    return r == TensorRef::Input ? const_cast<TiledTensor&>(in) : r == TensorRef::Scratch ? scratch : out;
  };
  for (int phase = 0; phase < low.phases; ++phase)
    for (int c = 0; c < in.channels(); ++c)
      for (const auto& ins : low.instrs) {
        if (ins.phase != phase) continue;
        const Tile src = pick(ins.source).tile(c, ins.src_tx, ins.src_ty);
        apply_padpool(ins, src, pick(ins.dest).tile(c, ins.dst_tx, ins.dst_ty));
      }
  return out;
}

Tile iota_tile() {
  Tile t;
  for (int i = 0; i < 16; ++i) t.values[i] = q(i);
  return t;
}

}  // namespace

TEST_SUITE("lowering") {
  TEST_CASE("2x2 stride 2 pooling of one tile") {
    PadPoolInstr ins;
    ins.masks = {static_cast<std::uint16_t>(0x0033), static_cast<std::uint16_t>(0x00CC),
                 static_cast<std::uint16_t>(0x3300), static_cast<std::uint16_t>(0xCC00)};
    ins.selectors[0] = 1;
    ins.selectors[1] = 2;
    ins.selectors[4] = 3;
    ins.selectors[5] = 4;
    Tile out;
    apply_padpool(ins, iota_tile(), out);
    CHECK(out.values[0] == q(5));
    CHECK(out.values[1] == q(7));
    CHECK(out.values[4] == q(13));
    CHECK(out.values[5] == q(15));
    CHECK(out.values[2].is_zero());
  }

  TEST_CASE("keep selectors leave the output alone") {
    PadPoolInstr ins;
    Tile out = iota_tile();
    apply_padpool(ins, Tile{}, out);
    CHECK(out == iota_tile());
  }

  TEST_CASE("single-value masks move pixels") {
    // Shift right by one column.
    PadPoolInstr ins;
    ins.masks = {1u << 0, 1u << 1, 1u << 2, 0};
    ins.selectors[1] = 1;
    ins.selectors[2] = 2;
    ins.selectors[3] = 3;
    Tile out;
    apply_padpool(ins, iota_tile(), out);
    CHECK(out.values[1] == q(0));
    CHECK(out.values[2] == q(1));
    CHECK(out.values[3] == q(2));
  }

  TEST_CASE("selector naming an empty mask faults") {
    PadPoolInstr ins;
    ins.masks[0] = 1;
    ins.selectors[3] = 2;
    Tile out;
    CHECK_THROWS_AS(apply_padpool(ins, iota_tile(), out), EngineFault);
  }

  TEST_CASE("max respects the sign") {
    PadPoolInstr ins;
    ins.masks[0] = 0x000F;
    ins.selectors[0] = 1;
    Tile in;
    in.values = {q(-5), q(-3), q(-9), q(-4)};
    Tile out;
    apply_padpool(ins, in, out);
    CHECK(out.values[0] == q(-3));
  }

  TEST_CASE("pad lowering matches the reference") {
    std::mt19937_64 rng(4);
    for (int border = 0; border <= 3; ++border)
      for (int h = 1; h <= 9; ++h)
        for (int w = 1; w <= 9; w += 2) {
          const Shape s{2, h, w};
          PlanarTensor x(2, h, w);
          x.values = random_qvals(rng, x.values.size());
          const auto low = lower_pad(s, border);
          for (const auto& ins : low.instrs) CHECK(ins.used_units() >= 1);
          const Shape o{2, h + 2 * border, w + 2 * border};
          CHECK(to_planar(run_lowering(low, to_tiled(x), o)) == pad_ref(x, border));
        }
    CHECK_THROWS_AS(lower_pad({1, 4, 4}, -1), PlanningError);
  }

  TEST_CASE("interior padded tile needs six instructions") {
    // Output tile (1,1) of a border-1 pad reads 1, 3, 3 and 9 values from four source tiles.
    const auto low = lower_pad({1, 8, 8}, 1);
    int n = 0;
    for (const auto& ins : low.instrs) n += ins.dst_tx == 1 && ins.dst_ty == 1;
    CHECK(n == 6);
  }

  TEST_CASE("1x1 input with border 1") {
    PlanarTensor x(1, 1, 1);
    x.values[0] = q(42);
    const auto out = to_planar(run_lowering(lower_pad({1, 1, 1}, 1), to_tiled(x), {1, 3, 3}));
    for (int y = 0; y < 3; ++y)
      for (int c = 0; c < 3; ++c) CHECK(out.at(0, y, c) == (y == 1 && c == 1 ? q(42) : q(0)));
  }

  TEST_CASE("maxpool lowering exhaustive over small windows") {
    std::mt19937_64 rng(6);
    for (int wh = 1; wh <= 4; ++wh)
      for (int ww = 1; ww <= 4; ++ww)
        for (int sh = 1; sh <= 4; ++sh)
          for (int sw = 1; sw <= 4; ++sw)
            for (int trial = 0; trial < 3; ++trial) {
              const int h = wh + static_cast<int>(rng() % 10), w = ww + static_cast<int>(rng() % 10);
              const PoolParams p{wh, ww, sh, sw};
              PlanarTensor x(1, h, w);
              x.values = random_qvals(rng, x.values.size());
              const auto low = lower_maxpool({1, h, w}, p);
              const auto want = maxpool_ref(x, p);
              REQUIRE(to_planar(run_lowering(low, to_tiled(x), want.shape())) == want);
            }
  }

  TEST_CASE("aligned 2x2 stride 2 pooling needs no gather") {
    const auto low = lower_maxpool({1, 8, 8}, PoolParams{});
    CHECK(low.phases == 1);
    CHECK(low.scratch.channels == 0);
    CHECK(low.instrs.size() == 4);  // one instruction per input tile
  }

  TEST_CASE("straddling windows use the scratch tensor") {
    const auto low = lower_maxpool({1, 8, 8}, PoolParams{3, 3, 1, 1});
    CHECK(low.phases == 2);
    CHECK(low.scratch.channels == 1);
  }

  TEST_CASE("bad pool parameters") {
    CHECK_THROWS_AS(lower_maxpool({1, 8, 8}, PoolParams{5, 5, 1, 1}), PlanningError);
    CHECK_THROWS_AS(lower_maxpool({1, 2, 2}, PoolParams{3, 3, 1, 1}), PlanningError);
    CHECK_THROWS_AS(lower_maxpool({1, 8, 8}, PoolParams{2, 2, 0, 1}), PlanningError);
  }
}
