#include <doctest.h>

#include <random>
#include <sstream>

#include "support.hpp"
#include "zskip/driver.hpp"
#include "zskip/errors.hpp"
#include "zskip/oracle.hpp"
#include "zskip/synthetic.hpp"

using namespace zskip;
using namespace zskip::testing;

namespace {

LayerSpec geometry_conv(const std::string& name, int in, int out, int k, Shape input) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Conv;
  l.conv = {in, out, k};
  NetworkModel m;
  m.input = input;
  m.layers = {l};
  check_shapes(m);
  return m.layers[0];
}

std::string program_bytes(const Program& p) {
  std::ostringstream os;
  write_program(os, p);
  return os.str();
}

std::string listing(const Program& p) {
  std::ostringstream os;
  write_listing(os, p);
  return os.str();
}

LayerSpec make_fc(const std::string& name, int in, int out, std::vector<QVal> w, std::vector<Acc> bias,
                  LayerQuant q = {1.0, 0, false}) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::FullyConnected;
  l.fc = {in, out};
  l.quant = q;
  l.weight_scale_given = l.act_shift_given = true;
  l.qweights = std::move(w);
  l.bias_acc = std::move(bias);
  return l;
}

}  // namespace

TEST_SUITE("driver") {
  TEST_CASE("one stripe when the layer fits") {
    const auto l = geometry_conv("c", 8, 8, 3, {8, 18, 18});
    const auto s = plan_layer_stripes(l, 0, BankConfig{4, 1000000});
    CHECK(s.stripes.size() == 1);
    CHECK(s.overhead_macs == 0);
    CHECK(s.overhead_ratio() == 0.0);
  }

  TEST_CASE("conv1_1 forced into 8 stripes") {
    const auto vgg = vgg16_geometry();
    const auto& conv = vgg.layer("conv1_1");
    // 56 OFM tile rows; find the capacity giving 7 rows per stripe.
    const BankConfig cfg{4, stripe_working_set(conv, 7, true, BankConfig{4, 0}).total()};
    const auto s = plan_layer_stripes(conv, 1, cfg);
    REQUIRE(s.stripes.size() == 8);
    CHECK(s.rows_per_stripe == 7);
    const std::int64_t row = 4LL * 224 * 64 * 3 * 9;
    CHECK(s.overhead_macs == 7 * row);
    CHECK(s.overhead_ratio() == doctest::Approx(7.0 / 56.0));
    for (const auto& ws : s.working_sets) CHECK(ws.total() <= cfg.tiles_per_bank);
  }

  TEST_CASE("stripe planning invariants") {
    const auto vgg = vgg16_geometry();
    for (std::int64_t cap : {3000, 6000, 11000, 20000, 100000}) {
      const BankConfig cfg{4, cap};
      StripePlan plan;
      try {
        plan = plan_stripes(vgg, cfg);
      } catch (const PlanningError&) {
        CHECK(cap < 11000);
        continue;
      }
      CHECK(plan.layers.size() == 13);
      for (const auto& ls : plan.layers) {
        const auto& conv = vgg.layers[ls.layer_index];
        const int rows = ceil_div(conv.output.height, 4);
        int covered = 0;
        for (std::size_t i = 0; i < ls.stripes.size(); ++i) {
          CHECK(ls.stripes[i].first_tile_row == covered);
          covered = ls.stripes[i].end_tile_row();
          CHECK(ls.working_sets[i].total() <= cap);
        }
        CHECK(covered == rows);
        CHECK(ls.overhead_macs == static_cast<std::int64_t>(ls.stripes.size() - 1) * 4 * conv.output.width *
                                      conv.conv.out_channels * conv.conv.in_channels * 9);
        // A taller stripe would not fit.
        if (ls.rows_per_stripe < rows)
          CHECK(stripe_working_set(conv, ls.rows_per_stripe + 1, true, cfg).total() > cap);
      }
    }
  }

  TEST_CASE("arria10 preset lands in the expected overhead band") {
    const auto plan = plan_stripes(vgg16_geometry(), arria10_sx660_banks());
    CHECK(plan.mean_overhead() >= 0.10);
    CHECK(plan.mean_overhead() <= 0.20);
  }

  TEST_CASE("capacity too small for one row") {
    const auto l = geometry_conv("big", 64, 64, 3, {64, 226, 226});
    try {
      plan_layer_stripes(l, 0, BankConfig{4, 100});
      FAIL("expected planning error");
    } catch (const PlanningError& e) {
      CHECK(std::string(e.what()).find("big") != std::string::npos);
    }
  }

  TEST_CASE("instances split stripes evenly") {
    const auto l = geometry_conv("c", 4, 4, 3, {4, 34, 34});
    const auto one = plan_layer_stripes(l, 0, BankConfig{4, 1000000}, 1);
    CHECK(one.stripes.size() == 1);
    const auto two = plan_layer_stripes(l, 0, BankConfig{4, 1000000}, 2);
    CHECK(two.stripes.size() == 2);
    const auto tiny = geometry_conv("t", 4, 4, 3, {4, 5, 5});
    CHECK(plan_layer_stripes(tiny, 0, BankConfig{4, 1000000}, 2).stripes.size() == 1);
  }

  TEST_CASE("toy conv instruction count") {
    std::mt19937_64 rng(1);
    auto m = make_model({8, 10, 10}, {make_conv("c", 8, 8, 3, random_qvals(rng, 8 * 8 * 9))});
    const auto p = compile(m, pack_network(m), BankConfig{4, 100000}, 1);
    REQUIRE(p.layers.size() == 1);
    CHECK(p.conv_instruction_count() == 8);  // 2 filter groups x 2x2 OFM tiles
    CHECK(p.layers[0].conv.channels_per_unit[0] == std::vector<int>{0, 4});
  }

  TEST_CASE("compile invariants with stripes") {
    const auto vgg = synthesize_weights(vgg16_geometry(), {0.5, -1}, 4);
    const auto packed = pack_network(vgg);
    for (int inst : {1, 2}) {
      const auto p = compile(vgg, packed, arria10_sx660_banks(), inst);
      for (const auto& l : p.layers) {
        if (l.kind != ProgramLayerKind::Conv) continue;
        const int tc = ceil_div(l.output.width, 4), tr = ceil_div(l.output.height, 4);
        const auto n = static_cast<std::int64_t>(l.conv.stripes.stripes.size());
        std::int64_t normal = 0, recompute = 0;
        for (const auto& s : l.conv_instrs)
          for (const auto& c : s) (c.recompute ? recompute : normal) += 1;
        CHECK(normal == std::int64_t{tc} * tr * l.conv.filter_groups);
        CHECK(recompute == (n - 1) * tc * l.conv.filter_groups);
        // Stripes alternate between instances.
        for (std::size_t i = 0; i < l.conv_instrs.size(); ++i)
          for (const auto& c : l.conv_instrs[i]) CHECK(c.stripe % inst == static_cast<int>(i));
        CHECK(l.dma.size() == static_cast<std::size_t>(n));
      }
    }
  }

  TEST_CASE("residency of stripe rows") {
    CHECK(resident_ifm_rows({0, 3}, false, 10) == Stripe{0, 4});
    CHECK(resident_ifm_rows({3, 3}, true, 10) == Stripe{2, 5});
    CHECK(resident_ifm_rows({8, 2}, true, 10) == Stripe{7, 3});
  }

  TEST_CASE("missing or mismatched weights") {
    std::mt19937_64 rng(1);
    auto m = make_model({2, 6, 6}, {make_conv("c", 2, 4, 3, random_qvals(rng, 72))});
    CHECK_THROWS_AS(compile(m, PackedNetwork{}, BankConfig{}, 1), PlanningError);
    auto other = make_model({3, 6, 6}, {make_conv("c", 3, 4, 3, random_qvals(rng, 108))});
    CHECK_THROWS_AS(compile(m, pack_network(other), BankConfig{}, 1), PlanningError);
    CHECK_THROWS_AS(compile(m, pack_network(m), BankConfig{}, 0), PlanningError);
  }

  TEST_CASE("accumulator range check") {
    auto ok = make_conv("ok", 512, 4, 3, {});
    CHECK_NOTHROW(check_accumulator_range(ok));
    auto wide = make_conv("wide", 16000, 4, 3, {});
    CHECK_THROWS_AS(check_accumulator_range(wide), PlanningError);
  }

  TEST_CASE("program image round trip") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 40; ++trial) {
      ToyNetOptions opt;
      auto m = random_toy_network(rng, opt);
      const int inst = 1 + trial % 2;
      const auto p = compile(m, pack_network(m), BankConfig{4, 100 + 40 * (trial % 4)}, inst);
      const std::string bytes = program_bytes(p);
      std::istringstream is(bytes);
      const auto back = read_program(is);
      CHECK(program_bytes(back) == bytes);
      CHECK(listing(back) == listing(p));
    }
    std::istringstream bad("ZPRX");
    CHECK_THROWS_AS(read_program(bad), FormatError);
  }

  TEST_CASE("listing is deterministic") {
    std::mt19937_64 a(5), b(5);
    const auto ma = random_toy_network(a), mb = random_toy_network(b);
    CHECK(listing(compile(ma, pack_network(ma), BankConfig{}, 2)) ==
          listing(compile(mb, pack_network(mb), BankConfig{}, 2)));
  }

  TEST_CASE("fc on the host") {
    // Permutation matrix.
    std::vector<QVal> w(9);
    w[0 * 3 + 2] = q(1);
    w[1 * 3 + 0] = q(1);
    w[2 * 3 + 1] = q(1);
    const auto fc = make_fc("fc", 3, 3, w, {0, 0, 0});
    const auto r = run_fc_host(fc, {q(10), q(-20), q(30)});
    CHECK(r.out == std::vector<QVal>{q(30), q(10), q(-20)});

    const auto biased = make_fc("fc", 3, 2, std::vector<QVal>(6, q(50)), {7, -9});
    const auto z = run_fc_host(biased, std::vector<QVal>(3));
    CHECK(z.acc == std::vector<Acc>{7, -9});
    CHECK(z.out == std::vector<QVal>{q(7), q(-9)});

    CHECK_THROWS_AS(run_fc_host(biased, std::vector<QVal>(4)), ShapeError);

    // Random FC against real arithmetic on the integer grid.
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const int in = 1 + static_cast<int>(rng() % 40), out = 1 + static_cast<int>(rng() % 10);
      const LayerQuant qq{1.0, static_cast<int>(rng() % 10), trial % 2 == 0};
      std::vector<Acc> bias(out);
      for (auto& b : bias) b = static_cast<Acc>(rng() % 2001) - 1000;
      const auto f = make_fc("r", in, out, random_qvals(rng, static_cast<std::size_t>(in) * out), bias, qq);
      const auto x = random_qvals(rng, in);
      const auto res = run_fc_host(f, x);
      for (int o = 0; o < out; ++o) {
        double sum = bias[o];
        for (int i = 0; i < in; ++i) sum += double(f.qweights[o * in + i].to_int()) * x[i].to_int();
        double y = round_half_away(sum / std::ldexp(1.0, qq.act_shift));
        if (qq.apply_relu) y = std::max(0.0, y);
        y = std::clamp(y, -127.0, 127.0);
        CHECK(res.out[o].to_int() == static_cast<int>(y));
      }
    }
  }

  TEST_CASE("flatten passes through") {
    LayerSpec f;
    f.kind = LayerKind::Flatten;
    const std::vector<QVal> x{q(1), q(-2), q(3)};
    CHECK(run_fc_host(f, x).out == x);
  }
}
