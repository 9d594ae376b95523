#include <doctest.h>

#include <sstream>

#include "support.hpp"
#include "zskip/errors.hpp"
#include "zskip/metrics.hpp"
#include "zskip/synthetic.hpp"

using namespace zskip;
using namespace zskip::testing;

namespace {

CycleReport sample_report() {
  CycleReport r;
  r.variant = "512-opt";
  r.macs_per_cycle = 512;
  r.clock_mhz = 120.0;
  r.instances = 2;
  LayerCycles a;
  a.name = "conv_a";
  a.kind = "conv";
  a.dense_macs = 1000000;
  a.executed_macs = 400000;
  a.skipped_macs = 600000;
  a.conv_cycles = 2000;
  a.fill_cycles = 100;
  LayerCycles b = a;
  b.name = "conv_b";
  b.conv_cycles = 1000;
  LayerCycles p;
  p.name = "pool";
  p.kind = "maxpool";
  p.padpool_cycles = 50;
  p.fill_cycles = 12;
  r.layers = {a, p, b};
  return r;
}

std::string csv_of(const CycleReport& r, double ops = kDefaultOpsPerMac) {
  std::ostringstream os;
  write_csv(os, report(r, ops));
  return os.str();
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("ideal cycles") {
    CHECK(ideal_cycles(1000000, 0, 256) == 3907);
    CHECK(ideal_cycles(1000000, 150000, 256) == 4493);
    const std::int64_t conv4_1 = 28LL * 28 * 512 * 256 * 9;
    CHECK(ideal_cycles(conv4_1, 0, 512) == conv4_1 / 512);
    CHECK_THROWS(ideal_cycles(10, 0, 0));
  }

  TEST_CASE("throughput arithmetic") {
    const auto t = report(sample_report(), 2.0);
    REQUIRE(t.layers.size() == 3);
    const auto& a = t.layers[0];
    CHECK(a.seconds == doctest::Approx(2100 / 120e6));
    CHECK(a.gops == doctest::Approx(2.0 * 400000 / (2100 / 120e6) / 1e9));
    CHECK(a.effective_gops == doctest::Approx(2.0 * 1000000 / (2100 / 120e6) / 1e9));
    CHECK(a.efficiency == doctest::Approx(1954.0 / 2100.0));
    CHECK(t.best == 2);
    CHECK(t.worst == 0);
    CHECK(t.mean_effective_gops == doctest::Approx((t.layers[0].effective_gops + t.layers[2].effective_gops) / 2));
    CHECK(t.total.cycles.total_cycles() == 2100 + 62 + 1100);
    CHECK_THROWS(report(sample_report(), 0.0));
  }

  TEST_CASE("dense best layer at full efficiency") {
    CycleReport r = sample_report();
    r.layers = {r.layers[0]};
    auto& l = r.layers[0];
    l.executed_macs = l.dense_macs;
    l.skipped_macs = 0;
    l.conv_cycles = ideal_cycles(l.dense_macs, 0, 512);
    l.fill_cycles = 0;
    const auto t = report(r, 2.0);
    CHECK(t.layers[0].efficiency == doctest::Approx(1.0));
    CHECK(t.layers[0].gops == doctest::Approx(2.0 * 512 * 120e6 / 1e9).epsilon(0.001));
  }

  TEST_CASE("csv layout") {
    const std::string csv = csv_of(sample_report());
    std::istringstream is(csv);
    std::vector<std::string> lines;
    for (std::string line; std::getline(is, line);) lines.push_back(line);
    REQUIRE(lines.size() == 1 + 3 + 4);
    CHECK(lines[0].rfind("layer,dense_macs,", 0) == 0);
    CHECK(lines[1].rfind("conv_a,1000000,400000,600000,0,2000,0,0,100,2100,", 0) == 0);
    CHECK(lines[4].rfind("mean,", 0) == 0);
    CHECK(lines[5].rfind("best:conv_b,", 0) == 0);
    CHECK(lines[6].rfind("worst:conv_a,", 0) == 0);
    CHECK(lines[7].rfind("total,", 0) == 0);
    CHECK(csv == csv_of(sample_report()));
  }

  TEST_CASE("json round trip reproduces the csv") {
    const auto r = sample_report();
    const auto back = parse_cycle_report(cycle_report_json(r));
    CHECK(back == r);
    CHECK(csv_of(back) == csv_of(r));
    CHECK_THROWS_AS(parse_cycle_report("{\"variant\": 1}"), FormatError);
  }

  TEST_CASE("vgg estimate round trips") {
    const auto vgg = synthesize_weights(vgg16_geometry(), {0.6, -1}, 3);
    const auto r = estimate(compile(vgg, pack_network(vgg), arria10_sx660_banks(), 1), preset("256-opt"));
    CHECK(parse_cycle_report(cycle_report_json(r)) == r);
    const auto t = report(r);
    for (const auto& l : t.layers) {
      if (l.cycles.kind != "conv") continue;
      CHECK(l.efficiency > 0.0);
      CHECK(l.effective_gops >= l.gops);
    }
  }
}
