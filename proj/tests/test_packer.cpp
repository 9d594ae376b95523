#include <doctest.h>

#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "support.hpp"
#include "zskip/errors.hpp"
#include "zskip/oracle.hpp"
#include "zskip/packer.hpp"

using namespace zskip;
using namespace zskip::testing;

namespace {

std::string read_golden(const std::string& name) {
  std::ifstream is(std::string(ZSKIP_GOLDEN_DIR) + "/" + name, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string serialize(const PackedLayer& p) {
  std::ostringstream os;
  write_packed_layer(os, p);
  return os.str();
}

// Random conv layer with roughly the given fraction of zero weights.
LayerSpec random_conv(std::mt19937_64& rng, int in, int out, int k, double zero_frac) {
  std::bernoulli_distribution zero(zero_frac);
  std::vector<QVal> w(static_cast<std::size_t>(out) * in * k * k);
  for (auto& x : w) x = zero(rng) ? QVal() : random_qval(rng);
  return make_conv("c", in, out, k, w);
}

WeightTile random_weight_tile(std::mt19937_64& rng) {
  WeightTile t;
  std::bernoulli_distribution zero(0.5);
  for (auto& v : t.values) v = zero(rng) ? QVal() : random_qval(rng);
  return t;
}

}  // namespace

TEST_SUITE("packer") {
  TEST_CASE("pack_tile examples") {
    CHECK(pack_tile(WeightTile{}).empty());

    WeightTile dense;
    for (auto& v : dense.values) v = q(3);
    const auto pd = pack_tile(dense);
    REQUIRE(pd.size() == 16);
    for (int i = 0; i < 16; ++i) CHECK(pd.entries()[i].offset == i);

    const auto conv = make_conv("k3", 1, 1, 3, std::vector<QVal>(9, q(-2)));
    const auto p3 = pack_tile(weight_tile(conv, 0, 0));
    REQUIRE(p3.size() == 9);
    const int want[9] = {0, 1, 2, 4, 5, 6, 8, 9, 10};
    for (int i = 0; i < 9; ++i) CHECK(p3.entries()[i].offset == want[i]);
  }

  TEST_CASE("unpack and validate") {
    CHECK(unpack_tile(PackedWeightTile{}).is_zero());

    PackedWeightTile dup;
    dup.push_back({3, q(1)});
    dup.push_back({3, q(2)});
    CHECK_THROWS_AS(validate(dup), FormatError);
    CHECK_THROWS_AS(unpack_tile(dup), FormatError);

    PackedWeightTile desc;
    desc.push_back({4, q(1)});
    desc.push_back({2, q(1)});
    CHECK_THROWS_AS(validate(desc), FormatError);

    PackedWeightTile zero;
    zero.push_back({1, QVal()});
    CHECK_THROWS_AS(validate(zero), FormatError);

    PackedWeightTile far;
    far.push_back({16, q(1)});
    CHECK_THROWS_AS(validate(far), FormatError);

    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
      const auto t = random_weight_tile(rng);
      const auto p = pack_tile(t);
      CHECK_NOTHROW(validate(p));
      REQUIRE(unpack_tile(p) == t);
    }
  }

  TEST_CASE("pack_layer examples") {
    const auto dense = make_conv("d", 1, 1, 3, std::vector<QVal>(9, q(1)));
    const auto p = pack_layer(dense, 0);
    REQUIRE(p.groups.size() == 1);
    CHECK(p.groups[0].total_entries() == 9);
    CHECK(p.groups[0].cycle_count() == 9);

    std::vector<QVal> sparse(4 * 9);
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i <= o; ++i) sparse[o * 9 + 2 * i] = q(o + 1);
    const auto ps = pack_layer(make_conv("s", 1, 4, 3, sparse), 0);
    CHECK(ps.groups[0].cycle_count() == 4);

    const auto five = pack_layer(make_conv("f", 1, 5, 3, std::vector<QVal>(45, q(2))), 3);
    CHECK(five.filter_groups == 2);
    CHECK(five.groups.size() == 2);
    for (int f = 1; f < 4; ++f) CHECK(five.group(1, 0).filters[f].empty());
    CHECK(five.group(1, 0).filters[0].size() == 9);

    LayerSpec unq = dense;
    unq.qweights.clear();
    CHECK_THROWS(pack_layer(unq, 0));
  }

  TEST_CASE("group order is round-robin by staging unit") {
    CHECK(consumption_order(10) == std::vector<int>{0, 4, 8, 1, 5, 9, 2, 6, 3, 7});
    std::vector<QVal> w(4 * 10);
    for (int o = 0; o < 4; ++o)
      for (int c = 0; c < 10; ++c) w[o * 10 + c] = q(c + 1);
    const auto p = pack_layer(make_conv("rr", 10, 4, 1, w), 0);
    const auto order = consumption_order(10);
    for (std::size_t i = 0; i < order.size(); ++i) {
      CHECK(p.groups[i].filters[0].entries()[0].weight == q(order[i] + 1));
      CHECK(&p.group(0, order[i]) == &p.groups[i]);
    }
  }

  TEST_CASE("layer invariants") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 60; ++trial) {
      std::uniform_int_distribution<int> d(1, 9);
      const int in = d(rng), out = d(rng), k = d(rng) % 4 + 1;
      const auto layer = random_conv(rng, in, out, k, trial % 3 == 0 ? 0.0 : 0.7);
      const auto p = pack_layer(layer, trial);

      NetworkModel m;
      m.input = {in, 6, 6};
      m.layers = {layer};
      check_shapes(m);
      CHECK(p.total_entries() == sparsity_report(m).at("c").nonzero);

      for (int fg = 0; fg < p.filter_groups; ++fg)
        for (int c = 0; c < in; ++c) {
          const auto& g = p.group(fg, c);
          int mx = 4;
          for (const auto& f : g.filters) mx = std::max(mx, f.size());
          CHECK(g.cycle_count() == mx);
        }
      CHECK(unpack_layer(p) == layer.qweights);

      // Dense convolution with unpacked weights equals the original.
      LayerSpec round = layer;
      round.qweights = unpack_layer(p);
      const auto x = to_planar(tile_tensor(random_qvals(rng, m.input.elements()), in, 6, 6));
      CHECK(conv2d_ref(x, round) == conv2d_ref(x, layer));
    }
  }

  TEST_CASE("dense 3x3 layers take nine cycles per group") {
    std::mt19937_64 rng(2);
    std::vector<QVal> w(8 * 6 * 9);
    for (auto& x : w) x = QVal(rng() & 1, 1 + static_cast<int>(rng() % 127));
    const auto p = pack_layer(make_conv("d", 6, 8, 3, w), 0);
    for (const auto& g : p.groups) CHECK(g.cycle_count() == 9);
  }

  TEST_CASE("serialization examples") {
    PackedLayer p;
    p.kernel = 3;
    p.in_channels = 1;
    p.out_channels = 1;
    p.filter_groups = 1;
    p.layer_index = 2;
    p.groups.resize(1);
    const std::string empty = serialize(p);
    CHECK(empty.size() == 22 + 4);
    for (int f = 0; f < 4; ++f) CHECK(empty[22 + f] == 0);

    p.groups[0].filters[0].push_back({0, q(5)});
    p.groups[0].filters[0].push_back({5, QVal(true, 34)});
    const std::string bytes = serialize(p);
    CHECK(static_cast<unsigned char>(bytes[25]) == 0x05);
    CHECK(static_cast<unsigned char>(bytes[26]) == 0xA2);
    CHECK(bytes == read_golden("packed_k3_1x1.bin"));

    std::istringstream is(bytes);
    CHECK(read_packed_layer(is) == p);
  }

  TEST_CASE("golden k=1 layer with a padded filter group") {
    const auto layer = make_conv("g", 1, 5, 1, {q(1), q(2), q(0), q(4), q(-5)});
    const auto p = pack_layer(layer, 0);
    CHECK(serialize(p) == read_golden("packed_k1_5x1.bin"));
    std::istringstream is(read_golden("packed_k1_5x1.bin"));
    CHECK(unpack_layer(read_packed_layer(is)) == layer.qweights);
  }

  TEST_CASE("malformed streams") {
    const std::string good = read_golden("packed_k3_1x1.bin");
    auto expect_format_error = [](std::string s) {
      std::istringstream is(s);
      CHECK_THROWS_AS(read_packed_layer(is), FormatError);
    };
    expect_format_error(good.substr(0, good.size() - 1));
    expect_format_error(good.substr(0, 10));
    std::string magic = good;
    magic[0] = 'X';
    expect_format_error(magic);
    std::string version = good;
    version[4] = 9;
    expect_format_error(version);
    std::string count = good;
    count[22] = 17;
    expect_format_error(count);
    std::string negzero = good;
    negzero[24] = static_cast<char>(0x80);
    expect_format_error(negzero);
    std::string outside = good;
    outside[25] = 3;  // column 3 lies outside a 3x3 kernel
    expect_format_error(outside);
    std::string order = good;
    order[23] = 5;
    order[25] = 0;
    expect_format_error(order);
  }

  TEST_CASE("network round trips") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
      std::uniform_int_distribution<int> d(1, 6);
      const int in = d(rng), out = d(rng), k = d(rng) % 4 + 1;
      NetworkModel m;
      m.input = {in, 5, 5};
      m.layers = {random_conv(rng, in, out, k, 0.6), make_pad("p", 1),
                  random_conv(rng, out, d(rng), 1, 0.3)};
      m.layers[2].name = "c2";
      check_shapes(m);
      const auto n = pack_network(m);
      REQUIRE(n.layers.size() == 2);
      CHECK(n.find(2) != nullptr);
      CHECK(n.find(1) == nullptr);
      std::ostringstream os;
      write_packed_network(os, n);
      std::istringstream is(os.str());
      REQUIRE(read_packed_network(is) == n);
    }
  }
}
