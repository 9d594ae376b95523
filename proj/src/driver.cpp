#include "zskip/driver.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "zskip/binio.hpp"
#include "zskip/errors.hpp"

namespace zskip {

BankConfig arria10_sx660_banks() { return BankConfig{4, 11000}; }

// ---------------------------------------------------------------------------
// Stripe planning

const LayerStripes* StripePlan::find(int layer_index) const {
  for (const auto& l : layers)
    if (l.layer_index == layer_index) return &l;
  return nullptr;
}

double StripePlan::mean_overhead() const {
  if (layers.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& l : layers) sum += l.overhead_ratio();
  return sum / static_cast<double>(layers.size());
}

double StripePlan::aggregate_overhead() const {
  std::int64_t dense = 0, over = 0;
  for (const auto& l : layers) {
    dense += l.dense_macs;
    over += l.overhead_macs;
  }
  return dense == 0 ? 0.0 : static_cast<double>(over) / static_cast<double>(dense);
}

std::int64_t dense_macs(const LayerSpec& conv) {
  const auto k = static_cast<std::int64_t>(conv.conv.kernel);
  return std::int64_t{conv.output.height} * conv.output.width * conv.conv.out_channels *
         conv.conv.in_channels * k * k;
}

Stripe resident_ifm_rows(const Stripe& s, bool recompute, int ifm_tile_rows) {
  const int first = recompute ? s.first_tile_row - 1 : s.first_tile_row;
  const int end = std::min(s.end_tile_row() + 1, ifm_tile_rows);
  return {first, end - first};
}

StripeWorkingSet stripe_working_set(const LayerSpec& conv, int rows, bool multi_stripe,
                                    const BankConfig& cfg) {
  const int banks = cfg.num_banks;
  const int tc_in = ceil_div(conv.input.width, kTileDim);
  const int tr_in = ceil_div(conv.input.height, kTileDim);
  const int tc_out = ceil_div(conv.output.width, kTileDim);
  const std::int64_t cin_b = ceil_div(conv.conv.in_channels, banks);
  const std::int64_t cout_b = ceil_div(conv.conv.out_channels, banks);
  const int extra = multi_stripe ? 1 : 0;
  StripeWorkingSet ws;
  ws.ifm_tiles = cin_b * std::min(rows + 1 + extra, tr_in) * tc_in;
  ws.ofm_tiles = cout_b * (rows + extra) * tc_out;
  ws.weight_tiles = kFiltersPerGroup * cin_b;
  return ws;
}

LayerStripes plan_layer_stripes(const LayerSpec& conv, int layer_index, const BankConfig& cfg, int instances) {
  if (conv.kind != LayerKind::Conv) throw PlanningError("layer '" + conv.name + "' is not a conv layer");
  LayerStripes ls;
  ls.layer_index = layer_index;
  ls.name = conv.name;
  const int rows_out = ceil_div(conv.output.height, kTileDim);
  for (int s = rows_out; s >= 1; --s) {
    const bool multi = ceil_div(rows_out, s) > 1;
    if (stripe_working_set(conv, s, multi, cfg).total() <= cfg.tiles_per_bank) {
      ls.rows_per_stripe = s;
      break;
    }
  }
  if (ls.rows_per_stripe == 0) {
    const auto need = stripe_working_set(conv, 1, rows_out > 1, cfg).total();
    throw PlanningError("layer '" + conv.name + "': one tile row needs " + std::to_string(need) +
                        " tiles per bank, capacity is " + std::to_string(cfg.tiles_per_bank));
  }
  if (instances > 1) {
    int n = ceil_div(rows_out, ls.rows_per_stripe);
    n = std::min(rows_out, ceil_div(n, instances) * instances);
    ls.rows_per_stripe = ceil_div(rows_out, n);
  }
  ls.stripes = partition_stripes(rows_out, ls.rows_per_stripe);
  const bool multi = ls.stripes.size() > 1;
  for (const auto& s : ls.stripes)
    ls.working_sets.push_back(stripe_working_set(conv, s.num_tile_rows, multi, cfg));
  ls.dense_macs = dense_macs(conv);
  const auto k = static_cast<std::int64_t>(conv.conv.kernel);
  const std::int64_t row_macs = std::int64_t{kTileDim} * conv.output.width *
                                conv.conv.out_channels * conv.conv.in_channels * k * k;
  ls.overhead_macs = static_cast<std::int64_t>(ls.stripes.size() - 1) * row_macs;
  return ls;
}

StripePlan plan_stripes(const NetworkModel& m, const BankConfig& cfg, int instances) {
  StripePlan plan;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].kind == LayerKind::Conv)
      plan.layers.push_back(plan_layer_stripes(m.layers[i], static_cast<int>(i), cfg, instances));
  return plan;
}

// ---------------------------------------------------------------------------
// Program

int PadPoolInstr::used_units() const {
  int n = 0;
  for (auto m : masks) n += m != 0 ? 1 : 0;
  return n;
}

std::size_t Program::conv_instruction_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& s : l.conv_instrs) n += s.size();
  return n;
}

std::size_t Program::padpool_instruction_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& chans : l.padpool_channels) n += chans.size() * l.padpool.instrs.size();
  return n;
}

void check_accumulator_range(const LayerSpec& conv) {
  const auto k = static_cast<std::int64_t>(conv.conv.kernel);
  const std::int64_t bound = std::int64_t{kMaxMagnitude} * kMaxMagnitude * k * k * conv.conv.in_channels;
  std::int64_t bias = 0;
  for (Acc b : conv.bias_acc) bias = std::max<std::int64_t>(bias, b < 0 ? -std::int64_t{b} : b);
  if (bound + bias >= (std::int64_t{1} << 31))
    throw PlanningError("layer '" + conv.name + "': accumulator bound " + std::to_string(bound + bias) +
                        " does not fit in 32 bits");
}

Program compile(const NetworkModel& m, const PackedNetwork& packed, const BankConfig& banks,
                int instances) {
  if (instances < 1) throw PlanningError("instance count must be at least 1");
  Program prog;
  prog.instances = instances;
  prog.banks = banks;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const LayerSpec& l = m.layers[li];
    ProgramLayer pl;
    pl.model_layer = static_cast<int>(li);
    pl.model_kind = l.kind;
    pl.name = l.name;
    pl.input = l.input;
    pl.output = l.output;
    const int layer_id = static_cast<int>(prog.layers.size());
    switch (l.kind) {
      case LayerKind::Conv: {
        pl.kind = ProgramLayerKind::Conv;
        const PackedLayer* w = packed.find(static_cast<int>(li));
        if (w == nullptr) throw PlanningError("no packed weight stream for layer '" + l.name + "'");
        if (w->in_channels != l.conv.in_channels || w->out_channels != l.conv.out_channels ||
            w->kernel != l.conv.kernel)
          throw PlanningError("packed weight stream for layer '" + l.name + "' has mismatched geometry");
        check_accumulator_range(l);
        ConvLayerPlan& cp = pl.conv;
        cp.model_layer = static_cast<int>(li);
        cp.name = l.name;
        cp.input = l.input;
        cp.output = l.output;
        cp.kernel = l.conv.kernel;
        cp.filter_groups = w->filter_groups;
        cp.quant = l.quant;
        for (int c = 0; c < l.conv.in_channels; ++c) cp.channels_per_unit[c % kStagingUnits].push_back(c);
        cp.bias_init.assign(static_cast<std::size_t>(cp.filter_groups) * kFiltersPerGroup, 0);
        for (std::size_t o = 0; o < l.bias_acc.size(); ++o) cp.bias_init[o] = l.bias_acc[o];
        cp.stripes = plan_layer_stripes(l, static_cast<int>(li), banks, instances);
        cp.weights = *w;

        pl.conv_instrs.resize(instances);
        const int tc_out = ceil_div(l.output.width, kTileDim);
        const int tr_in = ceil_div(l.input.height, kTileDim);
        for (std::size_t si = 0; si < cp.stripes.stripes.size(); ++si) {
          const Stripe& s = cp.stripes.stripes[si];
          const int inst = static_cast<int>(si) % instances;
          auto& stream = pl.conv_instrs[inst];
          const bool recompute = si > 0;
          auto emit_row = [&](int ty, bool rc) {
            for (int tx = 0; tx < tc_out; ++tx)
              for (int fg = 0; fg < cp.filter_groups; ++fg)
                stream.push_back({layer_id, static_cast<int>(si), tx, ty, fg, rc});
          };
          if (recompute) emit_row(s.first_tile_row - 1, true);
          for (int ty = s.first_tile_row; ty < s.end_tile_row(); ++ty) emit_row(ty, false);
          Stripe ofm = s;
          if (recompute) ofm = {s.first_tile_row - 1, s.num_tile_rows + 1};
          pl.dma.push_back({layer_id, static_cast<int>(si), inst, resident_ifm_rows(s, recompute, tr_in), ofm});
        }
        break;
      }
      case LayerKind::Pad:
      case LayerKind::MaxPool: {
        pl.kind = ProgramLayerKind::PadPool;
        pl.padpool = l.kind == LayerKind::Pad ? lower_pad(l.input, l.pad.border)
                                              : lower_maxpool(l.input, l.pool);
        for (auto& ins : pl.padpool.instrs) ins.layer = layer_id;
        pl.padpool_channels.resize(instances);
        for (int c = 0; c < l.input.channels; ++c)
          pl.padpool_channels[(c / kStagingUnits) % instances].push_back(c);
        for (int inst = 0; inst < instances; ++inst)
          pl.dma.push_back({layer_id, 0, inst, {0, ceil_div(l.input.height, kTileDim)},
                            {0, ceil_div(l.output.height, kTileDim)}});
        break;
      }
      case LayerKind::FullyConnected:
      case LayerKind::Flatten:
        pl.kind = ProgramLayerKind::Host;
        pl.host = l;
        pl.host.weights.clear();
        pl.host.bias.clear();
        break;
    }
    prog.layers.push_back(std::move(pl));
  }
  return prog;
}

// ---------------------------------------------------------------------------
// Listing

namespace {

const char* ref_name(TensorRef r) {
  switch (r) {
    case TensorRef::Input: return "in";
    case TensorRef::Scratch: return "scratch";
    case TensorRef::Output: return "out";
  }
  return "?";
}

void list_padpool(std::ostream& os, const PadPoolInstr& ins, int inst, int channel) {
  static const char* hex = "0123456789abcdef";
  os << "PADPOOL inst=" << inst << " ch=" << channel << " phase=" << ins.phase
     << " src=" << ref_name(ins.source) << "(" << ins.src_tx << "," << ins.src_ty << ")"
     << " dst=" << ref_name(ins.dest) << "(" << ins.dst_tx << "," << ins.dst_ty << ") masks=";
  for (int k = 0; k < kMaxUnits; ++k) {
    if (k) os << ",";
    for (int sh = 12; sh >= 0; sh -= 4) os << hex[(ins.masks[k] >> sh) & 0xF];
  }
  os << " sel=";
  for (auto s : ins.selectors) os << static_cast<char>(s == kKeep ? '.' : '0' + (s - 1));
  os << "\n";
}

}  // namespace

void write_listing(std::ostream& os, const Program& p) {
  os << "# program instances=" << p.instances << " tiles_per_bank=" << p.banks.tiles_per_bank << "\n";
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    os << "# layer " << li << " " << l.name << " " << to_string(l.input) << " -> " << to_string(l.output);
    if (l.kind == ProgramLayerKind::Conv)
      os << " stripes=" << l.conv.stripes.stripes.size() << " rows_per_stripe=" << l.conv.stripes.rows_per_stripe
         << " filter_groups=" << l.conv.filter_groups;
    if (l.kind == ProgramLayerKind::PadPool) os << " phases=" << l.padpool.phases;
    os << "\n";
    for (const auto& d : l.dma)
      os << "DMA inst=" << d.instance << " stripe=" << d.stripe << " ifm_rows=[" << d.ifm_rows.first_tile_row
         << "," << d.ifm_rows.end_tile_row() << ") ofm_rows=[" << d.ofm_rows.first_tile_row << ","
         << d.ofm_rows.end_tile_row() << ")\n";
    switch (l.kind) {
      case ProgramLayerKind::Conv:
        for (std::size_t inst = 0; inst < l.conv_instrs.size(); ++inst)
          for (const auto& c : l.conv_instrs[inst])
            os << "CONV inst=" << inst << " stripe=" << c.stripe << " tile=(" << c.tile_x << "," << c.tile_y
               << ") fg=" << c.filter_group << (c.recompute ? " recompute" : "") << "\n";
        break;
      case ProgramLayerKind::PadPool:
        for (std::size_t inst = 0; inst < l.padpool_channels.size(); ++inst)
          for (int phase = 0; phase < l.padpool.phases; ++phase)
            for (int c : l.padpool_channels[inst])
              for (const auto& ins : l.padpool.instrs)
                if (ins.phase == phase) list_padpool(os, ins, static_cast<int>(inst), c);
        break;
      case ProgramLayerKind::Host:
        os << "HOST " << to_string(l.host.kind) << " " << l.name << "\n";
        break;
    }
  }
}

// ---------------------------------------------------------------------------
// Binary program image

namespace {

using namespace binio;

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  const auto n = get_u32(is, "string length");
  if (n > (1u << 20)) throw FormatError("string too long in program image");
  std::string s(n, '\0');
  for (auto& ch : s) ch = static_cast<char>(get_u8(is, "string"));
  return s;
}

void put_shape(std::ostream& os, const Shape& s) {
  put_u32(os, static_cast<std::uint32_t>(s.channels));
  put_u32(os, static_cast<std::uint32_t>(s.height));
  put_u32(os, static_cast<std::uint32_t>(s.width));
}

Shape get_shape(std::istream& is) {
  Shape s;
  s.channels = get_i32(is, "shape");
  s.height = get_i32(is, "shape");
  s.width = get_i32(is, "shape");
  return s;
}

void put_stripe(std::ostream& os, const Stripe& s) {
  put_u32(os, static_cast<std::uint32_t>(s.first_tile_row));
  put_u32(os, static_cast<std::uint32_t>(s.num_tile_rows));
}

Stripe get_stripe(std::istream& is) {
  Stripe s;
  s.first_tile_row = get_i32(is, "stripe");
  s.num_tile_rows = get_i32(is, "stripe");
  return s;
}

void put_i64(std::ostream& os, std::int64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xFFFFFFFF));
  put_u32(os, static_cast<std::uint32_t>(static_cast<std::uint64_t>(v) >> 32));
}

std::int64_t get_i64(std::istream& is) {
  const std::uint64_t lo = get_u32(is, "i64");
  const std::uint64_t hi = get_u32(is, "i64");
  return static_cast<std::int64_t>(lo | (hi << 32));
}

void put_quant(std::ostream& os, const LayerQuant& q) {
  std::uint64_t bits;
  static_assert(sizeof bits == sizeof q.weight_scale);
  std::memcpy(&bits, &q.weight_scale, sizeof bits);
  put_i64(os, static_cast<std::int64_t>(bits));
  put_u8(os, static_cast<std::uint8_t>(q.act_shift));
  put_u8(os, q.apply_relu ? 1 : 0);
}

LayerQuant get_quant(std::istream& is) {
  LayerQuant q;
  const auto bits = static_cast<std::uint64_t>(get_i64(is));
  std::memcpy(&q.weight_scale, &bits, sizeof bits);
  q.act_shift = get_u8(is, "quant");
  q.apply_relu = get_u8(is, "quant") != 0;
  return q;
}

template <typename T, typename F>
void put_vec(std::ostream& os, const std::vector<T>& v, F put_one) {
  put_u32(os, static_cast<std::uint32_t>(v.size()));
  for (const auto& x : v) put_one(x);
}

std::uint32_t get_count(std::istream& is, std::uint32_t limit = 1u << 28) {
  const auto n = get_u32(is, "count");
  if (n > limit) throw FormatError("count out of range in program image");
  return n;
}

void put_padpool(std::ostream& os, const PadPoolInstr& i) {
  put_u32(os, static_cast<std::uint32_t>(i.phase));
  put_u8(os, static_cast<std::uint8_t>(i.source));
  put_u8(os, static_cast<std::uint8_t>(i.dest));
  for (int v : {i.src_tx, i.src_ty, i.dst_tx, i.dst_ty}) put_u32(os, static_cast<std::uint32_t>(v));
  for (auto m : i.masks) {
    put_u8(os, static_cast<std::uint8_t>(m & 0xFF));
    put_u8(os, static_cast<std::uint8_t>(m >> 8));
  }
  for (auto s : i.selectors) put_u8(os, s);
}

PadPoolInstr get_padpool(std::istream& is, int layer) {
  PadPoolInstr i;
  i.layer = layer;
  i.phase = get_i32(is, "padpool");
  const auto src = get_u8(is, "padpool");
  const auto dst = get_u8(is, "padpool");
  if (src > 2 || dst > 2) throw FormatError("bad tensor reference in pad/pool instruction");
  i.source = static_cast<TensorRef>(src);
  i.dest = static_cast<TensorRef>(dst);
  i.src_tx = get_i32(is, "padpool");
  i.src_ty = get_i32(is, "padpool");
  i.dst_tx = get_i32(is, "padpool");
  i.dst_ty = get_i32(is, "padpool");
  for (auto& m : i.masks) {
    const std::uint16_t lo = get_u8(is, "padpool");
    const std::uint16_t hi = get_u8(is, "padpool");
    m = static_cast<std::uint16_t>(lo | (hi << 8));
  }
  for (auto& s : i.selectors) {
    s = get_u8(is, "padpool");
    if (s > kMaxUnits) throw FormatError("bad selector in pad/pool instruction");
  }
  return i;
}

}  // namespace

void write_program(std::ostream& os, const Program& p) {
  os.write("ZPRG", 4);
  put_u8(os, 1);
  put_u32(os, static_cast<std::uint32_t>(p.instances));
  put_u32(os, static_cast<std::uint32_t>(p.banks.num_banks));
  put_i64(os, p.banks.tiles_per_bank);
  put_u32(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    put_u8(os, static_cast<std::uint8_t>(l.kind));
    put_u8(os, static_cast<std::uint8_t>(l.model_kind));
    put_u32(os, static_cast<std::uint32_t>(l.model_layer));
    put_str(os, l.name);
    put_shape(os, l.input);
    put_shape(os, l.output);
    put_vec(os, l.dma, [&](const DmaTransfer& d) {
      put_u32(os, static_cast<std::uint32_t>(d.stripe));
      put_u32(os, static_cast<std::uint32_t>(d.instance));
      put_stripe(os, d.ifm_rows);
      put_stripe(os, d.ofm_rows);
    });
    switch (l.kind) {
      case ProgramLayerKind::Conv: {
        const auto& c = l.conv;
        put_u8(os, static_cast<std::uint8_t>(c.kernel));
        put_u32(os, static_cast<std::uint32_t>(c.filter_groups));
        put_quant(os, c.quant);
        put_vec(os, c.bias_init, [&](Acc a) { put_i32(os, a); });
        put_u32(os, static_cast<std::uint32_t>(c.stripes.rows_per_stripe));
        put_i64(os, c.stripes.dense_macs);
        put_i64(os, c.stripes.overhead_macs);
        put_vec(os, c.stripes.stripes, [&](const Stripe& s) { put_stripe(os, s); });
        put_vec(os, c.stripes.working_sets, [&](const StripeWorkingSet& w) {
          put_i64(os, w.ifm_tiles);
          put_i64(os, w.ofm_tiles);
          put_i64(os, w.weight_tiles);
        });
        write_packed_layer(os, c.weights);
        put_vec(os, l.conv_instrs, [&](const std::vector<ConvInstr>& stream) {
          put_vec(os, stream, [&](const ConvInstr& ci) {
            put_u32(os, static_cast<std::uint32_t>(ci.stripe));
            put_u32(os, static_cast<std::uint32_t>(ci.tile_x));
            put_u32(os, static_cast<std::uint32_t>(ci.tile_y));
            put_u32(os, static_cast<std::uint32_t>(ci.filter_group));
            put_u8(os, ci.recompute ? 1 : 0);
          });
        });
        break;
      }
      case ProgramLayerKind::PadPool:
        put_u32(os, static_cast<std::uint32_t>(l.padpool.phases));
        put_shape(os, l.padpool.scratch);
        put_vec(os, l.padpool.instrs, [&](const PadPoolInstr& i) { put_padpool(os, i); });
        put_vec(os, l.padpool_channels, [&](const std::vector<int>& chans) {
          put_vec(os, chans, [&](int c) { put_u32(os, static_cast<std::uint32_t>(c)); });
        });
        break;
      case ProgramLayerKind::Host: {
        const auto& h = l.host;
        put_u8(os, static_cast<std::uint8_t>(h.kind));
        put_u32(os, static_cast<std::uint32_t>(h.fc.in_features));
        put_u32(os, static_cast<std::uint32_t>(h.fc.out_features));
        put_quant(os, h.quant);
        put_vec(os, h.qweights, [&](QVal v) { put_u8(os, v.to_byte()); });
        put_vec(os, h.bias_acc, [&](Acc a) { put_i32(os, a); });
        break;
      }
    }
  }
}

Program read_program(std::istream& is) {
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(get_u8(is, "program magic"));
  if (std::string(magic, 4) != "ZPRG") throw FormatError("bad program image magic");
  if (get_u8(is, "program version") != 1) throw FormatError("unsupported program image version");
  Program p;
  p.instances = static_cast<int>(get_count(is, 64));
  p.banks.num_banks = static_cast<int>(get_count(is, 64));
  p.banks.tiles_per_bank = get_i64(is);
  const auto nlayers = get_count(is, 1u << 16);
  for (std::uint32_t li = 0; li < nlayers; ++li) {
    ProgramLayer l;
    const auto kind = get_u8(is, "layer kind");
    if (kind > 2) throw FormatError("bad layer kind in program image");
    l.kind = static_cast<ProgramLayerKind>(kind);
    const auto mkind = get_u8(is, "layer kind");
    if (mkind > static_cast<std::uint8_t>(LayerKind::Flatten)) throw FormatError("bad model layer kind in program image");
    l.model_kind = static_cast<LayerKind>(mkind);
    l.model_layer = get_i32(is, "layer");
    l.name = get_str(is);
    l.input = get_shape(is);
    l.output = get_shape(is);
    const int layer_id = static_cast<int>(li);
    l.dma.resize(get_count(is));
    for (auto& d : l.dma) {
      d.layer = layer_id;
      d.stripe = get_i32(is, "dma");
      d.instance = get_i32(is, "dma");
      d.ifm_rows = get_stripe(is);
      d.ofm_rows = get_stripe(is);
    }
    switch (l.kind) {
      case ProgramLayerKind::Conv: {
        auto& c = l.conv;
        c.model_layer = l.model_layer;
        c.name = l.name;
        c.input = l.input;
        c.output = l.output;
        c.kernel = get_u8(is, "conv");
        c.filter_groups = get_i32(is, "conv");
        c.quant = get_quant(is);
        c.bias_init.resize(get_count(is));
        for (auto& b : c.bias_init) b = get_i32(is, "bias");
        for (int ch = 0; ch < l.input.channels; ++ch) c.channels_per_unit[ch % kStagingUnits].push_back(ch);
        c.stripes.layer_index = l.model_layer;
        c.stripes.name = l.name;
        c.stripes.rows_per_stripe = get_i32(is, "stripes");
        c.stripes.dense_macs = get_i64(is);
        c.stripes.overhead_macs = get_i64(is);
        c.stripes.stripes.resize(get_count(is));
        for (auto& s : c.stripes.stripes) s = get_stripe(is);
        c.stripes.working_sets.resize(get_count(is));
        for (auto& w : c.stripes.working_sets) {
          w.ifm_tiles = get_i64(is);
          w.ofm_tiles = get_i64(is);
          w.weight_tiles = get_i64(is);
        }
        c.weights = read_packed_layer(is);
        l.conv_instrs.resize(get_count(is, 64));
        for (auto& stream : l.conv_instrs) {
          stream.resize(get_count(is));
          for (auto& ci : stream) {
            ci.layer = layer_id;
            ci.stripe = get_i32(is, "conv instr");
            ci.tile_x = get_i32(is, "conv instr");
            ci.tile_y = get_i32(is, "conv instr");
            ci.filter_group = get_i32(is, "conv instr");
            ci.recompute = get_u8(is, "conv instr") != 0;
          }
        }
        break;
      }
      case ProgramLayerKind::PadPool: {
        l.padpool.phases = get_i32(is, "padpool");
        l.padpool.scratch = get_shape(is);
        l.padpool.instrs.resize(get_count(is));
        for (auto& i : l.padpool.instrs) i = get_padpool(is, layer_id);
        l.padpool_channels.resize(get_count(is, 64));
        for (auto& chans : l.padpool_channels) {
          chans.resize(get_count(is));
          for (auto& c : chans) c = get_i32(is, "channel");
        }
        break;
      }
      case ProgramLayerKind::Host: {
        auto& h = l.host;
        h.name = l.name;
        const auto hk = get_u8(is, "host kind");
        if (hk != static_cast<std::uint8_t>(LayerKind::FullyConnected) &&
            hk != static_cast<std::uint8_t>(LayerKind::Flatten))
          throw FormatError("bad host layer kind");
        h.kind = static_cast<LayerKind>(hk);
        h.fc.in_features = get_i32(is, "fc");
        h.fc.out_features = get_i32(is, "fc");
        h.quant = get_quant(is);
        h.qweights.resize(get_count(is));
        for (auto& v : h.qweights)
          if (!QVal::from_byte(get_u8(is, "fc weight"), v)) throw FormatError("negative zero fc weight");
        h.bias_acc.resize(get_count(is));
        for (auto& b : h.bias_acc) b = get_i32(is, "fc bias");
        h.input = l.input;
        h.output = l.output;
        break;
      }
    }
    p.layers.push_back(std::move(l));
  }
  return p;
}

void save_program(const std::string& path, const Program& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_program(os, p);
}

Program load_program(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_program(is);
}

// ---------------------------------------------------------------------------
// Host layers

FcResult run_fc_host(const LayerSpec& fc, const std::vector<QVal>& a) {
  FcResult r;
  if (fc.kind == LayerKind::Flatten) {
    r.out = a;
    r.acc.reserve(a.size());
    for (QVal v : a) r.acc.push_back(v.to_int());
    return r;
  }
  if (fc.kind != LayerKind::FullyConnected) throw Error("layer '" + fc.name + "' is not a host layer");
  if (!fc.is_quantized()) throw Error("layer '" + fc.name + "' is not quantized");
  if (a.size() != static_cast<std::size_t>(fc.fc.in_features))
    throw ShapeError("layer '" + fc.name + "': expected " + std::to_string(fc.fc.in_features) +
                     " activations, got " + std::to_string(a.size()));
  const auto in = static_cast<std::size_t>(fc.fc.in_features);
  r.acc.resize(fc.fc.out_features);
  r.out.resize(fc.fc.out_features);
  for (int o = 0; o < fc.fc.out_features; ++o) {
    std::int64_t sum = fc.bias_acc.empty() ? 0 : fc.bias_acc[o];
    const QVal* w = fc.qweights.data() + static_cast<std::size_t>(o) * in;
    for (std::size_t i = 0; i < in; ++i) sum += mul(w[i], a[i]);
    if (sum > std::numeric_limits<Acc>::max() || sum < std::numeric_limits<Acc>::min())
      throw Error("layer '" + fc.name + "': accumulator overflow");
    r.acc[o] = static_cast<Acc>(sum);
    r.out[o] = requantize(r.acc[o], fc.quant);
  }
  return r;
}

}  // namespace zskip
