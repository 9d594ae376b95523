// driver.hpp - the host side: stripe planning, instruction compilation and
// fully connected layers.
//
// The compiler turns a quantized network plus its packed weight streams into
// a Program: per engine layer, an instruction stream per accelerator
// instance. Conv layers emit one ConvInstr per (stripe, OFM tile, filter
// group); pad and max-pool layers are lowered onto the four-MAX-unit
// pad/pool datapath; fully connected layers stay on the host.
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "zskip/layout.hpp"
#include "zskip/netmodel.hpp"
#include "zskip/numerics.hpp"
#include "zskip/packer.hpp"

namespace zskip {

// Bank capacity calibrated so full VGG-16 striping lands near the ~15%
// MAC overhead observed on the Arria 10 SX660 part.
BankConfig arria10_sx660_banks();

// ---------------------------------------------------------------------------
// Stripe planning

struct StripeWorkingSet {
  std::int64_t ifm_tiles = 0;     // per bank, including halo rows
  std::int64_t ofm_tiles = 0;     // per bank, including a recomputed row
  std::int64_t weight_tiles = 0;  // per bank, one filter group resident
  std::int64_t total() const { return ifm_tiles + ofm_tiles + weight_tiles; }
};

struct LayerStripes {
  int layer_index = 0;
  std::string name;
  int rows_per_stripe = 0;
  std::vector<Stripe> stripes;  // OFM tile rows
  std::vector<StripeWorkingSet> working_sets;
  std::int64_t dense_macs = 0;
  std::int64_t overhead_macs = 0;
  double overhead_ratio() const {
    return dense_macs == 0 ? 0.0 : static_cast<double>(overhead_macs) / dense_macs;
  }
};

struct StripePlan {
  std::vector<LayerStripes> layers;  // conv layers only
  const LayerStripes* find(int layer_index) const;
  double mean_overhead() const;       // mean of per-layer ratios
  double aggregate_overhead() const;  // total overhead / total dense MACs
};

// Logical dense MACs of a conv layer: H_out * W_out * C_out * C_in * k^2.
std::int64_t dense_macs(const LayerSpec& conv);

// IFM tile rows a stripe needs resident: its own rows, one halo row below
// and, after the first stripe, the row above used for recomputation.
Stripe resident_ifm_rows(const Stripe& s, bool recompute, int ifm_tile_rows);

StripeWorkingSet stripe_working_set(const LayerSpec& conv, int rows, bool multi_stripe,
                                    const BankConfig& cfg);
// Picks the tallest stripe that fits the bank capacity. With several
// instances the stripe count is rounded up to a multiple of the instance
// count (when the layer has enough tile rows) so stripes split evenly.
LayerStripes plan_layer_stripes(const LayerSpec& conv, int layer_index, const BankConfig& cfg,
                                int instances = 1);
StripePlan plan_stripes(const NetworkModel& m, const BankConfig& cfg, int instances = 1);

// ---------------------------------------------------------------------------
// Instructions

struct ConvInstr {
  int layer = 0;  // index into Program::layers
  int stripe = 0;
  int tile_x = 0;  // OFM tile coordinate
  int tile_y = 0;
  int filter_group = 0;
  bool recompute = false;  // halo row recomputed after a stripe boundary
};

enum class TensorRef : std::uint8_t { Input = 0, Scratch = 1, Output = 2 };

inline constexpr int kMaxUnits = 4;
inline constexpr std::uint8_t kKeep = 0;

// Pad/pool instruction. MAX unit k reduces the input-tile values selected by
// masks[k]; output value i becomes max_(selectors[i]-1), or is kept when
// selectors[i] == kKeep. Lowered once per layer and replayed for every
// channel (channel == -1 in the template).
struct PadPoolInstr {
  int layer = 0;
  int phase = 0;
  int channel = -1;
  TensorRef source = TensorRef::Input;
  TensorRef dest = TensorRef::Output;
  int src_tx = 0, src_ty = 0;
  int dst_tx = 0, dst_ty = 0;
  std::array<std::uint16_t, kMaxUnits> masks{};
  std::array<std::uint8_t, kTileSize> selectors{};

  int used_units() const;
};

struct PadPoolLowering {
  int phases = 1;
  Shape scratch;  // zero channels when no scratch tensor is needed
  std::vector<PadPoolInstr> instrs;  // channel-agnostic, ordered by phase
};

PadPoolLowering lower_pad(const Shape& input, int border);
PadPoolLowering lower_maxpool(const Shape& input, const PoolParams& pool);

// Applies one pad/pool instruction to an output tile (functional semantics
// shared by the engine's pad/pool unit). Throws EngineFault when a selector
// names an empty mask.
void apply_padpool(const PadPoolInstr& instr, const Tile& input, Tile& output);

struct DmaTransfer {
  int layer = 0;
  int stripe = 0;
  int instance = 0;
  Stripe ifm_rows;
  Stripe ofm_rows;
};

struct ConvLayerPlan {
  int model_layer = 0;
  std::string name;
  Shape input;
  Shape output;
  int kernel = 3;
  int filter_groups = 0;
  LayerQuant quant;
  std::array<std::vector<int>, kStagingUnits> channels_per_unit;
  std::vector<Acc> bias_init;  // filter_groups * 4 entries
  LayerStripes stripes;
  PackedLayer weights;
};

enum class ProgramLayerKind : std::uint8_t { Conv, PadPool, Host };

struct ProgramLayer {
  ProgramLayerKind kind = ProgramLayerKind::Conv;
  LayerKind model_kind = LayerKind::Conv;
  int model_layer = 0;
  std::string name;
  Shape input;
  Shape output;
  // Conv: plan plus per-instance instruction streams.
  ConvLayerPlan conv;
  std::vector<std::vector<ConvInstr>> conv_instrs;
  // PadPool: lowering template replayed per channel; channels split per instance.
  PadPoolLowering padpool;
  std::vector<std::vector<int>> padpool_channels;
  // Host: copy of the model layer (fc / flatten).
  LayerSpec host;
  std::vector<DmaTransfer> dma;
};

struct Program {
  int instances = 1;
  BankConfig banks;
  std::vector<ProgramLayer> layers;

  std::size_t conv_instruction_count() const;
  std::size_t padpool_instruction_count() const;  // expanded over channels
};

// Throws PlanningError when 127*127*k*k*C_in (+ bias) reaches 2^31.
void check_accumulator_range(const LayerSpec& conv);

Program compile(const NetworkModel& m, const PackedNetwork& packed, const BankConfig& banks,
                int instances);

// One line per instruction; pad/pool templates expand per channel.
void write_listing(std::ostream& os, const Program& p);

void write_program(std::ostream& os, const Program& p);
Program read_program(std::istream& is);
void save_program(const std::string& path, const Program& p);
Program load_program(const std::string& path);

// ---------------------------------------------------------------------------
// Host-side layers

struct FcResult {
  std::vector<Acc> acc;
  std::vector<QVal> out;
};

FcResult run_fc_host(const LayerSpec& fc, const std::vector<QVal>& activations);

}  // namespace zskip
