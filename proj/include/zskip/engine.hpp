// engine.hpp - the accelerator model.
//
// exec_program runs a compiled Program functionally: staging units fetch
// 2x2 IFM tile blocks, conv units steer and multiply the packed weights,
// accumulators hold one OFM tile per filter of the group, and a write unit
// stores requantized tiles. Units talk through bounded FIFOs under a
// cooperative scheduler; each OFM tile group ends at a barrier.
//
// Cost model per conv instruction: every staging unit spends
// max(4, max nnz of the four filters) cycles per channel it owns; the
// instruction takes the slowest unit's total (barrier) plus pipeline_fill.
// Weight unpacking costs one cycle per packed entry per staging unit, once
// per layer stripe, and only the part exceeding the stripe's compute adds
// time. Each further stripe on an instance adds one pipeline_fill. Pad/pool
// instructions take one cycle on their unit, plus pipeline_fill per phase.
// With two instances a layer's elapsed time is the slower instance.
//
// estimate() evaluates the same cost model without touching data, which is
// what makes VGG-16 sized studies cheap.
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "zskip/driver.hpp"
#include "zskip/layout.hpp"

namespace zskip {

struct EngineConfig {
  std::string variant = "256-opt";
  int staging_units = kStagingUnits;
  int macs_per_conv_unit = 64;
  int instances = 1;
  int fifo_depth = 4;
  int pipeline_fill = 12;
  double clock_mhz = 150.0;
  bool single_conv_unit = false;  // 16-unopt: one 16-MAC unit, filters in turn
  bool stall_accounting = false;
  // Nonzero: units are stepped in a shuffled order each scheduler pass.
  std::uint64_t schedule_seed = 0;

  int macs_per_cycle() const;
};

// 16-unopt, 256-unopt, 256-opt, 512-opt. Throws Error for other names.
EngineConfig preset(std::string_view variant);
std::vector<std::string> variant_names();

// The 4x4 region of an 8x8 block anchored at the weight's intra-tile offset.
std::array<QVal, kTileSize> steer(int offset, const Block8& block);

struct LayerCycles {
  std::string name;
  std::string kind;  // conv, pad, maxpool
  std::int64_t dense_macs = 0;
  std::int64_t executed_macs = 0;
  std::int64_t skipped_macs = 0;
  std::int64_t stripe_overhead_macs = 0;
  std::int64_t conv_cycles = 0;
  std::int64_t unpack_cycles = 0;  // excess over compute only
  std::int64_t padpool_cycles = 0;
  std::int64_t fill_cycles = 0;
  std::int64_t stall_cycles = 0;  // informational, not part of the total

  std::int64_t total_cycles() const { return conv_cycles + unpack_cycles + padpool_cycles + fill_cycles; }
  friend bool operator==(const LayerCycles&, const LayerCycles&) = default;
};

struct CycleReport {
  std::string variant;
  int macs_per_cycle = 0;
  double clock_mhz = 0.0;
  int instances = 1;
  std::vector<LayerCycles> layers;  // engine layers in program order

  LayerCycles totals() const;
  const LayerCycles& at(const std::string& name) const;
  friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

struct ExecResult {
  // One entry per program layer; host layers hold an empty tensor.
  std::vector<TiledTensor> activations;
  std::vector<std::vector<QVal>> host_outputs;  // empty for engine layers
  CycleReport cycles;
};

// Throws EngineFault (with instruction context) or DeadlockError.
ExecResult exec_program(const Program& p, const TiledTensor& input, const EngineConfig& cfg,
                        std::ostream* trace = nullptr);

// Timing only.
CycleReport estimate(const Program& p, const EngineConfig& cfg, std::ostream* trace = nullptr);

// Per-instruction cost, shared by both paths.
struct ConvCost {
  std::int64_t compute = 0;
  std::int64_t fill = 0;
};
ConvCost conv_group_cost(const ConvLayerPlan& plan, int filter_group, const EngineConfig& cfg);

}  // namespace zskip
