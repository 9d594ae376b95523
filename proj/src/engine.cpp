#include "zskip/engine.hpp"

#include <algorithm>
#include <memory>
#include <ostream>
#include <sstream>

#include "zskip/errors.hpp"
#include "zskip/fifo.hpp"

namespace zskip {

int EngineConfig::macs_per_cycle() const {
  if (single_conv_unit) return kTileSize;
  return staging_units * macs_per_conv_unit * instances;
}

EngineConfig preset(std::string_view variant) {
  EngineConfig c;
  c.variant = std::string(variant);
  if (variant == "16-unopt") {
    c.single_conv_unit = true;
    c.clock_mhz = 55.0;
  } else if (variant == "256-unopt") {
    c.clock_mhz = 55.0;
  } else if (variant == "256-opt") {
    c.clock_mhz = 150.0;
  } else if (variant == "512-opt") {
    c.clock_mhz = 120.0;
    c.instances = 2;
  } else {
    throw Error("unknown variant '" + std::string(variant) + "'");
  }
  return c;
}

std::vector<std::string> variant_names() { return {"16-unopt", "256-unopt", "256-opt", "512-opt"}; }

std::array<QVal, kTileSize> steer(int offset, const Block8& block) {
  const int i = offset / kTileDim, j = offset % kTileDim;
  std::array<QVal, kTileSize> out;
  for (int u = 0; u < kTileDim; ++u)
    for (int v = 0; v < kTileDim; ++v) out[tile_index(u, v)] = block.at(u + i, v + j);
  return out;
}

LayerCycles CycleReport::totals() const {
  LayerCycles t;
  t.name = "total";
  for (const auto& l : layers) {
    t.dense_macs += l.dense_macs;
    t.executed_macs += l.executed_macs;
    t.skipped_macs += l.skipped_macs;
    t.stripe_overhead_macs += l.stripe_overhead_macs;
    t.conv_cycles += l.conv_cycles;
    t.unpack_cycles += l.unpack_cycles;
    t.padpool_cycles += l.padpool_cycles;
    t.fill_cycles += l.fill_cycles;
    t.stall_cycles += l.stall_cycles;
  }
  return t;
}

const LayerCycles& CycleReport::at(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw Error("no layer '" + name + "' in cycle report");
}

ConvCost conv_group_cost(const ConvLayerPlan& plan, int fg, const EngineConfig& cfg) {
  ConvCost cost;
  if (cfg.single_conv_unit) {
    const int real = std::min(kFiltersPerGroup, plan.output.channels - fg * kFiltersPerGroup);
    for (int c = 0; c < plan.input.channels; ++c) {
      const auto& g = plan.weights.group(fg, c);
      for (int f = 0; f < real; ++f) cost.compute += std::max(kMinGroupCycles, g.filters[f].size());
    }
    cost.fill = std::int64_t{cfg.pipeline_fill} * real;
    return cost;
  }
  for (const auto& chans : plan.channels_per_unit) {
    std::int64_t unit = 0;
    for (int c : chans) unit += plan.weights.group(fg, c).cycle_count();
    cost.compute = std::max(cost.compute, unit);
  }
  cost.fill = cfg.pipeline_fill;
  return cost;
}

namespace {

void check_config(const EngineConfig& cfg, const Program& p) {
  if (cfg.staging_units != kStagingUnits) throw Error("the engine models exactly 4 staging units");
  if (cfg.fifo_depth < 1) throw Error("fifo depth must be at least 1");
  if (cfg.pipeline_fill < 0) throw Error("pipeline fill must be non-negative");
  if (cfg.instances != p.instances)
    throw Error("program compiled for " + std::to_string(p.instances) + " instance(s), engine configured for " +
                std::to_string(cfg.instances));
}

// Weight unpack time for one stripe: every staging unit expands its own
// channels' packed entries.
std::int64_t stripe_unpack(const ConvLayerPlan& plan, const EngineConfig& cfg) {
  if (cfg.single_conv_unit) return plan.weights.total_entries();
  std::int64_t worst = 0;
  for (const auto& chans : plan.channels_per_unit) {
    std::int64_t n = 0;
    for (int fg = 0; fg < plan.filter_groups; ++fg)
      for (int c : chans) n += plan.weights.group(fg, c).total_entries();
    worst = std::max(worst, n);
  }
  return worst;
}

int valid_lanes(const Shape& out, int tx, int ty) {
  return std::min(kTileDim, out.height - ty * kTileDim) * std::min(kTileDim, out.width - tx * kTileDim);
}

void check_weights(const ProgramLayer& l) {
  const auto& w = l.conv.weights;
  if (w.groups.size() != static_cast<std::size_t>(l.conv.filter_groups) * l.input.channels ||
      w.in_channels != l.input.channels || w.kernel != l.conv.kernel)
    throw EngineFault("layer '" + l.name + "': missing or mismatched weight stream");
}

const DmaTransfer& stripe_dma(const ProgramLayer& l, int stripe, int instance) {
  for (const auto& d : l.dma)
    if (d.stripe == stripe && d.instance == instance) return d;
  throw EngineFault("layer '" + l.name + "': no DMA plan for stripe " + std::to_string(stripe));
}

std::string describe(const ProgramLayer& l, int inst, const ConvInstr& ci) {
  std::ostringstream os;
  os << l.name << " inst=" << inst << " CONV stripe=" << ci.stripe << " tile=(" << ci.tile_x << ","
     << ci.tile_y << ") fg=" << ci.filter_group << (ci.recompute ? " recompute" : "");
  return os.str();
}

std::string describe(const ProgramLayer& l, int inst, int channel, const PadPoolInstr& pi) {
  std::ostringstream os;
  os << l.name << " inst=" << inst << " PADPOOL phase=" << pi.phase << " ch=" << channel << " src=("
     << pi.src_tx << "," << pi.src_ty << ") dst=(" << pi.dst_tx << "," << pi.dst_ty << ")";
  return os.str();
}

// Cycle bookkeeping for one instance of one layer.
struct InstanceCycles {
  std::int64_t conv = 0, unpack = 0, padpool = 0, fill = 0;
  std::int64_t total() const { return conv + unpack + padpool + fill; }
};

LayerCycles combine(const ProgramLayer& l, const std::vector<InstanceCycles>& inst) {
  LayerCycles lc;
  lc.name = l.name;
  const InstanceCycles* worst = &inst.front();
  for (const auto& i : inst)
    if (i.total() > worst->total()) worst = &i;
  lc.conv_cycles = worst->conv;
  lc.unpack_cycles = worst->unpack;
  lc.padpool_cycles = worst->padpool;
  lc.fill_cycles = worst->fill;
  return lc;
}

// Per-stripe bookkeeping shared by both paths.
struct StripeTally {
  std::int64_t compute = 0;
  std::int64_t fill = 0;
};

void close_stripe(InstanceCycles& ic, const StripeTally& t, std::int64_t unpack, bool first_on_instance,
                  const EngineConfig& cfg) {
  ic.conv += t.compute;
  ic.fill += t.fill + (first_on_instance ? 0 : cfg.pipeline_fill);
  ic.unpack += std::max<std::int64_t>(0, unpack - t.compute);
}

void conv_macs(const ProgramLayer& l, LayerCycles& lc) {
  const auto& cp = l.conv;
  const std::int64_t k2 = std::int64_t{cp.kernel} * cp.kernel;
  std::int64_t nnz = 0;
  for (int fg = 0; fg < cp.filter_groups; ++fg) {
    const int real = std::min(kFiltersPerGroup, l.output.channels - fg * kFiltersPerGroup);
    for (int c = 0; c < l.input.channels; ++c)
      for (int f = 0; f < real; ++f) nnz += cp.weights.group(fg, c).filters[f].size();
  }
  const std::int64_t pixels = std::int64_t{l.output.height} * l.output.width;
  lc.dense_macs = cp.stripes.dense_macs;
  lc.executed_macs = nnz * pixels;
  lc.skipped_macs = (k2 * l.output.channels * l.input.channels - nnz) * pixels;
  lc.stripe_overhead_macs = cp.stripes.overhead_macs;
}

std::int64_t padpool_unit_load(const std::vector<int>& channels, std::int64_t instrs) {
  std::array<std::int64_t, kMaxUnits> per_unit{};
  for (int c : channels) per_unit[c % kMaxUnits] += instrs;
  return *std::max_element(per_unit.begin(), per_unit.end());
}

// ---------------------------------------------------------------------------
// Functional conv datapath

struct Staged {
  int channel = 0;
  Block8 block;
  const PackedWeightGroup* weights = nullptr;
};

struct Partial {
  std::array<Acc, kTileSize> sums{};
};

struct Finished {
  int filter = 0;
  Tile tile;
};

struct ConvDatapath {
  const ProgramLayer& layer;
  const TiledTensor& ifm;
  TiledTensor& ofm;
  const EngineConfig& cfg;

  std::vector<std::unique_ptr<BoundedFifo<Staged>>> staged;                     // staging u -> conv u
  std::vector<std::unique_ptr<BoundedFifo<Partial>>> partials;                  // conv -> accumulator f
  std::unique_ptr<BoundedFifo<Finished>> finished;                              // accumulators -> writer
  std::vector<std::unique_ptr<Unit>> units;

  // Per-instruction state.
  const ConvInstr* instr = nullptr;
  std::array<std::int64_t, kStagingUnits> unit_cycles{};
  int written = 0;

  ConvDatapath(const ProgramLayer& l, const TiledTensor& in, TiledTensor& out, const EngineConfig& c);

  std::string snapshot() const {
    std::ostringstream os;
    os << "queue occupancy:";
    for (const auto& q : staged) os << " " << q->name() << "=" << q->size() << "/" << q->depth();
    for (const auto& q : partials) os << " " << q->name() << "=" << q->size() << "/" << q->depth();
    os << " " << finished->name() << "=" << finished->size() << "/" << finished->depth();
    return os.str();
  }

  std::int64_t push_stalls() const {
    std::int64_t n = finished->push_stalls();
    for (const auto& q : staged) n += q->push_stalls();
    for (const auto& q : partials) n += q->push_stalls();
    return n;
  }

  void start(const ConvInstr& ci);
  void run() {
    std::vector<Unit*> ptrs;
    for (auto& u : units) ptrs.push_back(u.get());
    run_units(ptrs, [&] { return written == kFiltersPerGroup; }, [&] { return snapshot(); }, cfg.schedule_seed);
  }
};

class StagingUnit : public Unit {
 public:
  StagingUnit(ConvDatapath& dp, int u) : Unit("staging" + std::to_string(u)), dp_(dp), u_(u) {}
  void reset() { next_ = 0; }
  bool step() override {
    const auto& chans = dp_.layer.conv.channels_per_unit[u_];
    if (next_ >= chans.size() || dp_.staged[u_]->full()) return false;
    const int c = chans[next_];
    const ConvInstr& ci = *dp_.instr;
    Staged s;
    s.channel = c;
    s.block = read_block_2x2(dp_.ifm, c, ci.tile_x, ci.tile_y);
    s.weights = &dp_.layer.conv.weights.group(ci.filter_group, c);
    dp_.unit_cycles[u_] += s.weights->cycle_count();
    dp_.staged[u_]->try_push(std::move(s));
    ++next_;
    return true;
  }

 private:
  ConvDatapath& dp_;
  int u_;
  std::size_t next_ = 0;
};

class ConvUnit : public Unit {
 public:
  ConvUnit(ConvDatapath& dp, int u) : Unit("conv" + std::to_string(u)), dp_(dp), u_(u) {}
  void reset() { pending_ = 0; }
  bool step() override {
    if (pending_ > 0) {
      const int f = kFiltersPerGroup - pending_;
      if (!dp_.partials[f]->try_push(out_[f])) return false;
      --pending_;
      return true;
    }
    auto item = dp_.staged[u_]->try_pop();
    if (!item) return false;
    for (int f = 0; f < kFiltersPerGroup; ++f) {
      auto& sums = out_[f].sums;
      sums.fill(0);
      for (const auto& e : item->weights->filters[f].entries()) {
        const int i = e.offset / kTileDim, j = e.offset % kTileDim;
        for (int u = 0; u < kTileDim; ++u)
          for (int v = 0; v < kTileDim; ++v) sums[tile_index(u, v)] += mul(e.weight, item->block.at(u + i, v + j));
      }
    }
    pending_ = kFiltersPerGroup;
    return true;
  }

 private:
  ConvDatapath& dp_;
  int u_;
  std::array<Partial, kFiltersPerGroup> out_;
  int pending_ = 0;
};

class AccumulatorUnit : public Unit {
 public:
  AccumulatorUnit(ConvDatapath& dp, int f) : Unit("acc" + std::to_string(f)), dp_(dp), f_(f) {}
  void reset() {
    const int o = dp_.instr->filter_group * kFiltersPerGroup + f_;
    acc_.fill(dp_.layer.conv.bias_init[o]);
    received_ = 0;
    done_ = false;
  }
  bool step() override {
    if (done_) return false;
    if (received_ == dp_.layer.input.channels) {
      Finished out;
      out.filter = f_;
      for (int i = 0; i < kTileSize; ++i) out.tile.values[i] = requantize(acc_[i], dp_.layer.conv.quant);
      if (!dp_.finished->try_push(std::move(out))) return false;
      done_ = true;
      return true;
    }
    auto p = dp_.partials[f_]->try_pop();
    if (!p) return false;
    for (int i = 0; i < kTileSize; ++i) acc_[i] += p->sums[i];
    ++received_;
    return true;
  }

 private:
  ConvDatapath& dp_;
  int f_;
  std::array<Acc, kTileSize> acc_{};
  int received_ = 0;
  bool done_ = false;
};

class WriteUnit : public Unit {
 public:
  explicit WriteUnit(ConvDatapath& dp) : Unit("write"), dp_(dp) {}
  bool step() override {
    auto r = dp_.finished->try_pop();
    if (!r) return false;
    const ConvInstr& ci = *dp_.instr;
    const int o = ci.filter_group * kFiltersPerGroup + r->filter;
    if (o < dp_.ofm.channels()) {
      Tile& t = dp_.ofm.tile(o, ci.tile_x, ci.tile_y);
      for (int u = 0; u < kTileDim; ++u)
        for (int v = 0; v < kTileDim; ++v) {
          const bool inside = ci.tile_y * kTileDim + u < dp_.ofm.height() && ci.tile_x * kTileDim + v < dp_.ofm.width();
          t.at(u, v) = inside ? r->tile.at(u, v) : QVal{};
        }
    }
    ++dp_.written;
    return true;
  }

 private:
  ConvDatapath& dp_;
};

ConvDatapath::ConvDatapath(const ProgramLayer& l, const TiledTensor& in, TiledTensor& out, const EngineConfig& c)
    : layer(l), ifm(in), ofm(out), cfg(c) {
  const auto depth = static_cast<std::size_t>(cfg.fifo_depth);
  for (int u = 0; u < kStagingUnits; ++u)
    staged.push_back(std::make_unique<BoundedFifo<Staged>>(depth, "staged" + std::to_string(u)));
  for (int f = 0; f < kFiltersPerGroup; ++f)
    partials.push_back(std::make_unique<BoundedFifo<Partial>>(depth, "partial" + std::to_string(f)));
  finished = std::make_unique<BoundedFifo<Finished>>(depth, "finished");
  for (int u = 0; u < kStagingUnits; ++u) units.push_back(std::make_unique<StagingUnit>(*this, u));
  for (int u = 0; u < kStagingUnits; ++u) units.push_back(std::make_unique<ConvUnit>(*this, u));
  for (int f = 0; f < kFiltersPerGroup; ++f) units.push_back(std::make_unique<AccumulatorUnit>(*this, f));
  units.push_back(std::make_unique<WriteUnit>(*this));
}

void ConvDatapath::start(const ConvInstr& ci) {
  instr = &ci;
  unit_cycles.fill(0);
  written = 0;
  for (int u = 0; u < kStagingUnits; ++u) {
    static_cast<StagingUnit&>(*units[u]).reset();
    static_cast<ConvUnit&>(*units[kStagingUnits + u]).reset();
  }
  for (int f = 0; f < kFiltersPerGroup; ++f) static_cast<AccumulatorUnit&>(*units[2 * kStagingUnits + f]).reset();
}

void check_resident(const ProgramLayer& l, const DmaTransfer& d, const ConvInstr& ci) {
  const int rows = ceil_div(l.input.height, kTileDim);
  for (int r : {ci.tile_y, ci.tile_y + 1}) {
    const bool resident = r >= d.ifm_rows.first_tile_row && r < d.ifm_rows.end_tile_row();
    if (!resident && r != rows)
      throw EngineFault("IFM tile row " + std::to_string(r) + " is not resident (resident rows [" +
                        std::to_string(d.ifm_rows.first_tile_row) + "," + std::to_string(d.ifm_rows.end_tile_row()) +
                        "))");
  }
  if (ci.tile_y < d.ofm_rows.first_tile_row || ci.tile_y >= d.ofm_rows.end_tile_row())
    throw EngineFault("OFM tile row " + std::to_string(ci.tile_y) + " outside the stripe's output rows");
}

LayerCycles run_conv_layer(const ProgramLayer& l, int li, const TiledTensor& in, TiledTensor& out,
                           const EngineConfig& cfg, std::ostream* trace) {
  check_weights(l);
  ConvDatapath dp(l, in, out, cfg);
  std::vector<InstanceCycles> inst(l.conv_instrs.size());
  const std::int64_t unpack = stripe_unpack(l.conv, cfg);
  const std::int64_t k2 = std::int64_t{l.conv.kernel} * l.conv.kernel;
  std::int64_t executed = 0, skipped = 0;
  for (std::size_t i = 0; i < l.conv_instrs.size(); ++i) {
    const auto& stream = l.conv_instrs[i];
    StripeTally tally;
    int stripe = -1;
    bool first = true;
    for (std::size_t n = 0; n < stream.size(); ++n) {
      const ConvInstr& ci = stream[n];
      if (ci.stripe != stripe) {
        if (stripe >= 0) {
          close_stripe(inst[i], tally, unpack, first, cfg);
          first = false;
        }
        tally = {};
        stripe = ci.stripe;
      }
      ConvCost cost;
      try {
        if (ci.layer != li) throw EngineFault("instruction belongs to layer " + std::to_string(ci.layer));
        check_resident(l, stripe_dma(l, ci.stripe, static_cast<int>(i)), ci);
        dp.start(ci);
        dp.run();
        if (cfg.single_conv_unit) {
          cost = conv_group_cost(l.conv, ci.filter_group, cfg);
        } else {
          cost.compute = *std::max_element(dp.unit_cycles.begin(), dp.unit_cycles.end());
          cost.fill = cfg.pipeline_fill;
        }
      } catch (const DeadlockError& e) {
        throw DeadlockError(describe(l, static_cast<int>(i), ci) + " (#" + std::to_string(n) + "): " + e.what());
      } catch (const Error& e) {
        throw EngineFault(describe(l, static_cast<int>(i), ci) + " (#" + std::to_string(n) + "): " + e.what());
      }
      tally.compute += cost.compute;
      tally.fill += cost.fill;
      if (!ci.recompute) {
        const std::int64_t lanes = valid_lanes(l.output, ci.tile_x, ci.tile_y);
        const int real = std::min(kFiltersPerGroup, l.output.channels - ci.filter_group * kFiltersPerGroup);
        for (int c = 0; c < l.input.channels; ++c) {
          const auto& g = l.conv.weights.group(ci.filter_group, c);
          for (int f = 0; f < real; ++f) {
            executed += g.filters[f].size() * lanes;
            skipped += (k2 - g.filters[f].size()) * lanes;
          }
        }
      }
      if (trace) *trace << describe(l, static_cast<int>(i), ci) << " compute=" << cost.compute << " fill=" << cost.fill << "\n";
    }
    if (stripe >= 0) close_stripe(inst[i], tally, unpack, first, cfg);
  }
  LayerCycles lc = combine(l, inst);
  lc.kind = "conv";
  lc.dense_macs = l.conv.stripes.dense_macs;
  lc.executed_macs = executed;
  lc.skipped_macs = skipped;
  lc.stripe_overhead_macs = l.conv.stripes.overhead_macs;
  if (cfg.stall_accounting) lc.stall_cycles = dp.push_stalls();
  return lc;
}

// ---------------------------------------------------------------------------
// Functional pad/pool datapath

struct PadPoolWork {
  const PadPoolInstr* instr = nullptr;
  int channel = 0;
};

class PadPoolUnit : public Unit {
 public:
  PadPoolUnit(int k, BoundedFifo<PadPoolWork>& q, const ProgramLayer& l, int inst, const TiledTensor& in,
              TiledTensor& scratch, TiledTensor& out, std::ostream* trace)
      : Unit("padpool" + std::to_string(k)), q_(q), l_(l), inst_(inst), in_(in), scratch_(scratch), out_(out),
        trace_(trace) {}
  std::int64_t executed = 0;
  bool step() override {
    auto w = q_.try_pop();
    if (!w) return false;
    const PadPoolInstr& pi = *w->instr;
    try {
      const TiledTensor& src = pi.source == TensorRef::Scratch ? scratch_ : in_;
      TiledTensor& dst = pi.dest == TensorRef::Scratch ? scratch_ : out_;
      if (pi.source == TensorRef::Output || pi.dest == TensorRef::Input)
        throw EngineFault("pad/pool instruction reads its output or writes its input");
      apply_padpool(pi, src.tile(w->channel, pi.src_tx, pi.src_ty), dst.tile(w->channel, pi.dst_tx, pi.dst_ty));
    } catch (const Error& e) {
      throw EngineFault(describe(l_, inst_, w->channel, pi) + ": " + e.what());
    }
    if (trace_) *trace_ << describe(l_, inst_, w->channel, pi) << " cycles=1\n";
    ++executed;
    return true;
  }

 private:
  BoundedFifo<PadPoolWork>& q_;
  const ProgramLayer& l_;
  int inst_;
  const TiledTensor& in_;
  TiledTensor& scratch_;
  TiledTensor& out_;
  std::ostream* trace_;
};

class DispatchUnit : public Unit {
 public:
  DispatchUnit(std::vector<std::unique_ptr<BoundedFifo<PadPoolWork>>>& queues, std::vector<PadPoolWork> work)
      : Unit("dispatch"), queues_(queues), work_(std::move(work)) {}
  bool done() const { return next_ == work_.size(); }
  bool step() override {
    if (done()) return false;
    const auto& w = work_[next_];
    if (!queues_[w.channel % kMaxUnits]->try_push(w)) return false;
    ++next_;
    return true;
  }

 private:
  std::vector<std::unique_ptr<BoundedFifo<PadPoolWork>>>& queues_;
  std::vector<PadPoolWork> work_;
  std::size_t next_ = 0;
};

LayerCycles run_padpool_layer(const ProgramLayer& l, const TiledTensor& in, TiledTensor& out,
                              const EngineConfig& cfg, std::ostream* trace) {
  const auto& low = l.padpool;
  TiledTensor scratch = low.scratch.channels > 0 ? TiledTensor(low.scratch.channels, low.scratch.width, low.scratch.height)
                                                 : TiledTensor();
  std::vector<InstanceCycles> inst(l.padpool_channels.size());
  std::int64_t stalls = 0;
  for (std::size_t i = 0; i < l.padpool_channels.size(); ++i) {
    const auto& chans = l.padpool_channels[i];
    if (chans.empty()) continue;
    for (int phase = 0; phase < low.phases; ++phase) {
      std::vector<PadPoolWork> work;
      for (int c : chans)
        for (const auto& pi : low.instrs)
          if (pi.phase == phase) work.push_back({&pi, c});
      std::vector<std::unique_ptr<BoundedFifo<PadPoolWork>>> queues;
      for (int k = 0; k < kMaxUnits; ++k)
        queues.push_back(std::make_unique<BoundedFifo<PadPoolWork>>(cfg.fifo_depth, "padpool_q" + std::to_string(k)));
      const std::size_t total = work.size();
      DispatchUnit dispatch(queues, std::move(work));
      std::vector<std::unique_ptr<PadPoolUnit>> units;
      std::vector<Unit*> ptrs{&dispatch};
      for (int k = 0; k < kMaxUnits; ++k) {
        units.push_back(std::make_unique<PadPoolUnit>(k, *queues[k], l, static_cast<int>(i), in, scratch, out, trace));
        ptrs.push_back(units.back().get());
      }
      auto executed = [&] {
        std::size_t n = 0;
        for (const auto& u : units) n += static_cast<std::size_t>(u->executed);
        return n;
      };
      try {
        run_units(
            ptrs, [&] { return executed() == total; },
            [&] {
              std::ostringstream os;
              os << "queue occupancy:";
              for (const auto& q : queues) os << " " << q->name() << "=" << q->size() << "/" << q->depth();
              return os.str();
            },
            cfg.schedule_seed);
      } catch (const DeadlockError& e) {
        throw DeadlockError("layer '" + l.name + "' phase " + std::to_string(phase) + ": " + e.what());
      }
      std::int64_t worst = 0;
      for (const auto& u : units) worst = std::max(worst, u->executed);
      inst[i].padpool += worst;
      inst[i].fill += cfg.pipeline_fill;
      for (const auto& q : queues) stalls += q->push_stalls();
    }
  }
  LayerCycles lc = combine(l, inst);
  lc.kind = to_string(l.model_kind);
  if (cfg.stall_accounting) lc.stall_cycles = stalls;
  return lc;
}

}  // namespace

ExecResult exec_program(const Program& p, const TiledTensor& input, const EngineConfig& cfg, std::ostream* trace) {
  check_config(cfg, p);
  ExecResult r;
  r.cycles.variant = cfg.variant;
  r.cycles.macs_per_cycle = cfg.macs_per_cycle();
  r.cycles.clock_mhz = cfg.clock_mhz;
  r.cycles.instances = cfg.instances;
  const TiledTensor* cur = &input;
  std::vector<QVal> host;  // activations once the host section begins
  bool on_host = false;
  if (!p.layers.empty()) {
    const Shape& s = p.layers.front().input;
    if (input.channels() != s.channels || input.height() != s.height || input.width() != s.width)
      throw ShapeError("input tensor " + std::to_string(input.channels()) + "x" + std::to_string(input.height()) + "x" +
                       std::to_string(input.width()) + " does not match program input " + to_string(s));
  }
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    if (l.kind == ProgramLayerKind::Host) {
      if (!on_host) host = untile_tensor(*cur);
      on_host = true;
      host = run_fc_host(l.host, host).out;
      r.activations.emplace_back();
      r.host_outputs.push_back(host);
      continue;
    }
    if (on_host) throw EngineFault("layer '" + l.name + "': engine layer after the host section");
    TiledTensor out(l.output.channels, l.output.width, l.output.height);
    LayerCycles lc = l.kind == ProgramLayerKind::Conv ? run_conv_layer(l, static_cast<int>(li), *cur, out, cfg, trace)
                                                      : run_padpool_layer(l, *cur, out, cfg, trace);
    r.cycles.layers.push_back(std::move(lc));
    r.activations.push_back(std::move(out));
    r.host_outputs.emplace_back();
    cur = &r.activations.back();
  }
  return r;
}

CycleReport estimate(const Program& p, const EngineConfig& cfg, std::ostream* trace) {
  check_config(cfg, p);
  CycleReport rep;
  rep.variant = cfg.variant;
  rep.macs_per_cycle = cfg.macs_per_cycle();
  rep.clock_mhz = cfg.clock_mhz;
  rep.instances = cfg.instances;
  for (const auto& l : p.layers) {
    if (l.kind == ProgramLayerKind::Host) continue;
    std::vector<InstanceCycles> inst;
    if (l.kind == ProgramLayerKind::Conv) {
      check_weights(l);
      std::vector<ConvCost> costs;
      for (int fg = 0; fg < l.conv.filter_groups; ++fg) costs.push_back(conv_group_cost(l.conv, fg, cfg));
      const std::int64_t unpack = stripe_unpack(l.conv, cfg);
      inst.resize(l.conv_instrs.size());
      for (std::size_t i = 0; i < l.conv_instrs.size(); ++i) {
        StripeTally tally;
        int stripe = -1;
        bool first = true;
        for (const auto& ci : l.conv_instrs[i]) {
          if (ci.stripe != stripe) {
            if (stripe >= 0) {
              close_stripe(inst[i], tally, unpack, first, cfg);
              first = false;
            }
            tally = {};
            stripe = ci.stripe;
          }
          const ConvCost& c = costs[ci.filter_group];
          tally.compute += c.compute;
          tally.fill += c.fill;
          if (trace)
            *trace << describe(l, static_cast<int>(i), ci) << " compute=" << c.compute << " fill=" << c.fill << "\n";
        }
        if (stripe >= 0) close_stripe(inst[i], tally, unpack, first, cfg);
      }
      LayerCycles lc = combine(l, inst);
      lc.kind = "conv";
      conv_macs(l, lc);
      rep.layers.push_back(std::move(lc));
    } else {
      inst.resize(l.padpool_channels.size());
      for (std::size_t i = 0; i < l.padpool_channels.size(); ++i) {
        const auto& chans = l.padpool_channels[i];
        if (chans.empty()) continue;
        for (int phase = 0; phase < l.padpool.phases; ++phase) {
          const auto n = std::count_if(l.padpool.instrs.begin(), l.padpool.instrs.end(),
                                       [&](const PadPoolInstr& pi) { return pi.phase == phase; });
          inst[i].padpool += padpool_unit_load(chans, n);
          inst[i].fill += cfg.pipeline_fill;
          if (trace)
            *trace << l.name << " inst=" << i << " PADPOOL phase=" << phase << " instrs=" << n
                   << " channels=" << chans.size() << " cycles=" << padpool_unit_load(chans, n) << "\n";
        }
      }
      LayerCycles lc = combine(l, inst);
      lc.kind = to_string(l.model_kind);
      rep.layers.push_back(std::move(lc));
    }
  }
  return rep;
}

}  // namespace zskip
