// metrics.hpp - throughput and efficiency figures derived from a CycleReport.
//
// ideal cycles = ceil((dense MACs + stripe recompute MACs) / MACs per cycle)
// efficiency   = ideal cycles / measured cycles
// GOPS         = ops_per_mac * executed MACs / elapsed time
// effective    = ops_per_mac * dense MACs / elapsed time (skipped MACs count)
//
// All report values are pure functions of the CycleReport and the op count,
// so a stored report always reproduces the same CSV.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "zskip/engine.hpp"

namespace zskip {

inline constexpr double kDefaultOpsPerMac = 1.0;

std::int64_t ideal_cycles(std::int64_t dense_macs, std::int64_t stripe_overhead_macs, int macs_per_cycle);

struct LayerThroughput {
  LayerCycles cycles;
  std::int64_t ideal_cycles = 0;
  double seconds = 0.0;
  double gops = 0.0;
  double effective_gops = 0.0;
  double efficiency = 0.0;
};

struct ThroughputReport {
  std::string variant;
  double clock_mhz = 0.0;
  int macs_per_cycle = 0;
  double ops_per_mac = kDefaultOpsPerMac;
  std::vector<LayerThroughput> layers;  // every engine layer
  LayerThroughput total;
  // Over conv layers only; best/worst ranked by effective GOPS. -1 without conv layers.
  int best = -1;
  int worst = -1;
  double mean_gops = 0.0;
  double mean_effective_gops = 0.0;
  double mean_efficiency = 0.0;
};

ThroughputReport report(const CycleReport& r, double ops_per_mac = kDefaultOpsPerMac);

// Header, one row per layer, then mean, best:<layer>, worst:<layer> and total.
void write_csv(std::ostream& os, const ThroughputReport& t);

std::string cycle_report_json(const CycleReport& r);
CycleReport parse_cycle_report(const std::string& json_text);
void save_cycle_report(const std::string& path, const CycleReport& r);
CycleReport load_cycle_report(const std::string& path);

}  // namespace zskip
