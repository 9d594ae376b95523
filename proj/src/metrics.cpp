#include "zskip/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "zskip/errors.hpp"

namespace zskip {

std::int64_t ideal_cycles(std::int64_t dense_macs, std::int64_t overhead_macs, int macs_per_cycle) {
  if (macs_per_cycle <= 0) throw Error("MACs per cycle must be positive");
  const std::int64_t work = dense_macs + overhead_macs;
  return (work + macs_per_cycle - 1) / macs_per_cycle;
}

namespace {

LayerThroughput measure(const LayerCycles& c, const CycleReport& r, double ops_per_mac) {
  LayerThroughput t;
  t.cycles = c;
  t.ideal_cycles = ideal_cycles(c.dense_macs, c.stripe_overhead_macs, r.macs_per_cycle);
  const auto total = c.total_cycles();
  if (total > 0) {
    t.seconds = static_cast<double>(total) / (r.clock_mhz * 1e6);
    t.gops = ops_per_mac * static_cast<double>(c.executed_macs) / t.seconds / 1e9;
    t.effective_gops = ops_per_mac * static_cast<double>(c.dense_macs) / t.seconds / 1e9;
    t.efficiency = static_cast<double>(t.ideal_cycles) / static_cast<double>(total);
  }
  return t;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void row(std::ostream& os, const std::string& label, const LayerThroughput& t) {
  const auto& c = t.cycles;
  os << label << ',' << c.dense_macs << ',' << c.executed_macs << ',' << c.skipped_macs << ','
     << c.stripe_overhead_macs << ',' << c.conv_cycles << ',' << c.unpack_cycles << ',' << c.padpool_cycles << ','
     << c.fill_cycles << ',' << c.total_cycles() << ',' << fixed(t.gops) << ',' << fixed(t.effective_gops) << ','
     << fixed(t.efficiency) << '\n';
}

}  // namespace

ThroughputReport report(const CycleReport& r, double ops_per_mac) {
  if (!(ops_per_mac > 0)) throw Error("ops per MAC must be positive");
  if (!(r.clock_mhz > 0)) throw Error("clock must be positive");
  ThroughputReport t;
  t.variant = r.variant;
  t.clock_mhz = r.clock_mhz;
  t.macs_per_cycle = r.macs_per_cycle;
  t.ops_per_mac = ops_per_mac;
  int convs = 0;
  for (const auto& l : r.layers) {
    t.layers.push_back(measure(l, r, ops_per_mac));
    if (l.kind != "conv") continue;
    const int i = static_cast<int>(t.layers.size()) - 1;
    const auto& m = t.layers.back();
    ++convs;
    t.mean_gops += m.gops;
    t.mean_effective_gops += m.effective_gops;
    t.mean_efficiency += m.efficiency;
    if (t.best < 0 || m.effective_gops > t.layers[t.best].effective_gops) t.best = i;
    if (t.worst < 0 || m.effective_gops < t.layers[t.worst].effective_gops) t.worst = i;
  }
  if (convs > 0) {
    t.mean_gops /= convs;
    t.mean_effective_gops /= convs;
    t.mean_efficiency /= convs;
  }
  t.total = measure(r.totals(), r, ops_per_mac);
  return t;
}

void write_csv(std::ostream& os, const ThroughputReport& t) {
  os << "layer,dense_macs,executed_macs,skipped_macs,stripe_overhead_macs,conv_cycles,unpack_cycles,"
        "padpool_cycles,fill_cycles,total_cycles,gops,effective_gops,efficiency\n";
  for (const auto& l : t.layers) row(os, l.cycles.name, l);
  os << "mean,,,,,,,,,," << fixed(t.mean_gops) << ',' << fixed(t.mean_effective_gops) << ','
     << fixed(t.mean_efficiency) << '\n';
  if (t.best >= 0) row(os, "best:" + t.layers[t.best].cycles.name, t.layers[t.best]);
  if (t.worst >= 0) row(os, "worst:" + t.layers[t.worst].cycles.name, t.layers[t.worst]);
  row(os, "total", t.total);
}

std::string cycle_report_json(const CycleReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["macs_per_cycle"] = r.macs_per_cycle;
  j["clock_mhz"] = r.clock_mhz;
  j["instances"] = r.instances;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"name", l.name},
                      {"kind", l.kind},
                      {"dense_macs", l.dense_macs},
                      {"executed_macs", l.executed_macs},
                      {"skipped_macs", l.skipped_macs},
                      {"stripe_overhead_macs", l.stripe_overhead_macs},
                      {"conv_cycles", l.conv_cycles},
                      {"unpack_cycles", l.unpack_cycles},
                      {"padpool_cycles", l.padpool_cycles},
                      {"fill_cycles", l.fill_cycles},
                      {"stall_cycles", l.stall_cycles}});
  return j.dump(2) + "\n";
}

CycleReport parse_cycle_report(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    CycleReport r;
    r.variant = j.at("variant").get<std::string>();
    r.macs_per_cycle = j.at("macs_per_cycle").get<int>();
    r.clock_mhz = j.at("clock_mhz").get<double>();
    r.instances = j.at("instances").get<int>();
    for (const auto& l : j.at("layers")) {
      LayerCycles c;
      c.name = l.at("name").get<std::string>();
      c.kind = l.at("kind").get<std::string>();
      c.dense_macs = l.at("dense_macs").get<std::int64_t>();
      c.executed_macs = l.at("executed_macs").get<std::int64_t>();
      c.skipped_macs = l.at("skipped_macs").get<std::int64_t>();
      c.stripe_overhead_macs = l.at("stripe_overhead_macs").get<std::int64_t>();
      c.conv_cycles = l.at("conv_cycles").get<std::int64_t>();
      c.unpack_cycles = l.at("unpack_cycles").get<std::int64_t>();
      c.padpool_cycles = l.at("padpool_cycles").get<std::int64_t>();
      c.fill_cycles = l.at("fill_cycles").get<std::int64_t>();
      c.stall_cycles = l.value("stall_cycles", std::int64_t{0});
      r.layers.push_back(std::move(c));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad cycle report: ") + e.what());
  }
}

void save_cycle_report(const std::string& path, const CycleReport& r) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << cycle_report_json(r);
}

CycleReport load_cycle_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_cycle_report(ss.str());
}

}  // namespace zskip
