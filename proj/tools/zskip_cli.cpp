// zskip - command-line front end for the toolchain and the engine model.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "zskip/driver.hpp"
#include "zskip/engine.hpp"
#include "zskip/errors.hpp"
#include "zskip/metrics.hpp"
#include "zskip/netmodel.hpp"
#include "zskip/oracle.hpp"
#include "zskip/packer.hpp"
#include "zskip/synthetic.hpp"

namespace {

using namespace zskip;

struct EngineFlags {
  std::string variant = "256-opt";
  std::optional<double> clock_mhz;
  std::optional<std::int64_t> bank_tiles;
  std::optional<int> instances;
  int fifo_depth = 4;
  int pipeline_fill = 12;
  double ops_per_mac = kDefaultOpsPerMac;
  bool stalls = false;

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "16-unopt, 256-unopt, 256-opt or 512-opt")
        ->check(CLI::IsMember(variant_names()));
    app->add_option("--clock-mhz", clock_mhz, "override the preset clock");
    app->add_option("--bank-tiles", bank_tiles, "tiles per on-chip bank")->check(CLI::PositiveNumber);
    app->add_option("--instances", instances, "accelerator instances")->check(CLI::Range(1, 2));
    app->add_option("--fifo-depth", fifo_depth, "FIFO depth between units")->check(CLI::PositiveNumber);
    app->add_option("--pipeline-fill", pipeline_fill, "fill cycles per OFM tile group")->check(CLI::NonNegativeNumber);
    app->add_option("--ops-per-mac", ops_per_mac, "operations counted per MAC")->check(CLI::PositiveNumber);
    app->add_flag("--stalls", stalls, "record FIFO backpressure stalls");
  }

  EngineConfig config() const {
    EngineConfig c = preset(variant);
    if (clock_mhz) c.clock_mhz = *clock_mhz;
    if (instances) c.instances = *instances;
    c.fifo_depth = fifo_depth;
    c.pipeline_fill = pipeline_fill;
    c.stall_accounting = stalls;
    return c;
  }

  BankConfig banks() const {
    BankConfig b = arria10_sx660_banks();
    if (bank_tiles) b.tiles_per_bank = *bank_tiles;
    return b;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << text;
}

// Loads a model and makes sure its conv layers carry quantized weights.
NetworkModel prepared_model(const std::string& path, std::optional<double> sparsity, std::optional<int> nnz,
                            std::uint64_t seed) {
  NetworkModel m = load_network(path);
  if (sparsity || nnz) {
    SyntheticWeights s;
    if (sparsity) s.sparsity = *sparsity;
    if (nnz) s.exact_nnz = *nnz;
    return synthesize_weights(m, s, seed);
  }
  bool needs_quantization = false;
  for (const auto& l : m.layers) {
    if (l.kind != LayerKind::Conv || l.is_quantized()) continue;
    if (!l.has_weights())
      throw Error("layer '" + l.name + "' has no weights; use --synthetic-sparsity or --synthetic-nnz");
    needs_quantization = true;
  }
  return needs_quantization ? quantize_network(m) : m;
}

void print_sparsity(const SparsityReport& r) {
  std::cout << "layer,total,nonzero,sparsity\n";
  for (const auto& l : r.layers) {
    const double s = l.total == 0 ? 0.0 : 1.0 - static_cast<double>(l.nonzero) / static_cast<double>(l.total);
    std::cout << l.layer << ',' << l.total << ',' << l.nonzero << ',' << s << '\n';
  }
}

int cmd_quantize(const std::string& model, const std::string& out) {
  const auto q = quantize_network(load_network(model));
  save_network(q, out);
  print_sparsity(sparsity_report(q));
  return 0;
}

int cmd_prune(const std::string& model, const std::string& out, std::optional<double> threshold,
              std::optional<double> sparsity, const std::vector<std::string>& per_layer) {
  const NetworkModel m = load_network(model);
  if (threshold.has_value() == sparsity.has_value() && per_layer.empty())
    throw Error("give exactly one of --threshold or --sparsity, or --layer rules");
  std::map<std::string, PruneRule> rules;
  for (const auto& l : m.layers)
    if (l.is_weighted()) {
      if (threshold) rules[l.name] = PruneRule::threshold(*threshold);
      if (sparsity) rules[l.name] = PruneRule::sparsity(*sparsity);
    }
  // name=t:0.05 or name=s:0.7
  for (const auto& r : per_layer) {
    const auto eq = r.find('='), colon = r.find(':');
    if (eq == std::string::npos || colon == std::string::npos || colon < eq)
      throw Error("bad --layer rule '" + r + "', expected name=t:value or name=s:value");
    const std::string name = r.substr(0, eq), mode = r.substr(eq + 1, colon - eq - 1);
    const double v = std::stod(r.substr(colon + 1));
    if (mode == "t")
      rules[name] = PruneRule::threshold(v);
    else if (mode == "s")
      rules[name] = PruneRule::sparsity(v);
    else
      throw Error("bad --layer rule mode '" + mode + "'");
  }
  const auto res = prune_magnitude(m, rules);
  save_network(res.model, out);
  print_sparsity(res.report);
  return 0;
}

int cmd_pack(const std::string& model, const std::string& out) {
  const NetworkModel m = load_network(model);
  const auto packed = pack_network(m);
  save_packed(out, packed);
  std::int64_t entries = 0;
  for (const auto& l : packed.layers) entries += l.total_entries();
  std::cout << "packed " << packed.layers.size() << " conv layers, " << entries << " nonzero weights\n";
  return 0;
}

int cmd_compile(const std::string& model, const std::string& weights, const std::string& out,
                const std::string& listing, const EngineFlags& f) {
  const NetworkModel m = load_network(model);
  const auto cfg = f.config();
  const auto prog = compile(m, load_packed(weights), f.banks(), cfg.instances);
  save_program(out, prog);
  if (!listing.empty()) {
    std::ofstream os(listing);
    if (!os) throw Error("cannot open " + listing + " for writing");
    write_listing(os, prog);
  }
  std::cout << "conv instructions " << prog.conv_instruction_count() << ", pad/pool instructions "
            << prog.padpool_instruction_count() << "\n";
  return 0;
}

struct RunFlags {
  std::string model;
  std::string weights;
  std::string program;
  std::string image;
  std::string csv;
  std::string cycles_json;
  std::string trace;
  std::optional<double> sparsity;
  std::optional<int> nnz;
  std::uint64_t seed = 1;
};

int cmd_run(const RunFlags& r, const EngineFlags& f) {
  const auto cfg = f.config();
  Program prog;
  NetworkModel m;
  if (!r.program.empty()) {
    prog = load_program(r.program);
  } else {
    if (r.model.empty()) throw Error("run needs --model or --program");
    m = prepared_model(r.model, r.sparsity, r.nnz, r.seed);
    const PackedNetwork packed = r.weights.empty() ? pack_network(m) : load_packed(r.weights);
    prog = compile(m, packed, f.banks(), cfg.instances);
  }
  std::ostringstream trace;
  std::ostream* tp = r.trace.empty() ? nullptr : &trace;
  CycleReport cycles;
  if (!r.image.empty()) {
    if (r.model.empty()) throw Error("--image needs --model for input scaling");
    const TiledTensor input = ingest_image(r.image, m.input_mean, m);
    auto res = exec_program(prog, input, cfg, tp);
    cycles = std::move(res.cycles);
    if (!res.host_outputs.empty() && !res.host_outputs.back().empty()) {
      const auto& scores = res.host_outputs.back();
      const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
      std::cerr << "top class " << best << " score " << scores[best].to_int() << "\n";
    }
  } else {
    cycles = estimate(prog, cfg, tp);
  }
  std::ostringstream csv;
  write_csv(csv, report(cycles, f.ops_per_mac));
  if (r.csv.empty())
    std::cout << csv.str();
  else
    write_text(r.csv, csv.str());
  if (!r.cycles_json.empty()) save_cycle_report(r.cycles_json, cycles);
  if (tp) write_text(r.trace, trace.str());
  return 0;
}

int cmd_report(const std::string& cycles, const std::string& out, double ops_per_mac) {
  std::ostringstream csv;
  write_csv(csv, report(load_cycle_report(cycles), ops_per_mac));
  if (out.empty())
    std::cout << csv.str();
  else
    write_text(out, csv.str());
  return 0;
}

int cmd_selftest(int trials, std::uint64_t seed, const EngineFlags& f) {
  std::mt19937_64 rng(seed);
  int passed = 0;
  for (int t = 0; t < trials; ++t) {
    const NetworkModel m = random_toy_network(rng);
    const PlanarTensor image = random_image(rng, m.input);
    auto cfg = f.config();
    const auto prog = compile(m, pack_network(m), f.banks(), cfg.instances);
    const auto got = exec_program(prog, to_tiled(image), cfg);
    const auto want = infer_ref(m, image);
    bool ok = true;
    for (std::size_t i = 0; i < m.layers.size() && ok; ++i)
      ok = to_planar(got.activations[i]) == want.activations[i];
    if (ok)
      ++passed;
    else
      std::cout << "trial " << t << ": engine and oracle disagree\n";
  }
  std::cout << "selftest " << passed << "/" << trials << (passed == trials ? " passed" : " FAILED") << "\n";
  return passed == trials ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tiled zero-skipping CNN accelerator toolchain and simulator"};
  app.require_subcommand(1);

  std::string model, out, weights, listing;
  auto* quant = app.add_subcommand("quantize", "quantize a float model");
  quant->add_option("--model", model, "input manifest")->required();
  quant->add_option("--out", out, "output manifest")->required();

  std::optional<double> threshold, sparsity;
  std::vector<std::string> layer_rules;
  auto* prune = app.add_subcommand("prune", "magnitude-prune a float model");
  prune->add_option("--model", model, "input manifest")->required();
  prune->add_option("--out", out, "output manifest")->required();
  prune->add_option("--threshold", threshold, "zero weights with |w| below this");
  prune->add_option("--sparsity", sparsity, "zero this fraction of each layer's weights");
  prune->add_option("--layer", layer_rules, "per-layer rule name=t:value or name=s:value");

  auto* pack = app.add_subcommand("pack", "pack quantized conv weights");
  pack->add_option("--model,--in", model, "quantized manifest")->required();
  pack->add_option("--out", out, "packed weight file")->required();

  EngineFlags compile_flags;
  auto* comp = app.add_subcommand("compile", "compile a program");
  comp->add_option("--model", model, "quantized manifest")->required();
  comp->add_option("--weights", weights, "packed weight file")->required();
  comp->add_option("--out", out, "program image")->required();
  comp->add_option("--listing", listing, "text listing, one instruction per line");
  compile_flags.add(comp);

  RunFlags run_flags;
  EngineFlags run_engine;
  auto* run = app.add_subcommand("run", "compile, execute and report");
  run->add_option("--model", run_flags.model, "manifest");
  run->add_option("--weights", run_flags.weights, "packed weight file (default: pack the model)");
  run->add_option("--program", run_flags.program, "precompiled program image");
  run->add_option("--image", run_flags.image, "float32 planar input; without it only timing is modeled");
  run->add_option("--csv", run_flags.csv, "CSV report path (default stdout)");
  run->add_option("--cycles", run_flags.cycles_json, "cycle report JSON path");
  run->add_option("--trace", run_flags.trace, "per-instruction trace path");
  run->add_option("--synthetic-sparsity", run_flags.sparsity, "random weights, zero probability per position")
      ->check(CLI::Range(0.0, 1.0));
  run->add_option("--synthetic-nnz", run_flags.nnz, "random weights, exactly N nonzeros per tile")
      ->check(CLI::Range(0, 16));
  run->add_option("--seed", run_flags.seed, "seed for synthetic weights");
  run_engine.add(run);

  std::string cycles;
  double report_ops = kDefaultOpsPerMac;
  auto* rep = app.add_subcommand("report", "recompute a CSV report from a stored cycle report");
  rep->add_option("--cycles", cycles, "cycle report JSON")->required();
  rep->add_option("--out", out, "CSV path (default stdout)");
  rep->add_option("--ops-per-mac", report_ops, "operations counted per MAC")->check(CLI::PositiveNumber);

  int trials = 50;
  std::uint64_t seed = 1;
  EngineFlags self_flags;
  auto* self = app.add_subcommand("selftest", "random engine-versus-oracle sweep");
  self->add_option("--trials", trials, "number of random networks")->check(CLI::PositiveNumber);
  self->add_option("--seed", seed, "sweep seed");
  self_flags.add(self);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*quant) return cmd_quantize(model, out);
    if (*prune) return cmd_prune(model, out, threshold, sparsity, layer_rules);
    if (*pack) return cmd_pack(model, out);
    if (*comp) return cmd_compile(model, weights, out, listing, compile_flags);
    if (*run) return cmd_run(run_flags, run_engine);
    if (*rep) return cmd_report(cycles, out, report_ops);
    if (*self) return cmd_selftest(trials, seed, self_flags);
  } catch (const std::exception& e) {
    std::cerr << "zskip: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
