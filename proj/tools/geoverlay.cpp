// geoverlay command-line front end.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "geoverlay/io.hpp"
#include "geoverlay/metrics.hpp"
#include "geoverlay/scenario.hpp"

namespace fs = std::filesystem;
using geoverlay::Errc;
using geoverlay::Error;
using geoverlay::io::json;

namespace {

constexpr int kExitFailed = 1;  // verify found problems
constexpr int kExitError = 2;   // bad input or internal error

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> split_threshold;
  std::optional<std::size_t> merge_threshold;
  std::optional<std::size_t> k;
  std::string out = "out";
  bool trace = true;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "RNG seed (overrides the scenario)");
  cmd->add_option("--policy.split-threshold", c.split_threshold, "leaf size above which a zone splits");
  cmd->add_option("--policy.merge-threshold", c.merge_threshold, "leaf size below which a zone merges");
  cmd->add_option("--policy.k", c.k, "clusters per split");
  cmd->add_option("--out", c.out, "run directory")->capture_default_str();
  cmd->add_flag("--trace,!--no-trace", c.trace, "write traces.jsonl");
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(Errc::ParseError, "cannot write " + p.string());
  f << text;
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

geoverlay::io::State load_state(const Common& c) {
  fs::path p = fs::path(c.out) / "state.json";
  auto text = geoverlay::read_file(p.string());
  try {
    return geoverlay::io::state_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, p.string() + ": " + e.what());
  }
}

int cmd_run(const std::string& scenario_path, const Common& c) {
  auto s = geoverlay::load_scenario(scenario_path);
  if (c.seed) s.seed = *c.seed;
  if (c.split_threshold) s.policy.split_threshold = *c.split_threshold;
  if (c.merge_threshold) s.policy.merge_threshold = *c.merge_threshold;
  if (c.k) s.policy.k = *c.k;
  auto res = geoverlay::run_scenario(s);

  fs::create_directories(c.out);
  fs::path dir(c.out);
  if (c.trace) {
    std::string lines;
    for (const auto& t : res.traces) lines += geoverlay::io::to_json(t).dump() + "\n";
    write_file(dir / "traces.jsonl", lines);
  }
  write_file(dir / "metrics.json", pretty(res.metrics));
  write_file(dir / "queries.csv", res.query_table);
  write_file(dir / "state.json", geoverlay::io::state_json(res.network).dump() + "\n");
  json summary = {{"format_version", geoverlay::io::kFormatVersion},
                  {"scenario", s.name},
                  {"seed", s.seed},
                  {"peers", res.network.size()},
                  {"leaves", res.network.oracle().leaves().size()},
                  {"traces", res.traces.size()},
                  {"out", c.out}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_dump_tree(const Common& c) {
  auto st = load_state(c);
  std::cout << pretty(geoverlay::io::to_json(st.tree));
  return 0;
}

int cmd_dump_peer(const std::string& id, const Common& c) {
  auto st = load_state(c);
  std::string name = id;
  if (id.find('/') != std::string::npos) {
    auto oid = geoverlay::OverlayId::parse(id);
    name = oid.peer;
    auto it = st.tables.find(name);
    if (it != st.tables.end() && it->second.owner.overlay_id != oid) {
      throw Error(Errc::NoSuchPeer, id + " (peer is now " + it->second.owner.overlay_id.to_string() + ")");
    }
  }
  auto it = st.tables.find(name);
  if (it == st.tables.end()) throw Error(Errc::NoSuchPeer, id);
  json j = {{"format_version", geoverlay::io::kFormatVersion}, {"table", geoverlay::io::to_json(it->second)}};
  std::cout << pretty(j);
  return 0;
}

int cmd_verify(const Common& c) {
  auto st = load_state(c);
  auto rep = geoverlay::verify_state(st.tree, st.tables, st.failed, 100000, c.seed.value_or(1));
  json j = {{"format_version", geoverlay::io::kFormatVersion},
            {"ok", rep.ok()},
            {"peers", rep.peers},
            {"leaves", rep.leaves},
            {"tables_checked", rep.tables_checked},
            {"samples", rep.samples},
            {"problems", rep.problems}};
  std::cout << pretty(j);
  return rep.ok() ? 0 : kExitFailed;
}

int cmd_gen(const Common& c, const geoverlay::SyntheticClusters& params, bool to_dir) {
  auto pts = geoverlay::synthetic_clusters(params, c.seed.value_or(1));
  auto csv = geoverlay::write_peers_csv(pts);
  if (to_dir) {
    fs::create_directories(c.out);
    write_file(fs::path(c.out) / "peers.csv", csv);
  } else {
    std::cout << csv;
  }
  return 0;
}

int cmd_replay(const std::string& path) {
  auto text = geoverlay::read_file(path);
  std::vector<geoverlay::RouteTrace> traces;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      traces.push_back(geoverlay::io::trace_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, path + ":" + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::ParseError, path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  std::cout << pretty(geoverlay::summarize(traces));
  return 0;
}

void print_error(const std::string& code, const std::string& message) {
  json j = {{"format_version", geoverlay::io::kFormatVersion}, {"error", {{"code", code}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geographic overlay simulator"};
  app.require_subcommand(1);

  Common common;
  std::string scenario_path, peer_id, trace_path;
  geoverlay::SyntheticClusters synth;

  auto* run = app.add_subcommand("run", "execute a scenario and write traces, metrics and final state");
  run->add_option("scenario", scenario_path, "scenario JSON")->required();
  add_common(run, common);

  auto* dump_tree = app.add_subcommand("dump-tree", "print the final zone tree of a run");
  add_common(dump_tree, common);

  auto* dump_peer = app.add_subcommand("dump-peer", "print one peer's routing table from a run");
  dump_peer->add_option("overlay_id", peer_id, "overlay id (zone/peer) or peer name")->required();
  add_common(dump_peer, common);

  auto* gen = app.add_subcommand("gen-synthetic", "emit a clustered peer CSV");
  gen->add_option("--clusters", synth.clusters, "cluster count")->capture_default_str();
  gen->add_option("--per-cluster", synth.peers_per_cluster, "peers per cluster")->capture_default_str();
  gen->add_option("--spread", synth.spread_degrees, "cluster standard deviation in degrees")->capture_default_str();
  add_common(gen, common);

  auto* verify = app.add_subcommand("verify", "check a run's final state; exit 0 when consistent");
  add_common(verify, common);

  auto* replay = app.add_subcommand("replay", "recompute metrics from a trace file");
  replay->add_option("traces", trace_path, "traces.jsonl")->required();
  add_common(replay, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("UsageError", e.what());
    return kExitError;
  }

  try {
    if (*run) return cmd_run(scenario_path, common);
    if (*dump_tree) return cmd_dump_tree(common);
    if (*dump_peer) return cmd_dump_peer(peer_id, common);
    if (*gen) return cmd_gen(common, synth, gen->count("--out") > 0);
    if (*verify) return cmd_verify(common);
    if (*replay) return cmd_replay(trace_path);
  } catch (const Error& e) {
    print_error(geoverlay::to_string(e.code()), e.what());
    return kExitError;
  } catch (const std::exception& e) {
    print_error("Internal", e.what());
    return kExitError;
  }
  return kExitError;
}
