#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoverlay/io.hpp"
#include "geoverlay/trace.hpp"

// Route quality checks and the run summary. Everything here reads traces
// only, so a summary recomputed from a trace file matches the original run.

namespace geoverlay {

struct LocalityCheck {
  std::size_t depth = 0;     // deepest zone holding the source and every hop endpoint
  std::size_t required = 0;  // depth of the lowest common zone of source and destination
  bool pass = true;
  std::optional<std::size_t> offending_hop;
};

// For point and id routes; the destination is the trace's target leaf.
inline LocalityCheck locality_depth(const RouteTrace& t) {
  LocalityCheck c;
  const ZoneId& src = t.source.zone;
  c.depth = src.depth();
  c.required = t.target_leaf ? src.common_depth(*t.target_leaf) : 0;
  for (std::size_t i = 0; i < t.hops.size(); ++i) {
    for (const OverlayId* end : {&t.hops[i].from, &t.hops[i].to}) {
      std::size_t d = src.common_depth(end->zone);
      c.depth = std::min(c.depth, d);
      if (d < c.required && !c.offending_hop) c.offending_hop = i;
    }
  }
  c.pass = c.depth >= c.required;
  return c;
}

// Number of identical leading (from, to) hops.
inline std::size_t shared_prefix(const RouteTrace& a, const RouteTrace& b) {
  std::size_t n = 0;
  while (n < a.hops.size() && n < b.hops.size() && a.hops[n].from == b.hops[n].from && a.hops[n].to == b.hops[n].to) ++n;
  return n;
}

// Index of the first hop landing inside `zone`, if any.
inline std::optional<std::size_t> first_hop_into(const RouteTrace& t, const ZoneId& zone) {
  for (std::size_t i = 0; i < t.hops.size(); ++i) {
    if (zone.contains(t.hops[i].to.zone)) return i;
  }
  return std::nullopt;
}

// Routes a and b from one source toward destinations whose lowest common zone
// is `lcz` share every hop up to and including the first one entering it.
inline bool converges(const RouteTrace& a, const RouteTrace& b, const ZoneId& lcz) {
  if (lcz.contains(a.source.zone)) return true;
  auto i = first_hop_into(a, lcz);
  if (!i) return false;
  return shared_prefix(a, b) >= *i + 1;
}

inline bool within_hop_bound(const RouteTrace& t) {
  return t.target_leaf && t.hops.size() <= t.target_leaf->depth() + 1;
}

inline bool is_membership_kind(const std::string& kind) {
  return kind == "join" || kind == "leave" || kind == "fail" || kind == "repair" || kind == "split" || kind == "merge";
}

inline bool is_directed_route(const std::string& kind) { return kind == "point" || kind == "peer"; }

inline std::size_t missing_contacts(const RouteTrace& t) {
  std::size_t n = 0;
  for (const auto& e : t.errors) n += e.rfind("MissingContact", 0) == 0 ? 1 : 0;
  return n;
}

inline io::json summarize(const std::vector<RouteTrace>& traces) {
  using io::json;
  struct Acc {
    std::uint64_t count = 0, hops = 0, deliveries = 0, errors = 0;
    double km = 0.0, ms = 0.0;
  };
  std::map<std::string, Acc> queries;
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> membership;
  std::uint64_t loc_checked = 0, loc_passed = 0, bound_checked = 0, bound_passed = 0, missing = 0;
  std::uint64_t trees = 0, requests = 0, fragments = 0, source_fragments = 0;
  double tree_km = 0.0, star_km = 0.0;

  for (const auto& t : traces) {
    missing += missing_contacts(t);
    if (is_membership_kind(t.kind)) {
      auto& m = membership[t.kind];
      ++m.first;
      m.second += t.updates;
      continue;
    }
    Acc& a = queries[t.kind];
    ++a.count;
    a.hops += t.hops.size();
    a.deliveries += t.deliveries.size();
    a.errors += t.errors.size();
    a.km += link_cost(t);
    a.ms += latency_ms(t);
    if (is_directed_route(t.kind) && t.target_leaf) {
      ++loc_checked;
      loc_passed += locality_depth(t).pass ? 1 : 0;
      ++bound_checked;
      bound_passed += within_hop_bound(t) ? 1 : 0;
    }
    if (t.kind == "multicast") {
      ++trees;
      tree_km += link_cost(t);
      star_km += t.star_km.value_or(0.0);
    }
    if (t.kind == "content") {
      ++requests;
      fragments += t.fragments;
      source_fragments += t.source_fragments;
    }
  }

  json q = json::object();
  for (const auto& [kind, a] : queries) {
    q[kind] = {{"count", a.count},
               {"hops", a.hops},
               {"link_km", a.km},
               {"latency_ms", a.ms},
               {"deliveries", a.deliveries},
               {"errors", a.errors},
               {"mean_hops", a.count ? static_cast<double>(a.hops) / static_cast<double>(a.count) : 0.0}};
  }
  json m = json::object();
  for (const auto& [kind, cu] : membership) m[kind] = {{"count", cu.first}, {"updates", cu.second}};
  return {{"format_version", io::kFormatVersion},
          {"traces", traces.size()},
          {"queries", q},
          {"membership", m},
          {"missing_contacts", missing},
          {"locality", {{"checked", loc_checked}, {"passed", loc_passed}}},
          {"hop_bound", {{"checked", bound_checked}, {"passed", bound_passed}}},
          {"multicast", {{"trees", trees}, {"tree_km", tree_km}, {"star_km", star_km}}},
          {"content", {{"requests", requests}, {"fragments", fragments}, {"source_fragments", source_fragments}}}};
}

// Per-query table. locality_pass and prefix_len (depth of the lowest common
// zone of source and destination) are blank for kinds without one destination.
inline std::string query_csv(const std::vector<RouteTrace>& traces) {
  std::string out = "msg_id,hops,link_km,locality_pass,prefix_len\n";
  char buf[160];
  for (const auto& t : traces) {
    if (is_membership_kind(t.kind)) continue;
    std::string loc, prefix;
    if (is_directed_route(t.kind) && t.target_leaf) {
      loc = locality_depth(t).pass ? "true" : "false";
      prefix = std::to_string(t.source.zone.common_depth(*t.target_leaf));
    }
    std::snprintf(buf, sizeof buf, "%llu,%zu,%.6f,", static_cast<unsigned long long>(t.msg_id), t.hops.size(),
                  link_cost(t));
    out += buf + loc + "," + prefix + "\n";
  }
  return out;
}

}  // namespace geoverlay
