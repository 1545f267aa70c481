#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoverlay/error.hpp"
#include "geoverlay/geo.hpp"
#include "geoverlay/membership.hpp"
#include "geoverlay/routing_table.hpp"
#include "geoverlay/trace.hpp"
#include "geoverlay/zone_tree.hpp"

// JSON forms of the domain types. Keys are emitted sorted (nlohmann::json's
// default object), doubles in shortest round-trip form, so dumps are canonical.

namespace geoverlay::io {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

template <typename T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(Errc::ParseError, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("field '") + key + "': " + e.what());
  }
}

inline json to_json(const GeoPoint& p) { return json::array({p.lat(), p.lon()}); }

inline GeoPoint point_from_json(const json& j) {
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
    return GeoPoint(j[0].get<double>(), j[1].get<double>());
  }
  if (j.is_object()) return GeoPoint(field<double>(j, "lat"), field<double>(j, "lon"));
  throw Error(Errc::ParseError, "coordinate must be [lat, lon] or {\"lat\":..,\"lon\":..}");
}

inline json to_json(const Rect& r) { return json::array({r.lat_min(), r.lat_max(), r.lon_min(), r.lon_max()}); }

inline Rect rect_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(Errc::ParseError, "rect must be [lat_min, lat_max, lon_min, lon_max]");
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(Errc::ParseError, "rect bounds must be numbers");
  }
  return Rect(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

inline json to_json(const Region& r) {
  json holes = json::array();
  for (const auto& h : r.holes()) holes.push_back(to_json(h));
  return {{"outer", to_json(r.outer())}, {"holes", holes}};
}

inline Region region_from_json(const json& j) {
  if (j.is_array()) return Region(rect_from_json(j));
  std::vector<Rect> holes;
  if (auto it = j.find("holes"); it != j.end()) {
    for (const auto& h : *it) holes.push_back(rect_from_json(h));
  }
  return Region(rect_from_json(j.at("outer")), std::move(holes));
}

inline json to_json(const Contact& c) {
  return {{"address", c.address}, {"coordinate", to_json(c.coordinate)}, {"overlay_id", c.overlay_id.to_string()}};
}

inline Contact contact_from_json(const json& j) {
  return {field<std::string>(j, "address"), point_from_json(j.at("coordinate")),
          OverlayId::parse(field<std::string>(j, "overlay_id"))};
}

inline json contacts_json(const std::vector<Contact>& v) {
  json out = json::array();
  for (const auto& c : v) out.push_back(to_json(c));
  return out;
}

inline std::vector<Contact> contacts_from_json(const json& j) {
  std::vector<Contact> out;
  for (const auto& c : j) out.push_back(contact_from_json(c));
  return out;
}

inline json to_json(const RoutingTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json entries = json::array();
    for (const auto& e : r.entries) {
      entries.push_back({{"zone", e.zone.to_string()},
                         {"boundary", to_json(e.boundary)},
                         {"contacts", contacts_json(e.contacts)},
                         {"contact_missing", e.contact_missing}});
    }
    rows.push_back({{"level", r.level},
                    {"self_zone_id", r.self_zone_id.to_string()},
                    {"self_zone", to_json(r.self_zone)},
                    {"entries", entries}});
  }
  return {{"owner", to_json(t.owner)},
          {"rows", rows},
          {"leaf_id", t.leaf_id.to_string()},
          {"leaf_zone", to_json(t.leaf_zone)},
          {"leaf_row", contacts_json(t.leaf_row)},
          {"epoch", t.epoch}};
}

inline RoutingTable table_from_json(const json& j) {
  RoutingTable t;
  t.owner = contact_from_json(j.at("owner"));
  for (const auto& r : j.at("rows")) {
    RoutingRow row;
    row.level = field<std::size_t>(r, "level");
    row.self_zone_id = ZoneId::parse(field<std::string>(r, "self_zone_id"));
    row.self_zone = region_from_json(r.at("self_zone"));
    for (const auto& e : r.at("entries")) {
      row.entries.push_back({ZoneId::parse(field<std::string>(e, "zone")), region_from_json(e.at("boundary")),
                             contacts_from_json(e.at("contacts")), field<bool>(e, "contact_missing")});
    }
    t.rows.push_back(std::move(row));
  }
  t.leaf_id = ZoneId::parse(field<std::string>(j, "leaf_id"));
  t.leaf_zone = region_from_json(j.at("leaf_zone"));
  t.leaf_row = contacts_from_json(j.at("leaf_row"));
  t.epoch = field<std::uint64_t>(j, "epoch");
  return t;
}

inline json to_json(const AdaptationPolicy& p) {
  return {{"split_threshold", p.split_threshold}, {"merge_threshold", p.merge_threshold}, {"k", p.k}};
}

inline json node_json(const ZoneTree& tree, const ZoneNode& n) {
  json j = {{"id", n.id.to_string()}, {"region", to_json(n.region)}, {"remainder", n.is_remainder}, {"epoch", n.epoch}};
  if (n.is_leaf()) {
    json peers = json::array();
    for (const auto& p : n.peers) peers.push_back({{"name", p}, {"coordinate", to_json(tree.coord(p))}});
    j["peers"] = peers;
  } else {
    json kids = json::array();
    for (const auto& c : n.children) kids.push_back(node_json(tree, c));
    j["children"] = kids;
  }
  return j;
}

// Canonical tree dump.
inline json to_json(const ZoneTree& tree) {
  return {{"format_version", kFormatVersion},
          {"peer_count", tree.peer_count()},
          {"max_depth", tree.max_depth()},
          {"root", node_json(tree, tree.root())}};
}

inline ZoneNode node_from_json(const json& j, std::map<PeerName, GeoPoint>& coords) {
  ZoneNode n;
  n.id = ZoneId::parse(field<std::string>(j, "id"));
  n.region = region_from_json(j.at("region"));
  n.is_remainder = field<bool>(j, "remainder");
  n.epoch = field<std::uint64_t>(j, "epoch");
  if (auto it = j.find("peers"); it != j.end()) {
    for (const auto& p : *it) {
      auto name = field<std::string>(p, "name");
      coords.emplace(name, point_from_json(p.at("coordinate")));
      n.peers.push_back(name);
    }
  }
  if (auto it = j.find("children"); it != j.end()) {
    for (const auto& c : *it) n.children.push_back(node_from_json(c, coords));
  }
  return n;
}

inline ZoneTree tree_from_json(const json& j) {
  std::map<PeerName, GeoPoint> coords;
  ZoneNode root = node_from_json(j.at("root"), coords);
  return ZoneTree::restore(std::move(root), std::move(coords));
}

// Final state of a run: enough to verify and to dump any peer.
struct State {
  AdaptationPolicy policy;
  ZoneTree tree;
  std::map<PeerName, RoutingTable> tables;
  std::vector<PeerName> failed;
};

inline json state_json(const Network& net) {
  json tables = json::object();
  json failed = json::array();
  for (const auto& name : net.oracle().subtree_peers(net.oracle().root())) {
    if (!net.knows_peer(name)) continue;
    if (net.has_peer(name)) {
      tables[name] = to_json(net.table(name));
    } else {
      failed.push_back(name);
    }
  }
  return {{"format_version", kFormatVersion},
          {"policy", to_json(net.policy())},
          {"tree", to_json(net.oracle())},
          {"tables", tables},
          {"failed", failed}};
}

inline State state_from_json(const json& j) {
  State s;
  const json& p = j.at("policy");
  s.policy.split_threshold = field<std::size_t>(p, "split_threshold");
  s.policy.merge_threshold = field<std::size_t>(p, "merge_threshold");
  s.policy.k = field<std::size_t>(p, "k");
  s.tree = tree_from_json(j.at("tree"));
  for (const auto& [name, t] : j.at("tables").items()) s.tables.emplace(name, table_from_json(t));
  for (const auto& f : j.at("failed")) s.failed.push_back(f.get<std::string>());
  return s;
}

inline json to_json(const RouteTrace& t) {
  json hops = json::array();
  for (const auto& h : t.hops) {
    hops.push_back({{"from", h.from.to_string()},
                    {"to", h.to.to_string()},
                    {"from_coord", to_json(h.from_coord)},
                    {"to_coord", to_json(h.to_coord)},
                    {"level", h.level},
                    {"step", h.step}});
  }
  json deliveries = json::array();
  for (const auto& d : t.deliveries) deliveries.push_back(d.to_string());
  json j = {{"format_version", kFormatVersion},
            {"msg_id", t.msg_id},
            {"kind", t.kind},
            {"step", t.sim_step},
            {"source", t.source.to_string()},
            {"target", t.target},
            {"hops", hops},
            {"deliveries", deliveries},
            {"errors", t.errors},
            {"link_km", link_cost(t)}};
  if (t.target_leaf) j["target_leaf"] = t.target_leaf->to_string();
  if (t.result) j["result"] = t.result->to_string();
  if (t.result_km) j["result_km"] = *t.result_km;
  if (t.star_km) j["star_km"] = *t.star_km;
  if (t.fragments) j["fragments"] = t.fragments;
  if (t.fragments) j["source_fragments"] = t.source_fragments;
  if (t.updates) j["updates"] = t.updates;
  return j;
}

inline RouteTrace trace_from_json(const json& j) {
  RouteTrace t;
  t.msg_id = field<std::uint64_t>(j, "msg_id");
  t.kind = field<std::string>(j, "kind");
  t.sim_step = field<std::uint64_t>(j, "step");
  t.source = OverlayId::parse(field<std::string>(j, "source"));
  t.target = field<std::string>(j, "target");
  for (const auto& h : j.at("hops")) {
    t.hops.push_back({OverlayId::parse(field<std::string>(h, "from")), OverlayId::parse(field<std::string>(h, "to")),
                      point_from_json(h.at("from_coord")), point_from_json(h.at("to_coord")),
                      field<std::size_t>(h, "level"), field<std::uint64_t>(h, "step")});
  }
  for (const auto& d : j.at("deliveries")) t.deliveries.push_back(OverlayId::parse(d.get<std::string>()));
  t.errors = field<std::vector<std::string>>(j, "errors");
  if (j.contains("target_leaf")) t.target_leaf = ZoneId::parse(field<std::string>(j, "target_leaf"));
  if (j.contains("result")) t.result = OverlayId::parse(field<std::string>(j, "result"));
  if (j.contains("result_km")) t.result_km = field<double>(j, "result_km");
  if (j.contains("star_km")) t.star_km = field<double>(j, "star_km");
  if (j.contains("fragments")) t.fragments = field<std::uint64_t>(j, "fragments");
  if (j.contains("source_fragments")) t.source_fragments = field<std::uint64_t>(j, "source_fragments");
  if (j.contains("updates")) t.updates = field<std::uint64_t>(j, "updates");
  return t;
}

inline json error_json(const Error& e) {
  return {{"format_version", kFormatVersion}, {"error", {{"code", to_string(e.code())}, {"message", e.what()}}}};
}

}  // namespace geoverlay::io
