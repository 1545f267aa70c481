#pragma once

#include <optional>
#include <vector>

#include "geoverlay/error.hpp"
#include "geoverlay/geo.hpp"
#include "geoverlay/routing_table.hpp"

// Forwarding decisions. Every function here is pure over one routing table:
// the simulator feeds the table of the peer currently holding the message.
//
// Levels: rows 1..D of a depth-D table are the sibling rows, the leaf row is
// level D+1, and a message carrying level D+2 is processed locally only.

namespace geoverlay {

struct Forward {
  Contact to;
  std::size_t level = 0;  // level carried by the forwarded message
  std::size_t row = 0;    // table row that produced it (D+1 = leaf row)
  ZoneId zone;            // zone the message enters
};

// A populated sibling whose known contacts are all gone.
struct Missing {
  std::size_t row = 0;
  ZoneId zone;
};

struct AreaDecision {
  bool deliver_local = false;
  std::vector<Forward> forwards;
  std::vector<Missing> missing;
};

// Area routing at one peer. Leaf-row forwards come first, then sibling rows
// from the deepest up to `level`.
inline AreaDecision route_to_all_peers(const RoutingTable& t, const Region& area, std::size_t level) {
  AreaDecision d;
  const std::size_t D = t.depth();
  d.deliver_local = area.contains(t.owner.coordinate);
  if (level <= D + 1) {
    for (const auto& m : t.leaf_row) {
      if (m.address == t.owner.address) continue;
      if (area.contains(m.coordinate)) d.forwards.push_back({m, D + 2, D + 1, t.leaf_id});
    }
  }
  for (std::size_t r = D; r >= 1 && r >= level; --r) {
    for (const auto& e : t.row(r).entries) {
      if (!e.boundary.intersects(area)) continue;
      if (e.populated()) {
        d.forwards.push_back({e.designated(), r + 1, r, e.zone});
      } else if (e.contact_missing) {
        d.missing.push_back({r, e.zone});
      }
    }
  }
  return d;
}

struct PointDecision {
  bool deliver_local = false;
  std::optional<Forward> forward;
  std::optional<Missing> missing;
  // Set when the point lies in an unpopulated sibling zone; the message stops
  // at this peer.
  std::optional<SiblingEntry> empty_zone;
  std::size_t empty_row = 0;
};

// Leaf member (owner included) closest to `p`, ties by name.
inline const Contact& closest_member(const RoutingTable& t, const GeoPoint& p) {
  const Contact* best = &t.owner;
  double best_km = distance(t.owner.coordinate, p);
  for (const auto& m : t.leaf_row) {
    double km = distance(m.coordinate, p);
    if (km < best_km || (km == best_km && m.address < best->address)) {
      best = &m;
      best_km = km;
    }
  }
  return *best;
}

// Greedy point routing by zone containment.
inline PointDecision route_to_point(const RoutingTable& t, const GeoPoint& p, std::size_t level) {
  PointDecision d;
  const std::size_t D = t.depth();
  for (std::size_t r = std::max<std::size_t>(level, 1); r <= D; ++r) {
    const RoutingRow& row = t.row(r);
    if (row.self_zone.contains(p)) continue;

    const SiblingEntry* hit = nullptr;
    for (const auto& e : row.entries) {
      if (e.boundary.contains(p)) {
        hit = &e;
        break;
      }
    }
    if (hit && hit->populated()) {
      d.forward = Forward{hit->designated(), r + 1, r, hit->zone};
      return d;
    }
    if (!hit) throw Error(Errc::Inconsistent, "row " + std::to_string(r) + " of " + t.owner.address + " does not cover " + p.to_string());
    if (hit->contact_missing) {
      d.missing = Missing{r, hit->zone};
      return d;
    }
    // The point's zone holds no peers: this peer, which lives beside it, is
    // the closest responsible party. Joins land here too.
    d.empty_zone = *hit;
    d.empty_row = r;
    d.deliver_local = true;
    return d;
  }
  if (level <= D + 1) {
    const Contact& c = closest_member(t, p);
    if (c.address != t.owner.address) {
      d.forward = Forward{c, D + 2, D + 1, t.leaf_id};
      return d;
    }
  }
  d.deliver_local = true;
  return d;
}

struct PeerDecision {
  bool deliver_local = false;
  std::optional<Forward> forward;
  std::optional<Missing> missing;
};

// Prefix routing toward an overlay id. Throws NoSuchPeer when the id cannot
// be resolved from this table.
inline PeerDecision route_to_peer(const RoutingTable& t, const OverlayId& dest) {
  PeerDecision d;
  if (dest.peer == t.owner.address) {
    d.deliver_local = true;
    return d;
  }
  const std::size_t D = t.depth();
  const std::size_t j = t.leaf_id.common_depth(dest.zone);
  if (j < D && j < dest.zone.depth()) {
    const std::size_t r = j + 1;
    const SiblingEntry* e = t.row(r).entry(dest.zone.prefix(r));
    if (e && e->populated()) {
      d.forward = Forward{e->designated(), r + 1, r, e->zone};
      return d;
    }
    if (e && e->contact_missing) {
      d.missing = Missing{r, e->zone};
      return d;
    }
    throw Error(Errc::NoSuchPeer, dest.to_string() + " (no route from " + t.owner.overlay_id.to_string() + ")");
  }
  if (dest.zone == t.leaf_id) {
    for (const auto& m : t.leaf_row) {
      if (m.address == dest.peer) {
        d.forward = Forward{m, D + 2, D + 1, t.leaf_id};
        return d;
      }
    }
  }
  throw Error(Errc::NoSuchPeer, dest.to_string());
}

}  // namespace geoverlay
