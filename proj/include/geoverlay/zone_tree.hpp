#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geoverlay/error.hpp"
#include "geoverlay/geo.hpp"
#include "geoverlay/rng.hpp"

namespace geoverlay {

struct AdaptationPolicy {
  std::size_t split_threshold = 32;  // S_max
  std::size_t merge_threshold = 4;   // S_min
  std::size_t k = 2;

  void check() const {
    if (k < 2) throw Error(Errc::InvalidPolicy, "cluster count k must be >= 2");
    if (merge_threshold == 0 || split_threshold < 4 * merge_threshold) {
      throw Error(Errc::InvalidPolicy, "split threshold must be at least 4x the merge threshold");
    }
  }
};

struct PeerPoint {
  PeerName name;
  GeoPoint coord;
};

// ---------------------------------------------------------------------------
// Clustering: recursive median cut
// ---------------------------------------------------------------------------

enum class Axis : std::uint8_t { Lat, Lon };

struct MedianCut {
  std::size_t group;  // index of the group that was cut; the upper half was appended
  Axis axis;
  double value;       // lower half < value <= upper half
};

struct Clustering {
  std::vector<std::vector<PeerPoint>> groups;  // creation order
  std::vector<MedianCut> cuts;
};

namespace detail {

inline double axis_value(const GeoPoint& p, Axis a) { return a == Axis::Lat ? p.lat() : p.lon(); }

struct Spread {
  double lat = 0.0;
  double lon = 0.0;
  double longest() const { return std::max(lat, lon); }
};

inline Spread spread_of(std::span<const PeerPoint> pts) {
  if (pts.empty()) return {};
  double lat_lo = pts[0].coord.lat(), lat_hi = lat_lo;
  double lon_lo = pts[0].coord.lon(), lon_hi = lon_lo;
  for (const auto& p : pts) {
    lat_lo = std::min(lat_lo, p.coord.lat());
    lat_hi = std::max(lat_hi, p.coord.lat());
    lon_lo = std::min(lon_lo, p.coord.lon());
    lon_hi = std::max(lon_hi, p.coord.lon());
  }
  return {lat_hi - lat_lo, lon_hi - lon_lo};
}

inline void sort_by_name(std::vector<PeerPoint>& v) {
  std::sort(v.begin(), v.end(), [](const PeerPoint& a, const PeerPoint& b) { return a.name < b.name; });
}

}  // namespace detail

// Splits the group with the largest coordinate spread along its longer axis
// (latitude on ties) at the median until k groups exist. Points equal to the
// median go to the lower group. Groups with zero spread cannot be cut, so fewer
// than k groups come back when the input has fewer than k distinct positions.
inline Clustering cluster_peers(std::span<const PeerPoint> points, std::size_t k) {
  if (k < 2) throw Error(Errc::InvalidPolicy, "k must be >= 2");
  Clustering out;
  std::vector<PeerPoint> all(points.begin(), points.end());
  detail::sort_by_name(all);
  if (detail::spread_of(all).longest() == 0.0) {
    throw Error(Errc::DegenerateCluster, std::to_string(all.size()) + " points share one coordinate");
  }
  out.groups.push_back(std::move(all));

  while (out.groups.size() < k) {
    std::size_t best = 0;
    double best_spread = -1.0;
    for (std::size_t i = 0; i < out.groups.size(); ++i) {
      double s = detail::spread_of(out.groups[i]).longest();
      if (s > best_spread) {
        best_spread = s;
        best = i;
      }
    }
    if (best_spread <= 0.0) break;

    auto spread = detail::spread_of(out.groups[best]);
    Axis axis = spread.lat >= spread.lon ? Axis::Lat : Axis::Lon;
    std::vector<PeerPoint> g = out.groups[best];
    std::sort(g.begin(), g.end(), [axis](const PeerPoint& a, const PeerPoint& b) {
      double va = detail::axis_value(a.coord, axis), vb = detail::axis_value(b.coord, axis);
      return va != vb ? va < vb : a.name < b.name;
    });
    double median = detail::axis_value(g[(g.size() - 1) / 2].coord, axis);
    auto lower_end = std::upper_bound(g.begin(), g.end(), median, [axis](double v, const PeerPoint& p) {
      return v < detail::axis_value(p.coord, axis);
    });
    if (lower_end == g.end()) {
      // median is the maximum: cut just below it instead
      lower_end = std::lower_bound(g.begin(), g.end(), median, [axis](const PeerPoint& p, double v) {
        return detail::axis_value(p.coord, axis) < v;
      });
    }
    std::vector<PeerPoint> lower(g.begin(), lower_end);
    std::vector<PeerPoint> upper(lower_end, g.end());
    double lo = detail::axis_value(lower.back().coord, axis);
    double hi = detail::axis_value(upper.front().coord, axis);
    double cut = lo + (hi - lo) / 2.0;
    if (!(cut > lo)) cut = hi;

    detail::sort_by_name(lower);
    detail::sort_by_name(upper);
    out.groups[best] = std::move(lower);
    out.groups.push_back(std::move(upper));
    out.cuts.push_back({best, axis, cut});
  }
  return out;
}

// Replays the cuts of a clustering on a rectangle: one rectangle per group.
inline std::vector<Rect> partition_by_cuts(const Rect& outer, std::span<const MedianCut> cuts) {
  std::vector<Rect> rects{outer};
  for (const auto& c : cuts) {
    Rect r = rects.at(c.group);
    if (c.axis == Axis::Lat) {
      rects[c.group] = Rect(r.lat_min(), c.value, r.lon_min(), r.lon_max());
      rects.push_back(Rect(c.value, r.lat_max(), r.lon_min(), r.lon_max()));
    } else {
      rects[c.group] = Rect(r.lat_min(), r.lat_max(), r.lon_min(), c.value);
      rects.push_back(Rect(r.lat_min(), r.lat_max(), c.value, r.lon_max()));
    }
  }
  return rects;
}

// Tight bounding box of the points, made half-open so every point is a member.
inline Rect half_open_bbox(std::span<const PeerPoint> pts, const Rect& within) {
  double lat_lo = pts[0].coord.lat(), lat_hi = lat_lo;
  double lon_lo = pts[0].coord.lon(), lon_hi = lon_lo;
  for (const auto& p : pts) {
    lat_lo = std::min(lat_lo, p.coord.lat());
    lat_hi = std::max(lat_hi, p.coord.lat());
    lon_lo = std::min(lon_lo, p.coord.lon());
    lon_hi = std::max(lon_hi, p.coord.lon());
  }
  auto upper = [](double v, double bound) { return v >= bound ? bound : std::min(std::nextafter(v, bound), bound); };
  double lat_top = upper(lat_hi, within.lat_max());
  double lon_top = upper(lon_hi, within.lon_max());
  if (lat_lo >= lat_top) lat_lo = std::nextafter(lat_top, kLatMin);
  if (lon_lo >= lon_top) lon_lo = std::nextafter(lon_top, kLonMin);
  return Rect(lat_lo, lat_top, lon_lo, lon_top);
}

// ---------------------------------------------------------------------------
// Split / merge geometry shared by the reference tree and the peer protocol
// ---------------------------------------------------------------------------

struct ChildPlan {
  std::uint32_t label = 0;
  bool is_remainder = false;
  Region region;
  std::vector<PeerPoint> members;  // sorted by name
};

struct SplitPlan {
  std::vector<ChildPlan> children;  // sorted by label
  bool fallback = false;            // cluster boxes overlapped; cut-partition used
};

// Builds children from already formed groups. Cluster sub-zones are the tight
// boxes of their groups; the leftover area becomes the label-0 remainder.
inline SplitPlan plan_split(const Region& leaf, const Clustering& clustering) {
  SplitPlan plan;
  const auto& groups = clustering.groups;
  std::vector<Rect> boxes;
  boxes.reserve(groups.size());
  for (const auto& g : groups) boxes.push_back(half_open_bbox(g, leaf.outer()));

  bool overlap = false;
  for (std::size_t i = 0; i < boxes.size() && !overlap; ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (boxes[i].overlaps(boxes[j])) {
        overlap = true;
        break;
      }
    }
  }

  if (overlap) {
    plan.fallback = true;
    auto rects = partition_by_cuts(leaf.outer(), clustering.cuts);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      auto region = leaf.clip(rects[i]);
      plan.children.push_back({static_cast<std::uint32_t>(i + 1), false, *region, groups[i]});
    }
    return plan;
  }

  Region rest = leaf;
  for (const auto& b : boxes) rest = rest.subtract(b);
  if (!rest.empty()) plan.children.push_back({0, true, rest, {}});
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto region = leaf.clip(boxes[i]);
    plan.children.push_back({static_cast<std::uint32_t>(i + 1), false, *region, groups[i]});
  }
  return plan;
}

inline SplitPlan compute_split(const Region& leaf, std::span<const PeerPoint> members, std::size_t k) {
  return plan_split(leaf, cluster_peers(members, k));
}

// Exact union of two sibling zones, written as (hull ∩ parent) minus everything
// in that hull belonging to the other siblings or to the parent's own holes.
// `others` must be in label order so every caller produces identical holes.
inline Region merge_region(const Region& parent, const Region& a, const Region& b,
                           std::span<const Region> others) {
  auto hull = parent.outer().intersection(a.outer().hull(b.outer()));
  if (!hull) throw Error(Errc::Inconsistent, "merging zones lie outside their parent");
  std::vector<Rect> holes;
  for (const auto& h : parent.holes()) {
    if (auto c = h.intersection(*hull)) holes.push_back(*c);
  }
  for (const auto& o : others) {
    if (!o.outer().overlaps(*hull)) continue;
    for (const auto& piece : o.pieces()) {
      if (auto c = piece.intersection(*hull)) holes.push_back(*c);
    }
  }
  return Region(*hull, std::move(holes));
}

// ---------------------------------------------------------------------------
// ZoneTree
// ---------------------------------------------------------------------------

struct ZoneNode {
  ZoneId id;
  Region region;
  bool is_remainder = false;
  std::uint64_t epoch = 0;
  std::vector<ZoneNode> children;  // sorted by label; empty for a leaf
  std::vector<PeerName> peers;     // sorted; only leaves hold peers

  bool is_leaf() const { return children.empty(); }

  const ZoneNode* child(std::uint32_t label) const {
    for (const auto& c : children) {
      if (c.id.label() == label) return &c;
    }
    return nullptr;
  }
  ZoneNode* child(std::uint32_t label) {
    return const_cast<ZoneNode*>(static_cast<const ZoneNode&>(*this).child(label));
  }
};

struct ChildDescriptor {
  ZoneId id;
  Region region;
  bool is_remainder = false;
  std::vector<PeerName> peers;
};

struct SplitOutcome {
  ZoneId zone;
  std::vector<ChildDescriptor> children;
  bool fallback = false;
};

struct MergeOutcome {
  ZoneId zone;
  ZoneId partner;
  ZoneId merged;       // id of the resulting leaf (the parent when collapsed)
  bool collapsed = false;
  Region region;
};

struct Violation {
  std::string what;
  std::vector<ZoneId> zones;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

class ZoneTree {
 public:
  ZoneTree() { root_.region = Region::universe(); }

  const ZoneNode& root() const { return root_; }

  const ZoneNode* find(const ZoneId& id) const {
    const ZoneNode* n = &root_;
    for (auto label : id.path()) {
      n = n->child(label);
      if (!n) return nullptr;
    }
    return n;
  }

  const ZoneNode& at(const ZoneId& id) const {
    const ZoneNode* n = find(id);
    if (!n) throw Error(Errc::UnknownZone, id.to_string());
    return *n;
  }

  ZoneId locate_leaf(const GeoPoint& p) const {
    const ZoneNode* n = &root_;
    while (!n->is_leaf()) {
      const ZoneNode* next = nullptr;
      for (const auto& c : n->children) {
        if (c.region.contains(p)) {
          next = &c;
          break;
        }
      }
      if (!next) throw Error(Errc::Inconsistent, "no child of " + n->id.to_string() + " contains " + p.to_string());
      n = next;
    }
    return n->id;
  }

  std::size_t peer_count() const { return coords_.size(); }
  bool has_peer(const PeerName& name) const { return coords_.count(name) != 0; }

  const GeoPoint& coord(const PeerName& name) const {
    auto it = coords_.find(name);
    if (it == coords_.end()) throw Error(Errc::UnknownPeer, name);
    return it->second;
  }

  const ZoneId& leaf_of(const PeerName& name) const {
    auto it = leaf_of_.find(name);
    if (it == leaf_of_.end()) throw Error(Errc::UnknownPeer, name);
    return it->second;
  }

  OverlayId overlay_id(const PeerName& name) const { return {leaf_of(name), name}; }

  const std::map<PeerName, GeoPoint>& coords() const { return coords_; }

  ZoneId add_peer(const PeerName& name, const GeoPoint& p) {
    if (coords_.count(name)) throw Error(Errc::DuplicatePeer, name);
    ZoneId leaf = locate_leaf(p);
    ZoneNode& n = mutable_at(leaf);
    n.peers.insert(std::upper_bound(n.peers.begin(), n.peers.end(), name), name);
    coords_.emplace(name, p);
    leaf_of_.emplace(name, leaf);
    return leaf;
  }

  ZoneId remove_peer(const PeerName& name) {
    ZoneId leaf = leaf_of(name);
    ZoneNode& n = mutable_at(leaf);
    n.peers.erase(std::lower_bound(n.peers.begin(), n.peers.end(), name));
    coords_.erase(name);
    leaf_of_.erase(name);
    return leaf;
  }

  std::vector<PeerPoint> members(const ZoneId& leaf) const {
    std::vector<PeerPoint> out;
    for (const auto& name : at(leaf).peers) out.push_back({name, coord(name)});
    return out;
  }

  // All peers below a zone, sorted by name.
  std::vector<PeerName> subtree_peers(const ZoneNode& n) const {
    std::vector<PeerName> out;
    collect(n, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<ZoneId> leaves() const {
    std::vector<ZoneId> out;
    walk(root_, [&](const ZoneNode& n) {
      if (n.is_leaf()) out.push_back(n.id);
    });
    return out;
  }

  template <typename F>
  void for_each_node(F&& f) const {
    walk(root_, f);
  }

  std::size_t max_depth() const {
    std::size_t d = 0;
    walk(root_, [&](const ZoneNode& n) { d = std::max(d, n.id.depth()); });
    return d;
  }

  SplitOutcome split_leaf(const ZoneId& zone, const AdaptationPolicy& policy) {
    ZoneNode& n = mutable_at(zone);
    if (!n.is_leaf()) throw Error(Errc::NotALeaf, zone.to_string());
    if (n.peers.size() <= policy.split_threshold) {
      throw Error(Errc::NoSplitNeeded, zone.to_string() + " holds " + std::to_string(n.peers.size()) + " peers");
    }
    SplitPlan plan = compute_split(n.region, members(zone), policy.k);
    return apply_split(zone, plan);
  }

  SplitOutcome apply_split(const ZoneId& zone, const SplitPlan& plan) {
    ZoneNode& n = mutable_at(zone);
    if (!n.is_leaf()) throw Error(Errc::NotALeaf, zone.to_string());
    SplitOutcome out{zone, {}, plan.fallback};
    for (const auto& cp : plan.children) {
      ZoneNode c;
      c.id = zone.child(cp.label);
      c.region = cp.region;
      c.is_remainder = cp.is_remainder;
      c.epoch = n.epoch + 1;
      for (const auto& m : cp.members) {
        c.peers.push_back(m.name);
        leaf_of_[m.name] = c.id;
      }
      std::sort(c.peers.begin(), c.peers.end());
      out.children.push_back({c.id, c.region, c.is_remainder, c.peers});
      n.children.push_back(std::move(c));
    }
    std::sort(n.children.begin(), n.children.end(),
              [](const ZoneNode& a, const ZoneNode& b) { return a.id.label() < b.id.label(); });
    n.peers.clear();
    return out;
  }

  // Merge partner: the remainder sibling when it is a leaf, else the leaf sibling
  // with the fewest peers (smaller label on ties).
  std::optional<ZoneId> merge_partner(const ZoneId& zone) const {
    if (zone.is_root()) return std::nullopt;
    const ZoneNode& parent = at(zone.parent());
    const ZoneNode* best = nullptr;
    for (const auto& s : parent.children) {
      if (s.id == zone || !s.is_leaf()) continue;
      if (s.is_remainder) return s.id;
      if (!best || s.peers.size() < best->peers.size()) best = &s;
    }
    if (!best) return std::nullopt;
    return best->id;
  }

  MergeOutcome merge_leaf(const ZoneId& zone, const AdaptationPolicy& policy) {
    const ZoneNode& n = at(zone);
    if (!n.is_leaf()) throw Error(Errc::NotALeaf, zone.to_string());
    if (n.peers.size() >= policy.merge_threshold) {
      throw Error(Errc::AboveThreshold, zone.to_string() + " holds " + std::to_string(n.peers.size()) + " peers");
    }
    auto partner = merge_partner(zone);
    if (!partner) throw Error(Errc::NoLeafSibling, zone.to_string());
    return merge_with(zone, *partner);
  }

  MergeOutcome merge_with(const ZoneId& zone, const ZoneId& partner) {
    if (zone.parent() != partner.parent() || zone == partner || zone.is_root()) {
      throw Error(Errc::Inconsistent, zone.to_string() + " and " + partner.to_string() + " are not siblings");
    }
    ZoneNode& parent = mutable_at(zone.parent());
    ZoneNode* a = parent.child(zone.label());
    ZoneNode* b = parent.child(partner.label());
    if (!a || !b) throw Error(Errc::UnknownZone, zone.to_string());
    if (!a->is_leaf() || !b->is_leaf()) throw Error(Errc::NotALeaf, zone.to_string());

    std::vector<PeerName> peers = a->peers;
    peers.insert(peers.end(), b->peers.begin(), b->peers.end());
    std::sort(peers.begin(), peers.end());
    std::uint64_t epoch = std::max(a->epoch, b->epoch) + 1;

    MergeOutcome out;
    out.zone = zone;
    out.partner = partner;
    if (parent.children.size() == 2) {
      out.collapsed = true;
      out.merged = parent.id;
      out.region = parent.region;
      parent.epoch = std::max(parent.epoch + 1, epoch);
      parent.children.clear();
      parent.peers = peers;
    } else {
      std::vector<Region> others;
      for (const auto& s : parent.children) {
        if (s.id != zone && s.id != partner) others.push_back(s.region);
      }
      ZoneNode merged;
      merged.is_remainder = a->is_remainder || b->is_remainder;
      merged.id = parent.id.child(merged.is_remainder ? 0 : partner.label());
      merged.region = merge_region(parent.region, a->region, b->region, others);
      merged.epoch = epoch;
      merged.peers = peers;
      out.merged = merged.id;
      out.region = merged.region;
      std::erase_if(parent.children, [&](const ZoneNode& s) { return s.id == zone || s.id == partner; });
      parent.children.push_back(std::move(merged));
      std::sort(parent.children.begin(), parent.children.end(),
                [](const ZoneNode& x, const ZoneNode& y) { return x.id.label() < y.id.label(); });
    }
    for (const auto& p : peers) leaf_of_[p] = out.merged;
    return out;
  }

  // Structural checks plus a Monte-Carlo partition test over `samples` points
  // per internal node.
  ValidationReport validate(std::size_t samples = 10000, std::uint64_t seed = 1) const {
    ValidationReport rep;
    Rng rng(seed);
    std::size_t peer_total = 0;
    walk(root_, [&](const ZoneNode& n) { check_node(n, rep, rng, samples, peer_total); });
    if (peer_total != coords_.size()) {
      rep.violations.push_back({"peer count mismatch between leaves and coordinate index", {}});
    }
    return rep;
  }

  // Rebuilds a tree from a serialized root and the peer coordinates. No checks;
  // run validate() on the result.
  static ZoneTree restore(ZoneNode root, std::map<PeerName, GeoPoint> coords) {
    ZoneTree t;
    t.root_ = std::move(root);
    t.coords_ = std::move(coords);
    walk(t.root_, [&](const ZoneNode& n) {
      for (const auto& p : n.peers) t.leaf_of_[p] = n.id;
    });
    return t;
  }

  // Test hook: direct mutable access to a node.
  ZoneNode& mutable_at(const ZoneId& id) {
    return const_cast<ZoneNode&>(static_cast<const ZoneTree&>(*this).at(id));
  }

  friend bool operator==(const ZoneTree& a, const ZoneTree& b) {
    return same_node(a.root_, b.root_) && a.coords_ == b.coords_;
  }

 private:
  static bool same_node(const ZoneNode& a, const ZoneNode& b) {
    if (a.id != b.id || !(a.region == b.region) || a.is_remainder != b.is_remainder || a.epoch != b.epoch ||
        a.peers != b.peers || a.children.size() != b.children.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.children.size(); ++i) {
      if (!same_node(a.children[i], b.children[i])) return false;
    }
    return true;
  }

  template <typename F>
  static void walk(const ZoneNode& n, F&& f) {
    f(n);
    for (const auto& c : n.children) walk(c, f);
  }

  static void collect(const ZoneNode& n, std::vector<PeerName>& out) {
    out.insert(out.end(), n.peers.begin(), n.peers.end());
    for (const auto& c : n.children) collect(c, out);
  }

  void check_node(const ZoneNode& n, ValidationReport& rep, Rng& rng, std::size_t samples,
                  std::size_t& peer_total) const {
    auto fail = [&](std::string what, std::vector<ZoneId> zones) {
      rep.violations.push_back({std::move(what), std::move(zones)});
    };
    // region well-formed
    for (std::size_t i = 0; i < n.region.holes().size(); ++i) {
      if (!n.region.outer().contains(n.region.holes()[i])) fail("hole outside outer rectangle", {n.id});
      for (std::size_t j = i + 1; j < n.region.holes().size(); ++j) {
        if (n.region.holes()[i].overlaps(n.region.holes()[j])) fail("overlapping holes", {n.id});
      }
    }
    if (n.is_leaf()) {
      peer_total += n.peers.size();
      if (!std::is_sorted(n.peers.begin(), n.peers.end())) fail("leaf peer list unsorted", {n.id});
      for (const auto& p : n.peers) {
        auto c = coords_.find(p);
        if (c == coords_.end()) {
          fail("peer " + p + " has no coordinate", {n.id});
          continue;
        }
        if (!n.region.contains(c->second)) fail("peer " + p + " outside its leaf", {n.id});
        auto l = leaf_of_.find(p);
        if (l == leaf_of_.end() || l->second != n.id) fail("peer " + p + " has a stale leaf id", {n.id});
      }
      return;
    }
    if (!n.peers.empty()) fail("internal zone holds peers", {n.id});

    std::size_t remainders = 0;
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      const auto& c = n.children[i];
      if (c.id.parent() != n.id || c.id.depth() != n.id.depth() + 1) fail("child id does not extend parent", {c.id});
      if (i > 0 && !(n.children[i - 1].id.label() < c.id.label())) fail("child labels not strictly increasing", {c.id});
      if (c.is_remainder) {
        ++remainders;
        if (c.id.label() != 0) fail("remainder child not labelled 0", {c.id});
      } else if (c.id.label() == 0) {
        fail("label 0 used by a non-remainder child", {c.id});
      }
      for (std::size_t j = i + 1; j < n.children.size(); ++j) {
        if (c.region.intersects(n.children[j].region)) fail("sibling zones overlap", {c.id, n.children[j].id});
      }
      if (!subtract_all(c.region.pieces(), n.region.pieces()).empty()) fail("child exceeds parent", {c.id, n.id});
    }
    if (remainders > 1) fail("more than one remainder child", {n.id});

    std::vector<Rect> uncovered = n.region.pieces();
    for (const auto& c : n.children) {
      auto cp = c.region.pieces();
      uncovered = subtract_all(std::move(uncovered), cp);
    }
    if (!uncovered.empty()) fail("children do not cover parent", {n.id});

    const Rect& o = n.region.outer();
    std::size_t bad = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      GeoPoint p(rng.uniform(o.lat_min(), o.lat_max()), rng.uniform(o.lon_min(), std::min(o.lon_max(), std::nextafter(kLonMax, 0.0))));
      std::size_t hits = 0;
      for (const auto& c : n.children) hits += c.region.contains(p) ? 1 : 0;
      std::size_t expected = n.region.contains(p) ? 1 : 0;
      if (hits != expected) ++bad;
    }
    if (bad) fail(std::to_string(bad) + " sampled points not in exactly one child", {n.id});
  }

  ZoneNode root_;
  std::map<PeerName, GeoPoint> coords_;
  std::map<PeerName, ZoneId> leaf_of_;
};

}  // namespace geoverlay
