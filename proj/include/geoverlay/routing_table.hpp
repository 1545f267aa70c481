#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "geoverlay/error.hpp"
#include "geoverlay/geo.hpp"
#include "geoverlay/zone_tree.hpp"

namespace geoverlay {

// One designated contact plus this many backups per sibling zone.
inline constexpr std::size_t kBackupContacts = 2;
inline constexpr std::size_t kContactsPerZone = 1 + kBackupContacts;

struct Contact {
  PeerName address;  // simulator handle standing in for the peer's network address
  GeoPoint coordinate;
  OverlayId overlay_id;

  friend bool operator==(const Contact&, const Contact&) = default;
};

struct SiblingEntry {
  ZoneId zone;
  Region boundary;
  std::vector<Contact> contacts;  // [0] is designated; empty when the zone holds no peers
  bool contact_missing = false;   // populated zone whose known contacts all departed

  bool populated() const { return !contacts.empty(); }
  const Contact& designated() const { return contacts.front(); }

  friend bool operator==(const SiblingEntry&, const SiblingEntry&) = default;
};

struct RoutingRow {
  std::size_t level = 0;  // 1 = children of the universe
  ZoneId self_zone_id;
  Region self_zone;
  std::vector<SiblingEntry> entries;  // label order, excludes the self zone

  const SiblingEntry* entry(const ZoneId& z) const {
    for (const auto& e : entries) {
      if (e.zone == z) return &e;
    }
    return nullptr;
  }
  SiblingEntry* entry(const ZoneId& z) {
    return const_cast<SiblingEntry*>(static_cast<const RoutingRow&>(*this).entry(z));
  }

  friend bool operator==(const RoutingRow&, const RoutingRow&) = default;
};

struct RoutingTable {
  Contact owner;
  std::vector<RoutingRow> rows;  // rows[i].level == i + 1
  ZoneId leaf_id;
  Region leaf_zone;
  std::vector<Contact> leaf_row;  // every member of the leaf, owner included, by name
  std::uint64_t epoch = 0;

  std::size_t depth() const { return rows.size(); }

  const RoutingRow& row(std::size_t level) const { return rows.at(level - 1); }
  RoutingRow& row(std::size_t level) { return rows.at(level - 1); }

  // Region of the owner's own zone at `depth` (0 = universe).
  Region self_zone(std::size_t depth) const {
    if (depth == 0) return Region::universe();
    if (depth > rows.size()) throw Error(Errc::Inconsistent, "depth beyond table");
    return rows[depth - 1].self_zone;
  }

  friend bool operator==(const RoutingTable&, const RoutingTable&) = default;
};

inline bool name_less(const Contact& a, const Contact& b) { return a.address < b.address; }

// Smallest-name peers of a zone given the candidate lists of its parts.
inline std::vector<Contact> smallest_contacts(std::vector<Contact> candidates, std::size_t n = kContactsPerZone) {
  std::sort(candidates.begin(), candidates.end(), name_less);
  candidates.erase(std::unique(candidates.begin(), candidates.end(),
                               [](const Contact& a, const Contact& b) { return a.address == b.address; }),
                   candidates.end());
  if (candidates.size() > n) candidates.resize(n);
  return candidates;
}

// Designated+backup contacts of the owner's own zone at `depth`, derived only
// from the table: the owner's leaf row plus the contacts of every deeper row.
inline std::vector<Contact> own_zone_contacts(const RoutingTable& t, std::size_t depth) {
  std::vector<Contact> cand = t.leaf_row;
  for (std::size_t lvl = depth + 1; lvl <= t.depth(); ++lvl) {
    for (const auto& e : t.row(lvl).entries) cand.insert(cand.end(), e.contacts.begin(), e.contacts.end());
  }
  return smallest_contacts(std::move(cand));
}

// ---------------------------------------------------------------------------
// Building tables from the reference tree
// ---------------------------------------------------------------------------

// Precomputed contact lists for every zone of a tree snapshot.
class ContactIndex {
 public:
  explicit ContactIndex(const ZoneTree& tree) : tree_(tree) { fill(tree.root()); }

  const std::vector<Contact>& of(const ZoneId& z) const {
    auto it = lists_.find(z);
    if (it == lists_.end()) throw Error(Errc::UnknownZone, z.to_string());
    return it->second;
  }

 private:
  std::vector<Contact> fill(const ZoneNode& n) {
    std::vector<Contact> cand;
    if (n.is_leaf()) {
      for (std::size_t i = 0; i < n.peers.size() && i < kContactsPerZone; ++i) {
        cand.push_back({n.peers[i], tree_.coord(n.peers[i]), {n.id, n.peers[i]}});
      }
    } else {
      for (const auto& c : n.children) {
        auto sub = fill(c);
        cand.insert(cand.end(), sub.begin(), sub.end());
      }
    }
    auto top = smallest_contacts(std::move(cand));
    lists_[n.id] = top;
    return top;
  }

  const ZoneTree& tree_;
  std::map<ZoneId, std::vector<Contact>> lists_;
};

inline RoutingTable build_table(const ZoneTree& tree, const PeerName& owner, const ContactIndex& index) {
  if (!tree.has_peer(owner)) throw Error(Errc::UnknownPeer, owner);
  RoutingTable t;
  const ZoneId& leaf = tree.leaf_of(owner);
  t.owner = {owner, tree.coord(owner), {leaf, owner}};
  t.leaf_id = leaf;
  const ZoneNode* n = &tree.root();
  for (std::size_t lvl = 1; lvl <= leaf.depth(); ++lvl) {
    std::uint32_t self_label = leaf.path()[lvl - 1];
    RoutingRow row;
    row.level = lvl;
    for (const auto& c : n->children) {
      if (c.id.label() == self_label) {
        row.self_zone_id = c.id;
        row.self_zone = c.region;
      } else {
        row.entries.push_back({c.id, c.region, index.of(c.id), false});
      }
    }
    t.rows.push_back(std::move(row));
    n = n->child(self_label);
  }
  t.leaf_zone = n->region;
  t.epoch = n->epoch;
  for (const auto& p : n->peers) t.leaf_row.push_back({p, tree.coord(p), {leaf, p}});
  return t;
}

inline RoutingTable build_table(const ZoneTree& tree, const PeerName& owner) {
  return build_table(tree, owner, ContactIndex(tree));
}

// ---------------------------------------------------------------------------
// Zone updates
// ---------------------------------------------------------------------------

enum class UpdateKind { Join, Leave, Split, Merge, Refresh };

inline const char* to_string(UpdateKind k) {
  switch (k) {
    case UpdateKind::Join: return "join";
    case UpdateKind::Leave: return "leave";
    case UpdateKind::Split: return "split";
    case UpdateKind::Merge: return "merge";
    case UpdateKind::Refresh: return "refresh";
  }
  return "?";
}

struct NewBoundary {
  std::uint32_t label = 0;
  Region region;
  bool is_remainder = false;
};

// A notice about a change to `zone`. Receivers interpret it by relation:
// `zone` is their own leaf (Join/Leave/Split/Merge), or `zone` is one of their
// sibling entries (Leave/Merge/Refresh, replacing that entry's contacts).
struct ZoneUpdate {
  UpdateKind kind = UpdateKind::Join;
  ZoneId zone;
  std::optional<ZoneId> partner;  // Merge: the other merging leaf
  std::optional<ZoneId> result;   // Merge: merged leaf id (the parent when collapsed)
  bool collapsed = false;
  std::vector<NewBoundary> new_boundaries;
  std::vector<std::pair<OverlayId, OverlayId>> affected_peers;  // (old, new)
  std::vector<Contact> members;   // Join: the joiner; Leave: the leaver; Split/Merge: all members with new ids
  std::optional<std::vector<Contact>> contacts;  // fresh contact list for sibling-entry holders
  std::uint64_t epoch = 0;        // Split/Merge: epoch of the resulting leaf
};

namespace detail {

inline void insert_contact(std::vector<Contact>& v, const Contact& c) {
  auto it = std::lower_bound(v.begin(), v.end(), c, name_less);
  if (it != v.end() && it->address == c.address) {
    *it = c;
  } else {
    v.insert(it, c);
  }
}

inline bool erase_contact(std::vector<Contact>& v, const PeerName& name) {
  auto it = std::find_if(v.begin(), v.end(), [&](const Contact& c) { return c.address == name; });
  if (it == v.end()) return false;
  v.erase(it);
  return true;
}

inline SiblingEntry* find_entry(RoutingTable& t, const ZoneId& z) {
  if (z.depth() == 0 || z.depth() > t.depth()) return nullptr;
  return t.row(z.depth()).entry(z);
}

inline void stale(const ZoneUpdate& u, const RoutingTable& t) {
  throw Error(Errc::StaleUpdate, std::string(to_string(u.kind)) + " for " + u.zone.to_string() +
                                     " does not match table of " + t.owner.address + " (leaf " +
                                     t.leaf_id.to_string() + ")");
}

inline void apply_leaf_split(RoutingTable& t, const ZoneUpdate& u) {
  if (u.epoch <= t.epoch) stale(u, t);
  const Contact* me = nullptr;
  for (const auto& m : u.members) {
    if (m.address == t.owner.address) me = &m;
  }
  if (!me) stale(u, t);
  ZoneId mine = me->overlay_id.zone;
  if (mine.parent() != t.leaf_id) stale(u, t);

  RoutingRow row;
  row.level = t.depth() + 1;
  row.self_zone_id = mine;
  for (const auto& b : u.new_boundaries) {
    ZoneId child = t.leaf_id.child(b.label);
    std::vector<Contact> in_child;
    for (const auto& m : u.members) {
      if (m.overlay_id.zone == child) in_child.push_back(m);
    }
    std::sort(in_child.begin(), in_child.end(), name_less);
    if (child == mine) {
      row.self_zone = b.region;
      t.leaf_zone = b.region;
      t.leaf_row = in_child;
    } else {
      row.entries.push_back({child, b.region, smallest_contacts(in_child), false});
    }
  }
  t.rows.push_back(std::move(row));
  t.leaf_id = mine;
  t.owner.overlay_id.zone = mine;
  t.epoch = u.epoch;
}

inline void apply_leaf_merge(RoutingTable& t, const ZoneUpdate& u) {
  if (u.epoch <= t.epoch || !u.result || !u.partner || u.new_boundaries.empty()) stale(u, t);
  const Region& region = u.new_boundaries.front().region;
  if (u.collapsed) {
    if (t.depth() == 0) stale(u, t);
    t.rows.pop_back();
  } else {
    RoutingRow& row = t.row(t.depth());
    std::erase_if(row.entries, [&](const SiblingEntry& e) { return e.zone == u.zone || e.zone == *u.partner; });
    row.self_zone_id = *u.result;
    row.self_zone = region;
  }
  t.leaf_id = *u.result;
  t.leaf_zone = region;
  t.owner.overlay_id.zone = *u.result;
  t.leaf_row = u.members;
  std::sort(t.leaf_row.begin(), t.leaf_row.end(), name_less);
  t.epoch = u.epoch;
}

}  // namespace detail

// Applies one update to a copy of the table. Throws StaleUpdate when the update
// refers to zones the table does not know in the expected role.
inline RoutingTable apply_zone_update(RoutingTable t, const ZoneUpdate& u) {
  const bool own_leaf = u.zone == t.leaf_id;
  switch (u.kind) {
    case UpdateKind::Join: {
      if (!own_leaf || u.members.empty()) detail::stale(u, t);
      for (const auto& m : u.members) detail::insert_contact(t.leaf_row, m);
      return t;
    }
    case UpdateKind::Leave: {
      if (u.members.empty()) detail::stale(u, t);
      const PeerName& leaver = u.members.front().address;
      if (own_leaf) {
        detail::erase_contact(t.leaf_row, leaver);
        return t;
      }
      SiblingEntry* e = detail::find_entry(t, u.zone);
      if (!e) detail::stale(u, t);
      detail::erase_contact(e->contacts, leaver);  // promotes the next backup
      if (u.contacts) {
        e->contacts = *u.contacts;
        e->contact_missing = false;
      } else if (e->contacts.empty()) {
        e->contact_missing = true;
      }
      return t;
    }
    case UpdateKind::Split: {
      if (own_leaf) {
        detail::apply_leaf_split(t, u);
        return t;
      }
      SiblingEntry* e = detail::find_entry(t, u.zone);
      if (!e || !u.contacts) detail::stale(u, t);
      e->contacts = *u.contacts;
      e->contact_missing = false;
      return t;
    }
    case UpdateKind::Merge: {
      if (own_leaf || (u.partner && *u.partner == t.leaf_id)) {
        detail::apply_leaf_merge(t, u);
        return t;
      }
      // Holder of both merging zones as siblings: replace them by the merged entry.
      if (!u.partner || !u.result || u.collapsed || u.new_boundaries.empty() || !u.contacts) detail::stale(u, t);
      SiblingEntry* a = detail::find_entry(t, u.zone);
      SiblingEntry* b = detail::find_entry(t, *u.partner);
      if (!a || !b) detail::stale(u, t);
      RoutingRow& row = t.row(u.zone.depth());
      std::erase_if(row.entries, [&](const SiblingEntry& e) { return e.zone == u.zone || e.zone == *u.partner; });
      SiblingEntry merged{*u.result, u.new_boundaries.front().region, *u.contacts, false};
      auto pos = std::lower_bound(row.entries.begin(), row.entries.end(), merged,
                                  [](const SiblingEntry& x, const SiblingEntry& y) { return x.zone < y.zone; });
      row.entries.insert(pos, std::move(merged));
      return t;
    }
    case UpdateKind::Refresh: {
      SiblingEntry* e = detail::find_entry(t, u.zone);
      if (!e || !u.contacts) detail::stale(u, t);
      e->contacts = *u.contacts;
      e->contact_missing = false;
      if (!u.new_boundaries.empty()) e->boundary = u.new_boundaries.front().region;
      return t;
    }
  }
  return t;
}

// Designated contact of the first sibling (label order) matching the predicate
// that currently has a contact.
inline Contact select_contact(const RoutingRow& row, const std::function<bool(const SiblingEntry&)>& pred) {
  for (const auto& e : row.entries) {
    if (e.populated() && pred(e)) return e.designated();
  }
  throw Error(Errc::NoMatch, "no sibling at level " + std::to_string(row.level) + " matches");
}

}  // namespace geoverlay
