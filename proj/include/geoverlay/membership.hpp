#pragma once

#include <algorithm>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geoverlay/error.hpp"
#include "geoverlay/geo.hpp"
#include "geoverlay/rng.hpp"
#include "geoverlay/router.hpp"
#include "geoverlay/routing_table.hpp"
#include "geoverlay/trace.hpp"
#include "geoverlay/zone_tree.hpp"

namespace geoverlay {

struct PeerState {
  RoutingTable table;
  bool alive = true;
};

struct MembershipStats {
  std::uint64_t joins = 0;
  std::uint64_t leaves = 0;
  std::uint64_t failures = 0;
  std::uint64_t repairs = 0;
  std::uint64_t splits = 0;
  std::uint64_t merges = 0;
  std::uint64_t degenerate_splits = 0;
  std::uint64_t suppressed_tasks = 0;
  std::uint64_t partner_busy = 0;
  std::uint64_t no_leaf_sibling = 0;
  std::uint64_t update_messages = 0;
  std::uint64_t missing_contacts = 0;
  std::uint64_t stale_updates = 0;
};

struct VerifyReport {
  std::vector<std::string> problems;
  std::size_t peers = 0;
  std::size_t leaves = 0;
  std::size_t tables_checked = 0;
  std::size_t samples = 0;

  bool ok() const { return problems.empty(); }
};

namespace detail {

inline std::size_t leaves_containing(const ZoneNode& n, const GeoPoint& p) {
  if (!n.region.contains(p)) return 0;
  if (n.is_leaf()) return 1;
  std::size_t hits = 0;
  for (const auto& c : n.children) hits += leaves_containing(c, p);
  return hits;
}

}  // namespace detail

// Checks a network state: the reference tree is valid, every live peer's table
// equals its rebuild from the tree, and uniformly sampled points each fall in
// exactly one leaf.
inline VerifyReport verify_state(const ZoneTree& tree, const std::map<PeerName, RoutingTable>& tables,
                                 const std::vector<PeerName>& failed, std::size_t samples, std::uint64_t seed) {
  VerifyReport rep;
  for (const auto& v : tree.validate(2000, seed).violations) {
    std::string zones;
    for (const auto& z : v.zones) zones += " " + z.to_string();
    rep.problems.push_back("tree: " + v.what + zones);
  }
  for (const auto& name : failed) rep.problems.push_back("peer " + name + " failed and is not yet repaired");
  ContactIndex index(tree);
  for (const auto& [name, table] : tables) {
    if (!tree.has_peer(name)) {
      rep.problems.push_back("peer " + name + " unknown to reference tree");
      continue;
    }
    ++rep.tables_checked;
    if (table != build_table(tree, name, index)) rep.problems.push_back("routing table of " + name + " differs from rebuild");
  }
  if (tree.peer_count() != tables.size() + failed.size()) rep.problems.push_back("peer count mismatch");
  rep.peers = tables.size();
  rep.leaves = tree.leaves().size();

  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = 0; i < samples; ++i) {
    GeoPoint p(rng.uniform(kLatMin, kLatMax), rng.uniform(kLonMin, kLonMax));
    std::size_t hits = detail::leaves_containing(tree.root(), p);
    if (hits != 1) {
      rep.problems.push_back("point " + p.to_string() + " lies in " + std::to_string(hits) + " leaves");
      if (rep.problems.size() > 50) break;
    }
  }
  rep.samples = samples;
  return rep;
}

// The simulated overlay: every peer's routing table, the reference zone tree
// maintained alongside, and the single-threaded event engine that moves
// messages between peers. All decisions a peer makes read only its own table;
// the reference tree is consulted for checks and for the few facts noted below.
class Network {
 public:
  explicit Network(AdaptationPolicy policy = {}, std::uint64_t seed = 1) : policy_(policy), rng_(seed) {
    policy_.check();
  }

  const AdaptationPolicy& policy() const { return policy_; }
  const ZoneTree& oracle() const { return oracle_; }
  const MembershipStats& stats() const { return stats_; }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  // Receives one record per membership event (join, leave, fail, split, merge).
  void set_event_sink(std::function<void(const RouteTrace&)> sink) { sink_ = std::move(sink); }

  bool has_peer(const PeerName& name) const {
    auto it = peers_.find(name);
    return it != peers_.end() && it->second.alive;
  }
  bool knows_peer(const PeerName& name) const { return peers_.count(name) != 0; }

  const PeerState& peer(const PeerName& name) const {
    auto it = peers_.find(name);
    if (it == peers_.end()) throw Error(Errc::UnknownPeer, name);
    return it->second;
  }
  const RoutingTable& table(const PeerName& name) const { return peer(name).table; }
  OverlayId overlay_id(const PeerName& name) const { return table(name).owner.overlay_id; }

  // Alive peers in name order.
  std::vector<PeerName> peers() const {
    std::vector<PeerName> out;
    for (const auto& [name, st] : peers_) {
      if (st.alive) out.push_back(name);
    }
    return out;
  }
  std::size_t size() const { return alive_count_; }

  // First unused name of the form p000000, p000001, ...
  PeerName next_name() {
    char buf[32];
    for (;;) {
      std::snprintf(buf, sizeof buf, "p%06llu", static_cast<unsigned long long>(name_counter_++));
      if (!peers_.count(buf)) return buf;
    }
  }

  std::uint64_t next_msg_id() { return msg_counter_++; }

  // Bulk start: place all peers in the reference tree, split every oversized
  // leaf, then hand each peer the table it would hold in that state.
  void populate(const std::vector<PeerPoint>& points) {
    if (!peers_.empty() || oracle_.peer_count() != 0) {
      throw Error(Errc::Inconsistent, "populate requires an empty network");
    }
    for (const auto& p : points) oracle_.add_peer(p.name, p.coord);
    bool again = true;
    std::set<ZoneId> degenerate;
    while (again) {
      again = false;
      for (const auto& leaf : oracle_.leaves()) {
        if (oracle_.at(leaf).peers.size() <= policy_.split_threshold || degenerate.count(leaf)) continue;
        try {
          oracle_.split_leaf(leaf, policy_);
          again = true;
        } catch (const Error& e) {
          if (e.code() != Errc::DegenerateCluster) throw;
          degenerate.insert(leaf);
          ++stats_.degenerate_splits;
        }
      }
    }
    ContactIndex index(oracle_);
    for (const auto& p : points) peers_[p.name] = PeerState{build_table(oracle_, p.name, index), true};
    alive_count_ = points.size();
  }

  // -------------------------------------------------------------------------
  // Routing services
  // -------------------------------------------------------------------------

  RouteTrace route_area(const PeerName& source, const Region& area) {
    RouteTrace tr = start_trace("area", source);
    tr.target = describe(area);
    run_area(tr, source, area, 1, 0, nullptr);
    return tr;
  }

  RouteTrace route_point(const PeerName& source, const GeoPoint& p) {
    RouteTrace tr = start_trace("point", source);
    tr.target = p.to_string();
    tr.target_leaf = oracle_.locate_leaf(p);
    auto end = run_point(tr, source, p);
    tr.result = overlay_id(end.at);
    tr.deliveries.push_back(*tr.result);
    return tr;
  }

  RouteTrace route_peer(const PeerName& source, const OverlayId& dest) {
    RouteTrace tr = start_trace("peer", source);
    tr.target = dest.to_string();
    tr.target_leaf = dest.zone;
    if (auto end = run_peer(tr, source, dest)) {
      tr.result = overlay_id(*end);
      tr.deliveries.push_back(*tr.result);
    }
    return tr;
  }

  // Two phases: greedy point routing reaches a candidate c, then c searches the
  // disk around q whose radius is c's own distance. Responders answer the
  // initiator directly, so those replies are not hops.
  RouteTrace nearest(const PeerName& source, const GeoPoint& q) {
    if (alive_count_ == 0) throw Error(Errc::EmptyNetwork, "no peers");
    RouteTrace tr = start_trace("nearest", source);
    tr.target = q.to_string();
    tr.target_leaf = oracle_.locate_leaf(q);
    auto end = run_point(tr, source, q);
    const RoutingTable& tc = table(end.at);
    double radius = distance(tc.owner.coordinate, q);
    Region disk_box(circle_bbox(q, std::max(radius, 1e-6)));
    std::vector<PeerName> responders;
    run_area(tr, end.at, disk_box, 1, tr.hops.empty() ? 0 : tr.hops.back().step, &responders);

    const Contact* best = &tc.owner;
    double best_km = radius;
    for (const auto& r : responders) {
      const Contact& c = table(r).owner;
      double km = distance(c.coordinate, q);
      if (km > radius) continue;
      if (km < best_km || (km == best_km && c.address < best->address)) {
        best = &c;
        best_km = km;
      }
    }
    tr.result = best->overlay_id;
    tr.result_km = best_km;
    return tr;
  }

  // -------------------------------------------------------------------------
  // Membership
  // -------------------------------------------------------------------------

  OverlayId join(const PeerName& name, const GeoPoint& coord, std::optional<PeerName> bootstrap = {}) {
    if (peers_.count(name)) throw Error(Errc::DuplicatePeer, name);
    if (name.empty() || name.find_first_of("/, \t\n") != std::string::npos) {
      throw Error(Errc::UnknownPeer, "invalid peer name '" + name + "'");
    }
    ++stats_.joins;
    if (alive_count_ == 0) {
      if (oracle_.peer_count() != 0) throw Error(Errc::BootstrapUnreachable, "every known peer has failed");
      if (bootstrap) throw Error(Errc::BootstrapUnreachable, *bootstrap);
      oracle_.add_peer(name, coord);
      peers_[name] = PeerState{build_table(oracle_, name), true};
      ++alive_count_;
      RouteTrace ev = start_trace("join", name);
      ev.target = coord.to_string();
      ev.result = overlay_id(name);
      emit(ev);
      after_join(name);
      return overlay_id(name);
    }

    PeerName b;
    if (bootstrap) {
      if (!has_peer(*bootstrap)) throw Error(Errc::BootstrapUnreachable, *bootstrap);
      b = *bootstrap;
    } else {
      auto alive = peers();
      b = alive[rng_.below(alive.size())];
    }

    RouteTrace ev = start_trace("join", b);
    ev.target = coord.to_string();
    ev.target_leaf = oracle_.locate_leaf(coord);
    auto end = run_point(ev, b, coord);
    const bool lost = !end.empty_zone && !table(end.at).leaf_zone.contains(coord);
    const bool hollow = end.empty_zone && !oracle_.at(end.empty_zone->zone).is_leaf();
    if ((lost || hollow) && !tasks_.empty()) {
      // A zone on the way has lost every known contact, or the empty zone
      // still has merges pending inside it. The queued work runs first, then
      // the request is sent again.
      drain();
      ev.target_leaf = oracle_.locate_leaf(coord);
      end = run_point(ev, b, coord);
    }
    const RoutingTable& tx = table(end.at);

    RoutingTable tj;
    if (end.empty_zone) {
      // Landing in a zone nobody occupies: the peer beside it hands over the
      // rows above and its own zone as the new sibling.
      const std::size_t r = end.empty_row;
      const SiblingEntry& e = *end.empty_zone;
      tj.rows.assign(tx.rows.begin(), tx.rows.begin() + static_cast<std::ptrdiff_t>(r));
      RoutingRow& row = tj.rows.back();
      std::erase_if(row.entries, [&](const SiblingEntry& s) { return s.zone == e.zone; });
      SiblingEntry mine{tx.row(r).self_zone_id, tx.row(r).self_zone, own_zone_contacts(tx, r), false};
      row.entries.insert(std::lower_bound(row.entries.begin(), row.entries.end(), mine,
                                          [](const SiblingEntry& x, const SiblingEntry& y) { return x.zone < y.zone; }),
                         mine);
      row.self_zone_id = e.zone;
      row.self_zone = e.boundary;
      tj.leaf_id = e.zone;
      tj.leaf_zone = e.boundary;
      // Epochs are bookkeeping the zone entry does not carry; the empty leaf's
      // counter is read from the reference tree.
      tj.epoch = oracle_.at(e.zone).epoch;
    } else {
      if (!tx.leaf_zone.contains(coord)) {
        throw Error(Errc::BootstrapUnreachable, "join toward " + coord.to_string() + " stopped at " + end.at);
      }
      tj.rows = tx.rows;
      tj.leaf_id = tx.leaf_id;
      tj.leaf_zone = tx.leaf_zone;
      tj.leaf_row = tx.leaf_row;
      tj.epoch = tx.epoch;
    }
    tj.owner = Contact{name, coord, {tj.leaf_id, name}};
    RoutingTable before = tj;
    detail::insert_contact(tj.leaf_row, tj.owner);

    ZoneId placed = oracle_.add_peer(name, coord);
    if (placed != tj.leaf_id) {
      throw Error(Errc::Inconsistent, name + " joined " + tj.leaf_id.to_string() + " but belongs to " + placed.to_string());
    }
    peers_[name] = PeerState{tj, true};
    ++alive_count_;

    std::uint64_t sent = 0;
    ZoneUpdate u;
    u.kind = UpdateKind::Join;
    u.zone = tj.leaf_id;
    u.members = {tj.owner};
    for (const auto& m : before.leaf_row) {
      deliver_update(m.address, u);
      ++sent;
    }
    sent += refresh_ancestors(before, tj, name, tj.depth());
    stats_.update_messages += sent;
    ev.result = tj.owner.overlay_id;
    ev.updates = sent;
    emit(ev);
    after_join(name);
    return overlay_id(name);
  }

  void leave(const PeerName& name) {
    if (!has_peer(name)) throw Error(Errc::UnknownPeer, name);
    ++stats_.leaves;
    RouteTrace ev = start_trace("leave", name);
    ev.target = name;
    RoutingTable t = table(name);
    ev.updates = depart(name, t, name);
    emit(ev);
  }

  // Silent failure: nobody is told. The first forward that hits the peer
  // records a MissingContact and queues the repair.
  void fail(const PeerName& name) {
    if (!has_peer(name)) throw Error(Errc::UnknownPeer, name);
    ++stats_.failures;
    peers_[name].alive = false;
    failed_.insert(name);
    --alive_count_;
    RouteTrace ev = start_trace("fail", name);
    ev.target = name;
    emit(ev);
  }

  // Heartbeat timeout: every failed peer not yet noticed gets a repair task.
  void detect_failures() {
    for (const auto& [name, st] : peers_) {
      if (!st.alive) queue_repair(name, std::nullopt);
    }
  }

  // Split of the invoker's leaf, run by its leader (smallest live name).
  ZoneUpdate coordinate_split(const PeerName& invoker) {
    if (!has_peer(invoker)) throw Error(Errc::UnknownPeer, invoker);
    RoutingTable t = table(invoker);
    if (leader_of(t) != invoker) throw Error(Errc::NotLeader, invoker + " does not lead " + t.leaf_id.to_string());
    if (t.leaf_row.size() <= policy_.split_threshold) {
      throw Error(Errc::NoSplitNeeded, t.leaf_id.to_string() + " holds " + std::to_string(t.leaf_row.size()) + " peers");
    }
    const ZoneId L = t.leaf_id;
    std::vector<PeerPoint> pts;
    for (const auto& m : t.leaf_row) pts.push_back({m.address, m.coordinate});
    SplitPlan plan = compute_split(t.leaf_zone, pts, policy_.k);

    SplitPlan check = compute_split(oracle_.at(L).region, oracle_.members(L), policy_.k);
    if (!same_plan(plan, check)) throw Error(Errc::Inconsistent, "split plan for " + L.to_string() + " disagrees with reference");
    SplitOutcome out = oracle_.apply_split(L, plan);

    ZoneUpdate u;
    u.kind = UpdateKind::Split;
    u.zone = L;
    u.epoch = t.epoch + 1;
    for (const auto& c : plan.children) {
      u.new_boundaries.push_back({c.label, c.region, c.is_remainder});
      for (const auto& m : c.members) {
        Contact nc{m.name, m.coord, {L.child(c.label), m.name}};
        u.members.push_back(nc);
        u.affected_peers.push_back({{L, m.name}, nc.overlay_id});
      }
    }
    if (!out.children.empty() && oracle_.at(out.children.front().id).epoch != u.epoch) {
      throw Error(Errc::Inconsistent, "epoch mismatch splitting " + L.to_string());
    }

    RouteTrace ev = start_trace("split", invoker);
    ev.target = L.to_string();
    std::uint64_t sent = 0;
    for (const auto& m : t.leaf_row) {
      deliver_update(m.address, u);
      if (m.address != invoker) ++sent;
    }
    sent += refresh_ancestors(t, table(invoker), invoker, t.depth());
    stats_.update_messages += sent;
    ++stats_.splits;
    ev.updates = sent;
    emit(ev);

    for (const auto& c : out.children) {
      if (c.peers.size() > policy_.split_threshold) schedule_split(c.id);
    }
    return u;
  }

  // Merge of the invoker's under-threshold leaf with its partner sibling.
  // Which sibling leaf is smallest is learned from the sibling leaders; the
  // simulator reads that answer from the reference tree.
  ZoneUpdate coordinate_merge(const PeerName& invoker) {
    if (!has_peer(invoker)) throw Error(Errc::UnknownPeer, invoker);
    const RoutingTable& t = table(invoker);
    if (leader_of(t) != invoker) throw Error(Errc::NotLeader, invoker + " does not lead " + t.leaf_id.to_string());
    const ZoneId L = t.leaf_id;
    if (t.leaf_row.size() >= policy_.merge_threshold) {
      throw Error(Errc::AboveThreshold, L.to_string() + " holds " + std::to_string(t.leaf_row.size()) + " peers");
    }
    auto partner = oracle_.merge_partner(L);
    if (!partner) throw Error(Errc::NoLeafSibling, L.to_string());
    if (split_pending_.count(*partner)) throw Error(Errc::PartnerBusy, partner->to_string() + " is splitting");
    return execute_merge(L, *partner, invoker);
  }

  void schedule_split(const ZoneId& zone) {
    const ZoneNode* n = oracle_.find(zone);
    if (!n) throw Error(Errc::UnknownZone, zone.to_string());
    split_pending_.insert(zone);
    tasks_.push_back({TaskKind::Split, zone, n->epoch, {}, {}, nullptr});
  }

  void schedule_merge(const ZoneId& zone) {
    const ZoneNode* n = oracle_.find(zone);
    if (!n) throw Error(Errc::UnknownZone, zone.to_string());
    tasks_.push_back({TaskKind::Merge, zone, n->epoch, {}, {}, nullptr});
  }

  bool idle() const { return tasks_.empty(); }

  // Runs queued split, merge and repair tasks until none remain.
  void drain() {
    std::size_t guard = 0;
    const std::size_t limit = 1000 + 50 * (peers_.size() + tasks_.size());
    while (!tasks_.empty()) {
      if (++guard > limit) throw Error(Errc::Inconsistent, "adaptation tasks do not settle");
      Task task = tasks_.front();
      tasks_.pop_front();
      switch (task.kind) {
        case TaskKind::Split: run_split_task(task); break;
        case TaskKind::Merge: run_merge_task(task); break;
        case TaskKind::Repair: run_repair_task(task); break;
        case TaskKind::Resend: run_resend_task(task); break;
      }
    }
  }

  // Full consistency check against the reference tree.
  VerifyReport verify(std::size_t samples = 100000, std::uint64_t seed = 1) const {
    std::map<PeerName, RoutingTable> tables;
    std::vector<PeerName> failed;
    for (const auto& [name, st] : peers_) {
      if (st.alive) {
        tables.emplace(name, st.table);
      } else {
        failed.push_back(name);
      }
    }
    return verify_state(oracle_, tables, failed, samples, seed);
  }

 private:
  enum class TaskKind { Split, Merge, Repair, Resend };

  // An update that could not enter `zone` because every contact `from` knew
  // for it had failed. It is sent again once the repairs have run.
  struct Parked {
    PeerName from;
    ZoneId side;  // the sender's zone at the same row as `zone`
    ZoneId zone;
    Region area;
    ZoneUpdate update;
  };

  struct Task {
    TaskKind kind;
    ZoneId zone;
    std::uint64_t epoch = 0;
    PeerName peer;                    // Repair: the failed peer
    std::optional<PeerName> noticer;  // Repair: who hit the dead contact
    std::shared_ptr<const Parked> parked;
  };

  struct PointEnd {
    PeerName at;
    std::optional<SiblingEntry> empty_zone;
    std::size_t empty_row = 0;
  };

  static std::string describe(const Region& r) {
    char buf[160];
    const Rect& o = r.outer();
    std::snprintf(buf, sizeof buf, "[%.6f,%.6f)x[%.6f,%.6f)", o.lat_min(), o.lat_max(), o.lon_min(), o.lon_max());
    std::string s = buf;
    if (!r.holes().empty()) s += " minus " + std::to_string(r.holes().size()) + " holes";
    return s;
  }

  static bool same_plan(const SplitPlan& a, const SplitPlan& b) {
    if (a.children.size() != b.children.size() || a.fallback != b.fallback) return false;
    for (std::size_t i = 0; i < a.children.size(); ++i) {
      const auto& x = a.children[i];
      const auto& y = b.children[i];
      if (x.label != y.label || !(x.region == y.region) || x.members.size() != y.members.size()) return false;
      for (std::size_t j = 0; j < x.members.size(); ++j) {
        if (x.members[j].name != y.members[j].name) return false;
      }
    }
    return true;
  }

  RouteTrace start_trace(const char* kind, const PeerName& source) {
    RouteTrace tr;
    tr.msg_id = next_msg_id();
    tr.kind = kind;
    tr.sim_step = step_;
    tr.source = table(source).owner.overlay_id;
    return tr;
  }

  void emit(const RouteTrace& ev) {
    if (sink_) sink_(ev);
  }

  PeerName leader_of(const RoutingTable& t) const {
    for (const auto& m : t.leaf_row) {
      if (has_peer(m.address)) return m.address;
    }
    return t.owner.address;
  }

  void after_join(const PeerName& name) {
    const ZoneId& leaf = oracle_.leaf_of(name);
    if (oracle_.at(leaf).peers.size() > policy_.split_threshold && !split_pending_.count(leaf)) schedule_split(leaf);
  }

  void queue_repair(const PeerName& dead, std::optional<PeerName> noticer) {
    if (repair_pending_.insert(dead).second) tasks_.push_back({TaskKind::Repair, {}, 0, dead, std::move(noticer), nullptr});
  }

  // Hands `f` from `from` to its target. A dead target is recorded as a
  // MissingContact; for sibling forwards the sender then promotes its next
  // backup and tries again. Returns the peer that received the message.
  std::optional<PeerName> transmit(RouteTrace& tr, const PeerName& from, Forward f, std::uint64_t hop_step) {
    for (;;) {
      if (has_peer(f.to.address)) {
        const RoutingTable& a = table(from);
        const RoutingTable& b = table(f.to.address);
        tr.hops.push_back({a.owner.overlay_id, b.owner.overlay_id, a.owner.coordinate, b.owner.coordinate, f.level, hop_step});
        return f.to.address;
      }
      ++stats_.missing_contacts;
      tr.errors.push_back("MissingContact:" + f.to.address + "@" + f.zone.to_string());
      queue_repair(f.to.address, from);
      RoutingTable& st = peers_.at(from).table;
      if (f.row == 0 || f.row > st.depth()) return std::nullopt;
      SiblingEntry* e = st.row(f.row).entry(f.zone);
      if (!e) return std::nullopt;
      detail::erase_contact(e->contacts, f.to.address);
      if (e->contacts.empty()) {
        e->contact_missing = true;
        return std::nullopt;
      }
      f.to = e->designated();
    }
  }

  std::size_t hop_limit() const { return 64 + 4 * peers_.size(); }

  void run_area(RouteTrace& tr, const PeerName& start, const Region& area, std::size_t level,
                std::uint64_t step0, std::vector<PeerName>* reached, const ZoneUpdate* carry = nullptr) {
    struct Pending {
      PeerName at;
      std::size_t level;
      std::uint64_t step;
    };
    std::deque<Pending> q{{start, level, step0}};
    std::size_t handled = 0;
    while (!q.empty()) {
      Pending cur = std::move(q.front());
      q.pop_front();
      if (++handled > hop_limit()) {
        tr.errors.push_back("HopLimit");
        return;
      }
      AreaDecision d = route_to_all_peers(table(cur.at), area, cur.level);
      if (d.deliver_local) {
        tr.deliveries.push_back(table(cur.at).owner.overlay_id);
        if (reached) reached->push_back(cur.at);
      }
      for (const auto& m : d.missing) {
        tr.errors.push_back("MissingContact:@" + m.zone.to_string());
        if (carry) reroute(cur.at, m.zone, area, *carry);
      }
      for (const auto& f : d.forwards) {
        if (auto to = transmit(tr, cur.at, f, cur.step + 1)) {
          q.push_back({*to, f.level, cur.step + 1});
        } else if (carry && f.row <= table(cur.at).depth()) {
          reroute(cur.at, f.zone, area, *carry);
        }
      }
    }
  }

  PointEnd run_point(RouteTrace& tr, const PeerName& start, const GeoPoint& p) {
    PeerName at = start;
    std::size_t level = 1;
    std::uint64_t s = 0;
    for (std::size_t guard = 0;; ++guard) {
      if (guard > hop_limit()) {
        tr.errors.push_back("HopLimit");
        return {at, {}, 0};
      }
      PointDecision d = route_to_point(table(at), p, level);
      if (d.missing) {
        tr.errors.push_back("MissingContact:@" + d.missing->zone.to_string());
        return {at, {}, 0};
      }
      if (d.deliver_local) return {at, d.empty_zone, d.empty_row};
      auto to = transmit(tr, at, *d.forward, s + 1);
      if (!to) {
        if (d.forward->level == table(at).depth() + 2) return {at, {}, 0};
        continue;
      }
      at = *to;
      level = d.forward->level;
      ++s;
    }
  }

  std::optional<PeerName> run_peer(RouteTrace& tr, const PeerName& start, const OverlayId& dest) {
    PeerName at = start;
    std::uint64_t s = 0;
    for (std::size_t guard = 0;; ++guard) {
      if (guard > hop_limit()) {
        tr.errors.push_back("HopLimit");
        return std::nullopt;
      }
      PeerDecision d;
      try {
        d = route_to_peer(table(at), dest);
      } catch (const Error& e) {
        if (e.code() != Errc::NoSuchPeer) throw;
        tr.errors.push_back("NoSuchPeer:" + dest.to_string());
        return std::nullopt;
      }
      if (d.missing) {
        tr.errors.push_back("MissingContact:@" + d.missing->zone.to_string());
        return std::nullopt;
      }
      if (d.deliver_local) return at;
      auto to = transmit(tr, at, *d.forward, s + 1);
      if (!to) {
        if (d.forward->level == table(at).depth() + 2) return std::nullopt;
        continue;
      }
      at = *to;
      ++s;
    }
  }

  // Applies an update at one peer. Failed peers are kept current for leaf-level
  // notices so a later repair can act on their behalf.
  void deliver_update(const PeerName& to, const ZoneUpdate& u) {
    auto it = peers_.find(to);
    if (it == peers_.end()) return;
    try {
      it->second.table = apply_zone_update(std::move(it->second.table), u);
    } catch (const Error& e) {
      if (e.code() != Errc::StaleUpdate) throw;
      ++stats_.stale_updates;
    }
  }

  // Delivers `u` to every peer of sibling zone `s` (as seen from `from`),
  // entering at its designated contact. Returns messages sent.
  std::uint64_t disseminate(const ZoneUpdate& u, const PeerName& from, const SiblingEntry& s) {
    update_failed_in(s.zone, u);
    if (!s.populated()) {
      return s.contact_missing ? reroute(from, s.zone, s.boundary, u) : 0;
    }
    return send_into(u, from, s.zone, s.designated(), s.boundary);
  }

  std::uint64_t send_into(const ZoneUpdate& u, const PeerName& from, const ZoneId& zone, const Contact& to,
                          const Region& area) {
    RouteTrace scratch;
    std::vector<PeerName> reached;
    const std::size_t r = zone.depth();
    std::uint64_t sent = 0;
    if (auto entry = transmit(scratch, from, Forward{to, r + 1, r, zone}, 1)) {
      run_area(scratch, *entry, area, r + 1, 1, &reached, &u);
    } else {
      sent += reroute(from, zone, area, u);
    }
    for (const auto& p : reached) deliver_update(p, u);
    return sent + scratch.hops.size();
  }

  // Every contact `from` knew for `zone` has failed. Another way in is looked
  // for at once; failing that, the update waits for the repairs.
  std::uint64_t reroute(const PeerName& from, const ZoneId& zone, const Region& area, const ZoneUpdate& u) {
    std::uint64_t sent = 0;
    SiblingEntry* e = detail::find_entry(peers_.at(from).table, zone);
    if (e) {
      if (auto x = rediscover(from, zone, e->boundary, sent)) return sent + send_into(u, from, zone, table(*x).owner, area);
    }
    park(from, zone, area, u);
    return sent;
  }

  void park(const PeerName& from, const ZoneId& zone, const Region& area, const ZoneUpdate& u) {
    Task t{TaskKind::Resend, zone, 0, from, std::nullopt, nullptr};
    const RoutingTable& tf = table(from);
    const ZoneId side = zone.depth() <= tf.depth() ? tf.row(zone.depth()).self_zone_id : tf.leaf_id;
    t.parked = std::make_shared<const Parked>(Parked{from, side, zone, area, u});
    tasks_.push_back(std::move(t));
  }

  void run_resend_task(const Task& task) {
    Parked p = *task.parked;
    if (!has_peer(p.from)) {
      // The sender is gone; a live peer of its zone holds the same entry.
      const ZoneNode* n = oracle_.find(p.side);
      auto sub = n ? smallest_alive(oracle_.subtree_peers(*n)) : std::nullopt;
      p.from = sub ? *sub : PeerName{};
    }
    if (!p.from.empty() && p.update.contacts) {
      // Later notices about the same zone may have passed the sender since;
      // what it knows now replaces the list it was holding.
      RoutingTable& tf = peers_.at(p.from).table;
      const std::size_t d = p.update.zone.depth();
      if (SiblingEntry* known = detail::find_entry(tf, p.update.zone)) {
        p.update.contacts = known->contacts;
      } else if (d >= 1 && d <= tf.depth() && tf.row(d).self_zone_id == p.update.zone) {
        p.update.contacts = own_zone_contacts(tf, d);
      }
    }
    SiblingEntry* e = p.from.empty() ? nullptr : detail::find_entry(peers_.at(p.from).table, p.zone);
    if (e && e->populated()) {
      stats_.update_messages += send_into(p.update, p.from, p.zone, e->designated(), p.area);
      return;
    }
    if (e && !e->contact_missing) return;  // known to be empty by now
    // The repairs may still bring fresh contacts.
    if (repairs_queued()) {
      tasks_.push_back(task);
      return;
    }
    if (e) {
      // Both sides have lost each other; a contact is found by routing in
      // from outside.
      std::uint64_t sent = 0;
      auto x = rediscover(p.from, p.zone, e->boundary, sent);
      stats_.update_messages += sent;
      if (x) {
        stats_.update_messages += send_into(p.update, p.from, p.zone, table(*x).owner, p.area);
        answer(p.from, p.zone, *x);
        return;
      }
    }
    // Nobody left who could address the zone. The update still reaches its
    // peers, as a retransmission through the zone's own members would.
    const ZoneNode* z = oracle_.find(p.zone);
    auto in = z ? smallest_alive(oracle_.subtree_peers(*z)) : std::nullopt;
    if (!in) return;
    RouteTrace scratch;
    std::vector<PeerName> reached;
    run_area(scratch, *in, p.area, p.zone.depth() + 1, 0, &reached, &p.update);
    for (const auto& q : reached) deliver_update(q, p.update);
    stats_.update_messages += scratch.hops.size() + 1;
  }

  // The contact `x` found inside `zone` answers with that zone's contacts for
  // everyone in the asking peer's zone.
  void answer(const PeerName& from, const ZoneId& zone, const PeerName& x) {
    const std::size_t d = zone.depth();
    ZoneUpdate back;
    back.kind = UpdateKind::Refresh;
    back.zone = zone;
    back.contacts = own_zone_contacts(table(x), d);
    const RoutingRow& row = table(from).row(d);
    const ZoneId mine = row.self_zone_id;
    const Region area = row.self_zone;
    RouteTrace scratch;
    std::vector<PeerName> reached;
    run_area(scratch, from, area, d + 1, 0, &reached, &back);
    for (const auto& q : reached) deliver_update(q, back);
    update_failed_in(mine, back);
    stats_.update_messages += scratch.hops.size() + 1;
  }

  // A live peer inside `zone`, found by asking other siblings of the sender
  // to route toward a point of the zone.
  std::optional<PeerName> rediscover(const PeerName& from, const ZoneId& zone, const Region& boundary,
                                     std::uint64_t& sent) {
    auto w = boundary.witness(boundary.outer());
    if (!w) return std::nullopt;
    const GeoPoint target = w->center();
    const RoutingTable t = table(from);
    for (std::size_t r = std::min(zone.depth(), t.depth()); r >= 1; --r) {
      for (const auto& e : t.row(r).entries) {
        if (e.zone == zone || !e.populated()) continue;
        RouteTrace scratch;
        auto via = transmit(scratch, from, Forward{e.designated(), r + 1, r, e.zone}, 1);
        if (!via) continue;
        auto end = run_point(scratch, *via, target);
        sent += scratch.hops.size();
        const ZoneId& got = table(end.at).leaf_id;
        if (!end.empty_zone && (got == zone || zone.is_ancestor_of(got))) return end.at;
      }
    }
    return std::nullopt;
  }

  bool repairs_queued() const { return !repair_pending_.empty(); }

  // Failed peers take no part in routing, but their tables are kept as they
  // would be had they stayed, so a later repair acts on current knowledge.
  void update_failed_in(const ZoneId& zone, const ZoneUpdate& u) {
    for (const auto& name : failed_) {
      if (zone.contains(oracle_.leaf_of(name))) deliver_update(name, u);
    }
  }

  // Tells the referrers of every ancestor zone (depth `top` up to 1) whose
  // contact list differs between the two views of the same peer.
  std::uint64_t refresh_ancestors(const RoutingTable& before, const RoutingTable& after, const PeerName& from,
                                  std::size_t top) {
    std::uint64_t sent = 0;
    for (std::size_t r = std::min({top, before.depth(), after.depth()}); r >= 1; --r) {
      auto was = own_zone_contacts(before, r);
      auto now = own_zone_contacts(after, r);
      if (was == now) continue;
      ZoneUpdate u;
      u.kind = UpdateKind::Refresh;
      u.zone = after.row(r).self_zone_id;
      u.contacts = now;
      for (const auto& s : after.row(r).entries) sent += disseminate(u, from, s);
    }
    return sent;
  }

  // Leave protocol on behalf of `name`, whose table is `t`; messages leave
  // from `sender`. Used for graceful leaves and for failure repair.
  std::uint64_t depart(const PeerName& name, const RoutingTable& t, const PeerName& sender) {
    const ZoneId L = t.leaf_id;
    const Contact me = t.owner;
    std::uint64_t sent = 0;

    ZoneUpdate u;
    u.kind = UpdateKind::Leave;
    u.zone = L;
    u.members = {me};
    for (const auto& m : t.leaf_row) {
      if (m.address == name) continue;
      deliver_update(m.address, u);
      ++sent;
    }

    RoutingTable after = t;
    detail::erase_contact(after.leaf_row, name);
    for (std::size_t r = t.depth(); r >= 1; --r) {
      auto was = own_zone_contacts(t, r);
      auto now = own_zone_contacts(after, r);
      if (was == now) continue;
      ZoneUpdate n;
      n.kind = UpdateKind::Leave;
      n.zone = t.row(r).self_zone_id;
      n.members = {me};
      n.contacts = now;
      for (const auto& s : t.row(r).entries) sent += disseminate(n, sender, s);
    }

    oracle_.remove_peer(name);
    if (peers_.at(name).alive) --alive_count_;
    peers_.erase(name);
    failed_.erase(name);
    repair_pending_.erase(name);
    stats_.update_messages += sent;

    const ZoneNode* leaf = oracle_.find(L);
    if (leaf && leaf->is_leaf() && !L.is_root() && leaf->peers.size() < policy_.merge_threshold) schedule_merge(L);
    return sent;
  }

  ZoneUpdate execute_merge(const ZoneId& L, const ZoneId& M, const std::optional<PeerName>& coordinator) {
    const std::size_t D = L.depth();
    const ZoneId P = L.parent();
    if (!coordinator) {
      // Nobody lives in the parent, so no table mentions either zone.
      MergeOutcome out = oracle_.merge_with(L, M);
      ++stats_.merges;
      ZoneUpdate u;
      u.kind = UpdateKind::Merge;
      u.zone = L;
      u.partner = M;
      u.result = out.merged;
      u.collapsed = out.collapsed;
      u.new_boundaries = {{out.merged.label(), out.region, out.merged.label() == 0 && !out.collapsed}};
      u.epoch = oracle_.at(out.merged).epoch;
      after_merge(out.merged);
      return u;
    }

    const PeerName c = *coordinator;
    const RoutingTable tc = table(c);
    if (tc.depth() < D || tc.leaf_id.prefix(D - 1) != P) {
      throw Error(Errc::Inconsistent, c + " cannot coordinate a merge in " + P.to_string());
    }
    struct Sib {
      ZoneId id;
      Region region;
      std::vector<Contact> contacts;
    };
    std::vector<Sib> sibs;
    const RoutingRow& row = tc.row(D);
    sibs.push_back({row.self_zone_id, row.self_zone, own_zone_contacts(tc, D)});
    for (const auto& e : row.entries) sibs.push_back({e.zone, e.boundary, e.contacts});
    std::sort(sibs.begin(), sibs.end(), [](const Sib& a, const Sib& b) { return a.id < b.id; });

    const Sib* a = nullptr;
    const Sib* b = nullptr;
    std::vector<Region> others;
    for (const auto& s : sibs) {
      if (s.id == L) {
        a = &s;
      } else if (s.id == M) {
        b = &s;
      } else {
        others.push_back(s.region);
      }
    }
    if (!a || !b) throw Error(Errc::UnknownZone, L.to_string() + " or " + M.to_string() + " not known to " + c);

    std::vector<Contact> members;
    for (const Sib* s : {a, b}) {
      if (tc.leaf_id == s->id) {
        members.insert(members.end(), tc.leaf_row.begin(), tc.leaf_row.end());
      } else if (!s->contacts.empty()) {
        // The zone's leader reports its leaf row.
        const auto& lr = table(s->contacts.front().address).leaf_row;
        members.insert(members.end(), lr.begin(), lr.end());
      }
    }

    const bool collapsed = sibs.size() == 2;
    const bool remainder = L.label() == 0 || M.label() == 0;
    const ZoneId result = collapsed ? P : P.child(remainder ? 0 : M.label());
    const Region parent_region = tc.self_zone(D - 1);
    const Region region = collapsed ? parent_region : merge_region(parent_region, a->region, b->region, others);

    MergeOutcome out = oracle_.merge_with(L, M);
    if (out.merged != result || !(out.region == region)) {
      throw Error(Errc::Inconsistent, "merge of " + L.to_string() + " and " + M.to_string() + " disagrees with reference");
    }

    ZoneUpdate u;
    u.kind = UpdateKind::Merge;
    u.zone = L;
    u.partner = M;
    u.result = result;
    u.collapsed = collapsed;
    u.new_boundaries = {{result.label(), region, remainder && !collapsed}};
    u.epoch = oracle_.at(result).epoch;
    for (auto& m : members) {
      OverlayId old = m.overlay_id;
      m.overlay_id.zone = result;
      u.affected_peers.push_back({old, m.overlay_id});
    }
    std::sort(members.begin(), members.end(), name_less);
    u.members = members;
    u.contacts = smallest_contacts(members);

    RouteTrace ev = start_trace("merge", c);
    ev.target = L.to_string() + "+" + M.to_string();
    std::uint64_t sent = 0;
    for (const auto& m : members) {
      deliver_update(m.address, u);
      if (m.address != c) ++sent;
    }
    if (!collapsed) {
      for (const auto& s : sibs) {
        if (s.id == L || s.id == M || s.contacts.empty()) continue;
        if (s.id.contains(tc.leaf_id)) {
          RouteTrace scratch;
          std::vector<PeerName> reached;
          run_area(scratch, c, s.region, D + 1, 0, &reached, &u);
          for (const auto& p : reached) deliver_update(p, u);
          update_failed_in(s.id, u);
          sent += scratch.hops.size();
        } else {
          sent += disseminate(u, c, SiblingEntry{s.id, s.region, s.contacts, false});
        }
      }
    }
    sent += refresh_ancestors(tc, table(c), c, D - 1);
    stats_.update_messages += sent;
    ++stats_.merges;
    ev.updates = sent;
    emit(ev);
    after_merge(result);
    return u;
  }

  void after_merge(const ZoneId& merged) {
    const ZoneNode& n = oracle_.at(merged);
    if (n.peers.size() > policy_.split_threshold) {
      schedule_split(merged);
    } else if (n.peers.size() < policy_.merge_threshold && !merged.is_root()) {
      schedule_merge(merged);
    }
  }

  std::optional<PeerName> smallest_alive(const std::vector<PeerName>& names) const {
    for (const auto& n : names) {
      if (has_peer(n)) return n;
    }
    return std::nullopt;
  }

  void run_split_task(const Task& task) {
    split_pending_.erase(task.zone);
    const ZoneNode* n = oracle_.find(task.zone);
    if (!n || !n->is_leaf() || n->epoch != task.epoch) {
      ++stats_.suppressed_tasks;
      return;
    }
    if (n->peers.size() <= policy_.split_threshold) return;
    auto leader = smallest_alive(n->peers);
    if (!leader) return;
    try {
      coordinate_split(*leader);
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateCluster) throw;
      ++stats_.degenerate_splits;
    }
  }

  void run_merge_task(const Task& task) {
    const ZoneNode* n = oracle_.find(task.zone);
    if (!n || !n->is_leaf() || n->epoch != task.epoch) {
      ++stats_.suppressed_tasks;
      return;
    }
    if (n->peers.size() >= policy_.merge_threshold || task.zone.is_root()) return;
    auto partner = oracle_.merge_partner(task.zone);
    if (!partner) {
      ++stats_.no_leaf_sibling;
      return;
    }
    if (split_pending_.count(*partner)) {
      ++stats_.partner_busy;
      tasks_.push_back(task);
      return;
    }
    // A failed member that someone already noticed may have been dropped from
    // the coordinator's view; its repair goes first.
    for (const ZoneId& z : {task.zone, *partner}) {
      for (const auto& p : oracle_.at(z).peers) {
        if (repair_pending_.count(p)) {
          tasks_.push_back(task);
          return;
        }
      }
    }
    std::optional<PeerName> c = smallest_alive(n->peers);
    if (!c) c = smallest_alive(oracle_.at(*partner).peers);
    if (!c) {
      auto inside = oracle_.subtree_peers(oracle_.at(task.zone.parent()));
      c = smallest_alive(inside);
      if (!c && !inside.empty()) {
        // Only failed peers remain; asking them is how they get noticed.
        for (const auto& p : inside) queue_repair(p, std::nullopt);
        tasks_.push_back(task);
        return;
      }
    }
    execute_merge(task.zone, *partner, c);
  }

  void run_repair_task(const Task& task) {
    repair_pending_.erase(task.peer);
    auto it = peers_.find(task.peer);
    if (it == peers_.end() || it->second.alive) return;
    ++stats_.repairs;
    // The failed peer's table, kept current as bookkeeping, stands for what
    // its leaf-mates reconstruct between them.
    const ZoneId& leaf = oracle_.leaf_of(task.peer);
    std::optional<PeerName> mate = smallest_alive(oracle_.at(leaf).peers);
    RoutingTable t = it->second.table;
    // Without a mate the notices go out under the failed peer's own entries;
    // the trace names whoever noticed.
    PeerName sender = mate ? *mate : task.peer;
    PeerName shown = mate ? *mate : (task.noticer && has_peer(*task.noticer) ? *task.noticer : task.peer);
    RouteTrace ev = start_trace("fail", shown);
    ev.kind = "repair";
    ev.target = task.peer;
    ev.updates = depart(task.peer, t, sender);
    emit(ev);
  }

  AdaptationPolicy policy_;
  Rng rng_;
  ZoneTree oracle_;
  std::map<PeerName, PeerState> peers_;
  std::size_t alive_count_ = 0;
  std::deque<Task> tasks_;
  std::set<ZoneId> split_pending_;
  std::set<PeerName> repair_pending_;
  std::set<PeerName> failed_;
  MembershipStats stats_;
  std::function<void(const RouteTrace&)> sink_;
  std::uint64_t step_ = 0;
  std::uint64_t msg_counter_ = 1;
  std::uint64_t name_counter_ = 0;
};

}  // namespace geoverlay
