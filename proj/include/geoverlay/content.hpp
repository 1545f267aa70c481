#pragma once

#include <cstdint>
#include <list>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "geoverlay/error.hpp"
#include "geoverlay/membership.hpp"
#include "geoverlay/trace.hpp"

namespace geoverlay {

inline constexpr std::size_t kDefaultStoreCapacity = 64;

struct ContentDescriptor {
  std::string content_id;
  PeerName source;
  std::uint32_t fragments = 1;
};

// Fragment cache of one peer, least-recently-served first out.
class ReplicaStore {
 public:
  explicit ReplicaStore(std::size_t capacity = kDefaultStoreCapacity) : capacity_(capacity) {}

  using Key = std::pair<std::string, std::uint32_t>;

  bool has(const std::string& content, std::uint32_t fragment) const { return index_.count({content, fragment}) != 0; }

  // Marks a fragment as just served.
  void touch(const std::string& content, std::uint32_t fragment) {
    auto it = index_.find({content, fragment});
    if (it != index_.end()) order_.splice(order_.end(), order_, it->second);
  }

  void store(const std::string& content, std::uint32_t fragment) {
    if (capacity_ == 0) return;
    Key k{content, fragment};
    if (auto it = index_.find(k); it != index_.end()) {
      order_.splice(order_.end(), order_, it->second);
      return;
    }
    if (order_.size() == capacity_) {
      index_.erase(order_.front());
      order_.pop_front();
    }
    order_.push_back(k);
    index_.emplace(k, std::prev(order_.end()));
  }

  std::size_t size() const { return order_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::list<Key> order_;
  std::map<Key, std::list<Key>::iterator> index_;
};

struct DeliveryTree {
  PeerName source;
  std::map<PeerName, PeerName> parent;       // child -> parent
  std::map<PeerName, std::size_t> fanout;    // in-tree children per node
  std::vector<PeerName> receivers;           // reached receivers
  std::vector<std::string> errors;           // NoSuchPeer per unreachable receiver
  RouteTrace trace;                          // one hop per tree edge; link_cost() is the tree cost
  double star_km = 0.0;                      // source unicasting to each receiver directly
};

struct ContentResult {
  RouteTrace trace;
  std::vector<PeerName> servers;  // per fragment
};

class ContentShare {
 public:
  explicit ContentShare(Network& net, std::size_t capacity = kDefaultStoreCapacity) : net_(net), capacity_(capacity) {}

  ReplicaStore& store(const PeerName& peer) { return stores_.try_emplace(peer, capacity_).first->second; }

  bool holds(const PeerName& peer, const std::string& content, std::uint32_t fragment) const {
    auto it = stores_.find(peer);
    return it != stores_.end() && it->second.has(content, fragment);
  }

  // Union of the source's routes to every receiver. Routes from one source
  // pick the same designated contacts, so they coincide up to where they part.
  DeliveryTree build_delivery_tree(const PeerName& source, std::vector<PeerName> receivers) {
    if (!net_.has_peer(source)) throw Error(Errc::NoSuchPeer, source);
    std::sort(receivers.begin(), receivers.end());
    receivers.erase(std::unique(receivers.begin(), receivers.end()), receivers.end());

    DeliveryTree tree;
    tree.source = source;
    const GeoPoint& src = net_.table(source).owner.coordinate;
    RouteTrace& tr = tree.trace;
    tr.msg_id = net_.next_msg_id();
    tr.kind = "multicast";
    tr.sim_step = net_.step();
    tr.source = net_.overlay_id(source);
    tr.target = std::to_string(receivers.size()) + " receivers";
    std::set<std::pair<PeerName, PeerName>> edges;

    for (const auto& r : receivers) {
      if (!net_.has_peer(r)) {
        tree.errors.push_back("NoSuchPeer:" + r);
        continue;
      }
      RouteTrace leg = net_.route_peer(source, net_.overlay_id(r));
      if (!leg.result || leg.result->peer != r) {
        tree.errors.push_back("NoSuchPeer:" + r);
        continue;
      }
      for (const auto& h : leg.hops) {
        if (!edges.insert({h.from.peer, h.to.peer}).second) continue;
        tree.parent[h.to.peer] = h.from.peer;
        ++tree.fanout[h.from.peer];
        tr.hops.push_back(h);
      }
      for (const auto& e : leg.errors) tr.errors.push_back(e);
      tree.receivers.push_back(r);
      tr.deliveries.push_back(*leg.result);
      tree.star_km += distance(src, net_.table(r).owner.coordinate);
    }
    for (const auto& e : tree.errors) tr.errors.push_back(e);
    tr.star_km = tree.star_km;
    return tree;
  }

  // The source's route toward the requester is walked from the requester end:
  // the first peer on it holding a fragment serves it, and every peer between
  // the server and the requester (requester included) keeps a copy.
  ContentResult request(const PeerName& requester, const ContentDescriptor& d) {
    if (d.fragments == 0) throw Error(Errc::ParseError, "content " + d.content_id + " has no fragments");
    if (!net_.has_peer(d.source)) throw Error(Errc::NoSuchPeer, "content source " + d.source);
    if (!net_.has_peer(requester)) throw Error(Errc::UnknownPeer, requester);

    RouteTrace route = net_.route_peer(d.source, net_.overlay_id(requester));
    ContentResult res;
    RouteTrace& tr = res.trace;
    tr.msg_id = route.msg_id;
    tr.kind = "content";
    tr.sim_step = net_.step();
    tr.source = net_.overlay_id(requester);
    tr.target = d.content_id + "@" + d.source;
    tr.errors = route.errors;
    tr.fragments = d.fragments;
    if (!route.result || route.result->peer != requester) {
      tr.errors.push_back("NoSuchPeer:" + requester);
      return res;
    }

    // path[0] = source ... path.back() = requester
    std::vector<PeerName> path{d.source};
    for (const auto& h : route.hops) path.push_back(h.to.peer);

    std::size_t outermost = path.size() - 1;
    for (std::uint32_t f = 0; f < d.fragments; ++f) {
      std::size_t i = path.size() - 1;
      while (i > 0 && !holds(path[i], d.content_id, f)) --i;
      if (i == 0) {
        ++tr.source_fragments;
      } else {
        store(path[i]).touch(d.content_id, f);
      }
      res.servers.push_back(path[i]);
      outermost = std::min(outermost, i);
      for (std::size_t j = i + 1; j < path.size(); ++j) store(path[j]).store(d.content_id, f);
    }
    // The transfer follows the route from the outermost server inward.
    for (std::size_t h = outermost; h < route.hops.size(); ++h) tr.hops.push_back(route.hops[h]);
    tr.result = net_.overlay_id(path[outermost]);
    tr.deliveries.push_back(net_.overlay_id(requester));
    return res;
  }

 private:
  Network& net_;
  std::size_t capacity_;
  std::map<PeerName, ReplicaStore> stores_;
};

}  // namespace geoverlay
