#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geoverlay/geo.hpp"

namespace geoverlay {

struct Hop {
  OverlayId from;
  OverlayId to;
  GeoPoint from_coord;
  GeoPoint to_coord;
  std::size_t level = 0;
  std::uint64_t step = 0;  // hop depth from the originator (synchronous step model)

  double km() const { return distance(from_coord, to_coord); }

  friend bool operator==(const Hop&, const Hop&) = default;
};

// Per-message record of every simulated forward.
struct RouteTrace {
  std::uint64_t msg_id = 0;
  std::string kind;             // area | point | peer | nearest | multicast | content | join | leave | fail | split | merge
  std::uint64_t sim_step = 0;   // scenario step at which the message was issued
  OverlayId source;
  std::string target;           // human-readable target descriptor
  std::optional<ZoneId> target_leaf;  // leaf holding the target point or peer, when defined
  std::vector<Hop> hops;
  std::vector<OverlayId> deliveries;
  std::vector<std::string> errors;    // "MissingContact:<peer>@<zone>", "NoSuchPeer:<id>", ...
  std::optional<OverlayId> result;    // final recipient / nearest peer / serving peer
  std::optional<double> result_km;
  std::optional<double> star_km;      // unicast-star baseline for multicast traces
  std::uint64_t fragments = 0;        // content traces: fragments requested
  std::uint64_t source_fragments = 0; // content traces: fragments served by the origin
  std::uint64_t updates = 0;          // membership traces: update messages sent

  friend bool operator==(const RouteTrace&, const RouteTrace&) = default;
};

// Sum of great-circle hop lengths (for multicast, over the forwarding forest).
inline double link_cost(const RouteTrace& t) {
  double km = 0.0;
  for (const auto& h : t.hops) km += h.km();
  return km;
}

// Per-hop latency estimate: propagation at 200,000 km/s plus 5 ms forwarding.
inline double latency_ms(const RouteTrace& t) {
  double ms = 0.0;
  for (const auto& h : t.hops) ms += h.km() / 200.0 + 5.0;
  return ms;
}

}  // namespace geoverlay
