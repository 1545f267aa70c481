#pragma once

// Shared fixtures for the unit tests.

#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "geoverlay/error.hpp"
#include "geoverlay/rng.hpp"
#include "geoverlay/zone_tree.hpp"

namespace geoverlay::test {

template <typename F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Inconsistent;
}

// Four peers around Vienna, four in Japan.
inline std::vector<PeerPoint> two_regions_peers() {
  return {{"h", GeoPoint(48.20, 16.37)},  {"k", GeoPoint(48.15, 17.10)}, {"a", GeoPoint(50.08, 14.43)},
          {"c", GeoPoint(47.50, 19.04)},  {"q", GeoPoint(35.68, 139.69)}, {"r", GeoPoint(35.44, 139.64)},
          {"b", GeoPoint(34.69, 135.50)}, {"d", GeoPoint(43.06, 141.35)}};
}

inline AdaptationPolicy two_regions_policy() { return {4, 1, 2}; }

inline std::string peer_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "p%04zu", i);
  return buf;
}

// n peers scattered with a normal spread around `centre`, named from `first`.
inline std::vector<PeerPoint> cloud(Rng& rng, GeoPoint centre, double spread, std::size_t n, std::size_t first) {
  std::vector<PeerPoint> out;
  for (std::size_t i = 0; i < n; ++i) {
    double lat = std::clamp(centre.lat() + spread * rng.normal(), -89.0, 89.0);
    double lon = std::clamp(centre.lon() + spread * rng.normal(), -179.0, 179.0);
    out.push_back({peer_name(first + i), GeoPoint(lat, lon)});
  }
  return out;
}

inline GeoPoint random_point(Rng& rng) { return GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180)); }

}  // namespace geoverlay::test
