#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geoverlay/error.hpp"

namespace geoverlay {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kLatMin = -90.0;
inline constexpr double kLatMax = 90.0;
inline constexpr double kLonMin = -180.0;
inline constexpr double kLonMax = 180.0;
// Length of one degree of arc on the sphere.
inline constexpr double kKmPerDegree = kEarthRadiusKm * M_PI / 180.0;

inline double deg2rad(double deg) { return deg * M_PI / 180.0; }

// ---------------------------------------------------------------------------
// GeoPoint
// ---------------------------------------------------------------------------

class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat, double lon) : lat_(lat), lon_(lon) {
    if (!valid(lat, lon)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "(%.9g, %.9g) outside [-90,90] x [-180,180)", lat, lon);
      throw Error(Errc::InvalidCoordinate, buf);
    }
  }

  static bool valid(double lat, double lon) {
    return lat >= kLatMin && lat <= kLatMax && lon >= kLonMin && lon < kLonMax;
  }

  double lat() const { return lat_; }
  double lon() const { return lon_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

  // "lat,lon" with six decimals.
  std::string to_string() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", lat_, lon_);
    return buf;
  }

  static GeoPoint parse(std::string_view text) {
    auto comma = text.find(',');
    if (comma == std::string_view::npos) {
      throw Error(Errc::ParseError, "coordinate '" + std::string(text) + "' lacks a comma");
    }
    return GeoPoint(parse_double(text.substr(0, comma)), parse_double(text.substr(comma + 1)));
  }

  static double parse_double(std::string_view text) {
    std::string s(text);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
    if (s.empty() || end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
      throw Error(Errc::ParseError, "not a number: '" + s + "'");
    }
    return v;
  }

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

// Great-circle distance on a sphere of radius kEarthRadiusKm (haversine form).
inline double distance(const GeoPoint& a, const GeoPoint& b) {
  if (a == b) return 0.0;
  double phi1 = deg2rad(a.lat());
  double phi2 = deg2rad(b.lat());
  double dphi = phi2 - phi1;
  double dlambda = deg2rad(b.lon() - a.lon());
  double s1 = std::sin(dphi / 2.0);
  double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

// ---------------------------------------------------------------------------
// Rect
// ---------------------------------------------------------------------------

// Axis-parallel lat/lon rectangle, half-open on its upper edges except where
// an upper edge lies on the universe boundary (+90 or +180).
class Rect {
 public:
  Rect() : Rect(universe()) {}
  Rect(double lat_min, double lat_max, double lon_min, double lon_max)
      : lat_min_(lat_min), lat_max_(lat_max), lon_min_(lon_min), lon_max_(lon_max) {
    if (!(lat_min >= kLatMin && lat_max <= kLatMax && lon_min >= kLonMin && lon_max <= kLonMax) ||
        !(lat_min < lat_max) || !(lon_min < lon_max)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%.9g,%.9g) x [%.9g,%.9g) is empty or outside the universe",
                    lat_min, lat_max, lon_min, lon_max);
      throw Error(Errc::InvalidRect, buf);
    }
  }

  static Rect universe() {
    Rect r(Raw{});
    r.lat_min_ = kLatMin;
    r.lat_max_ = kLatMax;
    r.lon_min_ = kLonMin;
    r.lon_max_ = kLonMax;
    return r;
  }

  double lat_min() const { return lat_min_; }
  double lat_max() const { return lat_max_; }
  double lon_min() const { return lon_min_; }
  double lon_max() const { return lon_max_; }

  bool contains(const GeoPoint& p) const {
    bool lat_ok = p.lat() >= lat_min_ && (p.lat() < lat_max_ || (lat_max_ == kLatMax && p.lat() == kLatMax));
    bool lon_ok = p.lon() >= lon_min_ && (p.lon() < lon_max_ || (lon_max_ == kLonMax && p.lon() == kLonMax));
    return lat_ok && lon_ok;
  }

  // Every nonempty intersection of two such rectangles has positive area, so
  // open-interval overlap is an exact emptiness test.
  bool overlaps(const Rect& o) const {
    return lat_min_ < o.lat_max_ && o.lat_min_ < lat_max_ && lon_min_ < o.lon_max_ && o.lon_min_ < lon_max_;
  }

  bool contains(const Rect& o) const {
    return o.lat_min_ >= lat_min_ && o.lat_max_ <= lat_max_ && o.lon_min_ >= lon_min_ && o.lon_max_ <= lon_max_;
  }

  std::optional<Rect> intersection(const Rect& o) const {
    if (!overlaps(o)) return std::nullopt;
    return Rect(std::max(lat_min_, o.lat_min_), std::min(lat_max_, o.lat_max_),
                std::max(lon_min_, o.lon_min_), std::min(lon_max_, o.lon_max_));
  }

  // this \ o as at most four disjoint rectangles.
  std::vector<Rect> subtract(const Rect& o) const {
    auto cut = intersection(o);
    if (!cut) return {*this};
    std::vector<Rect> out;
    if (lat_min_ < cut->lat_min_) out.emplace_back(lat_min_, cut->lat_min_, lon_min_, lon_max_);
    if (cut->lat_max_ < lat_max_) out.emplace_back(cut->lat_max_, lat_max_, lon_min_, lon_max_);
    if (lon_min_ < cut->lon_min_) out.emplace_back(cut->lat_min_, cut->lat_max_, lon_min_, cut->lon_min_);
    if (cut->lon_max_ < lon_max_) out.emplace_back(cut->lat_min_, cut->lat_max_, cut->lon_max_, lon_max_);
    return out;
  }

  Rect hull(const Rect& o) const {
    return Rect(std::min(lat_min_, o.lat_min_), std::max(lat_max_, o.lat_max_),
                std::min(lon_min_, o.lon_min_), std::max(lon_max_, o.lon_max_));
  }

  GeoPoint center() const {
    return GeoPoint((lat_min_ + lat_max_) / 2.0, (lon_min_ + lon_max_) / 2.0);
  }

  // Great-circle distance from p to the nearest point of the rectangle (0 inside).
  double distance_to(const GeoPoint& p) const {
    double lat = std::clamp(p.lat(), lat_min_, lat_max_);
    double lon = std::clamp(p.lon(), lon_min_, std::nextafter(lon_max_, kLonMin));
    return distance(p, GeoPoint(lat, lon));
  }

  friend bool operator==(const Rect&, const Rect&) = default;

 private:
  struct Raw {};
  explicit Rect(Raw) {}

  double lat_min_ = kLatMin;
  double lat_max_ = kLatMax;
  double lon_min_ = kLonMin;
  double lon_max_ = kLonMax;
};

// Subtracts every cutter from every piece; result pieces are pairwise disjoint
// when the input pieces are.
inline std::vector<Rect> subtract_all(std::vector<Rect> pieces, std::span<const Rect> cutters) {
  for (const auto& c : cutters) {
    std::vector<Rect> next;
    next.reserve(pieces.size());
    for (const auto& p : pieces) {
      if (!p.overlaps(c)) {
        next.push_back(p);
      } else {
        auto rest = p.subtract(c);
        next.insert(next.end(), rest.begin(), rest.end());
      }
    }
    pieces = std::move(next);
    if (pieces.empty()) break;
  }
  return pieces;
}

// ---------------------------------------------------------------------------
// Region
// ---------------------------------------------------------------------------

// An outer rectangle minus pairwise-disjoint holes. No holes is the Whole form;
// with holes it is the remainder form left behind by clustering splits.
class Region {
 public:
  Region() = default;
  explicit Region(Rect outer) : outer_(outer) {}
  Region(Rect outer, std::vector<Rect> holes) : outer_(outer), holes_(std::move(holes)) {
    for (std::size_t i = 0; i < holes_.size(); ++i) {
      if (!outer_.contains(holes_[i])) throw Error(Errc::InvalidRegion, "hole not inside outer rectangle");
      for (std::size_t j = i + 1; j < holes_.size(); ++j) {
        if (holes_[i].overlaps(holes_[j])) throw Error(Errc::InvalidRegion, "holes overlap");
      }
    }
  }

  static Region whole(Rect r) { return Region(r); }
  static Region universe() { return Region(Rect::universe()); }

  const Rect& outer() const { return outer_; }
  const std::vector<Rect>& holes() const { return holes_; }
  bool is_whole() const { return holes_.empty(); }

  bool contains(const GeoPoint& p) const {
    if (!outer_.contains(p)) return false;
    for (const auto& h : holes_) {
      if (h.contains(p)) return false;
    }
    return true;
  }

  // Exact decomposition into disjoint rectangles.
  std::vector<Rect> pieces() const { return subtract_all({outer_}, holes_); }

  bool empty() const { return pieces().empty(); }

  bool intersects(const Rect& r) const {
    auto cut = outer_.intersection(r);
    if (!cut) return false;
    if (holes_.empty()) return true;
    return !subtract_all({*cut}, holes_).empty();
  }

  bool intersects(const Region& other) const {
    if (!outer_.overlaps(other.outer_)) return false;
    if (holes_.empty() && other.holes_.empty()) return true;
    if (other.holes_.empty()) return intersects(other.outer_);
    if (holes_.empty()) return other.intersects(outer_);
    for (const auto& piece : other.pieces()) {
      if (intersects(piece)) return true;
    }
    return false;
  }

  // A piece of this ∩ r witnessing intersects(r), if any.
  std::optional<Rect> witness(const Rect& r) const {
    auto cut = outer_.intersection(r);
    if (!cut) return std::nullopt;
    auto rest = subtract_all({*cut}, holes_);
    if (rest.empty()) return std::nullopt;
    return rest.front();
  }

  // this ∩ r, with holes clipped; nullopt when the outer rectangles do not meet.
  std::optional<Region> clip(const Rect& r) const {
    auto cut = outer_.intersection(r);
    if (!cut) return std::nullopt;
    std::vector<Rect> holes;
    for (const auto& h : holes_) {
      if (auto hc = h.intersection(*cut)) holes.push_back(*hc);
    }
    return Region(*cut, std::move(holes));
  }

  // this \ r. The removed part is added as new holes, split so holes stay disjoint.
  Region subtract(const Rect& r) const {
    auto cut = outer_.intersection(r);
    if (!cut) return *this;
    auto fresh = subtract_all({*cut}, holes_);
    Region out = *this;
    out.holes_.insert(out.holes_.end(), fresh.begin(), fresh.end());
    return out;
  }

  friend bool operator==(const Region&, const Region&) = default;

 private:
  Rect outer_ = Rect::universe();
  std::vector<Rect> holes_;
};

inline bool contains(const Region& region, const GeoPoint& p) { return region.contains(p); }
inline bool intersects(const Region& region, const Rect& r) { return region.intersects(r); }
inline bool intersects(const Region& a, const Region& b) { return a.intersects(b); }

// Conservative lat/lon box around the great-circle disk of `radius_km` at `center`.
// Longitude is never wrapped: a disk reaching across the antimeridian or a pole
// gets the full longitude range.
inline Rect circle_bbox(const GeoPoint& center, double radius_km) {
  if (!(radius_km > 0.0) || !std::isfinite(radius_km)) {
    throw Error(Errc::InvalidRadius, "radius must be positive, got " + std::to_string(radius_km));
  }
  double span = radius_km / kKmPerDegree;
  span = span * (1.0 + 1e-12) + 1e-12;
  if (span >= 180.0) return Rect::universe();

  double lat_lo = center.lat() - span;
  double lat_hi = center.lat() + span;
  bool polar = lat_lo <= kLatMin || lat_hi >= kLatMax;
  lat_lo = std::max(lat_lo, kLatMin);
  lat_hi = std::min(lat_hi, kLatMax);

  double lon_lo = kLonMin;
  double lon_hi = kLonMax;
  if (!polar) {
    double widest = std::max(std::abs(lat_lo), std::abs(lat_hi));
    double lon_span = span / std::cos(deg2rad(widest));
    if (center.lon() - lon_span >= kLonMin && center.lon() + lon_span < kLonMax) {
      lon_lo = center.lon() - lon_span;
      lon_hi = center.lon() + lon_span;
    }
  }
  return Rect(lat_lo, lat_hi, lon_lo, lon_hi);
}

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

using PeerName = std::string;

// Hierarchical zone name: the sequence of child labels from the universe down.
// Label 0 is the remainder sibling, 1..k are cluster siblings.
class ZoneId {
 public:
  ZoneId() = default;
  explicit ZoneId(std::vector<std::uint32_t> path) : path_(std::move(path)) {}

  static ZoneId root() { return ZoneId(); }

  const std::vector<std::uint32_t>& path() const { return path_; }
  std::size_t depth() const { return path_.size(); }
  bool is_root() const { return path_.empty(); }
  std::uint32_t label() const { return path_.empty() ? 0 : path_.back(); }

  ZoneId child(std::uint32_t label) const {
    ZoneId c = *this;
    c.path_.push_back(label);
    return c;
  }

  ZoneId parent() const {
    ZoneId p = *this;
    if (!p.path_.empty()) p.path_.pop_back();
    return p;
  }

  ZoneId prefix(std::size_t depth) const {
    return ZoneId(std::vector<std::uint32_t>(path_.begin(), path_.begin() + std::min(depth, path_.size())));
  }

  // Strict ancestor.
  bool is_ancestor_of(const ZoneId& other) const {
    return path_.size() < other.path_.size() && std::equal(path_.begin(), path_.end(), other.path_.begin());
  }

  bool contains(const ZoneId& other) const { return *this == other || is_ancestor_of(other); }

  std::size_t common_depth(const ZoneId& other) const {
    std::size_t n = std::min(path_.size(), other.path_.size());
    std::size_t i = 0;
    while (i < n && path_[i] == other.path_[i]) ++i;
    return i;
  }

  std::string to_string() const {
    std::string s = "U";
    for (auto l : path_) {
      s += '.';
      s += std::to_string(l);
    }
    return s;
  }

  static ZoneId parse(std::string_view text) {
    if (text.empty() || text[0] != 'U') throw Error(Errc::InvalidZoneId, "'" + std::string(text) + "'");
    std::vector<std::uint32_t> path;
    std::size_t i = 1;
    while (i < text.size()) {
      if (text[i] != '.' || i + 1 >= text.size()) throw Error(Errc::InvalidZoneId, "'" + std::string(text) + "'");
      ++i;
      std::uint64_t v = 0;
      std::size_t start = i;
      while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
        v = v * 10 + static_cast<std::uint64_t>(text[i] - '0');
        if (v > 0xffffffffu) throw Error(Errc::InvalidZoneId, "label overflow");
        ++i;
      }
      if (i == start) throw Error(Errc::InvalidZoneId, "'" + std::string(text) + "'");
      path.push_back(static_cast<std::uint32_t>(v));
    }
    return ZoneId(std::move(path));
  }

  friend bool operator==(const ZoneId&, const ZoneId&) = default;
  friend auto operator<=>(const ZoneId&, const ZoneId&) = default;

 private:
  std::vector<std::uint32_t> path_;
};

struct OverlayId {
  ZoneId zone;
  PeerName peer;

  std::string to_string() const { return zone.to_string() + "/" + peer; }

  static OverlayId parse(std::string_view text) {
    auto slash = text.find('/');
    if (slash == std::string_view::npos || slash + 1 >= text.size()) {
      throw Error(Errc::InvalidZoneId, "overlay id '" + std::string(text) + "' lacks a peer name");
    }
    return OverlayId{ZoneId::parse(text.substr(0, slash)), std::string(text.substr(slash + 1))};
  }

  friend bool operator==(const OverlayId&, const OverlayId&) = default;
  friend auto operator<=>(const OverlayId&, const OverlayId&) = default;
};

}  // namespace geoverlay
