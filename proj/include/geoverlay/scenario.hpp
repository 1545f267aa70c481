#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "geoverlay/content.hpp"
#include "geoverlay/error.hpp"
#include "geoverlay/geo.hpp"
#include "geoverlay/io.hpp"
#include "geoverlay/membership.hpp"
#include "geoverlay/metrics.hpp"
#include "geoverlay/rng.hpp"
#include "geoverlay/trace.hpp"
#include "geoverlay/zone_tree.hpp"

namespace geoverlay {

// ---------------------------------------------------------------------------
// Peer datasets
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::ParseError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// CSV with header "name,lat,lon". Rows are cited by file line number.
inline std::vector<PeerPoint> parse_peers_csv(const std::string& text) {
  std::vector<PeerPoint> out;
  std::set<PeerName> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  auto fail = [&](const std::string& why) { throw Error(Errc::ParseError, "row " + std::to_string(row) + ": " + why); };
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 1) {
      if (line != "name,lat,lon") fail("header must be 'name,lat,lon'");
      continue;
    }
    if (line.empty()) continue;
    auto c1 = line.find(',');
    auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) fail("expected 3 fields");
    std::string name = line.substr(0, c1);
    if (name.empty()) fail("empty name");
    if (name.find_first_of("/ \t") != std::string::npos) fail("name '" + name + "' contains '/' or whitespace");
    double lat = 0.0, lon = 0.0;
    try {
      lat = GeoPoint::parse_double(line.substr(c1 + 1, c2 - c1 - 1));
      lon = GeoPoint::parse_double(line.substr(c2 + 1));
    } catch (const Error& e) {
      fail(e.what());
    }
    if (lat < kLatMin || lat > kLatMax) fail("latitude " + format_double(lat) + " outside [-90, 90]");
    if (lon < kLonMin || lon >= kLonMax) fail("longitude " + format_double(lon) + " outside [-180, 180)");
    if (!seen.insert(name).second) fail("duplicate peer name '" + name + "'");
    out.push_back({name, GeoPoint(lat, lon)});
  }
  if (row == 0) throw Error(Errc::ParseError, "row 1: missing header 'name,lat,lon'");
  return out;
}

inline std::vector<PeerPoint> load_peers_csv(const std::string& path) { return parse_peers_csv(read_file(path)); }

inline std::string write_peers_csv(const std::vector<PeerPoint>& peers) {
  std::string out = "name,lat,lon\n";
  for (const auto& p : peers) out += p.name + "," + format_double(p.coord.lat()) + "," + format_double(p.coord.lon()) + "\n";
  return out;
}

inline double wrap_lon(double lon) {
  double w = std::fmod(lon + 180.0, 360.0);
  if (w < 0) w += 360.0;
  double out = w - 180.0;
  return out >= kLonMax ? kLonMin : out;
}

struct SyntheticClusters {
  std::size_t clusters = 5;
  std::size_t peers_per_cluster = 200;
  double spread_degrees = 3.0;
};

// Gaussian blobs around uniformly drawn centres (|lat| <= 60); names p000000...
inline std::vector<PeerPoint> synthetic_clusters(const SyntheticClusters& p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GeoPoint> centres;
  for (std::size_t c = 0; c < p.clusters; ++c) centres.emplace_back(rng.uniform(-60.0, 60.0), rng.uniform(kLonMin, kLonMax));
  std::vector<PeerPoint> out;
  char name[32];
  for (std::size_t c = 0; c < p.clusters; ++c) {
    for (std::size_t i = 0; i < p.peers_per_cluster; ++i) {
      double lat = std::clamp(centres[c].lat() + rng.normal() * p.spread_degrees, kLatMin, kLatMax);
      double lon = wrap_lon(centres[c].lon() + rng.normal() * p.spread_degrees);
      std::snprintf(name, sizeof name, "p%06zu", out.size());
      out.push_back({name, GeoPoint(lat, lon)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario model
// ---------------------------------------------------------------------------

struct ChurnEvent {
  enum class Op { Join, Leave, Fail };
  std::uint64_t step = 0;
  Op op = Op::Join;
  std::optional<PeerName> peer;
  std::optional<GeoPoint> coordinate;
  std::optional<PeerName> bootstrap;
};

struct Query {
  std::uint64_t step = 0;
  std::string type;  // area | point | peer | nearest | random
  std::optional<PeerName> source;
  std::optional<Region> area;
  std::optional<GeoPoint> point;
  std::string target;       // peer: a peer name or an overlay id
  std::string random_kind;  // random: area | point | peer | nearest
  std::size_t count = 1;
};

struct ContentRequest {
  std::uint64_t step = 0;
  PeerName requester;
};

struct ContentSpec {
  ContentDescriptor desc;
  std::vector<ContentRequest> requests;
  std::vector<PeerName> receivers;
  std::uint64_t multicast_step = 0;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  AdaptationPolicy policy;
  std::variant<std::monostate, std::string, SyntheticClusters, std::vector<PeerPoint>> placement;  // csv path | synthetic | explicit
  std::vector<ChurnEvent> churn;
  std::vector<Query> queries;
  std::vector<ContentSpec> content;
  std::size_t store_capacity = kDefaultStoreCapacity;
};

namespace detail {

[[noreturn]] inline void bad(const std::string& where, const std::string& why) {
  throw Error(Errc::ScenarioParseError, where + ": " + why);
}

inline const io::json& need(const io::json& j, const std::string& where, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) bad(where, std::string("missing field '") + key + "'");
  return *it;
}

inline std::uint64_t as_uint(const io::json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) bad(where, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

inline double as_double(const io::json& j, const std::string& where) {
  if (!j.is_number()) bad(where, "expected a number");
  return j.get<double>();
}

inline std::string as_string(const io::json& j, const std::string& where) {
  if (!j.is_string()) bad(where, "expected a string");
  return j.get<std::string>();
}

template <typename F>
auto wrap(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == Errc::ScenarioParseError) throw;
    bad(where, e.what());
  }
}

inline GeoPoint as_point(const io::json& j, const std::string& where) {
  return wrap(where, [&] { return io::point_from_json(j); });
}

inline std::optional<GeoPoint> point_field(const io::json& j, const std::string& where) {
  if (j.contains("coordinate")) return as_point(j["coordinate"], where + ".coordinate");
  if (j.contains("lat") || j.contains("lon")) {
    double lat = as_double(need(j, where, "lat"), where + ".lat");
    double lon = as_double(need(j, where, "lon"), where + ".lon");
    return wrap(where, [&] { return GeoPoint(lat, lon); });
  }
  return std::nullopt;
}

inline ChurnEvent parse_churn_event(const io::json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  ChurnEvent e;
  e.step = as_uint(need(j, where, "step"), where + ".step");
  std::string op = as_string(need(j, where, "op"), where + ".op");
  if (op == "join") {
    e.op = ChurnEvent::Op::Join;
  } else if (op == "leave") {
    e.op = ChurnEvent::Op::Leave;
  } else if (op == "fail") {
    e.op = ChurnEvent::Op::Fail;
  } else {
    bad(where + ".op", "unknown op '" + op + "' (join|leave|fail)");
  }
  if (j.contains("peer")) e.peer = as_string(j["peer"], where + ".peer");
  if (j.contains("bootstrap")) e.bootstrap = as_string(j["bootstrap"], where + ".bootstrap");
  e.coordinate = point_field(j, where);
  if (e.op == ChurnEvent::Op::Join && !e.coordinate) bad(where, "join needs a coordinate");
  if (e.op != ChurnEvent::Op::Join && !e.peer) bad(where, op + " needs a peer");
  return e;
}

inline std::size_t line_of(const std::string& text, std::size_t byte) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size())), '\n'));
}

inline io::json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return io::json::parse(text);
  } catch (const io::json::parse_error& e) {
    bad(where + ":" + std::to_string(line_of(text, e.byte)), e.what());
  }
}

inline Query parse_query(const io::json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  Query q;
  q.step = j.contains("step") ? as_uint(j["step"], where + ".step") : 0;
  q.type = as_string(need(j, where, "type"), where + ".type");
  if (j.contains("source")) q.source = as_string(j["source"], where + ".source");
  if (q.type == "area") {
    const auto& a = need(j, where, "rect");
    q.area = wrap(where + ".rect", [&] { return io::region_from_json(a); });
  } else if (q.type == "point" || q.type == "nearest") {
    q.point = point_field(j, where);
    if (!q.point) bad(where, q.type + " query needs a coordinate");
  } else if (q.type == "peer") {
    q.target = as_string(need(j, where, "target"), where + ".target");
  } else if (q.type == "random") {
    q.random_kind = as_string(need(j, where, "kind"), where + ".kind");
    if (q.random_kind != "area" && q.random_kind != "point" && q.random_kind != "peer" && q.random_kind != "nearest") {
      bad(where + ".kind", "unknown kind '" + q.random_kind + "'");
    }
    q.count = as_uint(need(j, where, "count"), where + ".count");
  } else {
    bad(where + ".type", "unknown query type '" + q.type + "' (area|point|peer|nearest|random)");
  }
  return q;
}

inline ContentSpec parse_content(const io::json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  ContentSpec c;
  c.desc.content_id = as_string(need(j, where, "content_id"), where + ".content_id");
  c.desc.source = as_string(need(j, where, "source"), where + ".source");
  std::uint64_t frags = as_uint(need(j, where, "fragments"), where + ".fragments");
  if (frags < 1 || frags > 1u << 20) bad(where + ".fragments", "must be between 1 and 2^20");
  c.desc.fragments = static_cast<std::uint32_t>(frags);
  if (j.contains("requests")) {
    const auto& rs = j["requests"];
    if (!rs.is_array()) bad(where + ".requests", "expected an array");
    for (std::size_t i = 0; i < rs.size(); ++i) {
      std::string w = where + ".requests[" + std::to_string(i) + "]";
      c.requests.push_back({as_uint(need(rs[i], w, "step"), w + ".step"), as_string(need(rs[i], w, "requester"), w + ".requester")});
    }
  }
  if (j.contains("receivers")) {
    const auto& rs = j["receivers"];
    if (!rs.is_array()) bad(where + ".receivers", "expected an array");
    for (std::size_t i = 0; i < rs.size(); ++i) c.receivers.push_back(as_string(rs[i], where + ".receivers[" + std::to_string(i) + "]"));
  }
  if (j.contains("multicast_step")) c.multicast_step = as_uint(j["multicast_step"], where + ".multicast_step");
  return c;
}

inline std::string join_path(const std::string& base_dir, const std::string& path) {
  if (path.empty() || path.front() == '/' || base_dir.empty()) return path;
  return base_dir + "/" + path;
}

}  // namespace detail

// Churn script, one JSON object per line.
inline std::vector<ChurnEvent> parse_churn_jsonl(const std::string& text, const std::string& label = "churn") {
  std::vector<ChurnEvent> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = label + ":" + std::to_string(n);
    out.push_back(detail::parse_churn_event(detail::parse_json_text(line, where), where));
  }
  return out;
}

// `base_dir` resolves relative csv and churn paths.
inline Scenario parse_scenario(const io::json& j, const std::string& base_dir = "") {
  using namespace detail;
  if (!j.is_object()) bad("scenario", "expected an object");
  Scenario s;
  if (j.contains("format_version") && as_uint(j["format_version"], "format_version") != 1) {
    bad("format_version", "only version 1 is understood");
  }
  s.name = j.contains("name") ? as_string(j["name"], "name") : "";
  s.seed = as_uint(need(j, "scenario", "seed"), "seed");
  if (j.contains("policy")) {
    const auto& p = j["policy"];
    if (!p.is_object()) bad("policy", "expected an object");
    if (p.contains("split_threshold")) s.policy.split_threshold = as_uint(p["split_threshold"], "policy.split_threshold");
    if (p.contains("merge_threshold")) s.policy.merge_threshold = as_uint(p["merge_threshold"], "policy.merge_threshold");
    if (p.contains("k")) s.policy.k = as_uint(p["k"], "policy.k");
  }
  if (j.contains("placement")) {
    const auto& p = j["placement"];
    std::string type = as_string(need(p, "placement", "type"), "placement.type");
    if (type == "csv") {
      s.placement = join_path(base_dir, as_string(need(p, "placement", "path"), "placement.path"));
    } else if (type == "synthetic") {
      SyntheticClusters sc;
      sc.clusters = as_uint(need(p, "placement", "clusters"), "placement.clusters");
      sc.peers_per_cluster = as_uint(need(p, "placement", "peers_per_cluster"), "placement.peers_per_cluster");
      sc.spread_degrees = as_double(need(p, "placement", "spread_degrees"), "placement.spread_degrees");
      if (!(sc.spread_degrees >= 0.0)) bad("placement.spread_degrees", "must be >= 0");
      s.placement = sc;
    } else if (type == "explicit") {
      const auto& ps = need(p, "placement", "peers");
      if (!ps.is_array()) bad("placement.peers", "expected an array");
      std::vector<PeerPoint> pts;
      std::set<PeerName> seen;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        std::string w = "placement.peers[" + std::to_string(i) + "]";
        auto name = as_string(need(ps[i], w, "name"), w + ".name");
        auto pt = point_field(ps[i], w);
        if (!pt) bad(w, "missing coordinate");
        if (!seen.insert(name).second) bad(w + ".name", "duplicate peer name '" + name + "'");
        pts.push_back({name, *pt});
      }
      s.placement = std::move(pts);
    } else {
      bad("placement.type", "unknown placement '" + type + "' (csv|synthetic|explicit)");
    }
  }
  if (j.contains("churn")) {
    const auto& c = j["churn"];
    if (c.is_string()) {
      std::string path = join_path(base_dir, c.get<std::string>());
      std::string text = wrap("churn", [&] { return read_file(path); });
      s.churn = parse_churn_jsonl(text, c.get<std::string>());
    } else if (c.is_array()) {
      for (std::size_t i = 0; i < c.size(); ++i) s.churn.push_back(parse_churn_event(c[i], "churn[" + std::to_string(i) + "]"));
    } else {
      bad("churn", "expected a path or an array");
    }
  }
  if (j.contains("queries")) {
    const auto& qs = j["queries"];
    if (!qs.is_array()) bad("queries", "expected an array");
    for (std::size_t i = 0; i < qs.size(); ++i) s.queries.push_back(parse_query(qs[i], "queries[" + std::to_string(i) + "]"));
  }
  if (j.contains("content")) {
    const auto& cs = j["content"];
    if (cs.is_object()) {
      s.content.push_back(parse_content(cs, "content"));
    } else if (cs.is_array()) {
      for (std::size_t i = 0; i < cs.size(); ++i) s.content.push_back(parse_content(cs[i], "content[" + std::to_string(i) + "]"));
    } else {
      bad("content", "expected an object or an array");
    }
  }
  if (j.contains("store_capacity")) s.store_capacity = as_uint(j["store_capacity"], "store_capacity");
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(Errc::ScenarioParseError, e.what());
  }
  auto slash = path.find_last_of('/');
  std::string dir = slash == std::string::npos ? "" : path.substr(0, slash);
  return parse_scenario(detail::parse_json_text(text, path), dir);
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunResult {
  Network network;
  std::vector<RouteTrace> traces;
  io::json metrics;
  std::string query_table;
};

namespace detail {

class Runner {
 public:
  explicit Runner(const Scenario& s)
      : s_(s), net_(s.policy, s.seed), content_(net_, s.store_capacity), qrng_(s.seed ^ 0x51f15e0d2c4b9a37ULL) {
    net_.set_event_sink([this](const RouteTrace& t) { traces_.push_back(t); });
  }

  RunResult run() {
    place();
    std::set<std::uint64_t> steps;
    for (const auto& e : s_.churn) steps.insert(e.step);
    for (const auto& q : s_.queries) steps.insert(q.step);
    for (const auto& c : s_.content) {
      for (const auto& r : c.requests) steps.insert(r.step);
      if (!c.receivers.empty()) steps.insert(c.multicast_step);
    }
    for (auto step : steps) {
      net_.set_step(step);
      for (const auto& e : s_.churn) {
        if (e.step == step) apply(e);
      }
      net_.drain();
      for (const auto& q : s_.queries) {
        if (q.step == step) query(q);
      }
      for (const auto& c : s_.content) {
        for (const auto& r : c.requests) {
          if (r.step == step) request(c, r);
        }
        if (!c.receivers.empty() && c.multicast_step == step) multicast(c);
      }
      net_.detect_failures();
      net_.drain();
    }
    net_.set_event_sink(nullptr);
    RunResult out{std::move(net_), std::move(traces_), {}, {}};
    out.metrics = summarize(out.traces);
    out.query_table = query_csv(out.traces);
    return out;
  }

 private:
  void place() {
    std::vector<PeerPoint> pts;
    if (auto* path = std::get_if<std::string>(&s_.placement)) {
      pts = load_peers_csv(*path);
    } else if (auto* sc = std::get_if<SyntheticClusters>(&s_.placement)) {
      pts = synthetic_clusters(*sc, s_.seed);
    } else if (auto* ex = std::get_if<std::vector<PeerPoint>>(&s_.placement)) {
      pts = *ex;
    }
    if (!pts.empty()) net_.populate(pts);
  }

  void apply(const ChurnEvent& e) {
    switch (e.op) {
      case ChurnEvent::Op::Join: net_.join(e.peer ? *e.peer : net_.next_name(), *e.coordinate, e.bootstrap); break;
      case ChurnEvent::Op::Leave: net_.leave(*e.peer); break;
      case ChurnEvent::Op::Fail: net_.fail(*e.peer); break;
    }
  }

  // A query that could not be issued still gets a record.
  void error_trace(const std::string& kind, const std::string& why) {
    RouteTrace t;
    t.msg_id = net_.next_msg_id();
    t.kind = kind;
    t.sim_step = net_.step();
    t.errors.push_back(why);
    traces_.push_back(std::move(t));
  }

  std::optional<PeerName> pick_source(const std::optional<PeerName>& given, const std::string& kind) {
    if (given) {
      if (!net_.has_peer(*given)) {
        error_trace(kind, "UnknownPeer:" + *given);
        return std::nullopt;
      }
      return given;
    }
    if (net_.size() == 0) {
      error_trace(kind, "EmptyNetwork");
      return std::nullopt;
    }
    auto alive = net_.peers();
    return alive[qrng_.below(alive.size())];
  }

  Region random_area() {
    double lat = qrng_.uniform(-80.0, 80.0), lon = qrng_.uniform(kLonMin, kLonMax);
    double dlat = qrng_.uniform(0.5, 20.0), dlon = qrng_.uniform(0.5, 30.0);
    return Region(Rect(std::max(kLatMin, lat - dlat), std::min(kLatMax, lat + dlat), std::max(kLonMin, lon - dlon),
                       std::min(kLonMax, lon + dlon)));
  }

  GeoPoint random_point() { return GeoPoint(qrng_.uniform(kLatMin, kLatMax), qrng_.uniform(kLonMin, kLonMax)); }

  void query(const Query& q) {
    if (q.type == "random") {
      for (std::size_t i = 0; i < q.count; ++i) {
        Query one;
        one.step = q.step;
        one.type = q.random_kind;
        one.source = q.source;
        if (one.type == "area") one.area = random_area();
        if (one.type == "point" || one.type == "nearest") one.point = random_point();
        if (one.type == "peer") {
          if (net_.size() == 0) {
            error_trace("peer", "EmptyNetwork");
            continue;
          }
          auto alive = net_.peers();
          one.target = alive[qrng_.below(alive.size())];
        }
        query(one);
      }
      return;
    }
    auto src = pick_source(q.source, q.type);
    if (!src) return;
    if (q.type == "area") {
      traces_.push_back(net_.route_area(*src, *q.area));
    } else if (q.type == "point") {
      traces_.push_back(net_.route_point(*src, *q.point));
    } else if (q.type == "nearest") {
      traces_.push_back(net_.nearest(*src, *q.point));
    } else if (q.type == "peer") {
      OverlayId dest;
      if (q.target.find('/') != std::string::npos) {
        dest = OverlayId::parse(q.target);
      } else if (net_.has_peer(q.target)) {
        dest = net_.overlay_id(q.target);
      } else {
        error_trace("peer", "NoSuchPeer:" + q.target);
        return;
      }
      traces_.push_back(net_.route_peer(*src, dest));
    }
  }

  void request(const ContentSpec& c, const ContentRequest& r) {
    try {
      traces_.push_back(content_.request(r.requester, c.desc).trace);
    } catch (const Error& e) {
      if (e.code() != Errc::NoSuchPeer && e.code() != Errc::UnknownPeer) throw;
      error_trace("content", e.what());
    }
  }

  void multicast(const ContentSpec& c) {
    try {
      traces_.push_back(content_.build_delivery_tree(c.desc.source, c.receivers).trace);
    } catch (const Error& e) {
      if (e.code() != Errc::NoSuchPeer) throw;
      error_trace("multicast", e.what());
    }
  }

  const Scenario& s_;
  Network net_;
  ContentShare content_;
  Rng qrng_;
  std::vector<RouteTrace> traces_;
};

}  // namespace detail

// Executes placement, then for every step in order: churn, pending adaptation,
// queries, content requests and multicasts, failure detection.
inline RunResult run_scenario(const Scenario& s) {
  s.policy.check();
  return detail::Runner(s).run();
}

}  // namespace geoverlay
