#include <algorithm>
#include <map>

#include <gtest/gtest.h>

#include "geoverlay/io.hpp"
#include "geoverlay/membership.hpp"
#include "geoverlay/scenario.hpp"
#include "support.hpp"

using namespace geoverlay;
using geoverlay::test::cloud;
using geoverlay::test::code_of;

namespace {

std::string first_problem(const VerifyReport& r) { return r.problems.empty() ? "" : r.problems.front(); }

#define EXPECT_CONSISTENT(net)                                    \
  do {                                                            \
    auto rep_ = (net).verify(2000);                               \
    EXPECT_TRUE(rep_.ok()) << first_problem(rep_);                \
  } while (0)

// 17 + 16 peers around (10,10) and (40,40).
std::vector<PeerPoint> two_clouds(std::size_t a = 17, std::size_t b = 16) {
  Rng rng(3);
  auto pts = cloud(rng, GeoPoint(10, 10), 1.0, a, 0);
  auto more = cloud(rng, GeoPoint(40, 40), 1.0, b, a);
  pts.insert(pts.end(), more.begin(), more.end());
  return pts;
}

// Root split into U.0 (empty remainder), U.1 and U.2.
Network split_network(std::size_t a = 20, std::size_t b = 20) {
  Network net({32, 4, 2}, 1);
  net.populate(two_clouds(a, b));
  return net;
}

std::vector<PeerName> members(const Network& net, const char* zone) {
  return net.oracle().at(ZoneId::parse(zone)).peers;
}

}  // namespace

TEST(Join, IntoEmptyNetwork) {
  Network net;
  auto id = net.join("first", GeoPoint(10, 20));
  EXPECT_TRUE(id.zone.is_root());
  EXPECT_EQ(net.size(), 1u);
  const auto& t = net.table("first");
  EXPECT_EQ(t.depth(), 0u);
  ASSERT_EQ(t.leaf_row.size(), 1u);
  EXPECT_EQ(t.leaf_row[0].address, "first");
  EXPECT_CONSISTENT(net);
}

TEST(Join, OverfullLeafSplits) {
  Network net({32, 4, 2}, 1);
  auto pts = two_clouds(16, 16);
  net.populate(pts);
  ASSERT_EQ(net.oracle().leaves().size(), 1u);
  net.join("joiner", GeoPoint(10.5, 10.5));
  EXPECT_FALSE(net.idle());
  net.drain();
  EXPECT_EQ(net.stats().splits, 1u);
  EXPECT_EQ(net.table("joiner").depth(), 1u);
  EXPECT_EQ(net.table("joiner").leaf_id, net.oracle().leaf_of("joiner"));
  EXPECT_CONSISTENT(net);
}

TEST(Join, ThousandSequentialFromCsv) {
  SyntheticClusters sc{4, 250, 4.0};
  auto csv = write_peers_csv(synthetic_clusters(sc, 77));
  auto pts = parse_peers_csv(csv);
  ASSERT_EQ(pts.size(), 1000u);
  Network net({16, 4, 2}, 5);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    net.join(pts[i].name, pts[i].coord);
    net.drain();
    if (i % 250 == 249) {
      auto rep = net.verify(1000, i);
      ASSERT_TRUE(rep.ok()) << "after " << i + 1 << " joins: " << first_problem(rep);
    }
  }
  EXPECT_GT(net.stats().splits, 10u);
  EXPECT_EQ(net.stats().stale_updates, 0u);
  auto rep = net.verify(100000);
  EXPECT_TRUE(rep.ok()) << first_problem(rep);
}

TEST(Join, IntoEmptyZone) {
  auto net = split_network();
  ASSERT_TRUE(members(net, "U.0").empty());
  auto id = net.join("far", GeoPoint(-40, -100));
  EXPECT_EQ(id.zone, ZoneId::parse("U.0"));
  EXPECT_CONSISTENT(net);
}

TEST(Join, Errors) {
  auto net = split_network();
  EXPECT_EQ(code_of([&] { net.join("p0000", GeoPoint(0, 0)); }), Errc::DuplicatePeer);
  EXPECT_EQ(code_of([&] { net.join("new", GeoPoint(0, 0), "ghost"); }), Errc::BootstrapUnreachable);
  net.fail("p0001");
  EXPECT_EQ(code_of([&] { net.join("new", GeoPoint(0, 0), "p0001"); }), Errc::BootstrapUnreachable);
  EXPECT_EQ(code_of([&] { net.leave("ghost"); }), Errc::UnknownPeer);
  EXPECT_EQ(code_of([&] { net.fail("ghost"); }), Errc::UnknownPeer);
}

TEST(Leave, OnlyPeerOfLeafMergesAway) {
  Network net({4, 1, 2}, 1);
  Rng rng(2);
  auto pts = cloud(rng, GeoPoint(10, 10), 1.0, 3, 0);
  pts.push_back({"x1", GeoPoint(40, 40)});
  pts.push_back({"x2", GeoPoint(41, 41)});
  net.populate(pts);
  ZoneId lone = net.oracle().leaf_of("x1");
  ASSERT_EQ(net.oracle().leaf_of("x2"), lone);
  net.leave("x2");
  net.drain();
  ASSERT_EQ(members(net, lone.to_string().c_str()), std::vector<PeerName>{"x1"});
  ASSERT_EQ(net.stats().merges, 0u);

  net.leave("x1");
  EXPECT_FALSE(net.idle());
  net.drain();
  // the empty leaf folds into the empty remainder, which is itself under
  // threshold and folds into the last sibling: the parent is a leaf again
  EXPECT_EQ(net.stats().merges, 2u);
  EXPECT_EQ(net.oracle().find(lone), nullptr);
  EXPECT_TRUE(net.oracle().root().is_leaf());
  EXPECT_EQ(net.oracle().root().peers.size(), 3u);
  EXPECT_CONSISTENT(net);
}

TEST(Leave, LastTwoSiblingsCollapse) {
  Network net({8, 2, 2}, 1);
  Rng rng(2);
  auto pts = cloud(rng, GeoPoint(10, 10), 1.0, 5, 0);
  auto more = cloud(rng, GeoPoint(40, 40), 1.0, 4, 5);
  pts.insert(pts.end(), more.begin(), more.end());
  net.populate(pts);
  ASSERT_FALSE(net.oracle().root().is_leaf());
  for (const auto& p : more) net.leave(p.name);
  net.drain();
  // the emptied leaf merges into the remainder, which then joins the other leaf
  EXPECT_TRUE(net.oracle().root().is_leaf());
  EXPECT_EQ(net.oracle().root().peers.size(), 5u);
  EXPECT_CONSISTENT(net);
}

TEST(Leave, DesignatedContactPromotion) {
  Network net({16, 4, 2}, 1);
  net.populate(parse_peers_csv(write_peers_csv(synthetic_clusters({3, 60, 3.0}, 21))));
  ASSERT_GE(net.oracle().max_depth(), 2u);

  // the designated contact most referenced across all tables
  std::map<PeerName, std::size_t> refs;
  for (const auto& n : net.peers()) {
    for (const auto& row : net.table(n).rows) {
      for (const auto& e : row.entries) {
        if (e.populated()) ++refs[e.designated().address];
      }
    }
  }
  auto victim = std::max_element(refs.begin(), refs.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; })->first;
  ASSERT_GT(refs[victim], 10u);
  const ZoneId leaf = net.oracle().leaf_of(victim);
  ASSERT_GT(net.oracle().at(leaf).peers.size(), net.policy().merge_threshold);

  net.leave(victim);
  EXPECT_TRUE(net.idle());  // no structural change: one update round
  for (const auto& n : net.peers()) {
    for (const auto& row : net.table(n).rows) {
      for (const auto& e : row.entries) {
        for (const auto& c : e.contacts) EXPECT_NE(c.address, victim) << n;
      }
    }
  }
  EXPECT_CONSISTENT(net);
}

TEST(Fail, OneMissingContactThenBackup) {
  Network net(test::two_regions_policy(), 1);
  net.populate(test::two_regions_peers());
  ASSERT_EQ(net.table("h").row(1).entries[1].designated().address, "b");
  net.fail("b");

  auto first = net.route_peer("h", net.overlay_id("q"));
  std::size_t missing = 0;
  for (const auto& e : first.errors) missing += e.rfind("MissingContact", 0) == 0;
  EXPECT_EQ(missing, 1u);
  ASSERT_TRUE(first.result);
  EXPECT_EQ(first.result->peer, "q");

  auto second = net.route_peer("h", net.overlay_id("r"));
  EXPECT_TRUE(second.errors.empty());
  EXPECT_EQ(second.result->peer, "r");

  net.drain();
  EXPECT_EQ(net.stats().repairs, 1u);
  EXPECT_FALSE(net.knows_peer("b"));
  EXPECT_CONSISTENT(net);
}

TEST(Fail, HeartbeatRepairsUnnoticedFailures) {
  auto net = split_network();
  net.fail("p0003");
  net.fail("p0025");
  EXPECT_FALSE(net.verify(100).ok());
  net.detect_failures();
  net.drain();
  EXPECT_EQ(net.stats().repairs, 2u);
  EXPECT_CONSISTENT(net);
}

TEST(Split, LeaderConvergesMembers) {
  Network net({32, 4, 2}, 1);
  net.populate(two_clouds(16, 16));
  net.join("zz", GeoPoint(40.2, 40.2));
  // run the split by hand instead of through the queue
  auto leader = net.oracle().root().peers.front();
  auto u = net.coordinate_split(leader);
  EXPECT_EQ(u.kind, UpdateKind::Split);
  EXPECT_EQ(u.epoch, 1u);

  std::map<ZoneId, const RoutingTable*> seen;
  for (const auto& n : net.peers()) {
    const auto& t = net.table(n);
    EXPECT_EQ(t.depth(), 1u);
    auto [it, fresh] = seen.emplace(t.leaf_id, &t);
    if (!fresh) {
      EXPECT_EQ(t.rows, it->second->rows);
      EXPECT_EQ(t.leaf_row, it->second->leaf_row);
    }
  }
  net.drain();
  EXPECT_EQ(net.stats().splits, 1u);
  EXPECT_GE(net.stats().suppressed_tasks, 1u);
  EXPECT_CONSISTENT(net);
}

TEST(Split, NonLeaderIsRefused) {
  Network net({32, 4, 2}, 1);
  net.populate(two_clouds(16, 16));
  net.join("zz", GeoPoint(40.2, 40.2));
  auto before = net.table("zz");
  EXPECT_EQ(code_of([&] { net.coordinate_split("zz"); }), Errc::NotLeader);
  EXPECT_EQ(net.table("zz"), before);
  EXPECT_TRUE(net.oracle().root().is_leaf());
}

TEST(Split, NotNeeded) {
  auto net = split_network();
  auto leader = members(net, "U.1").front();
  EXPECT_EQ(code_of([&] { net.coordinate_split(leader); }), Errc::NoSplitNeeded);
}

TEST(Split, ConcurrentAttemptsBumpEpochOnce) {
  Network net({32, 4, 2}, 1);
  net.populate(two_clouds(16, 16));
  net.join("zz", GeoPoint(40.2, 40.2));  // queues one split
  net.schedule_split(ZoneId::root());
  net.schedule_split(ZoneId::root());
  net.drain();
  EXPECT_EQ(net.stats().splits, 1u);
  EXPECT_EQ(net.stats().suppressed_tasks, 2u);
  for (const auto& c : net.oracle().root().children) EXPECT_EQ(c.epoch, 1u);
  EXPECT_CONSISTENT(net);
}

TEST(Merge, SmallLeafIntoRemainder) {
  auto net = split_network();
  auto u1 = members(net, "U.1");
  const Region before0 = net.oracle().at(ZoneId::parse("U.0")).region;
  const Region before1 = net.oracle().at(ZoneId::parse("U.1")).region;
  for (std::size_t i = 3; i < u1.size(); ++i) net.leave(u1[i]);
  ASSERT_EQ(members(net, "U.1").size(), 3u);

  auto u = net.coordinate_merge(u1[0]);
  EXPECT_EQ(u.kind, UpdateKind::Merge);
  ASSERT_TRUE(u.result);
  EXPECT_EQ(*u.result, ZoneId::parse("U.0"));
  const Region& merged = net.oracle().at(*u.result).region;
  Rng rng(1);
  for (int i = 0; i < 20000; ++i) {
    GeoPoint p = test::random_point(rng);
    ASSERT_EQ(merged.contains(p), before0.contains(p) || before1.contains(p));
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(net.table(u1[i]).leaf_id, ZoneId::parse("U.0"));
  // the merged leaf is below threshold and cascades into the last sibling
  net.drain();
  EXPECT_TRUE(net.oracle().root().is_leaf());
  EXPECT_CONSISTENT(net);
}

TEST(Merge, AboveThresholdAndNotLeader) {
  auto net = split_network();
  auto u1 = members(net, "U.1");
  EXPECT_EQ(code_of([&] { net.coordinate_merge(u1[0]); }), Errc::AboveThreshold);
  for (std::size_t i = 3; i < u1.size(); ++i) net.leave(u1[i]);
  EXPECT_EQ(code_of([&] { net.coordinate_merge(u1[1]); }), Errc::NotLeader);
}

TEST(Merge, BothUnderThresholdMergeOnce) {
  auto net = split_network();
  for (int i = 0; i < 5; ++i) net.join("far" + std::to_string(i), GeoPoint(-40 + i, -100 + i));
  auto u1 = members(net, "U.1");
  for (std::size_t i = 3; i < u1.size(); ++i) net.leave(u1[i]);
  net.drain();
  ASSERT_EQ(net.stats().merges, 1u);
  ASSERT_EQ(net.oracle().root().children.size(), 2u);
  auto u0 = members(net, "U.0");
  auto u2 = members(net, "U.2");
  ASSERT_EQ(u0.size(), 8u);

  const auto epoch = std::max(net.oracle().at(ZoneId::parse("U.0")).epoch, net.oracle().at(ZoneId::parse("U.2")).epoch);
  for (std::size_t i = 3; i < u0.size(); ++i) net.leave(u0[i]);
  for (std::size_t i = 3; i < u2.size(); ++i) net.leave(u2[i]);
  net.drain();
  EXPECT_EQ(net.stats().merges, 2u);
  EXPECT_TRUE(net.oracle().root().is_leaf());
  EXPECT_EQ(net.oracle().root().epoch, epoch + 1);
  EXPECT_CONSISTENT(net);
}

TEST(Merge, PartnerBusyIsRetried) {
  auto net = split_network();
  auto u1 = members(net, "U.1");
  for (std::size_t i = 3; i < u1.size(); ++i) net.leave(u1[i]);  // queues a merge with U.0
  Rng rng(4);
  for (const auto& p : cloud(rng, GeoPoint(-40, -100), 2.0, 33, 500)) net.join(p.name, p.coord);  // queues a split of U.0
  EXPECT_EQ(code_of([&] { net.coordinate_merge(u1[0]); }), Errc::PartnerBusy);
  net.drain();
  EXPECT_GE(net.stats().partner_busy, 1u);
  EXPECT_EQ(net.stats().splits, 1u);
  EXPECT_EQ(net.stats().merges, 1u);
  EXPECT_CONSISTENT(net);
}

// Random churn with silent failures: after quiescence every table equals its
// rebuild, no peer is lost, and a peer's epoch never goes backwards.
TEST(Churn, ConvergesAfterQuiescence) {
  Network net({8, 2, 2}, 9);
  Rng rng(99);
  std::vector<GeoPoint> centres;
  for (int i = 0; i < 5; ++i) centres.push_back(GeoPoint(rng.uniform(-60, 60), rng.uniform(-170, 170)));
  std::map<PeerName, std::uint64_t> epochs;
  std::size_t next = 0;
  for (int step = 0; step < 60; ++step) {
    for (int e = 0; e < 25; ++e) {
      auto live = net.peers();
      double u = rng.uniform();
      if (live.size() < 30 || u < 0.5) {
        auto p = cloud(rng, centres[rng.below(centres.size())], 2.0, 1, next++).front();
        net.join(p.name, p.coord);
      } else if (u < 0.85) {
        net.leave(live[rng.below(live.size())]);
      } else {
        net.fail(live[rng.below(live.size())]);
      }
    }
    net.drain();
    auto live = net.peers();
    for (int r = 0; r < 10 && live.size() > 1; ++r) {
      net.route_peer(live[rng.below(live.size())], net.overlay_id(live[rng.below(live.size())]));
    }
    net.detect_failures();
    net.drain();
    ASSERT_TRUE(net.idle());
    EXPECT_EQ(net.oracle().peer_count(), net.size());
    for (const auto& n : net.peers()) {
      auto ep = net.table(n).epoch;
      auto [it, fresh] = epochs.emplace(n, ep);
      if (!fresh) {
        EXPECT_GE(ep, it->second) << n;
        it->second = ep;
      }
    }
    auto rep = net.verify(500, static_cast<std::uint64_t>(step));
    ASSERT_TRUE(rep.ok()) << "step " << step << ": " << first_problem(rep);
  }
  EXPECT_EQ(net.stats().stale_updates, 0u);
  EXPECT_GT(net.stats().splits, 0u);
  EXPECT_GT(net.stats().merges, 0u);
  EXPECT_GT(net.stats().repairs, 0u);
}

TEST(Churn, Deterministic) {
  auto script = [](Network& net) {
    Rng rng(5);
    std::vector<RouteTrace> traces;
    net.set_event_sink([&](const RouteTrace& t) { traces.push_back(t); });
    for (int i = 0; i < 300; ++i) {
      auto live = net.peers();
      if (live.size() < 10 || rng.uniform() < 0.6) {
        net.join(net.next_name(), test::random_point(rng));
      } else {
        net.leave(live[rng.below(live.size())]);
      }
      net.drain();
    }
    net.set_event_sink(nullptr);
    return io::json(io::state_json(net)).dump() + std::to_string(traces.size());
  };
  Network a({8, 2, 2}, 7), b({8, 2, 2}, 7);
  EXPECT_EQ(script(a), script(b));
}

// Silent failures mixed with joins and leaves, with adaptation work drained at
// random points in between. Every quiescent state must equal the rebuild.
class FailureChurn : public ::testing::TestWithParam<std::tuple<AdaptationPolicy, std::uint64_t>> {};

TEST_P(FailureChurn, TablesMatchRebuildAtQuiescence) {
  auto [policy, seed] = GetParam();
  Network net(policy, seed);
  Rng rng(seed * 7919);
  std::vector<GeoPoint> centres;
  for (int i = 0; i < 5; ++i) centres.push_back(GeoPoint(rng.uniform(-60, 60), rng.uniform(-170, 170)));
  std::size_t next = 0;
  for (int step = 0; step < 50; ++step) {
    for (int e = 0; e < 30; ++e) {
      auto live = net.peers();
      double u = rng.uniform();
      if (live.size() < 30 || u < 0.45) {
        auto p = cloud(rng, centres[rng.below(centres.size())], 2.0, 1, next++).front();
        net.join(p.name, p.coord);
      } else if (u < 0.75) {
        net.leave(live[rng.below(live.size())]);
      } else {
        net.fail(live[rng.below(live.size())]);
      }
      if (rng.uniform() < 0.3) net.drain();
    }
    net.drain();
    auto live = net.peers();
    for (int r = 0; r < 10 && live.size() > 1; ++r) {
      net.route_peer(live[rng.below(live.size())], net.overlay_id(live[rng.below(live.size())]));
      net.route_point(live[rng.below(live.size())], test::random_point(rng));
    }
    net.detect_failures();
    net.drain();
    auto rep = net.verify(200, static_cast<std::uint64_t>(step));
    ASSERT_TRUE(rep.ok()) << "step " << step << ": " << first_problem(rep);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, FailureChurn,
                         ::testing::Combine(::testing::Values(AdaptationPolicy{4, 1, 2}, AdaptationPolicy{8, 2, 2},
                                                              AdaptationPolicy{16, 4, 3}),
                                            ::testing::Values(12u, 15u, 29u, 40u, 56u)));
