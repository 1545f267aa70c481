#include <algorithm>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "geoverlay/zone_tree.hpp"
#include "support.hpp"

using namespace geoverlay;
using geoverlay::test::cloud;
using geoverlay::test::code_of;

namespace {

ZoneTree two_regions_tree() {
  ZoneTree t;
  for (const auto& p : test::two_regions_peers()) t.add_peer(p.name, p.coord);
  t.split_leaf(ZoneId::root(), test::two_regions_policy());
  return t;
}

// Splits every leaf above the threshold until none is left (or it is degenerate).
void settle(ZoneTree& t, const AdaptationPolicy& pol) {
  for (bool again = true; again;) {
    again = false;
    for (const auto& leaf : t.leaves()) {
      if (t.at(leaf).peers.size() <= pol.split_threshold) continue;
      try {
        t.split_leaf(leaf, pol);
        again = true;
      } catch (const Error& e) {
        if (e.code() != Errc::DegenerateCluster) throw;
      }
    }
  }
}

std::set<PeerName> names(const std::vector<PeerPoint>& v) {
  std::set<PeerName> s;
  for (const auto& p : v) s.insert(p.name);
  return s;
}

// Two clouds under a shared root leaf with 33 peers total.
ZoneTree two_cloud_tree(std::uint64_t seed) {
  Rng rng(seed);
  auto a = cloud(rng, GeoPoint(10, 10), 1.0, 17, 0);
  auto b = cloud(rng, GeoPoint(40, 40), 1.0, 16, 17);
  ZoneTree t;
  for (const auto& p : a) t.add_peer(p.name, p.coord);
  for (const auto& p : b) t.add_peer(p.name, p.coord);
  return t;
}

}  // namespace

TEST(LocateLeaf, UnsplitTreeIsRoot) {
  ZoneTree t;
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(t.locate_leaf(test::random_point(rng)).is_root());
}

TEST(LocateLeaf, TwoRegionsPeerH) {
  ZoneTree t = two_regions_tree();
  EXPECT_EQ(t.locate_leaf(GeoPoint(48.20, 16.37)), t.leaf_of("h"));
  EXPECT_EQ(t.leaf_of("h"), ZoneId::parse("U.1"));
  EXPECT_EQ(t.leaf_of("k"), t.leaf_of("h"));
  EXPECT_EQ(t.leaf_of("q"), ZoneId::parse("U.2"));
  EXPECT_EQ(t.leaf_of("r"), t.leaf_of("q"));
  EXPECT_TRUE(t.at(ZoneId::parse("U.0")).is_remainder);
}

TEST(LocateLeaf, MatchesLinearLeafScan) {
  Rng rng(42);
  ZoneTree t;
  std::size_t n = 0;
  for (auto c : {GeoPoint(50, 10), GeoPoint(35, 139), GeoPoint(-30, -60), GeoPoint(40, -100)}) {
    for (const auto& p : cloud(rng, c, 4.0, 60, n)) t.add_peer(p.name, p.coord);
    n += 60;
  }
  settle(t, {8, 2, 2});
  ASSERT_GE(t.max_depth(), 3u);
  ASSERT_TRUE(t.validate(2000).ok());

  auto leaves = t.leaves();
  for (int i = 0; i < 1000; ++i) {
    GeoPoint p = test::random_point(rng);
    std::vector<ZoneId> hits;
    for (const auto& l : leaves) {
      if (t.at(l).region.contains(p)) hits.push_back(l);
    }
    ASSERT_EQ(hits.size(), 1u) << p.to_string();
    EXPECT_EQ(t.locate_leaf(p), hits.front());
  }
}

// Exact 2-means by enumerating every bipartition.
TEST(ClusterPeers, RecoversTwoClouds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto a = cloud(rng, GeoPoint(10, 10), 1.5, 8, 0);
    auto b = cloud(rng, GeoPoint(40, 40), 1.5, 8, 8);
    std::vector<PeerPoint> all = a;
    all.insert(all.end(), b.begin(), b.end());

    const std::size_t n = all.size();
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_mask = 0;
    for (std::uint32_t mask = 1; mask < (1u << n) - 1; ++mask) {
      if (mask & 1u) continue;  // fix point 0 in the zero side to skip mirror images
      double sse = 0;
      for (int side = 0; side < 2; ++side) {
        double la = 0, lo = 0;
        int cnt = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (((mask >> i) & 1u) != static_cast<std::uint32_t>(side)) continue;
          la += all[i].coord.lat();
          lo += all[i].coord.lon();
          ++cnt;
        }
        la /= cnt;
        lo /= cnt;
        for (std::size_t i = 0; i < n; ++i) {
          if (((mask >> i) & 1u) != static_cast<std::uint32_t>(side)) continue;
          double dl = all[i].coord.lat() - la, dn = all[i].coord.lon() - lo;
          sse += dl * dl + dn * dn;
        }
      }
      if (sse < best) {
        best = sse;
        best_mask = mask;
      }
    }
    std::set<PeerName> oracle_a, oracle_b;
    for (std::size_t i = 0; i < n; ++i) ((best_mask >> i) & 1u ? oracle_b : oracle_a).insert(all[i].name);

    auto c = cluster_peers(all, 2);
    ASSERT_EQ(c.groups.size(), 2u);
    auto g0 = names(c.groups[0]), g1 = names(c.groups[1]);
    EXPECT_TRUE((g0 == oracle_a && g1 == oracle_b) || (g0 == oracle_b && g1 == oracle_a)) << "seed " << seed;
    EXPECT_EQ(g0, names(a));
    EXPECT_EQ(g1, names(b));
  }
}

TEST(ClusterPeers, TwoPointsGiveSingletons) {
  std::vector<PeerPoint> pts{{"z", GeoPoint(5, 5)}, {"y", GeoPoint(0, 0)}};
  auto c = cluster_peers(pts, 2);
  ASSERT_EQ(c.groups.size(), 2u);
  ASSERT_EQ(c.groups[0].size(), 1u);
  ASSERT_EQ(c.groups[1].size(), 1u);
  EXPECT_EQ(c.groups[0][0].name, "y");
  EXPECT_EQ(c.groups[1][0].name, "z");
}

TEST(ClusterPeers, IdenticalPointsAreDegenerate) {
  std::vector<PeerPoint> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({test::peer_name(i), GeoPoint(1, 2)});
  EXPECT_EQ(code_of([&] { cluster_peers(pts, 2); }), Errc::DegenerateCluster);
}

TEST(ClusterPeers, DeterministicUnderInputOrder) {
  Rng rng(9);
  auto pts = cloud(rng, GeoPoint(0, 0), 10, 50, 0);
  auto first = cluster_peers(pts, 3);
  std::reverse(pts.begin(), pts.end());
  auto second = cluster_peers(pts, 3);
  ASSERT_EQ(first.groups.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(names(first.groups[i]), names(second.groups[i]));
}

TEST(SplitLeaf, TwoClustersAndRemainder) {
  ZoneTree t = two_cloud_tree(3);
  auto out = t.split_leaf(ZoneId::root(), {32, 4, 2});
  ASSERT_EQ(out.children.size(), 3u);
  EXPECT_FALSE(out.fallback);
  EXPECT_TRUE(out.children[0].is_remainder);
  EXPECT_EQ(out.children[0].id, ZoneId::parse("U.0"));
  EXPECT_TRUE(out.children[0].peers.empty());
  EXPECT_EQ(out.children[1].peers.size() + out.children[2].peers.size(), 33u);
  for (const auto& p : t.coords()) EXPECT_EQ(t.leaf_of(p.first).depth(), 1u);

  Rng rng(11);
  const auto& root = t.root();
  for (int i = 0; i < 100000; ++i) {
    GeoPoint p = test::random_point(rng);
    int hits = 0;
    for (const auto& c : root.children) hits += c.region.contains(p) ? 1 : 0;
    ASSERT_EQ(hits, 1) << p.to_string();
  }
  EXPECT_TRUE(t.validate(10000).ok());
}

TEST(SplitLeaf, BelowThreshold) {
  ZoneTree t;
  Rng rng(4);
  for (const auto& p : cloud(rng, GeoPoint(0, 0), 5, 10, 0)) t.add_peer(p.name, p.coord);
  EXPECT_EQ(code_of([&] { t.split_leaf(ZoneId::root(), {32, 4, 2}); }), Errc::NoSplitNeeded);
  EXPECT_TRUE(t.root().is_leaf());
}

TEST(SplitLeaf, CoLocatedPeersStayPut) {
  ZoneTree t;
  for (int i = 0; i < 33; ++i) t.add_peer(test::peer_name(i), GeoPoint(12.5, 7.25));
  ZoneTree before = t;
  EXPECT_EQ(code_of([&] { t.split_leaf(ZoneId::root(), {32, 4, 2}); }), Errc::DegenerateCluster);
  EXPECT_TRUE(t == before);
}

TEST(SplitLeaf, NotALeaf) {
  ZoneTree t = two_cloud_tree(3);
  t.split_leaf(ZoneId::root(), {32, 4, 2});
  EXPECT_EQ(code_of([&] { t.split_leaf(ZoneId::root(), {32, 4, 2}); }), Errc::NotALeaf);
}

// Groups whose boxes overlap force the cut-based partition without a remainder.
TEST(SplitLeaf, OverlappingBoxesFallBackToCuts) {
  Clustering c;
  c.groups = {{{"a", GeoPoint(0, 0)}, {"b", GeoPoint(10, 10)}}, {{"c", GeoPoint(0, 10)}, {"d", GeoPoint(10, 0)}}};
  c.cuts = {{0, Axis::Lat, 5.0}};
  Region leaf(Rect(-20, 20, -20, 20));
  SplitPlan plan = plan_split(leaf, c);
  EXPECT_TRUE(plan.fallback);
  ASSERT_EQ(plan.children.size(), 2u);
  for (const auto& ch : plan.children) EXPECT_FALSE(ch.is_remainder);
  Rng rng(6);
  for (int i = 0; i < 10000; ++i) {
    GeoPoint p(rng.uniform(-20, 20), rng.uniform(-20, 20));
    int hits = 0;
    for (const auto& ch : plan.children) hits += ch.region.contains(p) ? 1 : 0;
    ASSERT_EQ(hits, 1);
  }
}

TEST(SplitLeaf, KThreeGivesThreeClusterChildren) {
  Rng rng(12);
  ZoneTree t;
  std::size_t n = 0;
  for (auto c : {GeoPoint(-40, -100), GeoPoint(0, 0), GeoPoint(50, 120)}) {
    for (const auto& p : cloud(rng, c, 1.0, 15, n)) t.add_peer(p.name, p.coord);
    n += 15;
  }
  auto out = t.split_leaf(ZoneId::root(), {32, 4, 3});
  std::size_t clusters = 0;
  for (const auto& ch : out.children) clusters += ch.is_remainder ? 0 : 1;
  EXPECT_EQ(clusters, 3u);
  EXPECT_TRUE(t.validate(10000).ok());
}

TEST(MergeLeaf, IntoRemainder) {
  ZoneTree t = two_cloud_tree(3);
  t.split_leaf(ZoneId::root(), {32, 4, 2});
  ZoneId small = ZoneId::parse("U.1");
  auto peers = t.at(small).peers;
  for (std::size_t i = 3; i < peers.size(); ++i) t.remove_peer(peers[i]);
  ASSERT_EQ(t.at(small).peers.size(), 3u);

  ZoneTree before = t;
  auto out = t.merge_leaf(small, {32, 4, 2});
  EXPECT_EQ(out.partner, ZoneId::parse("U.0"));
  EXPECT_EQ(out.merged, ZoneId::parse("U.0"));
  EXPECT_FALSE(out.collapsed);
  EXPECT_EQ(t.at(out.merged).peers.size(), 3u);
  EXPECT_TRUE(t.at(out.merged).is_remainder);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(t.leaf_of(peers[i]), out.merged);

  // the merged region is the union of both
  const Region& u0 = before.at(ZoneId::parse("U.0")).region;
  const Region& u1 = before.at(small).region;
  Rng rng(13);
  for (int i = 0; i < 20000; ++i) {
    GeoPoint p = test::random_point(rng);
    ASSERT_EQ(t.at(out.merged).region.contains(p), u0.contains(p) || u1.contains(p)) << p.to_string();
  }
  EXPECT_TRUE(t.validate(10000).ok());
}

TEST(MergeLeaf, LastTwoCollapse) {
  ZoneTree t = two_cloud_tree(3);
  t.split_leaf(ZoneId::root(), {32, 4, 2});
  auto doomed = t.at(ZoneId::parse("U.1")).peers;
  for (const auto& p : doomed) t.remove_peer(p);
  t.merge_leaf(ZoneId::parse("U.1"), {32, 4, 2});
  ASSERT_EQ(t.root().children.size(), 2u);

  auto rest = t.subtree_peers(t.root());
  auto out = t.merge_with(ZoneId::parse("U.2"), ZoneId::parse("U.0"));
  EXPECT_TRUE(out.collapsed);
  EXPECT_TRUE(out.merged.is_root());
  EXPECT_TRUE(t.root().is_leaf());
  EXPECT_EQ(t.root().peers, rest);
  for (const auto& p : rest) EXPECT_TRUE(t.leaf_of(p).is_root());
  EXPECT_TRUE(t.validate(1000).ok());
}

TEST(MergeLeaf, OnlyInternalSiblings) {
  Rng rng(7);
  ZoneTree t;
  for (const auto& p : cloud(rng, GeoPoint(10, 10), 1.0, 40, 0)) t.add_peer(p.name, p.coord);
  for (const auto& p : cloud(rng, GeoPoint(40, 40), 1.0, 40, 40)) t.add_peer(p.name, p.coord);
  AdaptationPolicy pol{32, 4, 2};
  t.split_leaf(ZoneId::root(), pol);
  t.split_leaf(ZoneId::parse("U.1"), pol);
  t.split_leaf(ZoneId::parse("U.2"), pol);
  ZoneTree before = t;
  EXPECT_EQ(code_of([&] { t.merge_leaf(ZoneId::parse("U.0"), pol); }), Errc::NoLeafSibling);
  EXPECT_TRUE(t == before);
}

TEST(MergeLeaf, AboveThreshold) {
  ZoneTree t = two_cloud_tree(3);
  t.split_leaf(ZoneId::root(), {32, 4, 2});
  EXPECT_EQ(code_of([&] { t.merge_leaf(ZoneId::parse("U.1"), {32, 4, 2}); }), Errc::AboveThreshold);
}

// Without a remainder the partner is the leaf sibling with the fewest peers,
// the smaller label winning ties.
TEST(MergeLeaf, PartnerIsSmallestLeafWithoutRemainder) {
  ZoneTree t;
  SplitPlan plan;
  const double cuts[] = {-180, -60, 60, 180};
  const std::size_t counts[] = {5, 2, 2};
  std::size_t n = 0;
  for (std::uint32_t i = 0; i < 3; ++i) {
    ChildPlan c;
    c.label = i + 1;
    c.region = Region(Rect(-90, 90, cuts[i], cuts[i + 1]));
    for (std::size_t j = 0; j < counts[i]; ++j) {
      PeerPoint p{test::peer_name(n++), GeoPoint(static_cast<double>(j), cuts[i] + 10)};
      t.add_peer(p.name, p.coord);
      c.members.push_back(p);
    }
    plan.children.push_back(c);
  }
  t.apply_split(ZoneId::root(), plan);
  ASSERT_TRUE(t.validate(5000).ok());
  EXPECT_EQ(t.merge_partner(ZoneId::parse("U.1")), ZoneId::parse("U.2"));
  EXPECT_EQ(t.merge_partner(ZoneId::parse("U.2")), ZoneId::parse("U.3"));
  EXPECT_EQ(t.merge_partner(ZoneId::parse("U.3")), ZoneId::parse("U.2"));

  auto out = t.merge_leaf(ZoneId::parse("U.3"), {8, 3, 2});
  EXPECT_EQ(out.merged, ZoneId::parse("U.2"));
  EXPECT_EQ(t.at(out.merged).peers.size(), 4u);
  EXPECT_EQ(t.at(out.merged).epoch, 2u);
  EXPECT_TRUE(t.validate(5000).ok());
}

TEST(MergeLeaf, RemainderKeepsLabelZero) {
  Rng rng(15);
  ZoneTree t;
  std::size_t n = 0;
  for (auto c : {GeoPoint(-40, -100), GeoPoint(0, 0), GeoPoint(50, 120)}) {
    for (const auto& p : cloud(rng, c, 1.0, 12, n)) t.add_peer(p.name, p.coord);
    n += 12;
  }
  t.split_leaf(ZoneId::root(), {32, 4, 3});
  auto rem = ZoneId::parse("U.0");
  ASSERT_TRUE(t.find(rem));
  auto m = t.merge_with(rem, ZoneId::parse("U.2"));
  EXPECT_EQ(m.merged, rem);
  EXPECT_TRUE(t.at(rem).is_remainder);
  EXPECT_FALSE(t.find(ZoneId::parse("U.2")));
  EXPECT_TRUE(t.validate(5000).ok());
}

TEST(Validate, FreshTreeIsClean) {
  EXPECT_TRUE(ZoneTree().validate().ok());
  EXPECT_TRUE(two_regions_tree().validate().ok());
}

TEST(Validate, AfterRandomChurn) {
  Rng rng(2024);
  AdaptationPolicy pol{8, 2, 2};
  ZoneTree t;
  std::vector<PeerName> live;
  std::size_t next = 0;
  std::vector<GeoPoint> centres;
  for (int i = 0; i < 6; ++i) centres.push_back(GeoPoint(rng.uniform(-60, 60), rng.uniform(-170, 170)));
  std::size_t structural = 0;

  for (int ev = 0; ev < 10000; ++ev) {
    bool join = live.size() < 20 || rng.uniform() < 0.55;
    ZoneId touched;
    if (join) {
      const GeoPoint& c = centres[rng.below(centres.size())];
      auto p = cloud(rng, c, 3.0, 1, next++).front();
      touched = t.add_peer(p.name, p.coord);
      live.push_back(p.name);
    } else {
      std::size_t i = rng.below(live.size());
      touched = t.remove_peer(live[i]);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
    }
    const ZoneNode* n = t.find(touched);
    if (!n || !n->is_leaf()) continue;
    if (n->peers.size() > pol.split_threshold) {
      try {
        t.split_leaf(touched, pol);
        ++structural;
      } catch (const Error& e) {
        ASSERT_EQ(e.code(), Errc::DegenerateCluster);
      }
    } else if (!touched.is_root() && n->peers.size() < pol.merge_threshold) {
      try {
        auto out = t.merge_leaf(touched, pol);
        ++structural;
        if (t.at(out.merged).peers.size() > pol.split_threshold) t.split_leaf(out.merged, pol);
      } catch (const Error& e) {
        ASSERT_EQ(e.code(), Errc::NoLeafSibling);
      }
    }
    if (ev % 1000 == 999) {
      auto rep = t.validate(500, static_cast<std::uint64_t>(ev));
      ASSERT_TRUE(rep.ok()) << rep.violations.front().what;
    }
  }
  EXPECT_GT(structural, 100u);
  EXPECT_TRUE(t.validate(10000).ok());
}

TEST(Validate, InjectedOverlapNamesBothZones) {
  ZoneTree t = two_regions_tree();
  ZoneId u1 = ZoneId::parse("U.1"), u2 = ZoneId::parse("U.2");
  Rect grown = t.at(u1).region.outer().hull(t.at(u2).region.outer());
  t.mutable_at(u1).region = Region(grown);
  auto rep = t.validate(2000);
  ASSERT_FALSE(rep.ok());
  bool named = false;
  for (const auto& v : rep.violations) {
    bool has1 = std::find(v.zones.begin(), v.zones.end(), u1) != v.zones.end();
    bool has2 = std::find(v.zones.begin(), v.zones.end(), u2) != v.zones.end();
    named = named || (has1 && has2);
  }
  EXPECT_TRUE(named);
}

TEST(Policy, Hysteresis) {
  EXPECT_NO_THROW((AdaptationPolicy{32, 4, 2}.check()));
  EXPECT_EQ(code_of([] { AdaptationPolicy{15, 4, 2}.check(); }), Errc::InvalidPolicy);
  EXPECT_EQ(code_of([] { AdaptationPolicy{32, 0, 2}.check(); }), Errc::InvalidPolicy);
  EXPECT_EQ(code_of([] { AdaptationPolicy{32, 4, 1}.check(); }), Errc::InvalidPolicy);
}
