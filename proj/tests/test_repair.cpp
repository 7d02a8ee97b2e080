#include <gtest/gtest.h>

#include <numeric>

#include "repsim/repair.hpp"

using namespace repsim;

namespace {

CodeConfig make_code(int n, int k, Family fam, std::uint64_t packets) {
  const std::uint64_t B = static_cast<std::uint64_t>(k) * packets;
  if (is_mds(fam)) return {n, k, fam, B};
  return {n, k, fam, B, default_structure(n, k, 7)};
}

/// One placement, one world (beta = 1 byte), one simulation.
struct Bench {
  CodeConfig code;
  PlacementMap placement;
  World world;
  RepairSimulation sim;

  Bench(CodeConfig c, StrategySpec s, PlacementConfig pc, std::uint64_t seed = 1)
      : code(std::move(c)), placement(place_with(pc, seed)), world(pc.N_total, SimParams{1e9, 0.8, 1}, seed),
        sim(code, s, placement, world, seed) {}

  static PlacementMap place_with(const PlacementConfig& pc, std::uint64_t seed) {
    auto rng = make_rng(seed, Stream::placement);
    return place(pc, rng);
  }

  Damage fail(std::vector<NodeId> nodes) {
    std::sort(nodes.begin(), nodes.end());
    return assess_damage(placement, code, nodes);
  }

  /// Fails the holders of the given fragments of object 0 and starts repair.
  void fail_fragments(std::initializer_list<int> fragments) {
    std::vector<NodeId> nodes;
    for (int f : fragments) nodes.push_back(placement.node_of(0, f));
    sim.start(fail(nodes));
  }

  RunResult run() {
    sim.run();
    return sim.result();
  }
};

std::uint64_t total_bytes(const RunResult& r) {
  return std::accumulate(r.records.begin(), r.records.end(), std::uint64_t{0},
                         [](std::uint64_t a, const RepairRecord& rec) { return a + rec.bytes; });
}

PlacementConfig one_object(std::uint32_t nodes, int n) { return {nodes, nodes, 1, n}; }

}  // namespace

TEST(Strategy, ParseAndLabel) {
  EXPECT_EQ(StrategySpec::parse("RGC:6"), (StrategySpec{Family::rgc, 6}));
  EXPECT_EQ(StrategySpec::parse("RGC(d=6)"), (StrategySpec{Family::rgc, 6}));
  EXPECT_EQ(StrategySpec::parse("CRGC").label(), "CRGC");
  EXPECT_EQ(StrategySpec::parse("SRCp").label(), "SRCp");
  EXPECT_EQ((StrategySpec{Family::rgc, 5}).label(), "RGC(d=5)");
  EXPECT_THROW(StrategySpec::parse("RGC"), std::invalid_argument);
  EXPECT_THROW(StrategySpec::parse("XYZ"), std::invalid_argument);
}

TEST(Strategy, MustMatchCodeFamily) {
  const auto code = make_code(7, 4, Family::ec, 12);
  auto rng = make_rng(1, Stream::placement);
  const auto map = place(one_object(20, 7), rng);
  World w(20, SimParams{1e9, 0.8, 1}, 1);
  EXPECT_THROW(RepairSimulation(code, StrategySpec{Family::src, 0}, map, w, 1), std::invalid_argument);
  EXPECT_THROW(RepairSimulation(code, StrategySpec{Family::rgc, 7}, map, w, 1), std::invalid_argument);
}

TEST(Failure, ChoosesFloorThetaDistinctNodes) {
  auto rng = make_rng(1, Stream::failure);
  const auto nodes = choose_failed_nodes(FailureEvent::correlated(0.3), 1000, rng);
  EXPECT_EQ(nodes.size(), 300u);
  EXPECT_TRUE(std::is_sorted(nodes.begin(), nodes.end()));
  EXPECT_EQ(std::adjacent_find(nodes.begin(), nodes.end()), nodes.end());
  EXPECT_TRUE(choose_failed_nodes(FailureEvent::correlated(0.005), 100, rng).empty());
  EXPECT_THROW(choose_failed_nodes(FailureEvent::correlated(1.0), 100, rng), std::invalid_argument);
  EXPECT_EQ(choose_failed_nodes(FailureEvent::single(NodeId{5}), 100, rng), std::vector<NodeId>{5});
}

TEST(Failure, NoFailedNodesMeansNoWork) {
  Bench b(make_code(7, 4, Family::ec, 12), {Family::ec, 0}, {100, 100, 50, 7});
  auto rng = make_rng(1, Stream::failure);
  b.sim.start(inject_failure(b.placement, b.code, FailureEvent::correlated(0.005), rng));
  EXPECT_TRUE(b.sim.finished());
  EXPECT_TRUE(b.run().records.empty());
}

TEST(Failure, FullClusteredSpawnsOneProcessPerObjectInCluster) {
  Bench b(make_code(7, 4, Family::rgc, 12), {Family::rgc, 6}, {21, 7, 9, 7});
  b.sim.start(b.fail({10}));
  const auto r = b.run();
  EXPECT_EQ(r.records.size(), 9u);
  for (const auto& rec : r.records) {
    EXPECT_FALSE(rec.lost);
    EXPECT_FALSE(rec.fallback);
    EXPECT_EQ(rec.object / 9, 1u);
  }
}

TEST(Failure, HalfTheNodesLoseHalfTheObjectsForSevenFour) {
  const CodeConfig code(7, 4, Family::crgc);
  auto prng = make_rng(3, Stream::placement);
  const auto map = place({1000, 1000, 100000, 7}, prng);
  auto frng = make_rng(3, Stream::failure);
  const auto dmg = inject_failure(map, code, FailureEvent::correlated(0.5), frng);
  EXPECT_NEAR(static_cast<double>(dmg.lost_objects()) / 100000.0, 0.5, 0.005);
}

TEST(Failure, LossIsDecidedBySurvivorsAlone) {
  const CodeConfig code(7, 3, Family::src, 0, default_structure(7, 3, 7));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto prng = make_rng(seed, Stream::placement);
    const auto map = place({60, 60, 200, 7}, prng);
    auto frng = make_rng(seed, Stream::failure);
    const auto dmg = inject_failure(map, code, FailureEvent::correlated(0.4), frng);
    for (const auto& o : dmg.objects) {
      EXPECT_EQ(o.survivors, code.all_fragments() & ~o.lost);
      EXPECT_EQ(o.recoverable, is_recoverable(code, o.survivors));
    }
  }
}

TEST(Ec, SingleFailureMovesTheWholeObject) {
  const std::uint64_t P = 20;
  Bench b(make_code(7, 4, Family::ec, P), {Family::ec, 0}, one_object(20, 7));
  b.fail_fragments({2});
  const auto r = b.run();
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].bytes, 4 * P);
  EXPECT_EQ(r.records[0].duration(), 4 * P);
}

TEST(Ec, LazyBatchOfThree) {
  const std::uint64_t P = 20;
  Bench b(make_code(7, 4, Family::ec, P), {Family::ec, 0}, one_object(20, 7));
  b.fail_fragments({0, 3, 5});
  const auto r = b.run();
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(total_bytes(r), 6 * P);  // k downloads + f-1 forwards
  for (const auto& rec : r.records) EXPECT_FALSE(rec.lost);
}

TEST(Ec, TooFewSurvivorsIsLost) {
  Bench b(make_code(7, 4, Family::ec, 20), {Family::ec, 0}, one_object(20, 7));
  b.fail_fragments({0, 1, 2, 3});
  const auto r = b.run();
  EXPECT_EQ(r.lost_objects, 1u);
  ASSERT_EQ(r.records.size(), 4u);
  for (const auto& rec : r.records) {
    EXPECT_TRUE(rec.lost);
    EXPECT_EQ(rec.bytes, 0u);
  }
}

TEST(Rgc, IdleRepairEngagesAllSourcesAtOnce) {
  const std::uint64_t P = 24;
  Bench b(make_code(7, 4, Family::rgc, P), {Family::rgc, 6}, one_object(20, 7));
  b.fail_fragments({1});
  b.sim.step();
  EXPECT_EQ(b.sim.processes()[0].sources.size(), 6u);
  const auto r = b.run();
  EXPECT_EQ(r.records[0].bytes, 2 * P);
  EXPECT_EQ(r.records[0].duration(), 2 * P);
}

TEST(Rgc, SkipsAPermanentlyOverloadedHolder) {
  const std::uint64_t P = 24;
  Bench b(make_code(8, 4, Family::rgc, P), {Family::rgc, 6}, one_object(20, 8));
  const NodeId busy = b.placement.node_of(0, 5);
  b.world.overload_until(busy, std::numeric_limits<Step>::max());
  b.fail_fragments({0});
  const auto r = b.run();
  const auto& sources = b.sim.processes()[0].sources;
  EXPECT_EQ(sources.size(), 6u);
  EXPECT_EQ(std::count(sources.begin(), sources.end(), busy), 0);
  EXPECT_EQ(b.world.uploaded_packets(busy), 0u);
  EXPECT_FALSE(r.records[0].fallback);
}

TEST(Rgc, FallsBackWhenFewerThanDHoldersSurvive) {
  const std::uint64_t P = 24;
  Bench b(make_code(7, 4, Family::rgc, P), {Family::rgc, 6}, one_object(20, 7));
  b.fail_fragments({0, 2, 4});
  const auto r = b.run();
  ASSERT_EQ(r.records.size(), 3u);
  for (const auto& rec : r.records) EXPECT_TRUE(rec.fallback);
  EXPECT_EQ(total_bytes(r), 6 * P);  // (4+2)/3 fragments per failure
}

TEST(Crgc, TwoFailuresWithDFive) {
  const std::uint64_t P = 24;
  Bench b(make_code(7, 4, Family::crgc, P), {Family::crgc, 0}, one_object(20, 7));
  b.fail_fragments({1, 6});
  const auto r = b.run();
  ASSERT_EQ(r.records.size(), 2u);
  const std::uint64_t unit = unit_transfer_crgc(4 * P, 4, 5, 2);
  EXPECT_EQ(total_bytes(r), 2 * (5 + 1) * unit);
  EXPECT_EQ(total_bytes(r), 2 * 2 * P);  // gamma = 2 fragments per failure
  // exchange phase: f*(f-1) units sent newcomer to newcomer
  const NodeId a = b.sim.processes()[0].newcomer;
  const NodeId c = b.sim.processes()[1].newcomer;
  EXPECT_EQ(b.world.uploaded_packets(a) + b.world.uploaded_packets(c), 2 * unit);
}

TEST(Crgc, SingleFailureDegeneratesToRgc) {
  const std::uint64_t P = 24;
  Bench crgc(make_code(7, 4, Family::crgc, P), {Family::crgc, 0}, one_object(20, 7), 3);
  Bench rgc(make_code(7, 4, Family::rgc, P), {Family::rgc, 6}, one_object(20, 7), 3);
  crgc.fail_fragments({4});
  rgc.fail_fragments({4});
  const auto a = crgc.run();
  const auto c = rgc.run();
  EXPECT_EQ(a.records[0].bytes, c.records[0].bytes);
  EXPECT_EQ(a.records[0].duration(), c.records[0].duration());
}

TEST(Src, IdleRepairTakesTwoFragmentTimes) {
  const std::uint64_t P = 16;
  Bench b(make_code(7, 3, Family::src, P), {Family::src, 0}, one_object(20, 7));
  b.fail_fragments({0});
  const auto r = b.run();
  EXPECT_EQ(r.records[0].duration(), 2 * P);
  EXPECT_EQ(r.records[0].bytes, 2 * P);
  EXPECT_FALSE(r.records[0].fallback);
}

TEST(Srcp, IdleRepairTakesOneFragmentTimePlusOne) {
  const std::uint64_t P = 16;
  Bench b(make_code(7, 3, Family::srcp, P), {Family::srcp, 0}, one_object(20, 7));
  b.fail_fragments({0});
  const auto r = b.run();
  EXPECT_EQ(r.records[0].duration(), P + 1);
  EXPECT_EQ(r.records[0].bytes, 2 * P);
}

TEST(Srcp, WaitsForAPairThenPipelines) {
  const std::uint64_t P = 16;
  Bench b(make_code(7, 3, Family::srcp, P), {Family::srcp, 0}, one_object(20, 7));
  for (int f = 1; f < 7; ++f) b.world.overload_until(b.placement.node_of(0, f), 10);
  b.fail_fragments({0});
  const auto r = b.run();
  EXPECT_EQ(r.records[0].end_step, 10 + P + 1);
}

TEST(Srcp, NeverSlowerThanSrcOnIdlePairs) {
  const std::uint64_t P = 32;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Bench src(make_code(7, 4, Family::src, P), {Family::src, 0}, {60, 60, 4, 7}, seed);
    Bench srcp(make_code(7, 4, Family::srcp, P), {Family::srcp, 0}, {60, 60, 4, 7}, seed);
    const NodeId node = src.placement.node_of(0, static_cast<int>(seed % 7));
    src.sim.start(src.fail({node}));
    srcp.sim.start(srcp.fail({node}));
    const auto a = src.run();
    const auto c = srcp.run();
    ASSERT_EQ(a.records.size(), c.records.size());
    double ta = 0, tc = 0;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      ta += static_cast<double>(a.records[i].duration());
      tc += static_cast<double>(c.records[i].duration());
    }
    EXPECT_LE(tc, ta) << "seed " << seed;
  }
}

TEST(Src, PairlessButRecoverableFallsBack) {
  const std::uint64_t P = 16;
  Bench b(make_code(7, 3, Family::src, P), {Family::src, 0}, one_object(20, 7));
  // homomorphic (7,3): fragment i has column i+1; losing 001,010,100,110
  // breaks every pair of 001 while 011,101,111 still span GF(2)^3
  b.fail_fragments({0, 1, 3, 5});
  const auto r = b.run();
  EXPECT_EQ(r.lost_objects, 0u);
  bool saw = false;
  for (const auto& rec : r.records) {
    EXPECT_FALSE(rec.lost);
    if (rec.fragment == 0) {
      EXPECT_TRUE(rec.fallback);
      saw = true;
    }
  }
  EXPECT_TRUE(saw);
  EXPECT_GT(total_bytes(r), 2 * P * 4);
}

TEST(Src, LivePairsMeanNoFallback) {
  Bench b(make_code(7, 3, Family::src, 16), {Family::src, 0}, {40, 40, 30, 7});
  b.sim.start(b.fail({3}));
  for (const auto& rec : b.run().records) EXPECT_FALSE(rec.fallback);
}

TEST(Src, RepairedColumnIsXorOfSources) {
  Bench b(make_code(15, 4, Family::src, 8), {Family::src, 0}, {60, 60, 40, 15});
  b.sim.start(b.fail({7, 21}));
  b.run();
  const auto& s = *b.code.structure;
  for (const auto& p : b.sim.processes()) {
    if (p.fallback || p.phase != Phase::done) continue;
    ASSERT_EQ(p.sources.size(), 2u);
    const auto& holders = b.placement.nodes_of(p.object);
    auto frag = [&](NodeId n) {
      return static_cast<int>(std::find(holders.begin(), holders.end(), n) - holders.begin());
    };
    EXPECT_EQ(s.column(frag(p.sources[0])) ^ s.column(frag(p.sources[1])), s.column(p.fragment));
  }
}

TEST(Src, CrashOfPairMemberReselects) {
  const std::uint64_t P = 16;
  Bench b(make_code(7, 3, Family::src, P), {Family::src, 0}, one_object(20, 7));
  b.fail_fragments({0});
  for (int i = 0; i < 5; ++i) b.sim.step();
  const NodeId victim = b.sim.processes()[0].sources[0];
  b.sim.crash_node(victim);
  const auto r = b.run();
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_FALSE(r.records[0].lost);
  EXPECT_FALSE(r.records[0].fallback);
  const auto& sources = b.sim.processes()[0].sources;
  EXPECT_EQ(std::count(sources.begin(), sources.end(), victim), 0);
  EXPECT_GT(r.records[0].bytes, 2 * P);  // the first attempt's packets are wasted
}

TEST(Repair, CrashedNewcomerIsReplaced) {
  const std::uint64_t P = 24;
  Bench b(make_code(7, 4, Family::rgc, P), {Family::rgc, 6}, one_object(20, 7));
  b.fail_fragments({3});
  for (int i = 0; i < 4; ++i) b.sim.step();
  const NodeId old = b.sim.processes()[0].newcomer;
  b.sim.crash_node(old);
  const auto r = b.run();
  EXPECT_NE(b.sim.processes()[0].newcomer, old);
  EXPECT_EQ(b.sim.processes()[0].phase, Phase::done);
  EXPECT_GT(r.records[0].bytes, 2 * P);
}

TEST(Repair, NoPacketFromFailedOrOverloadedNodes) {
  for (const char* s : {"EC", "RGC:5", "CRGC", "SRC", "SRCp"}) {
    const auto spec = StrategySpec::parse(s);
    Bench b(make_code(7, 4, spec.family, 12), spec, {80, 80, 60, 7}, 5);
    b.world.set_overload({8.0, 6.0});
    auto frng = make_rng(5, Stream::failure);
    const auto failed = choose_failed_nodes(FailureEvent::correlated(0.2), 80, frng);
    b.sim.start(b.fail(failed));
    b.world.set_packet_observer([&](const PacketEvent& e) {
      EXPECT_TRUE(b.world.is_active(e.src)) << s;
      EXPECT_TRUE(b.world.is_active(e.dst)) << s;
      EXPECT_FALSE(std::binary_search(failed.begin(), failed.end(), e.src) &&
                   std::none_of(b.sim.processes().begin(), b.sim.processes().end(),
                                [&](const RepairProcess& p) { return p.newcomer == e.src; }))
          << s;
    });
    const auto r = b.run();
    for (const auto& rec : r.records) EXPECT_TRUE(rec.lost || rec.end_step >= rec.start_step);
  }
}

TEST(Repair, SingleFailureTrafficMatchesGamma) {
  struct Case {
    const char* strategy;
    Rational gamma;
  };
  for (const auto& c : {Case{"EC", gamma_ec(4, 1)}, Case{"RGC:4", gamma_crgc(4, 4, 1)},
                        Case{"RGC:5", gamma_crgc(5, 4, 1)}, Case{"RGC:6", gamma_crgc(6, 4, 1)},
                        Case{"SRC", gamma_src(1)}, Case{"SRCp", gamma_src(1)}}) {
    const auto spec = StrategySpec::parse(c.strategy);
    const std::uint64_t P = 24;
    std::uint64_t bytes = 0, repairs = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Bench b(make_code(7, 4, spec.family, P), spec, {100, 100, 100, 7}, seed);
      auto frng = make_rng(seed, Stream::failure);
      b.sim.start(inject_failure(b.placement, b.code, FailureEvent::single(), frng));
      const auto r = b.run();
      bytes += total_bytes(r);
      repairs += r.records.size();
    }
    const double expected = boost::rational_cast<double>(c.gamma) * static_cast<double>(P);
    EXPECT_NEAR(static_cast<double>(bytes) / static_cast<double>(repairs), expected, 0.05 * expected) << c.strategy;
  }
}

TEST(Repair, RepairLogFormat) {
  Bench b(make_code(7, 4, Family::ec, 4), {Family::ec, 0}, one_object(20, 7));
  b.fail_fragments({0});
  const auto r = b.run();
  std::ostringstream os;
  write_repair_log(os, r.records);
  EXPECT_EQ(os.str(), "object,fragment,strategy,start_step,end_step,bytes,fallback,lost\n0,0,EC,0,16,16,0,0\n");
}
