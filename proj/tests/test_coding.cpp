#include <gtest/gtest.h>

#include <bit>
#include <random>
#include <set>
#include <sstream>

#include "repsim/coding.hpp"

using namespace repsim;

namespace {

// Independent rank oracle: the span of r independent vectors has 2^r elements.
int span_rank(const std::vector<Column>& v) {
  std::set<Column> span = {0};
  for (Column c : v) {
    std::set<Column> next = span;
    for (Column s : span) next.insert(s ^ c);
    span = std::move(next);
  }
  return std::countr_zero(span.size());
}

FragmentSet set_of(const SrcStructure& s, std::initializer_list<Column> cols) {
  FragmentSet live = 0;
  for (Column c : cols)
    for (int x = 0; x < s.n(); ++x)
      if (s.column(x) == c) live |= FragmentSet{1} << x;
  return live;
}

int index_of(const SrcStructure& s, Column c) {
  for (int x = 0; x < s.n(); ++x)
    if (s.column(x) == c) return x;
  return -1;
}

}  // namespace

TEST(Gamma, EcExamples) {
  EXPECT_EQ(gamma_ec(4, 1), Rational(4));
  EXPECT_EQ(gamma_ec(4, 3), Rational(2));
  EXPECT_EQ(gamma_ec(1, 1), Rational(1));
  EXPECT_THROW(gamma_ec(0, 1), std::invalid_argument);
  EXPECT_THROW(gamma_ec(4, 0), std::invalid_argument);
}

TEST(Gamma, CrgcExamples) {
  EXPECT_EQ(gamma_crgc(6, 4, 1), Rational(2));
  EXPECT_EQ(gamma_crgc(14, 5, 1), Rational(7, 5));
  for (int f = 1; f <= 5; ++f) EXPECT_EQ(gamma_crgc(4, 4, f), gamma_ec(4, f));
  EXPECT_THROW(gamma_crgc(3, 4, 1), std::invalid_argument);
}

TEST(Gamma, SrcIsConstant) {
  for (int f : {1, 3, 7}) EXPECT_EQ(gamma_src(f), Rational(2));
  EXPECT_THROW(gamma_src(0), std::invalid_argument);
}

TEST(Gamma, CrgcBoundedByEcAndNonIncreasingInD) {
  for (int k = 2; k <= 10; ++k)
    for (int f = 1; f <= 6; ++f) {
      Rational prev = gamma_crgc(k, k, f);
      for (int d = k; d <= 50; ++d) {
        const auto g = gamma_crgc(d, k, f);
        EXPECT_LE(g, gamma_ec(k, f));
        EXPECT_EQ(g == gamma_ec(k, f), d == k) << d << ' ' << k << ' ' << f;
        EXPECT_LE(g, prev);
        prev = g;
      }
    }
}

TEST(Gamma, SrcCrossover) {
  for (int k = 2; k <= 10; ++k)
    for (int d = k; d <= 3 * k; ++d) EXPECT_EQ(gamma_src(1) < gamma_crgc(d, k, 1), d < 2 * k - 2) << k << ' ' << d;
}

TEST(UnitTransfer, Examples) {
  EXPECT_EQ(unit_transfer_crgc(12'000'000, 4, 6, 1), 1'000'000u);
  EXPECT_EQ(unit_transfer_crgc(4'000'000, 4, 4, 1), 1'000'000u);
  // 60e6 is not divisible by 5*7
  EXPECT_THROW(unit_transfer_crgc(60'000'000, 5, 10, 2), std::invalid_argument);
  const std::uint64_t B = 35ULL * 1'714'286;
  EXPECT_EQ(unit_transfer_crgc(B, 5, 10, 2) * 7, B / 5);
  EXPECT_THROW(unit_transfer_crgc(100, 4, 3, 1), std::invalid_argument);
}

TEST(UnitTransfer, TotalMatchesGamma) {
  for (int k = 2; k <= 6; ++k)
    for (int f = 1; f <= 3; ++f)
      for (int d = k; d <= k + 5; ++d) {
        const std::uint64_t B = static_cast<std::uint64_t>(k) * (d - k + f) * 1000;
        const auto unit = unit_transfer_crgc(B, k, d, f);
        // d downloads plus f-1 exchanged units per newcomer, in units of B/k
        const Rational total(static_cast<std::int64_t>(unit * (d + f - 1)), static_cast<std::int64_t>(B / k));
        EXPECT_EQ(total, gamma_crgc(d, k, f));
      }
}

TEST(Gf2, RankAgreesWithSpanSize) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 6);
    const int count = 1 + static_cast<int>(rng() % 8);
    std::vector<Column> v;
    for (int i = 0; i < count; ++i) v.push_back(static_cast<Column>(rng() % (1u << k)));
    EXPECT_EQ(gf2_rank(v), span_rank(v));
  }
}

TEST(Gf2, ColumnBitsRoundTrip) {
  EXPECT_EQ(column_bits(1, 3), "001");
  EXPECT_EQ(column_bits(6, 3), "110");
  EXPECT_EQ(parse_column_bits("101"), 5u);
  EXPECT_THROW(parse_column_bits("10x"), std::invalid_argument);
}

TEST(Homomorphic, SevenThree) {
  const auto s = build_homomorphic_structure(3);
  EXPECT_EQ(s.n(), 7);
  const int x = index_of(s, 0b001);
  ASSERT_EQ(s.pairs(x).size(), 3u);
  std::set<std::set<Column>> got;
  for (auto p : s.pairs(x)) got.insert({s.column(p.first), s.column(p.second)});
  const std::set<std::set<Column>> want = {{0b010, 0b011}, {0b100, 0b101}, {0b110, 0b111}};
  EXPECT_EQ(got, want);
}

TEST(Homomorphic, PairCounts) {
  const auto s2 = build_homomorphic_structure(2);
  EXPECT_EQ(s2.n(), 3);
  for (int x = 0; x < 3; ++x) EXPECT_EQ(s2.pairs(x).size(), 1u);
  const auto s4 = build_homomorphic_structure(4);
  EXPECT_EQ(s4.n(), 15);
  for (int x = 0; x < 15; ++x) EXPECT_EQ(s4.pairs(x).size(), 7u);
  EXPECT_THROW(build_homomorphic_structure(1), std::invalid_argument);
}

TEST(Homomorphic, RankDecidesRecoverability) {
  const CodeConfig code(7, 3, Family::src, 0, std::make_shared<const SrcStructure>(build_homomorphic_structure(3)));
  const auto& s = *code.structure;
  EXPECT_FALSE(is_recoverable(code, set_of(s, {0b001, 0b010, 0b011})));
  EXPECT_TRUE(is_recoverable(code, set_of(s, {0b001, 0b010, 0b100})));
  for (FragmentSet live = 0; live < 128; ++live) {
    std::vector<Column> cols;
    for (int x = 0; x < 7; ++x)
      if (live >> x & 1) cols.push_back(s.column(x));
    EXPECT_EQ(is_recoverable(code, live), span_rank(cols) == 3);
  }
}

TEST(Heuristic, SevenThreeReachesHomomorphicOptimum) {
  for (std::uint64_t seed : {1, 2, 99}) {
    const auto s = build_heuristic_structure(7, 3, seed);
    for (int x = 0; x < 7; ++x) EXPECT_EQ(s.pairs(x).size(), 3u);
  }
}

TEST(Heuristic, SevenFour) {
  const auto s = build_heuristic_structure(7, 4, 7);
  for (int x = 0; x < 7; ++x) EXPECT_GE(s.pairs(x).size(), 1u);
  const CodeConfig code(7, 4, Family::src, 0, std::make_shared<const SrcStructure>(s));
  int bad = 0;
  for (FragmentSet live = 0; live < 128; ++live)
    if (std::popcount(live) == 4 && !is_recoverable(code, live)) ++bad;
  EXPECT_GT(bad, 0);
  EXPECT_LT(bad, 35);
}

TEST(Heuristic, SingleParity) {
  for (int k = 2; k <= 6; ++k) {
    const auto s = build_heuristic_structure(k + 1, k, 1);
    EXPECT_EQ(gf2_rank(s.columns()), k);
    int units = 0;
    for (Column c : s.columns()) units += std::popcount(c) == 1 ? 1 : 0;
    EXPECT_EQ(units, k);
    // a fragment has a pair exactly when its column is the XOR of two others
    for (int x = 0; x < s.n(); ++x) {
      bool relation = false;
      for (int y = 0; y < s.n(); ++y)
        for (int z = y + 1; z < s.n(); ++z)
          if (y != x && z != x && (s.column(y) ^ s.column(z)) == s.column(x)) relation = true;
      EXPECT_EQ(!s.pairs(x).empty(), relation);
    }
  }
}

TEST(Heuristic, FifteenFiveIsValidAndDeterministic) {
  const auto a = build_heuristic_structure(15, 5, 7);
  const auto b = build_heuristic_structure(15, 5, 7);
  EXPECT_EQ(a, b);
  EXPECT_EQ(gf2_rank(a.columns()), 5);
  for (int x = 0; x < 15; ++x) EXPECT_GE(a.pairs(x).size(), 1u);
}

TEST(Heuristic, RejectsBadShapes) {
  EXPECT_THROW(build_heuristic_structure(4, 4, 1), std::invalid_argument);
  EXPECT_THROW(build_heuristic_structure(3, 1, 1), std::invalid_argument);
  // only 4 vectors of weight >= 2 exist in GF(2)^3
  EXPECT_THROW(build_heuristic_structure(8, 3, 1), std::invalid_argument);
}

TEST(Structure, EveryPairXorsToItsFragment) {
  for (const auto& s : {build_homomorphic_structure(3), build_homomorphic_structure(4),
                        build_heuristic_structure(7, 4, 7), build_heuristic_structure(15, 5, 7)}) {
    for (int x = 0; x < s.n(); ++x) {
      FragmentSet used = 0;
      EXPECT_LE(static_cast<int>(s.pairs(x).size()), (s.n() - 1) / 2);
      for (auto p : s.pairs(x)) {
        EXPECT_EQ(s.column(p.first) ^ s.column(p.second), s.column(x));
        const FragmentSet bits = (FragmentSet{1} << p.first) | (FragmentSet{1} << p.second);
        EXPECT_EQ(used & bits, 0u);
        used |= bits;
      }
    }
  }
}

TEST(Structure, TextRoundTrip) {
  for (const auto& s : {build_homomorphic_structure(3), build_heuristic_structure(15, 5, 7)}) {
    std::istringstream is(s.to_text());
    EXPECT_EQ(SrcStructure::read(is), s);
  }
  const auto text = build_homomorphic_structure(3).to_text();
  EXPECT_NE(text.find("0 001 | 1:2,3:4,5:6"), std::string::npos) << text;
}

TEST(Structure, RejectsInvalidInput) {
  std::istringstream bad_xor("0 01 | 1:2\n1 10 |\n2 01 |\n");
  EXPECT_THROW(SrcStructure::read(bad_xor), std::invalid_argument);
  std::istringstream no_bar("0 01\n");
  EXPECT_THROW(SrcStructure::read(no_bar), std::invalid_argument);
  EXPECT_THROW(SrcStructure::from_columns(2, {1, 2, 0}), std::invalid_argument);
  EXPECT_THROW(SrcStructure::from_columns(2, {1, 2, 2}), std::invalid_argument);
  EXPECT_THROW(SrcStructure::from_parts(2, {1, 2, 3}, {{{1, 2}}, {{0, 2}}, {{0, 1}, {0, 1}}}), std::invalid_argument);
}

TEST(RepairPairs, Examples) {
  const auto s = build_homomorphic_structure(3);
  const int x = index_of(s, 0b001);
  const FragmentSet others = ((FragmentSet{1} << 7) - 1) & ~(FragmentSet{1} << x);
  EXPECT_EQ(repair_pairs(s, x, others).size(), 3u);
  EXPECT_TRUE(repair_pairs(s, x, 0).empty());
  const auto p = repair_pairs(s, x, set_of(s, {0b010, 0b011, 0b100}));
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ((std::set<Column>{s.column(p[0].first), s.column(p[0].second)}), (std::set<Column>{0b010, 0b011}));
}

TEST(Recoverability, MdsThreshold) {
  const CodeConfig code(7, 4, Family::crgc);
  EXPECT_TRUE(is_recoverable(code, 0b0001111));
  EXPECT_FALSE(is_recoverable(code, 0b0000111));
}

TEST(Recoverability, Monotone) {
  const CodeConfig code(15, 5, Family::src, 0, default_structure(15, 5, 7));
  std::mt19937_64 rng(5);
  for (int t = 0; t < 2000; ++t) {
    const FragmentSet live = rng() & code.all_fragments();
    if (!is_recoverable(code, live)) continue;
    const FragmentSet more = live | (FragmentSet{1} << (rng() % 15));
    EXPECT_TRUE(is_recoverable(code, more));
  }
}

TEST(CodeConfig, Invariants) {
  EXPECT_THROW(CodeConfig(4, 4, Family::ec), std::invalid_argument);
  EXPECT_THROW(CodeConfig(4, 0, Family::ec), std::invalid_argument);
  EXPECT_THROW(CodeConfig(7, 4, Family::ec, 10), std::invalid_argument);
  EXPECT_THROW(CodeConfig(7, 3, Family::src), std::invalid_argument);
  EXPECT_THROW(CodeConfig(7, 3, Family::src, 0, default_structure(7, 4, 1)), std::invalid_argument);
  EXPECT_EQ(CodeConfig(7, 4, Family::ec, 400).fragment_size(), 100u);
}

TEST(RepairSpec, Constraints) {
  const CodeConfig code(7, 4, Family::ec);
  EXPECT_NO_THROW(validate_repair_spec(code, Family::ec, {4, 3}));
  EXPECT_THROW(validate_repair_spec(code, Family::ec, {4, 4}), std::invalid_argument);
  EXPECT_THROW(validate_repair_spec(code, Family::ec, {5, 1}), std::invalid_argument);
  EXPECT_NO_THROW(validate_repair_spec(code, Family::rgc, {6, 1}));
  EXPECT_THROW(validate_repair_spec(code, Family::rgc, {7, 1}), std::invalid_argument);
  EXPECT_THROW(validate_repair_spec(code, Family::rgc, {6, 2}), std::invalid_argument);
  EXPECT_NO_THROW(validate_repair_spec(code, Family::crgc, {5, 2}));
  EXPECT_THROW(validate_repair_spec(code, Family::crgc, {6, 2}), std::invalid_argument);
  EXPECT_NO_THROW(validate_repair_spec(code, Family::src, {2, 3}));
  EXPECT_THROW(validate_repair_spec(code, Family::src, {3, 1}), std::invalid_argument);
  EXPECT_THROW(validate_repair_spec(code, Family::src, {2, 4}), std::invalid_argument);
}

TEST(Family, ParseAndPrint) {
  for (auto f : {Family::ec, Family::rgc, Family::crgc, Family::src, Family::srcp})
    EXPECT_EQ(parse_family(to_string(f)), f);
  EXPECT_THROW(parse_family("LRC"), std::invalid_argument);
}
