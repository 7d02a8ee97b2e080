#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <istream>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/rational.hpp>

namespace repsim {

using Rational = boost::rational<std::int64_t>;
using Column = std::uint32_t;  // length-k GF(2) vector, bit i = object piece i
using FragmentSet = std::uint64_t;  // bitmask over fragment indices

inline constexpr int kMaxFragments = 63;
inline constexpr int kMaxPieces = 31;

enum class Family { ec, rgc, crgc, src, srcp };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::ec: return "EC";
    case Family::rgc: return "RGC";
    case Family::crgc: return "CRGC";
    case Family::src: return "SRC";
    case Family::srcp: return "SRCp";
  }
  return "?";
}

inline Family parse_family(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "ec") return Family::ec;
  if (s == "rgc") return Family::rgc;
  if (s == "crgc") return Family::crgc;
  if (s == "src") return Family::src;
  if (s == "srcp") return Family::srcp;
  throw std::invalid_argument("unknown code family '" + s + "'");
}

inline bool is_mds(Family f) { return f != Family::src && f != Family::srcp; }

// ---------------------------------------------------------------------------
// Normalized repair traffic, in units of one fragment (B/k).

/// Lazy erasure-code repair: one reconstructor downloads k fragments and
/// forwards f-1 of them, amortized over f failures.
inline Rational gamma_ec(std::int64_t k, std::int64_t f) {
  if (k < 1 || f < 1) throw std::invalid_argument("gamma_ec: k and f must be positive");
  return Rational(k + f - 1, f);
}

/// Collaborative regenerating repair of f failures contacting d holders each.
inline Rational gamma_crgc(std::int64_t d, std::int64_t k, std::int64_t f) {
  if (k < 1 || f < 1) throw std::invalid_argument("gamma_crgc: k and f must be positive");
  if (d < k) throw std::invalid_argument("gamma_crgc: repair degree d must be >= k");
  return Rational(d + f - 1, d - k + f);
}

inline Rational gamma_src(std::int64_t f) {
  if (f < 1) throw std::invalid_argument("gamma_src: f must be positive");
  return Rational(2 * f, f);
}

/// Bytes each contacted holder sends to a newcomer in a (C)RGC repair. The
/// same amount is exchanged between every ordered pair of newcomers.
inline std::uint64_t unit_transfer_crgc(std::uint64_t object_bytes, std::int64_t k, std::int64_t d,
                                        std::int64_t f) {
  if (k < 1 || f < 1 || d < k) throw std::invalid_argument("unit_transfer_crgc: need d >= k >= 1, f >= 1");
  const auto denom = static_cast<std::uint64_t>(k * (d - k + f));
  if (object_bytes % denom != 0) {
    throw std::invalid_argument("unit_transfer_crgc: B=" + std::to_string(object_bytes) +
                                " is not divisible by k*(d-k+f)=" + std::to_string(denom));
  }
  return object_bytes / denom;
}

// ---------------------------------------------------------------------------
// GF(2) helpers

inline int gf2_rank(const std::vector<Column>& vectors) {
  std::vector<Column> basis;
  for (Column v : vectors) {
    for (Column b : basis) v = std::min(v, v ^ b);
    if (v != 0) {
      basis.push_back(v);
      // keep basis sorted descending so the min-reduction above is a valid elimination
      std::sort(basis.begin(), basis.end(), std::greater<>());
    }
  }
  return static_cast<int>(basis.size());
}

inline std::string column_bits(Column c, int k) {
  std::string s(static_cast<std::size_t>(k), '0');
  for (int i = 0; i < k; ++i)
    if (c & (Column{1} << i)) s[static_cast<std::size_t>(k - 1 - i)] = '1';
  return s;
}

inline Column parse_column_bits(const std::string& s) {
  Column c = 0;
  for (char ch : s) {
    if (ch != '0' && ch != '1') throw std::invalid_argument("bad column bits '" + s + "'");
    c = (c << 1) | Column(ch == '1');
  }
  return c;
}

struct RepairPair {
  int first;
  int second;
  friend bool operator==(const RepairPair&, const RepairPair&) = default;
};

/// XOR structure of a self-repairing code: a generator column per fragment
/// and, per fragment, the disjoint pairs whose columns XOR to it.
class SrcStructure {
 public:
  SrcStructure() = default;

  /// Derives every pair list from the column set. For a fixed fragment x the
  /// partner of y is unique (columns are distinct), so the pairs are disjoint.
  static SrcStructure from_columns(int k, std::vector<Column> columns) {
    SrcStructure s;
    s.k_ = k;
    s.columns_ = std::move(columns);
    s.pairs_.assign(s.columns_.size(), {});
    const int n = s.n();
    for (int x = 0; x < n; ++x) {
      for (int y = 0; y < n; ++y) {
        if (y == x) continue;
        const Column want = s.columns_[x] ^ s.columns_[y];
        for (int z = y + 1; z < n; ++z) {
          if (z != x && s.columns_[z] == want) s.pairs_[x].push_back({y, z});
        }
      }
    }
    s.validate();
    return s;
  }

  static SrcStructure from_parts(int k, std::vector<Column> columns, std::vector<std::vector<RepairPair>> pairs) {
    SrcStructure s;
    s.k_ = k;
    s.columns_ = std::move(columns);
    s.pairs_ = std::move(pairs);
    s.validate();
    return s;
  }

  int n() const { return static_cast<int>(columns_.size()); }
  int k() const { return k_; }
  const std::vector<Column>& columns() const { return columns_; }
  Column column(int x) const { return columns_.at(static_cast<std::size_t>(x)); }
  const std::vector<RepairPair>& pairs(int x) const { return pairs_.at(static_cast<std::size_t>(x)); }

  int rank_of(FragmentSet live) const {
    std::vector<Column> v;
    for (int x = 0; x < n(); ++x)
      if (live & (FragmentSet{1} << x)) v.push_back(columns_[x]);
    return gf2_rank(v);
  }

  /// Plain-text form, one line per fragment: `<index> <column-bits> | <y:z,...>`.
  void write(std::ostream& os) const {
    os << "# src-structure n=" << n() << " k=" << k_ << '\n';
    for (int x = 0; x < n(); ++x) {
      os << x << ' ' << column_bits(columns_[x], k_) << " |";
      const auto& ps = pairs_[x];
      if (!ps.empty()) os << ' ';
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (i) os << ',';
        os << ps[i].first << ':' << ps[i].second;
      }
      os << '\n';
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  static SrcStructure read(std::istream& is) {
    std::vector<Column> cols;
    std::vector<std::vector<RepairPair>> pairs;
    int k = -1;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto bar = line.find('|');
      if (bar == std::string::npos) throw std::invalid_argument("structure line missing '|': " + line);
      std::istringstream head(line.substr(0, bar));
      int index = -1;
      std::string bits;
      if (!(head >> index >> bits)) throw std::invalid_argument("bad structure line: " + line);
      if (index != static_cast<int>(cols.size())) throw std::invalid_argument("structure indices must be 0..n-1 in order");
      if (k < 0) k = static_cast<int>(bits.size());
      if (static_cast<int>(bits.size()) != k) throw std::invalid_argument("inconsistent column width");
      cols.push_back(parse_column_bits(bits));
      std::vector<RepairPair> row;
      std::string tail = line.substr(bar + 1);
      std::replace(tail.begin(), tail.end(), ',', ' ');
      std::istringstream ts(tail);
      std::string tok;
      while (ts >> tok) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("bad pair token '" + tok + "'");
        row.push_back({std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1))});
      }
      pairs.push_back(std::move(row));
    }
    return from_parts(k, std::move(cols), std::move(pairs));
  }

  friend bool operator==(const SrcStructure&, const SrcStructure&) = default;

 private:
  void validate() const {
    const int nn = n();
    if (k_ < 1 || k_ > kMaxPieces) throw std::invalid_argument("SrcStructure: k out of range");
    if (nn <= k_ || nn > kMaxFragments) throw std::invalid_argument("SrcStructure: need k < n <= 63");
    if (static_cast<int>(pairs_.size()) != nn) throw std::invalid_argument("SrcStructure: pair table size mismatch");
    std::vector<Column> sorted = columns_;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == 0) throw std::invalid_argument("SrcStructure: zero column");
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("SrcStructure: duplicate column");
    if (sorted.back() >> k_) throw std::invalid_argument("SrcStructure: column wider than k");
    for (int x = 0; x < nn; ++x) {
      FragmentSet used = 0;
      if (static_cast<int>(pairs_[x].size()) > (nn - 1) / 2)
        throw std::invalid_argument("SrcStructure: too many pairs for fragment " + std::to_string(x));
      for (auto [y, z] : pairs_[x]) {
        if (y < 0 || z < 0 || y >= nn || z >= nn || y == z || y == x || z == x)
          throw std::invalid_argument("SrcStructure: bad pair index for fragment " + std::to_string(x));
        if (columns_[x] != (columns_[y] ^ columns_[z]))
          throw std::invalid_argument("SrcStructure: pair does not XOR to fragment " + std::to_string(x));
        const FragmentSet bits = (FragmentSet{1} << y) | (FragmentSet{1} << z);
        if (used & bits) throw std::invalid_argument("SrcStructure: pairs not disjoint for fragment " + std::to_string(x));
        used |= bits;
      }
    }
  }

  int k_ = 0;
  std::vector<Column> columns_;
  std::vector<std::vector<RepairPair>> pairs_;
};

/// All nonzero vectors of GF(2)^m; fragment i carries column i+1.
inline SrcStructure build_homomorphic_structure(int m) {
  if (m < 2 || m > 6) throw std::invalid_argument("homomorphic structure needs 2 <= m <= 6");
  const int n = (1 << m) - 1;
  std::vector<Column> cols(static_cast<std::size_t>(n));
  std::iota(cols.begin(), cols.end(), Column{1});
  return SrcStructure::from_columns(m, std::move(cols));
}

namespace detail {

struct StructureScore {
  int min_pairs = -1;
  int total_pairs = -1;
  auto operator<=>(const StructureScore&) const = default;
};

inline StructureScore score_columns(const std::vector<Column>& cols, int k) {
  std::vector<bool> present(std::size_t{1} << k, false);
  for (Column c : cols) present[c] = true;
  StructureScore s{static_cast<int>(cols.size()), 0};
  for (Column x : cols) {
    int partners = 0;
    for (Column y : cols)
      if (y != x && present[x ^ y]) ++partners;
    s.min_pairs = std::min(s.min_pairs, partners / 2);
    s.total_pairs += partners / 2;
  }
  return s;
}

inline double binomial(int n, int r) {
  if (r < 0 || r > n) return 0.0;
  double v = 1.0;
  for (int i = 1; i <= r; ++i) v = v * (n - r + i) / i;
  return v;
}

}  // namespace detail

/// Searches systematic column sets (unit vectors for the first k fragments,
/// n-k parity columns from the remaining nonzero vectors) maximizing first
/// the minimum and then the total number of repair pairs per fragment.
/// Small search spaces are enumerated; larger ones use seeded hill climbing
/// with restarts. Any rank-k column set maps onto a systematic one by an
/// invertible linear map, which preserves XOR relations.
inline SrcStructure build_heuristic_structure(int n, int k, std::uint64_t seed) {
  if (k < 2 || n <= k) throw std::invalid_argument("heuristic structure needs n > k >= 2");
  if (k > 20) throw std::invalid_argument("heuristic structure supports k <= 20");
  const int parity = n - k;
  std::vector<Column> pool;
  for (Column c = 1; c < (Column{1} << k); ++c)
    if (std::popcount(c) > 1) pool.push_back(c);
  if (static_cast<int>(pool.size()) < parity)
    throw std::invalid_argument("no rank-k structure with n=" + std::to_string(n) + ", k=" + std::to_string(k));

  std::vector<Column> units(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) units[static_cast<std::size_t>(i)] = Column{1} << i;
  auto assemble = [&](const std::vector<Column>& par) {
    std::vector<Column> cols = units;
    cols.insert(cols.end(), par.begin(), par.end());
    return cols;
  };

  std::vector<Column> best;
  detail::StructureScore best_score;
  const int P = static_cast<int>(pool.size());

  if (detail::binomial(P, parity) <= 200000.0) {
    std::vector<int> idx(static_cast<std::size_t>(parity));
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<Column> par(static_cast<std::size_t>(parity));
    while (true) {
      for (int i = 0; i < parity; ++i) par[i] = pool[idx[i]];
      auto cols = assemble(par);
      auto sc = detail::score_columns(cols, k);
      if (sc > best_score) {
        best_score = sc;
        best = std::move(cols);
      }
      int i = parity - 1;
      while (i >= 0 && idx[i] == P - parity + i) --i;
      if (i < 0) break;
      ++idx[i];
      for (int j = i + 1; j < parity; ++j) idx[j] = idx[j - 1] + 1;
    }
  } else {
    std::mt19937_64 rng(seed);
    constexpr int kRestarts = 48;
    for (int r = 0; r < kRestarts; ++r) {
      std::vector<Column> shuffled = pool;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      std::vector<Column> par(shuffled.begin(), shuffled.begin() + parity);
      std::vector<Column> rest(shuffled.begin() + parity, shuffled.end());
      auto score = detail::score_columns(assemble(par), k);
      for (bool improved = true; improved;) {
        improved = false;
        for (std::size_t i = 0; i < par.size() && !improved; ++i) {
          for (std::size_t j = 0; j < rest.size(); ++j) {
            std::swap(par[i], rest[j]);
            auto sc = detail::score_columns(assemble(par), k);
            if (sc > score) {
              score = sc;
              improved = true;
              break;
            }
            std::swap(par[i], rest[j]);
          }
        }
      }
      if (score > best_score) {
        best_score = score;
        std::sort(par.begin(), par.end());
        best = assemble(par);
      }
    }
  }
  return SrcStructure::from_columns(k, std::move(best));
}

/// Pairs of `x` whose members both lie in `live`, in structure order.
inline std::vector<RepairPair> repair_pairs(const SrcStructure& s, int x, FragmentSet live) {
  std::vector<RepairPair> out;
  for (const auto& p : s.pairs(x)) {
    if ((live >> p.first & 1) && (live >> p.second & 1)) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// (n,k) code instance. SRC/SRCp configurations carry their XOR structure.
struct CodeConfig {
  int n = 0;
  int k = 0;
  Family family = Family::ec;
  std::uint64_t object_size = 0;  // B, bytes
  std::shared_ptr<const SrcStructure> structure;

  CodeConfig() = default;
  CodeConfig(int n_, int k_, Family fam, std::uint64_t bytes = 0,
             std::shared_ptr<const SrcStructure> s = nullptr)
      : n(n_), k(k_), family(fam), object_size(bytes), structure(std::move(s)) {
    validate();
  }

  void validate() const {
    if (!(0 < k && k < n)) throw std::invalid_argument("code: need 0 < k < n");
    if (n > kMaxFragments) throw std::invalid_argument("code: n must be <= 63");
    if (object_size % static_cast<std::uint64_t>(k) != 0)
      throw std::invalid_argument("code: object size must be divisible by k");
    if (!is_mds(family)) {
      if (!structure) throw std::invalid_argument("code: SRC family requires a structure");
      if (structure->n() != n || structure->k() != k) throw std::invalid_argument("code: structure shape mismatch");
    }
  }

  std::uint64_t fragment_size() const { return object_size / static_cast<std::uint64_t>(k); }
  FragmentSet all_fragments() const { return (FragmentSet{1} << n) - 1; }
};

/// Default SRC structure for an (n,k) pair: the homomorphic one when
/// n = 2^k - 1, otherwise the seeded heuristic search.
inline std::shared_ptr<const SrcStructure> default_structure(int n, int k, std::uint64_t seed) {
  if (k >= 2 && k <= 6 && n == (1 << k) - 1)
    return std::make_shared<const SrcStructure>(build_homomorphic_structure(k));
  return std::make_shared<const SrcStructure>(build_heuristic_structure(n, k, seed));
}

inline bool is_recoverable(const CodeConfig& code, FragmentSet live) {
  live &= code.all_fragments();
  if (is_mds(code.family)) return std::popcount(live) >= code.k;
  if (std::popcount(live) < code.k) return false;
  return code.structure->rank_of(live) == code.k;
}

/// Repair-degree constraints per family.
struct RepairSpec {
  int d = 0;
  int f = 1;
};

inline void validate_repair_spec(const CodeConfig& code, Family family, RepairSpec r) {
  const int n = code.n, k = code.k;
  auto fail = [](const std::string& m) { throw std::invalid_argument("repair spec: " + m); };
  switch (family) {
    case Family::ec:
      if (r.d != k) fail("EC requires d = k");
      if (r.f < 1 || r.f > n - k) fail("EC lazy batch requires 1 <= f <= n-k");
      break;
    case Family::rgc:
      if (r.f != 1) fail("RGC requires f = 1");
      if (r.d < k || r.d > n - 1) fail("RGC requires k <= d <= n-1");
      break;
    case Family::crgc:
      if (r.f < 1) fail("CRGC requires f >= 1");
      if (r.d < k || r.d > n - r.f) fail("CRGC requires k <= d <= n-f");
      break;
    case Family::src:
    case Family::srcp:
      if (r.d != 2) fail("SRC requires d = 2");
      if (r.f < 1 || r.f > (n - 1) / 2) fail("SRC requires 1 <= f <= (n-1)/2");
      break;
  }
}

}  // namespace repsim
