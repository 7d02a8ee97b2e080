#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "repsim/coding.hpp"
#include "repsim/placement.hpp"
#include "repsim/random.hpp"
#include "repsim/repair.hpp"

namespace repsim {

// ---------------------------------------------------------------------------
// Static resilience

struct ResilienceCurve {
  int n = 0;
  int k = 0;
  std::vector<double> probability;  // index s = number of live fragments
  bool exact = true;
  std::uint64_t trials_per_point = 0;  // Monte Carlo only
};

inline constexpr int kMaxEnumerableFragments = 31;

/// Probability that an object survives when s of its n fragment holders are
/// live, for every s. Exhaustive over all 2^n live sets when n <= 31,
/// otherwise sampled with `trials` random s-subsets per point.
inline ResilienceCurve static_resilience(const CodeConfig& code, std::uint64_t trials = 200000,
                                         std::uint64_t seed = 1) {
  ResilienceCurve curve;
  curve.n = code.n;
  curve.k = code.k;
  curve.probability.assign(static_cast<std::size_t>(code.n) + 1, 0.0);
  if (code.n <= kMaxEnumerableFragments) {
    std::vector<std::uint64_t> good(static_cast<std::size_t>(code.n) + 1, 0);
    std::vector<std::uint64_t> total(static_cast<std::size_t>(code.n) + 1, 0);
    const std::uint64_t limit = std::uint64_t{1} << code.n;
    for (std::uint64_t live = 0; live < limit; ++live) {
      const auto s = static_cast<std::size_t>(std::popcount(live));
      ++total[s];
      if (is_recoverable(code, live)) ++good[s];
    }
    for (std::size_t s = 0; s < total.size(); ++s)
      curve.probability[s] = static_cast<double>(good[s]) / static_cast<double>(total[s]);
    return curve;
  }
  curve.exact = false;
  curve.trials_per_point = trials;
  Rng rng(seed);
  std::vector<int> idx(static_cast<std::size_t>(code.n));
  for (int s = 0; s <= code.n; ++s) {
    std::uint64_t good = 0;
    for (std::uint64_t t = 0; t < trials; ++t) {
      std::iota(idx.begin(), idx.end(), 0);
      FragmentSet live = 0;
      for (int i = 0; i < s; ++i) {
        std::swap(idx[static_cast<std::size_t>(i)], idx[i + uniform_index(rng, static_cast<std::uint64_t>(code.n - i))]);
        live |= FragmentSet{1} << idx[static_cast<std::size_t>(i)];
      }
      good += is_recoverable(code, live) ? 1 : 0;
    }
    curve.probability[static_cast<std::size_t>(s)] = static_cast<double>(good) / static_cast<double>(trials);
  }
  return curve;
}

inline void write_resilience_csv(std::ostream& os, const ResilienceCurve& c) {
  os << "s,probability\n";
  for (std::size_t s = 0; s < c.probability.size(); ++s) os << s << ',' << c.probability[s] << '\n';
}

// ---------------------------------------------------------------------------
// Lost-object oracle

/// P[j of the n distinct nodes holding an object fall among `failed` of N].
inline double hypergeometric_pmf(std::uint64_t j, std::uint64_t N, std::uint64_t failed, std::uint64_t n) {
  if (j > n || j > failed || n - j > N - failed) return 0.0;
  auto lchoose = [](double a, double b) { return std::lgamma(a + 1) - std::lgamma(b + 1) - std::lgamma(a - b + 1); };
  const double lp = lchoose(double(failed), double(j)) + lchoose(double(N - failed), double(n - j)) -
                    lchoose(double(N), double(n));
  return std::exp(lp);
}

inline std::uint64_t failed_count(std::uint64_t N, double theta) {
  return static_cast<std::uint64_t>(std::floor(theta * static_cast<double>(N) + 1e-9));
}

inline double analytic_lost_fraction(const ResilienceCurve& curve, std::uint64_t N, double theta) {
  const auto failed = failed_count(N, theta);
  const auto n = static_cast<std::uint64_t>(curve.n);
  double p = 0.0;
  for (std::uint64_t j = 0; j <= n; ++j)
    p += hypergeometric_pmf(j, N, failed, n) * (1.0 - curve.probability[static_cast<std::size_t>(n - j)]);
  return p;
}

inline double analytic_lost_fraction(const CodeConfig& code, std::uint64_t N, double theta) {
  return analytic_lost_fraction(static_resilience(code), N, theta);
}

/// Monte Carlo counterpart: random placement of `objects` objects over N
/// nodes, floor(theta*N) nodes wiped, repeated `rounds` times.
inline double simulated_lost_fraction(const CodeConfig& code, std::uint32_t N, double theta, std::uint32_t objects,
                                      std::uint32_t rounds, std::uint64_t seed) {
  std::uint64_t lost = 0;
  for (std::uint32_t r = 0; r < rounds; ++r) {
    auto prng = make_rng(seed + r, Stream::placement);
    const auto map = place({N, N, objects, code.n}, prng);
    auto frng = make_rng(seed + r, Stream::failure);
    lost += inject_failure(map, code, FailureEvent::correlated(theta), frng).lost_objects();
  }
  return static_cast<double>(lost) / (static_cast<double>(objects) * rounds);
}

// ---------------------------------------------------------------------------
// Metrics

/// Append-only log for one strategy across replicates.
struct MetricsLog {
  std::string strategy;
  std::string fingerprint;
  std::uint64_t seed = 0;
  double tau = 0.0;
  std::uint64_t fragment_bytes = 0;
  std::vector<RepairRecord> records;
  std::vector<std::vector<std::uint64_t>> uploads;  // per run, per node
  std::size_t runs = 0;
  std::size_t failed_nodes = 0;
  std::size_t lost_objects = 0;
  std::size_t stored_objects = 0;

  void append(const RunResult& r) {
    records.insert(records.end(), r.records.begin(), r.records.end());
    uploads.push_back(r.uploaded_bytes);
    tau = r.tau;
    ++runs;
    failed_nodes += r.failed_nodes;
    lost_objects += r.lost_objects;
    stored_objects += r.objects;
  }

  double seconds(const RepairRecord& rec) const { return static_cast<double>(rec.duration()) * tau; }

  std::size_t lost_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](auto& r) { return r.lost; }));
  }
  std::size_t fallback_count() const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](auto& r) { return !r.lost && r.fallback; }));
  }
  std::size_t normal_count() const { return records.size() - lost_count() - fallback_count(); }
};

struct CdfPoint {
  NodeId node;
  std::uint64_t bytes;
  double cumfrac;
};

/// Sorted per-node upload totals (zeros included), pooled over runs.
inline std::vector<CdfPoint> upload_cdf(const MetricsLog& log) {
  std::vector<std::pair<std::uint64_t, NodeId>> v;
  for (const auto& run : log.uploads)
    for (NodeId n = 0; n < run.size(); ++n) v.emplace_back(run[n], n);
  std::stable_sort(v.begin(), v.end(), [](auto& a, auto& b) { return a.first < b.first; });
  std::vector<CdfPoint> cdf;
  cdf.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    cdf.push_back({v[i].second, v[i].first, static_cast<double>(i + 1) / static_cast<double>(v.size())});
  return cdf;
}

inline void write_cdf_csv(std::ostream& os, std::span<const CdfPoint> cdf) {
  os << "node,bytes,cumfrac\n";
  for (const auto& p : cdf) os << p.node << ',' << p.bytes << ',' << p.cumfrac << '\n';
}

/// Gini coefficient; 0 for perfectly even (or all-zero) samples.
inline double gini(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double sum = std::accumulate(xs.begin(), xs.end(), 0.0);
  if (sum <= 0.0) return 0.0;
  double weighted = 0.0;
  const auto n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * xs[i];
  return weighted / (n * sum);
}

struct Summary {
  std::size_t runs = 0;
  std::size_t repairs = 0;         // completed fragment repairs
  std::size_t lost_fragments = 0;  // fragments of unrecoverable objects
  std::size_t fallback_repairs = 0;
  std::size_t lost_objects = 0;
  double mean_time_steps = 0.0;
  double median_time_steps = 0.0;
  double mean_time_s = 0.0;
  double median_time_s = 0.0;
  double traffic_per_fragment = 0.0;           // bytes per repaired fragment
  double traffic_per_fragment_norm = 0.0;      // same, in units of B/k
  double traffic_per_failed_node = 0.0;        // bytes per failed node
  double loss_fraction = 0.0;                  // lost objects / stored objects
  double gini = 0.0;                           // of per-node uploads
};

inline Summary summarize(const MetricsLog& log) {
  Summary s;
  s.runs = log.runs;
  s.lost_objects = log.lost_objects;
  std::vector<double> times;
  double bytes = 0.0;
  for (const auto& r : log.records) {
    bytes += static_cast<double>(r.bytes);
    if (r.lost) {
      ++s.lost_fragments;
      continue;
    }
    ++s.repairs;
    if (r.fallback) ++s.fallback_repairs;
    times.push_back(static_cast<double>(r.duration()));
  }
  if (!times.empty()) {
    s.mean_time_steps = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
    auto mid = times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2);
    std::nth_element(times.begin(), mid, times.end());
    double median = *mid;
    if (times.size() % 2 == 0) median = (median + *std::max_element(times.begin(), mid)) / 2.0;
    s.median_time_steps = median;
    s.traffic_per_fragment = bytes / static_cast<double>(s.repairs);
    if (log.fragment_bytes) s.traffic_per_fragment_norm = s.traffic_per_fragment / static_cast<double>(log.fragment_bytes);
  }
  s.mean_time_s = s.mean_time_steps * log.tau;
  s.median_time_s = s.median_time_steps * log.tau;
  if (log.failed_nodes) s.traffic_per_failed_node = bytes / static_cast<double>(log.failed_nodes);
  if (log.stored_objects)
    s.loss_fraction = static_cast<double>(log.lost_objects) / static_cast<double>(log.stored_objects);
  std::vector<double> uploads;
  for (const auto& run : log.uploads)
    for (auto b : run) uploads.push_back(static_cast<double>(b));
  s.gini = gini(std::move(uploads));
  return s;
}

}  // namespace repsim
