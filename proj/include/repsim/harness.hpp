#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repsim/analysis.hpp"
#include "repsim/coding.hpp"
#include "repsim/netsim.hpp"
#include "repsim/placement.hpp"
#include "repsim/repair.hpp"

namespace repsim {

// ---------------------------------------------------------------------------
// Overload presets, expressed per 1000 nodes and scaled to the system size.

struct OverloadPreset {
  std::string name;
  double lambda_a_per_1000;
  double mean_duration;
};

inline const std::vector<OverloadPreset>& overload_presets() {
  static const std::vector<OverloadPreset> presets = {
      {"10-short", 25, 4},  {"10-long", 4, 25},  {"20-short", 50, 4},  {"20-long", 4, 50},
      {"50-short", 125, 4}, {"50-long", 4, 125}, {"80-short", 200, 4}, {"80-long", 4, 200},
  };
  return presets;
}

inline OverloadParams overload_params(const std::string& name, std::uint32_t nodes) {
  if (name.empty() || name == "none") return {};
  for (const auto& p : overload_presets())
    if (p.name == name) return {p.lambda_a_per_1000 * nodes / 1000.0, p.mean_duration};
  throw std::invalid_argument("unknown overload preset '" + name + "'");
}

// ---------------------------------------------------------------------------

/// One experiment grid point. Field names double as the config-file keys.
struct ExperimentConfig {
  std::string name = "experiment";
  int n = 7;
  int k = 4;
  std::vector<std::string> strategies = {"EC"};
  std::uint32_t N_total = 100;
  std::uint32_t cluster_size = 100;
  std::uint32_t L = 1000;  // objects per cluster
  std::uint64_t B = 0;     // object size, bytes
  std::string beta_policy = "gcd";  // "gcd" or "explicit"
  std::uint64_t beta = 0;
  double omega = 1e9;
  double eff = 0.8;
  std::string failure = "single";  // "single" or "correlated"
  double theta = 0.0;
  std::string overload = "none";
  std::uint32_t replicates = 1;
  std::uint64_t seed = 1;
  std::uint64_t structure_seed = 7;

  std::vector<StrategySpec> strategy_specs() const {
    std::vector<StrategySpec> out;
    for (const auto& s : strategies) out.push_back(StrategySpec::parse(s));
    return out;
  }

  bool needs_structure() const {
    auto specs = strategy_specs();
    return std::any_of(specs.begin(), specs.end(), [](auto& s) { return !is_mds(s.family); });
  }

  /// Every per-link transfer size the configured strategies can issue.
  std::vector<std::uint64_t> transfer_sizes() const {
    std::vector<std::uint64_t> sizes = {B / static_cast<std::uint64_t>(k)};
    for (const auto& s : strategy_specs()) {
      if (s.family == Family::rgc) {
        sizes.push_back(unit_transfer_crgc(B, k, s.d, 1));
      } else if (s.family == Family::crgc) {
        for (int f = 1; f <= n - k; ++f) {
          const int d = s.d ? s.d : n - f;
          if (d >= k && d <= n - f) sizes.push_back(unit_transfer_crgc(B, k, d, f));
        }
      }
    }
    return sizes;
  }

  std::uint64_t effective_beta() const {
    if (beta_policy == "explicit") return beta;
    std::uint64_t g = 0;
    for (auto s : transfer_sizes()) g = std::gcd(g, s);
    return g;
  }

  FailureEvent failure_event() const {
    if (failure == "single") return FailureEvent::single();
    if (failure == "correlated") return FailureEvent::correlated(theta);
    throw std::invalid_argument("unknown failure kind '" + failure + "'");
  }

  PlacementConfig placement() const { return {N_total, cluster_size, L, n}; }

  SimParams sim_params() const { return {omega, eff, effective_beta()}; }

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const {
    CodeConfig(n, k, Family::ec, B).validate();
    if (B == 0) throw std::invalid_argument("config: B must be positive");
    if (strategies.empty()) throw std::invalid_argument("config: no strategies");
    const CodeConfig probe(n, k, Family::ec, B);
    for (const auto& s : strategy_specs())
      if (is_mds(s.family)) validate_strategy(probe, s);
    placement().validate();
    if (beta_policy != "gcd" && beta_policy != "explicit")
      throw std::invalid_argument("config: beta_policy must be 'gcd' or 'explicit'");
    const auto b = effective_beta();
    if (b == 0) throw std::invalid_argument("config: beta must be positive");
    for (auto size : transfer_sizes())
      if (size % b != 0)
        throw std::invalid_argument("config: transfer size " + std::to_string(size) +
                                    " is not a multiple of beta=" + std::to_string(b));
    sim_params().validate();
    failure_event().validate();
    overload_params(overload, N_total);
    if (replicates == 0) throw std::invalid_argument("config: replicates must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"n", c.n},
                     {"k", c.k},
                     {"strategies", c.strategies},
                     {"N_total", c.N_total},
                     {"cluster_size", c.cluster_size},
                     {"L", c.L},
                     {"B", c.B},
                     {"beta_policy", c.beta_policy},
                     {"beta", c.beta},
                     {"omega", c.omega},
                     {"eff", c.eff},
                     {"failure", c.failure},
                     {"theta", c.theta},
                     {"overload", c.overload},
                     {"replicates", c.replicates},
                     {"seed", c.seed},
                     {"structure_seed", c.structure_seed}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::vector<std::string> known = {"name",  "n",       "k",        "strategies", "N_total",
                                                 "cluster_size", "L", "B", "beta_policy", "beta", "omega", "eff",
                                                 "failure", "theta", "overload", "replicates", "seed",
                                                 "structure_seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("config: unknown field '" + it.key() + "'");
  ExperimentConfig d;
  c.name = j.value("name", d.name);
  c.n = j.value("n", d.n);
  c.k = j.value("k", d.k);
  c.strategies = j.value("strategies", d.strategies);
  c.N_total = j.value("N_total", d.N_total);
  c.cluster_size = j.value("cluster_size", c.N_total);
  c.L = j.value("L", d.L);
  c.B = j.value("B", d.B);
  c.beta_policy = j.value("beta_policy", d.beta_policy);
  c.beta = j.value("beta", d.beta);
  c.omega = j.value("omega", d.omega);
  c.eff = j.value("eff", d.eff);
  c.failure = j.value("failure", d.failure);
  c.theta = j.value("theta", d.theta);
  c.overload = j.value("overload", d.overload);
  c.replicates = j.value("replicates", d.replicates);
  c.seed = j.value("seed", d.seed);
  c.structure_seed = j.value("structure_seed", d.structure_seed);
}

/// FNV-1a over the canonical JSON form (keys sorted, fixed number format).
inline std::string fingerprint(const ExperimentConfig& c) {
  const std::string text = nlohmann::json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Presets

enum class Scale { desk, full };

inline Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::desk;
  if (s == "full") return Scale::full;
  throw std::invalid_argument("unknown scale '" + s + "' (desk|full)");
}

enum class SuiteKind { simulate, resilience, lost };

struct ExperimentSuite {
  std::string name;
  SuiteKind kind = SuiteKind::simulate;
  int n = 0;
  int k = 0;
  std::uint32_t nodes = 0;           // lost: system size
  std::vector<double> thetas;        // lost: grid
  std::uint32_t lost_objects = 0;    // lost: objects per Monte Carlo round
  std::uint64_t structure_seed = 7;
  std::vector<ExperimentConfig> points;
};

inline std::vector<std::string> single_failure_strategies(int n, int k) {
  std::vector<std::string> s = {"EC"};
  for (int d = k; d <= n - 1; ++d) s.push_back("RGC:" + std::to_string(d));
  s.push_back("SRC");
  s.push_back("SRCp");
  return s;
}

inline std::vector<std::string> multi_failure_strategies(int n, int k) {
  std::vector<std::string> s = {"EC"};
  for (int d = k + 1; d <= n - 1; ++d) s.push_back("RGC:" + std::to_string(d));
  s.push_back("CRGC");
  s.push_back("SRC");
  s.push_back("SRCp");
  return s;
}

/// lcm of the unit-transfer denominators (d-k+f) the strategies can use.
inline std::uint64_t transfer_denominator_lcm(int n, int k, const std::vector<std::string>& strategies) {
  std::uint64_t l = 1;
  for (const auto& text : strategies) {
    const auto s = StrategySpec::parse(text);
    if (s.family == Family::rgc) l = std::lcm(l, static_cast<std::uint64_t>(s.d - k + 1));
    if (s.family == Family::crgc) {
      for (int f = 1; f <= n - k; ++f) {
        const int d = s.d ? s.d : n - f;
        if (d >= k && d <= n - f) l = std::lcm(l, static_cast<std::uint64_t>(d - k + f));
      }
    }
  }
  return l;
}

/// Smallest fragment packet count >= `min_packets` that every unit
/// transfer divides.
inline std::uint64_t fragment_packets_for(int n, int k, const std::vector<std::string>& strategies,
                                          std::uint64_t min_packets) {
  const auto l = transfer_denominator_lcm(n, k, strategies);
  return (min_packets + l - 1) / l * l;
}

// Desk scale shrinks N by 10x and object counts by 100x: the load each
// node puts on each peer (n*L/N^2 fragments) then matches the full scale.
struct ScaleParams {
  std::uint32_t nodes;
  std::uint32_t object_divisor;  // applied to the nominal object counts
  std::uint64_t min_fragment_packets;
  std::uint32_t replicates;
};

inline ScaleParams scale_params(Scale s) {
  if (s == Scale::full) return {1000, 1, 1024, 100};
  return {100, 100, 128, 100};
}

/// Sets B so that a fragment is `packets` packets, with beta chosen so B is
/// about 1 GB at full scale or 64 KiB per packet at desk scale.
inline void size_object(ExperimentConfig& c, Scale scale, std::uint64_t packets, const std::string& policy) {
  const auto k = static_cast<std::uint64_t>(c.k);
  const std::uint64_t beta =
      scale == Scale::full ? std::max<std::uint64_t>(1, 1'000'000'000ULL / (packets * k)) : 65536;
  c.beta_policy = policy;
  c.beta = policy == "explicit" ? beta : 0;
  c.B = beta * packets * k;
}

inline std::string code_tag(int n, int k) { return "(" + std::to_string(n) + "," + std::to_string(k) + ")"; }

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"fig1",      "fig2", "fig3", "fig4", "fig5-short",
                                                 "fig5-long", "fig6", "fig8", "table2"};
  return names;
}

/// Fully specified experiment grid for a named figure/table and code.
inline ExperimentSuite preset(const std::string& name, int n, int k, Scale scale = Scale::desk) {
  const auto sp = scale_params(scale);
  ExperimentSuite suite;
  suite.name = name;
  suite.n = n;
  suite.k = k;
  CodeConfig(n, k, Family::ec).validate();

  auto base = [&](const std::string& point, std::vector<std::string> strategies) {
    ExperimentConfig c;
    c.name = name + ":" + point;
    c.n = n;
    c.k = k;
    c.strategies = std::move(strategies);
    c.N_total = sp.nodes;
    c.cluster_size = sp.nodes;
    c.L = 10000 / sp.object_divisor;
    c.replicates = sp.replicates;
    return c;
  };
  auto packets = [&](const ExperimentConfig& c) {
    return fragment_packets_for(n, k, c.strategies, sp.min_fragment_packets);
  };

  if (name == "fig1") {
    suite.kind = SuiteKind::resilience;
    return suite;
  }
  if (name == "table2") {
    suite.kind = SuiteKind::lost;
    suite.nodes = 1000;
    suite.thetas = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
    suite.lost_objects = 100000;
    return suite;
  }
  if (name == "fig2") {
    // B*L fixed: the finest grid point gets the smallest fragment.
    const std::vector<std::uint32_t> grid = {500, 1000, 2000, 5000, 10000, 20000};
    const auto largest = grid.back() / sp.object_divisor;
    for (auto Lp : grid) {
      const auto L = Lp / sp.object_divisor;
      auto c = base("L=" + std::to_string(L), single_failure_strategies(n, k));
      c.L = L;
      size_object(c, scale, packets(c) * (largest / L), "explicit");
      suite.points.push_back(c);
    }
    return suite;
  }
  if (name == "fig3") {
    // N_total must split into clusters of n, 2n, 4n, ...
    const std::uint32_t step = 4 * static_cast<std::uint32_t>(n);
    const std::uint32_t total = (sp.nodes + step - 1) / step * step;
    std::vector<std::uint32_t> sizes = {total};
    for (std::uint32_t cs = 4 * static_cast<std::uint32_t>(n); cs >= static_cast<std::uint32_t>(n); cs /= 2)
      sizes.push_back(cs);
    for (auto cs : sizes) {
      auto c = base("cluster=" + std::to_string(cs), single_failure_strategies(n, k));
      c.N_total = total;
      c.cluster_size = cs;
      c.L = 10 * cs * sp.nodes / 1000;  // L = 10*cluster_size at full scale
      size_object(c, scale, packets(c), "explicit");
      suite.points.push_back(c);
    }
    return suite;
  }
  if (name == "fig4") {
    auto c = base("cdf", single_failure_strategies(n, k));
    size_object(c, scale, packets(c), "explicit");
    suite.points.push_back(c);
    return suite;
  }
  if (name == "fig5-short" || name == "fig5-long" || name == "fig6") {
    // Overload periods are given in steps of one packet, the
    // smallest repair transfer, so packets follow the gcd policy here.
    std::vector<std::string> kinds;
    if (name != "fig5-long") kinds.push_back("short");
    if (name != "fig5-short") kinds.push_back("long");
    for (const auto& kind : kinds) {
      for (const char* level : {"10", "20", "50", "80"}) {
        auto c = base(std::string(level) + "-" + kind, single_failure_strategies(n, k));
        c.overload = std::string(level) + "-" + kind;
        size_object(c, scale, transfer_denominator_lcm(n, k, c.strategies), "gcd");
        suite.points.push_back(c);
      }
    }
    return suite;
  }
  if (name == "fig8") {
    for (double theta : {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}) {
      std::ostringstream label;
      label << "theta=" << theta;
      auto c = base(label.str(), multi_failure_strategies(n, k));
      c.failure = "correlated";
      c.theta = theta;
      size_object(c, scale, packets(c), "explicit");
      suite.points.push_back(c);
    }
    return suite;
  }
  throw std::invalid_argument("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Execution

struct PointResult {
  ExperimentConfig config;
  std::string fingerprint;
  std::vector<MetricsLog> logs;  // one per strategy, config order
};

/// One replicate: place, fail, then repair the same damage once per
/// strategy, each on a fresh network seeded identically.
inline std::vector<RunResult> run_replicate(const ExperimentConfig& c,
                                            const std::shared_ptr<const SrcStructure>& structure,
                                            std::uint32_t replicate) {
  const std::uint64_t seed = c.seed + replicate;
  auto prng = make_rng(seed, Stream::placement);
  const auto placement = place(c.placement(), prng);
  auto frng = make_rng(seed, Stream::failure);
  const auto failed = choose_failed_nodes(c.failure_event(), c.N_total, frng);
  std::vector<RunResult> out;
  for (const auto& s : c.strategy_specs()) {
    CodeConfig code = is_mds(s.family) ? CodeConfig(c.n, c.k, s.family, c.B)
                                       : CodeConfig(c.n, c.k, s.family, c.B, structure);
    const auto damage = assess_damage(placement, code, failed);
    World world(c.N_total, c.sim_params(), mix_seed(seed, static_cast<std::uint64_t>(Stream::network)));
    world.set_overload(overload_params(c.overload, c.N_total));
    RepairSimulation sim(code, s, placement, world, seed);
    sim.start(damage);
    sim.run();
    out.push_back(sim.result());
  }
  return out;
}

inline PointResult run_point(const ExperimentConfig& c, unsigned jobs = 1) {
  c.validate();
  PointResult pr;
  pr.config = c;
  pr.fingerprint = fingerprint(c);
  std::shared_ptr<const SrcStructure> structure;
  if (c.needs_structure()) structure = default_structure(c.n, c.k, c.structure_seed);

  std::vector<std::vector<RunResult>> reps(c.replicates);
  jobs = std::max(1u, jobs);
  for (std::uint32_t first = 0; first < c.replicates; first += jobs) {
    std::vector<std::future<std::vector<RunResult>>> futures;
    const auto last = std::min<std::uint32_t>(c.replicates, first + jobs);
    for (std::uint32_t r = first; r < last; ++r)
      futures.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                   [&c, &structure, r] { return run_replicate(c, structure, r); }));
    for (std::uint32_t r = first; r < last; ++r) reps[r] = futures[r - first].get();
  }

  const auto specs = c.strategy_specs();
  pr.logs.resize(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& log = pr.logs[i];
    log.strategy = specs[i].label();
    log.fingerprint = pr.fingerprint;
    log.seed = c.seed;
    log.fragment_bytes = c.B / static_cast<std::uint64_t>(c.k);
    for (auto& rep : reps) log.append(rep[i]);
  }
  return pr;
}

inline std::string file_safe(std::string s) {
  for (auto& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '.') ch = '_';
  return s;
}

inline void write_summary_header(std::ostream& os) {
  os << "experiment,fingerprint,seed,strategy,n,k,N_total,cluster_size,L,B,beta,tau,failure,theta,overload,"
        "replicates,repairs,lost_fragments,fallback_repairs,lost_objects,mean_time_steps,median_time_steps,"
        "mean_time_s,median_time_s,traffic_per_fragment,traffic_per_fragment_norm,traffic_per_failed_node,"
        "loss_fraction,gini\n";
}

inline void write_summary_rows(std::ostream& os, const PointResult& pr) {
  const auto& c = pr.config;
  for (const auto& log : pr.logs) {
    const auto s = summarize(log);
    os << c.name << ',' << pr.fingerprint << ',' << c.seed << ',' << log.strategy << ',' << c.n << ',' << c.k << ','
       << c.N_total << ',' << c.cluster_size << ',' << c.L << ',' << c.B << ',' << c.effective_beta() << ','
       << log.tau << ',' << c.failure << ',' << c.theta << ',' << c.overload << ',' << c.replicates << ','
       << s.repairs << ',' << s.lost_fragments << ',' << s.fallback_repairs << ',' << s.lost_objects << ','
       << s.mean_time_steps << ',' << s.median_time_steps << ',' << s.mean_time_s << ',' << s.median_time_s << ','
       << s.traffic_per_fragment << ',' << s.traffic_per_fragment_norm << ',' << s.traffic_per_failed_node << ','
       << s.loss_fraction << ',' << s.gini << '\n';
  }
}

struct RunOptions {
  std::filesystem::path out_dir = "out";
  unsigned jobs = 1;
  bool repair_log = false;
};

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << std::setprecision(10);
  return os;
}

struct LostRow {
  double theta;
  double analytic;
  double simulated;
};

inline std::vector<LostRow> lost_table(const CodeConfig& code, std::uint32_t nodes, const std::vector<double>& thetas,
                                       std::uint32_t objects, std::uint32_t rounds, std::uint64_t seed) {
  const auto curve = static_resilience(code);
  std::vector<LostRow> rows;
  for (double t : thetas)
    rows.push_back({t, analytic_lost_fraction(curve, nodes, t),
                    objects ? simulated_lost_fraction(code, nodes, t, objects, rounds, seed) : 0.0});
  return rows;
}

inline void write_lost_csv(std::ostream& os, const std::vector<LostRow>& rows) {
  os << "theta,analytic,simulated\n";
  for (const auto& r : rows) os << r.theta << ',' << r.analytic << ',' << r.simulated << '\n';
}

/// Executes a suite and writes its CSVs into `opt.out_dir`. Returns the
/// per-point results (empty for analytic suites).
inline std::vector<PointResult> run(const ExperimentSuite& suite, const RunOptions& opt, std::uint64_t seed = 1) {
  std::filesystem::create_directories(opt.out_dir);
  std::vector<PointResult> results;
  if (suite.kind == SuiteKind::resilience) {
    auto mds = open_out(opt.out_dir / "resilience.csv");
    write_resilience_csv(mds, static_resilience(CodeConfig(suite.n, suite.k, Family::crgc)));
    auto src = open_out(opt.out_dir / "resilience_src.csv");
    write_resilience_csv(src, static_resilience(CodeConfig(suite.n, suite.k, Family::src, 0,
                                                           default_structure(suite.n, suite.k, suite.structure_seed))));
    return results;
  }
  if (suite.kind == SuiteKind::lost) {
    const std::uint32_t rounds = 1;
    auto mds = open_out(opt.out_dir / "lost.csv");
    write_lost_csv(mds, lost_table(CodeConfig(suite.n, suite.k, Family::crgc), suite.nodes, suite.thetas,
                                   suite.lost_objects, rounds, seed));
    auto src = open_out(opt.out_dir / "lost_src.csv");
    write_lost_csv(src, lost_table(CodeConfig(suite.n, suite.k, Family::src, 0,
                                              default_structure(suite.n, suite.k, suite.structure_seed)),
                                   suite.nodes, suite.thetas, suite.lost_objects, rounds, seed));
    return results;
  }
  auto summary = open_out(opt.out_dir / "summary.csv");
  write_summary_header(summary);
  for (const auto& point : suite.points) {
    auto pr = run_point(point, opt.jobs);
    write_summary_rows(summary, pr);
    for (const auto& log : pr.logs) {
      auto cdf = open_out(opt.out_dir / ("cdf_" + file_safe(point.name + "_" + log.strategy) + ".csv"));
      write_cdf_csv(cdf, upload_cdf(log));
    }
    if (opt.repair_log) {
      auto rl = open_out(opt.out_dir / ("repairs_" + file_safe(point.name) + ".csv"));
      bool header = true;
      for (const auto& log : pr.logs) {
        write_repair_log(rl, log.records, header);
        header = false;
      }
    }
    results.push_back(std::move(pr));
  }
  std::ofstream(opt.out_dir / "config.json") << nlohmann::json(suite.points).dump(2) << '\n';
  return results;
}

}  // namespace repsim
