#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "repsim/analysis.hpp"
#include "repsim/coding.hpp"
#include "repsim/harness.hpp"

namespace {

std::pair<int, int> parse_code(const std::string& s) {
  int n = 0, k = 0;
  char comma = 0;
  std::istringstream is(s);
  if (!(is >> n >> comma >> k) || comma != ',' || !is.eof())
    throw std::invalid_argument("--code expects n,k (got '" + s + "')");
  return {n, k};
}

repsim::CodeConfig make_code(const std::string& code, const std::string& family, std::uint64_t structure_seed) {
  const auto [n, k] = parse_code(code);
  const auto fam = repsim::parse_family(family);
  if (repsim::is_mds(fam)) return {n, k, fam};
  return {n, k, fam, 0, repsim::default_structure(n, k, structure_seed)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repsim: repair simulator for erasure, regenerating and self-repairing codes"};
  app.require_subcommand(1);

  std::string preset, code = "7,4", out = "out", scale = "desk", config_file, family = "EC", gen = "homomorphic";
  std::uint64_t seed = 1, structure_seed = 7;
  std::uint32_t replicates = 0, nodes = 1000, objects = 100000;
  unsigned jobs = 1;
  bool repair_log = false;
  int n = 7, k = 3;

  auto* sim = app.add_subcommand("simulate", "run a preset or a config file");
  sim->add_option("--preset", preset, "fig1|fig2|fig3|fig4|fig5-short|fig5-long|fig6|fig8|table2");
  sim->add_option("--code", code, "n,k")->capture_default_str();
  sim->add_option("--seed", seed, "base seed")->capture_default_str();
  sim->add_option("--replicates", replicates, "override the preset replicate count");
  sim->add_option("--out", out, "output directory")->capture_default_str();
  sim->add_option("--scale", scale, "desk|full")->capture_default_str();
  sim->add_option("--config", config_file, "JSON file with ExperimentConfig fields (object or array)");
  sim->add_flag("--repair-log", repair_log, "write per-repair records");
  sim->add_option("--jobs", jobs, "parallel replicate workers")->capture_default_str();
  sim->add_option("--structure-seed", structure_seed, "seed for heuristic SRC structures")->capture_default_str();

  auto* res = app.add_subcommand("resilience", "static resilience curve (s,probability) to stdout");
  res->add_option("--code", code, "n,k")->required();
  res->add_option("--family", family, "EC|RGC|CRGC|SRC|SRCp")->capture_default_str();
  res->add_option("--structure-seed", structure_seed)->capture_default_str();

  auto* lost = app.add_subcommand("lost", "lost-object fraction per theta (theta,analytic,simulated) to stdout");
  lost->add_option("--code", code, "n,k")->required();
  lost->add_option("--family", family, "EC|RGC|CRGC|SRC|SRCp")->capture_default_str();
  lost->add_option("--nodes", nodes, "system size N")->capture_default_str();
  lost->add_option("--objects", objects, "Monte Carlo objects (0 disables)")->capture_default_str();
  lost->add_option("--seed", seed)->capture_default_str();
  lost->add_option("--structure-seed", structure_seed)->capture_default_str();

  auto* st = app.add_subcommand("structure", "print an SRC structure");
  st->add_option("--gen", gen, "homomorphic|heuristic")->capture_default_str();
  st->add_option("--n", n)->capture_default_str();
  st->add_option("--k", k)->capture_default_str();
  st->add_option("--seed", seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      repsim::RunOptions opt;
      opt.out_dir = out;
      opt.jobs = jobs;
      opt.repair_log = repair_log;
      repsim::ExperimentSuite suite;
      if (!config_file.empty()) {
        std::ifstream is(config_file);
        if (!is) throw std::runtime_error("cannot read " + config_file);
        const auto j = nlohmann::json::parse(is);
        suite.name = "config";
        if (j.is_array())
          for (const auto& e : j) suite.points.push_back(e.get<repsim::ExperimentConfig>());
        else
          suite.points.push_back(j.get<repsim::ExperimentConfig>());
      } else {
        if (preset.empty()) throw std::invalid_argument("simulate needs --preset or --config");
        const auto [pn, pk] = parse_code(code);
        const auto sc = repsim::parse_scale(scale);
        if (sc == repsim::Scale::full)
          std::cerr << "warning: full scale (N=1000, L=10000, B=1GB) can run for hours\n";
        suite = repsim::preset(preset, pn, pk, sc);
        suite.structure_seed = structure_seed;
      }
      for (auto& p : suite.points) {
        if (config_file.empty()) {
          p.seed = seed;
          p.structure_seed = structure_seed;
        }
        if (replicates) p.replicates = replicates;
        p.validate();
      }
      repsim::run(suite, opt, seed);
      std::cout << "wrote " << opt.out_dir.string() << '\n';
    } else if (res->parsed()) {
      std::cout.precision(10);
      repsim::write_resilience_csv(std::cout, repsim::static_resilience(make_code(code, family, structure_seed)));
    } else if (lost->parsed()) {
      std::cout.precision(10);
      const auto c = make_code(code, family, structure_seed);
      repsim::write_lost_csv(std::cout,
                             repsim::lost_table(c, nodes, {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}, objects, 1, seed));
    } else if (st->parsed()) {
      const auto s = gen == "homomorphic"  ? repsim::build_homomorphic_structure(k)
                     : gen == "heuristic" ? repsim::build_heuristic_structure(n, k, seed)
                                          : throw std::invalid_argument("--gen must be homomorphic or heuristic");
      if (gen == "homomorphic" && s.n() != n)
        throw std::invalid_argument("homomorphic structure needs n = 2^k - 1 (got n=" + std::to_string(n) + ")");
      s.write(std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
