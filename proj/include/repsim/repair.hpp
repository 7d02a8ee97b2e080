#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "repsim/coding.hpp"
#include "repsim/netsim.hpp"
#include "repsim/placement.hpp"
#include "repsim/random.hpp"

namespace repsim {

using ProcessId = std::uint32_t;

/// A repair strategy as run by the simulator. For RGC `d` is the fixed
/// repair degree; for CRGC `d == 0` selects d = n - f per object batch.
struct StrategySpec {
  Family family = Family::ec;
  int d = 0;

  std::string label() const {
    switch (family) {
      case Family::rgc: return "RGC(d=" + std::to_string(d) + ")";
      case Family::crgc: return d ? "CRGC(d=" + std::to_string(d) + ")" : "CRGC";
      default: return to_string(family);
    }
  }

  /// Accepts `EC`, `SRC`, `SRCp`, `CRGC`, `RGC:6`, `RGC(d=6)`, `CRGC:5`.
  static StrategySpec parse(const std::string& text) {
    std::string name = text;
    int d = 0;
    if (auto p = text.find_first_of(":("); p != std::string::npos) {
      name = text.substr(0, p);
      std::string rest = text.substr(p + 1);
      if (auto eq = rest.find('='); eq != std::string::npos) rest = rest.substr(eq + 1);
      d = std::stoi(rest);
    }
    StrategySpec s{parse_family(name), d};
    if (s.family == Family::rgc && s.d == 0) throw std::invalid_argument("RGC strategy needs a repair degree, e.g. RGC:6");
    return s;
  }

  friend bool operator==(const StrategySpec&, const StrategySpec&) = default;
};

inline void validate_strategy(const CodeConfig& code, const StrategySpec& s) {
  switch (s.family) {
    case Family::rgc: validate_repair_spec(code, Family::rgc, {s.d, 1}); break;
    case Family::crgc:
      if (s.d) validate_repair_spec(code, Family::crgc, {s.d, 1});
      break;
    default: break;
  }
}

// ---------------------------------------------------------------------------
// Failure injection

struct FailureEvent {
  enum class Kind { single_node, correlated };
  Kind kind = Kind::single_node;
  double theta = 0.0;
  std::optional<NodeId> node;  // single_node: fixed node, otherwise uniform

  static FailureEvent single(std::optional<NodeId> node = std::nullopt) { return {Kind::single_node, 0.0, node}; }
  static FailureEvent correlated(double theta) { return {Kind::correlated, theta, std::nullopt}; }

  void validate() const {
    if (kind == Kind::correlated && !(theta > 0.0 && theta < 1.0))
      throw std::invalid_argument("failure: theta must lie in (0,1)");
  }
};

inline std::vector<NodeId> choose_failed_nodes(const FailureEvent& ev, std::uint32_t nodes, Rng& rng) {
  ev.validate();
  if (ev.kind == FailureEvent::Kind::single_node) {
    if (ev.node) {
      if (*ev.node >= nodes) throw std::out_of_range("failure: node out of range");
      return {*ev.node};
    }
    return {static_cast<NodeId>(uniform_index(rng, nodes))};
  }
  const auto count = static_cast<std::uint32_t>(std::floor(ev.theta * nodes + 1e-9));
  std::vector<NodeId> all(nodes);
  for (NodeId i = 0; i < nodes; ++i) all[i] = i;
  for (std::uint32_t i = 0; i < count; ++i) std::swap(all[i], all[i + uniform_index(rng, nodes - i)]);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

struct DamagedObject {
  ObjectId object;
  FragmentSet lost;
  FragmentSet survivors;
  bool recoverable;
};

struct Damage {
  std::vector<NodeId> failed_nodes;
  std::vector<DamagedObject> objects;  // ascending object id

  std::size_t lost_objects() const {
    return static_cast<std::size_t>(
        std::count_if(objects.begin(), objects.end(), [](const DamagedObject& o) { return !o.recoverable; }));
  }
  std::size_t lost_fragments() const {
    std::size_t c = 0;
    for (const auto& o : objects) c += static_cast<std::size_t>(std::popcount(o.lost));
    return c;
  }
};

/// Wipes every fragment stored on `failed` and decides recoverability of
/// each touched object from its survivor set alone.
inline Damage assess_damage(const PlacementMap& placement, const CodeConfig& code, std::span<const NodeId> failed) {
  Damage dmg;
  dmg.failed_nodes.assign(failed.begin(), failed.end());
  std::map<ObjectId, FragmentSet> lost;
  for (NodeId n : failed)
    for (const auto& ref : placement.fragments_on_node(n)) lost[ref.object] |= FragmentSet{1} << ref.fragment;
  dmg.objects.reserve(lost.size());
  for (auto [obj, mask] : lost) {
    const FragmentSet survivors = code.all_fragments() & ~mask;
    dmg.objects.push_back({obj, mask, survivors, is_recoverable(code, survivors)});
  }
  return dmg;
}

inline Damage inject_failure(const PlacementMap& placement, const CodeConfig& code, const FailureEvent& ev, Rng& rng) {
  const auto failed = choose_failed_nodes(ev, placement.config().N_total, rng);
  return assess_damage(placement, code, failed);
}

// ---------------------------------------------------------------------------
// Repair processes

enum class Phase { selecting, downloading, exchanging, done, unrepairable };

struct RepairProcess {
  ObjectId object = 0;
  int fragment = 0;
  NodeId newcomer = 0;
  Family strategy = Family::ec;
  Phase phase = Phase::selecting;
  std::vector<NodeId> sources;
  Step start_step = 0;
  Step end_step = 0;
  bool fallback = false;
};

struct RepairRecord {
  ObjectId object;
  int fragment;
  std::string strategy;
  Step start_step;
  Step end_step;
  std::uint64_t bytes;
  bool fallback;
  bool lost;

  Step duration() const { return end_step - start_step; }
};

struct RunResult {
  std::vector<RepairRecord> records;
  std::vector<std::uint64_t> uploaded_bytes;  // per node
  std::size_t failed_nodes = 0;
  std::size_t lost_objects = 0;
  std::size_t objects = 0;  // stored objects
  Step steps = 0;
  double tau = 0.0;
};

class RepairSimulation;

namespace detail {

class Job {
 public:
  Job(ObjectId object, std::vector<ProcessId> pids) : object_(object), pids_(std::move(pids)) {}
  virtual ~Job() = default;

  virtual void on_step(RepairSimulation& sim) = 0;
  virtual void on_complete(RepairSimulation& sim, TransferId id) = 0;
  virtual void on_abort(RepairSimulation& sim, TransferId id) = 0;

  ObjectId object() const { return object_; }
  const std::vector<ProcessId>& pids() const { return pids_; }
  bool retired() const { return retired_; }
  void retire() { retired_ = true; }
  std::vector<TransferId>& transfers() { return transfers_; }

 protected:
  ObjectId object_;
  std::vector<ProcessId> pids_;
  std::vector<TransferId> transfers_;
  bool retired_ = false;
};

}  // namespace detail

/// Drives the repair of one failure event for one strategy on one world.
/// Each step: overload transitions, per-job source selection, packet
/// matching, then completion callbacks.
class RepairSimulation {
 public:
  struct ObjectState {
    std::vector<NodeId> holder;
    FragmentSet available = 0;  // fragments currently held by live nodes
    std::vector<int> order;     // per-object random preference over fragments
    std::vector<ProcessId> pids;
  };

  RepairSimulation(CodeConfig code, StrategySpec strategy, const PlacementMap& placement, World& world,
                   std::uint64_t seed)
      : code_(std::move(code)), strategy_(strategy), placement_(placement), world_(world),
        rng_(make_rng(seed, Stream::repair)) {
    code_.validate();
    if (is_mds(code_.family) != is_mds(strategy_.family))
      throw std::invalid_argument("strategy " + strategy_.label() + " does not match code family " +
                                  to_string(code_.family));
    validate_strategy(code_, strategy_);
    if (world_.size() != placement_.config().N_total) throw std::invalid_argument("world/placement size mismatch");
    if (code_.fragment_size() % world_.params().beta != 0)
      throw std::invalid_argument("fragment size is not a multiple of beta");
  }

  RepairSimulation(const RepairSimulation&) = delete;
  RepairSimulation& operator=(const RepairSimulation&) = delete;

  /// Creates one repair process per lost fragment. Unrecoverable objects
  /// are recorded as lost and spawn no work.
  void start(const Damage& damage) {
    failed_nodes_ += damage.failed_nodes.size();
    wiped_.insert(wiped_.end(), damage.failed_nodes.begin(), damage.failed_nodes.end());
    std::sort(wiped_.begin(), wiped_.end());
    for (const auto& dobj : damage.objects) {
      auto& st = objects_[dobj.object];
      st.holder = placement_.nodes_of(dobj.object);
      st.available = 0;
      for (int f = 0; f < code_.n; ++f) {
        if (dobj.lost >> f & 1) st.holder[static_cast<std::size_t>(f)] = kNoNode;
        else if (world_.is_live(st.holder[static_cast<std::size_t>(f)])) st.available |= FragmentSet{1} << f;
      }
      st.order.resize(static_cast<std::size_t>(code_.n));
      for (int f = 0; f < code_.n; ++f) st.order[static_cast<std::size_t>(f)] = f;
      std::shuffle(st.order.begin(), st.order.end(), rng_);

      std::vector<ProcessId> pids;
      const bool recoverable = is_recoverable(code_, st.available);
      if (!recoverable) ++lost_objects_;
      for (int f = 0; f < code_.n; ++f) {
        if (!(dobj.lost >> f & 1)) continue;
        RepairProcess p;
        p.object = dobj.object;
        p.fragment = f;
        p.strategy = strategy_.family;
        p.start_step = p.end_step = world_.step();
        if (!recoverable) p.phase = Phase::unrepairable;
        pids.push_back(static_cast<ProcessId>(processes_.size()));
        st.pids.push_back(pids.back());
        processes_.push_back(p);
        job_of_.push_back(kNoJob);
      }
      if (!recoverable) continue;
      for (ProcessId pid : pids) processes_[pid].newcomer = pick_newcomer(pid);
      spawn(dobj.object, std::move(pids), false);
    }
  }

  void step() {
    world_.sample_overload();
    for (std::size_t i = 0; i < jobs_.size(); ++i) {
      detail::Job* job = jobs_[i].get();
      if (!job->retired()) job->on_step(*this);
    }
    auto report = world_.match_and_transfer();
    for (TransferId id : report.completed) {
      const auto pid = static_cast<ProcessId>(world_.transfer(id).tag);
      detail::Job* job = jobs_[job_of_[pid]].get();
      if (!job->retired()) job->on_complete(*this, id);
    }
    retire_finished();
  }

  bool finished() const { return active_jobs_ == 0; }

  Step run(Step max_steps = 50'000'000) {
    while (!finished()) {
      if (world_.step() >= max_steps)
        throw std::runtime_error("repair simulation did not finish within " + std::to_string(max_steps) + " steps");
      step();
    }
    return world_.step();
  }

  /// Crashes a node mid-run. Transfers touching it abort; jobs whose
  /// newcomer crashed are rebuilt with a fresh newcomer, other jobs reselect.
  void crash_node(NodeId node) {
    for (auto& [obj, st] : objects_)
      for (int f = 0; f < code_.n; ++f)
        if (st.holder[static_cast<std::size_t>(f)] == node) st.available &= ~(FragmentSet{1} << f);
    auto aborted = world_.fail_node(node);
    std::vector<std::size_t> rebuild;
    for (std::size_t j = 0; j < jobs_.size(); ++j) {
      if (jobs_[j]->retired()) continue;
      for (ProcessId pid : jobs_[j]->pids())
        if (processes_[pid].newcomer == node && !finished(pid)) {
          rebuild.push_back(j);
          break;
        }
    }
    for (TransferId id : aborted) {
      const auto pid = static_cast<ProcessId>(world_.transfer(id).tag);
      const auto j = job_of_[pid];
      if (std::find(rebuild.begin(), rebuild.end(), j) != rebuild.end()) continue;
      if (!jobs_[j]->retired()) jobs_[j]->on_abort(*this, id);
    }
    for (auto j : rebuild) {
      detail::Job* job = jobs_[j].get();
      if (job->retired()) continue;
      std::vector<ProcessId> pending;
      for (ProcessId pid : job->pids())
        if (!finished(pid)) pending.push_back(pid);
      retire(*job);
      for (ProcessId pid : pending) {
        auto& p = processes_[pid];
        p.phase = Phase::selecting;
        p.sources.clear();
        if (p.newcomer == node) p.newcomer = pick_newcomer(pid);
      }
      spawn(job->object(), std::move(pending), false);
    }
    retire_finished();
  }

  RunResult result() const {
    RunResult r;
    std::vector<std::uint64_t> bytes(processes_.size(), 0);
    for (TransferId id = 0; id < world_.transfer_count(); ++id) {
      const auto& t = world_.transfer(id);
      bytes[t.tag] += t.delivered() * world_.params().beta;
    }
    r.records.reserve(processes_.size());
    for (ProcessId pid = 0; pid < processes_.size(); ++pid) {
      const auto& p = processes_[pid];
      r.records.push_back({p.object, p.fragment, strategy_.label(), p.start_step, p.end_step, bytes[pid], p.fallback,
                           p.phase == Phase::unrepairable});
    }
    r.uploaded_bytes.resize(world_.size());
    for (NodeId n = 0; n < world_.size(); ++n) r.uploaded_bytes[n] = world_.uploaded_bytes(n);
    r.failed_nodes = failed_nodes_;
    r.lost_objects = lost_objects_;
    r.objects = placement_.objects();
    r.steps = world_.step();
    r.tau = world_.params().tau();
    return r;
  }

  // ---- interface used by the per-strategy jobs --------------------------

  World& world() { return world_; }
  const CodeConfig& code() const { return code_; }
  const StrategySpec& strategy() const { return strategy_; }
  Rng& rng() { return rng_; }
  ObjectState& object_state(ObjectId o) { return objects_.at(o); }
  RepairProcess& process(ProcessId pid) { return processes_.at(pid); }
  const std::vector<RepairProcess>& processes() const { return processes_; }

  NodeId holder(ObjectId o, int fragment) const { return objects_.at(o).holder.at(static_cast<std::size_t>(fragment)); }
  bool finished(ProcessId pid) const {
    return processes_[pid].phase == Phase::done || processes_[pid].phase == Phase::unrepairable;
  }

  TransferId submit(detail::Job& job, NodeId src, NodeId dst, std::uint64_t bytes, ProcessId pid,
                    std::optional<TransferId> gate = std::nullopt) {
    const auto id = world_.submit_transfer(src, dst, bytes, pid, gate);
    job.transfers().push_back(id);
    return id;
  }

  void complete(ProcessId pid) {
    auto& p = processes_[pid];
    p.phase = Phase::done;
    p.end_step = world_.step();
    auto& st = objects_.at(p.object);
    st.holder[static_cast<std::size_t>(p.fragment)] = p.newcomer;
    if (world_.is_live(p.newcomer)) st.available |= FragmentSet{1} << p.fragment;
  }

  void mark_unrepairable(ProcessId pid) {
    auto& p = processes_[pid];
    p.phase = Phase::unrepairable;
    p.end_step = world_.step();
  }

  /// Replaces `job` by a whole-object reconstruction for `pids`.
  void fallback(detail::Job& job, std::vector<ProcessId> pids) {
    retire(job);
    spawn(job.object(), std::move(pids), true);
  }

  static constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

 private:
  static constexpr std::size_t kNoJob = std::numeric_limits<std::size_t>::max();

  void spawn(ObjectId object, std::vector<ProcessId> pids, bool force_fallback);

  void retire(detail::Job& job) {
    for (TransferId id : job.transfers()) world_.cancel_transfer(id);
    if (!job.retired()) {
      job.retire();
      --active_jobs_;
    }
  }

  void retire_finished() {
    for (auto& job : jobs_) {
      if (job->retired()) continue;
      if (std::all_of(job->pids().begin(), job->pids().end(), [&](ProcessId p) { return finished(p); })) retire(*job);
    }
  }

  NodeId pick_newcomer(ProcessId pid) {
    const auto& p = processes_[pid];
    const auto& st = objects_.at(p.object);
    const auto& cfg = placement_.config();
    const NodeId base = placement_.cluster_begin(placement_.cluster_of(p.object));
    // wiped nodes are a last resort (full-clustered placement)
    std::vector<NodeId> candidates, wiped;
    for (NodeId n = base; n < base + cfg.cluster_size; ++n) {
      if (!world_.is_live(n)) continue;
      if (std::find(st.holder.begin(), st.holder.end(), n) != st.holder.end()) continue;
      const bool taken = std::any_of(st.pids.begin(), st.pids.end(), [&](ProcessId q) {
        return q != pid && !finished(q) && processes_[q].newcomer == n;
      });
      if (!taken) (std::binary_search(wiped_.begin(), wiped_.end(), n) ? wiped : candidates).push_back(n);
    }
    if (candidates.empty()) candidates = std::move(wiped);
    if (candidates.empty()) throw std::runtime_error("no newcomer candidate for object " + std::to_string(p.object));
    return candidates[uniform_index(rng_, candidates.size())];
  }

  CodeConfig code_;
  StrategySpec strategy_;
  const PlacementMap& placement_;
  World& world_;
  Rng rng_;
  std::map<ObjectId, ObjectState> objects_;
  std::vector<RepairProcess> processes_;
  std::vector<std::size_t> job_of_;
  std::vector<std::unique_ptr<detail::Job>> jobs_;
  std::size_t active_jobs_ = 0;
  std::size_t failed_nodes_ = 0;
  std::size_t lost_objects_ = 0;
  std::vector<NodeId> wiped_;
};

namespace detail {

inline bool has(FragmentSet s, int f) { return (s >> f & 1) != 0; }
inline FragmentSet bit(int f) { return FragmentSet{1} << f; }

/// Lazy erasure-code repair and the whole-object fallback of every other
/// strategy: the newcomer of the lowest lost fragment downloads k full
/// fragments, then ships one regenerated fragment to each other newcomer.
class ReconstructJob final : public Job {
 public:
  ReconstructJob(ObjectId object, std::vector<ProcessId> pids) : Job(object, std::move(pids)) {}

  void on_step(RepairSimulation& sim) override {
    if (reconstructed_) return;
    auto& st = sim.object_state(object_);
    const auto& code = sim.code();
    if (!is_recoverable(code, st.available | engaged_done_)) {
      for (ProcessId pid : pids_)
        if (!sim.finished(pid)) sim.mark_unrepairable(pid);
      return;
    }
    auto& rec = sim.process(pids_.front());
    if (rec.phase == Phase::selecting) rec.phase = Phase::downloading;
    for (int f : st.order) {
      if (std::popcount(engaged_) >= code.k) break;
      if (!has(st.available, f) || has(engaged_, f)) continue;
      const NodeId src = st.holder[static_cast<std::size_t>(f)];
      if (!sim.world().is_active(src)) continue;
      if (!is_mds(code.family) && code.structure->rank_of(engaged_ | bit(f)) == std::popcount(engaged_)) continue;
      const auto id = sim.submit(*this, src, rec.newcomer, code.fragment_size(), pids_.front());
      downloads_[id] = f;
      engaged_ |= bit(f);
      rec.sources.push_back(src);
    }
  }

  void on_complete(RepairSimulation& sim, TransferId id) override {
    if (auto it = downloads_.find(id); it != downloads_.end()) {
      engaged_done_ |= bit(it->second);
      if (std::popcount(engaged_done_) < sim.code().k) return;
      reconstructed_ = true;
      const auto& rec = sim.process(pids_.front());
      for (std::size_t i = 1; i < pids_.size(); ++i) {
        auto& p = sim.process(pids_[i]);
        p.phase = Phase::downloading;
        p.sources = {rec.newcomer};
        sim.submit(*this, rec.newcomer, p.newcomer, sim.code().fragment_size(), pids_[i]);
      }
      sim.complete(pids_.front());
      return;
    }
    sim.complete(static_cast<ProcessId>(sim.world().transfer(id).tag));
  }

  void on_abort(RepairSimulation&, TransferId id) override {
    if (auto it = downloads_.find(id); it != downloads_.end()) {
      engaged_ &= ~bit(it->second);
      downloads_.erase(it);
    }
  }

 private:
  std::map<TransferId, int> downloads_;
  FragmentSet engaged_ = 0;
  FragmentSet engaged_done_ = 0;
  bool reconstructed_ = false;
};

/// Regenerating-code repair, one lost fragment at a time: the newcomer
/// takes one unit from each of the first d holders found available.
class RegenerateJob final : public Job {
 public:
  RegenerateJob(ObjectId object, std::vector<ProcessId> pids, int d, std::uint64_t unit)
      : Job(object, std::move(pids)), d_(d), unit_(unit) {}

  void on_step(RepairSimulation& sim) override {
    if (current_ >= pids_.size()) return;
    auto& st = sim.object_state(object_);
    if (std::popcount(st.available | done_) < d_) {
      sim.fallback(*this, remaining());
      return;
    }
    auto& p = sim.process(pids_[current_]);
    p.phase = Phase::downloading;
    for (int f : st.order) {
      if (std::popcount(engaged_) >= d_) break;
      if (!has(st.available, f) || has(engaged_, f)) continue;
      const NodeId src = st.holder[static_cast<std::size_t>(f)];
      if (!sim.world().is_active(src)) continue;
      legs_[sim.submit(*this, src, p.newcomer, unit_, pids_[current_])] = f;
      engaged_ |= bit(f);
      p.sources.push_back(src);
    }
  }

  void on_complete(RepairSimulation& sim, TransferId id) override {
    done_ |= bit(legs_.at(id));
    if (std::popcount(done_) < d_) return;
    sim.complete(pids_[current_]);
    ++current_;
    legs_.clear();
    engaged_ = done_ = 0;
  }

  void on_abort(RepairSimulation&, TransferId id) override {
    if (auto it = legs_.find(id); it != legs_.end()) {
      engaged_ &= ~bit(it->second);
      legs_.erase(it);
    }
  }

 private:
  std::vector<ProcessId> remaining() const { return {pids_.begin() + static_cast<std::ptrdiff_t>(current_), pids_.end()}; }

  int d_;
  std::uint64_t unit_;
  std::size_t current_ = 0;
  std::map<TransferId, int> legs_;
  FragmentSet engaged_ = 0;
  FragmentSet done_ = 0;
};

/// Collaborative regenerating repair of f lost fragments: every newcomer
/// downloads one unit from each of d holders, then sends one unit to each
/// of the other f-1 newcomers.
class CollaborativeJob final : public Job {
 public:
  CollaborativeJob(ObjectId object, std::vector<ProcessId> pids, int d, std::uint64_t unit)
      : Job(object, std::move(pids)), d_(d), unit_(unit), members_(pids_.size()) {}

  void on_step(RepairSimulation& sim) override {
    auto& st = sim.object_state(object_);
    bool short_of_sources = false;
    for (auto& m : members_)
      if (m.downloads < d_ && std::popcount(st.available | m.done) < d_) short_of_sources = true;
    if (short_of_sources) {
      std::vector<ProcessId> pending;
      for (ProcessId pid : pids_)
        if (!sim.finished(pid)) pending.push_back(pid);
      sim.fallback(*this, std::move(pending));
      return;
    }
    for (std::size_t i = 0; i < members_.size(); ++i) {
      auto& m = members_[i];
      auto& p = sim.process(pids_[i]);
      if (m.downloads >= d_) continue;
      p.phase = Phase::downloading;
      for (int f : st.order) {
        if (std::popcount(m.engaged) >= d_) break;
        if (!has(st.available, f) || has(m.engaged, f)) continue;
        const NodeId src = st.holder[static_cast<std::size_t>(f)];
        if (!sim.world().is_active(src)) continue;
        legs_[sim.submit(*this, src, p.newcomer, unit_, pids_[i])] = {i, f};
        m.engaged |= bit(f);
        p.sources.push_back(src);
      }
    }
  }

  void on_complete(RepairSimulation& sim, TransferId id) override {
    const auto [i, f] = legs_.at(id);
    auto& m = members_[i];
    if (f >= 0) {
      m.done |= bit(f);
      if (++m.downloads == d_) {
        const NodeId from = sim.process(pids_[i]).newcomer;
        for (std::size_t j = 0; j < members_.size(); ++j) {
          if (j == i) continue;
          legs_[sim.submit(*this, from, sim.process(pids_[j]).newcomer, unit_, pids_[j])] = {j, -1};
        }
        if (members_.size() > 1) sim.process(pids_[i]).phase = Phase::exchanging;
      }
    } else {
      ++m.exchanged;
    }
    if (m.downloads == d_ && m.exchanged == static_cast<int>(members_.size()) - 1) sim.complete(pids_[i]);
  }

  void on_abort(RepairSimulation&, TransferId id) override {
    if (auto it = legs_.find(id); it != legs_.end()) {
      if (it->second.second >= 0) members_[it->second.first].engaged &= ~bit(it->second.second);
      legs_.erase(it);
    }
  }

 private:
  struct Member {
    FragmentSet engaged = 0;
    FragmentSet done = 0;
    int downloads = 0;
    int exchanged = 0;
  };

  int d_;
  std::uint64_t unit_;
  std::vector<Member> members_;
  std::map<TransferId, std::pair<std::size_t, int>> legs_;  // member, source fragment (-1: exchange)
};

/// Self-repairing repair: pick a live pair uniformly at random and fetch a
/// full fragment from each member.
class PairJob final : public Job {
 public:
  PairJob(ObjectId object, ProcessId pid) : Job(object, {pid}) {}

  void on_step(RepairSimulation& sim) override {
    if (!chosen_) choose(sim, std::nullopt);
  }

  void on_complete(RepairSimulation& sim, TransferId id) override {
    for (auto& leg : legs_)
      if (leg.transfer == id) leg.done = true;
    if (legs_[0].done && legs_[1].done) sim.complete(pids_.front());
  }

  void on_abort(RepairSimulation& sim, TransferId id) override {
    std::optional<Leg> survivor;
    for (const auto& leg : legs_)
      if (leg.transfer != id) survivor = leg;
    choose(sim, survivor);
  }

 private:
  struct Leg {
    int fragment = -1;
    TransferId transfer = 0;
    bool done = false;
  };

  void choose(RepairSimulation& sim, std::optional<Leg> keep) {
    const ProcessId pid = pids_.front();
    auto& p = sim.process(pid);
    auto& st = sim.object_state(object_);
    const auto pairs = repair_pairs(*sim.code().structure, p.fragment, st.available);
    if (pairs.empty()) {
      sim.fallback(*this, {pid});
      return;
    }
    const auto pair = pairs[uniform_index(sim.rng(), pairs.size())];
    const bool reuse = keep && (keep->fragment == pair.first || keep->fragment == pair.second);
    if (keep && !reuse) sim.world().cancel_transfer(keep->transfer);
    p.phase = Phase::downloading;
    p.sources.clear();
    std::size_t slot = 0;
    for (int f : {pair.first, pair.second}) {
      const NodeId src = st.holder[static_cast<std::size_t>(f)];
      p.sources.push_back(src);
      if (reuse && keep->fragment == f) {
        legs_[slot++] = *keep;
        continue;
      }
      legs_[slot++] = {f, sim.submit(*this, src, p.newcomer, sim.code().fragment_size(), pid), false};
    }
    chosen_ = true;
  }

  bool chosen_ = false;
  Leg legs_[2];
};

/// Pipelined self-repairing repair: once both members of the first live
/// pair are available, the first streams its fragment to the second, which
/// XORs it with its own and forwards each packet one step later.
class PipelineJob final : public Job {
 public:
  PipelineJob(ObjectId object, ProcessId pid) : Job(object, {pid}) {}

  void on_step(RepairSimulation& sim) override {
    if (engaged_) return;
    const ProcessId pid = pids_.front();
    auto& p = sim.process(pid);
    auto& st = sim.object_state(object_);
    const auto pairs = repair_pairs(*sim.code().structure, p.fragment, st.available);
    if (pairs.empty()) {
      sim.fallback(*this, {pid});
      return;
    }
    for (const auto& pair : pairs) {
      const NodeId head = st.holder[static_cast<std::size_t>(pair.first)];
      const NodeId relay = st.holder[static_cast<std::size_t>(pair.second)];
      if (!sim.world().is_active(head) || !sim.world().is_active(relay)) continue;
      const auto bytes = sim.code().fragment_size();
      inbound_ = sim.submit(*this, head, relay, bytes, pid);
      outbound_ = sim.submit(*this, relay, p.newcomer, bytes, pid, inbound_);
      p.sources = {head, relay};
      p.phase = Phase::downloading;
      engaged_ = true;
      return;
    }
  }

  void on_complete(RepairSimulation& sim, TransferId id) override {
    if (engaged_ && id == outbound_) sim.complete(pids_.front());
  }

  void on_abort(RepairSimulation& sim, TransferId) override {
    sim.world().cancel_transfer(inbound_);
    sim.world().cancel_transfer(outbound_);
    engaged_ = false;
    sim.process(pids_.front()).phase = Phase::selecting;
  }

 private:
  bool engaged_ = false;
  TransferId inbound_ = 0;
  TransferId outbound_ = 0;
};

}  // namespace detail

inline void RepairSimulation::spawn(ObjectId object, std::vector<ProcessId> pids, bool force_fallback) {
  if (pids.empty()) return;
  std::sort(pids.begin(), pids.end(), [&](ProcessId a, ProcessId b) {
    return processes_[a].fragment < processes_[b].fragment;
  });
  auto& st = objects_.at(object);
  const int n = code_.n, k = code_.k;
  const auto f = static_cast<int>(pids.size());
  const std::uint64_t B = code_.object_size;

  auto add = [&](std::unique_ptr<detail::Job> job, bool fallback) {
    for (ProcessId pid : job->pids()) {
      job_of_[pid] = jobs_.size();
      processes_[pid].fallback = processes_[pid].fallback || fallback;
    }
    jobs_.push_back(std::move(job));
    ++active_jobs_;
  };
  auto reconstruct = [&](std::vector<ProcessId> group, bool fallback) {
    add(std::make_unique<detail::ReconstructJob>(object, std::move(group)), fallback);
  };

  if (force_fallback) {
    reconstruct(std::move(pids), true);
    return;
  }
  const int available = std::popcount(st.available);
  switch (strategy_.family) {
    case Family::ec:
      reconstruct(std::move(pids), false);
      break;
    case Family::rgc: {
      if (available < strategy_.d) {
        reconstruct(std::move(pids), true);
        break;
      }
      const auto unit = unit_transfer_crgc(B, k, strategy_.d, 1);
      add(std::make_unique<detail::RegenerateJob>(object, std::move(pids), strategy_.d, unit), false);
      break;
    }
    case Family::crgc: {
      const int d = strategy_.d ? strategy_.d : n - f;
      if (d < k || d > n - f || available < d) {
        reconstruct(std::move(pids), true);
        break;
      }
      const auto unit = unit_transfer_crgc(B, k, d, f);
      add(std::make_unique<detail::CollaborativeJob>(object, std::move(pids), d, unit), false);
      break;
    }
    case Family::src:
    case Family::srcp: {
      std::vector<ProcessId> pairless;
      for (ProcessId pid : pids) {
        if (repair_pairs(*code_.structure, processes_[pid].fragment, st.available).empty()) {
          pairless.push_back(pid);
        } else if (strategy_.family == Family::src) {
          add(std::make_unique<detail::PairJob>(object, pid), false);
        } else {
          add(std::make_unique<detail::PipelineJob>(object, pid), false);
        }
      }
      if (!pairless.empty()) reconstruct(std::move(pairless), true);
      break;
    }
  }
}

/// Plain CSV for per-repair records.
inline void write_repair_log(std::ostream& os, std::span<const RepairRecord> records, bool header = true) {
  if (header) os << "object,fragment,strategy,start_step,end_step,bytes,fallback,lost\n";
  for (const auto& r : records)
    os << r.object << ',' << r.fragment << ',' << r.strategy << ',' << r.start_step << ',' << r.end_step << ','
       << r.bytes << ',' << (r.fallback ? 1 : 0) << ',' << (r.lost ? 1 : 0) << '\n';
}

}  // namespace repsim
