#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "repsim/placement.hpp"
#include "repsim/random.hpp"

namespace repsim {

using TransferId = std::uint32_t;
using Step = std::uint64_t;

/// Link model. tau is the duration of one step: the time to push one packet
/// of beta bytes through a link of omega bits/s at efficiency eff.
struct SimParams {
  double omega = 1e9;
  double eff = 0.8;
  std::uint64_t beta = 1;

  double tau() const { return static_cast<double>(beta) * 8.0 / (omega * eff); }

  void validate() const {
    if (!(omega > 0)) throw std::invalid_argument("sim: omega must be positive");
    if (!(eff > 0 && eff <= 1)) throw std::invalid_argument("sim: eff must be in (0,1]");
    if (beta == 0) throw std::invalid_argument("sim: beta must be positive");
  }
};

/// System-wide overload process: Poisson(lambda_a) onsets per step, each
/// lasting lambda_d_mean steps on average.
struct OverloadParams {
  double lambda_a = 0.0;
  double lambda_d_mean = 1.0;

  bool enabled() const { return lambda_a > 0.0; }
  double expected_fraction(std::size_t nodes) const { return lambda_a * lambda_d_mean / static_cast<double>(nodes); }
};

enum class TransferState { queued, completed, aborted };

struct Transfer {
  NodeId src = 0;
  NodeId dst = 0;
  std::uint64_t bytes = 0;
  std::uint64_t packets_total = 0;
  std::uint64_t packets_remaining = 0;
  std::uint64_t tag = 0;
  std::optional<TransferId> gate;
  TransferState state = TransferState::queued;

  std::uint64_t delivered() const { return packets_total - packets_remaining; }
};

struct StepReport {
  Step step = 0;
  std::uint64_t packets = 0;
  std::vector<TransferId> completed;
};

struct PacketEvent {
  Step step;
  NodeId src;
  NodeId dst;
  std::uint64_t tag;
};

/// Discrete-time full-duplex network. Every step each active (live and not
/// overloaded) node sends at most one packet and receives at most one.
/// Receivers are visited in a fresh random order; each picks uniformly among
/// the queued transfers addressed to it whose sender is still free, so a
/// sender declined by one receiver can still be taken by a later one.
class World {
 public:
  World(std::size_t nodes, SimParams params, std::uint64_t seed)
      : params_(params), rng_(seed), live_(nodes, 1), overloaded_until_(nodes, 0), uploaded_(nodes, 0),
        downloaded_(nodes, 0), inbox_(nodes), sender_busy_(nodes, 0) {
    params_.validate();
    if (nodes < 2) throw std::invalid_argument("world needs at least two nodes");
  }

  std::size_t size() const { return live_.size(); }
  const SimParams& params() const { return params_; }
  Step step() const { return step_; }
  Rng& rng() { return rng_; }

  /// Installs the overload process and, unless `burn_in` is false, runs it
  /// for 20 mean durations so step 0 already sees the steady state.
  void set_overload(OverloadParams p, bool burn_in = true) {
    if (p.lambda_a < 0 || p.lambda_d_mean <= 0) throw std::invalid_argument("overload: bad parameters");
    overload_ = p;
    if (!burn_in || !p.enabled()) return;
    const auto warm = static_cast<Step>(std::ceil(20.0 * std::max(1.0, p.lambda_d_mean)));
    const Step origin = step_;
    for (Step i = 0; i < warm; ++i, ++step_) sample_overload();
    for (auto& until : overloaded_until_) until = until > step_ ? origin + (until - step_) : 0;
    step_ = origin;
  }
  const OverloadParams& overload() const { return overload_; }

  bool is_live(NodeId n) const { return live_.at(n) != 0; }
  bool is_overloaded(NodeId n) const { return overloaded_until_.at(n) > step_; }
  bool is_active(NodeId n) const { return is_live(n) && !is_overloaded(n); }

  /// Forces an overload period on `n` covering steps [step(), until).
  void overload_until(NodeId n, Step until) { overloaded_until_.at(n) = until; }

  std::size_t overloaded_count() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < size(); ++i) c += (live_[i] && overloaded_until_[i] > step_) ? 1 : 0;
    return c;
  }

  std::uint64_t uploaded_packets(NodeId n) const { return uploaded_.at(n); }
  std::uint64_t downloaded_packets(NodeId n) const { return downloaded_.at(n); }
  std::uint64_t uploaded_bytes(NodeId n) const { return uploaded_.at(n) * params_.beta; }

  const Transfer& transfer(TransferId id) const { return transfers_.at(id); }
  TransferId transfer_count() const { return static_cast<TransferId>(transfers_.size()); }
  std::size_t queued_transfers() const {
    return static_cast<std::size_t>(std::count_if(active_.begin(), active_.end(), [&](TransferId id) {
      return transfers_[id].state == TransferState::queued;
    }));
  }

  void set_packet_observer(std::function<void(const PacketEvent&)> obs) { observer_ = std::move(obs); }

  /// Queues `bytes` from src to dst. With a gate, the transfer may only send
  /// a packet while the gate transfer has delivered strictly more packets
  /// (as of the start of the step) than this one.
  TransferId submit_transfer(NodeId src, NodeId dst, std::uint64_t bytes, std::uint64_t tag,
                             std::optional<TransferId> gate = std::nullopt) {
    if (src == dst) throw std::invalid_argument("transfer: src == dst");
    if (src >= size() || dst >= size()) throw std::out_of_range("transfer: node id out of range");
    if (bytes == 0 || bytes % params_.beta != 0)
      throw std::invalid_argument("transfer: size " + std::to_string(bytes) +
                                  " is not a positive multiple of beta=" + std::to_string(params_.beta));
    if (gate && *gate >= transfers_.size()) throw std::out_of_range("transfer: unknown gate");
    Transfer t;
    t.src = src;
    t.dst = dst;
    t.bytes = bytes;
    t.packets_total = t.packets_remaining = bytes / params_.beta;
    t.tag = tag;
    t.gate = gate;
    const auto id = static_cast<TransferId>(transfers_.size());
    transfers_.push_back(t);
    active_.push_back(id);
    return id;
  }

  void cancel_transfer(TransferId id) {
    auto& t = transfers_.at(id);
    if (t.state == TransferState::queued) t.state = TransferState::aborted;
  }

  /// Crashes a node: it stops serving and every queued transfer touching it
  /// is aborted. Returns the aborted transfer ids.
  std::vector<TransferId> fail_node(NodeId n) {
    live_.at(n) = 0;
    std::vector<TransferId> aborted;
    for (TransferId id : active_) {
      auto& t = transfers_[id];
      if (t.state == TransferState::queued && (t.src == n || t.dst == n)) {
        t.state = TransferState::aborted;
        aborted.push_back(id);
      }
    }
    return aborted;
  }

  /// Draws this step's overload onsets. Periods that have expired are
  /// released first; onsets go to live nodes that are not overloaded.
  std::size_t sample_overload() {
    if (!overload_.enabled()) return 0;
    auto onsets = static_cast<std::size_t>(std::poisson_distribution<std::uint64_t>(overload_.lambda_a)(rng_));
    if (onsets == 0) return 0;
    free_.clear();
    for (std::size_t i = 0; i < size(); ++i)
      if (live_[i] && overloaded_until_[i] <= step_) free_.push_back(static_cast<NodeId>(i));
    onsets = std::min(onsets, free_.size());
    for (std::size_t i = 0; i < onsets; ++i) {
      const auto j = i + uniform_index(rng_, free_.size() - i);
      std::swap(free_[i], free_[j]);
      overloaded_until_[free_[i]] = step_ + sample_duration();
    }
    return onsets;
  }

  /// Matches senders to receivers for the current step and moves one packet
  /// per match, then advances the clock.
  StepReport match_and_transfer() {
    StepReport report;
    report.step = step_;
    compact();

    receivers_.clear();
    for (TransferId id : active_) {
      const auto& t = transfers_[id];
      if (t.state != TransferState::queued) continue;
      if (!is_active(t.src) || !is_active(t.dst)) continue;
      if (t.gate && transfers_[*t.gate].delivered() <= t.delivered()) continue;
      auto& box = inbox_[t.dst];
      if (box.empty()) receivers_.push_back(t.dst);
      box.push_back(id);
    }
    std::shuffle(receivers_.begin(), receivers_.end(), rng_);

    busy_senders_.clear();
    for (NodeId r : receivers_) {
      auto& box = inbox_[r];
      std::size_t eligible = 0;
      for (TransferId id : box) eligible += sender_busy_[transfers_[id].src] ? 0 : 1;
      if (eligible > 0) {
        auto pick = uniform_index(rng_, eligible);
        for (TransferId id : box) {
          auto& t = transfers_[id];
          if (sender_busy_[t.src]) continue;
          if (pick-- != 0) continue;
          sender_busy_[t.src] = 1;
          busy_senders_.push_back(t.src);
          deliver(id, report);
          break;
        }
      }
      box.clear();
    }
    for (NodeId s : busy_senders_) sender_busy_[s] = 0;
    ++step_;
    return report;
  }

  StepReport advance_step() {
    sample_overload();
    return match_and_transfer();
  }

 private:
  Step sample_duration() {
    const double mean = overload_.lambda_d_mean;
    if (mean <= 1.0) return 1;
    // ceil(Exp(rate)) is geometric with mean 1/(1-exp(-rate)); pick the rate
    // that makes the whole-step duration average exactly `mean`.
    const double rate = -std::log1p(-1.0 / mean);
    const double x = std::exponential_distribution<double>(rate)(rng_);
    return std::max<Step>(1, static_cast<Step>(std::ceil(x)));
  }

  void deliver(TransferId id, StepReport& report) {
    auto& t = transfers_[id];
    assert(t.packets_remaining > 0);
    --t.packets_remaining;
    ++uploaded_[t.src];
    ++downloaded_[t.dst];
    ++report.packets;
    if (observer_) observer_(PacketEvent{step_, t.src, t.dst, t.tag});
    if (t.packets_remaining == 0) {
      t.state = TransferState::completed;
      report.completed.push_back(id);
    }
  }

  void compact() {
    std::erase_if(active_, [&](TransferId id) { return transfers_[id].state != TransferState::queued; });
  }

  SimParams params_;
  OverloadParams overload_;
  Rng rng_;
  Step step_ = 0;
  std::vector<std::uint8_t> live_;
  std::vector<Step> overloaded_until_;
  std::vector<std::uint64_t> uploaded_;
  std::vector<std::uint64_t> downloaded_;
  std::vector<Transfer> transfers_;
  std::vector<TransferId> active_;
  std::function<void(const PacketEvent&)> observer_;

  // per-step scratch
  std::vector<std::vector<TransferId>> inbox_;
  std::vector<NodeId> receivers_;
  std::vector<std::uint8_t> sender_busy_;
  std::vector<NodeId> busy_senders_;
  std::vector<NodeId> free_;
};

inline std::function<void(const PacketEvent&)> csv_packet_trace(std::ostream& os) {
  os << "step,src,dst,tag\n";
  return [&os](const PacketEvent& e) { os << e.step << ',' << e.src << ',' << e.dst << ',' << e.tag << '\n'; };
}

}  // namespace repsim
