#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "repsim/random.hpp"

namespace repsim {

using NodeId = std::uint32_t;
using ObjectId = std::uint32_t;

struct PlacementConfig {
  std::uint32_t N_total = 0;
  std::uint32_t cluster_size = 0;
  std::uint32_t L_per_cluster = 0;
  int n = 0;

  std::uint32_t clusters() const { return cluster_size ? N_total / cluster_size : 0; }
  std::uint32_t objects() const { return clusters() * L_per_cluster; }

  void validate() const {
    if (n < 1) throw std::invalid_argument("placement: n must be positive");
    if (cluster_size < static_cast<std::uint32_t>(n))
      throw std::invalid_argument("placement: cluster_size (" + std::to_string(cluster_size) +
                                  ") must be >= n (" + std::to_string(n) + ")");
    if (N_total % cluster_size != 0)
      throw std::invalid_argument("placement: N_total must be divisible by cluster_size");
  }
};

struct FragmentRef {
  ObjectId object;
  int fragment;
  friend bool operator==(const FragmentRef&, const FragmentRef&) = default;
};

/// Forward map object -> node per fragment, plus the reverse index.
class PlacementMap {
 public:
  PlacementMap() = default;

  const PlacementConfig& config() const { return config_; }
  std::uint32_t objects() const { return static_cast<std::uint32_t>(nodes_.size()); }
  const std::vector<NodeId>& nodes_of(ObjectId o) const { return nodes_.at(o); }
  NodeId node_of(ObjectId o, int fragment) const { return nodes_.at(o).at(static_cast<std::size_t>(fragment)); }
  std::uint32_t cluster_of(ObjectId o) const { return o / config_.L_per_cluster; }
  NodeId cluster_begin(std::uint32_t cluster) const { return cluster * config_.cluster_size; }

  const std::vector<FragmentRef>& fragments_on_node(NodeId node) const { return reverse_.at(node); }

  void write_csv(std::ostream& os) const {
    os << "object,fragment,node\n";
    for (ObjectId o = 0; o < objects(); ++o)
      for (std::size_t f = 0; f < nodes_[o].size(); ++f) os << o << ',' << f << ',' << nodes_[o][f] << '\n';
  }

  friend PlacementMap place(const PlacementConfig& config, Rng& rng);

 private:
  PlacementConfig config_;
  std::vector<std::vector<NodeId>> nodes_;
  std::vector<std::vector<FragmentRef>> reverse_;
};

/// Objects are numbered cluster by cluster; each object's n fragments land
/// on n distinct nodes drawn uniformly without replacement from its cluster.
inline PlacementMap place(const PlacementConfig& config, Rng& rng) {
  config.validate();
  PlacementMap map;
  map.config_ = config;
  map.nodes_.reserve(config.objects());
  map.reverse_.assign(config.N_total, {});
  std::vector<NodeId> pool(config.cluster_size);
  for (std::uint32_t c = 0; c < config.clusters(); ++c) {
    const NodeId base = c * config.cluster_size;
    for (std::uint32_t l = 0; l < config.L_per_cluster; ++l) {
      for (std::uint32_t i = 0; i < config.cluster_size; ++i) pool[i] = base + i;
      std::vector<NodeId> chosen(static_cast<std::size_t>(config.n));
      // partial Fisher-Yates
      for (int f = 0; f < config.n; ++f) {
        const auto j = f + uniform_index(rng, config.cluster_size - static_cast<std::uint32_t>(f));
        std::swap(pool[static_cast<std::size_t>(f)], pool[j]);
        chosen[static_cast<std::size_t>(f)] = pool[static_cast<std::size_t>(f)];
      }
      const auto id = static_cast<ObjectId>(map.nodes_.size());
      for (int f = 0; f < config.n; ++f) map.reverse_[chosen[static_cast<std::size_t>(f)]].push_back({id, f});
      map.nodes_.push_back(std::move(chosen));
    }
  }
  return map;
}

}  // namespace repsim
