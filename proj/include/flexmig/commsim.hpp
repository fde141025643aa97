#pragma once

// Communicator bootstrap across MIG instances: peer discovery with an extra
// per-instance identity, topology construction with synthetic Bus-ID labels,
// and transport selection.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "flexmig/error.hpp"
#include "json.hpp"

namespace flexmig::comm {

struct PeerInfo {
  int rank = 0;
  std::string pcie_bus_id;  // canonical, e.g. "00:4B:00.0"
  std::string mig_id;       // opaque instance identity
  std::uint64_t host_hash = 0;
  std::uint64_t pid_hash = 0;

  bool operator==(const PeerInfo&) const = default;
};

class duplicate_device_error : public error {
 public:
  duplicate_device_error(int rank_a, int rank_b)
      : error("DuplicateDevice", "ranks " + std::to_string(rank_a) + " and " +
                                     std::to_string(rank_b) +
                                     " resolve to the same device"),
        rank_a_(rank_a),
        rank_b_(rank_b) {}

  [[nodiscard]] int rank_a() const noexcept { return rank_a_; }
  [[nodiscard]] int rank_b() const noexcept { return rank_b_; }

 private:
  int rank_a_;
  int rank_b_;
};

// Bus IDs are "[dddd:]bb:dd.f". Physical GPUs are addressed with function 0;
// a function digit 1-9 marks a synthetic label.
namespace detail {

inline const std::regex& bus_pattern() {
  static const std::regex re(
      R"(^(?:[0-9A-Fa-f]{2,4}:)?[0-9A-Fa-f]{2}:[0-9A-Fa-f]{2}\.([0-9])$)");
  return re;
}

}  // namespace detail

inline bool is_well_formed_bus_id(std::string_view s) {
  return std::regex_match(s.begin(), s.end(), detail::bus_pattern());
}

inline bool is_canonical_bus_id(std::string_view s) {
  return is_well_formed_bus_id(s) && s.back() == '0';
}

inline void validate(const PeerInfo& p) {
  if (!is_canonical_bus_id(p.pcie_bus_id)) {
    throw error("InvalidPeer", "rank " + std::to_string(p.rank) +
                                   ": bus id '" + p.pcie_bus_id +
                                   "' is not canonical");
  }
  if (p.mig_id.empty()) {
    throw error("InvalidPeer",
                "rank " + std::to_string(p.rank) + ": empty mig_id");
  }
}

// Largest duplicate ordinal the function digit can carry.
inline constexpr int kMaxSyntheticOrdinal = 9;

inline std::string synthetic_label(std::string_view canonical, int ordinal) {
  if (ordinal < 0 || ordinal > kMaxSyntheticOrdinal) {
    throw error("OrdinalOverflow",
                "duplicate ordinal " + std::to_string(ordinal) + " for " +
                    std::string(canonical));
  }
  std::string label(canonical);
  label.back() = static_cast<char>('0' + ordinal);
  return label;
}

inline std::string restore_bus_id(std::string_view label) {
  if (!is_well_formed_bus_id(label)) {
    throw error("MalformedLabel", std::string(label));
  }
  std::string canonical(label);
  canonical.back() = '0';
  return canonical;
}

struct TopologyNode {
  std::string label;
  std::string canonical;
  int rank = 0;

  bool operator==(const TopologyNode&) const = default;
};

struct MigListEntry {
  std::string pcie_bus_id;
  int count = 0;

  bool operator==(const MigListEntry&) const = default;
};

struct TopologyGraph {
  std::vector<TopologyNode> nodes;
  std::vector<MigListEntry> mig_list;

  bool operator==(const TopologyGraph&) const = default;
};

// Nodes follow peer order. The first rank on a bus keeps the canonical ID;
// the k-th duplicate gets the function digit k.
inline TopologyGraph build_topology(const std::vector<PeerInfo>& peers) {
  TopologyGraph g;
  for (const auto& p : peers) {
    auto it = std::find_if(
        g.mig_list.begin(), g.mig_list.end(),
        [&](const MigListEntry& e) { return e.pcie_bus_id == p.pcie_bus_id; });
    int ordinal = 0;
    if (it == g.mig_list.end()) {
      g.mig_list.push_back({p.pcie_bus_id, 1});
    } else {
      ordinal = it->count++;
    }
    g.nodes.push_back({synthetic_label(p.pcie_bus_id, ordinal), p.pcie_bus_id,
                       p.rank});
  }
  return g;
}

// Only path that hands a bus ID to driver-level code.
inline std::string driver_bus_id(const TopologyGraph& g, int rank) {
  for (const auto& n : g.nodes) {
    if (n.rank == rank) return restore_bus_id(n.label);
  }
  throw error("UnknownRank", std::to_string(rank));
}

struct Communicator {
  int nranks = 0;
  std::vector<PeerInfo> peers;
  TopologyGraph topology;
};

// Legacy check: two peers on one host sharing a Bus ID are the same device.
// MIG-aware check: they are only the same device if mig_id also matches.
inline Communicator discover_peers(std::vector<PeerInfo> peers, bool mig_aware) {
  std::sort(peers.begin(), peers.end(),
            [](const PeerInfo& a, const PeerInfo& b) { return a.rank < b.rank; });
  for (std::size_t i = 0; i < peers.size(); ++i) {
    validate(peers[i]);
    if (peers[i].rank != static_cast<int>(i)) {
      throw error("InvalidRanks", "ranks must be 0..n-1 and distinct");
    }
  }
  for (std::size_t a = 0; a < peers.size(); ++a) {
    for (std::size_t b = a + 1; b < peers.size(); ++b) {
      const auto& pa = peers[a];
      const auto& pb = peers[b];
      if (pa.host_hash != pb.host_hash || pa.pcie_bus_id != pb.pcie_bus_id)
        continue;
      if (!mig_aware || pa.mig_id == pb.mig_id) {
        throw duplicate_device_error(pa.rank, pb.rank);
      }
    }
  }
  Communicator comm;
  comm.nranks = static_cast<int>(peers.size());
  comm.topology = build_topology(peers);
  comm.peers = std::move(peers);
  return comm;
}

enum class Transport { shm, net };

inline std::string to_string(Transport t) {
  return t == Transport::shm ? "SHM" : "NET";
}

// P2P/NVLink between MIG instances is unsupported, so same-host peers
// always use host shared memory.
inline Transport select_transport(const PeerInfo& a, const PeerInfo& b) {
  return a.host_hash == b.host_hash ? Transport::shm : Transport::net;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const PeerInfo& p) {
  j = {{"rank", p.rank},
       {"pcie_bus_id", p.pcie_bus_id},
       {"mig_id", p.mig_id},
       {"host_hash", p.host_hash},
       {"pid_hash", p.pid_hash}};
}
inline void from_json(const nlohmann::json& j, PeerInfo& p) {
  j.at("rank").get_to(p.rank);
  j.at("pcie_bus_id").get_to(p.pcie_bus_id);
  j.at("mig_id").get_to(p.mig_id);
  j.at("host_hash").get_to(p.host_hash);
  p.pid_hash = j.value("pid_hash", std::uint64_t{0});
}

inline void to_json(nlohmann::json& j, const TopologyGraph& g) {
  j = nlohmann::json::object();
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    j["nodes"].push_back(
        {{"label", n.label}, {"canonical", n.canonical}, {"rank", n.rank}});
  }
  j["mig_list"] = nlohmann::json::array();
  for (const auto& e : g.mig_list) {
    j["mig_list"].push_back({{"pcie_bus_id", e.pcie_bus_id}, {"count", e.count}});
  }
}

// Peer files are JSON lines, one PeerInfo per line.
inline std::vector<PeerInfo> parse_peers(std::string_view text) {
  std::vector<PeerInfo> peers;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const auto line = text.substr(
        pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      peers.push_back(nlohmann::json::parse(line).get<PeerInfo>());
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(line_no, e.what());
    }
  }
  return peers;
}

}  // namespace flexmig::comm
