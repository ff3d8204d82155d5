#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "otmd/engine.hpp"
#include "otmd/ids.hpp"
#include "otmd/scenario.hpp"

namespace otmd {

/// Assignment of every node to one of `count` non-empty subsets.
struct NodePartition {
    int count = 1;
    std::vector<std::pair<NodeId, int>> assignment;  // sorted by node id

    int subset_of(NodeId node) const;
    std::vector<int> sizes() const;
    friend bool operator==(const NodePartition&, const NodePartition&) = default;
};

inline constexpr double kBalanceTolerance = 1.1;

/// Largest subset size partition_nodes guarantees: ceil(1.1 * nodes / n).
long long balance_bound(std::size_t nodes, int n);

/// Greedy graph growing from pseudo-peripheral seeds into exactly balanced
/// subsets, then boundary refinement moving nodes with positive cut gain while
/// every subset stays within balance_bound. Deterministic for a given seed.
NodePartition partition_nodes(const Scenario& scenario, int n, std::uint64_t seed);

/// Links whose end points lie in different subsets.
std::size_t cut_links(const Scenario& scenario, const NodePartition& partition);

/// Reads `node_id subset` lines, or METIS output (one subset per line) after a
/// `#! metis` header; METIS vertex k is the k-th id of an optional `#! ids`
/// line, else the k-th node in ascending id order. With expected_count > 0,
/// subset indices must lie below it.
NodePartition parse_partition(std::string_view text, const Scenario& scenario, int expected_count = 0);
NodePartition load_partition(const std::string& path, const Scenario& scenario, int expected_count = 0);
std::string format_partition(const NodePartition& partition);
void save_partition(const NodePartition& partition, const std::string& path);
/// Checks totality, exclusivity and non-empty subsets against the scenario.
void validate_partition(const NodePartition& partition, const Scenario& scenario);

struct Subnetwork {
    int index = 0;
    std::vector<NodeId> nodes;
    std::vector<LinkId> interior;
    std::vector<LinkId> relative_sources;  // end node here
    std::vector<LinkId> relative_sinks;    // start node here
    std::vector<RoadConnectionId> relative_source_connections;
    std::vector<RoadConnectionId> relative_sink_connections;
    Scenario fragment;
};

/// One fragment per subset holding its nodes and every link touching them,
/// plus the road connections, split rows and demands of those links.
std::vector<Subnetwork> build_subnetworks(const Scenario& scenario, const NodePartition& partition);

/// Union of fragments with overlap links deduplicated.
Scenario reconstruct(const std::vector<Scenario>& fragments);

struct MetaEdge {
    int a = 0, b = 0;  // a < b
    std::vector<LinkId> links;
    friend bool operator==(const MetaEdge&, const MetaEdge&) = default;
};

struct Metagraph {
    int count = 1;
    std::vector<MetaEdge> edges;  // sorted by (a, b)

    std::vector<int> neighbors(int i) const;
    friend bool operator==(const Metagraph&, const Metagraph&) = default;
};

Metagraph build_metagraph(const std::vector<Subnetwork>& subnetworks);
/// Same graph read from fragment headers alone.
Metagraph build_metagraph(const std::vector<Scenario>& fragments);

struct DecoderMap {
    int sender = 0;
    int receiver = 0;
    std::vector<Slot> slots;
    std::size_t length() const { return slots.size(); }
    friend bool operator==(const DecoderMap&, const DecoderMap&) = default;
};

/// Layout of the message `sender` sends `receiver` each step: inflows into
/// links running sender -> receiver, then outflows of links running
/// receiver -> sender, all evaluated at sender's nodes; canonical slot order.
/// Derivable from the fragment of either end.
DecoderMap decoder_map(const Scenario& fragment, std::span<const FlowEntry> entries, int sender, int receiver);
DecoderMap decoder_map(const Scenario& fragment, int sender, int receiver);

/// Both directions of a metagraph edge, derived from subnetwork i's data.
std::pair<DecoderMap, DecoderMap> build_decoder_maps(const Subnetwork& i, const Subnetwork& j);

/// Every decoder map of every subnetwork, in the order a worker needs them:
/// result[i] lists (map i->j, map j->i) for each neighbour j ascending.
std::vector<std::vector<std::pair<DecoderMap, DecoderMap>>> build_all_decoder_maps(
    const std::vector<Subnetwork>& subnetworks, const Metagraph& metagraph);

/// Writes one fragment file per subnetwork plus metagraph.json and
/// decoders.json into `dir`.
void write_partition_outputs(const std::vector<Subnetwork>& subnetworks, const Metagraph& metagraph,
                             const std::string& dir);
/// Fragment files fragment-<i>.json from `dir`, ordered by index.
std::vector<Scenario> load_fragments(const std::string& dir);

std::string metagraph_json(const Metagraph& metagraph);
std::string decoder_maps_json(const std::vector<DecoderMap>& maps);

}  // namespace otmd
