#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "otmd/ids.hpp"

namespace otmd {

/// Triangular fundamental diagram, per lane.
struct FdParams {
    double capacity = 0;               // veh/s/lane
    double free_flow_speed = 0;        // m/s
    double congestion_wave_speed = 0;  // m/s
    double jam_density = 0;            // veh/m/lane

    friend bool operator==(const FdParams&, const FdParams&) = default;
};

/// Inclusive range of 1-based lane indices.
struct LaneRange {
    int first = 1;
    int last = 1;

    int count() const { return last - first + 1; }
    bool contains(int lane) const { return lane >= first && lane <= last; }
    int overlap(const LaneRange& other) const;

    friend bool operator==(const LaneRange&, const LaneRange&) = default;
};

struct Node {
    NodeId id;
    // Derived from the link table, never serialized.
    std::vector<LinkId> incoming;
    std::vector<LinkId> outgoing;

    friend bool operator==(const Node&, const Node&) = default;
};

struct Link {
    LinkId id;
    NodeId start;
    NodeId end;
    double length = 0;  // m
    int lanes = 1;
    FdParams fd;
    // Explicit source flag; links without predecessors may carry demand
    // without it.
    bool source = false;

    friend bool operator==(const Link&, const Link&) = default;
};

struct RoadConnection {
    RoadConnectionId id;
    LinkId in_link;
    LinkId out_link;
    LaneRange in_lanes;
    LaneRange out_lanes;

    friend bool operator==(const RoadConnection&, const RoadConnection&) = default;
};

struct ProbabilisticRouting {
    friend bool operator==(const ProbabilisticRouting&, const ProbabilisticRouting&) = default;
};
struct DeterministicRouting {
    std::vector<LinkId> path;
    friend bool operator==(const DeterministicRouting&, const DeterministicRouting&) = default;
};

struct VehicleType {
    VehicleTypeId id;
    std::variant<ProbabilisticRouting, DeterministicRouting> routing;

    bool deterministic() const { return std::holds_alternative<DeterministicRouting>(routing); }
    const std::vector<LinkId>& path() const { return std::get<DeterministicRouting>(routing).path; }

    friend bool operator==(const VehicleType&, const VehicleType&) = default;
};

/// Piecewise-constant profile entry, active from `start` seconds until the
/// next entry's start.
template <class T>
struct Breakpoint {
    double start = 0;
    T value{};
    friend bool operator==(const Breakpoint&, const Breakpoint&) = default;
};

/// (out link, probability) pairs sorted by link id.
using SplitDistribution = std::vector<std::pair<LinkId, double>>;

struct SplitRow {
    NodeId node;
    LinkId in_link;
    VehicleTypeId vehicle_type;
    std::vector<Breakpoint<SplitDistribution>> profile;

    const SplitDistribution& at(double t) const;
    friend bool operator==(const SplitRow&, const SplitRow&) = default;
};

struct DemandEntry {
    LinkId link;
    VehicleTypeId vehicle_type;
    std::vector<Breakpoint<double>> profile;  // veh/s

    double at(double t) const;
    friend bool operator==(const DemandEntry&, const DemandEntry&) = default;
};

struct SimParams {
    double dt = 1;  // s
    int steps = 1;
    double lane_change_rate = 0.5;  // fraction per step

    friend bool operator==(const SimParams&, const SimParams&) = default;
};

/// Link known to a subnetwork fragment only by reference: it is the far end
/// of a relative source/sink road connection.
struct ExternalLink {
    LinkId id;
    NodeId start;
    NodeId end;
    int lanes = 1;
    friend bool operator==(const ExternalLink&, const ExternalLink&) = default;
};

struct PeerLink {
    LinkId link;
    int peer = 0;
    friend auto operator<=>(const PeerLink&, const PeerLink&) = default;
};

/// Present only on per-subnetwork scenario fragments.
struct FragmentInfo {
    int index = 0;
    int count = 1;
    std::vector<NodeId> local_nodes;
    std::vector<PeerLink> relative_sources;  // end node local, start node in `peer`
    std::vector<PeerLink> relative_sinks;    // start node local, end node in `peer`
    std::vector<ExternalLink> external_links;

    friend bool operator==(const FragmentInfo&, const FragmentInfo&) = default;
};

/// A network plus everything needed to simulate it. All tables are kept
/// sorted by id; lookups are binary searches.
struct Scenario {
    std::vector<Node> nodes;
    std::vector<Link> links;
    std::vector<RoadConnection> connections;
    std::vector<VehicleType> vehicle_types;
    std::vector<SplitRow> splits;
    std::vector<DemandEntry> demands;
    SimParams sim;
    std::optional<FragmentInfo> fragment;

    const Node* find_node(NodeId id) const;
    const Link* find_link(LinkId id) const;
    const RoadConnection* find_connection(RoadConnectionId id) const;
    const VehicleType* find_vehicle_type(VehicleTypeId id) const;
    const Link& link(LinkId id) const;
    const ExternalLink* find_external(LinkId id) const;

    /// True if `id` is owned here, i.e. not a fragment, or the node is local.
    bool is_local(NodeId id) const;

    /// Sorts every table and rebuilds the derived node adjacency lists.
    void normalize();

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Adjacency and lookup tables derived once from a scenario.
class NetworkIndex {
public:
    explicit NetworkIndex(const Scenario& scenario);

    const Scenario& scenario() const { return *scenario_; }

    /// Road connections leaving / entering a link, ascending by id.
    std::span<const RoadConnection> outgoing(LinkId link) const;
    std::span<const RoadConnection> incoming(LinkId link) const;
    /// Distinct downstream links reachable through a road connection, ascending.
    std::span<const LinkId> successors(LinkId link) const;

    bool is_sink(LinkId link) const { return outgoing(link).empty(); }
    bool has_predecessors(LinkId link) const { return !incoming(link).empty(); }
    bool is_source(LinkId link) const;

    const SplitRow* split_row(LinkId in_link, VehicleTypeId type) const;
    std::span<const DemandEntry* const> demands(LinkId link) const;

    /// Lanes of a held or external link.
    int lanes_of(LinkId link) const;

private:
    template <class T>
    using ByLink = std::unordered_map<LinkId, std::vector<T>>;

    const Scenario* scenario_;
    ByLink<RoadConnection> outgoing_;
    ByLink<RoadConnection> incoming_;
    ByLink<LinkId> successors_;
    ByLink<const DemandEntry*> demands_;
    std::unordered_map<LinkId, std::unordered_map<VehicleTypeId, const SplitRow*>> splits_;
};

// --- lane groups and cells -------------------------------------------------

struct LaneGroup {
    LaneGroupId id;
    LinkId link;
    LaneRange lanes;
    std::vector<RoadConnectionId> connections;  // ascending
    int cells = 0;
    double cell_length = 0;

    friend bool operator==(const LaneGroup&, const LaneGroup&) = default;
};

/// Groups adjacent lanes that reach the identical set of outgoing road
/// connections. A link without outgoing connections forms a single group.
/// Cell fields are left for `discretize` to fill.
std::vector<LaneGroup> build_lane_groups(const Link& link, std::span<const RoadConnection> outgoing);

struct Discretization {
    int cells = 1;
    double cell_length = 0;
};

/// cells = max(1, round(length / (free_flow_speed * dt))).
Discretization discretize(const Link& link, double dt);

// --- file format --------------------------------------------------------------

/// Parses and validates a scenario JSON document.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::string& path);

/// Canonical JSON text; byte-identical for structurally equal scenarios.
std::string serialize_scenario(const Scenario& scenario);
void save_scenario(const Scenario& scenario, const std::string& path);

/// Checks every invariant of the data model; throws ScenarioError naming the
/// offending id and rule. Expects a normalized scenario.
void validate_scenario(const Scenario& scenario);

// --- synthetic grid --------------------------------------------------------

struct GridOptions {
    int rows = 1;
    int cols = 1;
    double link_length = 300;  // m
    int lanes = 2;
    FdParams fd{0.5, 15.0, 5.0, 0.15};
    double demand_vph_per_lane = 2000;
    double dt = 2;
    int steps = 100;
    double lane_change_rate = 0.5;
};

struct GridCounts {
    long long nodes = 0;
    long long links = 0;
    long long sources = 0;
};

/// Element counts produced by generate_grid for a rows x cols tiling:
///   nodes   = 3*R*C + R + C
///   links   = 10*R*C - 2*R - 2*C + 2
///   sources = 2*(R + C)
GridCounts grid_counts(int rows, int cols);

/// Tiled grid. Each tile holds one junction, a midblock node on its east edge
/// and one on its south edge, and a bidirectional diagonal connector between
/// the two midblock nodes. Every outward side of a perimeter junction gets a
/// gate node with a source link in and a sink link out. One probabilistic
/// vehicle type with uniform turning splits, no U-turns.
Scenario generate_grid(const GridOptions& options);

}  // namespace otmd
