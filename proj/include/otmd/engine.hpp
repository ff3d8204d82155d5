#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "otmd/ids.hpp"
#include "otmd/kernels.hpp"
#include "otmd/scenario.hpp"

namespace otmd {

/// A (vehicle type, next downstream link) pair. Sink links carry kTerminal.
struct Commodity {
    VehicleTypeId vehicle_type;
    LinkId next;
    friend auto operator<=>(const Commodity&, const Commodity&) = default;
};

/// Commodities a link can hold, sorted: every probabilistic type once per
/// successor, deterministic types only where their path passes.
std::vector<Commodity> link_commodities(const Scenario& scenario, const NetworkIndex& index, LinkId link);

// --- single-cell CTM rules ---------------------------------------------------

/// Per-commodity sending flow: min(n_total, capacity) split in proportion
/// to the commodity counts.
std::vector<double> compute_demand(std::span<const double> counts, double capacity);

/// max(0, min(capacity, wave_ratio * (jam - n_total))).
double compute_supply(double n_total, double capacity, double jam, double wave_ratio);

struct FluxPacket {
    RoadConnectionId connection;
    std::vector<double> vehicles;  // one entry per commodity
};

/// Routes a last cell's commodity demands to the group's road connections by
/// next link. Commodities whose next link no connection of the group serves
/// contribute nothing; a next link no connection of the whole link reaches is
/// a routing error.
std::vector<FluxPacket> compute_connection_demands(std::span<const Commodity> commodities,
                                                   std::span<const double> demand, const LaneGroup& group,
                                                   std::span<const RoadConnection> link_connections);

/// Common scale factor of a proportional merge: 1 if every target group can
/// take its demand, otherwise the tightest supply/demand ratio.
double node_flow_factor(std::span<const double> demand, std::span<const double> supply);

/// Single-target proportional merge: every connection's demand scaled by
/// node_flow_factor({sum of demands}, {supply}).
std::vector<double> resolve_node_flows(std::span<const double> connection_demand, double supply);

/// Retags `vehicles` of `type` entering `link` at time t: deterministic types
/// take their next path link, probabilistic types split by the turning row at
/// the link's end node, and anything entering a sink is terminal.
std::vector<std::pair<LinkId, double>> assign_downstream(double vehicles, const VehicleType& type, LinkId link,
                                                         const NetworkIndex& index, double t);

// --- boundary flow slots -------------------------------------------------------

/// One number exchanged per step: vehicles of (vehicle_type, next) moving over
/// `connection`. Inflow slots name the target lane group of the downstream link
/// and the commodity after retagging; outflow slots name the source lane group
/// of the upstream link and next = the connection's out link.
struct Slot {
    RoadConnectionId connection;
    LaneGroupId lane_group;
    VehicleTypeId vehicle_type;
    LinkId next;
    friend auto operator<=>(const Slot&, const Slot&) = default;
};

enum class FlowKind { kInflow, kOutflow };

/// A node-model flow of a held link, evaluated by whoever owns the node the
/// connection crosses.
struct FlowEntry {
    Slot slot;
    FlowKind kind;
    LinkId link;              // held link receiving or releasing the flow
    NodeId node;              // node whose model computes it
    std::size_t state_index;  // first (inflow) or last (outflow) cell
};

/// Every node-model flow of a scenario or fragment's held links, sorted by
/// slot, with state_index left 0. Depends only on data every fragment holding
/// the link carries, so two workers derive the same entries for shared links.
std::vector<FlowEntry> flow_entries(const Scenario& scenario, const NetworkIndex& index);

// --- engine --------------------------------------------------------------------

struct StepMetrics {
    int step = 0;               // steps completed
    double in_network = 0;      // vehicles on owned links
    double entered = 0;         // cumulative, into owned source links
    double exited = 0;          // cumulative, out of owned sink links
    double queued = 0;          // source spill queues of owned links
};

struct DumpRow {
    int step;
    LinkId link;
    LaneGroupId lane_group;
    int cell;
    VehicleTypeId vehicle_type;
    LinkId next;
    double vehicles;
};

/// Advances one scenario or fragment. Links whose start node is local are
/// owned: their state is authoritative and they count towards metrics. A
/// fragment's other links are mirrors, advanced with identical arithmetic from
/// the flows received for them.
class Engine {
public:
    explicit Engine(Scenario scenario, const kernels::KernelSet* kernels = nullptr);
    ~Engine();
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    const Scenario& scenario() const { return scenario_; }
    const NetworkIndex& index() const { return index_; }
    const kernels::KernelSet& kernels() const { return *kernels_; }
    int steps_done() const { return step_; }

    /// Lane changes, demand/supply, internal cell flows and the node models of
    /// local nodes. Fills every flow entry evaluated here.
    void phase_a();
    /// Applies all flow entries (local and received), source injection and the
    /// conservation update; checks conservation.
    void phase_b();
    void step() {
        phase_a();
        phase_b();
    }

    /// All flow entries, sorted by slot.
    std::span<const FlowEntry> entries() const { return entries_; }
    double entry_value(std::size_t i) const { return entry_values_[i]; }
    void set_entry_value(std::size_t i, double v) { entry_values_[i] = v; }
    /// Index of the entry with this slot, or npos.
    std::size_t find_entry(const Slot& slot) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    bool owns(LinkId link) const;
    StepMetrics metrics() const;
    /// State of owned links, one row per (lane group, cell, commodity).
    std::vector<DumpRow> dump() const;
    /// Vehicles per (lane group, commodity, cell) of one held link, in storage order.
    std::span<const double> link_state(LinkId link) const;
    /// Overwrites one link's state (test setup).
    void set_link_state(LinkId link, std::span<const double> values);
    const std::vector<Commodity>& commodities(LinkId link) const;
    const std::vector<LaneGroup>& lane_groups(LinkId link) const;
    double queue(LinkId link, VehicleTypeId type) const;

private:
    struct LinkPlan;
    struct GroupPlan;
    struct Movement;
    struct Source;

    void build();
    void build_movements();
    void build_sources();
    void lane_changes();
    void cell_flows();
    void node_models();
    void inject_sources(double& injected, double& injected_owned);

    std::size_t link_slot(LinkId link) const;

    Scenario scenario_;
    NetworkIndex index_;
    const kernels::KernelSet* kernels_;
    int step_ = 0;

    std::vector<LinkPlan> links_;
    std::vector<GroupPlan> groups_;
    std::vector<Movement> movements_;
    std::vector<Source> sources_;
    std::vector<FlowEntry> entries_;
    std::vector<double> entry_values_;

    // Commodity-major per lane group: state_[group.state + c * cells + k].
    std::vector<double> state_, in_, out_, share_;
    // Per cell: cell_[group.cell + k].
    std::vector<double> totals_, capacity_, jam_, wave_ratio_, demand_, supply_, flowcap_;

    double state_sum_ = 0;
    double sink_all_ = 0;     // discharged this step, every held sink
    double sink_owned_ = 0;
    double entered_ = 0;      // cumulative, owned
    double exited_ = 0;       // cumulative, owned
};

/// Writes rows as `step,link,lane_group,cell,vehicle_type,next_link,vehicles`.
std::string format_dump(std::span<const DumpRow> rows, bool header = true);

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x);
    double value() const { return sum_ + compensation_; }

private:
    double sum_ = 0;
    double compensation_ = 0;
};

}  // namespace otmd
