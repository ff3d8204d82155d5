#include "otmd/engine.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "otmd/errors.hpp"

namespace otmd {

using kernels::max_of;
using kernels::min_of;

// --- helpers shared by the engine and flow_entries ---------------------------

namespace {

std::size_t commodity_index(const std::vector<Commodity>& list, const Commodity& c) {
    auto it = std::lower_bound(list.begin(), list.end(), c);
    if (it == list.end() || *it != c)
        throw InternalError(fmt::format("commodity (type {}, next {}) not held", c.vehicle_type.value, c.next.value));
    return static_cast<std::size_t>(it - list.begin());
}

/// Position of `link` in a deterministic path, or -1.
std::ptrdiff_t path_position(const VehicleType& vt, LinkId link) {
    const auto& path = vt.path();
    auto it = std::find(path.begin(), path.end(), link);
    return it == path.end() ? -1 : it - path.begin();
}

/// Whether vehicles of `vt` can use the movement from `in` to `out`.
bool crosses(const VehicleType& vt, LinkId in, LinkId out) {
    if (!vt.deterministic()) return true;
    const auto pos = path_position(vt, in);
    const auto& path = vt.path();
    return pos >= 0 && static_cast<std::size_t>(pos) + 1 < path.size() && path[pos + 1] == out;
}

/// Next links a vehicle of `vt` can be tagged with on entering `link`.
std::vector<LinkId> entry_tags(const VehicleType& vt, LinkId link, const NetworkIndex& index) {
    if (vt.deterministic()) {
        const auto pos = path_position(vt, link);
        const auto& path = vt.path();
        if (pos < 0) throw InternalError(fmt::format("vehicle type {} enters link {} off its path", vt.id.value, link.value));
        if (static_cast<std::size_t>(pos) + 1 < path.size()) return {path[pos + 1]};
        return {kTerminal};
    }
    if (index.is_sink(link)) return {kTerminal};
    const auto succ = index.successors(link);
    return {succ.begin(), succ.end()};
}

double split_probability(const SplitDistribution& dist, LinkId next) {
    for (const auto& [link, p] : dist)
        if (link == next) return p;
    return 0.0;
}

const SplitRow* required_split_row(const NetworkIndex& index, const VehicleType& vt, LinkId link) {
    if (vt.deterministic() || index.is_sink(link)) return nullptr;
    const SplitRow* row = index.split_row(link, vt.id);
    if (!row)
        throw ScenarioError(fmt::format("vehicle type {} entering link {} has no split row at node {}", vt.id.value,
                                        link.value, index.scenario().link(link).end.value));
    return row;
}

bool group_serves(const LaneGroup& g, RoadConnectionId rc) {
    return std::binary_search(g.connections.begin(), g.connections.end(), rc);
}

template <class Locate>
std::vector<FlowEntry> collect_entries(const Scenario& s, const NetworkIndex& index, Locate&& locate) {
    std::vector<FlowEntry> entries;
    for (const Link& link : s.links) {
        const auto groups = build_lane_groups(link, index.outgoing(link.id));
        const auto commodities = link_commodities(s, index, link.id);
        for (const auto& rc : index.outgoing(link.id)) {
            for (std::size_t g = 0; g < groups.size(); ++g) {
                if (!group_serves(groups[g], rc.id)) continue;
                for (const auto& c : commodities) {
                    if (c.next != rc.out_link) continue;
                    entries.push_back({{rc.id, groups[g].id, c.vehicle_type, rc.out_link}, FlowKind::kOutflow, link.id,
                                       link.end, locate(link.id, g, c, true)});
                }
            }
        }
        for (const auto& rc : index.incoming(link.id)) {
            for (std::size_t h = 0; h < groups.size(); ++h) {
                if (rc.out_lanes.overlap(groups[h].lanes) == 0) continue;
                for (const auto& vt : s.vehicle_types) {
                    if (!crosses(vt, rc.in_link, link.id)) continue;
                    for (LinkId next : entry_tags(vt, link.id, index)) {
                        const Commodity c{vt.id, next};
                        entries.push_back({{rc.id, groups[h].id, vt.id, next}, FlowKind::kInflow, link.id, link.start,
                                           locate(link.id, h, c, false)});
                    }
                }
            }
        }
    }
    std::sort(entries.begin(), entries.end(), [](const FlowEntry& a, const FlowEntry& b) { return a.slot < b.slot; });
    return entries;
}

}  // namespace

std::vector<Commodity> link_commodities(const Scenario& scenario, const NetworkIndex& index, LinkId link) {
    std::vector<Commodity> out;
    const bool sink = index.is_sink(link);
    for (const auto& vt : scenario.vehicle_types) {
        if (vt.deterministic()) {
            const auto pos = path_position(vt, link);
            if (pos < 0) continue;
            const auto& path = vt.path();
            out.push_back({vt.id, static_cast<std::size_t>(pos) + 1 < path.size() ? path[pos + 1] : kTerminal});
        } else if (sink) {
            out.push_back({vt.id, kTerminal});
        } else {
            for (LinkId next : index.successors(link)) out.push_back({vt.id, next});
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<FlowEntry> flow_entries(const Scenario& scenario, const NetworkIndex& index) {
    return collect_entries(scenario, index, [](LinkId, std::size_t, const Commodity&, bool) { return std::size_t{0}; });
}

// --- single-cell rules ---------------------------------------------------------

std::vector<double> compute_demand(std::span<const double> counts, double capacity) {
    double total = 0;
    for (double n : counts) total = total + n;
    const double sending = min_of(total, capacity);
    std::vector<double> out(counts.size(), 0.0);
    for (std::size_t c = 0; c < counts.size(); ++c) out[c] = total > 0.0 ? sending * (counts[c] / total) : 0.0;
    return out;
}

double compute_supply(double n_total, double capacity, double jam, double wave_ratio) {
    return max_of(min_of(capacity, wave_ratio * (jam - n_total)), 0.0);
}

std::vector<FluxPacket> compute_connection_demands(std::span<const Commodity> commodities,
                                                   std::span<const double> demand, const LaneGroup& group,
                                                   std::span<const RoadConnection> link_connections) {
    for (const auto& c : commodities) {
        const bool reachable = std::any_of(link_connections.begin(), link_connections.end(),
                                           [&](const RoadConnection& rc) { return rc.out_link == c.next; });
        if (!reachable && !(c.next == kTerminal && link_connections.empty()))
            throw ScenarioError(fmt::format("link {}: vehicle type {} is routed to link {}, which no road connection reaches",
                                            group.link.value, c.vehicle_type.value, c.next.value));
    }
    std::vector<FluxPacket> packets;
    for (const auto& rc : link_connections) {
        if (!group_serves(group, rc.id)) continue;
        FluxPacket p{rc.id, std::vector<double>(commodities.size(), 0.0)};
        for (std::size_t c = 0; c < commodities.size(); ++c)
            if (commodities[c].next == rc.out_link) p.vehicles[c] = demand[c];
        packets.push_back(std::move(p));
    }
    return packets;
}

double node_flow_factor(std::span<const double> demand, std::span<const double> supply) {
    double alpha = 1.0;
    for (std::size_t h = 0; h < demand.size(); ++h)
        if (demand[h] > supply[h]) alpha = min_of(alpha, supply[h] / demand[h]);
    return alpha;
}

std::vector<double> resolve_node_flows(std::span<const double> connection_demand, double supply) {
    double total = 0;
    for (double d : connection_demand) total = total + d;
    const double alpha = node_flow_factor({&total, 1}, {&supply, 1});
    std::vector<double> flows;
    for (double d : connection_demand) flows.push_back(alpha * d);
    return flows;
}

std::vector<std::pair<LinkId, double>> assign_downstream(double vehicles, const VehicleType& type, LinkId link,
                                                         const NetworkIndex& index, double t) {
    const SplitRow* row = required_split_row(index, type, link);
    std::vector<std::pair<LinkId, double>> out;
    for (LinkId next : entry_tags(type, link, index))
        out.emplace_back(next, row ? vehicles * split_probability(row->at(t), next) : vehicles);
    return out;
}

void CompensatedSum::add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
        compensation_ += (sum_ - t) + x;
    else
        compensation_ += (x - t) + sum_;
    sum_ = t;
}

// --- engine plans ------------------------------------------------------------

struct Engine::LinkPlan {
    const Link* link = nullptr;
    int cells = 1;
    std::vector<Commodity> commodities;
    std::vector<LaneGroup> groups;
    std::size_t first_group = 0;
    std::size_t state_begin = 0, state_end = 0;
    bool owned = false;
    bool sink = false;
    // Per (group position, commodity): group position to shift towards, or -1.
    std::vector<int> lane_target;
};

struct Engine::GroupPlan {
    std::size_t link = 0;
    std::size_t state = 0;  // offset into state_
    std::size_t cell = 0;   // offset into per-cell arrays
    int cells = 1;
    std::size_t commodities = 0;
    int lanes = 1;
};

// Node model for the road connections into one outgoing link of a local node.
struct Engine::Movement {
    struct Feed {  // one (connection, source lane group) pair
        std::size_t group;
        std::vector<double> frac;  // share of the connection's flow per target
        std::vector<std::size_t> share;   // share_ index of each commodity headed here
        std::vector<std::size_t> outflow; // matching outflow entry
    };
    struct Item {  // one vehicle type over one (connection, target) pair
        const SplitRow* row;
        std::vector<std::size_t> sources;  // outflow entries, one per feed of the connection
        std::vector<std::pair<LinkId, std::size_t>> tags;  // (next, inflow entry)
    };
    struct Delivery {
        std::size_t target;
        double frac;
        std::vector<Item> items;
    };
    std::vector<std::size_t> targets;  // lane groups of the outgoing link
    std::vector<Feed> feeds;           // by (connection, group)
    std::vector<Delivery> deliveries;  // by (connection, target)
    std::vector<double> demand, supply;
};

struct Engine::Source {
    struct Type {
        const DemandEntry* demand;
        const SplitRow* row;
        std::vector<std::pair<LinkId, std::size_t>> tags;  // (next, commodity index)
        double queue = 0;
    };
    std::size_t link = 0;
    std::vector<Type> types;
    std::vector<double> frac;  // lanes of each group / lanes of the link
};

// --- construction ----------------------------------------------------------------

Engine::Engine(Scenario scenario, const kernels::KernelSet* kernels)
    : scenario_(std::move(scenario)), index_(scenario_), kernels_(kernels ? kernels : &kernels::active_kernels()) {
    build();
    build_movements();
    build_sources();
}

Engine::~Engine() = default;

std::size_t Engine::link_slot(LinkId link) const {
    auto it = std::lower_bound(links_.begin(), links_.end(), link,
                               [](const LinkPlan& p, LinkId key) { return p.link->id < key; });
    if (it == links_.end() || it->link->id != link) throw ScenarioError(fmt::format("link {} is not held", link.value));
    return static_cast<std::size_t>(it - links_.begin());
}

void Engine::build() {
    const double dt = scenario_.sim.dt;
    std::size_t state_size = 0, cell_size = 0;
    for (const Link& link : scenario_.links) {
        LinkPlan plan;
        plan.link = &link;
        plan.cells = discretize(link, dt).cells;
        plan.commodities = link_commodities(scenario_, index_, link.id);
        plan.groups = build_lane_groups(link, index_.outgoing(link.id));
        plan.first_group = groups_.size();
        plan.owned = scenario_.is_local(link.start);
        plan.sink = index_.is_sink(link.id);
        plan.state_begin = state_size;
        const double cell_length = link.length / plan.cells;
        for (auto& g : plan.groups) {
            g.cells = plan.cells;
            g.cell_length = cell_length;
            GroupPlan gp;
            gp.link = links_.size();
            gp.state = state_size;
            gp.cell = cell_size;
            gp.cells = plan.cells;
            gp.commodities = plan.commodities.size();
            gp.lanes = g.lanes.count();
            state_size += gp.commodities * gp.cells;
            cell_size += gp.cells;
            groups_.push_back(gp);
        }
        plan.state_end = state_size;

        // Lane-change targets: one group towards the nearest serving group.
        const int G = static_cast<int>(plan.groups.size());
        plan.lane_target.assign(plan.groups.size() * plan.commodities.size(), -1);
        if (G > 1) {
            for (std::size_t c = 0; c < plan.commodities.size(); ++c) {
                const LinkId next = plan.commodities[c].next;
                std::vector<bool> serves(G, false);
                for (int g = 0; g < G; ++g) {
                    for (const auto& rc : index_.outgoing(link.id))
                        if (rc.out_link == next && group_serves(plan.groups[g], rc.id)) serves[g] = true;
                }
                for (int g = 0; g < G; ++g) {
                    if (serves[g]) continue;
                    int best = -1;
                    for (int h = 0; h < G; ++h)
                        if (serves[h] && (best < 0 || std::abs(h - g) < std::abs(best - g))) best = h;
                    if (best >= 0) plan.lane_target[g * plan.commodities.size() + c] = best > g ? g + 1 : g - 1;
                }
            }
        }
        links_.push_back(std::move(plan));
    }

    state_.assign(state_size, 0.0);
    in_.assign(state_size, 0.0);
    out_.assign(state_size, 0.0);
    share_.assign(state_size, 0.0);
    for (auto* v : {&totals_, &capacity_, &jam_, &wave_ratio_, &demand_, &supply_, &flowcap_}) v->assign(cell_size, 0.0);
    for (const auto& gp : groups_) {
        const Link& link = *links_[gp.link].link;
        const double cell_length = link.length / gp.cells;
        for (int k = 0; k < gp.cells; ++k) {
            capacity_[gp.cell + k] = link.fd.capacity * gp.lanes * dt;
            jam_[gp.cell + k] = link.fd.jam_density * gp.lanes * cell_length;
            wave_ratio_[gp.cell + k] = link.fd.congestion_wave_speed / link.fd.free_flow_speed;
        }
    }

    entries_ = collect_entries(scenario_, index_, [this](LinkId id, std::size_t g, const Commodity& c, bool last) {
        const LinkPlan& plan = links_[link_slot(id)];
        const GroupPlan& gp = groups_[plan.first_group + g];
        return gp.state + commodity_index(plan.commodities, c) * gp.cells + (last ? gp.cells - 1 : 0);
    });
    entry_values_.assign(entries_.size(), 0.0);
}

std::size_t Engine::find_entry(const Slot& slot) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), slot,
                               [](const FlowEntry& e, const Slot& key) { return e.slot < key; });
    if (it == entries_.end() || it->slot != slot) return npos;
    return static_cast<std::size_t>(it - entries_.begin());
}

void Engine::build_movements() {
    for (const Node& node : scenario_.nodes) {
        if (!scenario_.is_local(node.id)) continue;
        for (LinkId out_id : node.outgoing) {
            const auto rcs = index_.incoming(out_id);
            if (rcs.empty()) continue;
            const LinkPlan& out_plan = links_[link_slot(out_id)];
            Movement m;
            for (std::size_t h = 0; h < out_plan.groups.size(); ++h) m.targets.push_back(out_plan.first_group + h);
            m.demand.assign(m.targets.size(), 0.0);
            m.supply.assign(m.targets.size(), 0.0);

            for (const auto& rc : rcs) {
                const LinkPlan& in_plan = links_[link_slot(rc.in_link)];
                const std::size_t first_feed = m.feeds.size();
                for (std::size_t g = 0; g < in_plan.groups.size(); ++g) {
                    if (!group_serves(in_plan.groups[g], rc.id)) continue;
                    const GroupPlan& gp = groups_[in_plan.first_group + g];
                    Movement::Feed f;
                    f.group = in_plan.first_group + g;
                    for (const auto& tg : out_plan.groups)
                        f.frac.push_back(static_cast<double>(rc.out_lanes.overlap(tg.lanes)) / rc.out_lanes.count());
                    for (std::size_t c = 0; c < in_plan.commodities.size(); ++c) {
                        const Commodity& com = in_plan.commodities[c];
                        if (com.next != out_id) continue;
                        f.share.push_back(gp.state + c * gp.cells + gp.cells - 1);
                        const std::size_t e = find_entry({rc.id, in_plan.groups[g].id, com.vehicle_type, out_id});
                        if (e == npos) throw InternalError(fmt::format("missing outflow entry on connection {}", rc.id.value));
                        f.outflow.push_back(e);
                    }
                    m.feeds.push_back(std::move(f));
                }
                const std::size_t end_feed = m.feeds.size();

                for (std::size_t h = 0; h < out_plan.groups.size(); ++h) {
                    const double frac = static_cast<double>(rc.out_lanes.overlap(out_plan.groups[h].lanes)) /
                                        rc.out_lanes.count();
                    if (frac == 0.0) continue;
                    Movement::Delivery d{h, frac, {}};
                    for (const auto& vt : scenario_.vehicle_types) {
                        if (!crosses(vt, rc.in_link, out_id)) continue;
                        Movement::Item item;
                        item.row = required_split_row(index_, vt, out_id);
                        for (std::size_t f = first_feed; f < end_feed; ++f) {
                            const std::size_t e = find_entry({rc.id, in_plan.groups[m.feeds[f].group - in_plan.first_group].id,
                                                              vt.id, out_id});
                            if (e != npos) item.sources.push_back(e);
                        }
                        for (LinkId next : entry_tags(vt, out_id, index_)) {
                            const std::size_t e = find_entry({rc.id, out_plan.groups[h].id, vt.id, next});
                            if (e == npos) throw InternalError(fmt::format("missing inflow entry on connection {}", rc.id.value));
                            item.tags.emplace_back(next, e);
                        }
                        d.items.push_back(std::move(item));
                    }
                    m.deliveries.push_back(std::move(d));
                }
            }
            movements_.push_back(std::move(m));
        }
    }
}

void Engine::build_sources() {
    for (std::size_t l = 0; l < links_.size(); ++l) {
        const LinkPlan& plan = links_[l];
        const auto demands = index_.demands(plan.link->id);
        if (demands.empty()) continue;
        Source src;
        src.link = l;
        for (const auto& g : plan.groups)
            src.frac.push_back(static_cast<double>(g.lanes.count()) / plan.link->lanes);
        for (const DemandEntry* d : demands) {
            const VehicleType& vt = *scenario_.find_vehicle_type(d->vehicle_type);
            Source::Type type{d, required_split_row(index_, vt, plan.link->id), {}, 0.0};
            for (LinkId next : entry_tags(vt, plan.link->id, index_))
                type.tags.emplace_back(next, commodity_index(plan.commodities, {vt.id, next}));
            src.types.push_back(std::move(type));
        }
        sources_.push_back(std::move(src));
    }
}

// --- stepping ----------------------------------------------------------------------

void Engine::lane_changes() {
    const double eta = scenario_.sim.lane_change_rate;
    if (eta == 0.0) return;
    std::vector<double> wanted, space;
    for (const LinkPlan& plan : links_) {
        const std::size_t G = plan.groups.size();
        if (G < 2) continue;
        const std::size_t C = plan.commodities.size();
        const auto K = static_cast<std::size_t>(plan.cells);
        wanted.assign(G * K, 0.0);
        space.assign(G * K, 0.0);
        for (std::size_t g = 0; g < G; ++g) {
            const GroupPlan& gp = groups_[plan.first_group + g];
            kernels_->accumulate_rows({state_.data() + gp.state, C * K}, C, {totals_.data() + gp.cell, K});
            for (std::size_t k = 0; k < K; ++k)
                space[g * K + k] = max_of(jam_[gp.cell + k] - totals_[gp.cell + k], 0.0);
        }
        bool any = false;
        for (std::size_t g = 0; g < G; ++g) {
            const GroupPlan& gp = groups_[plan.first_group + g];
            for (std::size_t c = 0; c < C; ++c) {
                const int t = plan.lane_target[g * C + c];
                if (t < 0) continue;
                for (std::size_t k = 0; k < K; ++k) {
                    const double want = eta * state_[gp.state + c * K + k];
                    wanted[t * K + k] = wanted[t * K + k] + want;
                    any = any || want > 0.0;
                }
            }
        }
        if (!any) continue;
        for (std::size_t g = 0; g < G; ++g) {
            const GroupPlan& gp = groups_[plan.first_group + g];
            for (std::size_t c = 0; c < C; ++c) {
                const int t = plan.lane_target[g * C + c];
                if (t < 0) continue;
                const GroupPlan& tp = groups_[plan.first_group + t];
                for (std::size_t k = 0; k < K; ++k) {
                    const double want = eta * state_[gp.state + c * K + k];
                    const double total = wanted[t * K + k];
                    const double room = space[t * K + k];
                    const double move = total > room ? room * (want / total) : want;
                    out_[gp.state + c * K + k] += move;
                    in_[tp.state + c * K + k] += move;
                }
            }
        }
        const std::size_t n = plan.state_end - plan.state_begin;
        std::span<double> st{state_.data() + plan.state_begin, n};
        const double low = kernels_->conserve(st, {in_.data() + plan.state_begin, n}, {out_.data() + plan.state_begin, n});
        if (low < -1e-12)
            throw InternalError(fmt::format("link {}: lane changes drove a cell to {}", plan.link->id.value, low));
        std::fill(in_.begin() + plan.state_begin, in_.begin() + plan.state_end, 0.0);
        std::fill(out_.begin() + plan.state_begin, out_.begin() + plan.state_end, 0.0);
    }
}

void Engine::cell_flows() {
    for (const GroupPlan& gp : groups_) {
        const auto K = static_cast<std::size_t>(gp.cells);
        kernels_->accumulate_rows({state_.data() + gp.state, gp.commodities * K}, gp.commodities,
                                  {totals_.data() + gp.cell, K});
    }
    kernels_->demand_supply(totals_, capacity_, jam_, wave_ratio_, demand_, supply_);

    sink_all_ = 0;
    sink_owned_ = 0;
    for (const GroupPlan& gp : groups_) {
        const auto K = static_cast<std::size_t>(gp.cells);
        const std::size_t cell = gp.cell;
        // Internal boundaries pass min(demand, next supply); the last cell
        // offers its full demand to the node model or the sink.
        if (K > 1)
            kernels_->elementwise_min({demand_.data() + cell, K - 1}, {supply_.data() + cell + 1, K - 1},
                                      {flowcap_.data() + cell, K - 1});
        flowcap_[cell + K - 1] = demand_[cell + K - 1];
        const LinkPlan& plan = links_[gp.link];
        double discharged = 0;
        for (std::size_t c = 0; c < gp.commodities; ++c) {
            const std::size_t row = gp.state + c * K;
            kernels_->proportional_share({state_.data() + row, K}, {totals_.data() + cell, K},
                                         {flowcap_.data() + cell, K}, {share_.data() + row, K});
            for (std::size_t k = 0; k + 1 < K; ++k) {
                out_[row + k] = share_[row + k];
                in_[row + k + 1] = share_[row + k];
            }
            if (plan.sink) {
                out_[row + K - 1] = share_[row + K - 1];
                discharged = discharged + share_[row + K - 1];
            }
        }
        sink_all_ += discharged;
        if (plan.owned) sink_owned_ += discharged;
    }
}

void Engine::node_models() {
    const double t = step_ * scenario_.sim.dt;
    for (Movement& m : movements_) {
        std::fill(m.demand.begin(), m.demand.end(), 0.0);
        for (const auto& f : m.feeds) {
            double d = 0;
            for (std::size_t idx : f.share) d = d + share_[idx];
            for (std::size_t h = 0; h < m.targets.size(); ++h)
                if (f.frac[h] > 0.0) m.demand[h] = m.demand[h] + f.frac[h] * d;
        }
        for (std::size_t h = 0; h < m.targets.size(); ++h) m.supply[h] = supply_[groups_[m.targets[h]].cell];
        const double alpha = node_flow_factor(m.demand, m.supply);

        for (const auto& f : m.feeds)
            for (std::size_t i = 0; i < f.share.size(); ++i) entry_values_[f.outflow[i]] = alpha * share_[f.share[i]];

        for (const auto& d : m.deliveries) {
            for (const auto& item : d.items) {
                double q = 0;
                for (std::size_t e : item.sources) q = q + d.frac * entry_values_[e];
                if (item.row) {
                    const SplitDistribution& dist = item.row->at(t);
                    for (const auto& [next, e] : item.tags) entry_values_[e] = q * split_probability(dist, next);
                } else {
                    for (const auto& [next, e] : item.tags) entry_values_[e] = q;
                }
            }
        }
    }
}

void Engine::inject_sources(double& injected, double& injected_owned) {
    const double dt = scenario_.sim.dt;
    const double t = step_ * dt;
    std::vector<double> desired;
    for (Source& src : sources_) {
        const LinkPlan& plan = links_[src.link];
        desired.clear();
        double total = 0;
        for (auto& type : src.types) {
            desired.push_back(type.queue + type.demand->at(t) * dt);
            total = total + desired.back();
        }
        if (!(total > 0.0)) continue;
        double alpha = 1.0;
        for (std::size_t h = 0; h < plan.groups.size(); ++h) {
            const GroupPlan& gp = groups_[plan.first_group + h];
            double arriving = 0;
            for (std::size_t c = 0; c < gp.commodities; ++c) arriving = arriving + in_[gp.state + c * gp.cells];
            const double room = max_of(supply_[gp.cell] - arriving, 0.0);
            const double need = src.frac[h] * total;
            if (need > room) alpha = min_of(alpha, room / need);
        }
        double added = 0;
        for (std::size_t i = 0; i < src.types.size(); ++i) {
            auto& type = src.types[i];
            const double entering = alpha * desired[i];
            type.queue = desired[i] - entering;
            const SplitDistribution* dist = type.row ? &type.row->at(t) : nullptr;
            for (std::size_t h = 0; h < plan.groups.size(); ++h) {
                const GroupPlan& gp = groups_[plan.first_group + h];
                const double x = src.frac[h] * entering;
                for (const auto& [next, c] : type.tags) {
                    const double v = dist ? x * split_probability(*dist, next) : x;
                    in_[gp.state + c * gp.cells] += v;
                    added = added + v;
                }
            }
        }
        injected += added;
        if (plan.owned) injected_owned += added;
    }
}

void Engine::phase_a() {
    std::fill(in_.begin(), in_.end(), 0.0);
    std::fill(out_.begin(), out_.end(), 0.0);
    lane_changes();
    cell_flows();
    node_models();
}

void Engine::phase_b() {
    CompensatedSum remote;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const FlowEntry& e = entries_[i];
        const double v = entry_values_[i];
        const bool local = scenario_.is_local(e.node);
        if (e.kind == FlowKind::kInflow) {
            in_[e.state_index] += v;
            if (!local) remote.add(v);
        } else {
            out_[e.state_index] += v;
            if (!local) remote.add(-v);
        }
    }
    double injected = 0, injected_owned = 0;
    inject_sources(injected, injected_owned);

    const double low = kernels_->conserve(state_, in_, out_);
    if (low < -1e-12)
        throw InternalError(fmt::format("step {}: a cell fell to {} vehicles", step_ + 1, low));

    CompensatedSum after;
    for (double v : state_) after.add(v);
    const double expected = state_sum_ + injected + remote.value() - sink_all_;
    if (std::abs(after.value() - expected) > 1e-9)
        throw InternalError(fmt::format("step {}: vehicle conservation violated, held {} expected {}", step_ + 1,
                                        after.value(), expected));
    state_sum_ = after.value();
    entered_ += injected_owned;
    exited_ += sink_owned_;
    ++step_;
}

// --- inspection ------------------------------------------------------------------

bool Engine::owns(LinkId link) const { return links_[link_slot(link)].owned; }

StepMetrics Engine::metrics() const {
    StepMetrics m;
    m.step = step_;
    CompensatedSum in_network;
    for (const LinkPlan& plan : links_) {
        if (!plan.owned) continue;
        for (std::size_t i = plan.state_begin; i < plan.state_end; ++i) in_network.add(state_[i]);
    }
    double queued = 0;
    for (const Source& src : sources_) {
        if (!links_[src.link].owned) continue;
        for (const auto& type : src.types) queued += type.queue;
    }
    m.in_network = in_network.value();
    m.entered = entered_;
    m.exited = exited_;
    m.queued = queued;
    return m;
}

std::vector<DumpRow> Engine::dump() const {
    std::vector<DumpRow> rows;
    for (const LinkPlan& plan : links_) {
        if (!plan.owned) continue;
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            const GroupPlan& gp = groups_[plan.first_group + g];
            for (int k = 0; k < gp.cells; ++k)
                for (std::size_t c = 0; c < gp.commodities; ++c)
                    rows.push_back({step_, plan.link->id, plan.groups[g].id, k, plan.commodities[c].vehicle_type,
                                    plan.commodities[c].next, state_[gp.state + c * gp.cells + k]});
        }
    }
    return rows;
}

std::span<const double> Engine::link_state(LinkId link) const {
    const LinkPlan& plan = links_[link_slot(link)];
    return {state_.data() + plan.state_begin, plan.state_end - plan.state_begin};
}

void Engine::set_link_state(LinkId link, std::span<const double> values) {
    const LinkPlan& plan = links_[link_slot(link)];
    if (values.size() != plan.state_end - plan.state_begin)
        throw InternalError(fmt::format("link {}: state has {} values, got {}", link.value,
                                        plan.state_end - plan.state_begin, values.size()));
    std::copy(values.begin(), values.end(), state_.begin() + plan.state_begin);
    CompensatedSum sum;
    for (double v : state_) sum.add(v);
    state_sum_ = sum.value();
}

const std::vector<Commodity>& Engine::commodities(LinkId link) const { return links_[link_slot(link)].commodities; }

const std::vector<LaneGroup>& Engine::lane_groups(LinkId link) const { return links_[link_slot(link)].groups; }

double Engine::queue(LinkId link, VehicleTypeId type) const {
    for (const Source& src : sources_) {
        if (links_[src.link].link->id != link) continue;
        for (const auto& t : src.types)
            if (t.demand->vehicle_type == type) return t.queue;
    }
    return 0.0;
}

std::string format_dump(std::span<const DumpRow> rows, bool header) {
    std::string out;
    if (header) out += "step,link,lane_group,cell,vehicle_type,next_link,vehicles\n";
    for (const auto& r : rows)
        out += fmt::format("{},{},{},{},{},{},{:.17g}\n", r.step, r.link.value, r.lane_group.value, r.cell,
                           r.vehicle_type.value, r.next.value, r.vehicles);
    return out;
}

}  // namespace otmd
