#include "otmd/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "otmd/errors.hpp"

namespace otmd {

namespace {

template <class T, class IdT>
const T* find_by_id(const std::vector<T>& items, IdT id) {
    auto it = std::lower_bound(items.begin(), items.end(), id,
                               [](const T& item, IdT key) { return item.id < key; });
    return (it != items.end() && it->id == id) ? &*it : nullptr;
}

template <class T>
void sort_by_id(std::vector<T>& items) {
    std::sort(items.begin(), items.end(), [](const T& a, const T& b) { return a.id < b.id; });
}

template <class T>
const T& at_time(const std::vector<Breakpoint<T>>& profile, double t) {
    // Profiles are validated non-empty with a first breakpoint at 0.
    auto it = std::upper_bound(profile.begin(), profile.end(), t,
                               [](double time, const Breakpoint<T>& bp) { return time < bp.start; });
    if (it == profile.begin()) return profile.front().value;
    return std::prev(it)->value;
}

}  // namespace

int LaneRange::overlap(const LaneRange& other) const {
    return std::max(0, std::min(last, other.last) - std::max(first, other.first) + 1);
}

const SplitDistribution& SplitRow::at(double t) const { return at_time(profile, t); }

double DemandEntry::at(double t) const { return at_time(profile, t); }

const Node* Scenario::find_node(NodeId id) const { return find_by_id(nodes, id); }
const Link* Scenario::find_link(LinkId id) const { return find_by_id(links, id); }
const RoadConnection* Scenario::find_connection(RoadConnectionId id) const {
    return find_by_id(connections, id);
}
const VehicleType* Scenario::find_vehicle_type(VehicleTypeId id) const {
    return find_by_id(vehicle_types, id);
}

const Link& Scenario::link(LinkId id) const {
    const Link* l = find_link(id);
    if (!l) throw ScenarioError(fmt::format("unknown link {}", id.value));
    return *l;
}

const ExternalLink* Scenario::find_external(LinkId id) const {
    if (!fragment) return nullptr;
    return find_by_id(fragment->external_links, id);
}

bool Scenario::is_local(NodeId id) const {
    if (!fragment) return true;
    return std::binary_search(fragment->local_nodes.begin(), fragment->local_nodes.end(), id);
}

void Scenario::normalize() {
    sort_by_id(nodes);
    sort_by_id(links);
    sort_by_id(connections);
    sort_by_id(vehicle_types);
    std::sort(splits.begin(), splits.end(), [](const SplitRow& a, const SplitRow& b) {
        return std::tie(a.in_link, a.vehicle_type) < std::tie(b.in_link, b.vehicle_type);
    });
    std::sort(demands.begin(), demands.end(), [](const DemandEntry& a, const DemandEntry& b) {
        return std::tie(a.link, a.vehicle_type) < std::tie(b.link, b.vehicle_type);
    });
    for (auto& row : splits)
        for (auto& bp : row.profile) std::sort(bp.value.begin(), bp.value.end());
    if (fragment) {
        std::sort(fragment->local_nodes.begin(), fragment->local_nodes.end());
        std::sort(fragment->relative_sources.begin(), fragment->relative_sources.end());
        std::sort(fragment->relative_sinks.begin(), fragment->relative_sinks.end());
        sort_by_id(fragment->external_links);
    }

    for (auto& node : nodes) {
        node.incoming.clear();
        node.outgoing.clear();
    }
    auto node_at = [this](NodeId id) -> Node* {
        auto it = std::lower_bound(nodes.begin(), nodes.end(), id,
                                   [](const Node& n, NodeId key) { return n.id < key; });
        return (it != nodes.end() && it->id == id) ? &*it : nullptr;
    };
    for (const auto& l : links) {
        // Links are sorted, so the per-node lists come out sorted too.
        if (Node* n = node_at(l.start)) n->outgoing.push_back(l.id);
        if (Node* n = node_at(l.end)) n->incoming.push_back(l.id);
    }
}

NetworkIndex::NetworkIndex(const Scenario& scenario) : scenario_(&scenario) {
    for (const auto& rc : scenario.connections) {
        outgoing_[rc.in_link].push_back(rc);
        incoming_[rc.out_link].push_back(rc);
    }
    for (auto& [link, rcs] : outgoing_) {
        auto& succ = successors_[link];
        for (const auto& rc : rcs) succ.push_back(rc.out_link);
        std::sort(succ.begin(), succ.end());
        succ.erase(std::unique(succ.begin(), succ.end()), succ.end());
    }
    for (const auto& d : scenario.demands) demands_[d.link].push_back(&d);
    for (const auto& row : scenario.splits) splits_[row.in_link][row.vehicle_type] = &row;
}

std::span<const RoadConnection> NetworkIndex::outgoing(LinkId link) const {
    auto it = outgoing_.find(link);
    if (it == outgoing_.end()) return {};
    return it->second;
}

std::span<const RoadConnection> NetworkIndex::incoming(LinkId link) const {
    auto it = incoming_.find(link);
    if (it == incoming_.end()) return {};
    return it->second;
}

std::span<const LinkId> NetworkIndex::successors(LinkId link) const {
    auto it = successors_.find(link);
    if (it == successors_.end()) return {};
    return it->second;
}

bool NetworkIndex::is_source(LinkId link) const {
    const Link* l = scenario_->find_link(link);
    return (l && l->source) || demands_.contains(link);
}

const SplitRow* NetworkIndex::split_row(LinkId in_link, VehicleTypeId type) const {
    auto it = splits_.find(in_link);
    if (it == splits_.end()) return nullptr;
    auto jt = it->second.find(type);
    return jt == it->second.end() ? nullptr : jt->second;
}

std::span<const DemandEntry* const> NetworkIndex::demands(LinkId link) const {
    auto it = demands_.find(link);
    if (it == demands_.end()) return {};
    return it->second;
}

int NetworkIndex::lanes_of(LinkId link) const {
    if (const Link* l = scenario_->find_link(link)) return l->lanes;
    if (const ExternalLink* e = scenario_->find_external(link)) return e->lanes;
    throw ScenarioError(fmt::format("unknown link {}", link.value));
}

std::vector<LaneGroup> build_lane_groups(const Link& link, std::span<const RoadConnection> outgoing) {
    std::vector<std::vector<RoadConnectionId>> reach(link.lanes + 1);
    for (const auto& rc : outgoing) {
        for (int lane = rc.in_lanes.first; lane <= rc.in_lanes.last; ++lane) {
            if (lane >= 1 && lane <= link.lanes) reach[lane].push_back(rc.id);
        }
    }
    for (auto& set : reach) std::sort(set.begin(), set.end());

    std::vector<LaneGroup> groups;
    for (int lane = 1; lane <= link.lanes; ++lane) {
        if (!groups.empty() && groups.back().connections == reach[lane]) {
            groups.back().lanes.last = lane;
            continue;
        }
        LaneGroup g;
        g.id = lane_group_id(link.id, static_cast<int>(groups.size()));
        g.link = link.id;
        g.lanes = {lane, lane};
        g.connections = reach[lane];
        groups.push_back(std::move(g));
    }
    return groups;
}

Discretization discretize(const Link& link, double dt) {
    const double step_distance = link.fd.free_flow_speed * dt;
    const double ratio = link.length / step_distance;
    const double rounded = std::round(ratio);
    if (rounded < 1) {
        throw ScenarioError(fmt::format(
            "link {}: CFL violation, length {} m is shorter than half the free-flow step distance {} m",
            link.id.value, link.length, step_distance));
    }
    Discretization d;
    d.cells = static_cast<int>(rounded);
    d.cell_length = link.length / d.cells;
    return d;
}

}  // namespace otmd
