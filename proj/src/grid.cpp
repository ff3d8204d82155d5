#include <fmt/format.h>

#include "otmd/errors.hpp"
#include "otmd/scenario.hpp"

namespace otmd {

GridCounts grid_counts(int rows, int cols) {
    const long long r = rows, c = cols;
    return {3 * r * c + r + c, 10 * r * c - 2 * r - 2 * c + 2, 2 * (r + c)};
}

Scenario generate_grid(const GridOptions& o) {
    if (o.rows < 1 || o.cols < 1)
        throw ScenarioError(fmt::format("grid dimensions must be positive, got {}x{}", o.rows, o.cols));
    const long long R = o.rows, C = o.cols;

    // Node numbering: junctions, then east midblocks, then south midblocks,
    // then gates.
    auto junction = [&](long long r, long long c) { return NodeId{r * C + c}; };
    const long long east_base = R * C;
    auto east_mid = [&](long long r, long long c) { return NodeId{east_base + r * (C - 1) + c}; };
    const long long south_base = east_base + R * (C - 1);
    auto south_mid = [&](long long r, long long c) { return NodeId{south_base + r * C + c}; };
    long long next_node = south_base + (R - 1) * C;

    Scenario s;
    s.sim = {o.dt, o.steps, o.lane_change_rate};
    s.vehicle_types.push_back({VehicleTypeId{0}, ProbabilisticRouting{}});
    for (long long id = 0; id < next_node; ++id) s.nodes.push_back({NodeId{id}, {}, {}});

    long long next_link = 0;
    auto add_link = [&](NodeId a, NodeId b) {
        Link l;
        l.id = LinkId{next_link++};
        l.start = a;
        l.end = b;
        l.length = o.link_length;
        l.lanes = o.lanes;
        l.fd = o.fd;
        s.links.push_back(l);
        return l.id;
    };
    auto add_pair = [&](NodeId a, NodeId b) {
        add_link(a, b);
        add_link(b, a);
    };

    for (long long r = 0; r < R; ++r) {
        for (long long c = 0; c < C; ++c) {
            if (c + 1 < C) {
                add_pair(junction(r, c), east_mid(r, c));
                add_pair(east_mid(r, c), junction(r, c + 1));
            }
            if (r + 1 < R) {
                add_pair(junction(r, c), south_mid(r, c));
                add_pair(south_mid(r, c), junction(r + 1, c));
            }
            if (r + 1 < R && c + 1 < C) add_pair(east_mid(r, c), south_mid(r, c));
        }
    }

    const double demand = o.demand_vph_per_lane * o.lanes / 3600.0;
    auto add_gate = [&](NodeId j) {
        const NodeId gate{next_node++};
        s.nodes.push_back({gate, {}, {}});
        const LinkId src = add_link(gate, j);
        add_link(j, gate);
        s.demands.push_back({src, VehicleTypeId{0}, {{0.0, demand}}});
    };
    // Perimeter walk: north side west to east, then south, west, east.
    for (long long c = 0; c < C; ++c) add_gate(junction(0, c));
    for (long long c = 0; c < C; ++c) add_gate(junction(R - 1, c));
    for (long long r = 0; r < R; ++r) add_gate(junction(r, 0));
    for (long long r = 0; r < R; ++r) add_gate(junction(r, C - 1));

    s.normalize();

    // Every movement through a node except U-turns, all lanes to all lanes.
    long long next_rc = 0;
    for (const auto& node : s.nodes) {
        for (LinkId in : node.incoming) {
            const Link& in_link = s.link(in);
            std::vector<LinkId> outs;
            for (LinkId out : node.outgoing) {
                if (s.link(out).end == in_link.start) continue;
                outs.push_back(out);
                s.connections.push_back({RoadConnectionId{next_rc++}, in, out, {1, in_link.lanes}, {1, s.link(out).lanes}});
            }
            if (outs.empty()) continue;
            SplitDistribution dist;
            const double p = 1.0 / static_cast<double>(outs.size());
            for (LinkId out : outs) dist.emplace_back(out, p);
            s.splits.push_back({node.id, in, VehicleTypeId{0}, {{0.0, std::move(dist)}}});
        }
    }

    s.normalize();
    validate_scenario(s);
    return s;
}

}  // namespace otmd
