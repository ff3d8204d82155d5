#pragma once

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "otmd/scenario.hpp"

namespace otmd::test {

inline std::string fixture_path(const std::string& name) { return std::string(OTMD_FIXTURE_DIR) + "/" + name; }

inline Scenario fixture(const std::string& name) { return load_scenario(fixture_path(name)); }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Scenario small_grid(int rows, int cols, int steps = 200) {
    GridOptions o;
    o.rows = rows;
    o.cols = cols;
    o.steps = steps;
    return generate_grid(o);
}

/// Random valid scenario: a connected node set with extra links, road
/// connections at every node (no U-turns), uniform splits, demand on links
/// without predecessors and, when a route exists, one deterministic type.
inline Scenario random_scenario(std::mt19937_64& rng, int nodes, int extra_links, int steps = 60) {
    auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    auto chance = [&](double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; };
    Scenario s;
    for (int i = 0; i < nodes; ++i) s.nodes.push_back({NodeId{i}, {}, {}});
    std::set<std::pair<int, int>> pairs;
    auto add_link = [&](int a, int b) {
        if (a == b || !pairs.insert({a, b}).second) return;
        auto id = static_cast<std::int64_t>(s.links.size());
        s.links.push_back({LinkId{id}, NodeId{a}, NodeId{b}, 150.0 + 50.0 * uniform(0, 6), uniform(1, 3),
                           FdParams{0.5, 15.0, 5.0, 0.15}, false});
    };
    for (int i = 1; i < nodes; ++i) {
        int j = uniform(0, i - 1);
        if (chance(0.5)) add_link(i, j); else add_link(j, i);
        if (chance(0.3)) add_link(j, i);
    }
    for (int k = 0; k < extra_links; ++k) add_link(uniform(0, nodes - 1), uniform(0, nodes - 1));

    for (const auto& l : s.links) {
        bool first = true;
        for (const auto& m : s.links) {
            if (m.start != l.end || m.end == l.start || !chance(0.75)) continue;
            LaneRange in{1, l.lanes};
            if (!first && l.lanes > 1 && chance(0.5)) {
                int a = uniform(1, l.lanes);
                in = {a, uniform(a, l.lanes)};
            }
            first = false;
            auto id = static_cast<std::int64_t>(s.connections.size());
            s.connections.push_back({RoadConnectionId{id}, l.id, m.id, in, {1, m.lanes}});
        }
    }
    s.vehicle_types.push_back({VehicleTypeId{0}, ProbabilisticRouting{}});
    auto successors = [&](LinkId l) {
        std::vector<LinkId> out;
        for (const auto& rc : s.connections)
            if (rc.in_link == l) out.push_back(rc.out_link);
        std::sort(out.begin(), out.end());
        return out;
    };
    auto has_predecessor = [&](LinkId l) {
        return std::any_of(s.connections.begin(), s.connections.end(), [&](auto& rc) { return rc.out_link == l; });
    };
    double horizon = steps * 2.0;
    for (const auto& l : s.links) {
        auto next = successors(l.id);
        if (!next.empty()) {
            SplitDistribution dist;
            double left = 1;
            for (std::size_t k = 0; k < next.size(); ++k) {
                double p = k + 1 == next.size() ? left : 1.0 / static_cast<double>(next.size());
                left -= p;
                dist.push_back({next[k], p});
            }
            s.splits.push_back({l.end, l.id, VehicleTypeId{0}, {{0.0, dist}}});
        }
        if (!has_predecessor(l.id)) {
            std::vector<Breakpoint<double>> profile{{0.0, 0.05 * uniform(1, 8)}};
            if (chance(0.5)) profile.push_back({horizon / 2, 0.05 * uniform(0, 8)});
            s.demands.push_back({l.id, VehicleTypeId{0}, profile});
        }
    }
    // A deterministic route from a link without predecessors to a sink.
    for (int attempt = 0; attempt < 20; ++attempt) {
        const auto& first = s.links[static_cast<std::size_t>(uniform(0, static_cast<int>(s.links.size()) - 1))];
        if (has_predecessor(first.id)) continue;
        std::vector<LinkId> path{first.id};
        bool done = false;
        for (int hop = 0; hop < nodes * 2; ++hop) {
            auto next = successors(path.back());
            if (next.empty()) { done = true; break; }
            auto pick = next[static_cast<std::size_t>(uniform(0, static_cast<int>(next.size()) - 1))];
            if (std::find(path.begin(), path.end(), pick) != path.end()) break;
            path.push_back(pick);
        }
        if (!done) continue;
        s.vehicle_types.push_back({VehicleTypeId{1}, DeterministicRouting{path}});
        s.demands.push_back({path.front(), VehicleTypeId{1}, {{0.0, 0.1}}});
        break;
    }
    s.sim.dt = 2;
    s.sim.steps = steps;
    s.sim.lane_change_rate = 0.5;
    s.normalize();
    validate_scenario(s);
    return s;
}

}  // namespace otmd::test
