#include "otmd/partition.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "otmd/errors.hpp"

namespace otmd {

namespace {

/// Undirected node graph; parallel and antiparallel links become one weighted edge.
struct NodeGraph {
    std::vector<NodeId> ids;
    std::vector<std::vector<std::pair<int, int>>> adj;  // (neighbour, weight)

    explicit NodeGraph(const Scenario& s) {
        for (const auto& n : s.nodes) ids.push_back(n.id);
        std::vector<std::map<int, int>> w(ids.size());
        for (const auto& l : s.links) {
            const int a = index_of(l.start), b = index_of(l.end);
            ++w[a][b];
            ++w[b][a];
        }
        adj.resize(ids.size());
        for (std::size_t v = 0; v < ids.size(); ++v) adj[v].assign(w[v].begin(), w[v].end());
    }

    int index_of(NodeId id) const {
        return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
    }
    int size() const { return static_cast<int>(ids.size()); }
};

/// Farthest unassigned node from `start` by BFS over unassigned nodes.
int farthest_unassigned(const NodeGraph& g, const std::vector<int>& part, int start) {
    std::vector<int> dist(g.size(), -1);
    std::queue<int> q;
    q.push(start);
    dist[start] = 0;
    int last = start;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        last = v;
        for (auto [u, w] : g.adj[v]) {
            if (part[u] >= 0 || dist[u] >= 0) continue;
            dist[u] = dist[v] + 1;
            q.push(u);
        }
    }
    return last;
}

int pseudo_peripheral(const NodeGraph& g, const std::vector<int>& part, std::mt19937_64& rng) {
    std::vector<int> free;
    for (int v = 0; v < g.size(); ++v)
        if (part[v] < 0) free.push_back(v);
    std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
    int v = free[pick(rng)];
    for (int round = 0; round < 2; ++round) v = farthest_unassigned(g, part, v);
    return v;
}

}  // namespace

int NodePartition::subset_of(NodeId node) const {
    auto it = std::lower_bound(assignment.begin(), assignment.end(), node,
                               [](const auto& e, NodeId key) { return e.first < key; });
    if (it == assignment.end() || it->first != node)
        throw ScenarioError(fmt::format("partition: node {} is not assigned", node.value));
    return it->second;
}

std::vector<int> NodePartition::sizes() const {
    std::vector<int> out(count, 0);
    for (const auto& [node, p] : assignment) ++out[p];
    return out;
}

long long balance_bound(std::size_t nodes, int n) {
    return static_cast<long long>(std::ceil(kBalanceTolerance * static_cast<double>(nodes) / n));
}

NodePartition partition_nodes(const Scenario& scenario, int n, std::uint64_t seed) {
    const NodeGraph g(scenario);
    const int N = g.size();
    if (n < 1 || n > N) throw ScenarioError(fmt::format("partition: n = {} outside [1, {}]", n, N));

    std::mt19937_64 rng(seed);
    std::vector<int> part(N, -1);
    std::vector<int> size(n, 0);

    // Grow subsets 0..n-2 to their exact share; the last takes the rest.
    for (int p = 0; p + 1 < n; ++p) {
        const int target = N / n + (p < N % n ? 1 : 0);
        std::vector<int> gain(N, 0);
        std::vector<long long> seen(N, -1);
        long long seq = 0;
        // Highest connection weight first, then earliest discovered.
        using Key = std::tuple<int, long long, int>;
        std::priority_queue<Key> heap;
        auto take = [&](int v) {
            part[v] = p;
            ++size[p];
            for (auto [u, w] : g.adj[v]) {
                if (part[u] >= 0) continue;
                gain[u] += w;
                if (seen[u] < 0) seen[u] = seq++;
                heap.emplace(gain[u], -seen[u], u);
            }
        };
        while (size[p] < target) {
            int v = -1;
            while (!heap.empty()) {
                auto [gn, order, u] = heap.top();
                heap.pop();
                if (part[u] < 0 && gn == gain[u]) {
                    v = u;
                    break;
                }
            }
            if (v < 0) v = pseudo_peripheral(g, part, rng);
            take(v);
        }
    }
    for (int v = 0; v < N; ++v) {
        if (part[v] < 0) {
            part[v] = n - 1;
            ++size[n - 1];
        }
    }

    // Boundary refinement: move a node to the neighbouring subset it is most
    // connected to when that strictly reduces the cut and keeps balance.
    const long long bound = balance_bound(N, n);
    std::vector<int> order(N);
    for (int v = 0; v < N; ++v) order[v] = v;
    std::vector<int> weight_to(n, 0);
    for (int pass = 0; pass < 16; ++pass) {
        std::shuffle(order.begin(), order.end(), rng);
        bool moved = false;
        for (int v : order) {
            const int own = part[v];
            bool boundary = false;
            for (auto [u, w] : g.adj[v]) {
                weight_to[part[u]] += w;
                boundary = boundary || part[u] != own;
            }
            int best = own;
            if (boundary) {
                for (auto [u, w] : g.adj[v]) {
                    const int q = part[u];
                    if (q == own) continue;
                    if (weight_to[q] > weight_to[best] || (weight_to[q] == weight_to[best] && best != own && q < best))
                        best = q;
                }
            }
            if (best != own && weight_to[best] > weight_to[own] && size[best] + 1 <= bound && size[own] > 1) {
                part[v] = best;
                --size[own];
                ++size[best];
                moved = true;
            }
            for (auto [u, w] : g.adj[v]) weight_to[part[u]] = 0;
        }
        if (!moved) break;
    }

    NodePartition out;
    out.count = n;
    for (int v = 0; v < N; ++v) out.assignment.emplace_back(g.ids[v], part[v]);
    return out;
}

std::size_t cut_links(const Scenario& scenario, const NodePartition& partition) {
    std::size_t cut = 0;
    for (const auto& l : scenario.links)
        if (partition.subset_of(l.start) != partition.subset_of(l.end)) ++cut;
    return cut;
}

// --- partition files -------------------------------------------------------------

void validate_partition(const NodePartition& partition, const Scenario& scenario) {
    if (partition.count < 1) throw ScenarioError("partition: subset count must be at least 1");
    std::vector<int> size(partition.count, 0);
    std::size_t i = 0;
    for (const auto& node : scenario.nodes) {
        if (i >= partition.assignment.size() || partition.assignment[i].first != node.id) {
            if (i < partition.assignment.size() && partition.assignment[i].first < node.id)
                throw ScenarioError(fmt::format("partition: node {} is not in the scenario",
                                                partition.assignment[i].first.value));
            throw ScenarioError(fmt::format("partition: node {} is missing", node.id.value));
        }
        const int p = partition.assignment[i].second;
        if (p < 0 || p >= partition.count)
            throw ScenarioError(fmt::format("partition: node {} has subset {} outside [0, {})", node.id.value, p,
                                            partition.count));
        ++size[p];
        ++i;
    }
    if (i < partition.assignment.size())
        throw ScenarioError(fmt::format("partition: node {} is not in the scenario", partition.assignment[i].first.value));
    for (int p = 0; p < partition.count; ++p)
        if (size[p] == 0) throw ScenarioError(fmt::format("partition: subset {} is empty", p));
}

NodePartition parse_partition(std::string_view text, const Scenario& scenario, int expected_count) {
    std::istringstream in{std::string(text)};
    std::string line;
    bool metis = false;
    std::vector<NodeId> ids;
    std::vector<std::pair<NodeId, int>> assignment;
    std::vector<int> metis_parts;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.rfind("#!", 0) == 0) {
            std::istringstream h(line.substr(2));
            std::string word;
            h >> word;
            if (word == "metis") {
                metis = true;
            } else if (word == "ids") {
                long long id;
                while (h >> id) ids.emplace_back(id);
            } else {
                throw ScenarioError(fmt::format("partition line {}: unknown header '{}'", line_no, word));
            }
            continue;
        }
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        if (metis) {
            int p;
            if (!(fields >> p)) throw ScenarioError(fmt::format("partition line {}: expected a subset index", line_no));
            metis_parts.push_back(p);
        } else {
            long long node;
            int p;
            if (!(fields >> node >> p))
                throw ScenarioError(fmt::format("partition line {}: expected 'node_id subset_index'", line_no));
            assignment.emplace_back(NodeId{node}, p);
        }
    }
    if (metis) {
        if (ids.empty())
            for (const auto& n : scenario.nodes) ids.push_back(n.id);
        if (metis_parts.size() != ids.size())
            throw ScenarioError(fmt::format("partition: METIS file has {} entries for {} nodes", metis_parts.size(),
                                            ids.size()));
        for (std::size_t k = 0; k < ids.size(); ++k) assignment.emplace_back(ids[k], metis_parts[k]);
    }
    std::sort(assignment.begin(), assignment.end());
    for (std::size_t k = 1; k < assignment.size(); ++k)
        if (assignment[k].first == assignment[k - 1].first)
            throw ScenarioError(fmt::format("partition: node {} assigned twice", assignment[k].first.value));

    NodePartition out;
    int max_part = -1;
    for (const auto& [node, p] : assignment) {
        if (p < 0) throw ScenarioError(fmt::format("partition: node {} has negative subset {}", node.value, p));
        max_part = std::max(max_part, p);
    }
    out.count = expected_count > 0 ? expected_count : max_part + 1;
    out.assignment = std::move(assignment);
    validate_partition(out, scenario);
    return out;
}

NodePartition load_partition(const std::string& path, const Scenario& scenario, int expected_count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScenarioError(fmt::format("cannot read partition file '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_partition(buf.str(), scenario, expected_count);
}

std::string format_partition(const NodePartition& partition) {
    std::string out = "# node_id subset_index\n";
    for (const auto& [node, p] : partition.assignment) out += fmt::format("{} {}\n", node.value, p);
    return out;
}

void save_partition(const NodePartition& partition, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ScenarioError(fmt::format("cannot write '{}'", path));
    out << format_partition(partition);
}

// --- subnetworks ----------------------------------------------------------------------

std::vector<Subnetwork> build_subnetworks(const Scenario& scenario, const NodePartition& partition) {
    validate_partition(partition, scenario);
    const int n = partition.count;
    std::vector<Subnetwork> subs(n);
    for (int i = 0; i < n; ++i) subs[i].index = i;
    for (const auto& [node, p] : partition.assignment) subs[p].nodes.push_back(node);

    std::unordered_map<LinkId, std::pair<int, int>> ends;  // (start subset, end subset)
    for (const auto& l : scenario.links) {
        const int a = partition.subset_of(l.start), b = partition.subset_of(l.end);
        ends[l.id] = {a, b};
        if (a == b) {
            subs[a].interior.push_back(l.id);
        } else {
            subs[a].relative_sinks.push_back(l.id);
            subs[b].relative_sources.push_back(l.id);
        }
    }
    for (const auto& rc : scenario.connections) {
        const auto [in_a, in_b] = ends[rc.in_link];
        const auto [out_a, out_b] = ends[rc.out_link];
        // The connection sits at node in_b == out_a.
        if (out_a != out_b) subs[out_b].relative_source_connections.push_back(rc.id);
        if (in_a != in_b) subs[in_a].relative_sink_connections.push_back(rc.id);
    }

    for (auto& sub : subs) {
        const int i = sub.index;
        auto held = [&](LinkId id) {
            const auto [a, b] = ends[id];
            return a == i || b == i;
        };
        Scenario& f = sub.fragment;
        f.sim = scenario.sim;
        f.vehicle_types = scenario.vehicle_types;
        FragmentInfo info;
        info.index = i;
        info.count = n;
        info.local_nodes = sub.nodes;

        std::set<NodeId> node_ids(sub.nodes.begin(), sub.nodes.end());
        for (const auto& l : scenario.links) {
            if (!held(l.id)) continue;
            f.links.push_back(l);
            node_ids.insert(l.start);
            node_ids.insert(l.end);
            const auto [a, b] = ends[l.id];
            if (a != i) info.relative_sources.push_back({l.id, a});
            if (b != i) info.relative_sinks.push_back({l.id, b});
        }
        for (NodeId id : node_ids) f.nodes.push_back({id, {}, {}});

        std::set<LinkId> external;
        for (const auto& rc : scenario.connections) {
            const bool in_held = held(rc.in_link), out_held = held(rc.out_link);
            if (!in_held && !out_held) continue;
            f.connections.push_back(rc);
            if (!in_held) external.insert(rc.in_link);
            if (!out_held) external.insert(rc.out_link);
        }
        for (LinkId id : external) {
            const Link& l = scenario.link(id);
            info.external_links.push_back({id, l.start, l.end, l.lanes});
        }
        for (const auto& row : scenario.splits)
            if (held(row.in_link)) f.splits.push_back(row);
        for (const auto& d : scenario.demands)
            if (held(d.link)) f.demands.push_back(d);
        f.fragment = std::move(info);
        f.normalize();
        validate_scenario(f);
    }
    return subs;
}

Scenario reconstruct(const std::vector<Scenario>& fragments) {
    Scenario out;
    if (fragments.empty()) return out;
    out.sim = fragments.front().sim;
    out.vehicle_types = fragments.front().vehicle_types;
    std::map<NodeId, Node> nodes;
    std::map<LinkId, Link> links;
    std::map<RoadConnectionId, RoadConnection> rcs;
    std::map<std::pair<LinkId, VehicleTypeId>, SplitRow> splits;
    std::map<std::pair<LinkId, VehicleTypeId>, DemandEntry> demands;
    for (const auto& f : fragments) {
        for (const auto& n : f.nodes)
            if (f.is_local(n.id)) nodes.emplace(n.id, Node{n.id, {}, {}});
        for (const auto& l : f.links) links.emplace(l.id, l);
        for (const auto& rc : f.connections) rcs.emplace(rc.id, rc);
        for (const auto& row : f.splits) splits.emplace(std::pair{row.in_link, row.vehicle_type}, row);
        for (const auto& d : f.demands) demands.emplace(std::pair{d.link, d.vehicle_type}, d);
    }
    for (auto& [id, n] : nodes) out.nodes.push_back(n);
    for (auto& [id, l] : links) out.links.push_back(l);
    for (auto& [id, rc] : rcs) out.connections.push_back(rc);
    for (auto& [key, row] : splits) out.splits.push_back(row);
    for (auto& [key, d] : demands) out.demands.push_back(d);
    out.normalize();
    return out;
}

// --- metagraph ---------------------------------------------------------------------

std::vector<int> Metagraph::neighbors(int i) const {
    std::vector<int> out;
    for (const auto& e : edges) {
        if (e.a == i) out.push_back(e.b);
        if (e.b == i) out.push_back(e.a);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

Metagraph metagraph_from(int count, const std::vector<std::pair<std::pair<int, int>, LinkId>>& overlaps) {
    std::map<std::pair<int, int>, std::set<LinkId>> by_pair;
    for (const auto& [pair, link] : overlaps) {
        auto [a, b] = pair;
        if (a > b) std::swap(a, b);
        by_pair[{a, b}].insert(link);
    }
    Metagraph g;
    g.count = count;
    for (auto& [pair, links] : by_pair) g.edges.push_back({pair.first, pair.second, {links.begin(), links.end()}});
    return g;
}

}  // namespace

Metagraph build_metagraph(const std::vector<Subnetwork>& subnetworks) {
    std::vector<std::pair<std::pair<int, int>, LinkId>> overlaps;
    for (const auto& sub : subnetworks)
        for (const auto& p : sub.fragment.fragment->relative_sinks) overlaps.push_back({{sub.index, p.peer}, p.link});
    return metagraph_from(static_cast<int>(subnetworks.size()), overlaps);
}

Metagraph build_metagraph(const std::vector<Scenario>& fragments) {
    std::vector<std::pair<std::pair<int, int>, LinkId>> overlaps;
    for (const auto& f : fragments)
        for (const auto& p : f.fragment->relative_sinks) overlaps.push_back({{f.fragment->index, p.peer}, p.link});
    return metagraph_from(static_cast<int>(fragments.size()), overlaps);
}

// --- decoder maps --------------------------------------------------------------------

DecoderMap decoder_map(const Scenario& fragment, std::span<const FlowEntry> entries, int sender, int receiver) {
    const int self = fragment.fragment ? fragment.fragment->index : 0;
    std::unordered_map<LinkId, int> start_peer, end_peer;
    if (fragment.fragment) {
        for (const auto& p : fragment.fragment->relative_sources) start_peer[p.link] = p.peer;
        for (const auto& p : fragment.fragment->relative_sinks) end_peer[p.link] = p.peer;
    }
    auto subset_at = [&](const std::unordered_map<LinkId, int>& peers, LinkId link) {
        auto it = peers.find(link);
        return it == peers.end() ? self : it->second;
    };
    DecoderMap map{sender, receiver, {}};
    for (const auto& e : entries) {
        const int a = subset_at(start_peer, e.link), b = subset_at(end_peer, e.link);
        const bool wanted = e.kind == FlowKind::kInflow ? (a == sender && b == receiver)
                                                        : (a == receiver && b == sender);
        if (wanted) map.slots.push_back(e.slot);
    }
    return map;
}

DecoderMap decoder_map(const Scenario& fragment, int sender, int receiver) {
    const NetworkIndex index(fragment);
    const auto entries = flow_entries(fragment, index);
    return decoder_map(fragment, entries, sender, receiver);
}

std::pair<DecoderMap, DecoderMap> build_decoder_maps(const Subnetwork& i, const Subnetwork& j) {
    const NetworkIndex index(i.fragment);
    const auto entries = flow_entries(i.fragment, index);
    return {decoder_map(i.fragment, entries, i.index, j.index), decoder_map(i.fragment, entries, j.index, i.index)};
}

std::vector<std::vector<std::pair<DecoderMap, DecoderMap>>> build_all_decoder_maps(
    const std::vector<Subnetwork>& subnetworks, const Metagraph& metagraph) {
    std::vector<std::vector<std::pair<DecoderMap, DecoderMap>>> out(subnetworks.size());
    for (const auto& sub : subnetworks) {
        const NetworkIndex index(sub.fragment);
        const auto entries = flow_entries(sub.fragment, index);
        for (int j : metagraph.neighbors(sub.index))
            out[sub.index].emplace_back(decoder_map(sub.fragment, entries, sub.index, j),
                                        decoder_map(sub.fragment, entries, j, sub.index));
    }
    return out;
}

}  // namespace otmd
