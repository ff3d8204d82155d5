#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "otmd/errors.hpp"
#include "otmd/partition.hpp"
#include "support.hpp"

using namespace otmd;
using otmd::test::fixture;

namespace {

Scenario stripped(Scenario s) {
    s.fragment.reset();
    return s;
}

/// Smallest cut over every assignment of nodes to two non-empty subsets of at
/// most `bound` nodes.
std::size_t brute_force_cut(const Scenario& s, long long bound) {
    const int N = static_cast<int>(s.nodes.size());
    std::size_t best = s.links.size() + 1;
    for (int mask = 1; mask + 1 < (1 << N); ++mask) {
        int ones = __builtin_popcount(static_cast<unsigned>(mask));
        if (ones > bound || N - ones > bound) continue;
        std::map<NodeId, int> side;
        for (int v = 0; v < N; ++v) side[s.nodes[v].id] = (mask >> v) & 1;
        std::size_t cut = 0;
        for (const auto& l : s.links) cut += side[l.start] != side[l.end];
        best = std::min(best, cut);
    }
    return best;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("otmd_test_partition_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Every structural property a partition of `s` into n subsets must have.
void check_decomposition(const Scenario& s, int n, std::uint64_t seed) {
    auto part = partition_nodes(s, n, seed);
    CAPTURE(n);
    CAPTURE(seed);
    REQUIRE(part.count == n);
    validate_partition(part, s);

    // totality and exclusivity
    REQUIRE(part.assignment.size() == s.nodes.size());
    for (std::size_t i = 0; i < s.nodes.size(); ++i) CHECK(part.assignment[i].first == s.nodes[i].id);
    auto sizes = part.sizes();
    for (int sz : sizes) {
        CHECK(sz >= 1);
        CHECK(sz <= balance_bound(s.nodes.size(), n));
    }

    auto subs = build_subnetworks(s, part);
    REQUIRE(subs.size() == static_cast<std::size_t>(n));
    std::set<NodeId> seen_nodes;
    std::size_t interior = 0;
    std::set<LinkId> overlap;
    for (const auto& sub : subs) {
        for (auto node : sub.nodes) CHECK(seen_nodes.insert(node).second);
        interior += sub.interior.size();
        for (auto l : sub.relative_sinks) overlap.insert(l);
        REQUIRE(sub.fragment.fragment.has_value());
        CHECK(sub.fragment.fragment->index == sub.index);
        validate_scenario(sub.fragment);
    }
    CHECK(seen_nodes.size() == s.nodes.size());
    // every link is interior to one subnetwork or an overlap of exactly two
    CHECK(interior + overlap.size() == s.links.size());
    CHECK(overlap.size() == cut_links(s, part));

    // overlap duality: a relative sink of i towards j is a relative source of j towards i
    std::set<std::tuple<int, int, LinkId>> sinks, sources;
    for (const auto& sub : subs) {
        for (const auto& p : sub.fragment.fragment->relative_sinks) sinks.insert({sub.index, p.peer, p.link});
        for (const auto& p : sub.fragment.fragment->relative_sources) sources.insert({p.peer, sub.index, p.link});
    }
    CHECK(sinks == sources);

    // the metagraph has an edge exactly where fragments share an overlap link
    auto meta = build_metagraph(subs);
    std::map<std::pair<int, int>, std::set<LinkId>> expected;
    for (auto [i, j, l] : sinks) expected[{std::min(i, j), std::max(i, j)}].insert(l);
    REQUIRE(meta.edges.size() == expected.size());
    for (const auto& e : meta.edges) {
        auto it = expected.find({e.a, e.b});
        REQUIRE(it != expected.end());
        CHECK(std::vector<LinkId>(it->second.begin(), it->second.end()) == e.links);
    }
    std::vector<Scenario> fragments;
    for (const auto& sub : subs) fragments.push_back(sub.fragment);
    CHECK(build_metagraph(fragments) == meta);

    CHECK(reconstruct(fragments) == s);

    // decoder maps are the same whichever end derives them
    for (const auto& e : meta.edges) {
        auto [ab_a, ba_a] = build_decoder_maps(subs[e.a], subs[e.b]);
        auto [ba_b, ab_b] = build_decoder_maps(subs[e.b], subs[e.a]);
        CHECK(ab_a == ab_b);
        CHECK(ba_a == ba_b);
        CHECK(std::is_sorted(ab_a.slots.begin(), ab_a.slots.end()));
        CHECK(ab_a.sender == e.a);
        CHECK(ab_a.receiver == e.b);
    }
}

}  // namespace

TEST_CASE("one subset is the whole scenario") {
    auto s = fixture("merge_diverge.json");
    auto part = partition_nodes(s, 1, 7);
    CHECK(part.sizes() == std::vector<int>{static_cast<int>(s.nodes.size())});
    CHECK(cut_links(s, part) == 0);
    auto subs = build_subnetworks(s, part);
    REQUIRE(subs.size() == 1);
    CHECK(stripped(subs[0].fragment) == s);
    CHECK(subs[0].relative_sinks.empty());
    CHECK(subs[0].relative_sources.empty());
    CHECK(build_metagraph(subs).edges.empty());
}

TEST_CASE("a four-node path splits in the middle") {
    auto s = fixture("path4.json");
    auto part = partition_nodes(s, 2, 1);
    CHECK(part.sizes() == std::vector<int>{2, 2});
    CHECK(part.subset_of(NodeId{0}) == part.subset_of(NodeId{1}));
    CHECK(part.subset_of(NodeId{2}) == part.subset_of(NodeId{3}));
    CHECK(part.subset_of(NodeId{1}) != part.subset_of(NodeId{2}));
    CHECK(cut_links(s, part) == 1);
    CHECK(cut_links(s, part) == brute_force_cut(s, balance_bound(s.nodes.size(), 2)));
}

TEST_CASE("cuts against exhaustive search") {
    // Never below the exact minimum; exact on paths and rings.
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = otmd::test::random_scenario(rng, 6 + trial % 4, 2);
        auto part = partition_nodes(s, 2, static_cast<std::uint64_t>(trial));
        CAPTURE(trial);
        CHECK(cut_links(s, part) >= brute_force_cut(s, balance_bound(s.nodes.size(), 2)));
    }
    const FdParams fd{0.5, 15.0, 5.0, 0.15};
    for (int N = 4; N <= 12; ++N) {
        for (bool ring : {false, true}) {
            Scenario s;
            for (int i = 0; i < N; ++i) s.nodes.push_back({NodeId{i}, {}, {}});
            int pairs = ring ? N : N - 1;
            for (int i = 0; i < pairs; ++i) {
                NodeId a{i}, b{(i + 1) % N};
                s.links.push_back({LinkId{2 * i}, a, b, 300, 1, fd, false});
                s.links.push_back({LinkId{2 * i + 1}, b, a, 300, 1, fd, false});
            }
            s.vehicle_types.push_back({VehicleTypeId{0}, ProbabilisticRouting{}});
            s.sim.dt = 2;
            s.normalize();
            validate_scenario(s);
            CAPTURE(N);
            CAPTURE(ring);
            for (std::uint64_t seed : {1u, 2u, 3u})
                CHECK(cut_links(s, partition_nodes(s, 2, seed)) ==
                      brute_force_cut(s, balance_bound(s.nodes.size(), 2)));
        }
    }
}

TEST_CASE("n outside [1, nodes] is rejected") {
    auto s = fixture("path4.json");
    CHECK_THROWS_AS(partition_nodes(s, 0, 1), ScenarioError);
    CHECK_THROWS_AS(partition_nodes(s, 5, 1), ScenarioError);
    auto all = partition_nodes(s, 4, 1);
    CHECK(all.sizes() == std::vector<int>{1, 1, 1, 1});
}

TEST_CASE("partitions are deterministic per seed") {
    auto s = otmd::test::small_grid(4, 4);
    CHECK(partition_nodes(s, 4, 3) == partition_nodes(s, 4, 3));
    auto subs = build_subnetworks(s, partition_nodes(s, 4, 3));
    auto meta = build_metagraph(subs);
    auto a = temp_dir("det_a"), b = temp_dir("det_b");
    write_partition_outputs(subs, meta, a.string());
    write_partition_outputs(build_subnetworks(s, partition_nodes(s, 4, 3)), meta, b.string());
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(a)) {
        ++files;
        auto name = entry.path().filename().string();
        CAPTURE(name);
        CHECK(otmd::test::read_file(entry.path().string()) == otmd::test::read_file((b / name).string()));
    }
    CHECK(files >= 6);
    auto loaded = load_fragments(a.string());
    REQUIRE(loaded.size() == subs.size());
    for (std::size_t i = 0; i < subs.size(); ++i) CHECK(loaded[i] == subs[i].fragment);
}

TEST_CASE("random networks decompose consistently") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        int nodes = 8 + static_cast<int>(rng() % 40);
        auto s = otmd::test::random_scenario(rng, nodes, nodes / 2);
        for (int n : {2, 3, 5}) {
            if (n > nodes) continue;
            check_decomposition(s, n, rng());
        }
    }
}

TEST_CASE("grids decompose consistently") {
    auto s = otmd::test::small_grid(5, 5);
    for (int n : {1, 2, 4, 8, 16}) check_decomposition(s, n, 1);
}

TEST_CASE("average subnetwork size halves as n doubles") {
    auto s = otmd::test::small_grid(8, 8);
    auto mean_links = [&](int n) {
        auto subs = build_subnetworks(s, partition_nodes(s, n, 1));
        double held = 0;
        for (const auto& sub : subs) held += static_cast<double>(sub.fragment.links.size());
        return held / n;
    };
    double previous = mean_links(1);
    for (int n : {2, 4, 8}) {
        double now = mean_links(n);
        CAPTURE(n);
        CHECK(now / previous == doctest::Approx(0.5).epsilon(0.15));
        previous = now;
    }
}

TEST_CASE("partition files") {
    auto s = fixture("path4.json");
    SUBCASE("round trip") {
        auto part = partition_nodes(s, 2, 1);
        CHECK(parse_partition(format_partition(part), s) == part);
        auto dir = temp_dir("roundtrip");
        save_partition(part, (dir / "p.txt").string());
        CHECK(load_partition((dir / "p.txt").string(), s, 2) == part);
    }
    SUBCASE("METIS output") {
        auto part = parse_partition("#! metis\n0\n0\n1\n1\n", s);
        CHECK(part.count == 2);
        CHECK(part.sizes() == std::vector<int>{2, 2});
        CHECK(part.subset_of(NodeId{1}) == 0);
        CHECK(part.subset_of(NodeId{2}) == 1);
        auto mapped = parse_partition("#! metis\n#! ids 3 2 1 0\n0\n0\n1\n1\n", s);
        CHECK(mapped.subset_of(NodeId{3}) == 0);
        CHECK(mapped.subset_of(NodeId{0}) == 1);
    }
    SUBCASE("a missing node is named") {
        try {
            parse_partition("0 0\n1 0\n3 1\n", s);
            FAIL("expected a ScenarioError");
        } catch (const ScenarioError& e) {
            CHECK(std::string(e.what()).find("node 2") != std::string::npos);
        }
    }
    SUBCASE("bad entries") {
        CHECK_THROWS_AS(parse_partition("0 0\n1 0\n2 1\n3 1\n7 1\n", s), ScenarioError);
        CHECK_THROWS_AS(parse_partition("0 0\n0 1\n1 0\n2 1\n3 1\n", s), ScenarioError);
        CHECK_THROWS_AS(parse_partition("0 0\n1 0\n2 2\n3 2\n", s, 2), ScenarioError);
        CHECK_THROWS_AS(parse_partition("0 0\n1 0\n2 2\n3 2\n", s), ScenarioError);  // subset 1 empty
        CHECK_THROWS_AS(parse_partition("#! metis\n0\n1\n", s), ScenarioError);
        CHECK_THROWS_AS(load_partition("/nonexistent/partition.txt", s), ScenarioError);
    }
}

TEST_CASE("a single link split across two subsets") {
    auto s = fixture("minimal.json");
    auto part = parse_partition("0 0\n1 1\n", s);
    auto subs = build_subnetworks(s, part);
    REQUIRE(subs.size() == 2);
    const auto link = s.links[0].id;
    CHECK(subs[0].relative_sinks == std::vector<LinkId>{link});
    CHECK(subs[0].relative_sources.empty());
    CHECK(subs[1].relative_sources == std::vector<LinkId>{link});
    CHECK(subs[1].relative_sinks.empty());
    CHECK(subs[0].interior.empty());
    CHECK(subs[1].interior.empty());
    auto meta = build_metagraph(subs);
    REQUIRE(meta.edges.size() == 1);
    CHECK(meta.edges[0] == MetaEdge{0, 1, {link}});
}

TEST_CASE("metagraph shapes") {
    SUBCASE("a path cut at every node is a path") {
        auto s = fixture("path4.json");
        auto subs = build_subnetworks(s, parse_partition("0 0\n1 1\n2 2\n3 3\n", s));
        auto meta = build_metagraph(subs);
        REQUIRE(meta.edges.size() == 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(meta.edges[i].a == i);
            CHECK(meta.edges[i].b == i + 1);
        }
        CHECK(meta.neighbors(1) == std::vector<int>{0, 2});
    }
    SUBCASE("disconnected components share nothing") {
        Scenario s;
        const FdParams fd{0.5, 15.0, 5.0, 0.15};
        for (int i = 0; i < 4; ++i) s.nodes.push_back({NodeId{i}, {}, {}});
        s.links.push_back({LinkId{0}, NodeId{0}, NodeId{1}, 300, 1, fd, false});
        s.links.push_back({LinkId{1}, NodeId{2}, NodeId{3}, 300, 1, fd, false});
        s.vehicle_types.push_back({VehicleTypeId{0}, ProbabilisticRouting{}});
        s.sim.dt = 2;
        s.sim.steps = 10;
        s.normalize();
        validate_scenario(s);
        auto part = partition_nodes(s, 2, 1);
        CHECK(cut_links(s, part) == 0);
        CHECK(build_metagraph(build_subnetworks(s, part)).edges.empty());
    }
}

TEST_CASE("decoder map lengths") {
    const FdParams fd{0.5, 15.0, 5.0, 0.15};
    SUBCASE("one connection, one group, one deterministic type, one next link") {
        Scenario s;
        for (int i = 0; i < 4; ++i) s.nodes.push_back({NodeId{i}, {}, {}});
        for (int i = 0; i < 3; ++i) s.links.push_back({LinkId{i}, NodeId{i}, NodeId{i + 1}, 300, 1, fd, false});
        s.connections.push_back({RoadConnectionId{0}, LinkId{0}, LinkId{1}, {1, 1}, {1, 1}});
        s.connections.push_back({RoadConnectionId{1}, LinkId{1}, LinkId{2}, {1, 1}, {1, 1}});
        s.vehicle_types.push_back({VehicleTypeId{0}, DeterministicRouting{{LinkId{0}, LinkId{1}, LinkId{2}}}});
        s.demands.push_back({LinkId{0}, VehicleTypeId{0}, {{0.0, 0.2}}});
        s.sim.dt = 2;
        s.sim.steps = 10;
        s.normalize();
        validate_scenario(s);
        auto subs = build_subnetworks(s, parse_partition("0 0\n1 0\n2 1\n3 1\n", s));
        auto [forward, backward] = build_decoder_maps(subs[0], subs[1]);
        REQUIRE(forward.length() == 1);
        CHECK(forward.slots[0] == Slot{RoadConnectionId{0}, lane_group_id(LinkId{1}, 0), VehicleTypeId{0}, LinkId{2}});
        // the other way: the overlap link's outflow, evaluated at its end node
        REQUIRE(backward.length() == 1);
        CHECK(backward.slots[0] == Slot{RoadConnectionId{1}, lane_group_id(LinkId{1}, 0), VehicleTypeId{0}, LinkId{2}});
    }
    SUBCASE("two connections, one group, one type, two next links") {
        Scenario s;
        for (int i = 0; i < 6; ++i) s.nodes.push_back({NodeId{i}, {}, {}});
        s.links.push_back({LinkId{0}, NodeId{0}, NodeId{2}, 300, 1, fd, false});
        s.links.push_back({LinkId{1}, NodeId{1}, NodeId{2}, 300, 1, fd, false});
        s.links.push_back({LinkId{2}, NodeId{2}, NodeId{3}, 300, 1, fd, false});
        s.links.push_back({LinkId{3}, NodeId{3}, NodeId{4}, 300, 1, fd, false});
        s.links.push_back({LinkId{4}, NodeId{3}, NodeId{5}, 300, 1, fd, false});
        s.connections.push_back({RoadConnectionId{0}, LinkId{0}, LinkId{2}, {1, 1}, {1, 1}});
        s.connections.push_back({RoadConnectionId{1}, LinkId{1}, LinkId{2}, {1, 1}, {1, 1}});
        s.connections.push_back({RoadConnectionId{2}, LinkId{2}, LinkId{3}, {1, 1}, {1, 1}});
        s.connections.push_back({RoadConnectionId{3}, LinkId{2}, LinkId{4}, {1, 1}, {1, 1}});
        s.vehicle_types.push_back({VehicleTypeId{0}, ProbabilisticRouting{}});
        s.splits.push_back({NodeId{2}, LinkId{0}, VehicleTypeId{0}, {{0.0, {{LinkId{2}, 1.0}}}}});
        s.splits.push_back({NodeId{2}, LinkId{1}, VehicleTypeId{0}, {{0.0, {{LinkId{2}, 1.0}}}}});
        s.splits.push_back({NodeId{3}, LinkId{2}, VehicleTypeId{0}, {{0.0, {{LinkId{3}, 0.5}, {LinkId{4}, 0.5}}}}});
        s.demands.push_back({LinkId{0}, VehicleTypeId{0}, {{0.0, 0.2}}});
        s.sim.dt = 2;
        s.sim.steps = 10;
        s.normalize();
        validate_scenario(s);
        auto subs = build_subnetworks(s, parse_partition("0 0\n1 0\n2 0\n3 1\n4 1\n5 1\n", s));
        auto [forward, backward] = build_decoder_maps(subs[0], subs[1]);
        CHECK(forward.length() == 4);   // inflow: 2 connections x 2 next links
        CHECK(backward.length() == 2);  // outflow: 2 connections, next link fixed by each
        auto [forward_b, backward_b] = build_decoder_maps(subs[1], subs[0]);
        CHECK(backward_b == forward);
        CHECK(forward_b == backward);
    }
}
