#include <filesystem>
#include <fstream>
#include <regex>

#include <fmt/format.h>
#include <json.hpp>

#include "otmd/errors.hpp"
#include "otmd/partition.hpp"

namespace otmd {

using json = nlohmann::ordered_json;

std::string metagraph_json(const Metagraph& metagraph) {
    json edges = json::array();
    for (const auto& e : metagraph.edges) {
        json links = json::array();
        for (LinkId l : e.links) links.push_back(l.value);
        edges.push_back({{"a", e.a}, {"b", e.b}, {"links", links}});
    }
    return json{{"count", metagraph.count}, {"edges", edges}}.dump(1) + "\n";
}

std::string decoder_maps_json(const std::vector<DecoderMap>& maps) {
    json out = json::array();
    for (const auto& m : maps) {
        json slots = json::array();
        for (const auto& s : m.slots)
            slots.push_back({s.connection.value, s.lane_group.value, s.vehicle_type.value, s.next.value});
        out.push_back({{"sender", m.sender}, {"receiver", m.receiver}, {"length", m.length()}, {"slots", slots}});
    }
    return out.dump(1) + "\n";
}

void write_partition_outputs(const std::vector<Subnetwork>& subnetworks, const Metagraph& metagraph,
                             const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& text) {
        const auto path = std::filesystem::path(dir) / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ScenarioError(fmt::format("cannot write '{}'", path.string()));
        out << text;
    };
    for (const auto& sub : subnetworks) write(fmt::format("fragment-{}.json", sub.index), serialize_scenario(sub.fragment));
    write("metagraph.json", metagraph_json(metagraph));
    std::vector<DecoderMap> maps;
    for (const auto& per_worker : build_all_decoder_maps(subnetworks, metagraph))
        for (const auto& [send, recv] : per_worker) maps.push_back(send);
    write("decoders.json", decoder_maps_json(maps));
}

std::vector<Scenario> load_fragments(const std::string& dir) {
    const std::regex name(R"(fragment-(\d+)\.json)");
    std::vector<std::pair<int, std::string>> files;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
        std::smatch m;
        const std::string file = entry.path().filename().string();
        if (std::regex_match(file, m, name)) files.emplace_back(std::stoi(m[1]), entry.path().string());
    }
    if (ec) throw ScenarioError(fmt::format("cannot list '{}': {}", dir, ec.message()));
    if (files.empty()) throw ScenarioError(fmt::format("no fragment-<i>.json files in '{}'", dir));
    std::sort(files.begin(), files.end());
    std::vector<Scenario> out;
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (files[i].first != static_cast<int>(i)) throw ScenarioError(fmt::format("fragment {} is missing in '{}'", i, dir));
        Scenario s = load_scenario(files[i].second);
        if (!s.fragment || s.fragment->index != static_cast<int>(i) || s.fragment->count != static_cast<int>(files.size()))
            throw ScenarioError(fmt::format("'{}' is not fragment {} of {}", files[i].second, i, files.size()));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace otmd
