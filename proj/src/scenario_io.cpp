#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "otmd/errors.hpp"
#include "otmd/scenario.hpp"

namespace otmd {

using nlohmann::json;

namespace {

const json& field(const json& obj, const char* key, std::string_view where) {
    if (!obj.is_object()) throw ScenarioError(fmt::format("{}: expected an object", where));
    auto it = obj.find(key);
    if (it == obj.end()) throw ScenarioError(fmt::format("{}: missing key '{}'", where, key));
    return *it;
}

template <class T>
T get(const json& obj, const char* key, std::string_view where) {
    const json& v = field(obj, key, where);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ScenarioError(fmt::format("{}: key '{}' has the wrong type", where, key));
    }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, std::string_view where) {
    if (!obj.contains(key)) return fallback;
    return get<T>(obj, key, where);
}

std::int64_t get_id(const json& obj, const char* key, std::string_view where) {
    const json& v = field(obj, key, where);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw ScenarioError(fmt::format("{}: '{}' must be a non-negative integer", where, key));
    return v.get<std::int64_t>();
}

const json& array_field(const json& obj, const char* key, std::string_view where) {
    const json& v = field(obj, key, where);
    if (!v.is_array()) throw ScenarioError(fmt::format("{}: '{}' must be an array", where, key));
    return v;
}

LaneRange parse_lanes(const json& obj, const char* key, std::string_view where) {
    const json& v = field(obj, key, where);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
        throw ScenarioError(fmt::format("{}: '{}' must be [first, last]", where, key));
    return {v[0].get<int>(), v[1].get<int>()};
}

template <class T, class ParseValue>
std::vector<Breakpoint<T>> parse_profile(const json& obj, const char* value_key, std::string_view where,
                                         ParseValue&& parse_value) {
    std::vector<Breakpoint<T>> profile;
    for (const auto& entry : array_field(obj, "profile", where)) {
        Breakpoint<T> bp;
        bp.start = get<double>(entry, "start", where);
        bp.value = parse_value(field(entry, value_key, where));
        profile.push_back(std::move(bp));
    }
    return profile;
}

json lanes_json(const LaneRange& r) { return json::array({r.first, r.last}); }

}  // namespace

Scenario parse_scenario(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ScenarioError(fmt::format("syntax error at byte {}: {}", e.byte, e.what()));
    }

    Scenario s;
    for (const auto& n : array_field(doc, "nodes", "scenario")) {
        Node node;
        node.id = NodeId{get_id(n, "id", "node")};
        s.nodes.push_back(node);
    }
    for (const auto& l : array_field(doc, "links", "scenario")) {
        Link link;
        link.id = LinkId{get_id(l, "id", "link")};
        const std::string where = fmt::format("link {}", link.id.value);
        link.start = NodeId{get_id(l, "start", where)};
        link.end = NodeId{get_id(l, "end", where)};
        link.length = get<double>(l, "length", where);
        link.lanes = get<int>(l, "lanes", where);
        const json& fd = field(l, "fd", where);
        link.fd.capacity = get<double>(fd, "capacity", where);
        link.fd.free_flow_speed = get<double>(fd, "free_flow_speed", where);
        link.fd.congestion_wave_speed = get<double>(fd, "congestion_wave_speed", where);
        link.fd.jam_density = get<double>(fd, "jam_density", where);
        link.source = get_or<bool>(l, "source", false, where);
        s.links.push_back(link);
    }
    if (doc.contains("roadconnections")) {
        for (const auto& r : array_field(doc, "roadconnections", "scenario")) {
            RoadConnection rc;
            rc.id = RoadConnectionId{get_id(r, "id", "road connection")};
            const std::string where = fmt::format("road connection {}", rc.id.value);
            rc.in_link = LinkId{get_id(r, "in_link", where)};
            rc.out_link = LinkId{get_id(r, "out_link", where)};
            rc.in_lanes = parse_lanes(r, "in_lanes", where);
            rc.out_lanes = parse_lanes(r, "out_lanes", where);
            s.connections.push_back(rc);
        }
    }
    for (const auto& v : array_field(doc, "vehicletypes", "scenario")) {
        VehicleType vt;
        vt.id = VehicleTypeId{get_id(v, "id", "vehicle type")};
        const std::string where = fmt::format("vehicle type {}", vt.id.value);
        const auto routing = get<std::string>(v, "routing", where);
        if (routing == "probabilistic") {
            vt.routing = ProbabilisticRouting{};
        } else if (routing == "deterministic") {
            DeterministicRouting det;
            for (const auto& id : array_field(v, "path", where)) {
                if (!id.is_number_integer()) throw ScenarioError(where + ": path entries must be link ids");
                det.path.push_back(LinkId{id.get<std::int64_t>()});
            }
            vt.routing = std::move(det);
        } else {
            throw ScenarioError(fmt::format("{}: unknown routing '{}'", where, routing));
        }
        s.vehicle_types.push_back(std::move(vt));
    }
    if (doc.contains("splits")) {
        for (const auto& r : array_field(doc, "splits", "scenario")) {
            SplitRow row;
            row.node = NodeId{get_id(r, "node", "split row")};
            row.in_link = LinkId{get_id(r, "in_link", "split row")};
            row.vehicle_type = VehicleTypeId{get_id(r, "vehicletype", "split row")};
            const std::string where = fmt::format("split row (link {}, vehicle type {})", row.in_link.value,
                                                  row.vehicle_type.value);
            row.profile = parse_profile<SplitDistribution>(r, "split", where, [&](const json& dist) {
                SplitDistribution d;
                if (!dist.is_array()) throw ScenarioError(where + ": split must be [[link, p], ...]");
                for (const auto& pair : dist) {
                    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
                        !pair[1].is_number())
                        throw ScenarioError(where + ": split must be [[link, p], ...]");
                    d.emplace_back(LinkId{pair[0].get<std::int64_t>()}, pair[1].get<double>());
                }
                return d;
            });
            s.splits.push_back(std::move(row));
        }
    }
    if (doc.contains("demands")) {
        for (const auto& d : array_field(doc, "demands", "scenario")) {
            DemandEntry entry;
            entry.link = LinkId{get_id(d, "link", "demand")};
            entry.vehicle_type = VehicleTypeId{get_id(d, "vehicletype", "demand")};
            const std::string where = fmt::format("demand (link {}, vehicle type {})", entry.link.value,
                                                  entry.vehicle_type.value);
            entry.profile = parse_profile<double>(d, "flow", where, [&](const json& flow) {
                if (!flow.is_number()) throw ScenarioError(where + ": flow must be a number");
                return flow.get<double>();
            });
            s.demands.push_back(std::move(entry));
        }
    }
    const json& sim = field(doc, "simulation", "scenario");
    s.sim.dt = get<double>(sim, "dt", "simulation");
    s.sim.steps = get<int>(sim, "steps", "simulation");
    s.sim.lane_change_rate = get_or<double>(sim, "lane_change_rate", 0.5, "simulation");

    if (doc.contains("fragment")) {
        const json& f = doc["fragment"];
        FragmentInfo info;
        info.index = get<int>(f, "index", "fragment");
        info.count = get<int>(f, "count", "fragment");
        for (const auto& n : array_field(f, "local_nodes", "fragment")) info.local_nodes.push_back(NodeId{n.get<std::int64_t>()});
        auto peer_links = [&](const char* key) {
            std::vector<PeerLink> out;
            for (const auto& p : array_field(f, key, "fragment"))
                out.push_back({LinkId{get_id(p, "link", key)}, static_cast<int>(get_id(p, "peer", key))});
            return out;
        };
        info.relative_sources = peer_links("relative_sources");
        info.relative_sinks = peer_links("relative_sinks");
        for (const auto& e : array_field(f, "external_links", "fragment")) {
            ExternalLink ext;
            ext.id = LinkId{get_id(e, "id", "external link")};
            ext.start = NodeId{get_id(e, "start", "external link")};
            ext.end = NodeId{get_id(e, "end", "external link")};
            ext.lanes = get<int>(e, "lanes", "external link");
            info.external_links.push_back(ext);
        }
        s.fragment = std::move(info);
    }

    s.normalize();
    validate_scenario(s);
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScenarioError(fmt::format("cannot open scenario file '{}'", path));
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

std::string serialize_scenario(const Scenario& s) {
    json doc;
    doc["nodes"] = json::array();
    for (const auto& n : s.nodes) doc["nodes"].push_back({{"id", n.id.value}});
    doc["links"] = json::array();
    for (const auto& l : s.links) {
        json link = {{"id", l.id.value},
                     {"start", l.start.value},
                     {"end", l.end.value},
                     {"length", l.length},
                     {"lanes", l.lanes},
                     {"fd",
                      {{"capacity", l.fd.capacity},
                       {"free_flow_speed", l.fd.free_flow_speed},
                       {"congestion_wave_speed", l.fd.congestion_wave_speed},
                       {"jam_density", l.fd.jam_density}}}};
        if (l.source) link["source"] = true;
        doc["links"].push_back(std::move(link));
    }
    doc["roadconnections"] = json::array();
    for (const auto& rc : s.connections) {
        doc["roadconnections"].push_back({{"id", rc.id.value},
                                          {"in_link", rc.in_link.value},
                                          {"out_link", rc.out_link.value},
                                          {"in_lanes", lanes_json(rc.in_lanes)},
                                          {"out_lanes", lanes_json(rc.out_lanes)}});
    }
    doc["vehicletypes"] = json::array();
    for (const auto& vt : s.vehicle_types) {
        json v = {{"id", vt.id.value}};
        if (vt.deterministic()) {
            v["routing"] = "deterministic";
            v["path"] = json::array();
            for (LinkId l : vt.path()) v["path"].push_back(l.value);
        } else {
            v["routing"] = "probabilistic";
        }
        doc["vehicletypes"].push_back(std::move(v));
    }
    doc["splits"] = json::array();
    for (const auto& row : s.splits) {
        json profile = json::array();
        for (const auto& bp : row.profile) {
            json dist = json::array();
            for (const auto& [link, p] : bp.value) dist.push_back(json::array({link.value, p}));
            profile.push_back({{"start", bp.start}, {"split", std::move(dist)}});
        }
        doc["splits"].push_back({{"node", row.node.value},
                                 {"in_link", row.in_link.value},
                                 {"vehicletype", row.vehicle_type.value},
                                 {"profile", std::move(profile)}});
    }
    doc["demands"] = json::array();
    for (const auto& d : s.demands) {
        json profile = json::array();
        for (const auto& bp : d.profile) profile.push_back({{"start", bp.start}, {"flow", bp.value}});
        doc["demands"].push_back(
            {{"link", d.link.value}, {"vehicletype", d.vehicle_type.value}, {"profile", std::move(profile)}});
    }
    doc["simulation"] = {{"dt", s.sim.dt}, {"steps", s.sim.steps}, {"lane_change_rate", s.sim.lane_change_rate}};
    if (s.fragment) {
        const auto& f = *s.fragment;
        json frag = {{"index", f.index}, {"count", f.count}};
        frag["local_nodes"] = json::array();
        for (NodeId n : f.local_nodes) frag["local_nodes"].push_back(n.value);
        auto peers = [](const std::vector<PeerLink>& v) {
            json arr = json::array();
            for (const auto& p : v) arr.push_back({{"link", p.link.value}, {"peer", p.peer}});
            return arr;
        };
        frag["relative_sources"] = peers(f.relative_sources);
        frag["relative_sinks"] = peers(f.relative_sinks);
        frag["external_links"] = json::array();
        for (const auto& e : f.external_links) {
            frag["external_links"].push_back(
                {{"id", e.id.value}, {"start", e.start.value}, {"end", e.end.value}, {"lanes", e.lanes}});
        }
        doc["fragment"] = std::move(frag);
    }
    return doc.dump(1) + "\n";
}

void save_scenario(const Scenario& scenario, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ScenarioError(fmt::format("cannot write '{}'", path));
    out << serialize_scenario(scenario);
}

// --- validation ---------------------------------------------------------------

namespace {

template <class T>
void require_unique_ids(const std::vector<T>& items, std::string_view what) {
    for (std::size_t i = 1; i < items.size(); ++i) {
        if (items[i].id == items[i - 1].id)
            throw ScenarioError(fmt::format("duplicate {} id {}", what, items[i].id.value));
    }
}

void require_profile_times(const auto& profile, const std::string& where) {
    if (profile.empty()) throw ScenarioError(where + ": empty profile");
    if (profile.front().start != 0) throw ScenarioError(where + ": profile must start at time 0");
    for (std::size_t i = 1; i < profile.size(); ++i) {
        if (!(profile[i].start > profile[i - 1].start))
            throw ScenarioError(where + ": profile start times must be strictly increasing");
    }
}

struct LinkEnds {
    NodeId start;
    NodeId end;
    int lanes;
};

}  // namespace

void validate_scenario(const Scenario& s) {
    require_unique_ids(s.nodes, "node");
    require_unique_ids(s.links, "link");
    require_unique_ids(s.connections, "road connection");
    require_unique_ids(s.vehicle_types, "vehicle type");
    if (s.fragment) require_unique_ids(s.fragment->external_links, "external link");

    if (!(s.sim.dt > 0) || !std::isfinite(s.sim.dt)) throw ScenarioError("simulation: dt must be positive");
    if (s.sim.steps < 1) throw ScenarioError("simulation: steps must be at least 1");
    if (!(s.sim.lane_change_rate >= 0 && s.sim.lane_change_rate <= 1))
        throw ScenarioError("simulation: lane_change_rate must lie in [0, 1]");

    for (const auto& l : s.links) {
        const std::string where = fmt::format("link {}", l.id.value);
        if (!s.find_node(l.start)) throw ScenarioError(fmt::format("{}: start node {} does not exist", where, l.start.value));
        if (!s.find_node(l.end)) throw ScenarioError(fmt::format("{}: end node {} does not exist", where, l.end.value));
        if (l.start == l.end) throw ScenarioError(where + ": start node equals end node");
        if (!(l.length > 0) || !std::isfinite(l.length)) throw ScenarioError(where + ": length must be positive");
        if (l.lanes < 1 || l.lanes > kMaxLanes)
            throw ScenarioError(fmt::format("{}: lanes must lie in [1, {}]", where, kMaxLanes));
        const FdParams& fd = l.fd;
        if (!(fd.capacity > 0 && fd.free_flow_speed > 0 && fd.congestion_wave_speed > 0 && fd.jam_density > 0))
            throw ScenarioError(where + ": fundamental diagram parameters must be positive");
        if (fd.congestion_wave_speed > fd.free_flow_speed)
            throw ScenarioError(where + ": congestion wave speed exceeds free-flow speed");
        if (fd.capacity / fd.free_flow_speed + fd.capacity / fd.congestion_wave_speed > fd.jam_density * (1 + 1e-12))
            throw ScenarioError(where + ": triangular fundamental diagram does not fit under jam density");
        if (fd.free_flow_speed * s.sim.dt > l.length * (1 + 1e-12))
            throw ScenarioError(fmt::format("{}: CFL condition violated, free_flow_speed*dt = {} m exceeds length {} m",
                                            where, fd.free_flow_speed * s.sim.dt, l.length));
    }

    if (s.fragment) {
        const auto& f = *s.fragment;
        for (NodeId n : f.local_nodes) {
            if (!s.find_node(n)) throw ScenarioError(fmt::format("fragment: local node {} does not exist", n.value));
        }
        for (const auto& l : s.links) {
            if (!s.is_local(l.start) && !s.is_local(l.end))
                throw ScenarioError(fmt::format("fragment: link {} touches no local node", l.id.value));
        }
        for (const auto& p : f.relative_sources) {
            const Link* l = s.find_link(p.link);
            if (!l || s.is_local(l->start) || !s.is_local(l->end))
                throw ScenarioError(fmt::format("fragment: relative source {} must end, and only end, in a local node", p.link.value));
        }
        for (const auto& p : f.relative_sinks) {
            const Link* l = s.find_link(p.link);
            if (!l || !s.is_local(l->start) || s.is_local(l->end))
                throw ScenarioError(fmt::format("fragment: relative sink {} must start, and only start, in a local node", p.link.value));
        }
        for (const auto& e : f.external_links) {
            if (s.find_link(e.id)) throw ScenarioError(fmt::format("fragment: external link {} is also held", e.id.value));
        }
    }

    auto ends_of = [&](LinkId id) -> std::optional<LinkEnds> {
        if (const Link* l = s.find_link(id)) return LinkEnds{l->start, l->end, l->lanes};
        if (const ExternalLink* e = s.find_external(id)) return LinkEnds{e->start, e->end, e->lanes};
        return std::nullopt;
    };

    std::set<std::pair<LinkId, LinkId>> movements;
    for (const auto& rc : s.connections) {
        const std::string where = fmt::format("road connection {}", rc.id.value);
        auto in = ends_of(rc.in_link);
        auto out = ends_of(rc.out_link);
        if (!in) throw ScenarioError(fmt::format("{}: in_link {} does not exist", where, rc.in_link.value));
        if (!out) throw ScenarioError(fmt::format("{}: out_link {} does not exist", where, rc.out_link.value));
        if (!s.find_link(rc.in_link) && !s.find_link(rc.out_link))
            throw ScenarioError(where + ": references no held link");
        if (in->end != out->start)
            throw ScenarioError(fmt::format("{}: in_link {} does not end where out_link {} starts", where,
                                            rc.in_link.value, rc.out_link.value));
        auto check_range = [&](const LaneRange& r, int lanes, const char* which) {
            if (r.first < 1 || r.first > r.last || r.last > lanes)
                throw ScenarioError(fmt::format("{}: {} [{}, {}] outside lanes 1..{}", where, which, r.first, r.last, lanes));
        };
        check_range(rc.in_lanes, in->lanes, "in_lanes");
        check_range(rc.out_lanes, out->lanes, "out_lanes");
        if (!movements.emplace(rc.in_link, rc.out_link).second)
            throw ScenarioError(fmt::format("{}: duplicate movement from link {} to link {}", where,
                                            rc.in_link.value, rc.out_link.value));
    }

    const NetworkIndex index(s);

    for (const auto& vt : s.vehicle_types) {
        if (!vt.deterministic()) continue;
        const std::string where = fmt::format("vehicle type {}", vt.id.value);
        const auto& path = vt.path();
        if (path.empty()) throw ScenarioError(where + ": empty path");
        std::set<LinkId> seen;
        for (LinkId l : path) {
            if (!seen.insert(l).second) throw ScenarioError(fmt::format("{}: path repeats link {}", where, l.value));
            if (!s.fragment && !s.find_link(l))
                throw ScenarioError(fmt::format("{}: path link {} does not exist", where, l.value));
        }
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            // Every outgoing connection of a held link is present, fragment or not.
            if (!s.find_link(path[i])) continue;
            if (!movements.contains({path[i], path[i + 1]}))
                throw ScenarioError(fmt::format("{}: path is not connected, no road connection from link {} to link {}",
                                                where, path[i].value, path[i + 1].value));
        }
        if (s.find_link(path.back()) && !index.is_sink(path.back()))
            throw ScenarioError(fmt::format("{}: path must end on a sink link, link {} has successors", where,
                                            path.back().value));
    }

    std::set<std::pair<LinkId, VehicleTypeId>> seen_rows;
    for (const auto& row : s.splits) {
        const std::string where =
            fmt::format("split row (link {}, vehicle type {})", row.in_link.value, row.vehicle_type.value);
        const Link* in = s.find_link(row.in_link);
        if (!in) throw ScenarioError(fmt::format("{}: in_link {} does not exist", where, row.in_link.value));
        if (in->end != row.node)
            throw ScenarioError(fmt::format("{}: node {} is not the end node of link {}", where, row.node.value,
                                            row.in_link.value));
        const VehicleType* vt = s.find_vehicle_type(row.vehicle_type);
        if (!vt) throw ScenarioError(fmt::format("{}: vehicle type {} does not exist", where, row.vehicle_type.value));
        if (vt->deterministic()) throw ScenarioError(where + ": split rows apply only to probabilistic vehicle types");
        if (!seen_rows.emplace(row.in_link, row.vehicle_type).second) throw ScenarioError(where + ": duplicate split row");
        require_profile_times(row.profile, where);
        const auto succ = index.successors(row.in_link);
        for (const auto& bp : row.profile) {
            double sum = 0;
            for (std::size_t i = 0; i < bp.value.size(); ++i) {
                const auto& [out, p] = bp.value[i];
                if (i > 0 && bp.value[i - 1].first == out)
                    throw ScenarioError(fmt::format("{}: link {} listed twice", where, out.value));
                if (!std::binary_search(succ.begin(), succ.end(), out))
                    throw ScenarioError(fmt::format("{}: link {} is not reachable from link {} via a road connection",
                                                    where, out.value, row.in_link.value));
                if (!(p >= 0) || !std::isfinite(p))
                    throw ScenarioError(fmt::format("{}: probability for link {} must be non-negative", where, out.value));
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-12)
                throw ScenarioError(fmt::format("{}: distribution sums to {}", where, sum));
        }
    }

    std::set<std::pair<LinkId, VehicleTypeId>> seen_demands;
    for (const auto& d : s.demands) {
        const std::string where = fmt::format("demand (link {}, vehicle type {})", d.link.value, d.vehicle_type.value);
        const Link* l = s.find_link(d.link);
        if (!l) throw ScenarioError(fmt::format("{}: link {} does not exist", where, d.link.value));
        const VehicleType* vt = s.find_vehicle_type(d.vehicle_type);
        if (!vt) throw ScenarioError(fmt::format("{}: vehicle type {} does not exist", where, d.vehicle_type.value));
        if (!seen_demands.emplace(d.link, d.vehicle_type).second) throw ScenarioError(where + ": duplicate demand");
        require_profile_times(d.profile, where);
        for (const auto& bp : d.profile) {
            if (!(bp.value >= 0) || !std::isfinite(bp.value)) throw ScenarioError(where + ": flow must be non-negative");
        }
        if (index.has_predecessors(d.link) && !l->source)
            throw ScenarioError(fmt::format("{}: link {} has upstream road connections and is not flagged as a source",
                                            where, d.link.value));
        if (vt->deterministic() && vt->path().front() != d.link)
            throw ScenarioError(fmt::format("{}: deterministic demand must enter at the first path link {}", where,
                                            vt->path().front().value));
    }
}

}  // namespace otmd
