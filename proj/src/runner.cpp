#include "otmd/runner.hpp"

#include <cmath>
#include <cstdio>
#include <ctime>

#include <algorithm>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "otmd/errors.hpp"

namespace otmd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double thread_cpu_seconds() {
    timespec ts{};
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

int total_steps(const Scenario& scenario, const RunConfig& config) {
    const int steps = config.steps != 0 ? config.steps : scenario.sim.steps;
    if (steps <= 0) throw ScenarioError(fmt::format("step count must be positive, got {}", steps));
    return steps;
}

bool dump_due(int done, int steps, int every) { return every > 0 && (done % every == 0 || done == steps); }

bool row_less(const DumpRow& a, const DumpRow& b) {
    return std::tie(a.step, a.link, a.lane_group, a.cell, a.vehicle_type, a.next) <
           std::tie(b.step, b.link, b.lane_group, b.cell, b.vehicle_type, b.next);
}

std::vector<LinkId> owned_links(const Scenario& fragment) {
    std::vector<LinkId> out;
    for (const Link& l : fragment.links)
        if (fragment.is_local(l.start)) out.push_back(l.id);
    return out;
}

/// Changes one slot of the first non-empty outgoing map so the handshake
/// can no longer agree; a worker without outgoing slots gains a bogus one.
void corrupt_maps(std::vector<std::pair<DecoderMap, DecoderMap>>& maps) {
    for (auto& [send, recv] : maps) {
        if (!send.slots.empty()) {
            send.slots.front().vehicle_type = VehicleTypeId{send.slots.front().vehicle_type.value + 1000};
            return;
        }
    }
    if (!maps.empty())
        maps.front().first.slots.push_back({RoadConnectionId{-7}, LaneGroupId{-7}, VehicleTypeId{-7}, LinkId{-7}});
}

bool injected(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const InjectedFault&) {
        return true;
    } catch (...) {
        return false;
    }
}

/// Keeps the first error; later ones are usually fallout from the abort. A
/// deliberately injected fault yields to what a peer detected.
class FirstError {
public:
    bool record(std::exception_ptr e) {
        std::lock_guard lock(mutex_);
        if (injected(e)) {
            if (!fault_) fault_ = e;
            return !error_;
        }
        if (error_) return false;
        error_ = std::move(e);
        return true;
    }
    void rethrow() const {
        if (error_) std::rethrow_exception(error_);
        if (fault_) std::rethrow_exception(fault_);
    }

private:
    std::mutex mutex_;
    std::exception_ptr error_, fault_;
};

std::string what_of(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const std::exception& x) {
        return x.what();
    } catch (...) {
        return "unknown error";
    }
}

}  // namespace

double TimingReport::max_compute() const {
    double m = 0;
    for (const auto& w : workers) m = std::max(m, w.compute);
    return m;
}
double TimingReport::max_compute_cpu() const {
    double m = 0;
    for (const auto& w : workers) m = std::max(m, w.compute_cpu);
    return m;
}
double TimingReport::max_comm() const {
    double m = 0;
    for (const auto& w : workers) m = std::max(m, w.comm);
    return m;
}
double TimingReport::max_setup() const {
    double m = 0;
    for (const auto& w : workers) m = std::max(m, w.setup);
    return m;
}

RunResult run_sequential(const Scenario& scenario, const RunConfig& config) {
    const auto t0 = Clock::now();
    const int steps = total_steps(scenario, config);
    RunResult result;
    WorkerTiming timing;
    Engine engine(scenario, config.kernels);
    timing.setup = seconds_since(t0);
    const double cpu0 = thread_cpu_seconds();
    for (int s = 0; s < steps; ++s) {
        const auto c0 = Clock::now();
        engine.step();
        timing.compute += seconds_since(c0);
        result.metrics.push_back(engine.metrics());
        if (dump_due(s + 1, steps, config.dump_every)) {
            auto rows = engine.dump();
            result.dumps.insert(result.dumps.end(), rows.begin(), rows.end());
        }
    }
    timing.compute_cpu = thread_cpu_seconds() - cpu0;
    timing.total = seconds_since(t0);
    result.timing.workers.push_back(timing);
    result.timing.wall = timing.total;
    return result;
}

WorkerResult run_worker(const Scenario& fragment, const Metagraph& metagraph, Transport& transport,
                        const RunConfig& config) {
    const auto t0 = Clock::now();
    const int self = transport.index();
    const int steps = total_steps(fragment, config);
    const bool faulty = config.fault.kind != FaultKind::kNone && config.fault.worker == self;

    WorkerResult result;
    result.index = self;
    WorkerTiming& timing = result.timing;
    timing.index = self;

    Engine engine(fragment, config.kernels);
    const auto d0 = Clock::now();
    std::vector<std::pair<DecoderMap, DecoderMap>> maps;
    for (int peer : metagraph.neighbors(self))
        maps.emplace_back(decoder_map(fragment, engine.entries(), self, peer),
                          decoder_map(fragment, engine.entries(), peer, self));
    if (faulty && config.fault.kind == FaultKind::kCorruptDecoder) corrupt_maps(maps);
    const auto channels = establish(transport, metagraph, self, maps, &engine);
    timing.decoder = seconds_since(d0);
    timing.setup = seconds_since(t0);
    spdlog::debug("worker {}: {} channels, setup {:.3f}s", self, channels.size(), timing.setup);

    for (const auto& ch : channels)
        result.channels.push_back({self, ch.peer, ch.send.length(), ch.recv.length(), SIZE_MAX, 0, SIZE_MAX, 0, 0});

    timing.comm_min = channels.empty() ? 0 : 1e300;
    std::vector<BoundaryMessage> outgoing(channels.size());
    for (int s = 0; s < steps; ++s) {
        const auto step = static_cast<std::uint64_t>(s);
        auto c0 = Clock::now();
        double cpu0 = thread_cpu_seconds();
        engine.phase_a();
        timing.compute += seconds_since(c0);
        timing.compute_cpu += thread_cpu_seconds() - cpu0;

        if (!channels.empty()) {
            const auto m0 = Clock::now();
            for (std::size_t k = 0; k < channels.size(); ++k) {
                outgoing[k] = encode(channels[k], engine, step);
                if (faulty && config.fault.kind == FaultKind::kStepSkew && step == config.fault.step)
                    outgoing[k].step = step + 1;
            }
            const auto incoming = exchange(transport, channels, outgoing, step);
            for (std::size_t k = 0; k < channels.size(); ++k) {
                decode(channels[k], incoming[k], engine);
                auto& st = result.channels[k];
                st.send_min = std::min(st.send_min, outgoing[k].values.size());
                st.send_max = std::max(st.send_max, outgoing[k].values.size());
                st.recv_min = std::min(st.recv_min, incoming[k].values.size());
                st.recv_max = std::max(st.recv_max, incoming[k].values.size());
                st.messages += 2;
            }
            const double dt = seconds_since(m0);
            timing.comm += dt;
            timing.comm_min = std::min(timing.comm_min, dt);
            timing.comm_max = std::max(timing.comm_max, dt);
        }

        c0 = Clock::now();
        cpu0 = thread_cpu_seconds();
        engine.phase_b();
        timing.compute += seconds_since(c0);
        timing.compute_cpu += thread_cpu_seconds() - cpu0;

        result.metrics.push_back(engine.metrics());
        if (dump_due(s + 1, steps, config.dump_every)) {
            auto rows = engine.dump();
            result.dumps.insert(result.dumps.end(), rows.begin(), rows.end());
        }
    }
    timing.comm_mean = channels.empty() ? 0 : timing.comm / steps;
    timing.total = seconds_since(t0);
    return result;
}

RunResult run_fragments(const std::vector<Scenario>& fragments, TransportKind transport, const RunConfig& config) {
    if (fragments.empty()) throw ScenarioError("no fragments to run");
    const auto t0 = Clock::now();
    const int n = static_cast<int>(fragments.size());
    for (int i = 0; i < n; ++i) {
        const auto& f = fragments[i].fragment;
        if (!f || f->index != i || f->count != n)
            throw ScenarioError(fmt::format("fragment {} of {} is missing its fragment header or is misnumbered", i, n));
    }
    RunResult result;
    const auto m0 = Clock::now();
    const Metagraph metagraph = build_metagraph(fragments);
    result.timing.metagraph = seconds_since(m0);

    std::vector<std::vector<LinkId>> owned;
    std::vector<LinkId> all;
    for (const auto& f : fragments) {
        owned.push_back(owned_links(f));
        all.insert(all.end(), owned.back().begin(), owned.back().end());
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    check_ownership(owned, all);

    std::vector<WorkerResult> outputs(n);
    FirstError first;
    std::vector<std::thread> threads;

    if (transport == TransportKind::kLocal) {
        LocalHub hub(n, config.timeout);
        std::vector<std::unique_ptr<Transport>> ts;
        for (int i = 0; i < n; ++i) ts.push_back(hub.connect(i));
        for (int i = 0; i < n; ++i)
            threads.emplace_back([&, i] {
                try {
                    outputs[i] = run_worker(fragments[i], metagraph, *ts[i], config);
                } catch (...) {
                    auto e = std::current_exception();
                    if (first.record(e)) hub.abort(fmt::format("worker {} failed: {}", i, what_of(e)));
                }
            });
        for (auto& t : threads) t.join();
    } else {
        std::vector<std::unique_ptr<TcpListener>> listeners;
        std::vector<Endpoint> roster;
        for (int i = 0; i < n; ++i) {
            listeners.push_back(std::make_unique<TcpListener>("127.0.0.1", 0));
            roster.push_back({i, "127.0.0.1", listeners.back()->port()});
        }
        const bool truncate = config.fault.kind == FaultKind::kTruncateFrame;
        for (int i = 0; i < n; ++i)
            threads.emplace_back([&, i] {
                std::unique_ptr<Transport> t;
                try {
                    const bool faulty = truncate && config.fault.worker == i;
                    t = connect_tcp(*listeners[i], roster, i, metagraph.neighbors(i), config.timeout,
                                    faulty ? TcpFault::kTruncateFrame : TcpFault::kNone, config.fault.step);
                    outputs[i] = run_worker(fragments[i], metagraph, *t, config);
                } catch (...) {
                    auto e = std::current_exception();
                    first.record(e);
                    // Closing our streams unblocks the neighbours.
                    if (t) t->abort(what_of(e));
                }
            });
        for (auto& t : threads) t.join();
    }
    first.rethrow();

    std::vector<std::vector<DumpRow>> dumps;
    std::vector<std::vector<StepMetrics>> metrics;
    for (auto& w : outputs) {
        dumps.push_back(std::move(w.dumps));
        metrics.push_back(std::move(w.metrics));
        result.channels.insert(result.channels.end(), w.channels.begin(), w.channels.end());
        result.timing.workers.push_back(w.timing);
    }
    Scenario links_only;
    for (LinkId id : all) links_only.links.push_back(Link{id, {}, {}, 0, 1, {}, false});
    result.dumps = merge_states(dumps, links_only);
    result.metrics = merge_metrics(metrics);
    result.timing.wall = seconds_since(t0);
    return result;
}

RunResult run_distributed(const Scenario& scenario, int n, TransportKind transport, const RunConfig& config,
                          std::uint64_t seed, const std::optional<NodePartition>& partition) {
    if (n < 1) throw ScenarioError(fmt::format("worker count must be at least 1, got {}", n));
    const auto t0 = Clock::now();
    NodePartition p;
    if (partition) {
        if (partition->count != n)
            throw ScenarioError(fmt::format("partition has {} subsets but {} workers were requested", partition->count, n));
        validate_partition(*partition, scenario);
        p = *partition;
    } else {
        p = partition_nodes(scenario, n, seed);
    }
    const auto subs = build_subnetworks(scenario, p);
    std::vector<Scenario> fragments;
    for (const auto& s : subs) fragments.push_back(s.fragment);
    const double prep = seconds_since(t0);

    RunResult result = run_fragments(fragments, transport, config);
    result.timing.partition = prep;
    result.timing.wall = seconds_since(t0);
    return result;
}

void check_ownership(const std::vector<std::vector<LinkId>>& owned, const std::vector<LinkId>& links) {
    std::map<LinkId, int> owner;
    for (std::size_t w = 0; w < owned.size(); ++w)
        for (LinkId l : owned[w]) {
            auto [it, fresh] = owner.emplace(l, static_cast<int>(w));
            if (!fresh)
                throw InternalError(fmt::format("link {} is owned by workers {} and {}", l.value, it->second, w));
        }
    for (LinkId l : links)
        if (!owner.contains(l)) throw InternalError(fmt::format("link {} is owned by no worker", l.value));
    if (owner.size() != links.size()) throw InternalError("workers own links outside the network");
}

std::vector<DumpRow> merge_states(const std::vector<std::vector<DumpRow>>& per_worker, const Scenario& scenario) {
    std::map<LinkId, int> claimed;
    std::size_t total = 0;
    for (std::size_t w = 0; w < per_worker.size(); ++w) {
        for (const DumpRow& r : per_worker[w]) {
            auto [it, fresh] = claimed.emplace(r.link, static_cast<int>(w));
            if (!fresh && it->second != static_cast<int>(w))
                throw InternalError(
                    fmt::format("link {} reported by workers {} and {}", r.link.value, it->second, w));
        }
        total += per_worker[w].size();
    }
    if (total > 0) {
        for (const Link& l : scenario.links)
            if (!claimed.contains(l.id)) throw InternalError(fmt::format("link {} reported by no worker", l.id.value));
        for (const auto& [l, w] : claimed)
            if (!scenario.find_link(l))
                throw InternalError(fmt::format("worker {} reported unknown link {}", w, l.value));
    }
    std::vector<DumpRow> out;
    out.reserve(total);
    for (const auto& rows : per_worker) out.insert(out.end(), rows.begin(), rows.end());
    std::stable_sort(out.begin(), out.end(), row_less);
    return out;
}

std::vector<StepMetrics> merge_metrics(const std::vector<std::vector<StepMetrics>>& per_worker) {
    if (per_worker.empty()) return {};
    const std::size_t steps = per_worker.front().size();
    std::vector<StepMetrics> out(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        CompensatedSum in_network, entered, exited, queued;
        for (const auto& w : per_worker) {
            if (w.size() != steps) throw InternalError("workers report different step counts");
            if (w[s].step != per_worker.front()[s].step) throw InternalError("workers report different steps");
            in_network.add(w[s].in_network);
            entered.add(w[s].entered);
            exited.add(w[s].exited);
            queued.add(w[s].queued);
        }
        out[s] = {per_worker.front()[s].step, in_network.value(), entered.value(), exited.value(), queued.value()};
    }
    return out;
}

std::string metrics_json(const std::vector<StepMetrics>& metrics) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& m : metrics)
        j.push_back({{"step", m.step},
                     {"in_network", m.in_network},
                     {"entered", m.entered},
                     {"exited", m.exited},
                     {"queued", m.queued}});
    return j.dump(2);
}

namespace {

nlohmann::ordered_json timing_to(const WorkerTiming& w) {
    return {{"worker", w.index},         {"setup_s", w.setup},
            {"decoder_s", w.decoder},    {"comm_s", w.comm},
            {"comm_step_min_s", w.comm_min}, {"comm_step_mean_s", w.comm_mean},
            {"comm_step_max_s", w.comm_max}, {"compute_s", w.compute},
            {"compute_cpu_s", w.compute_cpu}, {"total_s", w.total}};
}

nlohmann::ordered_json timing_object(const TimingReport& t) {
    nlohmann::ordered_json workers = nlohmann::ordered_json::array();
    for (const auto& w : t.workers) workers.push_back(timing_to(w));
    return {{"partition_s", t.partition},
            {"metagraph_s", t.metagraph},
            {"wall_s", t.wall},
            {"max_setup_s", t.max_setup()},
            {"max_comm_s", t.max_comm()},
            {"max_compute_s", t.max_compute()},
            {"max_compute_cpu_s", t.max_compute_cpu()},
            {"workers", workers}};
}

}  // namespace

std::string timing_json(const TimingReport& timing) { return timing_object(timing).dump(2); }

std::vector<BenchRow> benchmark(const Scenario& scenario, const std::vector<int>& ns, TransportKind transport,
                                const RunConfig& config, std::uint64_t seed) {
    std::vector<int> order = ns;
    if (std::find(order.begin(), order.end(), 1) == order.end()) order.insert(order.begin(), 1);
    const int steps = total_steps(scenario, config);

    std::vector<BenchRow> rows;
    for (int n : order) {
        spdlog::info("bench: n = {}", n);
        BenchRow row;
        row.n = n;
        row.timing = run_distributed(scenario, n, transport, config, seed).timing;
        row.rate = steps / row.timing.wall;
        rows.push_back(std::move(row));
    }
    const auto serial = std::find_if(rows.begin(), rows.end(), [](const BenchRow& r) { return r.n == 1; });
    const double t1 = serial->timing.wall, rate1 = serial->rate;
    for (auto& r : rows) {
        r.speedup = t1 / r.timing.wall;
        r.ideal_rate = r.n * rate1;
    }
    // Report only what was asked for, in the order asked.
    std::vector<BenchRow> out;
    for (int n : ns)
        for (const auto& r : rows)
            if (r.n == n) out.push_back(r);
    return out.empty() ? rows : out;
}

std::string bench_json(const std::vector<BenchRow>& rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows)
        j.push_back({{"n", r.n},
                     {"speedup", r.speedup},
                     {"steps_per_s", r.rate},
                     {"ideal_steps_per_s", r.ideal_rate},
                     {"timing", timing_object(r.timing)}});
    return j.dump(2);
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::string out = fmt::format("{:>4} {:>10} {:>10} {:>10} {:>10} {:>9} {:>12} {:>12}\n", "n", "setup_s", "comm_s",
                                  "compute_s", "total_s", "speedup", "steps/s", "ideal");
    for (const auto& r : rows)
        out += fmt::format("{:>4} {:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f} {:>9.3f} {:>12.2f} {:>12.2f}\n", r.n,
                           r.timing.partition + r.timing.metagraph + r.timing.max_setup(), r.timing.max_comm(),
                           r.timing.max_compute(), r.timing.wall, r.speedup, r.rate, r.ideal_rate);
    return out;
}

}  // namespace otmd

namespace otmd {

namespace {

using ojson = nlohmann::ordered_json;

WorkerTiming timing_from(const nlohmann::json& j) {
    WorkerTiming t;
    t.index = j.at("worker").get<int>();
    t.setup = j.at("setup_s").get<double>();
    t.decoder = j.at("decoder_s").get<double>();
    t.comm = j.at("comm_s").get<double>();
    t.comm_min = j.at("comm_step_min_s").get<double>();
    t.comm_mean = j.at("comm_step_mean_s").get<double>();
    t.comm_max = j.at("comm_step_max_s").get<double>();
    t.compute = j.at("compute_s").get<double>();
    t.compute_cpu = j.at("compute_cpu_s").get<double>();
    t.total = j.at("total_s").get<double>();
    return t;
}


constexpr std::string_view kDumpHeader = "step,link,lane_group,cell,vehicle_type,next_link,vehicles";

std::string row_key(const DumpRow& r) {
    return fmt::format("step {}, link {}, lane group {}, cell {}, commodity (vehicle type {}, next link {})", r.step,
                       r.link.value, r.lane_group.value, r.cell, r.vehicle_type.value, r.next.value);
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> out;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        if (nl == std::string_view::npos) break;
        text.remove_prefix(nl + 1);
    }
    return out;
}

}  // namespace

std::string worker_result_json(const WorkerResult& result) {
    ojson channels = ojson::array();
    for (const auto& c : result.channels)
        channels.push_back({{"self", c.self},
                            {"peer", c.peer},
                            {"send_map", c.send_map},
                            {"recv_map", c.recv_map},
                            {"send_min", c.send_min},
                            {"send_max", c.send_max},
                            {"recv_min", c.recv_min},
                            {"recv_max", c.recv_max},
                            {"messages", c.messages}});
    ojson j{{"worker", result.index},
            {"timing", timing_to(result.timing)},
            {"metrics", ojson::parse(metrics_json(result.metrics))},
            {"channels", channels}};
    return j.dump(2);
}

WorkerResult parse_worker_result(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        WorkerResult r;
        r.index = j.at("worker").get<int>();
        r.timing = timing_from(j.at("timing"));
        for (const auto& m : j.at("metrics"))
            r.metrics.push_back({m.at("step").get<int>(), m.at("in_network").get<double>(), m.at("entered").get<double>(),
                                 m.at("exited").get<double>(), m.at("queued").get<double>()});
        for (const auto& c : j.at("channels"))
            r.channels.push_back({c.at("self").get<int>(), c.at("peer").get<int>(), c.at("send_map").get<std::size_t>(),
                                  c.at("recv_map").get<std::size_t>(), c.at("send_min").get<std::size_t>(),
                                  c.at("send_max").get<std::size_t>(), c.at("recv_min").get<std::size_t>(),
                                  c.at("recv_max").get<std::size_t>(), c.at("messages").get<std::size_t>()});
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError(fmt::format("worker result: {}", e.what()));
    }
}

std::vector<DumpRow> parse_dump(std::string_view csv) {
    const auto lines = split_lines(csv);
    if (lines.empty() || lines.front() != kDumpHeader)
        throw ScenarioError(fmt::format("state dump: expected header '{}'", kDumpHeader));
    std::vector<DumpRow> rows;
    rows.reserve(lines.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string line(lines[i]);
        long long step, link, group, cell, vt, next;
        double v;
        int used = 0;
        if (std::sscanf(line.c_str(), "%lld,%lld,%lld,%lld,%lld,%lld,%lf%n", &step, &link, &group, &cell, &vt, &next, &v,
                        &used) != 7 ||
            static_cast<std::size_t>(used) != line.size())
            throw ScenarioError(fmt::format("state dump line {}: malformed row '{}'", i + 1, line));
        rows.push_back({static_cast<int>(step), LinkId{link}, LaneGroupId{group}, static_cast<int>(cell),
                        VehicleTypeId{vt}, LinkId{next}, v});
    }
    return rows;
}

DumpDiff compare_dumps(std::string_view a, std::string_view b, std::optional<double> tolerance) {
    if (!tolerance && a == b) return {};
    const auto ra = parse_dump(a);
    const auto rb = parse_dump(b);
    const std::size_t n = std::min(ra.size(), rb.size());
    for (std::size_t i = 0; i < n; ++i) {
        const DumpRow &x = ra[i], &y = rb[i];
        if (std::tie(x.step, x.link, x.lane_group, x.cell, x.vehicle_type, x.next) !=
            std::tie(y.step, y.link, y.lane_group, y.cell, y.vehicle_type, y.next))
            return {false, fmt::format("row {}: layouts differ, a has {} but b has {}", i + 1, row_key(x), row_key(y))};
        const bool same = tolerance ? std::abs(x.vehicles - y.vehicles) <=
                                          *tolerance * std::max(std::abs(x.vehicles), std::abs(y.vehicles))
                                    : double_bits(x.vehicles) == double_bits(y.vehicles);
        if (!same)
            return {false, fmt::format("first divergence at {}: a = {:.17g}, b = {:.17g}", row_key(x), x.vehicles,
                                       y.vehicles)};
    }
    if (ra.size() != rb.size())
        return {false, fmt::format("a has {} rows, b has {}", ra.size(), rb.size())};
    if (!tolerance)  // same rows, different text (formatting)
        return {false, "dumps hold equal values but differ in formatting"};
    return {};
}

}  // namespace otmd
