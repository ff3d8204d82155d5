// otmd: command-line front end. gen-grid, partition, run, merge, bench, diff.

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <climits>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "otmd/comm.hpp"
#include "otmd/errors.hpp"
#include "otmd/partition.hpp"
#include "otmd/runner.hpp"
#include "otmd/scenario.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace otmd;

namespace {

constexpr int kExitDiffer = 5;

/// Reads `--config` JSON. Keys mirror long flag names, nested under the
/// subcommand they belong to: {"run": {"mode": "local", "n": 4}}.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(input);
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConversionError(fmt::format("config file: {}", e.what()));
        }
        std::vector<CLI::ConfigItem> items;
        walk(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const nlohmann::json& v) {
        return v.is_string() ? v.get<std::string>() : v.dump();
    }

    static void walk(const nlohmann::json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& items) {
        if (!j.is_object()) throw CLI::ConversionError("config file: expected a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto next = parents;
                next.push_back(key);
                walk(value, next, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array())
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            else
                item.inputs.push_back(scalar(value));
            items.push_back(std::move(item));
        }
    }
};

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScenarioError(fmt::format("cannot read {}", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw ScenarioError(fmt::format("cannot write {}", path));
}

const kernels::KernelSet* pick_kernels(const std::string& name) {
    if (name == "auto") return nullptr;
    if (name == "scalar") return &kernels::scalar_kernels();
    if (const auto* k = kernels::avx2_kernels()) return k;
    throw ScenarioError("AVX2 kernels requested but this CPU or build lacks AVX2");
}

FaultPlan parse_fault(const std::string& spec) {
    // kind[:worker[:step]]
    FaultPlan f;
    if (spec.empty()) return f;
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    const std::string& kind = parts[0];
    if (kind == "corrupt-decoder") f.kind = FaultKind::kCorruptDecoder;
    else if (kind == "step-skew") f.kind = FaultKind::kStepSkew;
    else if (kind == "truncate-frame") f.kind = FaultKind::kTruncateFrame;
    else throw CLI::ValidationError("--inject-fault", "unknown fault " + kind);
    if (parts.size() > 1) f.worker = std::stoi(parts[1]);
    if (parts.size() > 2) f.step = std::stoull(parts[2]);
    return f;
}

double conservation_error(const std::vector<StepMetrics>& metrics) {
    double worst = 0;
    for (const auto& m : metrics) worst = std::max(worst, std::abs(m.entered - m.exited - m.in_network));
    return worst;
}

struct Outputs {
    std::string dump, metrics, timing;
};

void emit(const RunResult& r, const Outputs& out, const std::string& label) {
    if (!out.dump.empty()) write_text(out.dump, format_dump(r.dumps));
    if (!out.metrics.empty()) write_text(out.metrics, metrics_json(r.metrics) + "\n");
    if (!out.timing.empty()) write_text(out.timing, timing_json(r.timing) + "\n");
    const double err = conservation_error(r.metrics);
    if (!r.metrics.empty()) {
        const auto& last = r.metrics.back();
        fmt::print(stderr, "{}: {} steps, in network {:.6f}, entered {:.6f}, exited {:.6f}, queued {:.6f}\n", label,
                   last.step, last.in_network, last.entered, last.exited, last.queued);
    }
    fmt::print(stderr, "{}: max conservation error {:.3g}, wall {:.3f}s\n", label, err, r.timing.wall);
    if (err > 1e-9) throw InternalError(fmt::format("conservation violated by {:.3g} vehicles", err));
}

// --- gen-grid ----------------------------------------------------------------------

struct GenGridArgs {
    GridOptions grid;
    std::string out;
};

void add_gen_grid(CLI::App& app, GenGridArgs& a, std::function<void()>& action) {
    auto* c = app.add_subcommand("gen-grid", "Write a synthetic tiled grid scenario");
    c->add_option("--rows", a.grid.rows, "Tile rows")->required()->check(CLI::Range(1, 100000));
    c->add_option("--cols", a.grid.cols, "Tile columns")->required()->check(CLI::Range(1, 100000));
    c->add_option("--demand-vph-per-lane", a.grid.demand_vph_per_lane, "Source demand, vehicles/hour/lane")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    c->add_option("--lanes", a.grid.lanes, "Lanes per link")->capture_default_str()->check(CLI::Range(1, 16));
    c->add_option("--link-length", a.grid.link_length, "Link length, m")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--dt", a.grid.dt, "Time step, s")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--steps", a.grid.steps, "Default step count")->capture_default_str()->check(CLI::Range(1, INT_MAX));
    c->add_option("--out", a.out, "Output file, - for stdout")->required();
    c->callback([&] {
        action = [&] {
            const Scenario s = generate_grid(a.grid);
            write_text(a.out, serialize_scenario(s));
            spdlog::info("grid {}x{}: {} nodes, {} links", a.grid.rows, a.grid.cols, s.nodes.size(), s.links.size());
        };
    });
}

// --- partition ------------------------------------------------------------------

struct PartitionArgs {
    std::string scenario, out_dir, import;
    int n = 1;
    std::uint64_t seed = 1;
};

void add_partition(CLI::App& app, PartitionArgs& a, std::function<void()>& action) {
    auto* c = app.add_subcommand("partition", "Split a scenario into per-worker fragments");
    c->add_option("--scenario", a.scenario, "Scenario file")->required();
    c->add_option("--n", a.n, "Number of subnetworks")->required()->check(CLI::Range(1, 1 << 20));
    c->add_option("--seed", a.seed, "Partitioner seed")->capture_default_str();
    c->add_option("--out-dir", a.out_dir, "Directory for fragments, metagraph and decoder maps")->required();
    c->add_option("--import", a.import, "Use this partition file (node subset lines, or METIS output)");
    c->callback([&] {
        action = [&] {
            const Scenario s = load_scenario(a.scenario);
            const NodePartition p = a.import.empty() ? partition_nodes(s, a.n, a.seed) : load_partition(a.import, s, a.n);
            if (p.count != a.n)
                throw ScenarioError(fmt::format("partition: {} subsets in {}, --n is {}", p.count, a.import, a.n));
            const auto subs = build_subnetworks(s, p);
            const auto mg = build_metagraph(subs);
            write_partition_outputs(subs, mg, a.out_dir);
            save_partition(p, (fs::path(a.out_dir) / "partition.txt").string());
            spdlog::info("{} subnetworks, {} cut links, {} metagraph edges", a.n, cut_links(s, p), mg.edges.size());
        };
    });
}

// --- run / merge ---------------------------------------------------------------------

struct RunArgs {
    std::string scenario, fragments_dir, mode = "seq", roster, out_dir, partition, kernels = "auto", fault;
    int n = 1;
    int steps = 0;
    int dump_every = 10;
    int worker = -1;
    int timeout_ms = 30000;
    bool spawn_local = false;
    std::uint64_t seed = 1;
    Outputs out;
};

RunConfig make_config(const RunArgs& a) {
    RunConfig c;
    c.steps = a.steps;
    c.dump_every = a.dump_every;
    c.timeout = std::chrono::milliseconds(a.timeout_ms);
    c.kernels = pick_kernels(a.kernels);
    c.fault = parse_fault(a.fault);
    return c;
}

std::string worker_file(const std::string& dir, int i, const char* ext) {
    return (fs::path(dir) / fmt::format("worker-{}.{}", i, ext)).string();
}

/// Joins the per-worker files of a TCP run into one result.
RunResult merge_worker_outputs(const std::vector<Scenario>& fragments, const std::string& dir) {
    const Scenario whole = reconstruct(fragments);
    std::vector<std::vector<DumpRow>> dumps;
    std::vector<std::vector<StepMetrics>> metrics;
    RunResult r;
    for (std::size_t i = 0; i < fragments.size(); ++i) {
        const int w = static_cast<int>(i);
        WorkerResult wr = parse_worker_result(read_text(worker_file(dir, w, "json")));
        if (wr.index != w) throw ScenarioError(fmt::format("{} reports worker {}", worker_file(dir, w, "json"), wr.index));
        dumps.push_back(parse_dump(read_text(worker_file(dir, w, "csv"))));
        metrics.push_back(std::move(wr.metrics));
        r.channels.insert(r.channels.end(), wr.channels.begin(), wr.channels.end());
        r.timing.workers.push_back(wr.timing);
    }
    r.dumps = merge_states(dumps, whole);
    r.metrics = merge_metrics(metrics);
    for (const auto& w : r.timing.workers) r.timing.wall = std::max(r.timing.wall, w.total);
    return r;
}

/// One TCP worker process joining the roster.
int run_tcp_worker(const RunArgs& a) {
    if (a.fragments_dir.empty() || a.roster.empty() || a.out_dir.empty())
        throw CLI::ValidationError("--worker", "needs --fragments-dir, --roster and --out-dir");
    const auto fragments = load_fragments(a.fragments_dir);
    if (a.worker >= static_cast<int>(fragments.size()))
        throw ScenarioError(fmt::format("worker {} but only {} fragments", a.worker, fragments.size()));
    const auto roster = load_roster(a.roster);
    const Metagraph mg = build_metagraph(fragments);
    RunConfig config = make_config(a);
    const Endpoint* me = nullptr;
    for (const auto& e : roster)
        if (e.index == a.worker) me = &e;
    if (!me) throw ScenarioError(fmt::format("roster has no entry for worker {}", a.worker));
    TcpListener listener(me->host, me->port);
    const bool truncate = config.fault.kind == FaultKind::kTruncateFrame && config.fault.worker == a.worker;
    auto transport = connect_tcp(listener, roster, a.worker, mg.neighbors(a.worker), config.timeout,
                                 truncate ? TcpFault::kTruncateFrame : TcpFault::kNone, config.fault.step);
    WorkerResult r;
    try {
        r = run_worker(fragments[a.worker], mg, *transport, config);
    } catch (...) {
        transport->abort("worker failed");
        throw;
    }
    write_text(worker_file(a.out_dir, a.worker, "csv"), format_dump(r.dumps));
    write_text(worker_file(a.out_dir, a.worker, "json"), worker_result_json(r) + "\n");
    spdlog::info("worker {}: done, setup {:.3f}s compute {:.3f}s comm {:.3f}s", a.worker, r.timing.setup,
                 r.timing.compute, r.timing.comm);
    return kExitOk;
}

/// Forks one worker process per fragment on this host, then merges.
int run_spawn_local(const RunArgs& a, const char* argv0) {
    const fs::path work = a.out_dir.empty() ? fs::temp_directory_path() / fmt::format("otmd-{}", ::getpid())
                                            : fs::path(a.out_dir);
    fs::create_directories(work);
    std::string frag_dir = a.fragments_dir;
    if (frag_dir.empty()) {
        const Scenario s = load_scenario(a.scenario);
        const NodePartition p = a.partition.empty() ? partition_nodes(s, a.n, a.seed) : load_partition(a.partition, s, a.n);
        frag_dir = (work / "fragments").string();
        const auto subs = build_subnetworks(s, p);
        write_partition_outputs(subs, build_metagraph(subs), frag_dir);
    }
    const auto fragments = load_fragments(frag_dir);
    const int n = static_cast<int>(fragments.size());

    // Ports are probed here and released; each child binds its own again.
    std::string roster_text;
    {
        std::vector<std::unique_ptr<TcpListener>> probes;
        for (int i = 0; i < n; ++i) {
            probes.push_back(std::make_unique<TcpListener>("127.0.0.1", 0));
            roster_text += fmt::format("{} 127.0.0.1 {}\n", i, probes.back()->port());
        }
    }
    const std::string roster = (work / "roster.txt").string();
    write_text(roster, roster_text);

    std::vector<pid_t> children;
    for (int i = 0; i < n; ++i) {
        std::vector<std::string> args = {argv0,          "run",          "--mode",        "tcp",
                                         "--worker",     std::to_string(i), "--fragments-dir", frag_dir,
                                         "--roster",     roster,         "--out-dir",     work.string(),
                                         "--dump-every", std::to_string(a.dump_every), "--timeout-ms",
                                         std::to_string(a.timeout_ms), "--kernels", a.kernels};
        if (a.steps > 0) args.insert(args.end(), {"--steps", std::to_string(a.steps)});
        if (!a.fault.empty()) args.insert(args.end(), {"--inject-fault", a.fault});
        std::vector<char*> cargs;
        for (auto& s : args) cargs.push_back(s.data());
        cargs.push_back(nullptr);
        pid_t pid = 0;
        if (posix_spawn(&pid, "/proc/self/exe", nullptr, nullptr, cargs.data(), environ) != 0)
            throw InternalError(fmt::format("cannot start worker {}", i));
        children.push_back(pid);
    }
    int worst = kExitOk;
    for (int i = 0; i < n; ++i) {
        int status = 0;
        ::waitpid(children[i], &status, 0);
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kExitInternal;
        if (code != kExitOk) spdlog::error("worker {} exited with code {}", i, code);
        // Protocol failures are usually fallout; anything else is the cause.
        if (code != kExitOk && (worst == kExitOk || worst == kExitProtocol)) worst = code;
    }
    if (worst != kExitOk) return worst;
    emit(merge_worker_outputs(fragments, work.string()), a.out, fmt::format("tcp n={}", n));
    return kExitOk;
}

int do_run(const RunArgs& a, const char* argv0) {
    if (a.mode == "tcp") {
        if (a.worker >= 0) return run_tcp_worker(a);
        if (!a.spawn_local) throw CLI::ValidationError("--mode tcp", "needs --spawn-local, or --worker with --roster");
        return run_spawn_local(a, argv0);
    }
    const RunConfig config = make_config(a);
    if (a.mode == "seq") {
        const Scenario s = a.scenario.empty() ? reconstruct(load_fragments(a.fragments_dir)) : load_scenario(a.scenario);
        emit(run_sequential(s, config), a.out, "seq");
        return kExitOk;
    }
    // local
    RunResult r;
    if (!a.fragments_dir.empty()) {
        r = run_fragments(load_fragments(a.fragments_dir), TransportKind::kLocal, config);
    } else {
        const Scenario s = load_scenario(a.scenario);
        std::optional<NodePartition> p;
        if (!a.partition.empty()) p = load_partition(a.partition, s, a.n);
        r = run_distributed(s, a.n, TransportKind::kLocal, config, a.seed, p);
    }
    emit(r, a.out, fmt::format("local n={}", r.timing.workers.size()));
    return kExitOk;
}

void add_outputs(CLI::App* c, Outputs& out) {
    c->add_option("--dump", out.dump, "State dump CSV (every --dump-every steps and the last)");
    c->add_option("--metrics", out.metrics, "Per-step metrics JSON");
    c->add_option("--timing", out.timing, "Timing report JSON");
}

void add_run(CLI::App& app, RunArgs& a, std::function<int()>& action, const char* argv0) {
    auto* c = app.add_subcommand("run", "Run a scenario sequentially or distributed");
    auto* scen = c->add_option("--scenario", a.scenario, "Scenario file");
    auto* frag = c->add_option("--fragments-dir", a.fragments_dir, "Fragments written by partition");
    scen->excludes(frag);
    c->add_option("--mode", a.mode, "seq, local or tcp")->capture_default_str()->check(
        CLI::IsMember({"seq", "local", "tcp"}));
    c->add_option("--n", a.n, "Workers, when partitioning on the fly")->capture_default_str()->check(
        CLI::Range(1, 1 << 16));
    c->add_option("--steps", a.steps, "Steps to simulate (default: the scenario's)")->check(CLI::Range(1, INT_MAX));
    c->add_option("--dump-every", a.dump_every, "Dump cadence in steps; 0 dumps nothing")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    c->add_option("--seed", a.seed, "Partitioner seed")->capture_default_str();
    c->add_option("--partition", a.partition, "Partition file to use instead of the built-in partitioner");
    c->add_option("--roster", a.roster, "TCP roster: 'worker host port' lines");
    c->add_flag("--spawn-local", a.spawn_local, "TCP mode: start one worker process per fragment on this host");
    c->add_option("--worker", a.worker, "TCP mode: run only this worker, joining the roster")->check(
        CLI::NonNegativeNumber);
    c->add_option("--out-dir", a.out_dir, "TCP mode: directory for per-worker outputs");
    c->add_option("--timeout-ms", a.timeout_ms, "Exchange timeout")->capture_default_str()->check(
        CLI::Range(1, INT_MAX));
    c->add_option("--kernels", a.kernels, "auto, scalar or avx2")->capture_default_str()->check(
        CLI::IsMember({"auto", "scalar", "avx2"}));
    c->add_option("--inject-fault", a.fault, "kind[:worker[:step]] for protocol tests")->group("");
    add_outputs(c, a.out);
    c->callback([&, c, scen, frag, argv0] {
        if (scen->count() == 0 && frag->count() == 0)
            throw CLI::RequiredError("--scenario or --fragments-dir");
        if (!a.scenario.empty() && a.worker >= 0)
            throw CLI::ValidationError("--worker", "takes --fragments-dir, not --scenario");
        (void)c;
        action = [&, argv0]() -> int { return do_run(a, argv0); };
    });
}

struct MergeArgs {
    std::string fragments_dir, worker_dir;
    Outputs out;
};

void add_merge(CLI::App& app, MergeArgs& a, std::function<void()>& action) {
    auto* c = app.add_subcommand("merge", "Combine the per-worker outputs of a roster-joined TCP run");
    c->add_option("--fragments-dir", a.fragments_dir, "Fragments the workers ran")->required();
    c->add_option("--worker-dir", a.worker_dir, "Directory holding worker-<i>.csv and worker-<i>.json")->required();
    add_outputs(c, a.out);
    c->callback([&] {
        action = [&] { emit(merge_worker_outputs(load_fragments(a.fragments_dir), a.worker_dir), a.out, "merge"); };
    });
}

// --- bench ---------------------------------------------------------------------------

struct BenchArgs {
    std::string scenario, n_list = "1,2,4", transport = "local", json, kernels = "auto";
    int steps = 0;
    std::uint64_t seed = 1;
};

void add_bench(CLI::App& app, BenchArgs& a, std::function<void()>& action) {
    auto* c = app.add_subcommand("bench", "Time runs over a list of worker counts");
    c->add_option("--scenario", a.scenario, "Scenario file")->required();
    c->add_option("--n-list", a.n_list, "Comma-separated worker counts")->capture_default_str();
    c->add_option("--transport", a.transport, "local or tcp (loopback, in-process)")
        ->capture_default_str()
        ->check(CLI::IsMember({"local", "tcp"}));
    c->add_option("--steps", a.steps, "Steps per run (default: the scenario's)")->check(CLI::Range(1, INT_MAX));
    c->add_option("--seed", a.seed, "Partitioner seed")->capture_default_str();
    c->add_option("--kernels", a.kernels, "auto, scalar or avx2")->capture_default_str()->check(
        CLI::IsMember({"auto", "scalar", "avx2"}));
    c->add_option("--json", a.json, "Write the report here");
    c->callback([&] {
        std::vector<int> ns;
        std::stringstream ss(a.n_list);
        for (std::string p; std::getline(ss, p, ',');) {
            int v = 0;
            try {
                v = std::stoi(p);
            } catch (const std::exception&) {
                throw CLI::ValidationError("--n-list", "not a number: " + p);
            }
            if (v < 1) throw CLI::ValidationError("--n-list", "worker counts must be positive");
            ns.push_back(v);
        }
        if (ns.empty()) throw CLI::ValidationError("--n-list", "empty");
        action = [&, ns] {
            const Scenario s = load_scenario(a.scenario);
            RunConfig config;
            config.steps = a.steps;
            config.dump_every = 0;
            config.kernels = pick_kernels(a.kernels);
            const auto rows = benchmark(s, ns, a.transport == "tcp" ? TransportKind::kTcp : TransportKind::kLocal,
                                        config, a.seed);
            std::cout << bench_table(rows);
            if (!a.json.empty()) write_text(a.json, bench_json(rows) + "\n");
            for (std::size_t i = 1; i < rows.size(); ++i)
                if (rows[i].n > rows[i - 1].n && rows[i].timing.wall > rows[i - 1].timing.wall)
                    spdlog::warn("total time rose from {:.3f}s at n={} to {:.3f}s at n={}", rows[i - 1].timing.wall,
                                 rows[i - 1].n, rows[i].timing.wall, rows[i].n);
        };
    });
}

// --- diff ---------------------------------------------------------------------------

struct DiffArgs {
    std::string a, b;
    std::optional<double> tol;
};

void add_diff(CLI::App& app, DiffArgs& d, std::function<int()>& action) {
    auto* c = app.add_subcommand("diff", "Compare two state dumps");
    c->add_option("--a", d.a, "First dump")->required();
    c->add_option("--b", d.b, "Second dump")->required();
    c->add_option("--tol", d.tol, "Relative tolerance instead of a byte comparison")->check(CLI::NonNegativeNumber);
    c->callback([&] {
        action = [&]() -> int {
            const auto r = compare_dumps(read_text(d.a), read_text(d.b), d.tol);
            if (r.equal) {
                std::cout << "equal\n";
                return kExitOk;
            }
            std::cout << r.report << "\n";
            return kExitDiffer;
        };
    });
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("otmd");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("OTMD_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Distributed macroscopic traffic simulation"};
    app.name("otmd");
    app.require_subcommand(1);
    app.fallthrough();
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON file of flag values, nested by subcommand");
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    std::function<int()> action;
    std::function<void()> simple;
    GenGridArgs gen;
    PartitionArgs part;
    RunArgs run;
    MergeArgs merge;
    BenchArgs bench;
    DiffArgs diff;
    add_gen_grid(app, gen, simple);
    add_partition(app, part, simple);
    add_run(app, run, action, argv[0]);
    add_merge(app, merge, simple);
    add_bench(app, bench, simple);
    add_diff(app, diff, action);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        if (simple) {
            simple();
            return kExitOk;
        }
        return action();
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return exit_code_for(e);
    } catch (...) {
        spdlog::error("unknown failure");
        return kExitInternal;
    }
}
