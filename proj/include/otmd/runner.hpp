#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "otmd/comm.hpp"
#include "otmd/engine.hpp"
#include "otmd/partition.hpp"

namespace otmd {

enum class TransportKind { kLocal, kTcp };

/// Faults injected on purpose to exercise protocol error handling.
enum class FaultKind { kNone, kCorruptDecoder, kStepSkew, kTruncateFrame };

struct FaultPlan {
    FaultKind kind = FaultKind::kNone;
    int worker = 1;        // misbehaving worker
    std::uint64_t step = 2;  // step at which step/frame faults fire
};

struct RunConfig {
    int steps = 0;        // 0: take the scenario's
    int dump_every = 10;  // plus the final step; 0 disables dumps
    std::chrono::milliseconds timeout{30000};
    const kernels::KernelSet* kernels = nullptr;
    FaultPlan fault;
};

struct WorkerTiming {
    int index = 0;
    double setup = 0;      // engine build, decoder maps, handshake
    double decoder = 0;    // decoder map construction and exchange
    double comm = 0;       // encode + exchange + decode, summed over steps
    double comm_min = 0;   // per step
    double comm_mean = 0;
    double comm_max = 0;
    double compute = 0;      // phase a + phase b wall time, summed over steps
    double compute_cpu = 0;  // same, thread CPU time
    double total = 0;
};

struct TimingReport {
    double partition = 0;  // partitioning and fragment construction
    double metagraph = 0;  // metagraph construction
    double wall = 0;       // whole run, including the above
    std::vector<WorkerTiming> workers;

    double max_compute() const;
    double max_compute_cpu() const;
    double max_comm() const;
    double max_setup() const;
};

struct ChannelStats {
    int self = 0;
    int peer = 0;
    std::size_t send_map = 0;  // decoder map lengths
    std::size_t recv_map = 0;
    // Observed message lengths over every step.
    std::size_t send_min = 0, send_max = 0;
    std::size_t recv_min = 0, recv_max = 0;
    std::size_t messages = 0;  // sent plus received
};

struct RunResult {
    std::vector<DumpRow> dumps;        // merged, ordered by (step, link, lane group, cell, commodity)
    std::vector<StepMetrics> metrics;  // one per step
    std::vector<ChannelStats> channels;
    TimingReport timing;
};

/// Output of one worker.
struct WorkerResult {
    int index = 0;
    std::vector<DumpRow> dumps;  // owned links only
    std::vector<StepMetrics> metrics;
    std::vector<ChannelStats> channels;
    WorkerTiming timing;
};

RunResult run_sequential(const Scenario& scenario, const RunConfig& config);

/// Partitions (or uses `partition`), builds fragments and runs one worker per
/// subset in this process, over in-process channels or loopback TCP.
RunResult run_distributed(const Scenario& scenario, int n, TransportKind transport, const RunConfig& config,
                          std::uint64_t seed = 1, const std::optional<NodePartition>& partition = std::nullopt);

/// Runs prepared fragments, one thread each.
RunResult run_fragments(const std::vector<Scenario>& fragments, TransportKind transport, const RunConfig& config);

/// The per-worker loop: phase a, encode, exchange, decode, phase b.
WorkerResult run_worker(const Scenario& fragment, const Metagraph& metagraph, Transport& transport,
                        const RunConfig& config);

/// Combines per-worker dumps, taking every link from the one worker that owns
/// it; a link claimed twice or never is an InternalError.
std::vector<DumpRow> merge_states(const std::vector<std::vector<DumpRow>>& per_worker, const Scenario& scenario);
std::vector<StepMetrics> merge_metrics(const std::vector<std::vector<StepMetrics>>& per_worker);
/// Links owned by each fragment must cover `links` exactly once.
void check_ownership(const std::vector<std::vector<LinkId>>& owned, const std::vector<LinkId>& links);

std::string metrics_json(const std::vector<StepMetrics>& metrics);
std::string timing_json(const TimingReport& timing);

/// Everything a worker process reports except its dump rows.
std::string worker_result_json(const WorkerResult& result);
WorkerResult parse_worker_result(std::string_view text);

/// Inverse of format_dump; a wrong header or malformed row is a ScenarioError.
std::vector<DumpRow> parse_dump(std::string_view csv);

struct DumpDiff {
    bool equal = true;
    std::string report;  // first divergence, empty when equal
};

/// Byte comparison, or with `tolerance` a relative comparison of values with
/// identical row keys. Names the first differing (step, link, lane group,
/// cell, commodity).
DumpDiff compare_dumps(std::string_view a, std::string_view b, std::optional<double> tolerance = std::nullopt);

struct BenchRow {
    int n = 1;
    TimingReport timing;
    double speedup = 1;     // T(1) / T(n), on total wall time
    double rate = 0;        // simulated steps per second
    double ideal_rate = 0;  // n * serial rate
};

std::vector<BenchRow> benchmark(const Scenario& scenario, const std::vector<int>& ns, TransportKind transport,
                                const RunConfig& config, std::uint64_t seed = 1);
std::string bench_json(const std::vector<BenchRow>& rows);
std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace otmd
