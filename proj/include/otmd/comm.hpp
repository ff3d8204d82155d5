#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "otmd/engine.hpp"
#include "otmd/errors.hpp"
#include "otmd/partition.hpp"

namespace otmd {

// --- frames ---------------------------------------------------------------------

/// Little-endian on the wire: step u64, sender u32, receiver u32, length u32,
/// then `length` 8-byte words (IEEE-754 doubles for data frames).
struct FrameHeader {
    std::uint64_t step = 0;
    std::uint32_t sender = 0;
    std::uint32_t receiver = 0;
    std::uint32_t length = 0;
    friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

inline constexpr std::size_t kFrameHeaderBytes = 20;
/// Step value that marks a handshake frame carrying decoder maps.
inline constexpr std::uint64_t kHandshakeStep = ~std::uint64_t{0};
/// Upper bound on words per frame; anything larger is a corrupt header.
inline constexpr std::uint32_t kMaxFrameWords = 1u << 27;

struct Frame {
    FrameHeader header;
    std::vector<std::uint64_t> words;  // raw 8-byte payload words
};

std::vector<std::byte> encode_frame(const Frame& frame);
/// Parses one frame from the front of `bytes`; returns bytes consumed, or 0
/// if the buffer does not yet hold a complete frame.
std::size_t decode_frame(std::span<const std::byte> bytes, Frame& out);

std::uint64_t double_bits(double v);
double bits_double(std::uint64_t w);

// --- transports ----------------------------------------------------------------

/// Moves one frame to, and one frame from, each neighbour per call.
/// Delivery is reliable and ordered per neighbour.
class Transport {
public:
    virtual ~Transport() = default;
    virtual int index() const = 0;
    /// Sends every outgoing frame (one per neighbour, addressed by
    /// header.receiver) and returns one frame from each of those neighbours,
    /// in the same order. Blocks up to the transport's timeout.
    virtual std::vector<Frame> exchange(const std::vector<Frame>& outgoing) = 0;
    /// Makes every blocked or future exchange of every worker fail fast.
    virtual void abort(const std::string& reason) = 0;
};

/// In-process mailboxes shared by the workers of one run.
class LocalHub {
public:
    LocalHub(int workers, std::chrono::milliseconds timeout);
    /// Transport for worker `index`; a second claim of one index is an error.
    std::unique_ptr<Transport> connect(int index);
    void abort(const std::string& reason);

private:
    friend class LocalTransport;
    std::mutex mutex_;
    std::condition_variable changed_;
    std::chrono::milliseconds timeout_;
    // mailbox_[receiver][sender]
    std::vector<std::map<int, std::deque<Frame>>> mailbox_;
    std::vector<bool> claimed_;
    std::string abort_reason_;
};

struct Endpoint {
    int index = 0;
    std::string host;
    int port = 0;
};

/// `worker_index host port` lines; '#' starts a comment.
std::vector<Endpoint> parse_roster(std::string_view text);
std::vector<Endpoint> load_roster(const std::string& path);

/// Listening socket opened before any worker connects; port 0 picks a free port.
class TcpListener {
public:
    TcpListener(const std::string& host, int port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    int port() const { return port_; }
    int fd() const { return fd_; }

private:
    int fd_ = -1;
    int port_ = 0;
};

enum class TcpFault { kNone, kTruncateFrame };

/// Thrown by the worker that injected a fault, so callers can report what its
/// peers detected instead.
class InjectedFault : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

/// Length-framed TCP links to each neighbour. The higher index connects to the
/// lower; both sides introduce themselves with a hello before any frame.
std::unique_ptr<Transport> connect_tcp(TcpListener& listener, const std::vector<Endpoint>& roster, int self,
                                       const std::vector<int>& neighbors, std::chrono::milliseconds timeout,
                                       TcpFault fault = TcpFault::kNone, std::uint64_t fault_step = 0);

// --- channels ----------------------------------------------------------------------

struct NeighborChannel {
    int self = 0;
    int peer = 0;
    DecoderMap send;  // self -> peer
    DecoderMap recv;  // peer -> self
    std::vector<std::size_t> send_entries;  // engine entry per send slot
    std::vector<std::size_t> recv_entries;  // engine entry per receive slot
};

/// Exchanges decoder maps with every metagraph neighbour and checks that both
/// sides derived identical layouts; any difference is a ProtocolError naming
/// the first differing slot. `maps[k]` is (self->j, j->self) for the k-th
/// neighbour j in ascending order.
std::vector<NeighborChannel> establish(Transport& transport, const Metagraph& metagraph, int self,
                                       const std::vector<std::pair<DecoderMap, DecoderMap>>& maps,
                                       const Engine* engine = nullptr);

struct BoundaryMessage {
    std::uint64_t step = 0;
    std::vector<double> values;
};

struct SlotValue {
    Slot slot;
    double vehicles = 0;
    friend bool operator==(const SlotValue&, const SlotValue&) = default;
};

/// Places each packet at its slot; slots without packets hold 0.
BoundaryMessage encode(const DecoderMap& map, std::span<const SlotValue> packets, std::uint64_t step);
/// Inverse of encode; zero slots produce no packet.
std::vector<SlotValue> decode(const DecoderMap& map, const BoundaryMessage& message);

/// Reads the engine's flow entries for the channel's send slots.
BoundaryMessage encode(const NeighborChannel& channel, const Engine& engine, std::uint64_t step);
/// Writes a received message into the engine's flow entries.
void decode(const NeighborChannel& channel, const BoundaryMessage& message, Engine& engine);

/// One message out and one in per channel, all tagged with `step`. Checks
/// sender, receiver, step and length of everything received.
std::vector<BoundaryMessage> exchange(Transport& transport, const std::vector<NeighborChannel>& channels,
                                      const std::vector<BoundaryMessage>& outgoing, std::uint64_t step);

}  // namespace otmd
