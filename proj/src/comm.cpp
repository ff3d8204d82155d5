#include "otmd/comm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "otmd/errors.hpp"

namespace otmd {

// --- frames -------------------------------------------------------------------------

namespace {

void put_le(std::vector<std::byte>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::byte* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(std::to_integer<unsigned>(p[i])) << (8 * i);
    return v;
}

}  // namespace

std::uint64_t double_bits(double v) {
    std::uint64_t w;
    std::memcpy(&w, &v, sizeof w);
    return w;
}

double bits_double(std::uint64_t w) {
    double v;
    std::memcpy(&v, &w, sizeof v);
    return v;
}

std::vector<std::byte> encode_frame(const Frame& frame) {
    std::vector<std::byte> out;
    out.reserve(kFrameHeaderBytes + 8 * frame.words.size());
    put_le(out, frame.header.step, 8);
    put_le(out, frame.header.sender, 4);
    put_le(out, frame.header.receiver, 4);
    put_le(out, frame.words.size(), 4);
    for (std::uint64_t w : frame.words) put_le(out, w, 8);
    return out;
}

std::size_t decode_frame(std::span<const std::byte> bytes, Frame& out) {
    if (bytes.size() < kFrameHeaderBytes) return 0;
    FrameHeader h;
    h.step = get_le(bytes.data(), 8);
    h.sender = static_cast<std::uint32_t>(get_le(bytes.data() + 8, 4));
    h.receiver = static_cast<std::uint32_t>(get_le(bytes.data() + 12, 4));
    h.length = static_cast<std::uint32_t>(get_le(bytes.data() + 16, 4));
    if (h.length > kMaxFrameWords)
        throw ProtocolError(fmt::format("frame from worker {} declares {} words, more than the limit {}", h.sender,
                                        h.length, kMaxFrameWords));
    const std::size_t total = kFrameHeaderBytes + 8 * static_cast<std::size_t>(h.length);
    if (bytes.size() < total) return 0;
    out.header = h;
    out.words.resize(h.length);
    for (std::uint32_t i = 0; i < h.length; ++i) out.words[i] = get_le(bytes.data() + kFrameHeaderBytes + 8 * i, 8);
    return total;
}

// --- in-process transport ---------------------------------------------------------

class LocalTransport final : public Transport {
public:
    LocalTransport(LocalHub& hub, int index) : hub_(hub), index_(index) {}
    int index() const override { return index_; }

    std::vector<Frame> exchange(const std::vector<Frame>& outgoing) override {
        std::unique_lock lock(hub_.mutex_);
        if (!hub_.abort_reason_.empty()) throw ProtocolError(hub_.abort_reason_);
        for (const Frame& f : outgoing) {
            if (f.header.receiver >= hub_.mailbox_.size())
                throw ProtocolError(fmt::format("worker {} addressed unknown worker {}", index_, f.header.receiver));
            hub_.mailbox_[f.header.receiver][index_].push_back(f);
        }
        hub_.changed_.notify_all();
        auto& inbox = hub_.mailbox_[index_];
        const auto deadline = std::chrono::steady_clock::now() + hub_.timeout_;
        std::vector<Frame> incoming;
        for (const Frame& f : outgoing) {
            const int peer = static_cast<int>(f.header.receiver);
            auto ready = [&] { return !hub_.abort_reason_.empty() || !inbox[peer].empty(); };
            if (!hub_.changed_.wait_until(lock, deadline, ready))
                throw ProtocolError(fmt::format("worker {}: timed out waiting for worker {}", index_, peer));
            if (!hub_.abort_reason_.empty()) throw ProtocolError(hub_.abort_reason_);
            incoming.push_back(std::move(inbox[peer].front()));
            inbox[peer].pop_front();
        }
        return incoming;
    }

    void abort(const std::string& reason) override { hub_.abort(reason); }

private:
    LocalHub& hub_;
    int index_;
};

LocalHub::LocalHub(int workers, std::chrono::milliseconds timeout)
    : timeout_(timeout), mailbox_(workers), claimed_(workers, false) {}

std::unique_ptr<Transport> LocalHub::connect(int index) {
    std::lock_guard lock(mutex_);
    if (index < 0 || index >= static_cast<int>(claimed_.size()))
        throw ProtocolError(fmt::format("worker index {} outside [0, {})", index, claimed_.size()));
    if (claimed_[index]) throw ProtocolError(fmt::format("duplicate worker index {}", index));
    claimed_[index] = true;
    return std::make_unique<LocalTransport>(*this, index);
}

void LocalHub::abort(const std::string& reason) {
    std::lock_guard lock(mutex_);
    if (abort_reason_.empty()) abort_reason_ = reason.empty() ? "run aborted" : reason;
    changed_.notify_all();
}

// --- roster -------------------------------------------------------------------------

std::vector<Endpoint> parse_roster(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<Endpoint> out;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream fields(line);
        Endpoint e;
        if (!(fields >> e.index)) continue;
        if (!(fields >> e.host >> e.port) || e.port < 0 || e.port > 65535)
            throw ScenarioError(fmt::format("roster line {}: expected 'worker_index host port'", line_no));
        out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const Endpoint& a, const Endpoint& b) { return a.index < b.index; });
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (i > 0 && out[i].index == out[i - 1].index)
            throw ProtocolError(fmt::format("roster: duplicate worker index {}", out[i].index));
        if (out[i].index != static_cast<int>(i))
            throw ScenarioError(fmt::format("roster: worker index {} is missing", i));
    }
    return out;
}

std::vector<Endpoint> load_roster(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScenarioError(fmt::format("cannot read roster '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_roster(buf.str());
}

// --- channels -----------------------------------------------------------------------

namespace {

void put_map(std::vector<std::uint64_t>& words, const DecoderMap& map) {
    for (const Slot& s : map.slots) {
        words.push_back(static_cast<std::uint64_t>(s.connection.value));
        words.push_back(static_cast<std::uint64_t>(s.lane_group.value));
        words.push_back(static_cast<std::uint64_t>(s.vehicle_type.value));
        words.push_back(static_cast<std::uint64_t>(s.next.value));
    }
}

std::vector<Slot> get_map(std::span<const std::uint64_t> words) {
    std::vector<Slot> slots;
    for (std::size_t i = 0; i + 3 < words.size(); i += 4) {
        auto v = [&](std::size_t k) { return static_cast<std::int64_t>(words[i + k]); };
        slots.push_back({RoadConnectionId{v(0)}, LaneGroupId{v(1)}, VehicleTypeId{v(2)}, LinkId{v(3)}});
    }
    return slots;
}

std::string slot_text(const Slot& s) {
    return fmt::format("(connection {}, lane group {}, vehicle type {}, next link {})", s.connection.value,
                       s.lane_group.value, s.vehicle_type.value, s.next.value);
}

void compare_maps(const std::vector<Slot>& mine, const std::vector<Slot>& theirs, int sender, int receiver, int self,
                  int peer) {
    const std::size_t n = std::min(mine.size(), theirs.size());
    for (std::size_t k = 0; k < n; ++k) {
        if (mine[k] != theirs[k])
            throw ProtocolError(fmt::format(
                "decoder map mismatch for messages {} -> {}: slot {} is {} at worker {} but {} at worker {}", sender,
                receiver, k, slot_text(mine[k]), self, slot_text(theirs[k]), peer));
    }
    if (mine.size() != theirs.size())
        throw ProtocolError(fmt::format(
            "decoder map mismatch for messages {} -> {}: length {} at worker {} but {} at worker {}{}", sender, receiver,
            mine.size(), self, theirs.size(), peer,
            n < std::max(mine.size(), theirs.size())
                ? fmt::format(", first unmatched slot {} is {}", n,
                              slot_text(mine.size() > n ? mine[n] : theirs[n]))
                : std::string{}));
}

std::vector<std::size_t> resolve(const DecoderMap& map, const Engine& engine) {
    std::vector<std::size_t> out;
    for (const Slot& s : map.slots) {
        const std::size_t e = engine.find_entry(s);
        if (e == Engine::npos) throw ProtocolError(fmt::format("decoder slot {} names no flow here", slot_text(s)));
        out.push_back(e);
    }
    return out;
}

}  // namespace

std::vector<NeighborChannel> establish(Transport& transport, const Metagraph& metagraph, int self,
                                       const std::vector<std::pair<DecoderMap, DecoderMap>>& maps,
                                       const Engine* engine) {
    const auto neighbors = metagraph.neighbors(self);
    if (neighbors.size() != maps.size())
        throw InternalError(fmt::format("worker {}: {} neighbours but {} decoder map pairs", self, neighbors.size(),
                                        maps.size()));
    std::vector<Frame> hello;
    for (std::size_t k = 0; k < neighbors.size(); ++k) {
        const auto& [send, recv] = maps[k];
        Frame f;
        f.header = {kHandshakeStep, static_cast<std::uint32_t>(self), static_cast<std::uint32_t>(neighbors[k]), 0};
        f.words = {send.length(), recv.length()};
        put_map(f.words, send);
        put_map(f.words, recv);
        f.header.length = static_cast<std::uint32_t>(f.words.size());
        hello.push_back(std::move(f));
    }
    const auto replies = transport.exchange(hello);

    std::vector<NeighborChannel> channels;
    for (std::size_t k = 0; k < neighbors.size(); ++k) {
        const int peer = neighbors[k];
        const Frame& r = replies[k];
        if (r.header.step != kHandshakeStep)
            throw ProtocolError(fmt::format("worker {}: expected a handshake from worker {}, got step {}", self, peer,
                                            r.header.step));
        if (r.header.sender != static_cast<std::uint32_t>(peer) || r.header.receiver != static_cast<std::uint32_t>(self))
            throw ProtocolError(fmt::format("worker {}: handshake addressed {} -> {}, expected {} -> {}", self,
                                            r.header.sender, r.header.receiver, peer, self));
        if (r.words.size() < 2) throw ProtocolError(fmt::format("worker {}: short handshake from worker {}", self, peer));
        const std::size_t their_send = r.words[0], their_recv = r.words[1];
        if (r.words.size() != 2 + 4 * (their_send + their_recv))
            throw ProtocolError(fmt::format("worker {}: malformed handshake from worker {}", self, peer));
        const std::span<const std::uint64_t> words(r.words);
        const auto peer_send = get_map(words.subspan(2, 4 * their_send));
        const auto peer_recv = get_map(words.subspan(2 + 4 * their_send));

        const auto& [send, recv] = maps[k];
        compare_maps(send.slots, peer_recv, self, peer, self, peer);
        compare_maps(recv.slots, peer_send, peer, self, self, peer);

        NeighborChannel ch{self, peer, send, recv, {}, {}};
        if (engine) {
            ch.send_entries = resolve(send, *engine);
            ch.recv_entries = resolve(recv, *engine);
        }
        channels.push_back(std::move(ch));
    }
    return channels;
}

BoundaryMessage encode(const DecoderMap& map, std::span<const SlotValue> packets, std::uint64_t step) {
    BoundaryMessage m{step, std::vector<double>(map.length(), 0.0)};
    for (const auto& p : packets) {
        auto it = std::lower_bound(map.slots.begin(), map.slots.end(), p.slot);
        if (it == map.slots.end() || *it != p.slot)
            throw ProtocolError(fmt::format("packet {} has no slot in the {} -> {} decoder map", slot_text(p.slot),
                                            map.sender, map.receiver));
        m.values[it - map.slots.begin()] += p.vehicles;
    }
    return m;
}

std::vector<SlotValue> decode(const DecoderMap& map, const BoundaryMessage& message) {
    if (message.values.size() != map.length())
        throw ProtocolError(fmt::format("message {} -> {} has {} values, decoder map expects {}", map.sender,
                                        map.receiver, message.values.size(), map.length()));
    std::vector<SlotValue> out;
    for (std::size_t k = 0; k < map.length(); ++k)
        if (message.values[k] != 0.0) out.push_back({map.slots[k], message.values[k]});
    return out;
}

BoundaryMessage encode(const NeighborChannel& channel, const Engine& engine, std::uint64_t step) {
    BoundaryMessage m{step, std::vector<double>(channel.send_entries.size())};
    for (std::size_t k = 0; k < channel.send_entries.size(); ++k) m.values[k] = engine.entry_value(channel.send_entries[k]);
    return m;
}

void decode(const NeighborChannel& channel, const BoundaryMessage& message, Engine& engine) {
    if (message.values.size() != channel.recv_entries.size())
        throw ProtocolError(fmt::format("message {} -> {} has {} values, decoder map expects {}", channel.peer,
                                        channel.self, message.values.size(), channel.recv_entries.size()));
    for (std::size_t k = 0; k < channel.recv_entries.size(); ++k)
        engine.set_entry_value(channel.recv_entries[k], message.values[k]);
}

std::vector<BoundaryMessage> exchange(Transport& transport, const std::vector<NeighborChannel>& channels,
                                      const std::vector<BoundaryMessage>& outgoing, std::uint64_t step) {
    if (outgoing.size() != channels.size())
        throw InternalError(fmt::format("{} messages for {} channels", outgoing.size(), channels.size()));
    std::vector<Frame> frames;
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const auto& ch = channels[k];
        if (outgoing[k].values.size() != ch.send.length())
            throw ProtocolError(fmt::format("message {} -> {} has {} values, decoder map fixes {}", ch.self, ch.peer,
                                            outgoing[k].values.size(), ch.send.length()));
        Frame f;
        f.header = {outgoing[k].step, static_cast<std::uint32_t>(ch.self), static_cast<std::uint32_t>(ch.peer),
                    static_cast<std::uint32_t>(outgoing[k].values.size())};
        f.words.reserve(outgoing[k].values.size());
        for (double v : outgoing[k].values) f.words.push_back(double_bits(v));
        frames.push_back(std::move(f));
    }
    const auto received = transport.exchange(frames);

    std::vector<BoundaryMessage> out;
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const auto& ch = channels[k];
        const Frame& f = received[k];
        if (f.header.sender != static_cast<std::uint32_t>(ch.peer) || f.header.receiver != static_cast<std::uint32_t>(ch.self))
            throw ProtocolError(fmt::format("worker {}: frame addressed {} -> {} on the channel from worker {}", ch.self,
                                            f.header.sender, f.header.receiver, ch.peer));
        if (f.header.step != step)
            throw ProtocolError(fmt::format("worker {}: step mismatch, worker {} sent step {} while at step {}", ch.self,
                                            ch.peer, f.header.step, step));
        if (f.words.size() != ch.recv.length())
            throw ProtocolError(fmt::format("worker {}: message from worker {} has {} values, decoder map fixes {}",
                                            ch.self, ch.peer, f.words.size(), ch.recv.length()));
        BoundaryMessage m{step, {}};
        m.values.reserve(f.words.size());
        for (std::size_t i = 0; i < f.words.size(); ++i) {
            const double v = bits_double(f.words[i]);
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ProtocolError(fmt::format("worker {}: slot {} from worker {} holds {}", ch.self, i, ch.peer, v));
            m.values.push_back(v);
        }
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace otmd
