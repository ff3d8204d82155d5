// TCP transport: one stream per metagraph edge, frames as in comm.hpp.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "otmd/comm.hpp"
#include "otmd/errors.hpp"

namespace otmd {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint32_t kHelloMagic = 0x444d544f;  // "OTMD"

std::string errno_text() { return std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left < 0 ? 0 : static_cast<int>(left);
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

sockaddr_in resolve(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0 || !res)
        throw ProtocolError(fmt::format("cannot resolve host '{}': {}", host, ::gai_strerror(rc)));
    sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
    ::freeaddrinfo(res);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    return addr;
}

/// Blocking-with-deadline helpers for the hello exchange.
void write_all(int fd, const void* data, std::size_t n, Clock::time_point deadline, int peer) {
    auto* p = static_cast<const char*>(data);
    while (n > 0) {
        const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
        if (w > 0) {
            p += w;
            n -= static_cast<std::size_t>(w);
            continue;
        }
        if (w < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
            throw ProtocolError(fmt::format("send to worker {} failed: {}", peer, errno_text()));
        pollfd pfd{fd, POLLOUT, 0};
        if (::poll(&pfd, 1, remaining_ms(deadline)) == 0)
            throw ProtocolError(fmt::format("timed out sending to worker {}", peer));
    }
}

void read_all(int fd, void* data, std::size_t n, Clock::time_point deadline, const std::string& who) {
    auto* p = static_cast<char*>(data);
    while (n > 0) {
        const ssize_t r = ::recv(fd, p, n, 0);
        if (r > 0) {
            p += r;
            n -= static_cast<std::size_t>(r);
            continue;
        }
        if (r == 0) throw ProtocolError(fmt::format("{} closed the connection during the hello", who));
        if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
            throw ProtocolError(fmt::format("receive from {} failed: {}", who, errno_text()));
        pollfd pfd{fd, POLLIN, 0};
        if (::poll(&pfd, 1, remaining_ms(deadline)) == 0)
            throw ProtocolError(fmt::format("timed out waiting for the hello of {}", who));
    }
}

void send_hello(int fd, int self, Clock::time_point deadline, int peer) {
    std::vector<std::byte> bytes;
    for (std::uint32_t v : {kHelloMagic, static_cast<std::uint32_t>(self)})
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
    write_all(fd, bytes.data(), bytes.size(), deadline, peer);
}

int read_hello(int fd, Clock::time_point deadline, const std::string& who) {
    unsigned char b[8];
    read_all(fd, b, sizeof b, deadline, who);
    auto u32 = [&](int off) {
        return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
               static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
    };
    if (u32(0) != kHelloMagic) throw ProtocolError(fmt::format("{} is not speaking this protocol", who));
    return static_cast<int>(u32(4));
}

class TcpTransport final : public Transport {
public:
    TcpTransport(int self, std::map<int, int> sockets, std::chrono::milliseconds timeout, TcpFault fault,
                 std::uint64_t fault_step)
        : self_(self), sockets_(std::move(sockets)), timeout_(timeout), fault_(fault), fault_step_(fault_step) {}

    ~TcpTransport() override {
        for (auto [peer, fd] : sockets_) ::close(fd);
    }

    int index() const override { return self_; }

    void abort(const std::string&) override {
        // Closing the streams makes every neighbour fail on its next read.
        for (auto [peer, fd] : sockets_) ::shutdown(fd, SHUT_RDWR);
    }

    std::vector<Frame> exchange(const std::vector<Frame>& outgoing) override {
        const auto deadline = Clock::now() + timeout_;
        struct Pending {
            int peer;
            int fd;
            std::vector<std::byte> out;
            std::size_t written = 0;
            bool have = false;
            Frame in;
        };
        std::vector<Pending> work;
        for (const Frame& f : outgoing) {
            const int peer = static_cast<int>(f.header.receiver);
            auto it = sockets_.find(peer);
            if (it == sockets_.end()) throw ProtocolError(fmt::format("worker {} has no link to worker {}", self_, peer));
            Pending p{peer, it->second, encode_frame(f), 0, false, {}};
            if (fault_ == TcpFault::kTruncateFrame && f.header.step == fault_step_) {
                // Injected fault: half a frame, then the stream closes.
                p.out.resize(p.out.size() / 2);
                write_all(p.fd, p.out.data(), p.out.size(), deadline, peer);
                abort("");
                throw InjectedFault(fmt::format("worker {}: injected fault, truncated the frame to worker {} at step {}",
                                                self_, peer, f.header.step));
            }
            work.push_back(std::move(p));
        }
        for (auto& p : work) p.have = take_frame(p.peer, p.in);

        while (true) {
            std::vector<pollfd> fds;
            std::vector<Pending*> owners;
            for (auto& p : work) {
                short events = 0;
                if (p.written < p.out.size()) events |= POLLOUT;
                if (!p.have) events |= POLLIN;
                if (events) {
                    fds.push_back({p.fd, events, 0});
                    owners.push_back(&p);
                }
            }
            if (fds.empty()) break;
            const int ready = ::poll(fds.data(), fds.size(), remaining_ms(deadline));
            if (ready < 0 && errno != EINTR) throw ProtocolError(fmt::format("poll failed: {}", errno_text()));
            if (ready == 0) {
                for (auto* p : owners) {
                    if (p->have) continue;
                    if (!inbox_[p->peer].empty())
                        throw ProtocolError(fmt::format("worker {}: truncated frame from worker {} ({} bytes, then silence)",
                                                        self_, p->peer, inbox_[p->peer].size()));
                    throw ProtocolError(fmt::format("worker {}: timed out waiting for worker {}", self_, p->peer));
                }
                throw ProtocolError(fmt::format("worker {}: timed out sending", self_));
            }
            for (std::size_t k = 0; k < fds.size(); ++k) {
                Pending& p = *owners[k];
                if ((fds[k].revents & POLLOUT) && p.written < p.out.size()) {
                    const ssize_t w = ::send(p.fd, p.out.data() + p.written, p.out.size() - p.written, MSG_NOSIGNAL);
                    if (w > 0) {
                        p.written += static_cast<std::size_t>(w);
                    } else if (w < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
                        throw ProtocolError(fmt::format("worker {}: send to worker {} failed: {}", self_, p.peer, errno_text()));
                    }
                }
                if ((fds[k].revents & (POLLIN | POLLHUP | POLLERR)) && !p.have) {
                    receive(p.peer, p.fd);
                    p.have = take_frame(p.peer, p.in);
                }
            }
        }
        std::vector<Frame> incoming;
        for (auto& p : work) incoming.push_back(std::move(p.in));
        return incoming;
    }

private:
    void receive(int peer, int fd) {
        std::byte buf[65536];
        const ssize_t r = ::recv(fd, buf, sizeof buf, 0);
        if (r > 0) {
            inbox_[peer].insert(inbox_[peer].end(), buf, buf + r);
            return;
        }
        if (r < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) return;
        if (!inbox_[peer].empty())
            throw ProtocolError(fmt::format("worker {}: truncated frame from worker {} ({} bytes before the stream ended)",
                                            self_, peer, inbox_[peer].size()));
        throw ProtocolError(fmt::format("worker {}: worker {} closed the connection", self_, peer));
    }

    bool take_frame(int peer, Frame& out) {
        auto& buf = inbox_[peer];
        const std::size_t used = decode_frame(buf, out);
        if (used == 0) return false;
        buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(used));
        return true;
    }

    int self_;
    std::map<int, int> sockets_;
    std::map<int, std::vector<std::byte>> inbox_;
    std::chrono::milliseconds timeout_;
    TcpFault fault_;
    std::uint64_t fault_step_;
};

}  // namespace

TcpListener::TcpListener(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ProtocolError(fmt::format("socket failed: {}", errno_text()));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = resolve(host, port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        const std::string why = errno_text();
        ::close(fd_);
        throw ProtocolError(fmt::format("cannot listen on {}:{}: {}", host, port, why));
    }
    if (::listen(fd_, 128) < 0) {
        const std::string why = errno_text();
        ::close(fd_);
        throw ProtocolError(fmt::format("listen on {}:{} failed: {}", host, port, why));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    set_nonblocking(fd_);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Transport> connect_tcp(TcpListener& listener, const std::vector<Endpoint>& roster, int self,
                                       const std::vector<int>& neighbors, std::chrono::milliseconds timeout,
                                       TcpFault fault, std::uint64_t fault_step) {
    const auto deadline = Clock::now() + timeout;
    std::map<int, int> sockets;
    // Sockets opened so far are closed by the handler below.
    auto fail = [](const std::string& why) { throw ProtocolError(why); };
    auto endpoint = [&](int index) -> const Endpoint& {
        if (index < 0 || index >= static_cast<int>(roster.size()) || roster[index].index != index)
            throw ProtocolError(fmt::format("worker {} is not in the roster", index));
        return roster[index];
    };

    try {
        // Connect to lower-indexed neighbours.
        for (int peer : neighbors) {
            if (peer >= self) continue;
            const Endpoint& ep = endpoint(peer);
            const sockaddr_in addr = resolve(ep.host, ep.port);
            int fd = -1;
            while (true) {
                fd = ::socket(AF_INET, SOCK_STREAM, 0);
                if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) break;
                ::close(fd);
                fd = -1;
                if (Clock::now() >= deadline)
                    fail(fmt::format("worker {}: worker {} unreachable at {}:{}", self, peer, ep.host, ep.port));
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
            }
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            set_nonblocking(fd);
            sockets[peer] = fd;
            send_hello(fd, self, deadline, peer);
            const int who = read_hello(fd, deadline, fmt::format("worker {}", peer));
            if (who != peer) fail(fmt::format("worker {}: {}:{} answered as worker {}, expected {}", self, ep.host, ep.port, who, peer));
        }

        // Accept higher-indexed neighbours.
        std::size_t expected = 0;
        for (int peer : neighbors) expected += peer > self ? 1 : 0;
        std::size_t accepted = 0;
        while (accepted < expected) {
            pollfd pfd{listener.fd(), POLLIN, 0};
            if (::poll(&pfd, 1, remaining_ms(deadline)) == 0) {
                std::string missing;
                for (int peer : neighbors)
                    if (peer > self && !sockets.contains(peer)) missing += fmt::format(" {}", peer);
                fail(fmt::format("worker {}: timed out waiting for workers{} to connect", self, missing));
            }
            const int fd = ::accept(listener.fd(), nullptr, nullptr);
            if (fd < 0) continue;
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            set_nonblocking(fd);
            int who = -1;
            try {
                who = read_hello(fd, deadline, "a connecting worker");
            } catch (...) {
                ::close(fd);
                throw;
            }
            if (sockets.contains(who)) {
                ::close(fd);
                fail(fmt::format("worker {}: duplicate worker index {}", self, who));
            }
            if (who <= self || std::find(neighbors.begin(), neighbors.end(), who) == neighbors.end()) {
                ::close(fd);
                fail(fmt::format("worker {}: unexpected connection from worker {}", self, who));
            }
            sockets[who] = fd;
            send_hello(fd, self, deadline, who);
            ++accepted;
        }
    } catch (const ProtocolError&) {
        for (auto [peer, fd] : sockets) ::close(fd);
        throw;
    }
    spdlog::debug("worker {}: connected to {} neighbours", self, sockets.size());
    return std::make_unique<TcpTransport>(self, std::move(sockets), timeout, fault, fault_step);
}

}  // namespace otmd
