#include "fedcpc/federation/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <thread>

namespace fedcpc::federation {

const char* stage_name(Stage s) { return s == Stage::pretrain ? "pretrain" : "downstream"; }

Message Message::hello(std::string client_id, std::uint64_t n_samples, Stage stage) {
    Message m;
    m.type = MessageType::hello;
    m.client_id = std::move(client_id);
    m.n_samples = n_samples;
    m.stage = stage;
    return m;
}

Message Message::global_weights(std::uint64_t round, std::vector<std::uint8_t> payload) {
    Message m;
    m.type = MessageType::global_weights;
    m.round = round;
    m.payload = std::move(payload);
    return m;
}

Message Message::client_update(std::uint64_t round, std::string client_id, std::uint64_t n_samples,
                               std::vector<std::uint8_t> payload) {
    Message m;
    m.type = MessageType::client_update;
    m.round = round;
    m.client_id = std::move(client_id);
    m.n_samples = n_samples;
    m.payload = std::move(payload);
    return m;
}

Message Message::shutdown() { return Message{}; }

namespace {

void put_be(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_id(std::vector<std::uint8_t>& out, const std::string& id) {
    if (id.size() > 0xffff) throw ContractViolation("client id too long");
    put_be(out, id.size(), 2);
    out.insert(out.end(), id.begin(), id.end());
}

class BodyReader {
public:
    explicit BodyReader(std::span<const std::uint8_t> b) : b_(b) {}
    std::uint64_t be(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v = (v << 8) | b_[pos_++];
        return v;
    }
    std::string id() {
        const auto n = static_cast<std::size_t>(be(2));
        need(n);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::vector<std::uint8_t> rest() {
        std::vector<std::uint8_t> v(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.end());
        pos_ = b_.size();
        return v;
    }
    void finish() const {
        if (pos_ != b_.size()) throw ProtocolError("message body has trailing bytes");
    }

private:
    void need(std::size_t n) const {
        if (n > b_.size() - pos_) throw ProtocolError("message body is truncated");
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_frame(const Message& m) {
    std::vector<std::uint8_t> body;
    body.push_back(static_cast<std::uint8_t>(m.type));
    switch (m.type) {
    case MessageType::hello:
        put_id(body, m.client_id);
        put_be(body, m.n_samples, 8);
        body.push_back(static_cast<std::uint8_t>(m.stage));
        break;
    case MessageType::global_weights:
        put_be(body, m.round, 8);
        body.insert(body.end(), m.payload.begin(), m.payload.end());
        break;
    case MessageType::client_update:
        put_be(body, m.round, 8);
        put_id(body, m.client_id);
        put_be(body, m.n_samples, 8);
        body.insert(body.end(), m.payload.begin(), m.payload.end());
        break;
    case MessageType::shutdown:
        break;
    }
    if (body.size() > 0xffffffffu) throw ProtocolError("message too large for a frame");
    std::vector<std::uint8_t> frame;
    frame.reserve(body.size() + 4);
    put_be(frame, body.size(), 4);
    frame.insert(frame.end(), body.begin(), body.end());
    return frame;
}

Message decode_frame_body(std::span<const std::uint8_t> body) {
    if (body.empty()) throw ProtocolError("empty frame");
    BodyReader r(body.subspan(1));
    Message m;
    switch (body[0]) {
    case 1: {
        m.type = MessageType::hello;
        m.client_id = r.id();
        m.n_samples = r.be(8);
        const auto stage = r.be(1);
        if (stage > 1) throw ProtocolError("unknown stage code " + std::to_string(stage));
        m.stage = static_cast<Stage>(stage);
        r.finish();
        break;
    }
    case 2:
        m.type = MessageType::global_weights;
        m.round = r.be(8);
        m.payload = r.rest();
        break;
    case 3:
        m.type = MessageType::client_update;
        m.round = r.be(8);
        m.client_id = r.id();
        m.n_samples = r.be(8);
        m.payload = r.rest();
        break;
    case 4:
        m.type = MessageType::shutdown;
        r.finish();
        break;
    default:
        throw ProtocolError("unknown message type " + std::to_string(body[0]));
    }
    return m;
}

std::uint32_t check_frame_length(std::span<const std::uint8_t, 4> prefix, std::size_t max_frame) {
    const std::uint32_t n = (std::uint32_t{prefix[0]} << 24) | (std::uint32_t{prefix[1]} << 16) |
                            (std::uint32_t{prefix[2]} << 8) | std::uint32_t{prefix[3]};
    if (n == 0) throw ProtocolError("zero-length frame");
    if (n > max_frame)
        throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds the limit of " +
                            std::to_string(max_frame));
    return n;
}

std::optional<Message> Connection::receive(std::chrono::milliseconds timeout) {
    auto frame = receive_frame(timeout);
    if (!frame) return std::nullopt;
    return decode_frame_body(std::span(*frame).subspan(4));
}

// ---- in-process ----

namespace {

struct Queue {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::vector<std::uint8_t>> frames;
    bool closed = false;
};

class InProcessConnection : public Connection {
public:
    InProcessConnection(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out) : in_(std::move(in)), out_(std::move(out)) {}
    ~InProcessConnection() override { close(); }

    void send_frame(const std::vector<std::uint8_t>& frame) override {
        std::lock_guard lock(out_->mutex);
        if (out_->closed) throw ConnectionClosed("in-process peer is closed");
        out_->frames.push_back(frame);
        out_->cv.notify_all();
    }

    std::optional<std::vector<std::uint8_t>> receive_frame(std::chrono::milliseconds timeout) override {
        std::unique_lock lock(in_->mutex);
        if (!in_->cv.wait_for(lock, timeout, [&] { return !in_->frames.empty() || in_->closed; })) return std::nullopt;
        if (in_->frames.empty()) throw ConnectionClosed("in-process peer closed the connection");
        auto frame = std::move(in_->frames.front());
        in_->frames.pop_front();
        // Same limit check a socket reader applies to the length prefix.
        check_frame_length(std::span<const std::uint8_t, 4>(frame.data(), 4), max_frame);
        return frame;
    }

    void close() override {
        for (auto* q : {in_.get(), out_.get()}) {
            std::lock_guard lock(q->mutex);
            q->closed = true;
            q->cv.notify_all();
        }
    }

private:
    std::shared_ptr<Queue> in_, out_;
};

} // namespace

std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> make_inprocess_pair() {
    auto a = std::make_shared<Queue>(), b = std::make_shared<Queue>();
    return {std::make_unique<InProcessConnection>(a, b), std::make_unique<InProcessConnection>(b, a)};
}

// ---- TCP ----

namespace {

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return static_cast<int>(std::clamp<long long>(left, 0, 1 << 30));
}

class TcpConnection : public Connection {
public:
    explicit TcpConnection(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    ~TcpConnection() override { close(); }

    void send_frame(const std::vector<std::uint8_t>& frame) override {
        if (fd_ < 0) throw ConnectionClosed("socket is closed");
        std::size_t sent = 0;
        while (sent < frame.size()) {
            const auto n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw ConnectionClosed(std::string("send failed: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::optional<std::vector<std::uint8_t>> receive_frame(std::chrono::milliseconds timeout) override {
        if (fd_ < 0) throw ConnectionClosed("socket is closed");
        const auto deadline = Clock::now() + timeout;
        std::vector<std::uint8_t> frame(4);
        // A timeout is only reported before the first byte; once a frame has started it is read to the end.
        if (!read_exact(frame.data(), 4, deadline, true)) return std::nullopt;
        const auto n = check_frame_length(std::span<const std::uint8_t, 4>(frame.data(), 4), max_frame);
        frame.resize(4 + static_cast<std::size_t>(n));
        read_exact(frame.data() + 4, n, deadline, false);
        return frame;
    }

    void close() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    bool read_exact(std::uint8_t* dst, std::size_t n, Clock::time_point deadline, bool may_time_out) {
        std::size_t got = 0;
        while (got < n) {
            if (may_time_out && got == 0) {
                pollfd p{fd_, POLLIN, 0};
                const int rc = ::poll(&p, 1, remaining_ms(deadline));
                if (rc < 0 && errno == EINTR) continue;
                if (rc < 0) throw ConnectionClosed(std::string("poll failed: ") + std::strerror(errno));
                if (rc == 0) return false;
            }
            const auto r = ::recv(fd_, dst + got, n - got, 0);
            if (r < 0) {
                if (errno == EINTR) continue;
                throw ConnectionClosed(std::string("recv failed: ") + std::strerror(errno));
            }
            if (r == 0) throw ConnectionClosed("peer closed the connection");
            got += static_cast<std::size_t>(r);
        }
        return true;
    }

    int fd_;
};

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
        throw IoError("cannot resolve host '" + host + "'");
    sockaddr_in addr;
    std::memcpy(&addr, res->ai_addr, sizeof(addr));
    ::freeaddrinfo(res);
    addr.sin_port = htons(port);
    return addr;
}

} // namespace

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
    const auto addr = resolve(host, port);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 64) != 0) {
        const std::string why = std::strerror(errno);
        ::close(fd_);
        throw IoError("cannot listen on " + host + ":" + std::to_string(port) + ": " + why);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Connection> TcpListener::accept(std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    for (;;) {
        pollfd p{fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, remaining_ms(deadline));
        if (rc < 0 && errno == EINTR) continue;
        if (rc < 0) throw IoError(std::string("poll: ") + std::strerror(errno));
        if (rc == 0) return nullptr;
        const int fd = ::accept(fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR || errno == ECONNABORTED) continue;
            throw IoError(std::string("accept: ") + std::strerror(errno));
        }
        return std::make_unique<TcpConnection>(fd);
    }
}

std::unique_ptr<Connection> tcp_connect(const std::string& host, std::uint16_t port,
                                        std::chrono::milliseconds timeout) {
    const auto addr = resolve(host, port);
    const auto deadline = Clock::now() + timeout;
    std::string last = "timed out";
    do {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
        if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0)
            return std::make_unique<TcpConnection>(fd);
        last = std::strerror(errno);
        ::close(fd);
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    } while (Clock::now() < deadline);
    throw IoError("cannot connect to " + host + ":" + std::to_string(port) + ": " + last);
}

RecordingConnection::RecordingConnection(std::unique_ptr<Connection> inner, std::shared_ptr<FrameLog> log)
    : inner_(std::move(inner)), log_(std::move(log)) {
    max_frame = inner_->max_frame;
}

void RecordingConnection::send_frame(const std::vector<std::uint8_t>& frame) {
    inner_->send_frame(frame);
    std::lock_guard lock(log_->mutex);
    log_->records.push_back({true, frame});
}

std::optional<std::vector<std::uint8_t>> RecordingConnection::receive_frame(std::chrono::milliseconds timeout) {
    inner_->max_frame = max_frame;
    auto frame = inner_->receive_frame(timeout);
    if (frame) {
        std::lock_guard lock(log_->mutex);
        log_->records.push_back({false, *frame});
    }
    return frame;
}

} // namespace fedcpc::federation
