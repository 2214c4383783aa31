#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedcpc/core/error.hpp"

namespace fedcpc::federation {

enum class Stage : std::uint8_t { pretrain = 0, downstream = 1 };
const char* stage_name(Stage s);

enum class MessageType : std::uint8_t { hello = 1, global_weights = 2, client_update = 3, shutdown = 4 };

// Body layouts (integers big-endian, payload = weights format verbatim):
//   HELLO          id_len u16, client_id, n_samples u64, stage u8
//   GLOBAL_WEIGHTS round u64, payload
//   CLIENT_UPDATE  round u64, id_len u16, client_id, n_samples u64, payload
//   SHUTDOWN       (empty)
struct Message {
    MessageType type = MessageType::shutdown;
    std::string client_id;
    std::uint64_t n_samples = 0;
    Stage stage = Stage::pretrain;
    std::uint64_t round = 0;
    std::vector<std::uint8_t> payload;

    static Message hello(std::string client_id, std::uint64_t n_samples, Stage stage);
    static Message global_weights(std::uint64_t round, std::vector<std::uint8_t> payload);
    static Message client_update(std::uint64_t round, std::string client_id, std::uint64_t n_samples,
                                 std::vector<std::uint8_t> payload);
    static Message shutdown();
};

constexpr std::size_t kDefaultMaxFrame = 256u << 20;

// Frame: length u32 big-endian (type byte + body), type u8, body.
std::vector<std::uint8_t> encode_frame(const Message& m);
// Decodes the bytes following the length prefix. ProtocolError on unknown types or malformed bodies.
Message decode_frame_body(std::span<const std::uint8_t> body);
// Validates a length prefix against the frame limit.
std::uint32_t check_frame_length(std::span<const std::uint8_t, 4> prefix, std::size_t max_frame);

// The peer closed its end before a frame arrived.
class ConnectionClosed : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

// One bidirectional, in-order message channel.
class Connection {
public:
    virtual ~Connection() = default;

    virtual void send_frame(const std::vector<std::uint8_t>& frame) = 0;
    // nullopt when the timeout elapses first; ConnectionClosed when the peer is gone.
    virtual std::optional<std::vector<std::uint8_t>> receive_frame(std::chrono::milliseconds timeout) = 0;
    virtual void close() = 0;

    void send(const Message& m) { send_frame(encode_frame(m)); }
    std::optional<Message> receive(std::chrono::milliseconds timeout);

    std::size_t max_frame = kDefaultMaxFrame;
};

// Two connected in-memory endpoints.
std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> make_inprocess_pair();

class TcpListener {
public:
    // port 0 picks an ephemeral port; see port().
    TcpListener(const std::string& host, std::uint16_t port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    // nullptr on timeout.
    std::unique_ptr<Connection> accept(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

// Retries until the deadline so clients may start before the server listens. IoError on failure.
std::unique_ptr<Connection> tcp_connect(const std::string& host, std::uint16_t port,
                                        std::chrono::milliseconds timeout);

// Every frame that crosses a connection, in order.
struct FrameLog {
    struct Record {
        bool outgoing = false;
        std::vector<std::uint8_t> frame;
    };
    std::mutex mutex;
    std::vector<Record> records;
};

// Decorator that appends each sent and received frame to a log.
class RecordingConnection : public Connection {
public:
    RecordingConnection(std::unique_ptr<Connection> inner, std::shared_ptr<FrameLog> log);

    void send_frame(const std::vector<std::uint8_t>& frame) override;
    std::optional<std::vector<std::uint8_t>> receive_frame(std::chrono::milliseconds timeout) override;
    void close() override { inner_->close(); }

private:
    std::unique_ptr<Connection> inner_;
    std::shared_ptr<FrameLog> log_;
};

} // namespace fedcpc::federation
