#pragma once

/// Client and server sessions of the external-processor scenario over any
/// reliable byte stream (socket pair, TCP, or a serial port opened as an fd).

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "servoguard/detector.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/log.hpp"
#include "servoguard/network.hpp"
#include "servoguard/transform.hpp"
#include "servoguard/wire.hpp"

namespace servoguard::wire {

/// Owning file-descriptor byte stream.
class FdStream {
public:
  FdStream() = default;
  explicit FdStream(int fd) : fd_(fd) {}
  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;
  FdStream(FdStream&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FdStream& operator=(FdStream&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~FdStream() { close(); }

  int fd() const noexcept { return fd_; }
  bool is_open() const noexcept { return fd_ >= 0; }

  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  /// Half-close for sockets so the peer sees end of stream.
  void shutdown_write() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
  }

  void write_all(std::span<const std::uint8_t> data) {
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == ENOTSOCK) n = ::write(fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  enum class ReadStatus { data, timeout, eof };

  /// Waits up to timeout_ms (negative = forever) and reads what is available.
  ReadStatus read_some(std::vector<std::uint8_t>& out, int timeout_ms) {
    pollfd p{fd_, POLLIN, 0};
    for (;;) {
      const int rc = ::poll(&p, 1, timeout_ms);
      if (rc < 0 && errno == EINTR) continue;
      if (rc < 0) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      if (rc == 0) return ReadStatus::timeout;
      break;
    }
    std::uint8_t buf[16384];
    for (;;) {
      const ssize_t n = ::read(fd_, buf, sizeof buf);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
      if (n == 0) return ReadStatus::eof;
      out.assign(buf, buf + n);
      return ReadStatus::data;
    }
  }

private:
  int fd_ = -1;
};

inline std::pair<FdStream, FdStream> socket_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
    throw ProtocolError(std::string("socketpair failed: ") + std::strerror(errno));
  return {FdStream(fds[0]), FdStream(fds[1])};
}

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses `host:port` (or a bare port, meaning 127.0.0.1).
inline Endpoint parse_endpoint(const std::string& text) {
  Endpoint ep;
  std::string port_text = text;
  if (const auto colon = text.rfind(':'); colon != std::string::npos) {
    ep.host = text.substr(0, colon);
    port_text = text.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    const unsigned long p = std::stoul(port_text, &used);
    if (used != port_text.size() || p > 65535) throw std::invalid_argument("port");
    ep.port = static_cast<std::uint16_t>(p);
  } catch (const std::exception&) {
    throw ConfigError("bad address '" + text + "', expected host:port");
  }
  if (ep.host.empty()) ep.host = "127.0.0.1";
  return ep;
}

namespace detail {
inline sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw ProtocolError("cannot resolve " + ep.host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

inline void no_delay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}
}  // namespace detail

inline FdStream connect_tcp(const Endpoint& ep) {
  const sockaddr_in addr = detail::resolve(ep);
  FdStream s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.is_open()) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw ProtocolError("connect to " + ep.host + ":" + std::to_string(ep.port) + " failed: " + std::strerror(errno));
  detail::no_delay(s.fd());
  return s;
}

class TcpListener {
public:
  explicit TcpListener(const Endpoint& ep) : sock_(::socket(AF_INET, SOCK_STREAM, 0)) {
    if (!sock_.is_open()) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const sockaddr_in addr = detail::resolve(ep);
    if (::bind(sock_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
      throw ProtocolError("bind " + ep.host + ":" + std::to_string(ep.port) + " failed: " + std::strerror(errno));
    if (::listen(sock_.fd(), 1) != 0) throw ProtocolError(std::string("listen failed: ") + std::strerror(errno));
  }

  std::uint16_t port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  FdStream accept() {
    for (;;) {
      const int fd = ::accept(sock_.fd(), nullptr, nullptr);
      if (fd < 0 && errno == EINTR) continue;
      if (fd < 0) throw ProtocolError(std::string("accept failed: ") + std::strerror(errno));
      detail::no_delay(fd);
      return FdStream(fd);
    }
  }

private:
  FdStream sock_;
};

inline constexpr std::size_t kMaxConsecutiveCrcFailures = 3;

/// Pulls whole messages off a stream, tolerating garbage and corrupt frames.
class FrameReader {
public:
  explicit FrameReader(FdStream& s) : stream_(s) {}

  enum class Event { message, timeout, eof, abort };

  struct Result {
    Event event = Event::timeout;
    std::optional<Message> message;
  };

  /// Next message, or timeout/eof. More than three consecutive CRC failures yield abort.
  Result next(int timeout_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      if (auto r = drain(); r) return *r;
      int wait = -1;
      if (timeout_ms >= 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        wait = static_cast<int>(std::max<std::int64_t>(0, left.count()));
      }
      switch (stream_.read_some(chunk_, wait)) {
      case FdStream::ReadStatus::timeout: return {Event::timeout, std::nullopt};
      case FdStream::ReadStatus::eof:
        if (auto r = drain(); r) return *r;
        return {Event::eof, std::nullopt};
      case FdStream::ReadStatus::data: decoder_.feed(chunk_); break;
      }
    }
  }

  /// Next message already sitting in the buffer, without reading the stream.
  std::optional<Message> buffered() {
    if (auto r = drain(); r && r->event == Event::message) return r->message;
    return std::nullopt;
  }

  std::size_t crc_failures() const noexcept { return total_crc_failures_; }
  std::size_t discarded_frames() const noexcept { return discarded_; }

private:
  std::optional<Result> drain() {
    for (;;) {
      DecodeResult d = decoder_.next();
      switch (d.status) {
      case DecodeStatus::ok:
        consecutive_crc_ = 0;
        return Result{Event::message, std::move(d.message)};
      case DecodeStatus::need_more: return std::nullopt;
      case DecodeStatus::skipped: break;
      case DecodeStatus::bad_crc:
        ++total_crc_failures_;
        log::info("wire: corrupt frame discarded");
        if (++consecutive_crc_ > kMaxConsecutiveCrcFailures) return Result{Event::abort, std::nullopt};
        break;
      case DecodeStatus::unknown_type:
      case DecodeStatus::malformed:
        ++discarded_;
        log::info("wire: ", to_string(d.status), " frame discarded");
        break;
      }
    }
  }

  FdStream& stream_;
  StreamDecoder decoder_;
  std::vector<std::uint8_t> chunk_;
  std::size_t consecutive_crc_ = 0;
  std::size_t total_crc_failures_ = 0;
  std::size_t discarded_ = 0;
};

// ---------------------------------------------------------------------------

struct ServerConfig {
  DetectorConfig detector{};
};

struct ServerReport {
  std::vector<Verdict> verdicts;
  bool shutdown_sent = false;
  std::size_t heartbeats = 0;
  std::size_t crc_failures = 0;
  std::size_t discarded_frames = 0;
  bool aborted = false;
};

/// Serves one connection until the peer closes it: classify each WindowData,
/// reply with a VerdictMsg of the same seq, and follow the verdict with a
/// ShutdownCmd the first time the debounce trips.
inline ServerReport server_session(const nn::Network<float>& net, FdStream& conn, const ServerConfig& cfg = {}) {
  ServerReport report;
  VerdictEngine engine(net, cfg.detector);
  FrameReader reader(conn);
  for (;;) {
    auto r = reader.next(-1);
    if (r.event == FrameReader::Event::eof) break;
    if (r.event == FrameReader::Event::abort) {
      log::error("wire server: too many consecutive CRC failures, aborting session");
      report.aborted = true;
      break;
    }
    if (r.event != FrameReader::Event::message) continue;
    if (const auto* wd = std::get_if<WindowData>(&*r.message)) {
      Verdict v = engine.judge(image_from_channels(wd->channels), wd->seq);
      report.verdicts.push_back(v);
      Bytes out = encode(VerdictMsg{wd->seq, static_cast<std::uint8_t>(v.is_fault ? 1 : 0),
                                    static_cast<float>(v.fault_probability)});
      if (v.tripped && !report.shutdown_sent) {
        const Bytes cmd = encode(ShutdownCmd{wd->seq});
        out.insert(out.end(), cmd.begin(), cmd.end());
        report.shutdown_sent = true;
        log::info("wire server: debounce tripped at seq ", wd->seq, ", shutdown sent");
      }
      conn.write_all(out);
    } else if (const auto* hb = std::get_if<Heartbeat>(&*r.message)) {
      ++report.heartbeats;
      conn.write_all(encode(*hb));
    } else {
      log::debug("wire server: ignoring message type ", static_cast<int>(type_of(*r.message)));
    }
  }
  report.crc_failures = reader.crc_failures();
  report.discarded_frames = reader.discarded_frames();
  return report;
}

struct ClientConfig {
  std::size_t hop = kDefaultHop;
  int reply_timeout_ms = 500;
};

struct ClientReport {
  std::vector<std::uint32_t> sent;
  std::vector<VerdictMsg> verdicts;
  std::vector<double> round_trip_ms;  ///< per answered window
  std::size_t missed_deadlines = 0;
  bool shutdown = false;
  std::optional<std::uint32_t> shutdown_seq;
  std::size_t samples_streamed = 0;
  bool aborted = false;
};

/// Microcontroller side: windows the samples, sends the three channels at
/// every hop, waits for the matching verdict, and stops streaming once a
/// ShutdownCmd arrives.
inline ClientReport client_session(std::span<const double> samples, double sample_interval, FdStream& conn,
                                   const ClientConfig& cfg = {}) {
  if (!(sample_interval > 0)) throw ConfigError("client: sample_interval must be > 0");
  ClientReport report;
  WindowAssembler assembler(cfg.hop);
  FrameReader reader(conn);
  const auto dt_us = static_cast<std::uint32_t>(std::llround(sample_interval * 1e6));
  std::uint32_t seq = 0;

  auto handle = [&](const Message& m, std::uint32_t awaiting) -> bool {
    if (const auto* v = std::get_if<VerdictMsg>(&m)) {
      report.verdicts.push_back(*v);
      return v->seq == awaiting;
    }
    if (const auto* s = std::get_if<ShutdownCmd>(&m)) {
      if (!report.shutdown) log::info("wire client: shutdown command received (seq ", s->seq, ")");
      report.shutdown = true;
      report.shutdown_seq = report.shutdown_seq.value_or(s->seq);
    }
    return false;
  };

  for (double x : samples) {
    if (report.shutdown || report.aborted) break;
    ++report.samples_streamed;
    if (!assembler.push(x)) continue;
    WindowData wd;
    wd.seq = seq++;
    wd.sample_interval_us = dt_us;
    wd.channels = pid_channels(Window(assembler.window(), sample_interval));
    const auto sent_at = std::chrono::steady_clock::now();
    conn.write_all(encode(wd));
    report.sent.push_back(wd.seq);

    bool answered = false;
    const auto deadline = sent_at + std::chrono::milliseconds(cfg.reply_timeout_ms);
    while (!answered) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      auto r = reader.next(static_cast<int>(std::max<std::int64_t>(0, left.count())));
      if (r.event == FrameReader::Event::message) {
        answered = handle(*r.message, wd.seq);
        continue;
      }
      if (r.event == FrameReader::Event::timeout) {
        ++report.missed_deadlines;
        log::error("wire client: no verdict for seq ", wd.seq, " within ", cfg.reply_timeout_ms, " ms");
      } else if (r.event == FrameReader::Event::abort) {
        log::error("wire client: too many consecutive CRC failures, aborting session");
        report.aborted = true;
      } else {
        log::error("wire client: server closed the connection");
        report.aborted = true;
      }
      break;
    }
    if (answered) {
      report.round_trip_ms.push_back(
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - sent_at).count());
      while (auto m = reader.buffered()) handle(*m, wd.seq);
    }
  }
  return report;
}

}  // namespace servoguard::wire
