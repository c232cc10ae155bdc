#pragma once

/// Framed binary protocol between a sampling microcontroller and an external
/// processor that hosts the classifier.
///
///   A5 5A | version u8 | msg_type u8 | payload_len u32 | payload | crc u32
///
/// The CRC-32 (IEEE) covers version through the end of the payload. Every
/// multi-byte field is little-endian.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include "servoguard/binary_io.hpp"
#include "servoguard/transform.hpp"

namespace servoguard::wire {

inline constexpr std::uint8_t kMagic0 = 0xA5;
inline constexpr std::uint8_t kMagic1 = 0x5A;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 8;
inline constexpr std::size_t kCrcBytes = 4;
inline constexpr std::size_t kMaxPayload = 1u << 16;

enum class MsgType : std::uint8_t { window_data = 1, verdict = 2, heartbeat = 3, shutdown = 4 };

/// Raw, integral and derivative channels (not yet normalized) of one window.
/// Payload: seq u32 | sample_interval_us u32 | samples per channel u32 (=1024) | 3x1024 f32.
struct WindowData {
  std::uint32_t seq = 0;
  std::uint32_t sample_interval_us = 1000;
  RawChannels channels;
  bool operator==(const WindowData&) const = default;
};
inline constexpr std::size_t kWindowDataPayload = 12 + kImageSize * 4;

struct VerdictMsg {
  std::uint32_t seq = 0;
  std::uint8_t label = 0;
  float probability = 0.0f;
  bool operator==(const VerdictMsg&) const = default;
};

struct Heartbeat {
  std::uint32_t seq = 0;
  bool operator==(const Heartbeat&) const = default;
};

struct ShutdownCmd {
  std::uint32_t seq = 0;
  bool operator==(const ShutdownCmd&) const = default;
};

using Message = std::variant<WindowData, VerdictMsg, Heartbeat, ShutdownCmd>;

inline MsgType type_of(const Message& m) {
  return std::visit(
      [](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, WindowData>) return MsgType::window_data;
        else if constexpr (std::is_same_v<V, VerdictMsg>) return MsgType::verdict;
        else if constexpr (std::is_same_v<V, Heartbeat>) return MsgType::heartbeat;
        else return MsgType::shutdown;
      },
      m);
}

inline std::uint32_t seq_of(const Message& m) {
  return std::visit([](const auto& v) { return v.seq; }, m);
}

inline Bytes encode_payload(const Message& m) {
  Bytes p;
  ByteWriter w(p);
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        w.u32(v.seq);
        if constexpr (std::is_same_v<V, WindowData>) {
          w.u32(v.sample_interval_us);
          w.u32(static_cast<std::uint32_t>(kWindowLength));
          for (float x : v.channels.values) w.f32(x);
        } else if constexpr (std::is_same_v<V, VerdictMsg>) {
          w.u8(v.label);
          w.f32(v.probability);
        }
      },
      m);
  return p;
}

inline Bytes encode(const Message& m) {
  const Bytes payload = encode_payload(m);
  Bytes out;
  out.reserve(kHeaderBytes + payload.size() + kCrcBytes);
  ByteWriter w(out);
  w.u8(kMagic0);
  w.u8(kMagic1);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(type_of(m)));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  w.u32(crc32_ieee(std::span<const std::uint8_t>(out).subspan(2)));
  return out;
}

enum class DecodeStatus {
  ok,            ///< one message decoded
  need_more,     ///< a frame may start here but is incomplete; nothing consumed
  skipped,       ///< bytes before the next magic were discarded
  bad_crc,       ///< corrupt frame (CRC or header); the magic was discarded and scanning resumes after it
  unknown_type,  ///< intact frame of an unknown type, discarded
  malformed,     ///< intact frame whose payload does not fit its type, discarded
};

inline const char* to_string(DecodeStatus s) {
  switch (s) {
  case DecodeStatus::ok: return "ok";
  case DecodeStatus::need_more: return "need_more";
  case DecodeStatus::skipped: return "skipped";
  case DecodeStatus::bad_crc: return "bad_crc";
  case DecodeStatus::unknown_type: return "unknown_type";
  case DecodeStatus::malformed: return "malformed";
  }
  return "?";
}

struct DecodeResult {
  DecodeStatus status = DecodeStatus::need_more;
  std::optional<Message> message;
  std::size_t consumed = 0;
};

namespace detail {

inline std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint32_t{b[at]} | std::uint32_t{b[at + 1]} << 8 | std::uint32_t{b[at + 2]} << 16 |
         std::uint32_t{b[at + 3]} << 24;
}

enum class FrameCheck { complete_valid, incomplete, corrupt };

/// Header and CRC check of a frame at the start of `b` (which begins with the magic).
inline FrameCheck check_frame(std::span<const std::uint8_t> b, std::size_t& total) {
  if (b.size() < kHeaderBytes) return FrameCheck::incomplete;
  if (b[2] != kVersion) return FrameCheck::corrupt;
  const std::uint32_t len = le32(b, 4);
  if (len > kMaxPayload) return FrameCheck::corrupt;
  total = kHeaderBytes + len + kCrcBytes;
  if (b.size() < total) return FrameCheck::incomplete;
  const std::uint32_t crc = le32(b, kHeaderBytes + len);
  if (crc != crc32_ieee(b.subspan(2, kHeaderBytes - 2 + len))) return FrameCheck::corrupt;
  return FrameCheck::complete_valid;
}

inline std::optional<std::size_t> find_magic(std::span<const std::uint8_t> b, std::size_t from) {
  for (std::size_t i = from; i + 1 < b.size(); ++i)
    if (b[i] == kMagic0 && b[i + 1] == kMagic1) return i;
  return std::nullopt;
}

inline std::optional<Message> parse_payload(MsgType type, std::span<const std::uint8_t> p) {
  ByteReader r(p);
  switch (type) {
  case MsgType::window_data: {
    if (p.size() != kWindowDataPayload) return std::nullopt;
    WindowData m;
    m.seq = r.u32();
    m.sample_interval_us = r.u32();
    if (r.u32() != kWindowLength) return std::nullopt;
    for (auto& x : m.channels.values) x = r.f32();
    return m;
  }
  case MsgType::verdict: {
    if (p.size() != 9) return std::nullopt;
    VerdictMsg m;
    m.seq = r.u32();
    m.label = r.u8();
    m.probability = r.f32();
    if (m.label > 1) return std::nullopt;
    return m;
  }
  case MsgType::heartbeat:
    if (p.size() != 4) return std::nullopt;
    return Heartbeat{r.u32()};
  case MsgType::shutdown:
    if (p.size() != 4) return std::nullopt;
    return ShutdownCmd{r.u32()};
  }
  return std::nullopt;
}

}  // namespace detail

/// Decodes at most one frame from the front of `bytes`. Never reads outside
/// the span. The caller drops `consumed` bytes and calls again.
inline DecodeResult decode(std::span<const std::uint8_t> bytes) {
  DecodeResult r;
  const auto magic = detail::find_magic(bytes, 0);
  if (!magic) {
    // Keep a trailing A5: it may be the first half of a magic.
    const bool keep_last = !bytes.empty() && bytes.back() == kMagic0;
    r.consumed = bytes.size() - (keep_last ? 1 : 0);
    r.status = r.consumed ? DecodeStatus::skipped : DecodeStatus::need_more;
    return r;
  }
  if (*magic > 0) {
    r.status = DecodeStatus::skipped;
    r.consumed = *magic;
    return r;
  }

  std::size_t total = 0;
  switch (detail::check_frame(bytes, total)) {
  case detail::FrameCheck::corrupt:
    r.status = DecodeStatus::bad_crc;
    r.consumed = 2;
    return r;
  case detail::FrameCheck::incomplete: {
    // If a later magic starts a complete, valid frame, this candidate cannot
    // be genuine (its bytes would overlap a real frame): treat it as corrupt.
    for (auto at = detail::find_magic(bytes, 2); at; at = detail::find_magic(bytes, *at + 1)) {
      std::size_t t = 0;
      if (detail::check_frame(bytes.subspan(*at), t) == detail::FrameCheck::complete_valid) {
        r.status = DecodeStatus::bad_crc;
        r.consumed = 2;
        return r;
      }
    }
    r.status = DecodeStatus::need_more;
    return r;
  }
  case detail::FrameCheck::complete_valid: break;
  }

  r.consumed = total;
  const std::uint8_t type = bytes[3];
  if (type < 1 || type > 4) {
    r.status = DecodeStatus::unknown_type;
    return r;
  }
  auto msg = detail::parse_payload(static_cast<MsgType>(type), bytes.subspan(kHeaderBytes, total - kHeaderBytes - kCrcBytes));
  if (!msg) {
    r.status = DecodeStatus::malformed;
    return r;
  }
  r.status = DecodeStatus::ok;
  r.message = std::move(msg);
  return r;
}

/// Incremental decoder over a growing byte buffer.
class StreamDecoder {
public:
  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  /// Next decode event; status need_more means the buffer holds no further complete frame.
  DecodeResult next() {
    DecodeResult r = decode(std::span<const std::uint8_t>(buf_).subspan(pos_));
    pos_ += r.consumed;
    if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
      pos_ = 0;
    }
    return r;
  }

  std::size_t buffered() const noexcept { return buf_.size() - pos_; }

private:
  Bytes buf_;
  std::size_t pos_ = 0;
};

}  // namespace servoguard::wire
