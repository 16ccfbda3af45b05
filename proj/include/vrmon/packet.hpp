#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "vrmon/net.hpp"

namespace vrmon {

enum class TlsRecordKind : uint8_t { NONE, CLIENT_HELLO, OTHER_HANDSHAKE, APP_DATA };

struct TlsMeta {
    TlsRecordKind record_kind = TlsRecordKind::NONE;
    std::string sni; // non-empty only for CLIENT_HELLO
};

// TCP flag bits as they appear on the wire.
namespace tcpflags {
constexpr uint8_t FIN = 0x01;
constexpr uint8_t SYN = 0x02;
constexpr uint8_t RST = 0x04;
constexpr uint8_t PSH = 0x08;
constexpr uint8_t ACK = 0x10;
} // namespace tcpflags

// One parsed packet. payload_len covers transport payload only, with
// link, IP and transport headers excluded.
struct PacketRecord {
    double timestamp = 0.0; // seconds, fractional
    IpAddr src_ip;
    IpAddr dst_ip;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    Transport transport = Transport::OTHER;
    Direction direction = Direction::UPSTREAM;
    bool internal = false; // both endpoints inside the local prefixes
    uint32_t payload_len = 0;
    std::optional<uint32_t> tcp_seq;
    std::optional<uint8_t> tcp_flags;
    std::optional<TlsMeta> tls;

    bool is_upstream() const { return direction == Direction::UPSTREAM; }
    IpAddr user_ip() const { return is_upstream() ? src_ip : dst_ip; }

    // 5-tuple oriented with the local user on the src side.
    FlowKey canonical_key() const {
        FlowKey k;
        if (is_upstream()) {
            k.src_ip = src_ip;
            k.dst_ip = dst_ip;
            k.src_port = src_port;
            k.dst_port = dst_port;
        } else {
            k.src_ip = dst_ip;
            k.dst_ip = src_ip;
            k.src_port = dst_port;
            k.dst_port = src_port;
        }
        k.transport = transport;
        return k;
    }
};

} // namespace vrmon
