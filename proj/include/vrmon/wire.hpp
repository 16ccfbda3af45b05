#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vrmon/net.hpp"
#include "vrmon/pcap.hpp"

namespace vrmon {

// Transport-level view of one frame, before direction is assigned.
struct ParsedPacket {
    IpAddr src_ip;
    IpAddr dst_ip;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    Transport transport = Transport::OTHER;
    uint32_t payload_len = 0;      // from the protocol headers
    uint32_t payload_captured = 0; // bytes actually present (snaplen may cut payloads short)
    uint32_t payload_offset = 0;   // into the frame buffer
    std::optional<uint32_t> tcp_seq;
    std::optional<uint8_t> tcp_flags;
    bool non_first_fragment = false;
};

enum class FrameParse { OK, NON_IP, NON_FIRST_FRAGMENT, MALFORMED };

// Parses one link-layer frame. One optional 802.1Q tag is stripped;
// deeper VLAN stacks are treated as non-IP.
FrameParse parse_frame(std::span<const uint8_t> frame, LinkType link, ParsedPacket& out);

// Frame builders for the trace generator. Ethernet link type, IPv4,
// valid header checksums, zero MAC addresses.
struct TcpFields {
    IpAddr src_ip, dst_ip;
    uint16_t src_port = 0, dst_port = 0;
    uint32_t seq = 0, ack = 0;
    uint8_t flags = 0;
};

std::vector<uint8_t> build_tcp_frame(const TcpFields& f, std::span<const uint8_t> payload);
std::vector<uint8_t> build_udp_frame(const IpAddr& src_ip, const IpAddr& dst_ip, uint16_t src_port,
                                     uint16_t dst_port, std::span<const uint8_t> payload);

} // namespace vrmon
