#include "vrmon/wire.hpp"

#include <cstring>

namespace vrmon {

namespace {

constexpr uint16_t kEtherIPv4 = 0x0800;
constexpr uint16_t kEtherIPv6 = 0x86DD;
constexpr uint16_t kEtherVlan = 0x8100;

uint16_t rd16(std::span<const uint8_t> b, size_t off) {
    return uint16_t(b[off]) << 8 | b[off + 1];
}
uint32_t rd32(std::span<const uint8_t> b, size_t off) {
    return uint32_t(b[off]) << 24 | uint32_t(b[off + 1]) << 16 | uint32_t(b[off + 2]) << 8 |
           b[off + 3];
}

// Payload lengths come from the protocol headers; captured payload
// bytes may be fewer under a snap length.
FrameParse parse_transport(std::span<const uint8_t> frame, size_t off, uint8_t proto,
                           size_t ip_payload_len, ParsedPacket& out) {
    auto captured_after = [&](size_t payload_off) {
        return frame.size() > payload_off ? frame.size() - payload_off : 0;
    };
    if (proto == 6) {
        if (ip_payload_len < 20 || frame.size() < off + 20) return FrameParse::MALFORMED;
        out.transport = Transport::TCP;
        out.src_port = rd16(frame, off);
        out.dst_port = rd16(frame, off + 2);
        out.tcp_seq = rd32(frame, off + 4);
        size_t doff = size_t(frame[off + 12] >> 4) * 4;
        if (doff < 20 || ip_payload_len < doff) return FrameParse::MALFORMED;
        out.tcp_flags = frame[off + 13];
        out.payload_len = uint32_t(ip_payload_len - doff);
        out.payload_offset = uint32_t(off + doff);
        out.payload_captured = uint32_t(std::min<size_t>(out.payload_len, captured_after(off + doff)));
        return FrameParse::OK;
    }
    if (proto == 17) {
        if (ip_payload_len < 8 || frame.size() < off + 8) return FrameParse::MALFORMED;
        out.transport = Transport::UDP;
        out.src_port = rd16(frame, off);
        out.dst_port = rd16(frame, off + 2);
        size_t udp_len = rd16(frame, off + 4);
        if (udp_len < 8 || udp_len > ip_payload_len) return FrameParse::MALFORMED;
        out.payload_len = uint32_t(udp_len - 8);
        out.payload_offset = uint32_t(off + 8);
        out.payload_captured = uint32_t(std::min<size_t>(out.payload_len, captured_after(off + 8)));
        return FrameParse::OK;
    }
    out.transport = Transport::OTHER;
    out.payload_len = uint32_t(ip_payload_len);
    out.payload_offset = uint32_t(off);
    out.payload_captured = uint32_t(std::min<size_t>(out.payload_len, captured_after(off)));
    return FrameParse::OK;
}

FrameParse parse_ip(std::span<const uint8_t> frame, size_t off, ParsedPacket& out) {
    if (frame.size() < off + 1) return FrameParse::MALFORMED;
    uint8_t version = frame[off] >> 4;

    if (version == 4) {
        if (frame.size() < off + 20) return FrameParse::MALFORMED;
        size_t ihl = size_t(frame[off] & 0x0F) * 4;
        if (ihl < 20 || frame.size() < off + ihl) return FrameParse::MALFORMED;
        // Ethernet frames may be padded and snap lengths may cut them
        // short; the IP total length is authoritative either way.
        size_t total_len = rd16(frame, off + 2);
        if (total_len < ihl) return FrameParse::MALFORMED;
        uint16_t frag = rd16(frame, off + 6);
        out.non_first_fragment = (frag & 0x1FFF) != 0;
        uint8_t proto = frame[off + 9];
        out.src_ip.v6 = false;
        out.dst_ip.v6 = false;
        std::memcpy(out.src_ip.bytes.data(), frame.data() + off + 12, 4);
        std::memcpy(out.dst_ip.bytes.data(), frame.data() + off + 16, 4);
        if (out.non_first_fragment) return FrameParse::NON_FIRST_FRAGMENT;
        return parse_transport(frame, off + ihl, proto, total_len - ihl, out);
    }

    if (version == 6) {
        if (frame.size() < off + 40) return FrameParse::MALFORMED;
        size_t payload_len = rd16(frame, off + 4);
        uint8_t next = frame[off + 6];
        out.src_ip.v6 = true;
        out.dst_ip.v6 = true;
        std::memcpy(out.src_ip.bytes.data(), frame.data() + off + 8, 16);
        std::memcpy(out.dst_ip.bytes.data(), frame.data() + off + 24, 16);
        // Extension headers are out of scope; treat them as OTHER transport.
        return parse_transport(frame, off + 40, next, payload_len, out);
    }

    return FrameParse::NON_IP;
}

void wr16(std::vector<uint8_t>& b, size_t off, uint16_t v) {
    b[off] = uint8_t(v >> 8);
    b[off + 1] = uint8_t(v);
}
void wr32(std::vector<uint8_t>& b, size_t off, uint32_t v) {
    b[off] = uint8_t(v >> 24);
    b[off + 1] = uint8_t(v >> 16);
    b[off + 2] = uint8_t(v >> 8);
    b[off + 3] = uint8_t(v);
}

uint16_t ip_checksum(const uint8_t* data, size_t len) {
    uint32_t sum = 0;
    for (size_t i = 0; i + 1 < len; i += 2)
        sum += uint32_t(data[i]) << 8 | data[i + 1];
    if (len & 1) sum += uint32_t(data[len - 1]) << 8;
    while (sum >> 16)
        sum = (sum & 0xFFFF) + (sum >> 16);
    return uint16_t(~sum);
}

// Ethernet header with zero MACs plus an IPv4 header; returns the frame
// with space for l4 bytes appended by the caller at a fixed offset.
std::vector<uint8_t> start_ipv4_frame(const IpAddr& src, const IpAddr& dst, uint8_t proto,
                                      size_t l4_len) {
    std::vector<uint8_t> f(14 + 20 + l4_len, 0);
    wr16(f, 12, kEtherIPv4);
    f[14] = 0x45;
    wr16(f, 16, uint16_t(20 + l4_len));
    f[14 + 8] = 64; // ttl
    f[14 + 9] = proto;
    std::memcpy(f.data() + 14 + 12, src.bytes.data(), 4);
    std::memcpy(f.data() + 14 + 16, dst.bytes.data(), 4);
    uint16_t csum = ip_checksum(f.data() + 14, 20);
    wr16(f, 14 + 10, csum);
    return f;
}

} // namespace

FrameParse parse_frame(std::span<const uint8_t> frame, LinkType link, ParsedPacket& out) {
    size_t off = 0;
    if (link == LinkType::ETHERNET) {
        if (frame.size() < 14) return FrameParse::MALFORMED;
        uint16_t ethertype = rd16(frame, 12);
        off = 14;
        if (ethertype == kEtherVlan) {
            if (frame.size() < 18) return FrameParse::MALFORMED;
            ethertype = rd16(frame, 16);
            off = 18;
        }
        if (ethertype != kEtherIPv4 && ethertype != kEtherIPv6) return FrameParse::NON_IP;
    }
    return parse_ip(frame, off, out);
}

std::vector<uint8_t> build_tcp_frame(const TcpFields& f, std::span<const uint8_t> payload) {
    auto frame = start_ipv4_frame(f.src_ip, f.dst_ip, 6, 20 + payload.size());
    size_t t = 34;
    wr16(frame, t, f.src_port);
    wr16(frame, t + 2, f.dst_port);
    wr32(frame, t + 4, f.seq);
    wr32(frame, t + 8, f.ack);
    frame[t + 12] = 5 << 4; // data offset, no options
    frame[t + 13] = f.flags;
    wr16(frame, t + 14, 65535); // window
    if (!payload.empty()) std::memcpy(frame.data() + t + 20, payload.data(), payload.size());
    return frame;
}

std::vector<uint8_t> build_udp_frame(const IpAddr& src_ip, const IpAddr& dst_ip, uint16_t src_port,
                                     uint16_t dst_port, std::span<const uint8_t> payload) {
    auto frame = start_ipv4_frame(src_ip, dst_ip, 17, 8 + payload.size());
    size_t t = 34;
    wr16(frame, t, src_port);
    wr16(frame, t + 2, dst_port);
    wr16(frame, t + 4, uint16_t(8 + payload.size()));
    if (!payload.empty()) std::memcpy(frame.data() + t + 8, payload.data(), payload.size());
    return frame;
}

} // namespace vrmon
