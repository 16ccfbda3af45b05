#include "vrmon/net.hpp"

#include <arpa/inet.h>

#include <cstdio>
#include <cstring>

namespace vrmon {

const char* transport_name(Transport t) {
    switch (t) {
    case Transport::TCP: return "tcp";
    case Transport::UDP: return "udp";
    case Transport::OTHER: return "other";
    }
    return "?";
}

IpAddr IpAddr::v4(uint8_t a, uint8_t b, uint8_t c, uint8_t d) {
    IpAddr ip;
    ip.v6 = false;
    ip.bytes[0] = a;
    ip.bytes[1] = b;
    ip.bytes[2] = c;
    ip.bytes[3] = d;
    return ip;
}

std::optional<IpAddr> IpAddr::parse(const std::string& text) {
    IpAddr ip;
    in_addr a4{};
    if (inet_pton(AF_INET, text.c_str(), &a4) == 1) {
        ip.v6 = false;
        std::memcpy(ip.bytes.data(), &a4, 4);
        return ip;
    }
    in6_addr a6{};
    if (inet_pton(AF_INET6, text.c_str(), &a6) == 1) {
        ip.v6 = true;
        std::memcpy(ip.bytes.data(), &a6, 16);
        return ip;
    }
    return std::nullopt;
}

std::string IpAddr::to_string() const {
    char buf[INET6_ADDRSTRLEN] = {};
    if (!v6) {
        in_addr a4{};
        std::memcpy(&a4, bytes.data(), 4);
        inet_ntop(AF_INET, &a4, buf, sizeof(buf));
    } else {
        in6_addr a6{};
        std::memcpy(&a6, bytes.data(), 16);
        inet_ntop(AF_INET6, &a6, buf, sizeof(buf));
    }
    return buf;
}

uint32_t IpAddr::as_u32() const {
    return (uint32_t(bytes[0]) << 24) | (uint32_t(bytes[1]) << 16) | (uint32_t(bytes[2]) << 8) |
           uint32_t(bytes[3]);
}

size_t IpAddrHash::operator()(const IpAddr& ip) const {
    size_t h = ip.v6 ? 0x9e3779b97f4a7c15ull : 0;
    for (int i = 0; i < (ip.v6 ? 16 : 4); ++i)
        h = h * 1099511628211ull ^ ip.bytes[size_t(i)];
    return h;
}

std::optional<Cidr> Cidr::parse(const std::string& text) {
    auto slash = text.find('/');
    if (slash == std::string::npos) return std::nullopt;
    auto addr = IpAddr::parse(text.substr(0, slash));
    if (!addr) return std::nullopt;
    int len = 0;
    try {
        len = std::stoi(text.substr(slash + 1));
    } catch (...) {
        return std::nullopt;
    }
    int max_len = addr->v6 ? 128 : 32;
    if (len < 0 || len > max_len) return std::nullopt;
    Cidr c;
    c.base = *addr;
    c.prefix_len = len;
    return c;
}

bool Cidr::contains(const IpAddr& ip) const {
    if (ip.v6 != base.v6) return false;
    int full = prefix_len / 8;
    int rem = prefix_len % 8;
    if (std::memcmp(ip.bytes.data(), base.bytes.data(), size_t(full)) != 0) return false;
    if (rem == 0) return true;
    uint8_t mask = uint8_t(0xFF << (8 - rem));
    return (ip.bytes[size_t(full)] & mask) == (base.bytes[size_t(full)] & mask);
}

std::string Cidr::to_string() const {
    return base.to_string() + "/" + std::to_string(prefix_len);
}

bool in_any_prefix(const IpAddr& ip, const std::vector<Cidr>& prefixes) {
    for (const auto& p : prefixes)
        if (p.contains(ip)) return true;
    return false;
}

std::string FlowKey::to_string() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s:%u>%s:%u/%s", src_ip.to_string().c_str(), unsigned(src_port),
                  dst_ip.to_string().c_str(), unsigned(dst_port), transport_name(transport));
    return buf;
}

size_t FlowKeyHash::operator()(const FlowKey& k) const {
    IpAddrHash h;
    size_t v = h(k.src_ip);
    v ^= h(k.dst_ip) + 0x9e3779b9 + (v << 6) + (v >> 2);
    v ^= std::hash<uint32_t>{}(uint32_t(k.src_port) << 16 | k.dst_port) + 0x9e3779b9 + (v << 6) + (v >> 2);
    v ^= std::hash<uint8_t>{}(uint8_t(k.transport)) + 0x9e3779b9 + (v << 6) + (v >> 2);
    return v;
}

} // namespace vrmon
