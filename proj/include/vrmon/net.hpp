#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace vrmon {

enum class Transport : uint8_t { TCP, UDP, OTHER };
enum class Direction : uint8_t { UPSTREAM, DOWNSTREAM };

const char* transport_name(Transport t);

// IPv4 or IPv6 address. IPv4 occupies the first four bytes.
struct IpAddr {
    bool v6 = false;
    std::array<uint8_t, 16> bytes{};

    static IpAddr v4(uint8_t a, uint8_t b, uint8_t c, uint8_t d);
    static std::optional<IpAddr> parse(const std::string& text);

    std::string to_string() const;
    uint32_t as_u32() const; // IPv4 only, network order interpreted as host u32

    bool operator==(const IpAddr& o) const { return v6 == o.v6 && bytes == o.bytes; }
    bool operator!=(const IpAddr& o) const { return !(*this == o); }
    bool operator<(const IpAddr& o) const {
        if (v6 != o.v6) return !v6;
        return bytes < o.bytes;
    }
};

struct IpAddrHash {
    size_t operator()(const IpAddr& ip) const;
};

// CIDR block, e.g. 10.0.0.0/8 or fd00::/16.
struct Cidr {
    IpAddr base;
    int prefix_len = 0;

    static std::optional<Cidr> parse(const std::string& text);
    bool contains(const IpAddr& ip) const;
    std::string to_string() const;
};

bool in_any_prefix(const IpAddr& ip, const std::vector<Cidr>& prefixes);

// 5-tuple with src fixed to the local (user) side.
struct FlowKey {
    IpAddr src_ip;
    IpAddr dst_ip;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    Transport transport = Transport::TCP;

    bool operator==(const FlowKey& o) const {
        return transport == o.transport && src_port == o.src_port && dst_port == o.dst_port &&
               src_ip == o.src_ip && dst_ip == o.dst_ip;
    }
    bool operator<(const FlowKey& o) const {
        auto lhs = std::tie(src_ip, dst_ip, src_port, dst_port, transport);
        auto rhs = std::tie(o.src_ip, o.dst_ip, o.src_port, o.dst_port, o.transport);
        return lhs < rhs;
    }
    std::string to_string() const;
};

struct FlowKeyHash {
    size_t operator()(const FlowKey& k) const;
};

} // namespace vrmon
