#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vrmon/packet.hpp"
#include "vrmon/rng.hpp"

namespace testutil {

using namespace vrmon;

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        char tmpl[] = "/tmp/vrmon_test_XXXXXX";
        path = mkdtemp(tmpl);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

inline PacketRecord tcp_pkt(double ts, const char* src, uint16_t sport, const char* dst,
                            uint16_t dport, Direction dir, uint32_t payload,
                            uint32_t seq = 0, uint8_t flags = tcpflags::ACK) {
    PacketRecord r;
    r.timestamp = ts;
    r.src_ip = *IpAddr::parse(src);
    r.dst_ip = *IpAddr::parse(dst);
    r.src_port = sport;
    r.dst_port = dport;
    r.transport = Transport::TCP;
    r.direction = dir;
    r.payload_len = payload;
    r.tcp_seq = seq;
    r.tcp_flags = flags;
    return r;
}

inline PacketRecord udp_pkt(double ts, const char* src, uint16_t sport, const char* dst,
                            uint16_t dport, Direction dir, uint32_t payload) {
    PacketRecord r;
    r.timestamp = ts;
    r.src_ip = *IpAddr::parse(src);
    r.dst_ip = *IpAddr::parse(dst);
    r.src_port = sport;
    r.dst_port = dport;
    r.transport = Transport::UDP;
    r.direction = dir;
    r.payload_len = payload;
    return r;
}

// Test-local client hello builder (kept separate from the generator's).
inline std::vector<uint8_t> make_client_hello(uint32_t total_size, const std::string& sni) {
    auto p16 = [](std::vector<uint8_t>& v, uint16_t x) {
        v.push_back(uint8_t(x >> 8));
        v.push_back(uint8_t(x));
    };
    uint32_t n = uint32_t(sni.size());
    uint32_t base = 61 + n;
    if (total_size < base + 4) total_size = base + 4;
    uint32_t pad = total_size - base - 4;

    std::vector<uint8_t> ext;
    p16(ext, 0);
    p16(ext, uint16_t(n + 5));
    p16(ext, uint16_t(n + 3));
    ext.push_back(0);
    p16(ext, uint16_t(n));
    ext.insert(ext.end(), sni.begin(), sni.end());
    p16(ext, 21);
    p16(ext, uint16_t(pad));
    ext.insert(ext.end(), pad, 0);

    std::vector<uint8_t> body;
    p16(body, 0x0303);
    body.insert(body.end(), 32, 0xAB);
    body.push_back(0);
    p16(body, 2);
    p16(body, 0x1301);
    body.push_back(1);
    body.push_back(0);
    p16(body, uint16_t(ext.size()));
    body.insert(body.end(), ext.begin(), ext.end());

    std::vector<uint8_t> out;
    out.push_back(22);
    out.push_back(3);
    out.push_back(1);
    p16(out, uint16_t(body.size() + 4));
    out.push_back(1);
    out.push_back(uint8_t(body.size() >> 16));
    p16(out, uint16_t(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

} // namespace testutil
