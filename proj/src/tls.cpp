#include "vrmon/tls.hpp"

#include <algorithm>

namespace vrmon {

namespace {

// Cursor over a byte span; every read is bounds-checked.
struct Reader {
    std::span<const uint8_t> buf;
    size_t pos = 0;

    bool has(size_t n) const { return buf.size() - pos >= n; }
    uint8_t u8() { return buf[pos++]; }
    uint16_t u16() {
        uint16_t v = uint16_t(buf[pos]) << 8 | buf[pos + 1];
        pos += 2;
        return v;
    }
    uint32_t u24() {
        uint32_t v = uint32_t(buf[pos]) << 16 | uint32_t(buf[pos + 1]) << 8 | buf[pos + 2];
        pos += 3;
        return v;
    }
    bool skip(size_t n) {
        if (!has(n)) return false;
        pos += n;
        return true;
    }
};

constexpr uint8_t kRecordChangeCipherSpec = 20;
constexpr uint8_t kRecordAlert = 21;
constexpr uint8_t kRecordHandshake = 22;
constexpr uint8_t kRecordAppData = 23;
constexpr uint8_t kHandshakeClientHello = 1;
constexpr uint16_t kExtServerName = 0;

// Extracts server_name from a client hello body. Returns empty string
// when absent or malformed.
std::string parse_sni(Reader& r, size_t body_end) {
    // legacy_version(2) + random(32)
    if (!r.skip(34)) return {};
    if (!r.has(1)) return {};
    uint8_t sid_len = r.u8();
    if (!r.skip(sid_len)) return {};
    if (!r.has(2)) return {};
    uint16_t cs_len = r.u16();
    if (!r.skip(cs_len)) return {};
    if (!r.has(1)) return {};
    uint8_t comp_len = r.u8();
    if (!r.skip(comp_len)) return {};
    if (r.pos >= body_end || !r.has(2)) return {};
    uint16_t ext_total = r.u16();
    // Walk whatever extensions the capture holds; a snap length may cut
    // trailing ones (e.g. padding) short.
    size_t ext_end = std::min({r.pos + ext_total, body_end, r.buf.size()});
    while (r.pos + 4 <= ext_end) {
        uint16_t ext_type = r.u16();
        uint16_t ext_len = r.u16();
        if (r.pos + ext_len > ext_end) return {};
        if (ext_type == kExtServerName) {
            Reader e{r.buf.subspan(r.pos, ext_len), 0};
            if (!e.has(2)) return {};
            e.u16(); // server_name_list length
            if (!e.has(3)) return {};
            uint8_t name_type = e.u8();
            uint16_t name_len = e.u16();
            if (name_type != 0 || !e.has(name_len) || name_len == 0) return {};
            return std::string(reinterpret_cast<const char*>(e.buf.data() + e.pos), name_len);
        }
        r.pos += ext_len;
    }
    return {};
}

} // namespace

TlsMeta parse_tls_client_hello(std::span<const uint8_t> payload) {
    TlsMeta meta;
    if (payload.size() < 5) return meta;

    uint8_t record_type = payload[0];
    // Require a plausible TLS version byte so random payloads do not
    // register as handshakes.
    if (payload[1] != 3 || payload[2] > 4) return meta;

    switch (record_type) {
    case kRecordAppData:
        meta.record_kind = TlsRecordKind::APP_DATA;
        return meta;
    case kRecordChangeCipherSpec:
    case kRecordAlert:
        meta.record_kind = TlsRecordKind::OTHER_HANDSHAKE;
        return meta;
    case kRecordHandshake:
        break;
    default:
        return meta;
    }

    meta.record_kind = TlsRecordKind::OTHER_HANDSHAKE;

    Reader r{payload, 3};
    uint16_t record_len = r.u16();
    size_t record_end = std::min(payload.size(), r.pos + record_len);
    if (!r.has(4) || r.pos + 4 > record_end) return meta;

    uint8_t hs_type = r.u8();
    uint32_t hs_len = r.u24();
    if (hs_type != kHandshakeClientHello) return meta;
    size_t body_end = std::min(record_end, r.pos + hs_len);

    meta.record_kind = TlsRecordKind::CLIENT_HELLO;
    meta.sni = parse_sni(r, body_end);
    if (meta.sni.empty()) {
        // Contract: CLIENT_HELLO implies a non-empty SNI; a hello
        // without one is reported as a generic handshake record.
        meta.record_kind = TlsRecordKind::OTHER_HANDSHAKE;
    }
    return meta;
}

} // namespace vrmon
