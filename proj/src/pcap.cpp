#include "vrmon/pcap.hpp"

#include <cstring>

#include "vrmon/errors.hpp"

namespace vrmon {

namespace {

constexpr uint32_t kMagicUsec = 0xA1B2C3D4;
constexpr uint32_t kMagicNsec = 0xA1B23C4D;

uint32_t bswap32(uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
}
uint16_t bswap16(uint16_t v) {
    return uint16_t((v >> 8) | (v << 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
}

} // namespace

PcapReader::PcapReader(const std::string& path) {
    file_.reset(std::fopen(path.c_str(), "rb"));
    if (!file_) throw Error(ErrorCode::MalformedGlobalHeader, "cannot open capture file " + path);

    uint8_t hdr[24];
    if (std::fread(hdr, 1, sizeof(hdr), file_.get()) != sizeof(hdr))
        throw Error(ErrorCode::MalformedGlobalHeader, "capture file shorter than a pcap header: " + path);

    uint32_t magic;
    std::memcpy(&magic, hdr, 4);
    if (magic == kMagicUsec) {
        swapped_ = false;
        nanosecond_ = false;
    } else if (magic == kMagicNsec) {
        swapped_ = false;
        nanosecond_ = true;
    } else if (bswap32(magic) == kMagicUsec) {
        swapped_ = true;
        nanosecond_ = false;
    } else if (bswap32(magic) == kMagicNsec) {
        swapped_ = true;
        nanosecond_ = true;
    } else {
        throw Error(ErrorCode::MalformedGlobalHeader, "unrecognized pcap magic in " + path);
    }

    uint16_t ver_major;
    std::memcpy(&ver_major, hdr + 4, 2);
    if (swapped_) ver_major = bswap16(ver_major);
    if (ver_major != 2)
        throw Error(ErrorCode::MalformedGlobalHeader, "unsupported pcap version in " + path);

    uint32_t network;
    std::memcpy(&network, hdr + 20, 4);
    if (swapped_) network = bswap32(network);
    if (network != uint32_t(LinkType::ETHERNET) && network != uint32_t(LinkType::RAW_IP))
        throw Error(ErrorCode::UnsupportedLinkType,
                    "link type " + std::to_string(network) + " (ethernet and raw IP only)");
    link_type_ = LinkType(network);
}

bool PcapReader::next(RawFrame& out) {
    if (done_) return false;

    uint8_t rec[16];
    size_t got = std::fread(rec, 1, sizeof(rec), file_.get());
    if (got == 0) {
        done_ = true;
        return false;
    }
    if (got != sizeof(rec)) {
        truncated_final_ = true;
        done_ = true;
        return false;
    }

    uint32_t ts_sec, ts_frac, incl_len, orig_len;
    std::memcpy(&ts_sec, rec, 4);
    std::memcpy(&ts_frac, rec + 4, 4);
    std::memcpy(&incl_len, rec + 8, 4);
    std::memcpy(&orig_len, rec + 12, 4);
    if (swapped_) {
        ts_sec = bswap32(ts_sec);
        ts_frac = bswap32(ts_frac);
        incl_len = bswap32(incl_len);
        orig_len = bswap32(orig_len);
    }
    if (incl_len > (1u << 26)) { // implausible record, treat as corruption
        truncated_final_ = true;
        done_ = true;
        return false;
    }

    out.bytes.resize(incl_len);
    if (incl_len > 0 && std::fread(out.bytes.data(), 1, incl_len, file_.get()) != incl_len) {
        truncated_final_ = true;
        done_ = true;
        return false;
    }
    double frac = nanosecond_ ? double(ts_frac) * 1e-9 : double(ts_frac) * 1e-6;
    out.timestamp = double(ts_sec) + frac;
    out.orig_len = orig_len;
    return true;
}

PcapWriter::PcapWriter(const std::string& path, LinkType link) {
    file_.reset(std::fopen(path.c_str(), "wb"));
    if (!file_) throw Error(ErrorCode::IoFailure, "cannot create " + path);

    std::vector<uint8_t> hdr;
    put_u32(hdr, kMagicUsec);
    hdr.push_back(2);
    hdr.push_back(0); // version major 2
    hdr.push_back(4);
    hdr.push_back(0); // version minor 4
    put_u32(hdr, 0);  // thiszone
    put_u32(hdr, 0);  // sigfigs
    put_u32(hdr, 65535);
    put_u32(hdr, uint32_t(link));
    if (std::fwrite(hdr.data(), 1, hdr.size(), file_.get()) != hdr.size())
        throw Error(ErrorCode::IoFailure, "short write on " + path);
}

void PcapWriter::write(double timestamp, const std::vector<uint8_t>& frame) {
    write_snapped(timestamp, frame, uint32_t(frame.size()));
}

void PcapWriter::write_snapped(double timestamp, const std::vector<uint8_t>& frame,
                               uint32_t orig_len) {
    if (!file_) throw Error(ErrorCode::IoFailure, "writer already closed");
    uint32_t sec = uint32_t(timestamp);
    uint32_t usec = uint32_t((timestamp - double(sec)) * 1e6 + 0.5);
    if (usec >= 1000000) {
        sec += 1;
        usec -= 1000000;
    }
    std::vector<uint8_t> rec;
    rec.reserve(16 + frame.size());
    put_u32(rec, sec);
    put_u32(rec, usec);
    put_u32(rec, uint32_t(frame.size()));
    put_u32(rec, orig_len);
    rec.insert(rec.end(), frame.begin(), frame.end());
    if (std::fwrite(rec.data(), 1, rec.size(), file_.get()) != rec.size())
        throw Error(ErrorCode::IoFailure, "short write");
}

void PcapWriter::close() {
    file_.reset();
}

} // namespace vrmon
