#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vrmon/packet.hpp"
#include "vrmon/pcap.hpp"

namespace vrmon {

struct CaptureSource {
    enum class Kind { FILE, LIVE };
    Kind kind = Kind::FILE;
    std::string path;                // FILE: a pcap; LIVE: handled by the caller's frame feed
    std::vector<Cidr> local_prefixes; // required, drives direction labeling
};

struct CaptureCounters {
    uint64_t records = 0;
    uint64_t non_ip_frames = 0;
    uint64_t malformed_frames = 0;
    uint64_t fragment_packets = 0; // non-first fragments, bytes tallied separately
    uint64_t fragment_bytes = 0;
    uint64_t truncated_frames = 0;
};

std::pair<Direction, bool /*internal*/> classify_direction(const IpAddr& src, const IpAddr& dst,
                                                           const std::vector<Cidr>& local_prefixes);

// Anything yielding timestamped raw frames can feed the engine; the
// pcap file reader is the stock implementation.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual bool next(RawFrame& out) = 0;
    virtual LinkType link_type() const = 0;
    virtual bool truncated_final() const { return false; }
};

class PacketReader {
public:
    // Throws Error(MALFORMED_GLOBAL_HEADER | UNSUPPORTED_LINK_TYPE | CONFIG_ERROR).
    PacketReader(const CaptureSource& source);
    PacketReader(std::unique_ptr<FrameSource> frames, std::vector<Cidr> local_prefixes);

    // Yields records in on-the-wire order; skips non-IP and malformed
    // frames silently (counted). Returns nullopt at end of stream.
    std::optional<PacketRecord> next();

    const CaptureCounters& counters() const { return counters_; }

private:
    std::unique_ptr<FrameSource> frames_;
    std::vector<Cidr> local_prefixes_;
    CaptureCounters counters_;
};

} // namespace vrmon
