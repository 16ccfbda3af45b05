#include "vrmon/capture.hpp"

#include "vrmon/errors.hpp"
#include "vrmon/tls.hpp"
#include "vrmon/wire.hpp"

namespace vrmon {

namespace {

class PcapFrameSource : public FrameSource {
public:
    explicit PcapFrameSource(const std::string& path) : reader_(path) {}
    bool next(RawFrame& out) override { return reader_.next(out); }
    LinkType link_type() const override { return reader_.link_type(); }
    bool truncated_final() const override { return reader_.truncated_final(); }

private:
    PcapReader reader_;
};

} // namespace

std::pair<Direction, bool> classify_direction(const IpAddr& src, const IpAddr& dst,
                                              const std::vector<Cidr>& local_prefixes) {
    bool src_local = in_any_prefix(src, local_prefixes);
    bool dst_local = in_any_prefix(dst, local_prefixes);
    if (src_local) return {Direction::UPSTREAM, dst_local};
    return {Direction::DOWNSTREAM, false};
}

PacketReader::PacketReader(const CaptureSource& source) : local_prefixes_(source.local_prefixes) {
    if (local_prefixes_.empty())
        throw Error(ErrorCode::ConfigError, "at least one local prefix is required");
    if (source.kind != CaptureSource::Kind::FILE)
        throw Error(ErrorCode::ConfigError, "live sources attach via the FrameSource constructor");
    frames_ = std::make_unique<PcapFrameSource>(source.path);
}

PacketReader::PacketReader(std::unique_ptr<FrameSource> frames, std::vector<Cidr> local_prefixes)
    : frames_(std::move(frames)), local_prefixes_(std::move(local_prefixes)) {
    if (local_prefixes_.empty())
        throw Error(ErrorCode::ConfigError, "at least one local prefix is required");
}

std::optional<PacketRecord> PacketReader::next() {
    RawFrame frame;
    while (frames_->next(frame)) {
        ParsedPacket parsed;
        switch (parse_frame(frame.bytes, frames_->link_type(), parsed)) {
        case FrameParse::NON_IP:
            counters_.non_ip_frames++;
            continue;
        case FrameParse::MALFORMED:
            counters_.malformed_frames++;
            continue;
        case FrameParse::NON_FIRST_FRAGMENT:
            // Without reassembly the 5-tuple is unknown; tally and move on.
            counters_.fragment_packets++;
            counters_.fragment_bytes += frame.bytes.size();
            continue;
        case FrameParse::OK:
            break;
        }

        PacketRecord rec;
        rec.timestamp = frame.timestamp;
        rec.src_ip = parsed.src_ip;
        rec.dst_ip = parsed.dst_ip;
        rec.src_port = parsed.src_port;
        rec.dst_port = parsed.dst_port;
        rec.transport = parsed.transport;
        rec.payload_len = parsed.payload_len;
        rec.tcp_seq = parsed.tcp_seq;
        rec.tcp_flags = parsed.tcp_flags;
        auto [dir, internal] = classify_direction(rec.src_ip, rec.dst_ip, local_prefixes_);
        rec.direction = dir;
        rec.internal = internal;

        if (rec.transport == Transport::TCP && parsed.payload_captured > 0) {
            std::span<const uint8_t> payload(frame.bytes.data() + parsed.payload_offset,
                                             parsed.payload_captured);
            uint8_t first = payload[0];
            if (first >= 20 && first <= 23) {
                TlsMeta meta = parse_tls_client_hello(payload);
                if (meta.record_kind != TlsRecordKind::NONE) rec.tls = std::move(meta);
            }
        }

        counters_.records++;
        return rec;
    }
    if (frames_->truncated_final()) counters_.truncated_frames++;
    return std::nullopt;
}

} // namespace vrmon
