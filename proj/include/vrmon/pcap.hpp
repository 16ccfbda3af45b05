#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace vrmon {

enum class LinkType : uint32_t { ETHERNET = 1, RAW_IP = 101 };

struct RawFrame {
    double timestamp = 0.0;
    std::vector<uint8_t> bytes; // captured bytes (up to snaplen)
    uint32_t orig_len = 0;
};

// Classic pcap reader. Handles the microsecond (0xA1B2C3D4) and
// nanosecond (0xA1B23C4D) magics in either byte order.
class PcapReader {
public:
    explicit PcapReader(const std::string& path);

    // Returns false at end of file. A short final record sets
    // truncated_final() and ends the stream without throwing.
    bool next(RawFrame& out);

    LinkType link_type() const { return link_type_; }
    bool truncated_final() const { return truncated_final_; }

private:
    struct FileCloser {
        void operator()(std::FILE* f) const {
            if (f) std::fclose(f);
        }
    };
    std::unique_ptr<std::FILE, FileCloser> file_;
    LinkType link_type_ = LinkType::ETHERNET;
    bool swapped_ = false;
    bool nanosecond_ = false;
    bool truncated_final_ = false;
    bool done_ = false;
};

// Writes microsecond-resolution pcap files.
class PcapWriter {
public:
    PcapWriter(const std::string& path, LinkType link);
    void write(double timestamp, const std::vector<uint8_t>& frame);
    // Snap-length capture: frame holds the captured bytes, orig_len the
    // on-the-wire size.
    void write_snapped(double timestamp, const std::vector<uint8_t>& frame, uint32_t orig_len);
    void close();

private:
    struct FileCloser {
        void operator()(std::FILE* f) const {
            if (f) std::fclose(f);
        }
    };
    std::unique_ptr<std::FILE, FileCloser> file_;
};

} // namespace vrmon
