#include <doctest.h>

#include <cstring>

#include "vrmon/capture.hpp"
#include "vrmon/errors.hpp"
#include "vrmon/synth.hpp"
#include "vrmon/tls.hpp"
#include "vrmon/wire.hpp"

#include "helpers.hpp"

using namespace vrmon;
using namespace testutil;

namespace {

const std::vector<Cidr> kLocal = {*Cidr::parse("10.0.0.0/8")};

CaptureSource file_source(const std::string& path) {
    CaptureSource src;
    src.path = path;
    src.local_prefixes = kLocal;
    return src;
}

} // namespace

TEST_CASE("empty capture file yields zero records") {
    TempDir tmp;
    auto path = tmp.file("empty.pcap");
    PcapWriter w(path, LinkType::ETHERNET);
    w.close();
    PacketReader reader(file_source(path));
    CHECK(!reader.next().has_value());
    CHECK(reader.counters().records == 0);
}

TEST_CASE("tcp packet with a 414-byte client hello parses with SNI") {
    TempDir tmp;
    auto path = tmp.file("ch.pcap");
    auto payload = make_client_hello(414, "prod.shapevrcloud.com");
    REQUIRE(payload.size() == 414);

    TcpFields f;
    f.src_ip = *IpAddr::parse("10.0.0.5");
    f.dst_ip = *IpAddr::parse("52.1.2.3");
    f.src_port = 50000;
    f.dst_port = 443;
    f.flags = tcpflags::ACK | tcpflags::PSH;
    PcapWriter w(path, LinkType::ETHERNET);
    w.write(1000.25, build_tcp_frame(f, payload));
    w.close();

    PacketReader reader(file_source(path));
    auto rec = reader.next();
    REQUIRE(rec.has_value());
    CHECK(rec->payload_len == 414);
    CHECK(rec->transport == Transport::TCP);
    CHECK(rec->direction == Direction::UPSTREAM);
    REQUIRE(rec->tls.has_value());
    CHECK(rec->tls->record_kind == TlsRecordKind::CLIENT_HELLO);
    CHECK(rec->tls->sni == "prod.shapevrcloud.com");
    CHECK(!reader.next().has_value());
}

TEST_CASE("truncated final frame ends the stream without losing prior records") {
    TempDir tmp;
    auto path = tmp.file("trunc.pcap");
    {
        PcapWriter w(path, LinkType::ETHERNET);
        TcpFields f;
        f.src_ip = *IpAddr::parse("10.0.0.5");
        f.dst_ip = *IpAddr::parse("52.1.2.3");
        f.src_port = 1234;
        f.dst_port = 443;
        std::vector<uint8_t> payload(100, 0);
        for (int i = 0; i < 3; ++i) w.write(1.0 + i, build_tcp_frame(f, payload));
        w.close();
    }
    auto bytes = slurp(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), long(bytes.size() - 40)); // cut into the final record
    out.close();

    PacketReader reader(file_source(path));
    int n = 0;
    while (reader.next()) n++;
    CHECK(n == 2);
    CHECK(reader.counters().truncated_frames == 1);
}

TEST_CASE("capture file errors") {
    TempDir tmp;
    SUBCASE("garbage header") {
        auto path = tmp.file("garbage.pcap");
        std::ofstream out(path, std::ios::binary);
        out << "this is not a capture file at all.....";
        out.close();
        CHECK_THROWS_AS(PacketReader(file_source(path)), Error);
        try {
            PacketReader reader(file_source(path));
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MalformedGlobalHeader);
        }
    }
    SUBCASE("unsupported link type") {
        auto path = tmp.file("dlt.pcap");
        PcapWriter w(path, LinkType::ETHERNET);
        w.close();
        auto bytes = slurp(path);
        bytes[20] = char(113); // linux SLL
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), long(bytes.size()));
        out.close();
        try {
            PacketReader reader(file_source(path));
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::UnsupportedLinkType);
        }
    }
    SUBCASE("missing local prefixes") {
        CaptureSource src;
        src.path = tmp.file("none.pcap");
        CHECK_THROWS_AS(PacketReader{src}, Error);
    }
}

TEST_CASE("byte-swapped and nanosecond pcap magics are read") {
    TempDir tmp;
    auto path = tmp.file("nsec.pcap");
    // hand-built nanosecond header + one UDP frame
    auto frame = build_udp_frame(*IpAddr::parse("10.0.0.1"), *IpAddr::parse("52.0.0.1"), 1000,
                                 2000, std::vector<uint8_t>(10, 0));
    std::ofstream out(path, std::ios::binary);
    auto w32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    w32(0xA1B23C4D);
    out.put(2).put(0).put(4).put(0);
    w32(0);
    w32(0);
    w32(65535);
    w32(1);
    w32(7);         // sec
    w32(500000000); // nsec = 0.5 s
    w32(uint32_t(frame.size()));
    w32(uint32_t(frame.size()));
    out.write(reinterpret_cast<const char*>(frame.data()), long(frame.size()));
    out.close();

    PacketReader reader(file_source(path));
    auto rec = reader.next();
    REQUIRE(rec.has_value());
    CHECK(rec->timestamp == doctest::Approx(7.5));
    CHECK(rec->payload_len == 10);
}

TEST_CASE("one 802.1Q tag is stripped, deeper stacks are skipped") {
    auto frame = build_tcp_frame(
        {*IpAddr::parse("10.0.0.5"), *IpAddr::parse("52.1.2.3"), 1, 443, 0, 0, tcpflags::ACK},
        std::vector<uint8_t>(25, 0));
    // splice a VLAN tag after the MACs
    std::vector<uint8_t> tagged(frame.begin(), frame.begin() + 12);
    tagged.push_back(0x81);
    tagged.push_back(0x00);
    tagged.push_back(0x00);
    tagged.push_back(0x2A);
    tagged.insert(tagged.end(), frame.begin() + 12, frame.end());

    ParsedPacket parsed;
    CHECK(parse_frame(tagged, LinkType::ETHERNET, parsed) == FrameParse::OK);
    CHECK(parsed.payload_len == 25);

    std::vector<uint8_t> double_tagged(tagged.begin(), tagged.begin() + 12);
    for (int i = 0; i < 2; ++i) {
        double_tagged.push_back(0x81);
        double_tagged.push_back(0x00);
        double_tagged.push_back(0x00);
        double_tagged.push_back(0x2A);
    }
    double_tagged.insert(double_tagged.end(), tagged.begin() + 12, tagged.end());
    CHECK(parse_frame(double_tagged, LinkType::ETHERNET, parsed) == FrameParse::NON_IP);
}

TEST_CASE("direction labeling agrees with brute-force prefix membership") {
    auto prefixes = std::vector<Cidr>{*Cidr::parse("10.0.0.0/8"), *Cidr::parse("192.168.4.0/24")};
    CHECK(classify_direction(*IpAddr::parse("10.0.0.5"), *IpAddr::parse("52.1.2.3"), prefixes)
              .first == Direction::UPSTREAM);
    CHECK(classify_direction(*IpAddr::parse("52.1.2.3"), *IpAddr::parse("10.0.0.5"), prefixes)
              .first == Direction::DOWNSTREAM);
    auto internal =
        classify_direction(*IpAddr::parse("10.0.0.5"), *IpAddr::parse("10.9.9.9"), prefixes);
    CHECK(internal.first == Direction::UPSTREAM);
    CHECK(internal.second);

    Rng rng(77);
    for (int i = 0; i < 1000; ++i) {
        IpAddr src = IpAddr::v4(uint8_t(rng.below(256)), uint8_t(rng.below(256)),
                                uint8_t(rng.below(256)), uint8_t(rng.below(256)));
        IpAddr dst = IpAddr::v4(uint8_t(rng.below(256)), uint8_t(rng.below(256)),
                                uint8_t(rng.below(256)), uint8_t(rng.below(256)));
        bool src_local = false;
        for (const auto& p : prefixes)
            if (p.contains(src)) src_local = true;
        auto [dir, flag] = classify_direction(src, dst, prefixes);
        CHECK(dir == (src_local ? Direction::UPSTREAM : Direction::DOWNSTREAM));
    }
}

TEST_CASE("tls parser survives fuzzing and never emits an SNI-free client hello") {
    Rng rng(123);
    for (int i = 0; i < 20000; ++i) {
        size_t len = rng.below(400);
        std::vector<uint8_t> buf(len);
        for (auto& b : buf) b = uint8_t(rng.next());
        if (i % 3 == 0 && len >= 3) {
            buf[0] = uint8_t(20 + rng.below(4)); // bias toward TLS-looking records
            buf[1] = 3;
            buf[2] = uint8_t(rng.below(5));
        }
        TlsMeta meta = parse_tls_client_hello(buf);
        if (meta.record_kind == TlsRecordKind::CLIENT_HELLO) CHECK(!meta.sni.empty());
        if (meta.record_kind != TlsRecordKind::CLIENT_HELLO) CHECK(meta.sni.empty());
    }
}

TEST_CASE("payload lengths round-trip through pcap against generation ground truth") {
    TempDir tmp;
    auto path = tmp.file("bg.pcap");
    auto set = builtin_signature_set();
    BackgroundOptions opts;
    auto packets = generate_background(120, 5, set, opts);
    REQUIRE(packets.size() > 1000);
    emit_pcap(packets, path);

    PacketReader reader(file_source(path));
    size_t i = 0;
    while (auto rec = reader.next()) {
        REQUIRE(i < packets.size());
        CHECK(rec->payload_len == packets[i].payload_size);
        CHECK(rec->timestamp == ts_to_seconds(packets[i].ts_us));
        CHECK(rec->src_port == packets[i].src_port);
        i++;
    }
    CHECK(i == packets.size());

    // replaying the same file twice yields identical sequences
    PacketReader reader2(file_source(path));
    size_t j = 0;
    while (auto rec = reader2.next()) j++;
    CHECK(j == i);
}
