#include <doctest.h>

#include "vrmon/capture.hpp"
#include "vrmon/errors.hpp"
#include "vrmon/synth.hpp"

#include "helpers.hpp"

using namespace vrmon;
using namespace testutil;

namespace {

ProfileSet profiles() {
    return load_profiles(std::string(VRMON_DATA_DIR) + "/profiles.json");
}

SessionScript basic_script(const char* app, uint64_t seed,
                           std::vector<ScriptSegment> segments) {
    SessionScript s;
    s.metaverse = app;
    s.user_ip = *IpAddr::parse("10.0.0.5");
    s.seed = seed;
    s.start_ts = 1700000000.0;
    s.segments = std::move(segments);
    return s;
}

} // namespace

TEST_CASE("generation is deterministic in script and seed") {
    auto set = builtin_signature_set();
    auto prof = profiles();
    auto script = basic_script("Multiverse", 42, {{StateLabel::HS, 40}, {StateLabel::MH, 60}});
    auto t1 = generate_session(script, set, prof);
    auto t2 = generate_session(script, set, prof);
    REQUIRE(t1.packets.size() == t2.packets.size());
    for (size_t i = 0; i < t1.packets.size(); ++i) {
        CHECK(t1.packets[i].ts_us == t2.packets[i].ts_us);
        CHECK(t1.packets[i].payload_size == t2.packets[i].payload_size);
        CHECK(t1.packets[i].src_port == t2.packets[i].src_port);
    }
    CHECK(sidecar_to_json({{t1.sidecar}}) == sidecar_to_json({{t2.sidecar}}));

    script.seed = 43;
    auto t3 = generate_session(script, set, prof);
    bool differs = t3.packets.size() != t1.packets.size();
    for (size_t i = 0; !differs && i < t1.packets.size(); ++i)
        differs = t1.packets[i].payload_size != t3.packets[i].payload_size ||
                  t1.packets[i].ts_us != t3.packets[i].ts_us;
    CHECK(differs);
}

TEST_CASE("zero-duration script emits a handshake-only trace with no intervals") {
    auto set = builtin_signature_set();
    auto prof = profiles();
    auto script = basic_script("Multiverse", 1, {{StateLabel::HS, 0}});
    auto trace = generate_session(script, set, prof);
    CHECK(trace.sidecar.interval_states.empty());
    CHECK(!trace.packets.empty());
    // nothing but the founding flows
    for (const auto& p : trace.packets) CHECK(p.transport == Transport::TCP);
    CHECK(trace.packets.size() < 100);
}

TEST_CASE("scripting a state outside the app's subset fails") {
    auto set = builtin_signature_set();
    auto prof = profiles();
    auto script = basic_script("VRChat", 1, {{StateLabel::HS, 20}, {StateLabel::MH, 20}});
    try {
        generate_session(script, set, prof);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownStateForApp);
    }
}

TEST_CASE("opening flows reproduce their signatures exactly") {
    auto set = builtin_signature_set();
    SignatureMatcher matcher(set);
    auto prof = profiles();
    for (const std::string app : {"Multiverse", "VRChat", "RecRoom", "AltSpaceVR"}) {
        auto script = basic_script(app.c_str(), 5, {{StateLabel::HS, 20}});
        auto trace = generate_session(script, set, prof);

        // collect upstream size sequences per TCP flow
        std::map<uint16_t, std::vector<uint32_t>> seqs; // sport -> sizes
        for (const auto& p : trace.packets) {
            if (p.transport != Transport::TCP || p.payload_size == 0) continue;
            if (p.dst_port != 443) continue;
            auto& seq = seqs[p.src_port];
            if (seq.size() < 8) seq.push_back(p.payload_size);
        }
        size_t expected_flows = 0;
        for (const auto& sig : set.primaries)
            if (sig.metaverse == app) expected_flows++;
        REQUIRE(seqs.size() == expected_flows);
        for (const auto& [sport, seq] : seqs) {
            bool matched = false;
            for (size_t len = 1; len <= seq.size() && !matched; ++len)
                matched = matcher.match_primary(std::span(seq.data(), len)).kind ==
                          MatchKind::MATCH;
            CHECK(matched);
        }
    }
}

TEST_CASE("udp stream rate honors the profile within twenty percent") {
    auto set = builtin_signature_set();
    auto prof = profiles();
    auto script = basic_script("Multiverse", 9, {{StateLabel::HS, 20}, {StateLabel::MH, 90}});
    auto trace = generate_session(script, set, prof);

    uint64_t first = UINT64_MAX, last = 0, count = 0;
    for (const auto& p : trace.packets) {
        if (p.transport != Transport::UDP) continue;
        if (p.src_ip != script.user_ip) continue;
        first = std::min(first, p.ts_us);
        last = std::max(last, p.ts_us);
        count++;
    }
    REQUIRE(count > 0);
    double span_s = double(last - first) * 1e-6;
    REQUIRE(span_s >= 60.0);
    double pps = double(count) / span_s;
    CHECK(pps > 30.0 * 0.8);
    CHECK(pps < 30.0 * 1.2);
}

TEST_CASE("sidecar intervals follow the scripted states") {
    auto set = builtin_signature_set();
    auto prof = profiles();
    auto script = basic_script("Multiverse", 17,
                               {{StateLabel::HS, 40}, {StateLabel::MH, 60}, {StateLabel::AT, 60}});
    auto trace = generate_session(script, set, prof);
    const auto& states = trace.sidecar.interval_states;
    REQUIRE(states.size() >= 14);
    CHECK(states[0] == StateLabel::HS);
    CHECK(states[1] == StateLabel::HS);
    CHECK(states[5] == StateLabel::MH);
    CHECK(states[12] == StateLabel::AT);
    // no state outside the script appears
    for (auto s : states)
        CHECK((s == StateLabel::HS || s == StateLabel::MH || s == StateLabel::AT));
}

TEST_CASE("pcap emission round-trips the logical stream") {
    TempDir tmp;
    auto set = builtin_signature_set();
    auto prof = profiles();
    auto script = basic_script("RecRoom", 23, {{StateLabel::HS, 30}, {StateLabel::SUE, 30}});
    auto trace = generate_session(script, set, prof);
    REQUIRE(trace.packets.size() > 1000);

    auto path = tmp.file("trace.pcap");
    emit_pcap(trace.packets, path);

    CaptureSource src;
    src.path = path;
    src.local_prefixes = {*Cidr::parse("10.0.0.0/8")};
    PacketReader reader(src);
    size_t i = 0;
    uint64_t prev_us = 0;
    while (auto rec = reader.next()) {
        REQUIRE(i < trace.packets.size());
        const auto& sp = trace.packets[i];
        CHECK(rec->timestamp == ts_to_seconds(sp.ts_us));
        CHECK(rec->payload_len == sp.payload_size);
        CHECK(rec->transport == sp.transport);
        CHECK(rec->src_ip == sp.src_ip);
        CHECK(rec->dst_ip == sp.dst_ip);
        CHECK(sp.ts_us >= prev_us); // non-decreasing timestamps
        prev_us = sp.ts_us;
        i++;
    }
    CHECK(i == trace.packets.size());

    SUBCASE("empty stream writes a header-only file") {
        auto empty_path = tmp.file("empty.pcap");
        emit_pcap({}, empty_path);
        CHECK(slurp(empty_path).size() == 24);
    }

    SUBCASE("fixed seed yields byte-identical pcaps") {
        auto path2 = tmp.file("trace2.pcap");
        auto again = generate_session(script, set, prof);
        emit_pcap(again.packets, path2);
        CHECK(slurp(path) == slurp(path2));
    }
}

TEST_CASE("background traffic avoids the signature set unless collisions are planted") {
    auto set = builtin_signature_set();
    SignatureMatcher matcher(set);
    BackgroundOptions opts;
    opts.end_us = opts.begin_us + 300 * 1000000ull;

    SUBCASE("no flows, no packets") {
        CHECK(generate_background(0, 1, set, opts).empty());
    }

    SUBCASE("collision-excluded flows never match") {
        auto packets = generate_background(20000, 7, set, opts);
        std::map<FlowKey, std::vector<uint32_t>> flows;
        std::vector<Cidr> local = {*Cidr::parse("10.0.0.0/8")};
        for (const auto& p : packets) {
            if (p.payload_size == 0) continue;
            if (!in_any_prefix(p.src_ip, local)) continue;
            auto& seq = flows[FlowKey{p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.transport}];
            if (seq.size() < 8) seq.push_back(p.payload_size);
        }
        size_t matches = 0;
        for (const auto& [key, seq] : flows) {
            for (size_t len = 1; len <= seq.size(); ++len) {
                auto kind = key.transport == Transport::TCP
                                ? matcher.match_primary(std::span(seq.data(), len)).kind
                                : matcher.match_udp(key.dst_port, std::span(seq.data(), len)).kind;
                if (kind == MatchKind::MATCH) matches++;
            }
        }
        CHECK(matches == 0);
    }

    SUBCASE("planted duplicates match exactly as many flows as planted") {
        auto opts2 = opts;
        opts2.exclude_collisions = false;
        opts2.planted_duplicates = 5;
        auto packets = generate_background(500, 11, set, opts2);
        std::map<FlowKey, std::vector<uint32_t>> flows;
        std::vector<Cidr> local = {*Cidr::parse("10.0.0.0/8")};
        for (const auto& p : packets) {
            if (p.payload_size == 0 || p.transport != Transport::TCP) continue;
            if (!in_any_prefix(p.src_ip, local)) continue;
            auto& seq = flows[FlowKey{p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.transport}];
            if (seq.size() < 8) seq.push_back(p.payload_size);
        }
        size_t matched_flows = 0;
        for (const auto& [key, seq] : flows)
            for (size_t len = 1; len <= seq.size(); ++len)
                if (matcher.match_primary(std::span(seq.data(), len)).kind == MatchKind::MATCH) {
                    matched_flows++;
                    break;
                }
        CHECK(matched_flows == 5);
    }
}

TEST_CASE("script json round trip") {
    auto script = basic_script("Multiverse", 3, {{StateLabel::HS, 30}, {StateLabel::SUE, 50}});
    auto text = script_to_json(script);
    auto parsed = script_from_json(text);
    CHECK(parsed.metaverse == script.metaverse);
    CHECK(parsed.seed == script.seed);
    REQUIRE(parsed.segments.size() == 2);
    CHECK(parsed.segments[1].duration == 50);

    CHECK_THROWS_AS(script_from_json("{\"metaverse\": \"X\""), Error);
    // scripts must open in HS
    CHECK_THROWS_AS(
        script_from_json(
            R"({"metaverse":"Multiverse","user_ip":"10.0.0.1","states":[{"state":"MH","duration":10}]})"),
        Error);
}

TEST_CASE("sidecar json round trip") {
    auto set = builtin_signature_set();
    auto prof = profiles();
    auto script = basic_script("Multiverse", 31, {{StateLabel::HS, 30}, {StateLabel::MH, 40}});
    auto trace = generate_session(script, set, prof);
    SidecarFile file{{trace.sidecar}};
    auto text = sidecar_to_json(file);
    auto parsed = sidecar_from_json(text);
    REQUIRE(parsed.sessions.size() == 1);
    CHECK(parsed.sessions[0].session_start == trace.sidecar.session_start);
    CHECK(parsed.sessions[0].interval_states == trace.sidecar.interval_states);
    CHECK(parsed.sessions[0].flows.size() == trace.sidecar.flows.size());
    CHECK(sidecar_to_json(parsed) == text);
}
