#include <doctest.h>

#include "vrmon/errors.hpp"
#include "vrmon/signatures.hpp"
#include "vrmon/sigtrain.hpp"
#include "vrmon/synth.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

using namespace vrmon;
using namespace testutil;

TEST_CASE("table fixtures match their published labels") {
    auto set = builtin_signature_set();
    SignatureMatcher matcher(set);

    auto m = matcher.match_primary(std::vector<uint32_t>{414, 75, 6, 45, 338});
    CHECK(m.kind == MatchKind::MATCH);
    CHECK(m.metaverse == "Multiverse");
    CHECK(m.domain == "shapevrcloud");
    CHECK(m.prefix == "prod");

    m = matcher.match_primary(std::vector<uint32_t>{244, 134, 490});
    CHECK(m.kind == MatchKind::MATCH);
    CHECK(m.metaverse == "VRChat");
    CHECK(m.prefix == "pipeline");

    CHECK(matcher.match_primary(std::vector<uint32_t>{414, 75, 6, 45, 339}).kind ==
          MatchKind::REJECT);
    CHECK(matcher.match_primary(std::vector<uint32_t>{414, 75}).kind == MatchKind::PENDING);

    auto u = matcher.match_udp(5055, std::vector<uint32_t>{56, 86, 32, 143});
    CHECK(u.kind == MatchKind::MATCH);
    CHECK(u.metaverse == "Multiverse");
    u = matcher.match_udp(5055, std::vector<uint32_t>{13, 13, 13, 13, 13});
    CHECK(u.kind == MatchKind::MATCH);
    CHECK(u.metaverse == "RecRoom");
    CHECK(matcher.match_udp(5055, std::vector<uint32_t>{56, 86, 32, 144}).kind ==
          MatchKind::REJECT);
    CHECK(matcher.match_udp(4000, std::vector<uint32_t>{56, 86, 32, 143}).kind ==
          MatchKind::REJECT);
}

TEST_CASE("trie matching equals a brute-force linear scan") {
    auto set = builtin_signature_set();
    SignatureMatcher matcher(set);
    Rng rng(99);

    auto random_seq = [&](size_t max_len) {
        std::vector<uint32_t> seq(1 + rng.below(max_len));
        for (auto& v : seq) v = uint32_t(1 + rng.below(1400));
        return seq;
    };

    for (int i = 0; i < 5000; ++i) {
        std::vector<uint32_t> seq;
        switch (rng.below(4)) {
        case 0: seq = random_seq(8); break;
        case 1: { // prefix of a real signature
            const auto& sig = set.primaries[size_t(rng.below(set.primaries.size()))];
            seq.assign(sig.size_seq.begin(),
                       sig.size_seq.begin() + long(1 + rng.below(sig.size_seq.size())));
            break;
        }
        case 2: { // distance-1 mutation
            const auto& sig = set.primaries[size_t(rng.below(set.primaries.size()))];
            seq = sig.size_seq;
            seq[size_t(rng.below(seq.size()))] += 1;
            break;
        }
        case 3: { // extension past a full signature
            const auto& sig = set.primaries[size_t(rng.below(set.primaries.size()))];
            seq = sig.size_seq;
            seq.push_back(uint32_t(1 + rng.below(1400)));
            break;
        }
        }
        std::string mv, pfx;
        auto expected = oracle::scan_primary(set, seq, &mv, &pfx);
        auto got = matcher.match_primary(seq);
        CHECK(got.kind == expected);
        if (expected == MatchKind::MATCH) {
            CHECK(got.metaverse == mv);
            CHECK(got.prefix == pfx);
        }
    }

    for (int i = 0; i < 3000; ++i) {
        uint16_t port = uint16_t(rng.below(2) ? 5055 + rng.below(4) : 4000 + rng.below(3000));
        std::vector<uint32_t> seq;
        if (rng.below(2) && !set.udp.empty()) {
            const auto& sig = set.udp[size_t(rng.below(set.udp.size()))];
            seq.assign(sig.size_seq.begin(),
                       sig.size_seq.begin() + long(1 + rng.below(sig.size_seq.size())));
            if (rng.below(2)) port = sig.port;
        } else {
            seq = random_seq(7);
        }
        std::string mv;
        auto expected = oracle::scan_udp(set, port, seq, &mv);
        auto got = matcher.match_udp(port, seq);
        CHECK(got.kind == expected);
        if (expected == MatchKind::MATCH) CHECK(got.metaverse == mv);
    }
}

TEST_CASE("pending is prefix-closed") {
    auto set = builtin_signature_set();
    SignatureMatcher matcher(set);
    for (const auto& sig : set.primaries) {
        for (size_t len = 1; len < sig.size_seq.size(); ++len) {
            std::vector<uint32_t> prefix(sig.size_seq.begin(), sig.size_seq.begin() + long(len));
            auto kind = matcher.match_primary(prefix).kind;
            CHECK((kind == MatchKind::PENDING || kind == MatchKind::MATCH));
        }
    }
}

TEST_CASE("model file round trip is lossless and stable") {
    TempDir tmp;
    auto set = builtin_signature_set();
    auto path = tmp.file("model.json");
    save_model(set, path);
    auto loaded = load_model(path);
    auto sorted_prims = [](std::vector<PrimarySignature> v) {
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
            return std::tie(a.metaverse, a.prefix, a.size_seq) <
                   std::tie(b.metaverse, b.prefix, b.size_seq);
        });
        return v;
    };
    auto sorted_udp = [](std::vector<UdpSignature> v) {
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
            return std::tie(a.metaverse, a.port, a.size_seq) <
                   std::tie(b.metaverse, b.port, b.size_seq);
        });
        return v;
    };
    CHECK(sorted_prims(loaded.primaries) == sorted_prims(set.primaries));
    CHECK(sorted_udp(loaded.udp) == sorted_udp(set.udp));
    CHECK(loaded.initial_hs_prefixes == set.initial_hs_prefixes);
    CHECK(loaded.created_at == set.created_at);

    auto path2 = tmp.file("model2.json");
    save_model(loaded, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("empty model round trips") {
    TempDir tmp;
    SignatureSet empty;
    auto path = tmp.file("empty.json");
    save_model(empty, path);
    auto loaded = load_model(path);
    CHECK(loaded.primaries.empty());
    CHECK(loaded.udp.empty());
}

TEST_CASE("model schema and corruption errors") {
    TempDir tmp;
    auto set = builtin_signature_set();
    auto path = tmp.file("model.json");
    save_model(set, path);

    SUBCASE("version bump") {
        auto text = slurp(path);
        auto pos = text.find("\"version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 12, "\"version\": 9");
        try {
            model_from_json(text);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::SchemaMismatch);
        }
    }
    SUBCASE("truncated file") {
        auto text = slurp(path).substr(0, 100);
        try {
            model_from_json(text);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::CorruptModel);
        }
    }
    SUBCASE("duplicate signature") {
        auto bad = set;
        bad.primaries.push_back(bad.primaries[0]);
        CHECK_THROWS_AS(bad.validate(), Error);
    }
}

namespace {

// Training corpus: generated sessions written out as pcaps.
std::vector<std::string> write_session_pcaps(const TempDir& tmp, const std::string& app,
                                             int count, uint64_t seed_base) {
    auto set = builtin_signature_set();
    auto profiles = load_profiles(std::string(VRMON_DATA_DIR) + "/profiles.json");
    std::vector<std::string> paths;
    for (int i = 0; i < count; ++i) {
        SessionScript script;
        script.metaverse = app;
        script.user_ip = IpAddr::v4(10, 0, uint8_t(1 + i), 5);
        script.seed = seed_base + uint64_t(i);
        script.start_ts = 1700000000.0;
        script.segments = {{StateLabel::HS, 30}, {StateLabel::SUE, 30}};
        auto trace = generate_session(script, set, profiles);
        auto path = tmp.file(app + "_" + std::to_string(i) + ".pcap");
        emit_pcap(trace.packets, path);
        paths.push_back(path);
    }
    return paths;
}

const std::vector<Cidr> kLocal = {*Cidr::parse("10.0.0.0/8")};

} // namespace

TEST_CASE("primary-signature training round-trips through the generator") {
    TempDir tmp;
    auto set = builtin_signature_set();
    for (const std::string app : {"Multiverse", "RecRoom"}) {
        auto domain = *set.domain_of(app);
        auto paths = write_session_pcaps(tmp, app, 2, 42);
        auto trained = train_primary_signatures(paths, domain, app, kLocal);

        CHECK(trained.prefix_order == set.initial_hs_prefixes.at(app));
        std::vector<PrimarySignature> expected;
        for (const auto& s : set.primaries)
            if (s.metaverse == app) expected.push_back(s);
        auto sorted = [](std::vector<PrimarySignature> v) {
            std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
                return std::tie(a.prefix, a.size_seq) < std::tie(b.prefix, b.size_seq);
            });
            return v;
        };
        CHECK(sorted(trained.signatures) == sorted(expected));
    }
}

TEST_CASE("training without any primary flow fails loudly") {
    TempDir tmp;
    auto set = builtin_signature_set();
    BackgroundOptions opts;
    auto bg = generate_background(50, 3, set, opts);
    auto path = tmp.file("bg.pcap");
    emit_pcap(bg, path);
    try {
        train_primary_signatures({path}, "shapevrcloud", "Multiverse", kLocal);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoPrimaryFlows);
    }
}

TEST_CASE("sessions disagreeing on the prefix set fail training") {
    TempDir tmp;
    auto set = builtin_signature_set();
    // Session A: normal Multiverse. Session B: same domain but only the
    // prod prefix (prodblobs never appears).
    auto paths = write_session_pcaps(tmp, "Multiverse", 1, 7);
    SignatureSet crippled = set;
    crippled.primaries.erase(
        std::remove_if(crippled.primaries.begin(), crippled.primaries.end(),
                       [](const PrimarySignature& s) { return s.prefix == "prodblobs"; }),
        crippled.primaries.end());
    crippled.initial_hs_prefixes["Multiverse"] = {"prod"};
    auto profiles = load_profiles(std::string(VRMON_DATA_DIR) + "/profiles.json");
    SessionScript script;
    script.metaverse = "Multiverse";
    script.user_ip = IpAddr::v4(10, 0, 99, 5);
    script.seed = 8;
    script.start_ts = 1700000000.0;
    script.segments = {{StateLabel::HS, 30}};
    auto trace = generate_session(script, crippled, profiles);
    auto path_b = tmp.file("crippled.pcap");
    emit_pcap(trace.packets, path_b);
    paths.push_back(path_b);

    try {
        train_primary_signatures(paths, "shapevrcloud", "Multiverse", kLocal);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InconsistentPrefixOrder);
    }
}

TEST_CASE("udp training recovers the generating signatures") {
    TempDir tmp;
    auto set = builtin_signature_set();
    UdpTrainConfig cfg;
    std::vector<LabeledCapture> captures;
    for (const std::string app : {"Multiverse", "VRChat", "RecRoom", "AltSpaceVR"}) {
        auto paths = write_session_pcaps(tmp, app, 1, 11);
        for (auto& p : paths) captures.push_back({p, app});
        for (const auto& sig : set.udp)
            if (sig.metaverse == app) cfg.lengths[{app, sig.port}] = sig.size_seq.size();
    }
    auto trained = train_udp_signatures(captures, set.udp_ports(), cfg, kLocal);

    // every generated flow's port was visited at least once per app, so
    // the trained set must be a subset of the generating one; check that
    // whatever was seen matches exactly.
    for (const auto& t : trained) {
        bool found = false;
        for (const auto& s : set.udp)
            if (s.metaverse == t.metaverse && s.port == t.port && s.size_seq == t.size_seq)
                found = true;
        CHECK(found);
    }
    CHECK(!trained.empty());
}

TEST_CASE("identical udp sequences across metaverses are ambiguous") {
    TempDir tmp;
    // hand-build two captures where different apps emit the same port-5055 flow
    auto make = [&](const std::string& name, uint64_t seed) {
        std::vector<SynthPacket> pkts;
        uint64_t t = 1700000000ull * 1000000ull;
        for (uint32_t size : {56u, 86u, 32u, 143u}) {
            SynthPacket p;
            p.ts_us = t;
            p.src_ip = IpAddr::v4(10, 0, uint8_t(seed), 5);
            p.dst_ip = IpAddr::v4(172, 65, 0, 1);
            p.src_port = 40000;
            p.dst_port = 5055;
            p.transport = Transport::UDP;
            p.payload_size = size;
            pkts.push_back(p);
            t += 20000;
        }
        auto path = tmp.file(name);
        emit_pcap(pkts, path);
        return path;
    };
    std::vector<LabeledCapture> captures = {{make("a.pcap", 1), "AppA"},
                                            {make("b.pcap", 2), "AppB"}};
    try {
        train_udp_signatures(captures, {5055}, UdpTrainConfig{}, kLocal);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::AmbiguousSignature);
    }
}

TEST_CASE("training is deterministic over the same corpus") {
    TempDir tmp;
    auto set = builtin_signature_set();
    auto paths = write_session_pcaps(tmp, "VRChat", 2, 21);
    auto t1 = train_primary_signatures(paths, "vrchat", "VRChat", kLocal);
    auto t2 = train_primary_signatures(paths, "vrchat", "VRChat", kLocal);
    SignatureSet s1, s2;
    s1.primaries = t1.signatures;
    s1.initial_hs_prefixes["VRChat"] = t1.prefix_order;
    s2.primaries = t2.signatures;
    s2.initial_hs_prefixes["VRChat"] = t2.prefix_order;
    CHECK(model_to_json(s1) == model_to_json(s2));
}
