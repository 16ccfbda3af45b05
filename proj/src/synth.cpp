#include "vrmon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vrmon/errors.hpp"
#include "vrmon/pcap.hpp"
#include "vrmon/wire.hpp"

namespace vrmon {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr uint64_t kUsPerSec = 1000000;
constexpr uint64_t kIntervalUs = 10 * kUsPerSec;

uint64_t to_us(double seconds) {
    return uint64_t(std::llround(seconds * 1e6));
}

} // namespace

double ts_to_seconds(uint64_t ts_us) {
    // Matches the capture reader's sec + usec * 1e-6 arithmetic so a
    // pcap round trip reproduces identical doubles.
    return double(ts_us / kUsPerSec) + double(ts_us % kUsPerSec) * 1e-6;
}

double Distribution::sample(Rng& rng) const {
    double v = 0;
    switch (kind) {
    case Kind::CONSTANT: v = a; break;
    case Kind::UNIFORM: v = rng.uniform(a, b); break;
    case Kind::NORMAL: v = rng.normal(a, b); break;
    }
    return v < 0 ? 0 : v;
}

namespace {

Distribution dist_from_json(const ordered_json& j) {
    Distribution d;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") {
        d.kind = Distribution::Kind::CONSTANT;
        d.a = j.at("value").get<double>();
    } else if (kind == "uniform") {
        d.kind = Distribution::Kind::UNIFORM;
        d.a = j.at("lo").get<double>();
        d.b = j.at("hi").get<double>();
    } else if (kind == "normal") {
        d.kind = Distribution::Kind::NORMAL;
        d.a = j.at("mean").get<double>();
        d.b = j.at("sd").get<double>();
    } else {
        throw Error(ErrorCode::ConfigError, "unknown distribution kind '" + kind + "'");
    }
    return d;
}

Distribution dist_or(const ordered_json& j, const char* field, Distribution fallback) {
    if (!j.contains(field)) return fallback;
    return dist_from_json(j.at(field));
}

} // namespace

ProfileSet profiles_from_json(const std::string& text) {
    ordered_json root;
    try {
        root = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("unparseable profiles file: ") + e.what());
    }
    try {
        ProfileSet set;
        for (const auto& [app_name, japp] : root.at("apps").items()) {
            AppProfile app;
            for (const auto& s : japp.at("allowed_states")) {
                auto state = state_from_name(s.get<std::string>());
                if (!state) throw Error(ErrorCode::ConfigError, "unknown state in allowed_states");
                app.allowed_states.push_back(*state);
            }
            app.crowd = dist_or(japp, "crowd", Distribution::constant(1.0));
            for (const auto& [state_name_str, jstate] : japp.at("states").items()) {
                auto state = state_from_name(state_name_str);
                if (!state)
                    throw Error(ErrorCode::ConfigError, "unknown state '" + state_name_str + "'");
                StateProfile sp;
                sp.duration = dist_or(jstate, "duration", Distribution::constant(60));
                const auto& jtcp = jstate.at("primary_tcp");
                sp.primary_tcp.new_flows_per_interval =
                    dist_or(jtcp, "new_flows_per_interval", Distribution::constant(0));
                sp.primary_tcp.flow_volume_up =
                    dist_or(jtcp, "flow_volume_up", Distribution::constant(0));
                sp.primary_tcp.ongoing_volume_per_interval =
                    dist_or(jtcp, "ongoing_volume_per_interval", Distribution::constant(0));
                sp.primary_tcp.packet_size =
                    dist_or(jtcp, "packet_size", Distribution::constant(1200));
                sp.primary_tcp.burst_at_entry = jtcp.value("burst_at_entry", false);
                sp.primary_tcp.entry_burst_flows =
                    dist_or(jtcp, "entry_burst_flows", Distribution::constant(0));
                sp.primary_tcp.entry_burst_volume =
                    dist_or(jtcp, "entry_burst_volume", Distribution::constant(0));
                const auto& judp = jstate.at("time_critical_udp");
                sp.time_critical_udp.active = judp.value("active", false);
                sp.time_critical_udp.continue_previous = judp.value("continue_previous", false);
                sp.time_critical_udp.upstream_pps =
                    dist_or(judp, "upstream_pps", Distribution::constant(0));
                sp.time_critical_udp.downstream_pps =
                    dist_or(judp, "downstream_pps", Distribution::constant(0));
                sp.time_critical_udp.packet_size =
                    dist_or(judp, "packet_size", Distribution::constant(80));
                sp.spike_period_s = jstate.value("spike_period_s", 0.0);
                sp.spike_volume_up = dist_or(jstate, "spike_volume_up", Distribution::constant(0));
                app.states[*state] = std::move(sp);
            }
            set.apps[app_name] = std::move(app);
        }
        return set;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("malformed profiles file: ") + e.what());
    }
}

ProfileSet load_profiles(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open profiles file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return profiles_from_json(ss.str());
}

SessionScript script_from_json(const std::string& text) {
    ordered_json root;
    try {
        root = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("unparseable script: ") + e.what());
    }
    try {
        SessionScript script;
        script.metaverse = root.at("metaverse").get<std::string>();
        auto ip = IpAddr::parse(root.at("user_ip").get<std::string>());
        if (!ip) throw Error(ErrorCode::ConfigError, "bad user_ip in script");
        script.user_ip = *ip;
        script.seed = root.value("seed", 1ull);
        script.start_ts = root.value("start_ts", 1700000000.0);
        if (root.contains("primary_rtt_ms"))
            script.primary_rtt_ms = root.at("primary_rtt_ms").get<std::vector<double>>();
        if (script.primary_rtt_ms.empty()) script.primary_rtt_ms = {12};
        for (const auto& seg : root.at("states")) {
            ScriptSegment s;
            auto state = state_from_name(seg.at("state").get<std::string>());
            if (!state) throw Error(ErrorCode::ConfigError, "unknown state in script");
            s.state = *state;
            s.duration = seg.value("duration", -1.0);
            script.segments.push_back(s);
        }
        if (script.segments.empty() || script.segments[0].state != StateLabel::HS)
            throw Error(ErrorCode::ConfigError, "scripts must open with an HS segment");
        return script;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("malformed script: ") + e.what());
    }
}

std::string script_to_json(const SessionScript& script) {
    ordered_json root;
    root["metaverse"] = script.metaverse;
    root["user_ip"] = script.user_ip.to_string();
    root["seed"] = script.seed;
    root["start_ts"] = script.start_ts;
    root["primary_rtt_ms"] = script.primary_rtt_ms;
    root["states"] = ordered_json::array();
    for (const auto& seg : script.segments)
        root["states"].push_back(
            ordered_json{{"state", state_name(seg.state)}, {"duration", seg.duration}});
    return root.dump(2) + "\n";
}

SessionScript make_random_script(const std::string& metaverse, const AppProfile& profile,
                                 const IpAddr& user, uint64_t seed, double start_ts,
                                 double target_duration) {
    SessionScript script;
    script.metaverse = metaverse;
    script.user_ip = user;
    script.seed = seed;
    script.start_ts = start_ts;

    Rng rng(seed ^ 0xc0ffee);
    auto duration_of = [&](StateLabel s) {
        auto it = profile.states.find(s);
        double d = it == profile.states.end() ? 60.0 : it->second.duration.sample(rng);
        return std::max(30.0, std::round(d / 10.0) * 10.0); // multiples of the interval
    };

    StateLabel current = StateLabel::HS;
    double total = 0;
    script.segments.push_back({current, duration_of(current)});
    total += script.segments.back().duration;
    while (total < target_duration) {
        // HS re-entry is possible but uncommon.
        std::vector<StateLabel> pool;
        for (StateLabel s : profile.allowed_states) {
            if (s == current) continue;
            size_t weight = s == StateLabel::HS ? 1 : 3;
            for (size_t i = 0; i < weight; ++i) pool.push_back(s);
        }
        if (pool.empty()) break;
        current = pool[size_t(rng.below(pool.size()))];
        script.segments.push_back({current, duration_of(current)});
        total += script.segments.back().duration;
    }
    return script;
}

namespace {

// --- TLS payload builders -------------------------------------------------

void put16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

// Client hello of exactly `size` bytes carrying the SNI; slack is
// absorbed by the session-id and a padding extension.
std::vector<uint8_t> build_client_hello(uint32_t size, const std::string& sni, Rng& rng) {
    const uint32_t n = uint32_t(sni.size());
    const uint32_t base = 61 + n; // record and handshake headers + fixed body + SNI extension
    if (size < base)
        throw Error(ErrorCode::ConfigError,
                    "client hello size " + std::to_string(size) + " cannot carry SNI '" + sni + "'");
    uint32_t slack = size - base;
    uint32_t sid_len = 0, pad = 0;
    if (slack >= 4) {
        pad = slack - 4;
    } else {
        sid_len = slack; // 1..3 byte remainders
    }

    std::vector<uint8_t> ext;
    put16(ext, 0); // server_name
    put16(ext, uint16_t(n + 5));
    put16(ext, uint16_t(n + 3));
    ext.push_back(0);
    put16(ext, uint16_t(n));
    ext.insert(ext.end(), sni.begin(), sni.end());
    if (slack >= 4) {
        put16(ext, 21); // padding
        put16(ext, uint16_t(pad));
        ext.insert(ext.end(), pad, 0);
    }

    std::vector<uint8_t> body;
    put16(body, 0x0303);
    for (int i = 0; i < 32; ++i) body.push_back(uint8_t(rng.next()));
    body.push_back(uint8_t(sid_len));
    for (uint32_t i = 0; i < sid_len; ++i) body.push_back(uint8_t(rng.next()));
    put16(body, 2); // one cipher suite
    put16(body, 0x1301);
    body.push_back(1);
    body.push_back(0);
    put16(body, uint16_t(ext.size()));
    body.insert(body.end(), ext.begin(), ext.end());

    std::vector<uint8_t> out;
    out.push_back(22);
    out.push_back(3);
    out.push_back(1);
    put16(out, uint16_t(body.size() + 4));
    out.push_back(1); // client hello
    out.push_back(uint8_t(body.size() >> 16));
    put16(out, uint16_t(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

// Generic TLS record filler: handshake (22) mid-sequence, application
// data (23) for the final element.
std::vector<uint8_t> build_tls_record(uint8_t type, uint32_t size) {
    std::vector<uint8_t> out(size, 0);
    if (size >= 5) {
        out[0] = type;
        out[1] = 3;
        out[2] = 3;
        out[3] = uint8_t((size - 5) >> 8);
        out[4] = uint8_t(size - 5);
    }
    return out;
}

// --- generator state ------------------------------------------------------

struct TcpFlowSim {
    IpAddr user, server;
    uint16_t sport = 0;
    uint32_t seq_up = 0, seq_down = 0;
    double rtt_ms = 12;
    uint64_t last_ts = 0;
    size_t sidecar_index = 0;
};

struct UdpFlowSim {
    IpAddr user, server;
    uint16_t sport = 0, dport = 0;
    size_t sidecar_index = 0;
};

struct SessionGen {
    const SessionScript& script;
    const SignatureSet& sigs;
    const AppProfile& app;
    double interval_len;
    Rng rng;

    std::vector<SynthPacket> packets;
    SessionSidecar sidecar;
    uint16_t next_port = 49500;
    size_t rtt_idx = 0;
    std::vector<TcpFlowSim> founding; // handshake flows, reused for ongoing volume
    size_t founding_rr = 0;
    std::optional<UdpFlowSim> current_udp;
    std::map<std::string, uint64_t> prefix_done_us; // first completion per prefix
    size_t udp_port_rr = 0;

    SessionGen(const SessionScript& sc, const SignatureSet& sg, const AppProfile& ap, double il)
        : script(sc), sigs(sg), app(ap), interval_len(il), rng(sc.seed) {}

    uint64_t t0_us() const { return to_us(script.start_ts); }

    IpAddr primary_server(size_t salt) {
        uint32_t h = 2166136261u;
        for (char c : script.metaverse) h = (h ^ uint8_t(c)) * 16777619u;
        return IpAddr::v4(52, uint8_t(40 + h % 60), uint8_t(salt % 4), uint8_t(1 + h % 200));
    }
    IpAddr udp_server(size_t salt) {
        uint32_t h = 2166136261u;
        for (char c : script.metaverse) h = (h ^ uint8_t(c)) * 16777619u;
        return IpAddr::v4(172, 65, uint8_t(h % 200), uint8_t(1 + salt % 200));
    }

    double next_rtt() {
        double r = script.primary_rtt_ms[rtt_idx % script.primary_rtt_ms.size()];
        rtt_idx++;
        return r;
    }

    size_t add_sidecar_flow(const FlowKey& key, DomainType type, std::optional<double> rtt) {
        SidecarFlow f;
        f.key = key;
        f.domain_type = type;
        f.rtt_ms = rtt;
        sidecar.flows.push_back(f);
        return sidecar.flows.size() - 1;
    }

    void touch(size_t sidecar_index, uint64_t ts) {
        auto& f = sidecar.flows[sidecar_index];
        double sec = ts_to_seconds(ts);
        if (f.first_ts == 0) f.first_ts = sec;
        f.last_ts = std::max(f.last_ts, sec);
    }

    uint64_t emit_tcp(TcpFlowSim& flow, uint64_t ts, bool up, uint8_t flags, uint32_t size,
                      std::vector<uint8_t> bytes = {}) {
        // keep per-flow timestamps strictly increasing
        if (ts <= flow.last_ts) ts = flow.last_ts + 1;
        flow.last_ts = ts;
        SynthPacket p;
        p.ts_us = ts;
        p.transport = Transport::TCP;
        if (up) {
            p.src_ip = flow.user;
            p.dst_ip = flow.server;
            p.src_port = flow.sport;
            p.dst_port = 443;
            p.seq = flow.seq_up;
            p.ack = flow.seq_down;
            flow.seq_up += size ? size : ((flags & tcpflags::SYN) ? 1 : 0);
        } else {
            p.src_ip = flow.server;
            p.dst_ip = flow.user;
            p.src_port = 443;
            p.dst_port = flow.sport;
            p.seq = flow.seq_down;
            p.ack = flow.seq_up;
            flow.seq_down += size ? size : ((flags & tcpflags::SYN) ? 1 : 0);
        }
        p.flags = flags;
        p.payload_size = size;
        p.payload_bytes = std::move(bytes);
        touch(flow.sidecar_index, ts);
        packets.push_back(std::move(p));
        return ts;
    }

    // Full TCP + TLS handshake emitting the signature's size sequence;
    // returns the timestamp of the first application-data packet.
    uint64_t open_primary_flow(TcpFlowSim& flow, uint64_t ts, const PrimarySignature& sig) {
        uint64_t rtt = to_us(flow.rtt_ms / 1000.0);
        flow.seq_up = uint32_t(rng.next());
        flow.seq_down = uint32_t(rng.next());
        uint64_t t = emit_tcp(flow, ts, true, tcpflags::SYN, 0);
        t = emit_tcp(flow, t + rtt, false, tcpflags::SYN | tcpflags::ACK, 0);
        t = emit_tcp(flow, t + 300, true, tcpflags::ACK, 0);

        std::string sni =
            sig.prefix.empty() ? sig.domain + ".com" : sig.prefix + "." + sig.domain + ".com";
        t = emit_tcp(flow, t + 500, true, tcpflags::ACK | tcpflags::PSH, sig.size_seq[0],
                     build_client_hello(sig.size_seq[0], sni, rng));
        // server flight
        t = emit_tcp(flow, t + rtt, false, tcpflags::ACK, 1460, build_tls_record(22, 1460));
        t = emit_tcp(flow, t + 200, false, tcpflags::ACK | tcpflags::PSH, 900,
                     build_tls_record(22, 900));
        for (size_t i = 1; i + 1 < sig.size_seq.size(); ++i)
            t = emit_tcp(flow, t + 800, true, tcpflags::ACK | tcpflags::PSH, sig.size_seq[i],
                         build_tls_record(i == 2 ? 20 : 22, sig.size_seq[i]));
        uint64_t done =
            emit_tcp(flow, t + 900, true, tcpflags::ACK | tcpflags::PSH, sig.size_seq.back(),
                     build_tls_record(23, sig.size_seq.back()));
        emit_tcp(flow, done + rtt, false, tcpflags::ACK | tcpflags::PSH, 800,
                 build_tls_record(23, 800));
        return done;
    }

    // Upstream content of `volume` bytes spread over the window, with
    // downstream responses riding along.
    void upload(TcpFlowSim& flow, uint64_t from, uint64_t duration, double volume,
                double pkt_size) {
        if (volume < 1) return;
        uint32_t chunk = uint32_t(std::max(80.0, pkt_size));
        uint64_t n = uint64_t(std::ceil(volume / chunk));
        uint64_t gap = std::max<uint64_t>(200, n > 1 ? duration / n : duration);
        uint64_t t = from;
        double remaining = volume;
        for (uint64_t i = 0; i < n; ++i) {
            uint32_t sz = uint32_t(std::min(remaining, double(chunk)));
            if (sz == 0) break;
            t = emit_tcp(flow, t + gap, true, tcpflags::ACK | tcpflags::PSH, sz);
            remaining -= sz;
            if (i % 3 == 2)
                emit_tcp(flow, t + 150, false, tcpflags::ACK | tcpflags::PSH,
                         uint32_t(800 + rng.below(600)));
        }
    }

    TcpFlowSim make_content_flow() {
        TcpFlowSim flow;
        flow.user = script.user_ip;
        flow.server = primary_server(rng.below(4));
        flow.sport = next_port++;
        flow.rtt_ms = next_rtt();
        FlowKey key{flow.user, flow.server, flow.sport, 443, Transport::TCP};
        flow.sidecar_index = add_sidecar_flow(key, DomainType::PRIMARY, flow.rtt_ms);
        return flow;
    }

    // A content flow opens with one of the app's signatures so stage 1
    // tracks it, then uploads its volume.
    void content_flow(uint64_t ts, double volume, double pkt_size) {
        std::vector<const PrimarySignature*> choices;
        for (const auto& s : sigs.primaries)
            if (s.metaverse == script.metaverse) choices.push_back(&s);
        if (choices.empty()) return;
        const PrimarySignature& sig = *choices[size_t(rng.below(choices.size()))];
        TcpFlowSim flow = make_content_flow();
        uint64_t done = open_primary_flow(flow, ts, sig);
        upload(flow, done + 2000, 4 * kUsPerSec, volume, pkt_size);
    }

    void emit_udp(UdpFlowSim& flow, uint64_t ts, bool up, uint32_t size) {
        SynthPacket p;
        p.ts_us = ts;
        p.transport = Transport::UDP;
        if (up) {
            p.src_ip = flow.user;
            p.dst_ip = flow.server;
            p.src_port = flow.sport;
            p.dst_port = flow.dport;
        } else {
            p.src_ip = flow.server;
            p.dst_ip = flow.user;
            p.src_port = flow.dport;
            p.dst_port = flow.sport;
        }
        p.payload_size = size;
        touch(flow.sidecar_index, ts);
        packets.push_back(std::move(p));
    }

    const UdpSignature* udp_signature_for(uint16_t port) {
        for (const auto& s : sigs.udp)
            if (s.metaverse == script.metaverse && s.port == port) return &s;
        return nullptr;
    }

    UdpFlowSim open_udp_flow(uint64_t ts) {
        auto ports = sigs.udp_ports();
        std::vector<uint16_t> app_ports;
        for (uint16_t p : ports)
            if (udp_signature_for(p)) app_ports.push_back(p);
        UdpFlowSim flow;
        flow.user = script.user_ip;
        flow.dport = app_ports.empty() ? 5055 : app_ports[udp_port_rr++ % app_ports.size()];
        flow.server = udp_server(rng.below(4));
        flow.sport = next_port++;
        FlowKey key{flow.user, flow.server, flow.sport, flow.dport, Transport::UDP};
        flow.sidecar_index = add_sidecar_flow(key, DomainType::TIME_CRITICAL, std::nullopt);
        const UdpSignature* sig = udp_signature_for(flow.dport);
        uint64_t t = ts;
        if (sig) {
            for (uint32_t size : sig->size_seq) {
                emit_udp(flow, t, true, size);
                t += 25000;
            }
        }
        return flow;
    }

    // Poisson stream of position updates over [from, to).
    void udp_stream(UdpFlowSim& flow, uint64_t from, uint64_t to, const UdpStateProfile& prof,
                    double crowd) {
        for (uint64_t win = from; win < to; win += kIntervalUs) {
            uint64_t win_end = std::min(to, win + kIntervalUs);
            double up_pps = prof.upstream_pps.sample(rng);
            double down_pps = prof.downstream_pps.sample(rng) * crowd;
            for (int dir = 0; dir < 2; ++dir) {
                double pps = dir == 0 ? up_pps : down_pps;
                if (pps <= 0.01) continue;
                uint64_t t = win;
                while (true) {
                    double gap = -std::log(1.0 - rng.unit()) / pps;
                    t += std::max<uint64_t>(1, to_us(gap));
                    if (t >= win_end) break;
                    emit_udp(flow, t, dir == 0, uint32_t(prof.packet_size.sample(rng)));
                }
            }
        }
    }

    void run() {
        sidecar.metaverse = script.metaverse;
        sidecar.user_ip = script.user_ip;
        sidecar.seed = script.seed;

        // Opening handshake: one flow per signature, in trained prefix order.
        auto pit = sigs.initial_hs_prefixes.find(script.metaverse);
        if (pit == sigs.initial_hs_prefixes.end())
            throw Error(ErrorCode::ConfigError,
                        "signature model lacks prefixes for " + script.metaverse);
        uint64_t t = t0_us();
        for (const auto& prefix : pit->second) {
            for (const auto& sig : sigs.primaries) {
                if (sig.metaverse != script.metaverse || sig.prefix != prefix) continue;
                TcpFlowSim flow;
                flow.user = script.user_ip;
                flow.server = primary_server(founding.size());
                flow.sport = next_port++;
                flow.rtt_ms = next_rtt();
                FlowKey key{flow.user, flow.server, flow.sport, 443, Transport::TCP};
                flow.sidecar_index = add_sidecar_flow(key, DomainType::PRIMARY, flow.rtt_ms);
                uint64_t done = open_primary_flow(flow, t, sig);
                if (!prefix_done_us.count(prefix)) prefix_done_us[prefix] = done;
                founding.push_back(flow);
                t += 150000; // stagger flow starts
            }
        }
        uint64_t start_us = 0;
        for (const auto& prefix : pit->second) start_us = std::max(start_us, prefix_done_us[prefix]);

        // State segments drive per-profile traffic.
        uint64_t seg_begin = t0_us();
        Rng seg_rng = rng.fork();
        std::vector<std::pair<uint64_t, StateLabel>> seg_spans; // (begin, state)
        for (const auto& seg : script.segments) {
            auto sp_it = app.states.find(seg.state);
            bool allowed = std::find(app.allowed_states.begin(), app.allowed_states.end(),
                                     seg.state) != app.allowed_states.end();
            if (!allowed || sp_it == app.states.end())
                throw Error(ErrorCode::UnknownStateForApp,
                            std::string(state_name(seg.state)) + " is not scripted for " +
                                script.metaverse);
            const StateProfile& prof = sp_it->second;
            // explicit zero means an empty segment; negative draws from the profile
            double duration = seg.duration >= 0 ? seg.duration : prof.duration.sample(seg_rng);
            uint64_t seg_end = seg_begin + to_us(duration);
            seg_spans.push_back({seg_begin, seg.state});
            run_segment(prof, seg_begin, seg_end);
            seg_begin = seg_end;
        }
        uint64_t script_end = seg_begin;

        // Keep packets off the exact interval grid so that boundary
        // bucketing can never hinge on floating-point rounding.
        for (auto& p : packets)
            if (p.ts_us > start_us && (p.ts_us - start_us) % kIntervalUs == 0) p.ts_us += 1;

        std::stable_sort(packets.begin(), packets.end(),
                         [](const SynthPacket& a, const SynthPacket& b) { return a.ts_us < b.ts_us; });

        uint64_t last_us = packets.empty() ? start_us : packets.back().ts_us;
        sidecar.session_start = ts_to_seconds(start_us);
        sidecar.session_end = ts_to_seconds(last_us);

        // Majority state per complete interval.
        uint64_t interval_us = to_us(interval_len);
        uint64_t n_intervals = last_us > start_us ? (last_us - start_us) / interval_us : 0;
        for (uint64_t k = 0; k < n_intervals; ++k) {
            uint64_t lo = start_us + k * interval_us;
            uint64_t hi = lo + interval_us;
            std::map<StateLabel, uint64_t> occupancy;
            for (size_t i = 0; i < seg_spans.size(); ++i) {
                uint64_t seg_lo = seg_spans[i].first;
                uint64_t seg_hi = i + 1 < seg_spans.size() ? seg_spans[i + 1].first : script_end;
                uint64_t o_lo = std::max(lo, seg_lo), o_hi = std::min(hi, seg_hi);
                if (o_hi > o_lo) occupancy[seg_spans[i].second] += o_hi - o_lo;
            }
            StateLabel best = StateLabel::UNKNOWN;
            uint64_t best_occ = 0;
            for (const auto& seg : script.segments) { // script order breaks ties
                auto it = occupancy.find(seg.state);
                if (it != occupancy.end() && it->second > best_occ) {
                    best_occ = it->second;
                    best = it->first;
                }
            }
            sidecar.interval_states.push_back(best);
        }
    }

    void run_segment(const StateProfile& prof, uint64_t begin, uint64_t end) {
        const uint64_t settle = 2 * kUsPerSec; // keep entry traffic clear of the previous interval
        uint64_t active_begin = begin + settle;
        if (active_begin >= end) active_begin = begin;

        // Entry burst: a clutch of content flows early in the segment.
        if (prof.primary_tcp.burst_at_entry) {
            size_t flows = size_t(std::llround(prof.primary_tcp.entry_burst_flows.sample(rng)));
            double volume = prof.primary_tcp.entry_burst_volume.sample(rng);
            double pkt = prof.primary_tcp.packet_size.sample(rng);
            for (size_t i = 0; i < flows; ++i)
                content_flow(active_begin + uint64_t(i) * 250000, volume / double(std::max<size_t>(1, flows)),
                             pkt);
        }

        // Steady content flows per interval window.
        for (uint64_t win = begin; win < end; win += kIntervalUs) {
            uint64_t win_end = std::min(end, win + kIntervalUs);
            size_t n = size_t(std::llround(prof.primary_tcp.new_flows_per_interval.sample(rng)));
            for (size_t i = 0; i < n; ++i) {
                uint64_t at = win + rng.below(std::max<uint64_t>(1, win_end - win));
                if (at + 5 * kUsPerSec > end) continue; // leave room for the handshake
                content_flow(std::max(at, active_begin),
                             prof.primary_tcp.flow_volume_up.sample(rng),
                             prof.primary_tcp.packet_size.sample(rng));
            }
            // Ongoing volume rides the founding flows.
            double ongoing = prof.primary_tcp.ongoing_volume_per_interval.sample(rng);
            if (ongoing >= 1 && !founding.empty()) {
                TcpFlowSim& flow = founding[founding_rr++ % founding.size()];
                upload(flow, std::max(win, active_begin), win_end - std::max(win, active_begin),
                       ongoing, 300);
            }
        }

        // Content-upload spikes (CC).
        if (prof.spike_period_s > 0 && !founding.empty()) {
            uint64_t period = to_us(prof.spike_period_s);
            for (uint64_t at = active_begin; at + 3 * kUsPerSec < end; at += period) {
                TcpFlowSim& flow = founding[founding_rr++ % founding.size()];
                upload(flow, at, 3 * kUsPerSec, prof.spike_volume_up.sample(rng), 1300);
            }
        }

        // Time-critical activity stream.
        if (prof.time_critical_udp.active) {
            double crowd = app.crowd.sample(rng);
            if (!(prof.time_critical_udp.continue_previous && current_udp)) {
                current_udp = open_udp_flow(active_begin);
            }
            udp_stream(*current_udp, active_begin + 200000, end, prof.time_critical_udp, crowd);
        }
    }
};

} // namespace

SessionTrace generate_session(const SessionScript& script, const SignatureSet& signatures,
                              const ProfileSet& profiles, double interval_len) {
    auto ait = profiles.apps.find(script.metaverse);
    if (ait == profiles.apps.end())
        throw Error(ErrorCode::ConfigError, "no profile for app " + script.metaverse);
    SessionGen gen(script, signatures, ait->second, interval_len);
    gen.run();

    SessionTrace trace;
    trace.packets = std::move(gen.packets);
    trace.sidecar = std::move(gen.sidecar);
    return trace;
}

std::vector<SynthPacket> generate_background(size_t n_flows, uint64_t seed,
                                             const SignatureSet& signatures,
                                             const BackgroundOptions& opts) {
    SignatureMatcher matcher(signatures);
    Rng rng(seed);
    std::vector<SynthPacket> out;

    auto primary_safe = [&](const std::vector<uint32_t>& seq) {
        for (size_t k = 1; k <= seq.size(); ++k)
            if (matcher.match_primary(std::span(seq.data(), k)).kind == MatchKind::MATCH)
                return false;
        return true;
    };
    auto udp_safe = [&](uint16_t port, const std::vector<uint32_t>& seq) {
        for (size_t k = 1; k <= seq.size(); ++k)
            if (matcher.match_udp(port, std::span(seq.data(), k)).kind == MatchKind::MATCH)
                return false;
        return true;
    };

    std::vector<uint32_t> planted = opts.planted_seq;
    if (planted.empty() && !signatures.primaries.empty())
        planted = signatures.primaries[0].size_seq;

    const std::vector<uint16_t> listed = signatures.udp_ports();
    const std::vector<uint16_t> unlisted = {3478, 5000, 7777};

    for (size_t i = 0; i < n_flows; ++i) {
        IpAddr user = IpAddr::v4(10, uint8_t(200 + i % 40), uint8_t((i / 253) % 253), uint8_t(1 + i % 253));
        uint64_t start = opts.begin_us +
                         rng.below(std::max<uint64_t>(1, opts.end_us - opts.begin_us));
        bool tcp = rng.below(100) < 70;
        bool plant = i < opts.planted_duplicates;

        if (tcp || plant) {
            std::vector<uint32_t> seq;
            if (plant) {
                seq = planted;
            } else {
                bool near_miss = opts.near_misses && !signatures.primaries.empty() &&
                                 rng.below(100) < 10;
                do {
                    if (near_miss) {
                        const auto& sig =
                            signatures.primaries[size_t(rng.below(signatures.primaries.size()))];
                        seq = sig.size_seq;
                        size_t at = size_t(rng.below(seq.size()));
                        uint32_t delta = 1 + uint32_t(rng.below(5));
                        seq[at] = rng.below(2) ? seq[at] + delta
                                               : (seq[at] > delta ? seq[at] - delta : seq[at] + delta);
                    } else {
                        seq.assign(3 + rng.below(4), 0);
                        for (auto& v : seq) v = uint32_t(40 + rng.below(1300));
                    }
                } while (opts.exclude_collisions && !primary_safe(seq));
            }

            IpAddr server = IpAddr::v4(34, uint8_t(1 + rng.below(200)), uint8_t(rng.below(250)),
                                       uint8_t(1 + rng.below(250)));
            uint16_t sport = uint16_t(40000 + rng.below(20000));
            uint64_t rtt = 3000 + rng.below(50000);
            uint32_t seq_up = uint32_t(rng.next()), seq_down = uint32_t(rng.next());
            uint64_t t = start;
            auto push_tcp = [&](bool up, uint8_t flags, uint32_t size) {
                SynthPacket p;
                p.ts_us = t;
                p.transport = Transport::TCP;
                p.src_ip = up ? user : server;
                p.dst_ip = up ? server : user;
                p.src_port = up ? sport : 443;
                p.dst_port = up ? 443 : sport;
                p.seq = up ? seq_up : seq_down;
                p.ack = up ? seq_down : seq_up;
                p.flags = flags;
                p.payload_size = size;
                (up ? seq_up : seq_down) += size ? size : ((flags & tcpflags::SYN) ? 1 : 0);
                out.push_back(std::move(p));
            };
            push_tcp(true, tcpflags::SYN, 0);
            t += rtt;
            push_tcp(false, tcpflags::SYN | tcpflags::ACK, 0);
            t += 300;
            push_tcp(true, tcpflags::ACK, 0);
            for (size_t k = 0; k < seq.size(); ++k) {
                t += 400 + rng.below(3000);
                push_tcp(true, tcpflags::ACK | tcpflags::PSH, seq[k]);
                if (k == 0) {
                    t += rtt;
                    push_tcp(false, tcpflags::ACK | tcpflags::PSH, uint32_t(500 + rng.below(2000)));
                }
            }
            t += rtt;
            push_tcp(false, tcpflags::ACK | tcpflags::PSH, uint32_t(200 + rng.below(1200)));
        } else {
            bool on_listed = !listed.empty() && rng.below(100) < 60;
            uint16_t port = on_listed ? listed[size_t(rng.below(listed.size()))]
                                      : unlisted[size_t(rng.below(unlisted.size()))];
            std::vector<uint32_t> seq;
            do {
                seq.assign(4 + rng.below(4), 0);
                for (auto& v : seq) v = uint32_t(10 + rng.below(1200));
            } while (opts.exclude_collisions && on_listed && !udp_safe(port, seq));

            IpAddr server = IpAddr::v4(34, uint8_t(210 + rng.below(40)), uint8_t(rng.below(250)),
                                       uint8_t(1 + rng.below(250)));
            uint16_t sport = uint16_t(40000 + rng.below(20000));
            uint64_t t = start;
            auto push_udp = [&](bool up, uint32_t size) {
                SynthPacket p;
                p.ts_us = t;
                p.transport = Transport::UDP;
                p.src_ip = up ? user : server;
                p.dst_ip = up ? server : user;
                p.src_port = up ? sport : port;
                p.dst_port = up ? port : sport;
                p.payload_size = size;
                out.push_back(std::move(p));
            };
            for (uint32_t v : seq) {
                push_udp(true, v);
                t += 10000 + rng.below(40000);
            }
            size_t extra = rng.below(8);
            for (size_t k = 0; k < extra; ++k) {
                push_udp(rng.below(2) == 0, uint32_t(20 + rng.below(100)));
                t += 20000 + rng.below(50000);
            }
        }
    }

    std::stable_sort(out.begin(), out.end(),
                     [](const SynthPacket& a, const SynthPacket& b) { return a.ts_us < b.ts_us; });
    return out;
}

std::vector<SynthPacket> merge_streams(std::vector<std::vector<SynthPacket>> streams) {
    std::vector<SynthPacket> out;
    size_t total = 0;
    for (const auto& s : streams) total += s.size();
    out.reserve(total);
    for (auto& s : streams)
        out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    std::stable_sort(out.begin(), out.end(),
                     [](const SynthPacket& a, const SynthPacket& b) { return a.ts_us < b.ts_us; });
    return out;
}

std::vector<uint8_t> render_frame(const SynthPacket& pkt) {
    static thread_local std::vector<uint8_t> zeros;
    std::span<const uint8_t> payload;
    if (!pkt.payload_bytes.empty()) {
        payload = pkt.payload_bytes;
    } else {
        if (zeros.size() < pkt.payload_size) zeros.resize(pkt.payload_size, 0);
        payload = std::span<const uint8_t>(zeros.data(), pkt.payload_size);
    }
    if (pkt.transport == Transport::TCP) {
        TcpFields f;
        f.src_ip = pkt.src_ip;
        f.dst_ip = pkt.dst_ip;
        f.src_port = pkt.src_port;
        f.dst_port = pkt.dst_port;
        f.seq = pkt.seq;
        f.ack = pkt.ack;
        f.flags = pkt.flags;
        return build_tcp_frame(f, payload);
    }
    return build_udp_frame(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, payload);
}

void emit_pcap(const std::vector<SynthPacket>& packets, const std::string& path, uint32_t snaplen) {
    PcapWriter writer(path, LinkType::ETHERNET);
    for (const auto& pkt : packets) {
        auto frame = render_frame(pkt);
        uint32_t orig = uint32_t(frame.size());
        if (frame.size() > snaplen) frame.resize(snaplen);
        writer.write_snapped(ts_to_seconds(pkt.ts_us), frame, orig);
    }
    writer.close();
}

std::string sidecar_to_json(const SidecarFile& file) {
    ordered_json root;
    root["sessions"] = ordered_json::array();
    for (const auto& s : file.sessions) {
        ordered_json js;
        js["metaverse"] = s.metaverse;
        js["user"] = s.user_ip.to_string();
        js["seed"] = s.seed;
        js["session_start"] = s.session_start;
        js["session_end"] = s.session_end;
        js["intervals"] = ordered_json::array();
        for (size_t k = 0; k < s.interval_states.size(); ++k)
            js["intervals"].push_back(
                ordered_json{{"index", k}, {"state", state_name(s.interval_states[k])}});
        js["flows"] = ordered_json::array();
        for (const auto& f : s.flows) {
            ordered_json jf;
            jf["src"] = f.key.src_ip.to_string();
            jf["sport"] = f.key.src_port;
            jf["dst"] = f.key.dst_ip.to_string();
            jf["dport"] = f.key.dst_port;
            jf["transport"] = transport_name(f.key.transport);
            jf["domain_type"] = f.domain_type == DomainType::PRIMARY ? "primary" : "time_critical";
            if (f.rtt_ms) jf["rtt_ms"] = *f.rtt_ms;
            jf["first_ts"] = f.first_ts;
            jf["last_ts"] = f.last_ts;
            js["flows"].push_back(std::move(jf));
        }
        root["sessions"].push_back(std::move(js));
    }
    return root.dump(2) + "\n";
}

SidecarFile sidecar_from_json(const std::string& text) {
    ordered_json root;
    try {
        root = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::SidecarMismatch, std::string("unparseable sidecar: ") + e.what());
    }
    try {
        SidecarFile file;
        for (const auto& js : root.at("sessions")) {
            SessionSidecar s;
            s.metaverse = js.at("metaverse").get<std::string>();
            auto ip = IpAddr::parse(js.at("user").get<std::string>());
            if (!ip) throw Error(ErrorCode::SidecarMismatch, "bad user ip in sidecar");
            s.user_ip = *ip;
            s.seed = js.value("seed", 0ull);
            s.session_start = js.at("session_start").get<double>();
            s.session_end = js.at("session_end").get<double>();
            size_t expect = 0;
            for (const auto& ji : js.at("intervals")) {
                if (ji.at("index").get<size_t>() != expect++)
                    throw Error(ErrorCode::SidecarMismatch, "sidecar intervals do not tile");
                auto state = state_from_name(ji.at("state").get<std::string>());
                if (!state) throw Error(ErrorCode::SidecarMismatch, "unknown state in sidecar");
                s.interval_states.push_back(*state);
            }
            for (const auto& jf : js.at("flows")) {
                SidecarFlow f;
                auto src = IpAddr::parse(jf.at("src").get<std::string>());
                auto dst = IpAddr::parse(jf.at("dst").get<std::string>());
                if (!src || !dst) throw Error(ErrorCode::SidecarMismatch, "bad flow ip");
                f.key.src_ip = *src;
                f.key.dst_ip = *dst;
                f.key.src_port = jf.at("sport").get<uint16_t>();
                f.key.dst_port = jf.at("dport").get<uint16_t>();
                f.key.transport =
                    jf.at("transport").get<std::string>() == "udp" ? Transport::UDP : Transport::TCP;
                f.domain_type = jf.at("domain_type").get<std::string>() == "primary"
                                    ? DomainType::PRIMARY
                                    : DomainType::TIME_CRITICAL;
                if (jf.contains("rtt_ms")) f.rtt_ms = jf.at("rtt_ms").get<double>();
                f.first_ts = jf.at("first_ts").get<double>();
                f.last_ts = jf.at("last_ts").get<double>();
                s.flows.push_back(std::move(f));
            }
            file.sessions.push_back(std::move(s));
        }
        return file;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::SidecarMismatch, std::string("malformed sidecar: ") + e.what());
    }
}

void save_sidecar(const SidecarFile& file, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << sidecar_to_json(file);
}

SidecarFile load_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::SidecarMismatch, "cannot open sidecar " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return sidecar_from_json(ss.str());
}

} // namespace vrmon
