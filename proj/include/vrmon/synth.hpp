#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vrmon/flowtable.hpp"
#include "vrmon/rng.hpp"
#include "vrmon/signatures.hpp"
#include "vrmon/states.hpp"

namespace vrmon {

// Scalar distribution declared in the profiles file. Samples are
// clamped to be non-negative.
struct Distribution {
    enum class Kind : uint8_t { CONSTANT, UNIFORM, NORMAL };
    Kind kind = Kind::CONSTANT;
    double a = 0, b = 0; // constant: a; uniform: [a, b]; normal: mean a, sd b

    double sample(Rng& rng) const;
    static Distribution constant(double v) { return {Kind::CONSTANT, v, 0}; }
};

struct TcpStateProfile {
    Distribution new_flows_per_interval;       // steady content flows per 10 s
    Distribution flow_volume_up;                // upstream bytes per content flow
    Distribution ongoing_volume_per_interval;   // upstream bytes per 10 s on existing flows
    Distribution packet_size = Distribution::constant(1200);
    bool burst_at_entry = false;
    Distribution entry_burst_flows;
    Distribution entry_burst_volume; // upstream bytes across the entry window
};

struct UdpStateProfile {
    bool active = false;
    bool continue_previous = false; // reuse the prior segment's flow instead of opening one
    Distribution upstream_pps;
    Distribution downstream_pps; // scaled by the per-segment crowd factor
    Distribution packet_size = Distribution::constant(80);
};

struct StateProfile {
    Distribution duration; // used when a script leaves duration unset
    TcpStateProfile primary_tcp;
    UdpStateProfile time_critical_udp;
    double spike_period_s = 0; // content-upload spikes (CC); 0 disables
    Distribution spike_volume_up;
};

struct AppProfile {
    std::vector<StateLabel> allowed_states;
    Distribution crowd = Distribution::constant(1.0);
    std::map<StateLabel, StateProfile> states;
};

struct ProfileSet {
    std::map<std::string, AppProfile> apps;
};

ProfileSet load_profiles(const std::string& path); // Error(ConfigError)
ProfileSet profiles_from_json(const std::string& text);

struct ScriptSegment {
    StateLabel state = StateLabel::HS;
    double duration = 0; // seconds; <= 0 draws from the profile
};

struct SessionScript {
    std::string metaverse;
    IpAddr user_ip;
    uint64_t seed = 1;
    double start_ts = 1700000000.0;
    std::vector<ScriptSegment> segments;       // first segment must be HS
    std::vector<double> primary_rtt_ms = {12}; // cycled per TCP flow
};

SessionScript script_from_json(const std::string& text); // Error(ConfigError)
std::string script_to_json(const SessionScript& script);

// Random activity walk for corpus generation: starts in HS, wanders
// the app's allowed states.
SessionScript make_random_script(const std::string& metaverse, const AppProfile& profile,
                                 const IpAddr& user, uint64_t seed, double start_ts,
                                 double target_duration);

// One logical packet; payload bytes are rendered lazily (zeros unless
// structured bytes were attached).
struct SynthPacket {
    uint64_t ts_us = 0;
    IpAddr src_ip, dst_ip;
    uint16_t src_port = 0, dst_port = 0;
    Transport transport = Transport::TCP;
    uint32_t seq = 0, ack = 0;
    uint8_t flags = 0;
    uint32_t payload_size = 0;
    std::vector<uint8_t> payload_bytes; // empty means payload_size zero bytes
};

double ts_to_seconds(uint64_t ts_us);
std::vector<uint8_t> render_frame(const SynthPacket& pkt);

// Ground truth accompanying a generated session.
struct SidecarFlow {
    FlowKey key;
    DomainType domain_type = DomainType::PRIMARY;
    std::optional<double> rtt_ms;
    double first_ts = 0, last_ts = 0;
};

struct SessionSidecar {
    std::string metaverse;
    IpAddr user_ip;
    uint64_t seed = 0;
    double session_start = 0; // when the final required prefix completes
    double session_end = 0;   // last tracked-flow packet
    std::vector<StateLabel> interval_states; // complete intervals from session_start
    std::vector<SidecarFlow> flows;
};

struct SidecarFile {
    std::vector<SessionSidecar> sessions;
};

std::string sidecar_to_json(const SidecarFile& file);
SidecarFile sidecar_from_json(const std::string& text); // Error(SidecarMismatch)
void save_sidecar(const SidecarFile& file, const std::string& path);
SidecarFile load_sidecar(const std::string& path);

struct SessionTrace {
    std::vector<SynthPacket> packets; // sorted by timestamp
    SessionSidecar sidecar;
};

// Opens the primary-domain flows with the exact trained signature
// sequences, then drives per-state traffic from the profiles. All
// randomness derives from the script seed.
// Throws Error(UnknownStateForApp | ConfigError).
SessionTrace generate_session(const SessionScript& script, const SignatureSet& signatures,
                              const ProfileSet& profiles, double interval_len = 10.0);

struct BackgroundOptions {
    uint64_t begin_us = 1700000000ull * 1000000ull;
    uint64_t end_us = 1700000600ull * 1000000ull;
    bool exclude_collisions = true; // rejection-sample against the signature set
    bool near_misses = true;        // distance-1 mutations of real signatures
    size_t planted_duplicates = 0;  // exact copies of one primary signature
    std::vector<uint32_t> planted_seq; // defaults to the first primary signature
};

// TCP/443 and UDP flows from non-session users with randomized
// handshake size sequences.
std::vector<SynthPacket> generate_background(size_t n_flows, uint64_t seed,
                                             const SignatureSet& signatures,
                                             const BackgroundOptions& opts);

// Timestamp-ordered merge (stable across inputs).
std::vector<SynthPacket> merge_streams(std::vector<std::vector<SynthPacket>> streams);

void emit_pcap(const std::vector<SynthPacket>& packets, const std::string& path,
               uint32_t snaplen = 65535);

} // namespace vrmon
