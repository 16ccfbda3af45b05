#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vrmon/attributes.hpp"
#include "vrmon/states.hpp"

namespace vrmon {

enum class ClassifierPath : uint8_t { STATEFUL, STATELESS_FALLBACK };

struct ClassifyDecision {
    StateLabel label = StateLabel::UNKNOWN;
    double confidence = 0.0;
    ClassifierPath path = ClassifierPath::STATELESS_FALLBACK;
};

struct TimelineEntry {
    uint64_t interval = 0;
    StateLabel state = StateLabel::UNKNOWN;
    double confidence = 0.0;
    ClassifierPath path = ClassifierPath::STATELESS_FALLBACK;
    uint64_t bytes_up = 0; // host-level totals of the interval
    uint64_t bytes_down = 0;
};

struct SessionFlowInfo {
    FlowKey key;
    DomainType domain_type = DomainType::PRIMARY;
    double first_seen = 0;   // flow's first packet on the wire
    double detect_ts = 0;    // signature match time
    double last_activity = 0;
    uint64_t bytes_up = 0, pkts_up = 0, bytes_down = 0, pkts_down = 0;
    std::optional<double> rtt_ms;
    bool evicted = false;
};

struct SessionContext {
    IpAddr user_ip;
    std::string metaverse;
    double session_start = 0;
    double session_end = 0;
    double interval_len = 10.0;
    double last_activity = 0;

    std::map<FlowKey, SessionFlowInfo> tracked_flows;
    std::deque<StateLabel> past_states; // newest last, at most N
    std::vector<TimelineEntry> timeline;

    uint64_t next_interval = 0; // first interval not yet closed
    std::map<FlowKey, FlowIntervalRow> open_interval;

    double interval_start(uint64_t k) const { return session_start + double(k) * interval_len; }
    double interval_end(uint64_t k) const { return session_start + double(k + 1) * interval_len; }
};

struct SessionReport {
    IpAddr user_ip;
    std::string metaverse;
    double start = 0, end = 0;
    std::vector<TimelineEntry> timeline;
    // per-state rollups: seconds in state, bytes up/down
    struct StateTotals {
        double seconds = 0;
        uint64_t bytes_up = 0, bytes_down = 0;
    };
    std::map<StateLabel, StateTotals> per_state;
    std::vector<SessionFlowInfo> flows;
};

enum class SessionEvent : uint8_t { NONE, SESSION_STARTED };
enum class UdpAttach : uint8_t { TRACKED, ORPHANED };

struct SessionTrackerConfig {
    double interval_len = 10.0;
    size_t past_states_cap = 5; // N
    double session_idle_timeout = 120.0;
    double flow_idle_timeout = 300.0; // mirrors the tracked-flow eviction
    std::map<std::string, std::vector<std::string>> initial_hs_prefixes;
};

// Per-user session detection and interval accounting. The classify
// callback runs on every interval close; its label feeds the
// past-state ring.
class SessionTracker {
public:
    using ClassifyFn = std::function<ClassifyDecision(const SessionContext&, uint64_t interval,
                                                      const AttributeVector&, const IntervalStats&)>;
    using ReportFn = std::function<void(SessionReport&&)>;

    SessionTracker(SessionTrackerConfig cfg, ClassifyFn classify, ReportFn report);

    SessionEvent register_primary_detection(const IpAddr& user, const std::string& metaverse,
                                            const std::string& prefix, const FlowKey& key,
                                            double ts, double flow_first_seen);
    UdpAttach register_udp_detection(const IpAddr& user, const std::string& metaverse,
                                     const FlowKey& key, double ts, double flow_first_seen);

    // The session (metaverse name) tracking this flow, if any.
    const std::string* tracked_metaverse(const IpAddr& user, const FlowKey& key) const;

    // Interval accounting for a packet on a tracked flow. Closes due
    // intervals first, so call with non-decreasing timestamps.
    void accumulate(const IpAddr& user, const std::string& metaverse, const FlowKey& key,
                    double ts, bool upstream, uint32_t payload_len);

    void note_rtt(const IpAddr& user, const std::string& metaverse, const FlowKey& key,
                  double rtt_ms);

    // Closes intervals that ended at or before now and sessions idle
    // beyond the timeout.
    void advance(double now);

    // Closes every remaining session at end of input.
    void flush();

    size_t active_sessions() const { return sessions_.size(); }
    uint64_t sessions_closed() const { return sessions_closed_; }
    uint64_t orphaned_udp() const { return orphaned_udp_; }
    const std::map<std::pair<IpAddr, std::string>, SessionContext>& sessions() const {
        return sessions_;
    }

private:
    struct Candidate {
        std::map<std::string, double> prefixes_first_ts;
        std::vector<SessionFlowInfo> matched_flows;
        double last_activity = 0;
    };

    void close_interval(SessionContext& ctx);
    void close_session(SessionContext& ctx);
    void advance_session(SessionContext& ctx, double now);

    SessionTrackerConfig cfg_;
    ClassifyFn classify_;
    ReportFn report_;

    std::map<std::pair<IpAddr, std::string>, Candidate> candidates_;
    std::map<std::pair<IpAddr, std::string>, SessionContext> sessions_;
    std::map<IpAddr, std::map<FlowKey, std::string>> tracked_index_;
    uint64_t sessions_closed_ = 0;
    uint64_t orphaned_udp_ = 0;
};

} // namespace vrmon
