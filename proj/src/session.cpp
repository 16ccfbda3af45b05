#include "vrmon/session.hpp"

#include <algorithm>
#include <cmath>

namespace vrmon {

namespace {

const char* state_names[] = {"HS", "MH", "SUE", "SPE", "AT", "CC", "UNKNOWN"};

} // namespace

const char* state_name(StateLabel s) {
    return state_names[size_t(s)];
}

std::optional<StateLabel> state_from_name(const std::string& name) {
    for (size_t i = 0; i <= size_t(StateLabel::UNKNOWN); ++i)
        if (name == state_names[i]) return StateLabel(i);
    return std::nullopt;
}

std::vector<StateLabel> all_states() {
    return {StateLabel::HS, StateLabel::MH, StateLabel::SUE,
            StateLabel::SPE, StateLabel::AT, StateLabel::CC};
}

SessionTracker::SessionTracker(SessionTrackerConfig cfg, ClassifyFn classify, ReportFn report)
    : cfg_(std::move(cfg)), classify_(std::move(classify)), report_(std::move(report)) {}

SessionEvent SessionTracker::register_primary_detection(const IpAddr& user,
                                                        const std::string& metaverse,
                                                        const std::string& prefix,
                                                        const FlowKey& key, double ts,
                                                        double flow_first_seen) {
    auto skey = std::make_pair(user, metaverse);

    SessionFlowInfo info;
    info.key = key;
    info.domain_type = DomainType::PRIMARY;
    info.first_seen = flow_first_seen;
    info.detect_ts = ts;
    info.last_activity = ts;

    auto sit = sessions_.find(skey);
    if (sit != sessions_.end()) {
        advance_session(sit->second, ts);
        sit->second.last_activity = std::max(sit->second.last_activity, ts);
        auto [fit, inserted] = sit->second.tracked_flows.emplace(key, info);
        if (inserted)
            tracked_index_[user][key] = metaverse;
        else if (fit->second.evicted) {
            fit->second.evicted = false; // flow resumed after idle eviction
            fit->second.detect_ts = ts;
        }
        return SessionEvent::NONE;
    }

    auto& cand = candidates_[skey];
    cand.prefixes_first_ts.emplace(prefix, ts);
    cand.last_activity = ts;
    bool already = std::any_of(cand.matched_flows.begin(), cand.matched_flows.end(),
                               [&](const SessionFlowInfo& f) { return f.key == key; });
    if (!already) cand.matched_flows.push_back(info);

    auto pit = cfg_.initial_hs_prefixes.find(metaverse);
    if (pit == cfg_.initial_hs_prefixes.end()) return SessionEvent::NONE;
    for (const auto& required : pit->second)
        if (!cand.prefixes_first_ts.count(required)) return SessionEvent::NONE;

    // All required prefixes active: the session starts at this match.
    SessionContext ctx;
    ctx.user_ip = user;
    ctx.metaverse = metaverse;
    ctx.session_start = ts;
    ctx.last_activity = ts;
    ctx.interval_len = cfg_.interval_len;
    for (const auto& f : cand.matched_flows) {
        ctx.tracked_flows.emplace(f.key, f);
        tracked_index_[user][f.key] = metaverse;
    }
    sessions_.emplace(skey, std::move(ctx));
    candidates_.erase(skey);
    return SessionEvent::SESSION_STARTED;
}

UdpAttach SessionTracker::register_udp_detection(const IpAddr& user, const std::string& metaverse,
                                                 const FlowKey& key, double ts,
                                                 double flow_first_seen) {
    auto sit = sessions_.find({user, metaverse});
    if (sit == sessions_.end()) {
        // Session detection rests on primary flows alone; a UDP match
        // without one stays orphaned for good.
        orphaned_udp_++;
        return UdpAttach::ORPHANED;
    }
    advance_session(sit->second, ts);
    sit->second.last_activity = std::max(sit->second.last_activity, ts);
    SessionFlowInfo info;
    info.key = key;
    info.domain_type = DomainType::TIME_CRITICAL;
    info.first_seen = flow_first_seen;
    info.detect_ts = ts;
    info.last_activity = ts;
    auto [fit, inserted] = sit->second.tracked_flows.emplace(key, info);
    if (inserted)
        tracked_index_[user][key] = metaverse;
    else if (fit->second.evicted) {
        fit->second.evicted = false;
        fit->second.detect_ts = ts;
    }
    return UdpAttach::TRACKED;
}

const std::string* SessionTracker::tracked_metaverse(const IpAddr& user, const FlowKey& key) const {
    auto uit = tracked_index_.find(user);
    if (uit == tracked_index_.end()) return nullptr;
    auto fit = uit->second.find(key);
    if (fit == uit->second.end()) return nullptr;
    return &fit->second;
}

void SessionTracker::accumulate(const IpAddr& user, const std::string& metaverse,
                                const FlowKey& key, double ts, bool upstream,
                                uint32_t payload_len) {
    auto sit = sessions_.find({user, metaverse});
    if (sit == sessions_.end()) return;
    SessionContext& ctx = sit->second;
    auto fit = ctx.tracked_flows.find(key);
    if (fit == ctx.tracked_flows.end() || fit->second.evicted) return;

    advance_session(ctx, ts);
    if (ts < ctx.interval_start(ctx.next_interval)) return; // before the open interval

    SessionFlowInfo& flow = fit->second;
    flow.last_activity = ts;
    ctx.last_activity = std::max(ctx.last_activity, ts);

    auto& row = ctx.open_interval[key];
    row.key = key;
    row.cls = flow_class(key.transport, flow.domain_type);
    if (upstream) {
        row.bytes_up += payload_len;
        row.pkts_up += 1;
        flow.bytes_up += payload_len;
        flow.pkts_up += 1;
    } else {
        row.bytes_down += payload_len;
        row.pkts_down += 1;
        flow.bytes_down += payload_len;
        flow.pkts_down += 1;
    }
}

void SessionTracker::note_rtt(const IpAddr& user, const std::string& metaverse, const FlowKey& key,
                              double rtt_ms) {
    auto sit = sessions_.find({user, metaverse});
    if (sit == sessions_.end()) return;
    auto fit = sit->second.tracked_flows.find(key);
    if (fit != sit->second.tracked_flows.end()) fit->second.rtt_ms = rtt_ms;
}

void SessionTracker::close_interval(SessionContext& ctx) {
    uint64_t k = ctx.next_interval;
    double end = ctx.interval_end(k);

    IntervalStats stats;
    for (auto& [key, flow] : ctx.tracked_flows) {
        if (flow.evicted) continue;
        auto rit = ctx.open_interval.find(key);
        FlowIntervalRow row;
        if (rit != ctx.open_interval.end()) {
            row = rit->second;
        } else {
            row.key = key;
            row.cls = flow_class(key.transport, flow.domain_type);
        }
        // A flow is new in the interval containing its first packet;
        // session-founding flows count as new in interval 0.
        uint64_t born = 0;
        if (flow.first_seen > ctx.session_start)
            born = uint64_t((flow.first_seen - ctx.session_start) / ctx.interval_len);
        row.is_new = born == k;
        stats.flows.push_back(row);
    }

    AttributeVector attrs = compute_attributes(stats);
    ClassifyDecision decision;
    if (classify_) decision = classify_(ctx, k, attrs, stats);

    TimelineEntry entry;
    entry.interval = k;
    entry.state = decision.label;
    entry.confidence = decision.confidence;
    entry.path = decision.path;
    for (const auto& row : stats.flows) {
        entry.bytes_up += row.bytes_up;
        entry.bytes_down += row.bytes_down;
    }
    ctx.timeline.push_back(entry);

    ctx.past_states.push_back(decision.label);
    while (ctx.past_states.size() > cfg_.past_states_cap) ctx.past_states.pop_front();

    // Tracked flows idle past the timeout stop counting as concurrent
    // from the next interval on.
    for (auto& [key, flow] : ctx.tracked_flows)
        if (!flow.evicted && end - flow.last_activity > cfg_.flow_idle_timeout)
            flow.evicted = true;

    ctx.open_interval.clear();
    ctx.next_interval++;
}

// Closes intervals justified by session activity at `ts`: the timeline
// covers complete intervals up to the session's own last activity, so
// it never depends on how long unrelated traffic keeps the clock
// moving before the idle timeout fires.
void SessionTracker::advance_session(SessionContext& ctx, double ts) {
    while (ts >= ctx.interval_end(ctx.next_interval)) close_interval(ctx);
}

void SessionTracker::close_session(SessionContext& ctx) {
    // Close every complete interval up to the last activity; a partial
    // trailing interval is dropped, and its residue leaves the per-flow
    // totals so that interval sums and flow sums agree exactly.
    while (ctx.interval_end(ctx.next_interval) <= ctx.last_activity) close_interval(ctx);
    for (const auto& [key, row] : ctx.open_interval) {
        auto fit = ctx.tracked_flows.find(key);
        if (fit == ctx.tracked_flows.end()) continue;
        fit->second.bytes_up -= row.bytes_up;
        fit->second.pkts_up -= row.pkts_up;
        fit->second.bytes_down -= row.bytes_down;
        fit->second.pkts_down -= row.pkts_down;
    }
    ctx.open_interval.clear();
    ctx.session_end = ctx.last_activity;

    SessionReport report;
    report.user_ip = ctx.user_ip;
    report.metaverse = ctx.metaverse;
    report.start = ctx.session_start;
    report.end = ctx.session_end;
    report.timeline = ctx.timeline;
    for (const auto& entry : ctx.timeline) {
        auto& totals = report.per_state[entry.state];
        totals.seconds += ctx.interval_len;
        totals.bytes_up += entry.bytes_up;
        totals.bytes_down += entry.bytes_down;
    }
    for (const auto& [key, flow] : ctx.tracked_flows) report.flows.push_back(flow);

    auto uit = tracked_index_.find(ctx.user_ip);
    if (uit != tracked_index_.end()) {
        for (const auto& [key, flow] : ctx.tracked_flows) uit->second.erase(key);
        if (uit->second.empty()) tracked_index_.erase(uit);
    }
    sessions_closed_++;
    if (report_) report_(std::move(report));
}

void SessionTracker::advance(double now) {
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        SessionContext& ctx = it->second;
        if (now - ctx.last_activity > cfg_.session_idle_timeout) {
            close_session(ctx);
            it = sessions_.erase(it);
            continue;
        }
        ++it;
    }
    for (auto it = candidates_.begin(); it != candidates_.end();) {
        if (now - it->second.last_activity > cfg_.flow_idle_timeout)
            it = candidates_.erase(it);
        else
            ++it;
    }
}

void SessionTracker::flush() {
    for (auto& [key, ctx] : sessions_) close_session(ctx);
    sessions_.clear();
}

} // namespace vrmon
