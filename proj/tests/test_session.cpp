#include <doctest.h>

#include "vrmon/session.hpp"

#include "helpers.hpp"

using namespace vrmon;
using namespace testutil;

namespace {

SessionTrackerConfig base_config() {
    SessionTrackerConfig cfg;
    cfg.initial_hs_prefixes["Multiverse"] = {"prod", "prodblobs"};
    cfg.initial_hs_prefixes["VRChat"] = {"api", "pipeline", "assets"};
    return cfg;
}

FlowKey tcp_key(const char* user, uint16_t sport, const char* server = "52.1.2.3") {
    FlowKey k;
    k.src_ip = *IpAddr::parse(user);
    k.dst_ip = *IpAddr::parse(server);
    k.src_port = sport;
    k.dst_port = 443;
    k.transport = Transport::TCP;
    return k;
}

FlowKey udp_key(const char* user, uint16_t sport) {
    FlowKey k;
    k.src_ip = *IpAddr::parse(user);
    k.dst_ip = *IpAddr::parse("172.65.0.1");
    k.src_port = sport;
    k.dst_port = 5055;
    k.transport = Transport::UDP;
    return k;
}

struct Fixture {
    std::vector<SessionReport> reports;
    std::vector<StateLabel> scripted;
    size_t classify_calls = 0;
    std::unique_ptr<SessionTracker> tracker;

    explicit Fixture(SessionTrackerConfig cfg = base_config()) {
        tracker = std::make_unique<SessionTracker>(
            cfg,
            [this](const SessionContext&, uint64_t k, const AttributeVector&,
                   const IntervalStats&) {
                classify_calls++;
                ClassifyDecision d;
                d.label = k < scripted.size() ? scripted[k] : StateLabel::UNKNOWN;
                d.confidence = 1.0;
                return d;
            },
            [this](SessionReport&& r) { reports.push_back(std::move(r)); });
    }
};

const IpAddr kUser = *IpAddr::parse("10.0.0.5");

} // namespace

TEST_CASE("session starts only when every required prefix is active") {
    Fixture fx;
    auto ev = fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                                     tcp_key("10.0.0.5", 50000), 100.0, 99.5);
    CHECK(ev == SessionEvent::NONE);
    ev = fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                                tcp_key("10.0.0.5", 50001), 100.5, 100.1);
    CHECK(ev == SessionEvent::NONE);
    ev = fx.tracker->register_primary_detection(kUser, "Multiverse", "prodblobs",
                                                tcp_key("10.0.0.5", 50002), 101.25, 100.9);
    CHECK(ev == SessionEvent::SESSION_STARTED);
    REQUIRE(fx.tracker->active_sessions() == 1);
    const auto& ctx = fx.tracker->sessions().begin()->second;
    CHECK(ctx.session_start == 101.25);
    CHECK(ctx.tracked_flows.size() == 3);
}

TEST_CASE("detection is invariant to prefix arrival order") {
    for (int perm = 0; perm < 2; ++perm) {
        Fixture fx;
        std::vector<std::pair<const char*, uint16_t>> order = {{"prod", 50000},
                                                               {"prodblobs", 50001}};
        if (perm) std::swap(order[0], order[1]);
        SessionEvent last = SessionEvent::NONE;
        double t = 100.0;
        for (auto& [prefix, port] : order)
            last = fx.tracker->register_primary_detection(kUser, "Multiverse", prefix,
                                                          tcp_key("10.0.0.5", port), t += 1, t);
        CHECK(last == SessionEvent::SESSION_STARTED);
    }
}

TEST_CASE("two interleaved users produce independent sessions") {
    Fixture fx;
    const IpAddr user_b = *IpAddr::parse("10.0.0.6");
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                           tcp_key("10.0.0.5", 50000), 100.0, 100.0);
    fx.tracker->register_primary_detection(user_b, "Multiverse", "prod",
                                           tcp_key("10.0.0.6", 50000), 100.1, 100.1);
    auto ev_b = fx.tracker->register_primary_detection(
        user_b, "Multiverse", "prodblobs", tcp_key("10.0.0.6", 50001), 100.2, 100.2);
    CHECK(ev_b == SessionEvent::SESSION_STARTED);
    CHECK(fx.tracker->active_sessions() == 1); // user A still incomplete
    auto ev_a = fx.tracker->register_primary_detection(
        kUser, "Multiverse", "prodblobs", tcp_key("10.0.0.5", 50001), 105.0, 104.0);
    CHECK(ev_a == SessionEvent::SESSION_STARTED);
    CHECK(fx.tracker->active_sessions() == 2);
}

TEST_CASE("udp detections attach only to live sessions and orphans stay orphaned") {
    Fixture fx;
    auto attach = fx.tracker->register_udp_detection(kUser, "Multiverse",
                                                     udp_key("10.0.0.5", 51000), 90.0, 90.0);
    CHECK(attach == UdpAttach::ORPHANED);
    CHECK(fx.tracker->orphaned_udp() == 1);

    fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                           tcp_key("10.0.0.5", 50000), 100.0, 100.0);
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prodblobs",
                                           tcp_key("10.0.0.5", 50001), 100.5, 100.4);
    // the earlier orphan does not retroactively attach
    const auto& ctx = fx.tracker->sessions().begin()->second;
    CHECK(ctx.tracked_flows.count(udp_key("10.0.0.5", 51000)) == 0);

    attach = fx.tracker->register_udp_detection(kUser, "Multiverse", udp_key("10.0.0.5", 51001),
                                                101.0, 100.9);
    CHECK(attach == UdpAttach::TRACKED);
    CHECK(ctx.tracked_flows.count(udp_key("10.0.0.5", 51001)) == 1);
}

TEST_CASE("interval boundaries are half-open at session_start + k*len") {
    Fixture fx;
    fx.scripted = {StateLabel::HS, StateLabel::HS, StateLabel::HS};
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                           tcp_key("10.0.0.5", 50000), 100.0, 100.0);
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prodblobs",
                                           tcp_key("10.0.0.5", 50001), 100.0, 100.0);
    auto key = tcp_key("10.0.0.5", 50000);
    // 9.99 s after start: interval 0; exactly 10 s: interval 1
    fx.tracker->accumulate(kUser, "Multiverse", key, 109.99, true, 111);
    fx.tracker->accumulate(kUser, "Multiverse", key, 110.0, true, 222);
    fx.tracker->accumulate(kUser, "Multiverse", key, 125.0, true, 1);
    fx.tracker->advance(250.0); // idle close
    REQUIRE(fx.reports.size() == 1);
    const auto& timeline = fx.reports[0].timeline;
    REQUIRE(timeline.size() == 2);
    CHECK(timeline[0].bytes_up == 111);
    CHECK(timeline[1].bytes_up == 222);
}

TEST_CASE("a hundred 100-byte packets land as 10000 bytes of flow volume") {
    Fixture fx;
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                           tcp_key("10.0.0.5", 50000), 100.0, 100.0);
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prodblobs",
                                           tcp_key("10.0.0.5", 50001), 100.0, 100.0);
    auto key = tcp_key("10.0.0.5", 50000);
    for (int i = 0; i < 100; ++i)
        fx.tracker->accumulate(kUser, "Multiverse", key, 100.01 + i * 0.05, true, 100);
    fx.tracker->accumulate(kUser, "Multiverse", key, 112.0, true, 1);
    fx.tracker->advance(300.0);
    REQUIRE(fx.reports.size() == 1);
    REQUIRE(!fx.reports[0].timeline.empty());
    CHECK(fx.reports[0].timeline[0].bytes_up == 10000);
}

TEST_CASE("close rolls per-state time and volume; idle short of timeout stays open") {
    Fixture fx;
    fx.scripted.assign(6, StateLabel::HS);
    fx.scripted.insert(fx.scripted.end(), 12, StateLabel::SUE);
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                           tcp_key("10.0.0.5", 50000), 100.0, 100.0);
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prodblobs",
                                           tcp_key("10.0.0.5", 50001), 100.0, 100.0);
    auto key = tcp_key("10.0.0.5", 50000);
    for (int k = 0; k < 18; ++k)
        fx.tracker->accumulate(kUser, "Multiverse", key, 100.0 + k * 10 + 5, true, 1000);
    // one packet in the (dropped) partial 19th interval
    fx.tracker->accumulate(kUser, "Multiverse", key, 100.0 + 180.5, true, 777);

    // idle 119 s with a 120 s timeout: still open
    fx.tracker->advance(280.5 + 119);
    CHECK(fx.tracker->active_sessions() == 1);
    fx.tracker->advance(280.5 + 121);
    CHECK(fx.tracker->active_sessions() == 0);
    REQUIRE(fx.reports.size() == 1);
    const auto& report = fx.reports[0];
    CHECK(report.per_state.at(StateLabel::HS).seconds == 60.0);
    CHECK(report.per_state.at(StateLabel::SUE).seconds == 120.0);
    CHECK(report.per_state.at(StateLabel::HS).bytes_up == 6000);
    CHECK(report.per_state.at(StateLabel::SUE).bytes_up == 12000);

    // conservation: interval volumes equal flow totals
    uint64_t interval_sum = 0;
    for (const auto& e : report.timeline) interval_sum += e.bytes_up;
    uint64_t flow_sum = 0;
    for (const auto& f : report.flows) flow_sum += f.bytes_up;
    CHECK(interval_sum == flow_sum);
}

TEST_CASE("past-state ring is capped at N with newest last") {
    auto cfg = base_config();
    cfg.past_states_cap = 3;
    Fixture fx(cfg);
    fx.scripted = {StateLabel::HS, StateLabel::MH, StateLabel::SUE, StateLabel::SPE,
                   StateLabel::AT};
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prod",
                                           tcp_key("10.0.0.5", 50000), 100.0, 100.0);
    fx.tracker->register_primary_detection(kUser, "Multiverse", "prodblobs",
                                           tcp_key("10.0.0.5", 50001), 100.0, 100.0);
    auto key = tcp_key("10.0.0.5", 50000);
    for (int k = 0; k < 5; ++k)
        fx.tracker->accumulate(kUser, "Multiverse", key, 100.0 + k * 10 + 5, true, 10);
    fx.tracker->accumulate(kUser, "Multiverse", key, 155.0, true, 10);
    const auto& ctx = fx.tracker->sessions().begin()->second;
    REQUIRE(ctx.past_states.size() == 3);
    CHECK(ctx.past_states[0] == StateLabel::SUE);
    CHECK(ctx.past_states[2] == StateLabel::AT);
}
