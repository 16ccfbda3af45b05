#include "vrmon/engine.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "vrmon/errors.hpp"
#include "vrmon/tls.hpp"

namespace vrmon {

namespace {

using ordered_json = nlohmann::ordered_json;

uint64_t now_ns() {
    return uint64_t(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

} // namespace

void EngineMetrics::merge(const EngineMetrics& o) {
    packets += o.packets;
    queue_drops += o.queue_drops;
    capacity_drops += o.capacity_drops;
    flow_detections += o.flow_detections;
    udp_orphans += o.udp_orphans;
    sessions_started += o.sessions_started;
    sessions_closed += o.sessions_closed;
    intervals_classified += o.intervals_classified;
    stateless_fallbacks += o.stateless_fallbacks;
    detect_ns += o.detect_ns;
    stats_ns += o.stats_ns;
    classify_ns += o.classify_ns;
    auto append = [](std::vector<double>& into, const std::vector<double>& from) {
        into.insert(into.end(), from.begin(), from.end());
    };
    append(detect_samples_ms, o.detect_samples_ms);
    append(stats_samples_ms, o.stats_samples_ms);
    append(classify_samples_ms, o.classify_samples_ms);
}

// One shard: a flow table, a session tracker and a bounded inbox. With
// a single shard everything runs inline on the caller's thread.
struct Engine::Shard {
    Engine* engine = nullptr;
    FlowTable table;
    std::unique_ptr<SessionTracker> tracker;
    EngineMetrics metrics;
    std::vector<SessionReport> reports;
    std::vector<Detection> detections;
    std::vector<AttrRow> attr_rows;
    double last_advance = -1e18;
    double last_evict = -1e18;
    double sample_window_start = -1e18;
    uint64_t window_detect_ns = 0, window_stats_ns = 0;

    // threaded mode
    std::thread thread;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<PacketRecord> queue;
    bool closed = false;

    explicit Shard(Engine* e) : engine(e), table(e->cfg_.flow_table) {
        SessionTrackerConfig scfg;
        scfg.interval_len = e->cfg_.interval_len;
        scfg.past_states_cap = e->cfg_.n_past;
        scfg.session_idle_timeout = e->cfg_.session_idle_timeout;
        scfg.flow_idle_timeout = e->cfg_.flow_table.idle_timeout_tracked;
        scfg.initial_hs_prefixes = e->models_.signatures.initial_hs_prefixes;
        tracker = std::make_unique<SessionTracker>(
            scfg,
            [this](const SessionContext& ctx, uint64_t k, const AttributeVector& attrs,
                   const IntervalStats& stats) { return classify(ctx, k, attrs, stats); },
            [this](SessionReport&& r) {
                if (engine->cfg_.on_report) engine->cfg_.on_report(r);
                reports.push_back(std::move(r));
            });
    }

    ClassifyDecision classify(const SessionContext& ctx, uint64_t k, const AttributeVector& attrs,
                              const IntervalStats&) {
        uint64_t t0 = engine->cfg_.collect_samples ? now_ns() : 0;
        ClassifyDecision d;
        auto it = engine->models_.classifiers.find(ctx.metaverse);
        if (it != engine->models_.classifiers.end()) {
            metrics.intervals_classified++;
            d = classify_interval(ctx.past_states, attrs, it->second.stateless,
                                  it->second.stateful, engine->cfg_.n_past,
                                  engine->cfg_.threshold);
            if (d.path == ClassifierPath::STATELESS_FALLBACK) metrics.stateless_fallbacks++;
        }
        if (engine->cfg_.collect_attrs) {
            AttrRow row;
            row.user = ctx.user_ip;
            row.metaverse = ctx.metaverse;
            row.interval = k;
            row.attrs = attrs;
            row.past.assign(ctx.past_states.begin(), ctx.past_states.end());
            row.predicted = d.label;
            row.confidence = d.confidence;
            row.path = d.path;
            attr_rows.push_back(std::move(row));
        }
        if (engine->cfg_.collect_samples) {
            uint64_t dt = now_ns() - t0;
            metrics.classify_ns += dt;
            metrics.classify_samples_ms.push_back(double(dt) * 1e-6);
        }
        return d;
    }

    void roll_sample_window(double now) {
        if (!engine->cfg_.collect_samples) return;
        if (sample_window_start < -1e17) sample_window_start = now;
        while (now - sample_window_start >= 10.0) {
            metrics.detect_samples_ms.push_back(double(window_detect_ns) * 1e-6);
            metrics.stats_samples_ms.push_back(double(window_stats_ns) * 1e-6);
            window_detect_ns = window_stats_ns = 0;
            sample_window_start += 10.0;
        }
    }

    void process(const PacketRecord& pkt) {
        metrics.packets++;
        double now = pkt.timestamp;
        roll_sample_window(now);
        if (now - last_advance >= 0.5) {
            tracker->advance(now);
            last_advance = now;
        }
        if (now - last_evict >= engine->cfg_.eviction_period) {
            table.evict_idle(now);
            last_evict = now;
        }

        bool timing = engine->cfg_.collect_samples;
        bool is_tcp = pkt.transport == Transport::TCP;
        bool is_udp = pkt.transport == Transport::UDP;
        if (!is_tcp && !is_udp) return;

        bool stage1 = pkt.is_upstream() && is_tcp && pkt.dst_port == 443;
        bool stage2 = pkt.is_upstream() && is_udp && engine->cfg_.stage2_enabled &&
                      std::find(engine->ports_.begin(), engine->ports_.end(), pkt.dst_port) !=
                          engine->ports_.end();
        if (pkt.is_upstream() && !stage1 && !stage2) return;

        uint64_t t0 = timing ? now_ns() : 0;
        auto [update, flow] = table.upsert_packet(pkt, now);
        if (update == FlowUpdate::DROPPED) metrics.capacity_drops++;
        if (timing) {
            uint64_t dt = now_ns() - t0;
            metrics.detect_ns += dt;
            window_detect_ns += dt;
        }
        if (!flow) return;

        IpAddr user = pkt.user_ip();
        const FlowKey& key = flow->key;

        // Stage-3 accounting first: the packet completing a signature
        // is not part of the tracked stream it creates.
        uint64_t t1 = timing ? now_ns() : 0;
        if (const std::string* mv = tracker->tracked_metaverse(user, key)) {
            tracker->accumulate(user, *mv, key, now, pkt.is_upstream(), pkt.payload_len);
            if (flow->rtt_ms) tracker->note_rtt(user, *mv, key, *flow->rtt_ms);
        }
        if (timing) {
            uint64_t dt = now_ns() - t1;
            metrics.stats_ns += dt;
            window_stats_ns += dt;
        }

        if (flow->match_status != MatchStatus::PENDING) return;
        bool appended = update == FlowUpdate::APPENDED_SIZE ||
                        (update == FlowUpdate::CREATED && !flow->upstream_size_seq.empty());
        if (!appended) return;

        uint64_t t2 = timing ? now_ns() : 0;
        if (stage1) {
            PrimaryMatch m = engine->matcher_.match_primary(flow->upstream_size_seq);
            if (m.kind == MatchKind::MATCH) {
                flow->set_matched({m.metaverse, m.domain, m.prefix, DomainType::PRIMARY});
                metrics.flow_detections++;
                detections.push_back(
                    {now, user, m.metaverse, m.domain, m.prefix, key, DomainType::PRIMARY});
                auto ev = tracker->register_primary_detection(user, m.metaverse, m.prefix, key,
                                                              now, flow->first_seen);
                if (ev == SessionEvent::SESSION_STARTED) metrics.sessions_started++;
                if (flow->rtt_ms) tracker->note_rtt(user, m.metaverse, key, *flow->rtt_ms);
            } else if (m.kind == MatchKind::REJECT ||
                       flow->upstream_size_seq.size() >= table.config().k_max) {
                flow->set_rejected();
            }
        } else if (stage2) {
            UdpMatch m = engine->matcher_.match_udp(key.dst_port, flow->upstream_size_seq);
            if (m.kind == MatchKind::MATCH) {
                flow->set_matched({m.metaverse, "", "", DomainType::TIME_CRITICAL});
                metrics.flow_detections++;
                detections.push_back(
                    {now, user, m.metaverse, "", "", key, DomainType::TIME_CRITICAL});
                auto attach = tracker->register_udp_detection(user, m.metaverse, key, now,
                                                              flow->first_seen);
                if (attach == UdpAttach::ORPHANED) metrics.udp_orphans++;
            } else if (m.kind == MatchKind::REJECT ||
                       flow->upstream_size_seq.size() >= table.config().k_max) {
                flow->set_rejected();
            }
        }
        if (timing) {
            uint64_t dt = now_ns() - t2;
            metrics.detect_ns += dt;
            window_detect_ns += dt;
        }
    }

    void finish() {
        tracker->flush();
        if (engine->cfg_.collect_samples && (window_detect_ns || window_stats_ns)) {
            metrics.detect_samples_ms.push_back(double(window_detect_ns) * 1e-6);
            metrics.stats_samples_ms.push_back(double(window_stats_ns) * 1e-6);
        }
        metrics.sessions_closed = tracker->sessions_closed();
        metrics.udp_orphans = tracker->orphaned_udp();
    }

    // threaded inbox
    void start() {
        thread = std::thread([this] {
            std::deque<PacketRecord> batch;
            while (true) {
                {
                    std::unique_lock<std::mutex> lock(mu);
                    cv.wait(lock, [this] { return !queue.empty() || closed; });
                    if (queue.empty() && closed) break;
                    batch.swap(queue);
                }
                for (const auto& pkt : batch) process(pkt);
                batch.clear();
            }
        });
    }
    bool enqueue(const PacketRecord& pkt) {
        {
            std::lock_guard<std::mutex> lock(mu);
            if (queue.size() >= engine->cfg_.queue_capacity) return false;
            queue.push_back(pkt);
        }
        cv.notify_one();
        return true;
    }
    void close_inbox() {
        {
            std::lock_guard<std::mutex> lock(mu);
            closed = true;
        }
        cv.notify_one();
        if (thread.joinable()) thread.join();
    }
};

Engine::Engine(EngineModels models, EngineConfig cfg)
    : models_(std::move(models)), matcher_(models_.signatures), cfg_(std::move(cfg)) {
    models_.signatures.validate();
    ports_ = cfg_.udp_ports.empty() ? models_.signatures.udp_ports() : cfg_.udp_ports;
    for (const auto& [app, pack] : models_.classifiers) {
        if (pack.stateless.label_space != pack.stateful.label_space)
            throw Error(ErrorCode::CorruptModel,
                        "stateless/stateful label spaces differ for " + app);
        size_t want = kNumAttributes + cfg_.n_past * pack.stateful.label_space.size();
        if (pack.stateful.n_features != want || pack.stateless.n_features != kNumAttributes)
            throw Error(ErrorCode::FeatureDimMismatch,
                        "classifier feature width does not fit N for " + app);
    }
    if (cfg_.shards == 0) cfg_.shards = 1;
    for (size_t i = 0; i < cfg_.shards; ++i) shards_.push_back(std::make_unique<Shard>(this));
    if (cfg_.shards > 1)
        for (auto& s : shards_) s->start();
}

Engine::~Engine() {
    if (cfg_.shards > 1)
        for (auto& s : shards_)
            if (s->thread.joinable()) s->close_inbox();
}

void Engine::feed(const PacketRecord& rec) {
    if (cfg_.shards == 1) {
        shards_[0]->process(rec);
        return;
    }
    IpAddrHash h;
    size_t shard = h(rec.user_ip()) % cfg_.shards;
    if (!shards_[shard]->enqueue(rec)) queue_drops_++;
}

EngineResult Engine::finish() {
    if (cfg_.shards > 1)
        for (auto& s : shards_) s->close_inbox();
    for (auto& s : shards_) s->finish();

    EngineResult result;
    for (auto& s : shards_) {
        result.metrics.merge(s->metrics);
        result.metrics.capacity_drops += s->table.capacity_drops();
        std::move(s->reports.begin(), s->reports.end(), std::back_inserter(result.reports));
        std::move(s->detections.begin(), s->detections.end(),
                  std::back_inserter(result.detections));
        std::move(s->attr_rows.begin(), s->attr_rows.end(), std::back_inserter(result.attr_rows));
    }
    result.metrics.queue_drops = queue_drops_;

    std::sort(result.reports.begin(), result.reports.end(),
              [](const SessionReport& a, const SessionReport& b) {
                  return std::tie(a.start, a.user_ip, a.metaverse) <
                         std::tie(b.start, b.user_ip, b.metaverse);
              });
    std::sort(result.detections.begin(), result.detections.end(),
              [](const Detection& a, const Detection& b) {
                  return std::tie(a.ts, a.user, a.key) < std::tie(b.ts, b.user, b.key);
              });
    std::sort(result.attr_rows.begin(), result.attr_rows.end(),
              [](const AttrRow& a, const AttrRow& b) {
                  return std::tie(a.user, a.metaverse, a.interval) <
                         std::tie(b.user, b.metaverse, b.interval);
              });
    return result;
}

EngineResult Engine::run(PacketReader& reader) {
    while (auto rec = reader.next()) feed(*rec);
    return finish();
}

PacketRecord Engine::to_record(const SynthPacket& pkt, const std::vector<Cidr>& local_prefixes) {
    PacketRecord rec;
    rec.timestamp = ts_to_seconds(pkt.ts_us);
    rec.src_ip = pkt.src_ip;
    rec.dst_ip = pkt.dst_ip;
    rec.src_port = pkt.src_port;
    rec.dst_port = pkt.dst_port;
    rec.transport = pkt.transport;
    rec.payload_len = pkt.payload_size;
    if (pkt.transport == Transport::TCP) {
        rec.tcp_seq = pkt.seq;
        rec.tcp_flags = pkt.flags;
    }
    auto [dir, internal] = classify_direction(rec.src_ip, rec.dst_ip, local_prefixes);
    rec.direction = dir;
    rec.internal = internal;
    if (pkt.transport == Transport::TCP && !pkt.payload_bytes.empty()) {
        uint8_t first = pkt.payload_bytes[0];
        if (first >= 20 && first <= 23) {
            TlsMeta meta = parse_tls_client_hello(pkt.payload_bytes);
            if (meta.record_kind != TlsRecordKind::NONE) rec.tls = std::move(meta);
        }
    }
    return rec;
}

EngineResult Engine::run(const std::vector<SynthPacket>& packets) {
    for (const auto& pkt : packets) feed(to_record(pkt, cfg_.local_prefixes));
    return finish();
}

namespace {

ordered_json flow_json(const SessionFlowInfo& f) {
    ordered_json jf;
    jf["src"] = f.key.src_ip.to_string();
    jf["sport"] = f.key.src_port;
    jf["dst"] = f.key.dst_ip.to_string();
    jf["dport"] = f.key.dst_port;
    jf["transport"] = transport_name(f.key.transport);
    jf["domain_type"] = f.domain_type == DomainType::PRIMARY ? "primary" : "time_critical";
    jf["first_seen"] = f.first_seen;
    jf["detect_ts"] = f.detect_ts;
    jf["bytes_up"] = f.bytes_up;
    jf["bytes_down"] = f.bytes_down;
    jf["pkts_up"] = f.pkts_up;
    jf["pkts_down"] = f.pkts_down;
    if (f.rtt_ms) jf["rtt_ms"] = *f.rtt_ms;
    return jf;
}

} // namespace

std::string report_to_jsonl(const SessionReport& report) {
    ordered_json j;
    j["user"] = report.user_ip.to_string();
    j["app"] = report.metaverse;
    j["start"] = report.start;
    j["end"] = report.end;
    j["timeline"] = ordered_json::array();
    for (const auto& e : report.timeline) {
        j["timeline"].push_back(ordered_json{
            {"interval", e.interval},
            {"state", state_name(e.state)},
            {"confidence", e.confidence},
            {"path", e.path == ClassifierPath::STATEFUL ? "stateful" : "stateless"}});
    }
    j["per_state"] = ordered_json::object();
    for (const auto& [state, totals] : report.per_state) {
        j["per_state"][state_name(state)] =
            ordered_json{{"seconds", totals.seconds},
                         {"bytes_up", totals.bytes_up},
                         {"bytes_down", totals.bytes_down}};
    }
    j["flows"] = ordered_json::array();
    for (const auto& f : report.flows) j["flows"].push_back(flow_json(f));
    return j.dump();
}

std::string detection_to_jsonl(const Detection& d) {
    ordered_json j;
    j["ts"] = d.ts;
    j["user"] = d.user.to_string();
    j["app"] = d.metaverse;
    j["domain_type"] = d.domain_type == DomainType::PRIMARY ? "primary" : "time_critical";
    if (d.domain_type == DomainType::PRIMARY) {
        j["domain"] = d.domain;
        j["prefix"] = d.prefix;
    }
    j["src"] = d.key.src_ip.to_string();
    j["sport"] = d.key.src_port;
    j["dst"] = d.key.dst_ip.to_string();
    j["dport"] = d.key.dst_port;
    j["transport"] = transport_name(d.key.transport);
    return j.dump();
}

SessionReport report_from_jsonl(const std::string& line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::IoFailure, std::string("unparseable report line: ") + e.what());
    }
    SessionReport r;
    auto ip = IpAddr::parse(j.at("user").get<std::string>());
    if (!ip) throw Error(ErrorCode::IoFailure, "bad user ip in report");
    r.user_ip = *ip;
    r.metaverse = j.at("app").get<std::string>();
    r.start = j.at("start").get<double>();
    r.end = j.at("end").get<double>();
    for (const auto& je : j.at("timeline")) {
        TimelineEntry e;
        e.interval = je.at("interval").get<uint64_t>();
        e.state = state_from_name(je.at("state").get<std::string>()).value_or(StateLabel::UNKNOWN);
        e.confidence = je.at("confidence").get<double>();
        e.path = je.at("path").get<std::string>() == "stateful"
                     ? ClassifierPath::STATEFUL
                     : ClassifierPath::STATELESS_FALLBACK;
        r.timeline.push_back(e);
    }
    for (const auto& [name, jt] : j.at("per_state").items()) {
        auto state = state_from_name(name);
        if (!state) continue;
        SessionReport::StateTotals t;
        t.seconds = jt.at("seconds").get<double>();
        t.bytes_up = jt.at("bytes_up").get<uint64_t>();
        t.bytes_down = jt.at("bytes_down").get<uint64_t>();
        r.per_state[*state] = t;
    }
    for (const auto& jf : j.at("flows")) {
        SessionFlowInfo f;
        auto src = IpAddr::parse(jf.at("src").get<std::string>());
        auto dst = IpAddr::parse(jf.at("dst").get<std::string>());
        if (!src || !dst) throw Error(ErrorCode::IoFailure, "bad flow ip in report");
        f.key.src_ip = *src;
        f.key.dst_ip = *dst;
        f.key.src_port = jf.at("sport").get<uint16_t>();
        f.key.dst_port = jf.at("dport").get<uint16_t>();
        f.key.transport =
            jf.at("transport").get<std::string>() == "udp" ? Transport::UDP : Transport::TCP;
        f.domain_type = jf.at("domain_type").get<std::string>() == "primary"
                            ? DomainType::PRIMARY
                            : DomainType::TIME_CRITICAL;
        f.first_seen = jf.at("first_seen").get<double>();
        f.detect_ts = jf.at("detect_ts").get<double>();
        f.bytes_up = jf.at("bytes_up").get<uint64_t>();
        f.bytes_down = jf.at("bytes_down").get<uint64_t>();
        f.pkts_up = jf.at("pkts_up").get<uint64_t>();
        f.pkts_down = jf.at("pkts_down").get<uint64_t>();
        if (jf.contains("rtt_ms")) f.rtt_ms = jf.at("rtt_ms").get<double>();
        r.flows.push_back(std::move(f));
    }
    return r;
}

Detection detection_from_jsonl(const std::string& line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::IoFailure, std::string("unparseable detection line: ") + e.what());
    }
    Detection d;
    d.ts = j.at("ts").get<double>();
    auto user = IpAddr::parse(j.at("user").get<std::string>());
    auto src = IpAddr::parse(j.at("src").get<std::string>());
    auto dst = IpAddr::parse(j.at("dst").get<std::string>());
    if (!user || !src || !dst) throw Error(ErrorCode::IoFailure, "bad ip in detection line");
    d.user = *user;
    d.metaverse = j.at("app").get<std::string>();
    d.domain_type = j.at("domain_type").get<std::string>() == "primary"
                        ? DomainType::PRIMARY
                        : DomainType::TIME_CRITICAL;
    d.domain = j.value("domain", "");
    d.prefix = j.value("prefix", "");
    d.key.src_ip = *src;
    d.key.dst_ip = *dst;
    d.key.src_port = j.at("sport").get<uint16_t>();
    d.key.dst_port = j.at("dport").get<uint16_t>();
    d.key.transport = j.at("transport").get<std::string>() == "udp" ? Transport::UDP : Transport::TCP;
    return d;
}

std::vector<Detection> load_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open detections file " + path);
    std::vector<Detection> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(detection_from_jsonl(line));
    }
    return out;
}

std::vector<SessionReport> load_reports(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open reports file " + path);
    std::vector<SessionReport> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(report_from_jsonl(line));
    }
    return out;
}

} // namespace vrmon
