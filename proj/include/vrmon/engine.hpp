#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vrmon/capture.hpp"
#include "vrmon/classifier.hpp"
#include "vrmon/flowtable.hpp"
#include "vrmon/forest.hpp"
#include "vrmon/session.hpp"
#include "vrmon/signatures.hpp"
#include "vrmon/synth.hpp"

namespace vrmon {

struct ClassifierPack {
    ForestModel stateless;
    ForestModel stateful;
};

struct EngineModels {
    SignatureSet signatures;
    std::map<std::string, ClassifierPack> classifiers; // keyed by app
};

struct EngineConfig {
    double interval_len = 10.0;
    size_t n_past = 5;       // N
    double threshold = 0.85; // T
    std::vector<Cidr> local_prefixes;
    std::vector<uint16_t> udp_ports; // empty: take the model's ports
    FlowTableConfig flow_table;
    double session_idle_timeout = 120.0;
    double eviction_period = 5.0;
    size_t shards = 1;
    size_t queue_capacity = 1 << 16;
    bool collect_attrs = false;
    bool collect_samples = false; // per-cycle timing samples (bench)
    bool stage2_enabled = true;
    // invoked as sessions close (live streaming); reports are still
    // collected and sorted into the final result
    std::function<void(const SessionReport&)> on_report;
};

struct Detection {
    double ts = 0;
    IpAddr user;
    std::string metaverse;
    std::string domain; // empty for UDP detections
    std::string prefix;
    FlowKey key;
    DomainType domain_type = DomainType::PRIMARY;
};

struct AttrRow {
    IpAddr user;
    std::string metaverse;
    uint64_t interval = 0;
    AttributeVector attrs;
    std::vector<StateLabel> past; // ring content before this classification
    StateLabel predicted = StateLabel::UNKNOWN;
    double confidence = 0;
    ClassifierPath path = ClassifierPath::STATELESS_FALLBACK;
};

struct EngineMetrics {
    uint64_t packets = 0;
    uint64_t queue_drops = 0;
    uint64_t capacity_drops = 0;
    uint64_t flow_detections = 0;
    uint64_t udp_orphans = 0;
    uint64_t sessions_started = 0;
    uint64_t sessions_closed = 0;
    uint64_t intervals_classified = 0;
    uint64_t stateless_fallbacks = 0;
    uint64_t detect_ns = 0, stats_ns = 0, classify_ns = 0;
    std::vector<double> detect_samples_ms, stats_samples_ms, classify_samples_ms;

    void merge(const EngineMetrics& o);
};

struct EngineResult {
    std::vector<SessionReport> reports;
    std::vector<Detection> detections;
    std::vector<AttrRow> attr_rows;
    EngineMetrics metrics;
};

// The three-stage engine: candidate filtering and signature matching,
// per-session interval accounting, periodic classification. One worker
// owns each user's flows end to end (sharded by user IP hash).
class Engine {
public:
    Engine(EngineModels models, EngineConfig cfg);
    ~Engine();

    EngineResult run(PacketReader& reader);
    EngineResult run(const std::vector<SynthPacket>& packets);

    // incremental interface for paced/live feeding
    void feed_one(const PacketRecord& rec) { feed(rec); }
    EngineResult finish_run() { return finish(); }

    static PacketRecord to_record(const SynthPacket& pkt, const std::vector<Cidr>& local_prefixes);

private:
    struct Shard;
    void feed(const PacketRecord& rec);
    EngineResult finish();

    EngineModels models_;
    SignatureMatcher matcher_;
    EngineConfig cfg_;
    std::vector<uint16_t> ports_;
    std::vector<std::unique_ptr<Shard>> shards_;
    uint64_t queue_drops_ = 0;
};

// JSON-lines serialization of session reports (deterministic field order).
std::string report_to_jsonl(const SessionReport& report);
std::string detection_to_jsonl(const Detection& d);
SessionReport report_from_jsonl(const std::string& line);
Detection detection_from_jsonl(const std::string& line);
std::vector<SessionReport> load_reports(const std::string& path);
std::vector<Detection> load_detections(const std::string& path);

} // namespace vrmon
