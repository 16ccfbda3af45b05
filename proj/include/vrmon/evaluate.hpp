#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vrmon/engine.hpp"
#include "vrmon/synth.hpp"

namespace vrmon {

enum class DurationBucket : uint8_t { ALL, LONG, MED, SHORT };
// Long >= 30 s, Med in [10, 30), Short < 10 s.
DurationBucket bucket_of(double duration_s);

struct FlowAccuracy {
    uint64_t truth = 0;
    uint64_t detected = 0;
    double tp_rate() const { return truth ? double(detected) / double(truth) : 0.0; }
};

struct AppEval {
    uint64_t truth_sessions = 0;
    uint64_t detected_sessions = 0;
    uint64_t interval_count_mismatches = 0;
    // [domain_type][bucket]
    std::map<DomainType, std::array<FlowAccuracy, 4>> flows;
    std::vector<ClassAccuracy> states; // per-interval classification accuracy
    std::map<std::pair<StateLabel, StateLabel>, uint64_t> confusion; // (truth, predicted)
};

struct EvalResult {
    std::map<std::string, AppEval> apps;
    uint64_t session_fp = 0; // reported sessions with no ground truth
    uint64_t flow_fp = 0;    // detected flows absent from every sidecar
    std::optional<uint64_t> negative_flows; // denominator for FP rates, when known
    uint64_t truth_sessions_total = 0;
    uint64_t detected_sessions_total = 0;
};

// Joins reports and flow-level detections against ground-truth
// sidecars. Throws Error(SidecarMismatch) on malformed truth.
EvalResult evaluate(const std::vector<SessionReport>& reports,
                    const std::vector<Detection>& detections, const SidecarFile& truth,
                    double interval_len = 10.0);

std::string format_eval(const EvalResult& eval);

// ---- latency-per-AS reporting -------------------------------------------

struct AsMapEntry {
    Cidr cidr;
    std::string label;
};

std::vector<AsMapEntry> load_as_map(const std::string& path); // Error(BadAsMap)

struct LatencyRow {
    std::string as_label;
    // <10ms, 10-20ms, 20-50ms, >50ms
    std::array<uint64_t, 4> buckets{};
    uint64_t unmeasured = 0;
};

std::vector<LatencyRow> report_latency_by_as(const std::vector<SessionReport>& reports,
                                             const std::vector<AsMapEntry>& as_map);
std::string format_latency_table(const std::vector<LatencyRow>& rows);

// ---- processing-overhead benchmark ---------------------------------------

struct BenchResult {
    size_t sessions = 0;
    uint64_t cycles = 0; // classified intervals
    double detect_ms_mean = 0, detect_ms_sigma = 0;    // per 10 s window, whole worker
    double stats_ms_mean = 0, stats_ms_sigma = 0;
    double classify_ms_mean = 0, classify_ms_sigma = 0;
    double per_session_cycle_ms = 0; // all three stages, per session per 10 s
    double sessions_per_core = 0;    // 10 s budget / per-session cost
};

BenchResult bench(const SignatureSet& signatures, const ProfileSet& profiles, size_t n_sessions,
                  uint64_t seed);
std::string format_bench(const BenchResult& r);

} // namespace vrmon
