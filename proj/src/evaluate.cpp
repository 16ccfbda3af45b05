#include "vrmon/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "vrmon/errors.hpp"
#include "vrmon/rng.hpp"

namespace vrmon {

DurationBucket bucket_of(double duration_s) {
    if (duration_s >= 30.0) return DurationBucket::LONG;
    if (duration_s >= 10.0) return DurationBucket::MED;
    return DurationBucket::SHORT;
}

namespace {

struct KeyLess {
    bool operator()(const FlowKey& a, const FlowKey& b) const { return a < b; }
};

std::vector<ClassAccuracy> state_accuracy(const std::map<std::pair<StateLabel, StateLabel>, uint64_t>& confusion) {
    std::set<StateLabel> labels;
    for (const auto& [pair, count] : confusion) {
        labels.insert(pair.first);
        labels.insert(pair.second);
    }
    std::vector<ClassAccuracy> out;
    for (StateLabel c : labels) {
        uint64_t tp = 0, fp = 0, pos = 0, neg = 0;
        for (const auto& [pair, count] : confusion) {
            auto [truth, predicted] = pair;
            if (truth == c) {
                pos += count;
                if (predicted == c) tp += count;
            } else {
                neg += count;
                if (predicted == c) fp += count;
            }
        }
        ClassAccuracy acc;
        acc.label = c;
        acc.support = pos;
        acc.tp_rate = pos ? double(tp) / double(pos) : 0.0;
        acc.fp_rate = neg ? double(fp) / double(neg) : 0.0;
        out.push_back(acc);
    }
    return out;
}

} // namespace

EvalResult evaluate(const std::vector<SessionReport>& reports,
                    const std::vector<Detection>& detections, const SidecarFile& truth,
                    double interval_len) {
    EvalResult result;

    // Ground-truth flow index across all sessions.
    struct TruthFlow {
        const SessionSidecar* session;
        const SidecarFlow* flow;
        bool detected = false;
    };
    std::map<FlowKey, TruthFlow, KeyLess> truth_flows;
    for (const auto& s : truth.sessions) {
        if (s.session_end < s.session_start)
            throw Error(ErrorCode::SidecarMismatch, "sidecar session ends before it starts");
        result.truth_sessions_total++;
        result.apps[s.metaverse].truth_sessions++;
        for (const auto& f : s.flows) truth_flows[f.key] = {&s, &f, false};
    }

    // Detected flows: every stage-1/2 match plus every tracked flow in
    // a session report.
    std::set<FlowKey, KeyLess> detected_keys;
    for (const auto& d : detections) detected_keys.insert(d.key);
    for (const auto& r : reports)
        for (const auto& f : r.flows) detected_keys.insert(f.key);

    for (const FlowKey& key : detected_keys) {
        auto it = truth_flows.find(key);
        if (it == truth_flows.end()) {
            result.flow_fp++;
            continue;
        }
        it->second.detected = true;
    }
    for (const auto& [key, tf] : truth_flows) {
        auto& acc = result.apps[tf.session->metaverse].flows[tf.flow->domain_type];
        double duration = tf.flow->last_ts - tf.flow->first_ts;
        acc[size_t(DurationBucket::ALL)].truth++;
        acc[size_t(bucket_of(duration))].truth++;
        if (tf.detected) {
            acc[size_t(DurationBucket::ALL)].detected++;
            acc[size_t(bucket_of(duration))].detected++;
        }
    }

    // Session-level matching by user, app and start time.
    std::vector<bool> report_matched(reports.size(), false);
    for (const auto& s : truth.sessions) {
        const SessionReport* best = nullptr;
        size_t best_idx = 0;
        for (size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            if (report_matched[i] || r.user_ip != s.user_ip || r.metaverse != s.metaverse)
                continue;
            if (std::abs(r.start - s.session_start) > interval_len) continue;
            if (!best || std::abs(r.start - s.session_start) < std::abs(best->start - s.session_start)) {
                best = &r;
                best_idx = i;
            }
        }
        if (!best) continue;
        report_matched[best_idx] = true;
        auto& app = result.apps[s.metaverse];
        app.detected_sessions++;
        result.detected_sessions_total++;

        if (best->timeline.size() != s.interval_states.size()) app.interval_count_mismatches++;
        size_t n = std::min(best->timeline.size(), s.interval_states.size());
        for (size_t k = 0; k < n; ++k)
            app.confusion[{s.interval_states[k], best->timeline[k].state}]++;
    }
    for (size_t i = 0; i < reports.size(); ++i)
        if (!report_matched[i]) result.session_fp++;

    for (auto& [name, app] : result.apps) app.states = state_accuracy(app.confusion);
    return result;
}

namespace {

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", v * 100.0);
    return buf;
}

} // namespace

std::string format_eval(const EvalResult& eval) {
    std::ostringstream out;
    out << "sessions: truth=" << eval.truth_sessions_total
        << " detected=" << eval.detected_sessions_total << " (TP "
        << pct(eval.truth_sessions_total
                   ? double(eval.detected_sessions_total) / double(eval.truth_sessions_total)
                   : 0.0)
        << ") | FP " << eval.session_fp << "\n";
    out << "flow-level false positives: " << eval.flow_fp;
    if (eval.negative_flows)
        out << " of " << *eval.negative_flows << " negatives ("
            << pct(double(eval.flow_fp) / double(std::max<uint64_t>(1, *eval.negative_flows)))
            << ")";
    out << "\n";

    static const char* bucket_names[4] = {"All", "Long", "Med.", "Short"};
    for (const auto& [app, a] : eval.apps) {
        out << "\n[" << app << "] sessions " << a.detected_sessions << "/" << a.truth_sessions
            << "\n";
        for (const auto& [type, buckets] : a.flows) {
            out << "  " << (type == DomainType::PRIMARY ? "primary flows      " : "time-critical flows");
            for (size_t b = 0; b < 4; ++b) {
                const auto& acc = buckets[b];
                out << "  " << bucket_names[b] << " ";
                if (acc.truth == 0)
                    out << "--";
                else
                    out << pct(acc.tp_rate()) << " (" << acc.detected << "/" << acc.truth << ")";
            }
            out << "\n";
        }
        if (!a.states.empty()) {
            out << "  state TP|FP:";
            for (const auto& acc : a.states)
                out << "  " << state_name(acc.label) << " " << pct(acc.tp_rate) << "|"
                    << pct(acc.fp_rate);
            out << "\n";
        }
        if (a.interval_count_mismatches)
            out << "  interval count mismatches: " << a.interval_count_mismatches << "\n";
    }
    return out.str();
}

std::vector<AsMapEntry> load_as_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::BadAsMap, "cannot open AS map " + path);
    std::vector<AsMapEntry> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty() || line[0] == '#') continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw Error(ErrorCode::BadAsMap, path + ":" + std::to_string(line_no) + ": want cidr,label");
        auto cidr = Cidr::parse(line.substr(0, comma));
        if (!cidr)
            throw Error(ErrorCode::BadAsMap,
                        path + ":" + std::to_string(line_no) + ": bad CIDR '" +
                            line.substr(0, comma) + "'");
        std::string label = line.substr(comma + 1);
        while (!label.empty() && (label.back() == '\r' || label.back() == ' ')) label.pop_back();
        if (label.empty())
            throw Error(ErrorCode::BadAsMap, path + ":" + std::to_string(line_no) + ": empty label");
        out.push_back({*cidr, label});
    }
    return out;
}

std::vector<LatencyRow> report_latency_by_as(const std::vector<SessionReport>& reports,
                                             const std::vector<AsMapEntry>& as_map) {
    std::map<std::string, LatencyRow> rows;
    for (const auto& r : reports) {
        for (const auto& f : r.flows) {
            std::string label = "UNKNOWN_AS";
            for (const auto& entry : as_map) {
                if (entry.cidr.contains(f.key.dst_ip)) {
                    label = entry.label;
                    break;
                }
            }
            auto& row = rows[label];
            row.as_label = label;
            if (!f.rtt_ms) {
                row.unmeasured++;
                continue;
            }
            double rtt = *f.rtt_ms;
            size_t bucket = rtt < 10.0 ? 0 : rtt < 20.0 ? 1 : rtt < 50.0 ? 2 : 3;
            row.buckets[bucket]++;
        }
    }
    std::vector<LatencyRow> out;
    for (auto& [label, row] : rows) out.push_back(std::move(row));
    return out;
}

std::string format_latency_table(const std::vector<LatencyRow>& rows) {
    std::ostringstream out;
    out << "AS,<10ms,10-20ms,20-50ms,>50ms,unmeasured\n";
    for (const auto& r : rows) {
        out << r.as_label;
        for (uint64_t b : r.buckets) out << "," << b;
        out << "," << r.unmeasured << "\n";
    }
    return out.str();
}

namespace {

std::pair<double, double> mean_sigma(const std::vector<double>& v) {
    if (v.empty()) return {0, 0};
    double mean = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double acc = 0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return {mean, std::sqrt(acc / double(v.size()))};
}

// Forest with realistic shape for timing purposes: random balanced
// trees over the stateful feature width.
ForestModel make_bench_forest(const std::vector<StateLabel>& labels, size_t n_features,
                              size_t n_trees, size_t depth, uint64_t seed) {
    ForestModel model;
    model.app = "bench";
    model.label_space = labels;
    model.n_features = n_features;
    model.hyperparams = {n_trees, depth, 8};
    Rng rng(seed);
    for (size_t t = 0; t < n_trees; ++t) {
        Tree tree;
        // nodes laid out level by level
        size_t inner = (size_t(1) << depth) - 1;
        size_t total = (size_t(1) << (depth + 1)) - 1;
        tree.nodes.resize(total);
        for (size_t i = 0; i < total; ++i) {
            if (i < inner) {
                tree.nodes[i].feature = int(rng.below(n_features));
                tree.nodes[i].threshold = rng.uniform(0, 1000);
                tree.nodes[i].left = int(2 * i + 1);
                tree.nodes[i].right = int(2 * i + 2);
            } else {
                tree.nodes[i].histogram.assign(labels.size(), 0);
                tree.nodes[i].histogram[size_t(rng.below(labels.size()))] = 1;
            }
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

} // namespace

BenchResult bench(const SignatureSet& signatures, const ProfileSet& profiles, size_t n_sessions,
                  uint64_t seed) {
    const std::string app = "Multiverse";
    auto pit = profiles.apps.find(app);
    if (pit == profiles.apps.end())
        throw Error(ErrorCode::ConfigError, "bench needs a Multiverse profile");

    std::vector<std::vector<SynthPacket>> streams;
    SidecarFile truth;
    Rng rng(seed);
    for (size_t i = 0; i < n_sessions; ++i) {
        SessionScript script;
        script.metaverse = app;
        script.user_ip = IpAddr::v4(10, uint8_t(1 + i / 250), uint8_t(1 + i % 250), uint8_t(2 + i % 200));
        script.seed = seed * 1000003 + i;
        script.start_ts = 1700000000.0 + double(rng.below(8000)) / 1000.0;
        script.segments = {{StateLabel::HS, 20}, {StateLabel::MH, 40}};
        auto trace = generate_session(script, signatures, profiles);
        streams.push_back(std::move(trace.packets));
        truth.sessions.push_back(std::move(trace.sidecar));
    }
    auto packets = merge_streams(std::move(streams));

    EngineModels models;
    models.signatures = signatures;
    std::vector<StateLabel> labels = {StateLabel::HS, StateLabel::MH, StateLabel::SUE,
                                      StateLabel::SPE, StateLabel::AT};
    ClassifierPack pack;
    pack.stateless = make_bench_forest(labels, kNumAttributes, 100, 10, seed + 1);
    pack.stateful =
        make_bench_forest(labels, kNumAttributes + 5 * labels.size(), 100, 10, seed + 2);
    pack.stateless.n_past = 0;
    pack.stateful.n_past = 5;
    pack.stateful.feature_spec = FeatureSpec::STATEFUL_40_PLUS_NK;
    models.classifiers[app] = std::move(pack);

    EngineConfig cfg;
    cfg.local_prefixes = {*Cidr::parse("10.0.0.0/8")};
    cfg.collect_samples = true;
    Engine engine(std::move(models), cfg);
    auto result = engine.run(packets);

    BenchResult out;
    out.sessions = n_sessions;
    out.cycles = result.metrics.intervals_classified;
    auto [dm, ds] = mean_sigma(result.metrics.detect_samples_ms);
    auto [sm, ss] = mean_sigma(result.metrics.stats_samples_ms);
    auto [cm, cs] = mean_sigma(result.metrics.classify_samples_ms);
    out.detect_ms_mean = dm;
    out.detect_ms_sigma = ds;
    out.stats_ms_mean = sm;
    out.stats_ms_sigma = ss;
    out.classify_ms_mean = cm;
    out.classify_ms_sigma = cs;

    double total_ms = double(result.metrics.detect_ns + result.metrics.stats_ns +
                             result.metrics.classify_ns) *
                      1e-6;
    uint64_t cycles = std::max<uint64_t>(1, result.metrics.intervals_classified);
    out.per_session_cycle_ms = total_ms / double(cycles);
    out.sessions_per_core =
        out.per_session_cycle_ms > 0 ? 10000.0 / out.per_session_cycle_ms : 1e9;
    return out;
}

std::string format_bench(const BenchResult& r) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "sessions: %zu, inference cycles: %llu\n", r.sessions,
                  (unsigned long long)r.cycles);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "session detection:  %.4f ms per 10s window (sigma %.4f)\n", r.detect_ms_mean,
                  r.detect_ms_sigma);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "runtime statistics: %.4f ms per 10s window (sigma %.4f)\n", r.stats_ms_mean,
                  r.stats_ms_sigma);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "classification:     %.4f ms per cycle (sigma %.4f)\n", r.classify_ms_mean,
                  r.classify_ms_sigma);
    out << buf;
    std::snprintf(buf, sizeof(buf), "per-session cycle cost: %.4f ms -> %.0f sessions per core\n",
                  r.per_session_cycle_ms, r.sessions_per_core);
    out << buf;
    return out.str();
}

} // namespace vrmon
