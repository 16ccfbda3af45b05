// Test-only oracles: deliberately naive re-implementations that stay
// independent of the library's data structures (linear scans, offline
// recounts, hand-rolled statistics).
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "vrmon/attributes.hpp"
#include "vrmon/engine.hpp"
#include "vrmon/signatures.hpp"
#include "vrmon/synth.hpp"

namespace oracle {

using namespace vrmon;

// ---- exact-match semantics by linear scan ---------------------------------

inline bool is_strict_prefix(const std::vector<uint32_t>& seq, const std::vector<uint32_t>& sig) {
    if (seq.size() >= sig.size()) return false;
    return std::equal(seq.begin(), seq.end(), sig.begin());
}

inline MatchKind scan_primary(const SignatureSet& set, const std::vector<uint32_t>& seq,
                              std::string* metaverse = nullptr, std::string* prefix = nullptr) {
    for (const auto& sig : set.primaries) {
        if (sig.size_seq == seq) {
            if (metaverse) *metaverse = sig.metaverse;
            if (prefix) *prefix = sig.prefix;
            return MatchKind::MATCH;
        }
    }
    for (const auto& sig : set.primaries)
        if (is_strict_prefix(seq, sig.size_seq)) return MatchKind::PENDING;
    return MatchKind::REJECT;
}

inline MatchKind scan_udp(const SignatureSet& set, uint16_t port,
                          const std::vector<uint32_t>& seq, std::string* metaverse = nullptr) {
    bool port_known = false;
    for (const auto& sig : set.udp)
        if (sig.port == port) port_known = true;
    if (!port_known) return MatchKind::REJECT;
    for (const auto& sig : set.udp) {
        if (sig.port == port && sig.size_seq == seq) {
            if (metaverse) *metaverse = sig.metaverse;
            return MatchKind::MATCH;
        }
    }
    for (const auto& sig : set.udp)
        if (sig.port == port && is_strict_prefix(seq, sig.size_seq)) return MatchKind::PENDING;
    return MatchKind::REJECT;
}

// ---- naive statistics ------------------------------------------------------

inline double naive_median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline double naive_sigma(const std::vector<double>& v) {
    if (v.size() < 2) return 0;
    double m = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size()));
}

// ---- offline per-interval attribute recount --------------------------------

// Recomputes the forty attributes for one reported session straight
// from the raw packet stream, using only the report's flow roster
// (keys, domain types, detection times) and the session start.
struct OfflineAttrs {
    std::vector<AttributeVector> intervals;
};

inline OfflineAttrs recompute_attributes(const std::vector<SynthPacket>& packets,
                                         const SessionReport& report,
                                         const std::vector<Cidr>& local_prefixes,
                                         double interval_len, double flow_idle_timeout) {
    struct FlowAgg {
        DomainType type;
        double detect_ts = 0;
        double first_seen = 1e300;
        std::map<uint64_t, std::pair<uint64_t, uint64_t>> per_interval; // k -> (bytes_up, pkts_up)
        std::vector<double> activity; // accumulated packet times
    };
    std::map<std::string, FlowAgg> flows; // keyed by printable 5-tuple
    for (const auto& f : report.flows) {
        FlowAgg agg;
        agg.type = f.domain_type;
        agg.detect_ts = f.detect_ts;
        flows[f.key.to_string()] = agg;
    }

    double start = report.start;
    size_t n_intervals = report.timeline.size();

    for (const auto& sp : packets) {
        PacketRecord rec = Engine::to_record(sp, local_prefixes);
        FlowKey key = rec.canonical_key();
        auto it = flows.find(key.to_string());
        if (it == flows.end()) continue;
        FlowAgg& agg = it->second;
        if (rec.is_upstream()) agg.first_seen = std::min(agg.first_seen, rec.timestamp);
        double from = std::max(agg.detect_ts, start);
        if (!(rec.timestamp > from)) continue;
        agg.activity.push_back(rec.timestamp);
        uint64_t k = uint64_t((rec.timestamp - start) / interval_len);
        if (rec.is_upstream() && k < n_intervals) {
            auto& cell = agg.per_interval[k];
            cell.first += rec.payload_len;
            cell.second += 1;
        }
    }

    OfflineAttrs out;
    std::map<std::string, bool> evicted;
    std::map<std::string, double> last_activity;
    for (auto& [name, agg] : flows) last_activity[name] = agg.detect_ts;

    for (uint64_t k = 0; k < n_intervals; ++k) {
        double end = start + double(k + 1) * interval_len;
        IntervalStats stats;
        for (auto& [name, agg] : flows) {
            double attach = std::max(agg.detect_ts, start);
            uint64_t attach_k = attach <= start ? 0 : uint64_t((attach - start) / interval_len);
            if (attach_k > k || evicted[name]) continue;
            FlowIntervalRow row;
            row.cls = flow_class(name.find("/udp") != std::string::npos ? Transport::UDP
                                                                        : Transport::TCP,
                                 agg.type);
            auto cit = agg.per_interval.find(k);
            if (cit != agg.per_interval.end()) {
                row.bytes_up = cit->second.first;
                row.pkts_up = cit->second.second;
            }
            uint64_t born = 0;
            if (agg.first_seen > start) born = uint64_t((agg.first_seen - start) / interval_len);
            row.is_new = born == k;
            stats.flows.push_back(row);

            for (double t : agg.activity)
                if (t < end) last_activity[name] = std::max(last_activity[name], t);
            if (end - last_activity[name] > flow_idle_timeout) evicted[name] = true;
        }

        // independent attribute math
        AttributeVector attrs;
        for (size_t cls = 0; cls < kNumFlowClasses; ++cls) {
            std::vector<double> vols, counts, sizes;
            double concurrent = 0, fresh = 0, vol = 0, pkts = 0;
            for (const auto& row : stats.flows) {
                if (size_t(row.cls) != cls) continue;
                concurrent += 1;
                fresh += row.is_new ? 1 : 0;
                vol += double(row.bytes_up);
                pkts += double(row.pkts_up);
                vols.push_back(double(row.bytes_up));
                counts.push_back(double(row.pkts_up));
                sizes.push_back(row.pkts_up ? double(row.bytes_up) / double(row.pkts_up) : 0.0);
            }
            attrs.a[cls * 6 + 0] = naive_median(vols);
            attrs.a[cls * 6 + 1] = naive_median(counts);
            attrs.a[cls * 6 + 2] = naive_median(sizes);
            attrs.a[cls * 6 + 3] = naive_sigma(vols);
            attrs.a[cls * 6 + 4] = naive_sigma(counts);
            attrs.a[cls * 6 + 5] = naive_sigma(sizes);
            attrs.a[24 + cls * 4 + 0] = concurrent;
            attrs.a[24 + cls * 4 + 1] = fresh;
            attrs.a[24 + cls * 4 + 2] = vol;
            attrs.a[24 + cls * 4 + 3] = pkts;
        }
        out.intervals.push_back(attrs);
    }
    return out;
}

// ---- per-tree forest traversal ---------------------------------------------

inline size_t walk_tree(const Tree& tree, std::span<const double> x) {
    int node = 0;
    while (tree.nodes[size_t(node)].feature >= 0) {
        const auto& n = tree.nodes[size_t(node)];
        node = x[size_t(n.feature)] <= n.threshold ? n.left : n.right;
    }
    const auto& hist = tree.nodes[size_t(node)].histogram;
    size_t best = 0;
    for (size_t i = 1; i < hist.size(); ++i)
        if (hist[i] > hist[best]) best = i;
    return best;
}

inline Prediction manual_vote(const ForestModel& model, std::span<const double> x) {
    std::vector<uint32_t> votes(model.label_space.size(), 0);
    for (const auto& tree : model.trees) votes[walk_tree(tree, x)]++;
    size_t best = 0;
    for (size_t i = 1; i < votes.size(); ++i)
        if (votes[i] > votes[best]) best = i;
    return {model.label_space[best],
            model.trees.empty() ? 0.0 : double(votes[best]) / double(model.trees.size())};
}

} // namespace oracle
