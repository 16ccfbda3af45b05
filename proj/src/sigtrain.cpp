#include "vrmon/sigtrain.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "vrmon/errors.hpp"

namespace vrmon {

namespace {

// Split "prod.shapevrcloud.com" around the label equal to the primary
// domain; everything before it is the service prefix.
std::vector<std::string> split_labels(const std::string& host) {
    std::vector<std::string> labels;
    size_t start = 0;
    while (start <= host.size()) {
        size_t dot = host.find('.', start);
        if (dot == std::string::npos) {
            labels.push_back(host.substr(start));
            break;
        }
        labels.push_back(host.substr(start, dot - start));
        start = dot + 1;
    }
    return labels;
}

std::optional<std::string> prefix_for_domain(const std::string& sni, const std::string& domain) {
    auto labels = split_labels(sni);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == domain) {
            std::string prefix;
            for (size_t j = 0; j < i; ++j) {
                if (j) prefix += '.';
                prefix += labels[j];
            }
            return prefix;
        }
    }
    return std::nullopt;
}

struct TrainFlow {
    std::string sni;
    std::vector<uint32_t> sizes;
    std::vector<uint32_t> seen_seqs;
    double first_ts = 0;
    bool complete = false; // saw the first application-data packet
};

// True if one sequence is a prefix of the other (equality included).
bool prefix_compatible(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b) {
    size_t n = std::min(a.size(), b.size());
    return std::equal(a.begin(), a.begin() + long(n), b.begin());
}

} // namespace

PrimaryTraining train_primary_signatures(const std::vector<std::string>& pcap_paths,
                                         const std::string& primary_domain,
                                         const std::string& metaverse,
                                         const std::vector<Cidr>& local_prefixes) {
    PrimaryTraining out;
    std::vector<std::vector<std::string>> per_session_orders;
    std::set<std::pair<std::string, std::vector<uint32_t>>> seen;
    bool any_primary = false;

    for (const auto& path : pcap_paths) {
        CaptureSource src;
        src.path = path;
        src.local_prefixes = local_prefixes;
        PacketReader reader(src);

        std::map<FlowKey, TrainFlow> flows;
        while (auto pkt = reader.next()) {
            out.latest_packet_ts = std::max(out.latest_packet_ts, pkt->timestamp);
            if (pkt->transport != Transport::TCP || !pkt->is_upstream() || pkt->payload_len == 0)
                continue;
            auto& flow = flows[pkt->canonical_key()];
            if (flow.sizes.empty()) flow.first_ts = pkt->timestamp;
            if (flow.complete) continue;
            if (pkt->tcp_seq) {
                if (std::find(flow.seen_seqs.begin(), flow.seen_seqs.end(), *pkt->tcp_seq) !=
                    flow.seen_seqs.end())
                    continue;
                flow.seen_seqs.push_back(*pkt->tcp_seq);
            }
            flow.sizes.push_back(pkt->payload_len);
            if (pkt->tls) {
                if (pkt->tls->record_kind == TlsRecordKind::CLIENT_HELLO && flow.sni.empty())
                    flow.sni = pkt->tls->sni;
                if (pkt->tls->record_kind == TlsRecordKind::APP_DATA) flow.complete = true;
            }
        }

        // Prefix order within this session: first appearance by flow start time.
        std::vector<std::pair<double, const TrainFlow*>> ordered;
        for (const auto& [key, flow] : flows)
            if (flow.complete && !flow.sni.empty()) ordered.push_back({flow.first_ts, &flow});
        std::sort(ordered.begin(), ordered.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });

        std::vector<std::string> session_order;
        for (const auto& [ts, flow] : ordered) {
            auto prefix = prefix_for_domain(flow->sni, primary_domain);
            if (!prefix) continue;
            any_primary = true;
            if (std::find(session_order.begin(), session_order.end(), *prefix) ==
                session_order.end())
                session_order.push_back(*prefix);
            if (seen.insert({*prefix, flow->sizes}).second)
                out.signatures.push_back({metaverse, primary_domain, *prefix, flow->sizes});
        }
        if (!session_order.empty()) per_session_orders.push_back(std::move(session_order));
    }

    if (!any_primary)
        throw Error(ErrorCode::NoPrimaryFlows,
                    "domain '" + primary_domain + "' never observed in the training captures");

    // All sessions must agree on the required-prefix set; the order is
    // majority-voted across sessions.
    std::set<std::string> first_set(per_session_orders[0].begin(), per_session_orders[0].end());
    for (const auto& order : per_session_orders) {
        std::set<std::string> s(order.begin(), order.end());
        if (s != first_set)
            throw Error(ErrorCode::InconsistentPrefixOrder,
                        "training sessions disagree on the required prefix set for '" +
                            primary_domain + "'");
    }
    std::map<std::vector<std::string>, int> votes;
    for (const auto& order : per_session_orders) votes[order]++;
    auto best = votes.begin();
    for (auto it = votes.begin(); it != votes.end(); ++it)
        if (it->second > best->second) best = it;
    out.prefix_order = best->first;

    std::sort(out.signatures.begin(), out.signatures.end(), [&](const auto& a, const auto& b) {
        auto pos = [&](const std::string& p) {
            auto it = std::find(out.prefix_order.begin(), out.prefix_order.end(), p);
            return it - out.prefix_order.begin();
        };
        if (pos(a.prefix) != pos(b.prefix)) return pos(a.prefix) < pos(b.prefix);
        if (a.prefix != b.prefix) return a.prefix < b.prefix;
        return a.size_seq < b.size_seq;
    });
    return out;
}

std::vector<UdpSignature> train_udp_signatures(const std::vector<LabeledCapture>& captures,
                                               const std::vector<uint16_t>& port_list,
                                               const UdpTrainConfig& cfg,
                                               const std::vector<Cidr>& local_prefixes) {
    struct FlowSizes {
        std::string metaverse;
        std::vector<uint32_t> sizes; // first max_len upstream payload sizes
    };
    std::map<uint16_t, std::vector<FlowSizes>> per_port;

    for (const auto& cap : captures) {
        CaptureSource src;
        src.path = cap.path;
        src.local_prefixes = local_prefixes;
        PacketReader reader(src);

        std::map<FlowKey, std::vector<uint32_t>> flows;
        while (auto pkt = reader.next()) {
            if (pkt->transport != Transport::UDP || !pkt->is_upstream() || pkt->payload_len == 0)
                continue;
            if (std::find(port_list.begin(), port_list.end(), pkt->dst_port) == port_list.end())
                continue;
            auto& sizes = flows[pkt->canonical_key()];
            if (sizes.size() < cfg.max_len) sizes.push_back(pkt->payload_len);
        }
        for (const auto& [key, sizes] : flows)
            if (sizes.size() >= cfg.min_len)
                per_port[key.dst_port].push_back({cap.metaverse, sizes});
    }

    std::vector<UdpSignature> out;
    for (auto& [port, flows] : per_port) {
        // Fixed lengths from config take priority; otherwise learn the
        // shortest length at which no two metaverses emit
        // prefix-compatible sequences on this port.
        size_t learned = 0;
        bool any_configured = false;
        for (const auto& f : flows)
            if (cfg.lengths.count({f.metaverse, port})) any_configured = true;

        if (!any_configured) {
            for (size_t n = cfg.min_len; n <= cfg.max_len && learned == 0; ++n) {
                bool conflict = false;
                for (size_t i = 0; i < flows.size() && !conflict; ++i)
                    for (size_t j = i + 1; j < flows.size() && !conflict; ++j) {
                        if (flows[i].metaverse == flows[j].metaverse) continue;
                        std::vector<uint32_t> a(flows[i].sizes.begin(),
                                                flows[i].sizes.begin() +
                                                    long(std::min(n, flows[i].sizes.size())));
                        std::vector<uint32_t> b(flows[j].sizes.begin(),
                                                flows[j].sizes.begin() +
                                                    long(std::min(n, flows[j].sizes.size())));
                        if (prefix_compatible(a, b)) conflict = true;
                    }
                if (!conflict) learned = n;
            }
            if (learned == 0)
                throw Error(ErrorCode::AmbiguousSignature,
                            "no sequence length in [" + std::to_string(cfg.min_len) + ", " +
                                std::to_string(cfg.max_len) + "] separates metaverses on port " +
                                std::to_string(port));
        }

        std::set<std::pair<std::string, std::vector<uint32_t>>> seen;
        std::map<std::vector<uint32_t>, std::string> claimed;
        for (const auto& f : flows) {
            size_t n = learned;
            auto it = cfg.lengths.find({f.metaverse, port});
            if (it != cfg.lengths.end()) n = it->second;
            if (n == 0 || f.sizes.size() < n) continue;
            std::vector<uint32_t> seq(f.sizes.begin(), f.sizes.begin() + long(n));
            auto cl = claimed.find(seq);
            if (cl != claimed.end() && cl->second != f.metaverse)
                throw Error(ErrorCode::AmbiguousSignature,
                            "identical sequence on port " + std::to_string(port) +
                                " claimed by " + cl->second + " and " + f.metaverse);
            claimed[seq] = f.metaverse;
            if (seen.insert({f.metaverse, seq}).second) out.push_back({f.metaverse, port, seq});
        }
    }

    std::sort(out.begin(), out.end(), [](const UdpSignature& a, const UdpSignature& b) {
        return std::tie(a.metaverse, a.port, a.size_seq) < std::tie(b.metaverse, b.port, b.size_seq);
    });
    return out;
}

} // namespace vrmon
