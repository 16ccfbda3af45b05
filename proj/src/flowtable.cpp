#include "vrmon/flowtable.hpp"

#include <algorithm>

namespace vrmon {

namespace {

bool is_pure_syn(const PacketRecord& pkt) {
    return pkt.tcp_flags && (*pkt.tcp_flags & tcpflags::SYN) && !(*pkt.tcp_flags & tcpflags::ACK);
}
bool is_synack(const PacketRecord& pkt) {
    return pkt.tcp_flags && (*pkt.tcp_flags & tcpflags::SYN) && (*pkt.tcp_flags & tcpflags::ACK);
}

} // namespace

bool update_rtt(FlowState& flow, const PacketRecord& pkt) {
    if (pkt.transport != Transport::TCP) return false;

    if (pkt.is_upstream()) {
        if (is_pure_syn(pkt) && pkt.payload_len == 0 && !flow.syn_ts) {
            flow.syn_ts = pkt.timestamp;
            flow.awaiting_synack = true;
            return false;
        }
        if (pkt.payload_len > 0 && !flow.first_up_payload_ts) {
            flow.first_up_payload_ts = pkt.timestamp;
            flow.awaiting_response = true;
        }
        return false;
    }

    if (flow.awaiting_synack && is_synack(pkt) && flow.syn_ts) {
        flow.rtt_ms = (pkt.timestamp - *flow.syn_ts) * 1000.0;
        flow.awaiting_synack = false;
        return true;
    }
    if (flow.awaiting_response && pkt.payload_len > 0 && flow.first_up_payload_ts) {
        flow.rtt_ms = (pkt.timestamp - *flow.first_up_payload_ts) * 1000.0;
        flow.awaiting_response = false;
        return true;
    }
    return false;
}

std::pair<FlowUpdate, FlowState*> FlowTable::upsert_packet(const PacketRecord& pkt, double now) {
    FlowKey key = pkt.canonical_key();
    IpAddr user = pkt.user_ip();

    auto& flows = users_[user];
    auto it = flows.find(key);
    bool created = false;
    if (it == flows.end()) {
        if (!pkt.is_upstream()) {
            if (flows.empty()) users_.erase(user);
            return {FlowUpdate::NO_FLOW, nullptr};
        }
        if (count_ >= cfg_.max_flows) {
            capacity_drops_++;
            if (flows.empty()) users_.erase(user);
            return {FlowUpdate::DROPPED, nullptr};
        }
        FlowState st;
        st.key = key;
        st.first_seen = now;
        it = flows.emplace(key, std::move(st)).first;
        count_++;
        created = true;
    }

    FlowState& flow = it->second;
    flow.last_seen = std::max(flow.last_seen, now);
    if (pkt.is_upstream()) {
        flow.pkts_up++;
        flow.bytes_up += pkt.payload_len;
    } else {
        flow.pkts_down++;
        flow.bytes_down += pkt.payload_len;
    }
    update_rtt(flow, pkt);

    if (!pkt.is_upstream() || pkt.payload_len == 0 || flow.match_status != MatchStatus::PENDING)
        return {created ? FlowUpdate::CREATED : FlowUpdate::COUNTED_ONLY, &flow};

    // Duplicate TCP sequence numbers stay in the volume counters but
    // never enter the size sequence.
    if (pkt.tcp_seq) {
        if (std::find(flow.seen_seqs.begin(), flow.seen_seqs.end(), *pkt.tcp_seq) !=
            flow.seen_seqs.end())
            return {FlowUpdate::IGNORED_RETRANSMIT, &flow};
        flow.seen_seqs.push_back(*pkt.tcp_seq);
    }

    if (flow.upstream_size_seq.size() < cfg_.k_max) {
        flow.upstream_size_seq.push_back(pkt.payload_len);
        return {created ? FlowUpdate::CREATED : FlowUpdate::APPENDED_SIZE, &flow};
    }
    return {created ? FlowUpdate::CREATED : FlowUpdate::COUNTED_ONLY, &flow};
}

FlowState* FlowTable::find(const IpAddr& user, const FlowKey& key) {
    auto uit = users_.find(user);
    if (uit == users_.end()) return nullptr;
    auto fit = uit->second.find(key);
    if (fit == uit->second.end()) return nullptr;
    return &fit->second;
}

std::vector<FlowState> FlowTable::evict_idle(double now) {
    std::vector<FlowState> evicted;
    for (auto uit = users_.begin(); uit != users_.end();) {
        auto& flows = uit->second;
        for (auto fit = flows.begin(); fit != flows.end();) {
            const FlowState& f = fit->second;
            double timeout = f.match_status == MatchStatus::MATCHED ? cfg_.idle_timeout_tracked
                                                                    : cfg_.idle_timeout_candidate;
            if (now - f.last_seen > timeout) {
                evicted.push_back(f);
                fit = flows.erase(fit);
                count_--;
            } else {
                ++fit;
            }
        }
        uit = flows.empty() ? users_.erase(uit) : std::next(uit);
    }
    return evicted;
}

} // namespace vrmon
