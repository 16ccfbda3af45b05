#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vrmon/packet.hpp"

namespace vrmon {

enum class MatchStatus : uint8_t { PENDING, MATCHED, REJECTED };

enum class DomainType : uint8_t { PRIMARY, TIME_CRITICAL };

struct MatchedLabel {
    std::string metaverse;
    std::string domain; // empty for UDP matches
    std::string prefix; // empty for UDP matches
    DomainType domain_type = DomainType::PRIMARY;
};

struct FlowState {
    FlowKey key;
    std::vector<uint32_t> upstream_size_seq; // capped at K_max
    MatchStatus match_status = MatchStatus::PENDING;
    std::optional<MatchedLabel> label;
    double first_seen = 0;
    double last_seen = 0;
    uint64_t pkts_up = 0, pkts_down = 0;
    uint64_t bytes_up = 0, bytes_down = 0;

    // Retransmission suppression: sequence numbers already contributing
    // to upstream_size_seq.
    std::vector<uint32_t> seen_seqs;

    // Passive RTT: SYN -> SYN-ACK, refreshed by first upstream payload
    // -> first downstream payload.
    std::optional<double> syn_ts;
    std::optional<double> first_up_payload_ts;
    bool awaiting_synack = false;
    bool awaiting_response = false;
    std::optional<double> rtt_ms;

    void set_matched(MatchedLabel l) {
        if (match_status == MatchStatus::PENDING) {
            match_status = MatchStatus::MATCHED;
            label = std::move(l);
        }
    }
    void set_rejected() {
        if (match_status == MatchStatus::PENDING) match_status = MatchStatus::REJECTED;
    }
};

enum class FlowUpdate : uint8_t {
    CREATED,
    APPENDED_SIZE,
    COUNTED_ONLY,
    IGNORED_RETRANSMIT,
    DROPPED, // table at capacity
    NO_FLOW, // downstream packet with no existing entry
};

struct FlowTableConfig {
    size_t k_max = 8;
    double idle_timeout_candidate = 60.0;
    double idle_timeout_tracked = 300.0;
    size_t max_flows = 1 << 20;
};

// Two key layers: user IP, then the canonical 5-tuple. Ordered maps keep
// iteration (and therefore eviction and export order) deterministic.
class FlowTable {
public:
    explicit FlowTable(FlowTableConfig cfg = {}) : cfg_(cfg) {}

    // Updates counters for every packet; appends to the size sequence
    // only for upstream payloads of PENDING flows. New flows are created
    // by upstream packets only.
    std::pair<FlowUpdate, FlowState*> upsert_packet(const PacketRecord& pkt, double now);

    FlowState* find(const IpAddr& user, const FlowKey& key);
    std::vector<FlowState> evict_idle(double now);

    size_t flow_count() const { return count_; }
    uint64_t capacity_drops() const { return capacity_drops_; }
    const FlowTableConfig& config() const { return cfg_; }

    using UserFlows = std::map<FlowKey, FlowState, std::less<FlowKey>>;
    const std::map<IpAddr, UserFlows>& users() const { return users_; }

private:
    FlowTableConfig cfg_;
    std::map<IpAddr, UserFlows> users_;
    size_t count_ = 0;
    uint64_t capacity_drops_ = 0;
};

// True when the packet advanced the RTT estimate.
bool update_rtt(FlowState& flow, const PacketRecord& pkt);

} // namespace vrmon
