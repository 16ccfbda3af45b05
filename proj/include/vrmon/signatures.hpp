#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrmon/net.hpp"

namespace vrmon {

// Upstream payload-size fingerprint of one TLS flow toward a primary
// domain: client hello, handshake parts, first application data.
struct PrimarySignature {
    std::string metaverse;
    std::string domain;
    std::string prefix;
    std::vector<uint32_t> size_seq; // length 3..6

    bool operator==(const PrimarySignature& o) const = default;
};

// Fingerprint of the first several upstream datagrams of a
// time-critical activity flow on one service port.
struct UdpSignature {
    std::string metaverse;
    uint16_t port = 0;
    std::vector<uint32_t> size_seq; // length 4..7

    bool operator==(const UdpSignature& o) const = default;
};

struct SignatureSet {
    std::vector<PrimarySignature> primaries;
    std::vector<UdpSignature> udp;
    // Ordered service prefixes that must all be active before a session
    // is declared, per metaverse.
    std::map<std::string, std::vector<std::string>> initial_hs_prefixes;
    int version = 1;
    std::string created_at;

    std::vector<uint16_t> udp_ports() const;
    std::optional<std::string> domain_of(const std::string& metaverse) const;
    // Throws Error(CorruptModel) on an invariant violation.
    void validate() const;
};

// The signature set shipped for the four covered applications.
SignatureSet builtin_signature_set();

enum class MatchKind : uint8_t { MATCH, PENDING, REJECT };

struct PrimaryMatch {
    MatchKind kind = MatchKind::REJECT;
    std::string metaverse, domain, prefix; // set for MATCH only
};

struct UdpMatch {
    MatchKind kind = MatchKind::REJECT;
    std::string metaverse;
};

// Exact-match trie over size sequences: MATCH on a terminal node,
// PENDING while the walk can still reach one, REJECT otherwise.
class SignatureMatcher {
public:
    explicit SignatureMatcher(const SignatureSet& set);

    PrimaryMatch match_primary(std::span<const uint32_t> seq) const;
    UdpMatch match_udp(uint16_t port, std::span<const uint32_t> seq) const;

private:
    struct Node {
        std::vector<std::pair<uint32_t, int>> children; // sorted by size value
        int terminal = -1;                              // signature index
    };
    struct Trie {
        std::vector<Node> nodes;
        Trie() : nodes(1) {}
        void insert(std::span<const uint32_t> seq, int sig_index);
        // (node index, exhausted) after walking seq; node -1 when the walk fell off.
        std::pair<int, bool> walk(std::span<const uint32_t> seq) const;
    };

    Trie primary_trie_;
    std::map<uint16_t, Trie> udp_tries_;
    const SignatureSet* set_;
};

// Model file round-trip: load(save(x)) == x on logical content.
void save_model(const SignatureSet& set, const std::string& path);
SignatureSet load_model(const std::string& path); // Error(SchemaMismatch | CorruptModel)

std::string model_to_json(const SignatureSet& set);
SignatureSet model_from_json(const std::string& text);

} // namespace vrmon
