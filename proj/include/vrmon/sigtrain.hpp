#pragma once

#include <map>
#include <string>
#include <vector>

#include "vrmon/capture.hpp"
#include "vrmon/signatures.hpp"

namespace vrmon {

struct PrimaryTraining {
    std::vector<PrimarySignature> signatures;
    std::vector<std::string> prefix_order; // order of first appearance, majority-voted
    double latest_packet_ts = 0;
};

// Extracts (prefix, size sequence) pairs from TLS flows whose client
// hello SNI carries the primary domain. One capture file is one
// session for prefix-order purposes.
// Throws Error(NoPrimaryFlows | InconsistentPrefixOrder).
PrimaryTraining train_primary_signatures(const std::vector<std::string>& pcap_paths,
                                         const std::string& primary_domain,
                                         const std::string& metaverse,
                                         const std::vector<Cidr>& local_prefixes);

struct UdpTrainConfig {
    // Optional fixed sequence length per (metaverse, port); otherwise
    // the shortest separating length in [4, 7] is learned per port.
    std::map<std::pair<std::string, uint16_t>, size_t> lengths;
    size_t min_len = 4;
    size_t max_len = 7;
};

struct LabeledCapture {
    std::string path;
    std::string metaverse;
};

// Throws Error(AmbiguousSignature) when two metaverses claim
// prefix-compatible sequences on the same port.
std::vector<UdpSignature> train_udp_signatures(const std::vector<LabeledCapture>& captures,
                                               const std::vector<uint16_t>& port_list,
                                               const UdpTrainConfig& cfg,
                                               const std::vector<Cidr>& local_prefixes);

} // namespace vrmon
