#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vrmon/flowtable.hpp"

namespace vrmon {

// Transport x domain-type class of a tracked flow, in attribute order.
enum class FlowClass : uint8_t {
    TCP_PRIMARY = 0,
    TCP_TIME_CRITICAL = 1,
    UDP_PRIMARY = 2,
    UDP_TIME_CRITICAL = 3,
};
constexpr size_t kNumFlowClasses = 4;

FlowClass flow_class(Transport transport, DomainType domain_type);

// One tracked flow's contribution to a closed monitoring interval.
// Volumes and packet counts are upstream; downstream bytes ride along
// for reporting only.
struct FlowIntervalRow {
    FlowKey key;
    FlowClass cls = FlowClass::TCP_PRIMARY;
    uint64_t bytes_up = 0;
    uint64_t pkts_up = 0;
    uint64_t bytes_down = 0;
    uint64_t pkts_down = 0;
    bool is_new = false; // first seen during this interval
};

struct IntervalStats {
    std::vector<FlowIntervalRow> flows; // every concurrent tracked flow, idle ones included
};

// The forty volumetric attributes, A1..A40 stored at indices 0..39:
// per class {median, sigma} of per-flow {volume, packet count, mean
// packet size} (A1-A24), then per class host-level {concurrent flows,
// new flows, volume, packet count} (A25-A40).
struct AttributeVector {
    std::array<double, 40> a{};

    double operator[](size_t i) const { return a[i]; }
    bool operator==(const AttributeVector& o) const = default;
};

constexpr size_t kNumAttributes = 40;

// "tcp_prim_mdn_vol" for index 0 through "udp_actv_pkt_ct" for 39.
const char* attribute_name(size_t index);

// Pure function of the closed interval's stats. Sigma attributes are 0
// when the class has at most one flow.
AttributeVector compute_attributes(const IntervalStats& stats);

// Population statistics helpers shared with the evaluation code.
double median_of(std::vector<double> values);
double population_sigma(const std::vector<double>& values);

} // namespace vrmon
