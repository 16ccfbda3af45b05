#include "vrmon/attributes.hpp"

#include <algorithm>
#include <cmath>

namespace vrmon {

FlowClass flow_class(Transport transport, DomainType domain_type) {
    if (transport == Transport::TCP)
        return domain_type == DomainType::PRIMARY ? FlowClass::TCP_PRIMARY
                                                  : FlowClass::TCP_TIME_CRITICAL;
    return domain_type == DomainType::PRIMARY ? FlowClass::UDP_PRIMARY
                                              : FlowClass::UDP_TIME_CRITICAL;
}

const char* attribute_name(size_t index) {
    static const char* names[40] = {
        "tcp_prim_mdn_vol",      "tcp_prim_mdn_pkt_ct",   "tcp_prim_mdn_pkt_sz",
        "tcp_prim_std_vol",      "tcp_prim_std_pkt_ct",   "tcp_prim_std_pkt_sz",
        "tcp_actv_mdn_vol",      "tcp_actv_mdn_pkt_ct",   "tcp_actv_mdn_pkt_sz",
        "tcp_actv_std_vol",      "tcp_actv_std_pkt_ct",   "tcp_actv_std_pkt_sz",
        "udp_prim_mdn_vol",      "udp_prim_mdn_pkt_ct",   "udp_prim_mdn_pkt_sz",
        "udp_prim_std_vol",      "udp_prim_std_pkt_ct",   "udp_prim_std_pkt_sz",
        "udp_actv_mdn_vol",      "udp_actv_mdn_pkt_ct",   "udp_actv_mdn_pkt_sz",
        "udp_actv_std_vol",      "udp_actv_std_pkt_ct",   "udp_actv_std_pkt_sz",
        "tcp_prim_n_cncr_flow",  "tcp_prim_n_new_flow",   "tcp_prim_vol",
        "tcp_prim_pkt_ct",       "tcp_actv_n_cncr_flow",  "tcp_actv_n_new_flow",
        "tcp_actv_vol",          "tcp_actv_pkt_ct",       "udp_prim_n_cncr_flow",
        "udp_prim_n_new_flow",   "udp_prim_vol",          "udp_prim_pkt_ct",
        "udp_actv_n_cncr_flow",  "udp_actv_n_new_flow",   "udp_actv_vol",
        "udp_actv_pkt_ct",
    };
    return names[index];
}

double median_of(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

double population_sigma(const std::vector<double>& values) {
    if (values.size() <= 1) return 0.0;
    double mean = 0;
    for (double v : values) mean += v;
    mean /= double(values.size());
    double acc = 0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / double(values.size()));
}

AttributeVector compute_attributes(const IntervalStats& stats) {
    AttributeVector out;

    for (size_t cls = 0; cls < kNumFlowClasses; ++cls) {
        std::vector<double> vols, counts, sizes;
        uint64_t concurrent = 0, fresh = 0, vol = 0, pkts = 0;
        for (const auto& row : stats.flows) {
            if (size_t(row.cls) != cls) continue;
            concurrent++;
            if (row.is_new) fresh++;
            vol += row.bytes_up;
            pkts += row.pkts_up;
            vols.push_back(double(row.bytes_up));
            counts.push_back(double(row.pkts_up));
            sizes.push_back(row.pkts_up ? double(row.bytes_up) / double(row.pkts_up) : 0.0);
        }
        size_t flow_base = cls * 6;
        out.a[flow_base + 0] = median_of(vols);
        out.a[flow_base + 1] = median_of(counts);
        out.a[flow_base + 2] = median_of(sizes);
        out.a[flow_base + 3] = population_sigma(vols);
        out.a[flow_base + 4] = population_sigma(counts);
        out.a[flow_base + 5] = population_sigma(sizes);

        size_t host_base = 24 + cls * 4;
        out.a[host_base + 0] = double(concurrent);
        out.a[host_base + 1] = double(fresh);
        out.a[host_base + 2] = double(vol);
        out.a[host_base + 3] = double(pkts);
    }
    return out;
}

} // namespace vrmon
