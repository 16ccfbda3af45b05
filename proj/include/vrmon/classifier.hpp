#pragma once

#include <deque>
#include <span>
#include <string>
#include <vector>

#include "vrmon/attributes.hpp"
#include "vrmon/forest.hpp"
#include "vrmon/session.hpp"

namespace vrmon {

// 40 attributes followed by one-hot blocks for the past N states,
// oldest first.
std::vector<double> build_stateful_features(const AttributeVector& attrs,
                                            std::span<const StateLabel> past_states,
                                            const std::vector<StateLabel>& label_space);

// The stateful model answers when it has N past states and clears the
// confidence threshold T; otherwise the stateless model decides.
ClassifyDecision classify_interval(const std::deque<StateLabel>& past_states,
                                   const AttributeVector& attrs, const ForestModel& stateless,
                                   const ForestModel& stateful, size_t n_past, double threshold);

// Training-table IO. Header: A1..A40[,prev1..prevN],label. Missing
// past states are written as "-"; stateful loading skips those rows.
struct AttrCsvRow {
    AttributeVector attrs;
    std::vector<StateLabel> past; // empty entries dropped
    StateLabel label = StateLabel::UNKNOWN;
    bool has_full_past = false;
};

std::vector<AttrCsvRow> load_attr_csv(const std::string& path, size_t n_past_expected);

Dataset to_dataset(const std::vector<AttrCsvRow>& rows, const std::vector<StateLabel>& label_space,
                   FeatureSpec spec, size_t n_past);

std::string attr_csv_header(size_t n_past);
std::string attr_csv_line(const AttributeVector& attrs, std::span<const StateLabel> past,
                          size_t n_past, StateLabel label);

} // namespace vrmon
