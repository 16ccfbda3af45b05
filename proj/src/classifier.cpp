#include "vrmon/classifier.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "vrmon/errors.hpp"

namespace vrmon {

std::vector<double> build_stateful_features(const AttributeVector& attrs,
                                            std::span<const StateLabel> past_states,
                                            const std::vector<StateLabel>& label_space) {
    std::vector<double> out(attrs.a.begin(), attrs.a.end());
    for (StateLabel s : past_states) {
        for (StateLabel candidate : label_space) out.push_back(candidate == s ? 1.0 : 0.0);
    }
    return out;
}

ClassifyDecision classify_interval(const std::deque<StateLabel>& past_states,
                                   const AttributeVector& attrs, const ForestModel& stateless,
                                   const ForestModel& stateful, size_t n_past, double threshold) {
    ClassifyDecision out;
    if (past_states.size() >= n_past) {
        std::vector<StateLabel> past(past_states.end() - long(n_past), past_states.end());
        auto features = build_stateful_features(attrs, past, stateful.label_space);
        Prediction p = predict(stateful, features);
        if (p.confidence >= threshold) {
            out.label = p.label;
            out.confidence = p.confidence;
            out.path = ClassifierPath::STATEFUL;
            return out;
        }
    }
    Prediction p = predict(stateless, std::span<const double>(attrs.a.data(), attrs.a.size()));
    out.label = p.label;
    out.confidence = p.confidence;
    out.path = ClassifierPath::STATELESS_FALLBACK;
    return out;
}

std::string attr_csv_header(size_t n_past) {
    std::string out;
    for (size_t i = 0; i < kNumAttributes; ++i) {
        if (i) out += ',';
        out += 'A' + std::to_string(i + 1);
    }
    for (size_t i = 0; i < n_past; ++i) out += ",prev" + std::to_string(i + 1);
    out += ",label\n";
    return out;
}

std::string attr_csv_line(const AttributeVector& attrs, std::span<const StateLabel> past,
                          size_t n_past, StateLabel label) {
    std::string out;
    char buf[64];
    for (size_t i = 0; i < kNumAttributes; ++i) {
        if (i) out += ',';
        std::snprintf(buf, sizeof(buf), "%.17g", attrs.a[i]);
        out += buf;
    }
    // Pad on the left so prevN is always the newest state.
    for (size_t i = 0; i < n_past; ++i) {
        out += ',';
        size_t missing = n_past > past.size() ? n_past - past.size() : 0;
        if (i < missing)
            out += '-';
        else
            out += state_name(past[i - missing]);
    }
    out += ',';
    out += state_name(label);
    out += '\n';
    return out;
}

std::vector<AttrCsvRow> load_attr_csv(const std::string& path, size_t n_past_expected) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);

    std::vector<AttrCsvRow> rows;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::EmptyDataset, "empty attribute file");

    auto split = [](const std::string& s) {
        std::vector<std::string> fields;
        size_t start = 0;
        while (start <= s.size()) {
            size_t comma = s.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(s.substr(start));
                break;
            }
            fields.push_back(s.substr(start, comma - start));
            start = comma + 1;
        }
        return fields;
    };

    auto header = split(line);
    size_t n_past = 0;
    for (const auto& col : header)
        if (col.rfind("prev", 0) == 0) n_past++;
    if (header.size() != kNumAttributes + n_past + 1)
        throw Error(ErrorCode::CorruptModel, "unexpected attribute CSV header in " + path);
    if (n_past_expected > 0 && n_past < n_past_expected)
        throw Error(ErrorCode::CorruptModel,
                    path + " lacks the " + std::to_string(n_past_expected) +
                        " past-state columns needed for stateful training");

    size_t line_no = 1;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != header.size())
            throw Error(ErrorCode::CorruptModel,
                        path + ":" + std::to_string(line_no) + ": wrong field count");
        AttrCsvRow row;
        for (size_t i = 0; i < kNumAttributes; ++i) row.attrs.a[i] = std::stod(fields[i]);
        row.has_full_past = n_past > 0;
        for (size_t i = 0; i < n_past; ++i) {
            const auto& f = fields[kNumAttributes + i];
            if (f == "-") {
                row.has_full_past = false;
                continue;
            }
            auto s = state_from_name(f);
            if (!s)
                throw Error(ErrorCode::CorruptModel,
                            path + ":" + std::to_string(line_no) + ": unknown state '" + f + "'");
            row.past.push_back(*s);
        }
        auto label = state_from_name(fields.back());
        if (!label)
            throw Error(ErrorCode::CorruptModel, path + ":" + std::to_string(line_no) +
                                                     ": unknown label '" + fields.back() + "'");
        row.label = *label;
        rows.push_back(std::move(row));
    }
    return rows;
}

Dataset to_dataset(const std::vector<AttrCsvRow>& rows, const std::vector<StateLabel>& label_space,
                   FeatureSpec spec, size_t n_past) {
    Dataset data;
    data.n_features = spec == FeatureSpec::STATELESS_40
                          ? kNumAttributes
                          : kNumAttributes + n_past * label_space.size();
    for (const auto& row : rows) {
        if (spec == FeatureSpec::STATEFUL_40_PLUS_NK &&
            (!row.has_full_past || row.past.size() < n_past))
            continue;
        auto it = std::find(label_space.begin(), label_space.end(), row.label);
        if (it == label_space.end())
            throw Error(ErrorCode::CorruptModel,
                        std::string("label ") + state_name(row.label) +
                            " outside the app's state space");
        if (spec == FeatureSpec::STATELESS_40) {
            data.x.insert(data.x.end(), row.attrs.a.begin(), row.attrs.a.end());
        } else {
            std::vector<StateLabel> past(row.past.end() - long(n_past), row.past.end());
            auto features = build_stateful_features(row.attrs, past, label_space);
            data.x.insert(data.x.end(), features.begin(), features.end());
        }
        data.y.push_back(int(it - label_space.begin()));
    }
    if (data.y.empty()) throw Error(ErrorCode::EmptyDataset, "no usable rows in the table");
    return data;
}

} // namespace vrmon
