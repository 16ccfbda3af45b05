#include <doctest.h>

#include "vrmon/classifier.hpp"
#include "vrmon/errors.hpp"

#include "helpers.hpp"

using namespace vrmon;
using namespace testutil;

namespace {

const std::vector<StateLabel> kLabels = {StateLabel::HS, StateLabel::MH, StateLabel::SUE};

// Forest of constant trees voting `yes_votes` of `total` for `label`,
// remainder for `other`: confidence is yes_votes/total by construction.
ForestModel constant_forest(StateLabel label, StateLabel other, size_t yes_votes, size_t total,
                            size_t n_features) {
    ForestModel m;
    m.label_space = kLabels;
    m.n_features = n_features;
    m.hyperparams = {total, 1, 1};
    auto leaf_tree = [&](StateLabel l) {
        Tree t;
        TreeNode n;
        n.histogram.assign(kLabels.size(), 0);
        size_t idx = size_t(std::find(kLabels.begin(), kLabels.end(), l) - kLabels.begin());
        n.histogram[idx] = 1;
        t.nodes.push_back(n);
        return t;
    };
    for (size_t i = 0; i < total; ++i) m.trees.push_back(leaf_tree(i < yes_votes ? label : other));
    return m;
}

AttributeVector zeros() {
    return AttributeVector{};
}

} // namespace

TEST_CASE("stateful feature vector layout: attributes then one-hot blocks, oldest first") {
    AttributeVector attrs;
    attrs.a[0] = 42;
    attrs.a[39] = 7;
    std::vector<StateLabel> past = {StateLabel::MH, StateLabel::SUE};
    auto features = build_stateful_features(attrs, past, kLabels);
    REQUIRE(features.size() == 40 + 2 * 3);
    CHECK(features[0] == 42);
    CHECK(features[39] == 7);
    // MH block then SUE block
    CHECK(features[40] == 0);
    CHECK(features[41] == 1);
    CHECK(features[42] == 0);
    CHECK(features[43] == 0);
    CHECK(features[44] == 0);
    CHECK(features[45] == 1);
}

TEST_CASE("insufficient past states forces the stateless path") {
    auto stateless = constant_forest(StateLabel::HS, StateLabel::HS, 4, 4, 40);
    auto stateful = constant_forest(StateLabel::SUE, StateLabel::SUE, 4, 4, 40 + 5 * 3);
    std::deque<StateLabel> past = {StateLabel::HS, StateLabel::HS}; // 2 < N=5
    auto d = classify_interval(past, zeros(), stateless, stateful, 5, 0.85);
    CHECK(d.path == ClassifierPath::STATELESS_FALLBACK);
    CHECK(d.label == StateLabel::HS);
}

TEST_CASE("confident stateful result wins; low confidence falls back to stateless") {
    auto stateless = constant_forest(StateLabel::MH, StateLabel::MH, 10, 10, 40);
    std::deque<StateLabel> past(5, StateLabel::SUE);

    SUBCASE("confidence 0.90 with T=0.85 stays stateful") {
        auto stateful = constant_forest(StateLabel::SUE, StateLabel::HS, 18, 20, 40 + 5 * 3);
        auto d = classify_interval(past, zeros(), stateless, stateful, 5, 0.85);
        CHECK(d.path == ClassifierPath::STATEFUL);
        CHECK(d.label == StateLabel::SUE);
        CHECK(d.confidence == doctest::Approx(0.9));
    }
    SUBCASE("confidence 0.60 with T=0.85 uses the stateless label") {
        auto stateful = constant_forest(StateLabel::SUE, StateLabel::HS, 12, 20, 40 + 5 * 3);
        auto d = classify_interval(past, zeros(), stateless, stateful, 5, 0.85);
        CHECK(d.path == ClassifierPath::STATELESS_FALLBACK);
        CHECK(d.label == StateLabel::MH);
    }
    SUBCASE("T=0 never falls back once the ring is warm") {
        auto stateful = constant_forest(StateLabel::SUE, StateLabel::HS, 11, 20, 40 + 5 * 3);
        for (int i = 0; i < 20; ++i) {
            auto d = classify_interval(past, zeros(), stateless, stateful, 5, 0.0);
            CHECK(d.path == ClassifierPath::STATEFUL);
        }
    }
    SUBCASE("T>1 always falls back") {
        auto stateful = constant_forest(StateLabel::SUE, StateLabel::SUE, 20, 20, 40 + 5 * 3);
        auto d = classify_interval(past, zeros(), stateless, stateful, 5, 1.1);
        CHECK(d.path == ClassifierPath::STATELESS_FALLBACK);
    }
}

TEST_CASE("attribute csv round trip with and without past-state columns") {
    TempDir tmp;
    auto path = tmp.file("attrs.csv");
    std::ofstream out(path);
    out << attr_csv_header(3);
    AttributeVector a1;
    a1.a[0] = 1.5;
    a1.a[27] = 1234;
    std::vector<StateLabel> past1 = {StateLabel::HS};
    out << attr_csv_line(a1, past1, 3, StateLabel::MH); // padded with "-"
    AttributeVector a2;
    a2.a[5] = 0.125;
    std::vector<StateLabel> past2 = {StateLabel::HS, StateLabel::MH, StateLabel::SUE};
    out << attr_csv_line(a2, past2, 3, StateLabel::SUE);
    out.close();

    auto rows = load_attr_csv(path, 0);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].attrs.a[0] == 1.5);
    CHECK(rows[0].attrs.a[27] == 1234);
    CHECK(!rows[0].has_full_past);
    CHECK(rows[0].label == StateLabel::MH);
    CHECK(rows[1].has_full_past);
    CHECK(rows[1].past == std::vector<StateLabel>{StateLabel::HS, StateLabel::MH, StateLabel::SUE});

    // stateless dataset uses both rows; stateful only the complete one
    auto stateless = to_dataset(rows, kLabels, FeatureSpec::STATELESS_40, 0);
    CHECK(stateless.size() == 2);
    auto stateful = to_dataset(rows, kLabels, FeatureSpec::STATEFUL_40_PLUS_NK, 3);
    CHECK(stateful.size() == 1);
    CHECK(stateful.n_features == 40 + 3 * 3);
}
