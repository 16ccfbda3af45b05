#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vrmon/states.hpp"

namespace vrmon {

enum class FeatureSpec : uint8_t { STATELESS_40, STATEFUL_40_PLUS_NK };

struct Hyperparams {
    size_t n_trees = 100;
    size_t max_depth = 10;
    size_t max_features = 8; // features drawn per split
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    std::vector<uint32_t> histogram; // leaf: training-sample count per label
};

struct Tree {
    std::vector<TreeNode> nodes; // root at index 0
};

struct ForestModel {
    std::string app;
    FeatureSpec feature_spec = FeatureSpec::STATELESS_40;
    std::vector<StateLabel> label_space;
    size_t n_features = 40;
    size_t n_past = 0; // stateful models: slots of past states
    Hyperparams hyperparams;
    uint64_t seed = 0;
    std::vector<Tree> trees;
};

struct Prediction {
    StateLabel label = StateLabel::UNKNOWN;
    double confidence = 0.0; // winning share of tree votes
};

// Row-major samples with labels given as indices into a label space.
struct Dataset {
    size_t n_features = 0;
    std::vector<double> x;
    std::vector<int> y;

    size_t size() const { return y.size(); }
    std::span<const double> row(size_t i) const {
        return {x.data() + i * n_features, n_features};
    }
};

// Bagged trees: bootstrap sample per tree, a fresh random feature
// subset per split, Gini impurity splits. Deterministic under a fixed
// seed. Throws Error(EmptyDataset).
ForestModel train_forest(const Dataset& data, const std::vector<StateLabel>& label_space,
                         const Hyperparams& hp, uint64_t seed);

bool is_single_class(const Dataset& data);

// Throws Error(FeatureDimMismatch).
Prediction predict(const ForestModel& model, std::span<const double> features);

// Per-class accuracy in the TP|FP shape used throughout the reports.
struct ClassAccuracy {
    StateLabel label = StateLabel::UNKNOWN;
    double tp_rate = 0.0; // correct / truth-positives
    double fp_rate = 0.0; // wrongly claimed / truth-negatives
    uint64_t support = 0;
};

struct SweepCell {
    Hyperparams hp;
    std::vector<ClassAccuracy> per_class;
    double mean_tp = 0.0;
    double mean_fp = 0.0;
};

struct SweepResult {
    Hyperparams best;
    std::vector<SweepCell> cells;
};

struct SweepGrid {
    std::vector<size_t> n_trees{25, 50, 100};
    std::vector<size_t> max_depth{4, 8, 12, 16};
    std::vector<size_t> max_features{4, 8, 12};
};

// Stratified k-fold evaluation of every grid cell; picks the cell with
// the highest mean per-class TP, breaking ties toward lower FP and
// then the smaller model. Throws Error(InsufficientSamples) when any
// class has fewer samples than folds.
SweepResult sweep_hyperparams(const Dataset& data, const std::vector<StateLabel>& label_space,
                              const SweepGrid& grid, size_t k_folds, uint64_t seed);

std::string forest_to_json(const ForestModel& model);
ForestModel forest_from_json(const std::string& text);
void save_forest(const ForestModel& model, const std::string& path);
ForestModel load_forest(const std::string& path);

} // namespace vrmon
