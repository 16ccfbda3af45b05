#include "vrmon/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vrmon/errors.hpp"
#include "vrmon/rng.hpp"

namespace vrmon {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int kForestVersion = 1;

struct TreeBuilder {
    const Dataset& data;
    const Hyperparams& hp;
    size_t n_labels;
    Rng rng;
    Tree tree;

    TreeBuilder(const Dataset& d, const Hyperparams& h, size_t labels, uint64_t seed)
        : data(d), hp(h), n_labels(labels), rng(seed) {}

    std::vector<uint32_t> histogram_of(const std::vector<size_t>& samples) const {
        std::vector<uint32_t> h(n_labels, 0);
        for (size_t i : samples) h[size_t(data.y[i])]++;
        return h;
    }

    static double gini(const std::vector<uint32_t>& hist, double total) {
        if (total <= 0) return 0.0;
        double acc = 0;
        for (uint32_t c : hist) {
            double p = double(c) / total;
            acc += p * p;
        }
        return 1.0 - acc;
    }

    int make_leaf(const std::vector<size_t>& samples) {
        TreeNode node;
        node.histogram = histogram_of(samples);
        tree.nodes.push_back(std::move(node));
        return int(tree.nodes.size() - 1);
    }

    int build(std::vector<size_t>& samples, size_t depth) {
        auto hist = histogram_of(samples);
        uint32_t largest = *std::max_element(hist.begin(), hist.end());
        bool pure = largest == samples.size();
        if (depth >= hp.max_depth || samples.size() < 2 || pure) {
            TreeNode node;
            node.histogram = std::move(hist);
            tree.nodes.push_back(std::move(node));
            return int(tree.nodes.size() - 1);
        }

        // Fresh random feature subset for this split.
        size_t n_feat = data.n_features;
        size_t draw = std::min(hp.max_features, n_feat);
        std::vector<size_t> features(n_feat);
        std::iota(features.begin(), features.end(), 0);
        for (size_t i = 0; i < draw; ++i) {
            size_t j = i + size_t(rng.below(uint64_t(n_feat - i)));
            std::swap(features[i], features[j]);
        }
        features.resize(draw);

        double parent_gini = gini(hist, double(samples.size()));
        double best_gain = 0.0;
        int best_feature = -1;
        double best_threshold = 0.0;

        std::vector<std::pair<double, int>> vals;
        vals.reserve(samples.size());
        for (size_t f : features) {
            vals.clear();
            for (size_t i : samples) vals.push_back({data.row(i)[f], data.y[i]});
            std::sort(vals.begin(), vals.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

            std::vector<uint32_t> left(n_labels, 0);
            std::vector<uint32_t> right = hist;
            double n = double(samples.size());
            for (size_t i = 0; i + 1 < vals.size(); ++i) {
                left[size_t(vals[i].second)]++;
                right[size_t(vals[i].second)]--;
                if (vals[i].first == vals[i + 1].first) continue;
                double nl = double(i + 1), nr = n - nl;
                double g = parent_gini -
                           (nl / n) * gini(left, nl) - (nr / n) * gini(right, nr);
                if (g > best_gain + 1e-12) {
                    best_gain = g;
                    best_feature = int(f);
                    best_threshold = (vals[i].first + vals[i + 1].first) / 2.0;
                }
            }
        }

        if (best_feature < 0) {
            TreeNode node;
            node.histogram = std::move(hist);
            tree.nodes.push_back(std::move(node));
            return int(tree.nodes.size() - 1);
        }

        std::vector<size_t> lhs, rhs;
        for (size_t i : samples) {
            if (data.row(i)[size_t(best_feature)] <= best_threshold)
                lhs.push_back(i);
            else
                rhs.push_back(i);
        }
        samples.clear();
        samples.shrink_to_fit();

        size_t self = tree.nodes.size();
        tree.nodes.emplace_back();
        tree.nodes[self].feature = best_feature;
        tree.nodes[self].threshold = best_threshold;
        int l = build(lhs, depth + 1);
        int r = build(rhs, depth + 1);
        tree.nodes[self].left = l;
        tree.nodes[self].right = r;
        return int(self);
    }
};

size_t leaf_argmax(const std::vector<uint32_t>& hist) {
    size_t best = 0;
    for (size_t i = 1; i < hist.size(); ++i)
        if (hist[i] > hist[best]) best = i; // ties resolve to the smaller index
    return best;
}

size_t tree_vote(const Tree& tree, std::span<const double> features) {
    int node = 0;
    while (tree.nodes[size_t(node)].feature >= 0) {
        const TreeNode& n = tree.nodes[size_t(node)];
        node = features[size_t(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return leaf_argmax(tree.nodes[size_t(node)].histogram);
}

} // namespace

bool is_single_class(const Dataset& data) {
    for (size_t i = 1; i < data.y.size(); ++i)
        if (data.y[i] != data.y[0]) return false;
    return !data.y.empty();
}

ForestModel train_forest(const Dataset& data, const std::vector<StateLabel>& label_space,
                         const Hyperparams& hp, uint64_t seed) {
    if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "no training samples");
    if (hp.n_trees == 0 || hp.max_depth == 0 || hp.max_features == 0)
        throw std::invalid_argument("hyperparameters must be positive");
    for (int label : data.y)
        if (label < 0 || size_t(label) >= label_space.size())
            throw std::invalid_argument("label outside the app's state space");

    ForestModel model;
    model.label_space = label_space;
    model.n_features = data.n_features;
    model.hyperparams = hp;
    model.seed = seed;

    Rng master(seed);
    std::vector<uint64_t> tree_seeds(hp.n_trees);
    for (auto& s : tree_seeds) s = master.next();

    for (size_t t = 0; t < hp.n_trees; ++t) {
        Rng tree_rng(tree_seeds[t]);
        std::vector<size_t> sample(data.size());
        for (auto& i : sample) i = size_t(tree_rng.below(data.size()));
        TreeBuilder builder(data, hp, label_space.size(), tree_rng.next());
        builder.build(sample, 0);
        model.trees.push_back(std::move(builder.tree));
    }
    return model;
}

Prediction predict(const ForestModel& model, std::span<const double> features) {
    if (features.size() != model.n_features)
        throw Error(ErrorCode::FeatureDimMismatch,
                    "got " + std::to_string(features.size()) + " features, model expects " +
                        std::to_string(model.n_features));
    std::vector<uint32_t> votes(model.label_space.size(), 0);
    for (const auto& tree : model.trees) votes[tree_vote(tree, features)]++;
    size_t best = 0;
    for (size_t i = 1; i < votes.size(); ++i)
        if (votes[i] > votes[best]) best = i;
    Prediction p;
    p.label = model.label_space[best];
    p.confidence = model.trees.empty() ? 0.0 : double(votes[best]) / double(model.trees.size());
    return p;
}

namespace {

std::vector<ClassAccuracy> accuracy_table(const std::vector<int>& truth,
                                          const std::vector<int>& predicted,
                                          const std::vector<StateLabel>& label_space) {
    std::vector<ClassAccuracy> table;
    for (size_t c = 0; c < label_space.size(); ++c) {
        uint64_t tp = 0, fp = 0, pos = 0, neg = 0;
        for (size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] == int(c)) {
                pos++;
                if (predicted[i] == int(c)) tp++;
            } else {
                neg++;
                if (predicted[i] == int(c)) fp++;
            }
        }
        ClassAccuracy acc;
        acc.label = label_space[c];
        acc.support = pos;
        acc.tp_rate = pos ? double(tp) / double(pos) : 0.0;
        acc.fp_rate = neg ? double(fp) / double(neg) : 0.0;
        table.push_back(acc);
    }
    return table;
}

} // namespace

SweepResult sweep_hyperparams(const Dataset& data, const std::vector<StateLabel>& label_space,
                              const SweepGrid& grid, size_t k_folds, uint64_t seed) {
    if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "no training samples");

    // Stratified folds: shuffle within each class, deal round-robin.
    std::vector<std::vector<size_t>> by_class(label_space.size());
    for (size_t i = 0; i < data.size(); ++i) by_class[size_t(data.y[i])].push_back(i);
    Rng rng(seed);
    std::vector<int> fold_of(data.size(), 0);
    for (auto& members : by_class) {
        if (members.empty()) continue;
        if (members.size() < k_folds)
            throw Error(ErrorCode::InsufficientSamples,
                        "a class has fewer samples than folds (" +
                            std::to_string(members.size()) + " < " + std::to_string(k_folds) + ")");
        for (size_t i = members.size(); i > 1; --i)
            std::swap(members[i - 1], members[size_t(rng.below(i))]);
        for (size_t i = 0; i < members.size(); ++i) fold_of[members[i]] = int(i % k_folds);
    }

    SweepResult result;
    double best_tp = -1.0, best_fp = 2.0;
    for (size_t nt : grid.n_trees) {
        for (size_t depth : grid.max_depth) {
            for (size_t mf : grid.max_features) {
                Hyperparams hp{nt, depth, std::min(mf, data.n_features)};
                std::vector<int> truth, predicted;
                for (size_t fold = 0; fold < k_folds; ++fold) {
                    Dataset train;
                    train.n_features = data.n_features;
                    std::vector<size_t> test_rows;
                    for (size_t i = 0; i < data.size(); ++i) {
                        if (fold_of[i] == int(fold)) {
                            test_rows.push_back(i);
                        } else {
                            auto row = data.row(i);
                            train.x.insert(train.x.end(), row.begin(), row.end());
                            train.y.push_back(data.y[i]);
                        }
                    }
                    ForestModel model = train_forest(train, label_space, hp, seed + fold);
                    for (size_t i : test_rows) {
                        truth.push_back(data.y[i]);
                        auto p = predict(model, data.row(i));
                        auto it = std::find(label_space.begin(), label_space.end(), p.label);
                        predicted.push_back(int(it - label_space.begin()));
                    }
                }
                SweepCell cell;
                cell.hp = hp;
                cell.per_class = accuracy_table(truth, predicted, label_space);
                size_t populated = 0;
                for (const auto& acc : cell.per_class) {
                    if (acc.support == 0) continue;
                    populated++;
                    cell.mean_tp += acc.tp_rate;
                    cell.mean_fp += acc.fp_rate;
                }
                if (populated) {
                    cell.mean_tp /= double(populated);
                    cell.mean_fp /= double(populated);
                }
                auto smaller = [](const Hyperparams& a, const Hyperparams& b) {
                    return std::tie(a.n_trees, a.max_depth, a.max_features) <
                           std::tie(b.n_trees, b.max_depth, b.max_features);
                };
                bool better = cell.mean_tp > best_tp + 1e-12 ||
                              (std::abs(cell.mean_tp - best_tp) <= 1e-12 &&
                               (cell.mean_fp < best_fp - 1e-12 ||
                                (std::abs(cell.mean_fp - best_fp) <= 1e-12 &&
                                 smaller(hp, result.best))));
                if (better) {
                    best_tp = cell.mean_tp;
                    best_fp = cell.mean_fp;
                    result.best = hp;
                }
                result.cells.push_back(std::move(cell));
            }
        }
    }
    return result;
}

std::string forest_to_json(const ForestModel& model) {
    ordered_json root;
    root["version"] = kForestVersion;
    root["app"] = model.app;
    root["mode"] = model.feature_spec == FeatureSpec::STATELESS_40 ? "stateless" : "stateful";
    ordered_json labels = ordered_json::array();
    for (auto s : model.label_space) labels.push_back(state_name(s));
    root["label_space"] = std::move(labels);
    root["n_features"] = model.n_features;
    root["n_past"] = model.n_past;
    root["hyperparams"] = ordered_json{{"n_trees", model.hyperparams.n_trees},
                                       {"max_depth", model.hyperparams.max_depth},
                                       {"max_features", model.hyperparams.max_features}};
    root["seed"] = model.seed;
    ordered_json trees = ordered_json::array();
    for (const auto& tree : model.trees) {
        ordered_json nodes = ordered_json::array();
        for (const auto& n : tree.nodes) {
            if (n.feature < 0)
                nodes.push_back(ordered_json{{"h", n.histogram}});
            else
                nodes.push_back(ordered_json{
                    {"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
        }
        trees.push_back(ordered_json{{"nodes", std::move(nodes)}});
    }
    root["trees"] = std::move(trees);
    return root.dump() + "\n";
}

ForestModel forest_from_json(const std::string& text) {
    ordered_json root;
    try {
        root = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::CorruptModel, std::string("unparseable classifier file: ") + e.what());
    }
    try {
        int version = root.at("version").get<int>();
        if (version != kForestVersion)
            throw Error(ErrorCode::SchemaMismatch,
                        "classifier schema version " + std::to_string(version));
        ForestModel model;
        model.app = root.value("app", "");
        model.feature_spec = root.value("mode", "stateless") == std::string("stateful")
                                 ? FeatureSpec::STATEFUL_40_PLUS_NK
                                 : FeatureSpec::STATELESS_40;
        for (const auto& name : root.at("label_space")) {
            auto s = state_from_name(name.get<std::string>());
            if (!s) throw Error(ErrorCode::CorruptModel, "unknown state label in model");
            model.label_space.push_back(*s);
        }
        model.n_features = root.at("n_features").get<size_t>();
        model.n_past = root.at("n_past").get<size_t>();
        model.hyperparams.n_trees = root.at("hyperparams").at("n_trees").get<size_t>();
        model.hyperparams.max_depth = root.at("hyperparams").at("max_depth").get<size_t>();
        model.hyperparams.max_features = root.at("hyperparams").at("max_features").get<size_t>();
        model.seed = root.value("seed", 0ull);
        for (const auto& jt : root.at("trees")) {
            Tree tree;
            for (const auto& jn : jt.at("nodes")) {
                TreeNode n;
                if (jn.contains("h")) {
                    n.histogram = jn.at("h").get<std::vector<uint32_t>>();
                } else {
                    n.feature = jn.at("f").get<int>();
                    n.threshold = jn.at("t").get<double>();
                    n.left = jn.at("l").get<int>();
                    n.right = jn.at("r").get<int>();
                }
                tree.nodes.push_back(std::move(n));
            }
            model.trees.push_back(std::move(tree));
        }
        return model;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::CorruptModel, std::string("malformed classifier file: ") + e.what());
    }
}

void save_forest(const ForestModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << forest_to_json(model);
}

ForestModel load_forest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::CorruptModel, "cannot open classifier file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return forest_from_json(ss.str());
}

} // namespace vrmon
