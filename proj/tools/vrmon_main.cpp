// vrmon: metaverse VR session detection and activity classification
// from encrypted traffic, plus the training and synthesis tooling.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "vrmon/classifier.hpp"
#include "vrmon/engine.hpp"
#include "vrmon/errors.hpp"
#include "vrmon/evaluate.hpp"
#include "vrmon/sigtrain.hpp"
#include "vrmon/synth.hpp"

using namespace vrmon;

namespace {

int exit_code_for(const Error& e) {
    switch (e.code()) {
    case ErrorCode::SchemaMismatch:
    case ErrorCode::CorruptModel:
    case ErrorCode::FeatureDimMismatch:
        return 3;
    default:
        return 2;
    }
}

std::vector<Cidr> parse_prefixes(const std::vector<std::string>& args) {
    std::vector<Cidr> out;
    for (const auto& a : args) {
        auto c = Cidr::parse(a);
        if (!c) throw Error(ErrorCode::ConfigError, "bad --local-prefix '" + a + "'");
        out.push_back(*c);
    }
    if (out.empty()) out.push_back(*Cidr::parse("10.0.0.0/8"));
    return out;
}

std::string iso_from_ts(double ts) {
    time_t t = time_t(ts);
    char buf[32];
    struct tm tmv;
    gmtime_r(&t, &tmv);
    strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tmv);
    return buf;
}

struct AnalyzeArgs {
    std::string model_path;
    std::vector<std::string> stateless_paths, stateful_paths;
    std::string in_path, out_path;
    std::string detections_out, attrs_out, metrics_out, truth_path;
    std::vector<std::string> prefixes;
    double interval_len = 10.0;
    size_t n_past = 5;
    double threshold = 0.85;
    size_t shards = 1;
    bool live_stream = false;
    double pace = 0.0; // >0: replay honoring timestamps scaled by this factor
};

EngineModels load_engine_models(const AnalyzeArgs& args) {
    EngineModels models;
    models.signatures = load_model(args.model_path);
    auto add = [&](const std::string& path, bool stateful) {
        ForestModel m = load_forest(path);
        if (m.app.empty())
            throw Error(ErrorCode::CorruptModel, path + " carries no app name");
        auto& pack = models.classifiers[m.app];
        (stateful ? pack.stateful : pack.stateless) = std::move(m);
    };
    for (const auto& p : args.stateless_paths) add(p, false);
    for (const auto& p : args.stateful_paths) add(p, true);
    for (const auto& [app, pack] : models.classifiers) {
        if (pack.stateless.trees.empty() || pack.stateful.trees.empty())
            throw Error(ErrorCode::CorruptModel,
                        "app " + app + " needs both a stateless and a stateful classifier");
    }
    return models;
}

// Ground-truth lookup for the attribute export.
struct TruthIndex {
    SidecarFile file;
    const SessionSidecar* find(const IpAddr& user, const std::string& app, double start) const {
        const SessionSidecar* best = nullptr;
        for (const auto& s : file.sessions) {
            if (s.user_ip != user || s.metaverse != app) continue;
            if (std::abs(s.session_start - start) > 10.0) continue;
            if (!best ||
                std::abs(s.session_start - start) < std::abs(best->session_start - start))
                best = &s;
        }
        return best;
    }
};

int cmd_analyze(const AnalyzeArgs& args) {
    EngineModels models = load_engine_models(args);

    EngineConfig cfg;
    cfg.local_prefixes = parse_prefixes(args.prefixes);
    cfg.interval_len = args.interval_len;
    cfg.n_past = args.n_past;
    cfg.threshold = args.threshold;
    cfg.shards = args.shards;
    cfg.collect_attrs = !args.attrs_out.empty();
    if (args.live_stream)
        cfg.on_report = [](const SessionReport& r) {
            std::cout << report_to_jsonl(r) << "\n" << std::flush;
        };

    CaptureSource src;
    src.path = args.in_path;
    src.local_prefixes = cfg.local_prefixes;
    PacketReader reader(src);
    Engine engine(std::move(models), cfg);

    EngineResult result;
    if (args.pace > 0) {
        // paced replay standing in for a mirror port
        std::optional<double> first_ts;
        auto wall_start = std::chrono::steady_clock::now();
        while (auto rec = reader.next()) {
            if (!first_ts) first_ts = rec->timestamp;
            double offset = (rec->timestamp - *first_ts) / args.pace;
            auto due = wall_start +
                       std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                           std::chrono::duration<double>(offset));
            std::this_thread::sleep_until(due);
            engine.feed_one(*rec);
        }
        result = engine.finish_run();
    } else {
        result = engine.run(reader);
    }

    if (!args.out_path.empty()) {
        std::ofstream out(args.out_path, std::ios::binary);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + args.out_path);
        for (const auto& r : result.reports) out << report_to_jsonl(r) << "\n";
    }
    if (!args.detections_out.empty()) {
        std::ofstream out(args.detections_out, std::ios::binary);
        for (const auto& d : result.detections) out << detection_to_jsonl(d) << "\n";
    }
    if (!args.attrs_out.empty()) {
        std::optional<TruthIndex> truth;
        if (!args.truth_path.empty()) truth = TruthIndex{load_sidecar(args.truth_path)};
        std::ofstream out(args.attrs_out, std::ios::binary);
        out << attr_csv_header(args.n_past);
        std::map<std::pair<std::string, std::string>, double> starts;
        for (const auto& r : result.reports)
            starts[{r.user_ip.to_string(), r.metaverse}] = r.start;
        for (const auto& row : result.attr_rows) {
            StateLabel label = row.predicted;
            std::vector<StateLabel> past(row.past.begin(), row.past.end());
            if (truth) {
                auto sit = starts.find({row.user.to_string(), row.metaverse});
                const SessionSidecar* s =
                    sit == starts.end() ? nullptr
                                        : truth->find(row.user, row.metaverse, sit->second);
                if (s && row.interval < s->interval_states.size()) {
                    label = s->interval_states[row.interval];
                    // teacher forcing: ground-truth history columns
                    past.clear();
                    if (row.interval >= args.n_past)
                        for (uint64_t k = row.interval - args.n_past; k < row.interval; ++k)
                            past.push_back(s->interval_states[k]);
                }
            }
            out << attr_csv_line(row.attrs, past, args.n_past, label);
        }
    }
    if (!args.metrics_out.empty()) {
        std::ofstream out(args.metrics_out, std::ios::binary);
        const auto& m = result.metrics;
        out << "{\"packets\":" << m.packets << ",\"queue_drops\":" << m.queue_drops
            << ",\"capacity_drops\":" << m.capacity_drops
            << ",\"flow_detections\":" << m.flow_detections
            << ",\"udp_orphans\":" << m.udp_orphans
            << ",\"sessions_started\":" << m.sessions_started
            << ",\"sessions_closed\":" << m.sessions_closed
            << ",\"intervals_classified\":" << m.intervals_classified
            << ",\"stateless_fallbacks\":" << m.stateless_fallbacks << "}\n";
    }
    std::cerr << "processed " << result.metrics.packets << " packets, "
              << result.metrics.sessions_closed << " sessions, "
              << result.metrics.flow_detections << " flow detections\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"metaverse VR session detection and activity classification"};
    app.require_subcommand(1);

    auto* init = app.add_subcommand("init-model", "write the stock signature model");
    std::string init_out = "model.json";
    init->add_option("--out", init_out, "output path")->required();

    auto* tsig =
        app.add_subcommand("train-signatures", "extract signatures from ground-truth captures");
    std::string ts_app, ts_domain, ts_out;
    std::vector<std::string> ts_in, ts_prefixes, ts_udp_len;
    std::vector<uint16_t> ts_ports = {5055, 5056, 5058};
    tsig->add_option("--app", ts_app, "metaverse name")->required();
    tsig->add_option("--domain", ts_domain, "primary domain label, e.g. shapevrcloud")->required();
    tsig->add_option("--in", ts_in, "training pcap files")->required()->expected(-1);
    tsig->add_option("--out", ts_out, "output model path")->required();
    tsig->add_option("--local-prefix", ts_prefixes, "local CIDR (repeatable)");
    tsig->add_option("--ports", ts_ports, "candidate UDP service ports");
    tsig->add_option("--udp-len", ts_udp_len, "fixed UDP signature length, port=len (repeatable)");

    auto* tcls = app.add_subcommand("train-classifier", "train an activity-state classifier");
    std::string tc_app, tc_mode = "stateless", tc_in, tc_out, tc_labels;
    bool tc_sweep = false;
    size_t tc_trees = 100, tc_depth = 12, tc_features = 8, tc_npast = 5, tc_folds = 10;
    uint64_t tc_seed = 1;
    tcls->add_option("--app", tc_app, "metaverse name")->required();
    tcls->add_option("--mode", tc_mode, "stateless|stateful")
        ->check(CLI::IsMember({"stateless", "stateful"}));
    tcls->add_option("--in", tc_in, "attribute CSV (A1..A40[,prevN..],label)")->required();
    tcls->add_option("--out", tc_out, "output model path")->required();
    tcls->add_flag("--sweep", tc_sweep, "grid-search hyperparameters with k-fold validation");
    tcls->add_option("--labels", tc_labels, "comma-separated state subset (default: from data)");
    tcls->add_option("--trees", tc_trees);
    tcls->add_option("--depth", tc_depth);
    tcls->add_option("--features", tc_features, "features drawn per split");
    tcls->add_option("--n-past", tc_npast);
    tcls->add_option("--folds", tc_folds);
    tcls->add_option("--seed", tc_seed);

    auto* synth = app.add_subcommand("synth", "generate labeled synthetic traces");
    std::string sy_app, sy_model, sy_out, sy_sidecar, sy_profiles;
    std::vector<std::string> sy_scripts;
    uint64_t sy_seed = 0;
    size_t sy_bg = 0, sy_plant = 0;
    bool sy_no_exclude = false;
    uint32_t sy_snaplen = 65535;
    synth->add_option("--app", sy_app, "expected app of the scripts (validated)");
    synth->add_option("--script", sy_scripts, "session script JSON (repeatable)")
        ->required()
        ->expected(-1);
    synth->add_option("--model", sy_model, "signature model")->required();
    synth->add_option("--profiles", sy_profiles, "state profiles JSON")->required();
    synth->add_option("--seed", sy_seed, "override script seeds (base value)");
    synth->add_option("--out", sy_out, "output pcap")->required();
    synth->add_option("--sidecar", sy_sidecar, "ground-truth sidecar JSON")->required();
    synth->add_option("--background-flows", sy_bg, "mix in this many background flows");
    synth->add_option("--plant-collisions", sy_plant,
                      "plant exact signature duplicates in the background");
    synth->add_flag("--no-exclude-collisions", sy_no_exclude,
                    "disable rejection sampling of background handshakes");
    synth->add_option("--snaplen", sy_snaplen, "capture snap length");

    auto* mksc = app.add_subcommand("make-script", "emit a random activity script");
    std::string mk_app, mk_out, mk_user = "10.0.0.5", mk_profiles;
    uint64_t mk_seed = 1;
    double mk_duration = 300, mk_start = 1700000000.0;
    mksc->add_option("--app", mk_app)->required();
    mksc->add_option("--profiles", mk_profiles)->required();
    mksc->add_option("--out", mk_out)->required();
    mksc->add_option("--seed", mk_seed);
    mksc->add_option("--user", mk_user);
    mksc->add_option("--duration", mk_duration, "target seconds");
    mksc->add_option("--start", mk_start, "trace start timestamp");

    AnalyzeArgs an;
    auto* analyze = app.add_subcommand("analyze", "replay a capture through the engine");
    analyze->add_option("--model", an.model_path, "signature model")->required();
    analyze->add_option("--stateless", an.stateless_paths, "stateless classifier (repeatable)");
    analyze->add_option("--stateful", an.stateful_paths, "stateful classifier (repeatable)");
    analyze->add_option("--in", an.in_path, "input pcap")->required();
    analyze->add_option("--out", an.out_path, "session reports JSONL");
    analyze->add_option("--detections-out", an.detections_out, "flow detection events JSONL");
    analyze->add_option("--attrs-out", an.attrs_out, "per-interval attribute CSV");
    analyze->add_option("--truth", an.truth_path, "sidecar for attribute labeling");
    analyze->add_option("--metrics-out", an.metrics_out, "engine counters JSON");
    analyze->add_option("--local-prefix", an.prefixes, "local CIDR (repeatable)");
    analyze->add_option("--interval", an.interval_len, "monitoring interval seconds");
    analyze->add_option("--n-past", an.n_past, "stateful history length N");
    analyze->add_option("--threshold", an.threshold, "confidence threshold T");
    analyze->add_option("--shards", an.shards, "worker shards");

    AnalyzeArgs lv;
    auto* live = app.add_subcommand("live", "paced replay standing in for a mirror port");
    std::string lv_iface;
    live->add_option("--iface", lv_iface, "source, replay:<pcap>")->required();
    live->add_option("--model", lv.model_path)->required();
    live->add_option("--stateless", lv.stateless_paths);
    live->add_option("--stateful", lv.stateful_paths);
    live->add_option("--out", lv.out_path);
    live->add_option("--local-prefix", lv.prefixes);
    live->add_option("--speed", lv.pace, "replay speed factor (default 1.0)");
    live->add_option("--threshold", lv.threshold);

    auto* eval = app.add_subcommand("evaluate", "score reports against ground truth");
    std::string ev_reports, ev_truth, ev_detections;
    uint64_t ev_negatives = 0;
    eval->add_option("--reports", ev_reports)->required();
    eval->add_option("--truth", ev_truth)->required();
    eval->add_option("--detections", ev_detections, "flow detection events JSONL");
    eval->add_option("--negatives", ev_negatives, "background flow count for FP rates");

    auto* bch = app.add_subcommand("bench", "per-stage processing overhead");
    size_t bn_sessions = 250;
    uint64_t bn_seed = 7;
    std::string bn_profiles, bn_model;
    bch->add_option("--sessions", bn_sessions);
    bch->add_option("--seed", bn_seed);
    bch->add_option("--profiles", bn_profiles)->required();
    bch->add_option("--model", bn_model, "signature model (default: stock set)");

    auto* rep = app.add_subcommand("report", "aggregate session reports");
    std::string rp_as_map, rp_reports, rp_out;
    rep->add_option("--latency-by-as", rp_as_map, "CIDR,AS-label CSV")->required();
    rep->add_option("--reports", rp_reports)->required();
    rep->add_option("--out", rp_out, "write the table here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init) {
            save_model(builtin_signature_set(), init_out);
            std::cerr << "wrote " << init_out << "\n";
            return 0;
        }

        if (*tsig) {
            auto prefixes = parse_prefixes(ts_prefixes);
            auto primary = train_primary_signatures(ts_in, ts_domain, ts_app, prefixes);
            UdpTrainConfig udp_cfg;
            for (const auto& spec : ts_udp_len) {
                auto eq = spec.find('=');
                if (eq == std::string::npos)
                    throw Error(ErrorCode::ConfigError, "--udp-len wants port=len");
                udp_cfg.lengths[{ts_app, uint16_t(std::stoi(spec.substr(0, eq)))}] =
                    size_t(std::stoul(spec.substr(eq + 1)));
            }
            std::vector<LabeledCapture> captures;
            for (const auto& p : ts_in) captures.push_back({p, ts_app});
            auto udp = train_udp_signatures(captures, ts_ports, udp_cfg, prefixes);

            SignatureSet set;
            set.primaries = primary.signatures;
            set.udp = udp;
            set.initial_hs_prefixes[ts_app] = primary.prefix_order;
            set.created_at = iso_from_ts(primary.latest_packet_ts);
            set.validate();
            save_model(set, ts_out);
            std::cerr << "trained " << set.primaries.size() << " primary and " << set.udp.size()
                      << " udp signatures; prefix order:";
            for (const auto& p : primary.prefix_order) std::cerr << " " << p;
            std::cerr << "\n";
            return 0;
        }

        if (*tcls) {
            auto rows = load_attr_csv(tc_in, tc_mode == "stateful" ? tc_npast : 0);
            std::vector<StateLabel> labels;
            if (!tc_labels.empty()) {
                size_t start = 0;
                while (start <= tc_labels.size()) {
                    auto comma = tc_labels.find(',', start);
                    auto name = tc_labels.substr(
                        start, comma == std::string::npos ? std::string::npos : comma - start);
                    auto s = state_from_name(name);
                    if (!s) throw Error(ErrorCode::ConfigError, "unknown label '" + name + "'");
                    labels.push_back(*s);
                    if (comma == std::string::npos) break;
                    start = comma + 1;
                }
            } else {
                for (StateLabel s : all_states())
                    for (const auto& row : rows)
                        if (row.label == s) {
                            labels.push_back(s);
                            break;
                        }
            }
            FeatureSpec spec = tc_mode == "stateful" ? FeatureSpec::STATEFUL_40_PLUS_NK
                                                     : FeatureSpec::STATELESS_40;
            auto data = to_dataset(rows, labels, spec, tc_npast);
            if (is_single_class(data))
                std::cerr << "warning: single-class dataset, the model will be constant\n";

            Hyperparams hp{tc_trees, tc_depth, tc_features};
            if (tc_sweep) {
                auto sweep = sweep_hyperparams(data, labels, SweepGrid{}, tc_folds, tc_seed);
                hp = sweep.best;
                std::cerr << "sweep cells (TP|FP per class):\n";
                for (const auto& cell : sweep.cells) {
                    std::cerr << "  trees=" << cell.hp.n_trees << " depth=" << cell.hp.max_depth
                              << " features=" << cell.hp.max_features << " ->";
                    for (const auto& acc : cell.per_class) {
                        char buf[64];
                        std::snprintf(buf, sizeof(buf), " %s %.1f%%|%.1f%%",
                                      state_name(acc.label), acc.tp_rate * 100,
                                      acc.fp_rate * 100);
                        std::cerr << buf;
                    }
                    std::cerr << "\n";
                }
                std::cerr << "selected trees=" << hp.n_trees << " depth=" << hp.max_depth
                          << " features=" << hp.max_features << "\n";
            }
            auto model = train_forest(data, labels, hp, tc_seed);
            model.app = tc_app;
            model.feature_spec = spec;
            model.n_past = spec == FeatureSpec::STATEFUL_40_PLUS_NK ? tc_npast : 0;
            save_forest(model, tc_out);
            std::cerr << "wrote " << tc_out << " (" << data.size() << " samples, "
                      << labels.size() << " classes)\n";
            return 0;
        }

        if (*mksc) {
            auto profiles = load_profiles(mk_profiles);
            auto it = profiles.apps.find(mk_app);
            if (it == profiles.apps.end())
                throw Error(ErrorCode::ConfigError, "no profile for app " + mk_app);
            auto user = IpAddr::parse(mk_user);
            if (!user) throw Error(ErrorCode::ConfigError, "bad --user");
            auto script =
                make_random_script(mk_app, it->second, *user, mk_seed, mk_start, mk_duration);
            std::ofstream out(mk_out, std::ios::binary);
            if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + mk_out);
            out << script_to_json(script);
            return 0;
        }

        if (*synth) {
            auto set = load_model(sy_model);
            auto profiles = load_profiles(sy_profiles);
            std::vector<std::vector<SynthPacket>> streams;
            SidecarFile truth;
            uint64_t begin_us = UINT64_MAX, end_us = 0;
            size_t idx = 0;
            for (const auto& spath : sy_scripts) {
                std::ifstream in(spath);
                if (!in) throw Error(ErrorCode::ConfigError, "cannot open script " + spath);
                std::stringstream ss;
                ss << in.rdbuf();
                auto script = script_from_json(ss.str());
                if (!sy_app.empty() && script.metaverse != sy_app)
                    throw Error(ErrorCode::ConfigError,
                                spath + " scripts " + script.metaverse + ", expected " + sy_app);
                if (sy_seed) script.seed = sy_seed + idx;
                auto trace = generate_session(script, set, profiles);
                if (!trace.packets.empty()) {
                    begin_us = std::min(begin_us, trace.packets.front().ts_us);
                    end_us = std::max(end_us, trace.packets.back().ts_us);
                }
                streams.push_back(std::move(trace.packets));
                truth.sessions.push_back(std::move(trace.sidecar));
                idx++;
            }
            if (sy_bg > 0) {
                BackgroundOptions opts;
                if (begin_us != UINT64_MAX) {
                    opts.begin_us = begin_us;
                    opts.end_us = std::max(end_us, begin_us + 1000000);
                }
                opts.exclude_collisions = !sy_no_exclude;
                opts.planted_duplicates = sy_plant;
                streams.push_back(generate_background(sy_bg, sy_seed ? sy_seed : 1, set, opts));
            }
            auto packets = merge_streams(std::move(streams));
            emit_pcap(packets, sy_out, sy_snaplen);
            save_sidecar(truth, sy_sidecar);
            std::cerr << "wrote " << packets.size() << " packets to " << sy_out << "\n";
            return 0;
        }

        if (*analyze) return cmd_analyze(an);

        if (*live) {
            constexpr const char* kPrefix = "replay:";
            if (lv_iface.rfind(kPrefix, 0) != 0)
                throw Error(ErrorCode::ConfigError, "live sources are replay:<pcap> in this build");
            lv.in_path = lv_iface.substr(std::string(kPrefix).size());
            if (lv.pace <= 0) lv.pace = 1.0;
            lv.live_stream = true;
            return cmd_analyze(lv);
        }

        if (*eval) {
            auto reports = load_reports(ev_reports);
            auto truth = load_sidecar(ev_truth);
            std::vector<Detection> detections;
            if (!ev_detections.empty()) detections = load_detections(ev_detections);
            auto result = evaluate(reports, detections, truth);
            if (ev_negatives) result.negative_flows = ev_negatives;
            std::cout << format_eval(result);
            return 0;
        }

        if (*bch) {
            auto set = bn_model.empty() ? builtin_signature_set() : load_model(bn_model);
            auto profiles = load_profiles(bn_profiles);
            auto result = bench(set, profiles, bn_sessions, bn_seed);
            std::cout << format_bench(result);
            return 0;
        }

        if (*rep) {
            auto reports = load_reports(rp_reports);
            auto as_map = load_as_map(rp_as_map);
            auto rows = report_latency_by_as(reports, as_map);
            auto table = format_latency_table(rows);
            if (rp_out.empty()) {
                std::cout << table;
            } else {
                std::ofstream out(rp_out, std::ios::binary);
                out << table;
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
