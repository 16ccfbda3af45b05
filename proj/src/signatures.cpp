#include "vrmon/signatures.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vrmon/errors.hpp"

namespace vrmon {

std::vector<uint16_t> SignatureSet::udp_ports() const {
    std::vector<uint16_t> ports;
    for (const auto& s : udp)
        if (std::find(ports.begin(), ports.end(), s.port) == ports.end()) ports.push_back(s.port);
    std::sort(ports.begin(), ports.end());
    return ports;
}

std::optional<std::string> SignatureSet::domain_of(const std::string& metaverse) const {
    for (const auto& s : primaries)
        if (s.metaverse == metaverse) return s.domain;
    return std::nullopt;
}

void SignatureSet::validate() const {
    std::set<std::pair<std::string, std::vector<uint32_t>>> prim_seen;
    for (const auto& s : primaries) {
        if (s.size_seq.empty() || s.size_seq[0] == 0)
            throw Error(ErrorCode::CorruptModel, "primary signature with empty or zero-led sequence");
        for (uint32_t v : s.size_seq)
            if (v == 0) throw Error(ErrorCode::CorruptModel, "zero size in primary signature");
        if (!prim_seen.insert({s.metaverse, s.size_seq}).second)
            throw Error(ErrorCode::CorruptModel,
                        "duplicate (metaverse, sequence) in primaries: " + s.metaverse);
    }
    std::set<std::pair<uint16_t, std::vector<uint32_t>>> udp_seen;
    for (const auto& s : udp) {
        if (s.size_seq.empty())
            throw Error(ErrorCode::CorruptModel, "udp signature with empty sequence");
        if (!udp_seen.insert({s.port, s.size_seq}).second)
            throw Error(ErrorCode::CorruptModel,
                        "duplicate (port, sequence) in udp signatures: " + std::to_string(s.port));
    }
    for (const auto& [mv, prefixes] : initial_hs_prefixes) {
        for (const auto& p : prefixes) {
            bool covered = std::any_of(primaries.begin(), primaries.end(), [&](const auto& s) {
                return s.metaverse == mv && s.prefix == p;
            });
            if (!covered)
                throw Error(ErrorCode::CorruptModel,
                            "initial prefix '" + p + "' of " + mv + " has no signature");
        }
    }
}

SignatureSet builtin_signature_set() {
    SignatureSet set;
    set.version = 1;
    set.created_at = "builtin";

    auto prim = [&](const char* mv, const char* dom, const char* pfx,
                    std::vector<uint32_t> seq) {
        set.primaries.push_back({mv, dom, pfx, std::move(seq)});
    };
    auto udp = [&](const char* mv, uint16_t port, std::vector<uint32_t> seq) {
        set.udp.push_back({mv, port, std::move(seq)});
    };

    prim("Multiverse", "shapevrcloud", "prod", {414, 75, 6, 45, 338});
    prim("Multiverse", "shapevrcloud", "prod", {414, 75, 6, 45, 591});
    prim("Multiverse", "shapevrcloud", "prodblobs", {419, 75, 6, 45, 284});

    prim("VRChat", "vrchat", "api", {409, 75, 6, 45, 235});
    prim("VRChat", "vrchat", "pipeline", {244, 134, 490});
    prim("VRChat", "vrchat", "assets", {410, 75, 6, 45, 305});

    prim("RecRoom", "rec", "api", {148, 75, 51, 204});
    prim("RecRoom", "rec", "api", {148, 75, 51, 205});
    prim("RecRoom", "rec", "api", {148, 75, 51, 253});
    prim("RecRoom", "rec", "auth", {149, 75, 51, 216});

    prim("AltSpaceVR", "altvr", "config", {409, 75, 6, 45, 269});
    prim("AltSpaceVR", "altvr", "cdn-content-ingress", {422, 107, 6, 45, 276});
    prim("AltSpaceVR", "altvr", "account", {410, 107, 6, 45, 239});

    udp("Multiverse", 5055, {56, 86, 32, 143});
    udp("Multiverse", 5056, {56, 56, 85, 159});
    udp("Multiverse", 5058, {56, 86, 159, 174});

    udp("VRChat", 5055, {60, 60, 34, 69});
    udp("VRChat", 5056, {60, 89, 163, 36, 1200});
    udp("VRChat", 5058, {60, 89, 163, 68});

    udp("RecRoom", 5055, {13, 13, 13, 13, 13});
    udp("RecRoom", 5056, {56, 32, 65, 65});
    udp("RecRoom", 5058, {56, 32, 65, 32});

    udp("AltSpaceVR", 5055, {56, 85, 32, 143, 32, 1196});
    udp("AltSpaceVR", 5056, {56, 85, 163, 44, 1196});

    set.initial_hs_prefixes["Multiverse"] = {"prod", "prodblobs"};
    set.initial_hs_prefixes["VRChat"] = {"api", "pipeline", "assets"};
    set.initial_hs_prefixes["RecRoom"] = {"api", "auth"};
    set.initial_hs_prefixes["AltSpaceVR"] = {"config", "cdn-content-ingress", "account"};

    set.validate();
    return set;
}

void SignatureMatcher::Trie::insert(std::span<const uint32_t> seq, int sig_index) {
    int node = 0;
    for (uint32_t size : seq) {
        auto& children = nodes[size_t(node)].children;
        auto it = std::lower_bound(children.begin(), children.end(), size,
                                   [](const auto& c, uint32_t v) { return c.first < v; });
        if (it == children.end() || it->first != size) {
            int next = int(nodes.size());
            nodes.emplace_back();
            it = nodes[size_t(node)].children.insert(it, {size, next});
        }
        node = it->second;
    }
    if (nodes[size_t(node)].terminal < 0) nodes[size_t(node)].terminal = sig_index;
}

std::pair<int, bool> SignatureMatcher::Trie::walk(std::span<const uint32_t> seq) const {
    int node = 0;
    for (uint32_t size : seq) {
        const auto& children = nodes[size_t(node)].children;
        auto it = std::lower_bound(children.begin(), children.end(), size,
                                   [](const auto& c, uint32_t v) { return c.first < v; });
        if (it == children.end() || it->first != size) return {-1, false};
        node = it->second;
    }
    return {node, true};
}

SignatureMatcher::SignatureMatcher(const SignatureSet& set) : set_(&set) {
    for (size_t i = 0; i < set.primaries.size(); ++i)
        primary_trie_.insert(set.primaries[i].size_seq, int(i));
    for (size_t i = 0; i < set.udp.size(); ++i)
        udp_tries_[set.udp[i].port].insert(set.udp[i].size_seq, int(i));
}

PrimaryMatch SignatureMatcher::match_primary(std::span<const uint32_t> seq) const {
    PrimaryMatch out;
    if (seq.empty()) {
        out.kind = set_->primaries.empty() ? MatchKind::REJECT : MatchKind::PENDING;
        return out;
    }
    auto [node, ok] = primary_trie_.walk(seq);
    if (!ok) return out;
    int term = primary_trie_.nodes[size_t(node)].terminal;
    if (term >= 0) {
        const auto& sig = set_->primaries[size_t(term)];
        out.kind = MatchKind::MATCH;
        out.metaverse = sig.metaverse;
        out.domain = sig.domain;
        out.prefix = sig.prefix;
        return out;
    }
    out.kind = MatchKind::PENDING;
    return out;
}

UdpMatch SignatureMatcher::match_udp(uint16_t port, std::span<const uint32_t> seq) const {
    UdpMatch out;
    auto it = udp_tries_.find(port);
    if (it == udp_tries_.end()) return out;
    if (seq.empty()) {
        out.kind = MatchKind::PENDING;
        return out;
    }
    auto [node, ok] = it->second.walk(seq);
    if (!ok) return out;
    int term = it->second.nodes[size_t(node)].terminal;
    if (term >= 0) {
        out.kind = MatchKind::MATCH;
        out.metaverse = set_->udp[size_t(term)].metaverse;
        return out;
    }
    out.kind = MatchKind::PENDING;
    return out;
}

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int kModelVersion = 1;

} // namespace

std::string model_to_json(const SignatureSet& set) {
    // One object per metaverse, fields in a fixed order so identical
    // sets serialize to identical bytes.
    std::vector<std::string> names;
    for (const auto& s : set.primaries)
        if (std::find(names.begin(), names.end(), s.metaverse) == names.end())
            names.push_back(s.metaverse);
    for (const auto& s : set.udp)
        if (std::find(names.begin(), names.end(), s.metaverse) == names.end())
            names.push_back(s.metaverse);
    std::sort(names.begin(), names.end());

    ordered_json root;
    root["version"] = set.version;
    root["created_at"] = set.created_at;
    root["metaverses"] = ordered_json::array();
    for (const auto& name : names) {
        ordered_json mv;
        mv["name"] = name;
        std::string domain;
        for (const auto& s : set.primaries)
            if (s.metaverse == name) {
                domain = s.domain;
                break;
            }
        mv["domain"] = domain;
        auto pit = set.initial_hs_prefixes.find(name);
        mv["initial_hs_prefixes"] =
            pit == set.initial_hs_prefixes.end() ? std::vector<std::string>{} : pit->second;
        mv["primaries"] = ordered_json::array();
        for (const auto& s : set.primaries)
            if (s.metaverse == name)
                mv["primaries"].push_back(ordered_json{{"prefix", s.prefix}, {"seq", s.size_seq}});
        mv["udp"] = ordered_json::array();
        for (const auto& s : set.udp)
            if (s.metaverse == name)
                mv["udp"].push_back(ordered_json{{"port", s.port}, {"seq", s.size_seq}});
        root["metaverses"].push_back(std::move(mv));
    }
    return root.dump(2) + "\n";
}

SignatureSet model_from_json(const std::string& text) {
    ordered_json root;
    try {
        root = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::CorruptModel, std::string("unparseable model file: ") + e.what());
    }
    try {
        if (!root.contains("version") || !root["version"].is_number_integer())
            throw Error(ErrorCode::CorruptModel, "missing version field");
        int version = root["version"].get<int>();
        if (version != kModelVersion)
            throw Error(ErrorCode::SchemaMismatch,
                        "model schema version " + std::to_string(version) + ", expected " +
                            std::to_string(kModelVersion));
        SignatureSet set;
        set.version = version;
        set.created_at = root.value("created_at", "");
        for (const auto& mv : root.at("metaverses")) {
            std::string name = mv.at("name").get<std::string>();
            std::string domain = mv.value("domain", "");
            for (const auto& p : mv.at("primaries"))
                set.primaries.push_back(
                    {name, domain, p.at("prefix").get<std::string>(),
                     p.at("seq").get<std::vector<uint32_t>>()});
            for (const auto& u : mv.at("udp"))
                set.udp.push_back({name, u.at("port").get<uint16_t>(),
                                   u.at("seq").get<std::vector<uint32_t>>()});
            auto prefixes = mv.at("initial_hs_prefixes").get<std::vector<std::string>>();
            if (!prefixes.empty()) set.initial_hs_prefixes[name] = std::move(prefixes);
        }
        set.validate();
        return set;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::CorruptModel, std::string("malformed model file: ") + e.what());
    }
}

void save_model(const SignatureSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
    out << model_to_json(set);
}

SignatureSet load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::CorruptModel, "cannot open model file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

} // namespace vrmon
