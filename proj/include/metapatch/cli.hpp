#pragma once

// Experiment configuration (JSON), the four commands behind the metapatch tool,
// and deterministic report/CSV formatting. Needs nlohmann/json on the include path.

#include "metapatch/continuation.hpp"
#include "metapatch/equilibria.hpp"
#include "metapatch/errors.hpp"
#include "metapatch/model.hpp"
#include "metapatch/network.hpp"
#include "metapatch/persist.hpp"
#include "metapatch/sim.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace metapatch {

using json = nlohmann::json;

inline constexpr int config_schema_version = 1;

/// %.12g; non-finite values print as null in JSON and nan/inf in CSV.
inline std::string format_number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

namespace detail {

inline void dump_value(const json& j, std::string& out, int indent, int depth)
{
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
    switch (j.type()) {
    case json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{\n";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            out += first ? "" : ",\n";
            first = false;
            out += pad + json(it.key()).dump() + ": ";
            dump_value(it.value(), out, indent, depth + 1);
        }
        out += "\n" + close_pad + "}";
        return;
    }
    case json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            return;
        }
        // numeric arrays stay on one line
        const bool flat = std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_primitive(); });
        out += flat ? "[" : "[\n";
        bool first = true;
        for (const auto& e : j) {
            out += first ? "" : (flat ? ", " : ",\n");
            first = false;
            out += flat ? "" : pad;
            dump_value(e, out, indent, depth + 1);
        }
        out += flat ? "]" : "\n" + close_pad + "]";
        return;
    }
    case json::value_t::number_float: {
        const double v = j.get<double>();
        out += std::isfinite(v) ? format_number(v) : "null";
        return;
    }
    default:
        out += j.dump();
    }
}

} // namespace detail

/// Pretty JSON with sorted keys and 12-significant-digit floats.
inline std::string dump_report(const json& j)
{
    std::string out;
    detail::dump_value(j, out, 2, 0);
    return out + "\n";
}

// ---------------------------------------------------------------------------
// configuration

struct PatchSpec {
    std::string family;
    json params = json::object();
};

struct SimOptions {
    double t_end = default_t_end;
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
    double classify_radius = 1e-4;
};

struct ExperimentConfig {
    std::map<std::string, PatchSpec> regime_library;
    /// resolved patch definitions, with the library name when one was used
    std::vector<std::pair<std::optional<std::string>, PatchSpec>> patches;
    std::string network_name;
    std::optional<std::string> network_preset;
    /// explicit edges: (from, to, cx, cy, cz), 0-based regions
    struct Edge {
        int from = 0;
        int to = 0;
        Vec cx, cy, cz;
    };
    std::vector<Edge> edges;
    std::vector<double> alpha_grid;
    SimOptions sim;
    std::optional<std::vector<EquilibriumPattern>> patterns;
    std::vector<InitialState> initial_sets;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& path, const std::string& what)
{
    throw ConfigError("config " + (path.empty() ? std::string("/") : path) + ": " + what);
}

inline const json& require(const json& j, const std::string& key, const std::string& path)
{
    if (!j.is_object() || !j.contains(key)) {
        config_fail(path, "missing field '" + key + "'");
    }
    return j.at(key);
}

inline double number(const json& j, const std::string& path)
{
    if (!j.is_number()) {
        config_fail(path, "expected a number");
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        config_fail(path, "number must be finite");
    }
    return v;
}

inline Vec vector_of(const json& j, const std::string& path)
{
    if (!j.is_array()) {
        config_fail(path, "expected an array of numbers");
    }
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = number(j[i], path + "/" + std::to_string(i));
    }
    return v;
}

inline Mat matrix_of(const json& j, const std::string& path)
{
    if (!j.is_array() || j.empty()) {
        config_fail(path, "expected a nonempty array of rows");
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    Mat M;
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Vec row = vector_of(j[static_cast<std::size_t>(i)], path + "/" + std::to_string(i));
        if (i == 0) {
            M.resize(rows, row.size());
        }
        if (row.size() != M.cols()) {
            config_fail(path + "/" + std::to_string(i), "ragged matrix row");
        }
        M.row(i) = row.transpose();
    }
    return M;
}

inline json to_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json to_json(const Mat& M)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        rows.push_back(to_json(Vec(M.row(i).transpose())));
    }
    return rows;
}

inline PatchSpec parse_patch(const json& j, const std::string& path)
{
    if (!j.is_object()) {
        config_fail(path, "patch must be an object or a regime_library name");
    }
    PatchSpec spec;
    const json& fam = require(j, "family", path);
    if (!fam.is_string()) {
        config_fail(path + "/family", "expected a string");
    }
    spec.family = fam.get<std::string>();
    if (j.contains("params")) {
        if (!j.at("params").is_object()) {
            config_fail(path + "/params", "expected an object");
        }
        spec.params = j.at("params");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "family" && it.key() != "params") {
            config_fail(path + "/" + it.key(), "unknown field");
        }
    }
    return spec;
}

} // namespace detail

/// Builds the patch model of a spec; `path` is used in error messages.
inline PatchModel build_patch(const PatchSpec& spec, const std::string& path = "")
{
    using namespace detail;
    const json& p = spec.params;
    const std::string pp = path + "/params";
    auto known = [&](std::initializer_list<const char*> names) {
        for (auto it = p.begin(); it != p.end(); ++it) {
            if (std::none_of(names.begin(), names.end(), [&](const char* n) { return it.key() == n; })) {
                config_fail(pp + "/" + it.key(), "unknown parameter for family " + spec.family);
            }
        }
    };
    try {
        if (spec.family == "hiv_vaccination") {
            HivParams h;
            for (auto it = p.begin(); it != p.end(); ++it) {
                try {
                    h.at(it.key()) = number(it.value(), pp + "/" + it.key());
                }
                catch (const DomainError&) {
                    config_fail(pp + "/" + it.key(), "unknown HIV parameter");
                }
            }
            return make_hiv(h);
        }
        if (spec.family == "multigroup") {
            known({"Lambda", "mu", "gamma", "beta"});
            return make_multigroup(vector_of(require(p, "Lambda", pp), pp + "/Lambda"),
                                   number(require(p, "mu", pp), pp + "/mu"),
                                   vector_of(require(p, "gamma", pp), pp + "/gamma"),
                                   matrix_of(require(p, "beta", pp), pp + "/beta"));
        }
        if (spec.family == "stage_progression") {
            known({"Lambda", "mu", "sigma", "beta"});
            return make_stage_progression(number(require(p, "Lambda", pp), pp + "/Lambda"),
                                          number(require(p, "mu", pp), pp + "/mu"),
                                          vector_of(require(p, "sigma", pp), pp + "/sigma"),
                                          vector_of(require(p, "beta", pp), pp + "/beta"));
        }
        if (spec.family == "multistrain") {
            known({"Lambda", "mu", "gamma", "beta"});
            return make_multistrain(number(require(p, "Lambda", pp), pp + "/Lambda"),
                                    number(require(p, "mu", pp), pp + "/mu"),
                                    vector_of(require(p, "gamma", pp), pp + "/gamma"),
                                    vector_of(require(p, "beta", pp), pp + "/beta"));
        }
    }
    catch (const DomainError& e) {
        config_fail(path, e.what());
    }
    config_fail(path + "/family", "unknown model family '" + spec.family +
                                      "' (hiv_vaccination, multigroup, stage_progression, multistrain)");
}

/// Parses and validates a config document. Relative network files resolve against `base_dir`.
inline ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir = ".")
{
    using namespace detail;
    if (!j.is_object()) {
        config_fail("", "top level must be an object");
    }
    const json& version = require(j, "schema_version", "");
    if (!version.is_number_integer() || version.get<int>() != config_schema_version) {
        config_fail("/schema_version", "unsupported schema version (expected " +
                                           std::to_string(config_schema_version) + ")");
    }
    static const std::set<std::string> top{"schema_version", "regime_library", "patches",       "network",
                                           "alpha_grid",     "options",        "initial_sets", "description"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!top.count(it.key())) {
            config_fail("/" + it.key(), "unknown field");
        }
    }

    ExperimentConfig cfg;
    if (j.contains("regime_library")) {
        const json& lib = j.at("regime_library");
        if (!lib.is_object()) {
            config_fail("/regime_library", "expected an object of named patches");
        }
        for (auto it = lib.begin(); it != lib.end(); ++it) {
            cfg.regime_library[it.key()] = parse_patch(it.value(), "/regime_library/" + it.key());
        }
    }

    const json& patches = require(j, "patches", "");
    if (!patches.is_array() || patches.empty()) {
        config_fail("/patches", "expected a nonempty array");
    }
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const std::string path = "/patches/" + std::to_string(i);
        if (patches[i].is_string()) {
            const auto name = patches[i].get<std::string>();
            const auto it = cfg.regime_library.find(name);
            if (it == cfg.regime_library.end()) {
                config_fail(path, "no regime_library entry named '" + name + "'");
            }
            cfg.patches.emplace_back(name, it->second);
        }
        else {
            cfg.patches.emplace_back(std::nullopt, parse_patch(patches[i], path));
        }
    }
    // dimensions must agree across patches
    std::optional<PatchModel> first;
    for (std::size_t i = 0; i < cfg.patches.size(); ++i) {
        const auto path = "/patches/" + std::to_string(i);
        const auto model = build_patch(cfg.patches[i].second, path);
        if (!first) {
            first = model;
        }
        else if (model.n != first->n || model.m != first->m || model.k != first->k) {
            config_fail(path, "block sizes differ from patch 0");
        }
    }
    for (const auto& [name, spec] : cfg.regime_library) {
        const auto model = build_patch(spec, "/regime_library/" + name);
        if (model.n != first->n || model.m != first->m || model.k != first->k) {
            config_fail("/regime_library/" + name, "block sizes differ from the patches");
        }
    }
    const int r = static_cast<int>(cfg.patches.size());

    json net = require(j, "network", "");
    std::string net_path = "/network";
    if (net.is_object() && net.contains("file")) {
        if (!net.at("file").is_string()) {
            config_fail("/network/file", "expected a path");
        }
        const auto file = base_dir / net.at("file").get<std::string>();
        std::ifstream in(file);
        if (!in) {
            config_fail("/network/file", "cannot open " + file.string());
        }
        try {
            net = json::parse(in);
        }
        catch (const json::parse_error& e) {
            config_fail("/network/file", file.string() + ": " + e.what());
        }
        net_path = file.string();
    }
    if (!net.is_object()) {
        config_fail(net_path, "expected an object with 'preset' or 'edges'");
    }
    if (net.contains("preset")) {
        if (!net.at("preset").is_string()) {
            config_fail(net_path + "/preset", "expected a string");
        }
        cfg.network_preset = net.at("preset").get<std::string>();
        cfg.network_name = *cfg.network_preset;
    }
    else {
        cfg.network_name = net.value("name", std::string("custom"));
        if (net.contains("regions") && net.at("regions") != r) {
            config_fail(net_path + "/regions", "network has " + net.at("regions").dump() + " regions, config " +
                                                   std::to_string(r) + " patches");
        }
        const json& edges = require(net, "edges", net_path);
        if (!edges.is_array()) {
            config_fail(net_path + "/edges", "expected an array");
        }
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const std::string ep = net_path + "/edges/" + std::to_string(e);
            const json& ej = edges[e];
            ExperimentConfig::Edge edge;
            const json& from = require(ej, "from", ep);
            const json& to = require(ej, "to", ep);
            if (!from.is_number_integer() || !to.is_number_integer()) {
                config_fail(ep, "from and to must be 1-based region numbers");
            }
            edge.from = from.get<int>() - 1;
            edge.to = to.get<int>() - 1;
            if (edge.from < 0 || edge.from >= r || edge.to < 0 || edge.to >= r || edge.from == edge.to) {
                config_fail(ep, "invalid region pair");
            }
            if (ej.contains("c")) {
                const double c = number(ej.at("c"), ep + "/c");
                edge.cx = Vec::Constant(first->n, c);
                edge.cy = Vec::Constant(first->m, c);
                edge.cz = Vec::Constant(first->k, c);
            }
            else {
                auto block = [&](const char* key, int size) {
                    if (!ej.contains(key)) {
                        return Vec(Vec::Zero(size));
                    }
                    Vec v = vector_of(ej.at(key), ep + "/" + key);
                    if (v.size() != size) {
                        config_fail(ep + "/" + key, "expected " + std::to_string(size) + " entries");
                    }
                    return v;
                };
                edge.cx = block("cx", first->n);
                edge.cy = block("cy", first->m);
                edge.cz = block("cz", first->k);
            }
            if (edge.cx.minCoeff() < 0.0 || edge.cy.minCoeff() < 0.0 || edge.cz.minCoeff() < 0.0) {
                config_fail(ep, "connectivity must be nonnegative");
            }
            cfg.edges.push_back(edge);
        }
    }

    if (j.contains("alpha_grid")) {
        const Vec grid = vector_of(j.at("alpha_grid"), "/alpha_grid");
        for (Eigen::Index i = 0; i < grid.size(); ++i) {
            if (grid(i) < 0.0) {
                config_fail("/alpha_grid/" + std::to_string(i), "alpha must be nonnegative");
            }
            cfg.alpha_grid.push_back(grid(i));
        }
    }
    else {
        cfg.alpha_grid = default_alpha_grid();
    }

    if (j.contains("options")) {
        const json& o = j.at("options");
        if (!o.is_object()) {
            config_fail("/options", "expected an object");
        }
        for (auto it = o.begin(); it != o.end(); ++it) {
            const std::string op = "/options/" + it.key();
            if (it.key() == "t_end") {
                cfg.sim.t_end = number(it.value(), op);
            }
            else if (it.key() == "rel_tol") {
                cfg.sim.rel_tol = number(it.value(), op);
            }
            else if (it.key() == "abs_tol") {
                cfg.sim.abs_tol = number(it.value(), op);
            }
            else if (it.key() == "classify_radius") {
                cfg.sim.classify_radius = number(it.value(), op);
            }
            else if (it.key() == "patterns") {
                if (!it.value().is_array()) {
                    config_fail(op, "expected an array of choice lists");
                }
                cfg.patterns.emplace();
                for (std::size_t p = 0; p < it.value().size(); ++p) {
                    const Vec c = vector_of(it.value()[p], op + "/" + std::to_string(p));
                    EquilibriumPattern pat;
                    for (Eigen::Index q = 0; q < c.size(); ++q) {
                        pat.choices.push_back(static_cast<int>(c(q)));
                    }
                    if (pat.regions() != r) {
                        config_fail(op + "/" + std::to_string(p), "one choice per patch expected");
                    }
                    cfg.patterns->push_back(pat);
                }
            }
            else {
                config_fail(op, "unknown option");
            }
        }
        if (!(cfg.sim.t_end >= 0.0) || !(cfg.sim.rel_tol > 0.0) || !(cfg.sim.abs_tol > 0.0) ||
            !(cfg.sim.classify_radius > 0.0)) {
            config_fail("/options", "t_end must be nonnegative and tolerances positive");
        }
    }

    if (j.contains("initial_sets")) {
        const json& sets = j.at("initial_sets");
        if (!sets.is_array()) {
            config_fail("/initial_sets", "expected an array");
        }
        const int d = first->dim();
        for (std::size_t s = 0; s < sets.size(); ++s) {
            const std::string sp = "/initial_sets/" + std::to_string(s);
            const json& sj = sets[s];
            InitialState init;
            const json& label = require(sj, "label", sp);
            if (!label.is_string()) {
                config_fail(sp + "/label", "expected a string");
            }
            init.label = label.get<std::string>();
            if (sj.contains("state")) {
                init.X = vector_of(sj.at("state"), sp + "/state");
            }
            else if (sj.contains("Y1") && sj.contains("W1")) {
                if (first->family != Family::hiv_vaccination) {
                    config_fail(sp, "Y1/W1 shorthand needs HIV patches");
                }
                const Vec Y1 = vector_of(sj.at("Y1"), sp + "/Y1");
                const Vec W1 = vector_of(sj.at("W1"), sp + "/W1");
                const double S = sj.contains("S") ? number(sj.at("S"), sp + "/S") : 10.0;
                const double SV = sj.contains("SV") ? number(sj.at("SV"), sp + "/SV") : 5.0;
                if (Y1.size() != r || W1.size() != r) {
                    config_fail(sp, "Y1 and W1 need one entry per patch");
                }
                init.X = hiv_initial_state(std::vector<double>(Y1.data(), Y1.data() + r),
                                           std::vector<double>(W1.data(), W1.data() + r), S, SV);
            }
            else {
                config_fail(sp, "expected 'state' or 'Y1'/'W1'");
            }
            if (init.X.size() != r * d) {
                config_fail(sp, "state needs " + std::to_string(r * d) + " entries");
            }
            if (init.X.minCoeff() < 0.0) {
                config_fail(sp, "initial state must be nonnegative");
            }
            cfg.initial_sets.push_back(init);
        }
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) {
        throw ConfigError("cannot open config file " + file.string());
    }
    json j;
    try {
        j = json::parse(in);
    }
    catch (const json::parse_error& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
    return parse_config(j, file.parent_path());
}

/// Canonical JSON form; parse_config(config_to_json(c)) describes the same experiment.
inline json config_to_json(const ExperimentConfig& cfg)
{
    using detail::to_json;
    json j;
    j["schema_version"] = config_schema_version;
    auto patch_json = [](const PatchSpec& p) { return json{{"family", p.family}, {"params", p.params}}; };
    if (!cfg.regime_library.empty()) {
        json lib = json::object();
        for (const auto& [name, spec] : cfg.regime_library) {
            lib[name] = patch_json(spec);
        }
        j["regime_library"] = lib;
    }
    json patches = json::array();
    for (const auto& [name, spec] : cfg.patches) {
        patches.push_back(name ? json(*name) : patch_json(spec));
    }
    j["patches"] = patches;
    if (cfg.network_preset) {
        j["network"] = {{"preset", *cfg.network_preset}};
    }
    else {
        json edges = json::array();
        for (const auto& e : cfg.edges) {
            edges.push_back({{"from", e.from + 1}, {"to", e.to + 1}, {"cx", to_json(e.cx)}, {"cy", to_json(e.cy)},
                             {"cz", to_json(e.cz)}});
        }
        j["network"] = {{"name", cfg.network_name}, {"regions", cfg.patches.size()}, {"edges", edges}};
    }
    j["alpha_grid"] = cfg.alpha_grid;
    json options = {{"t_end", cfg.sim.t_end},
                    {"rel_tol", cfg.sim.rel_tol},
                    {"abs_tol", cfg.sim.abs_tol},
                    {"classify_radius", cfg.sim.classify_radius}};
    if (cfg.patterns) {
        json pats = json::array();
        for (const auto& p : *cfg.patterns) {
            pats.push_back(p.choices);
        }
        options["patterns"] = pats;
    }
    j["options"] = options;
    json sets = json::array();
    for (const auto& s : cfg.initial_sets) {
        sets.push_back({{"label", s.label}, {"state", to_json(s.X)}});
    }
    j["initial_sets"] = sets;
    return j;
}

inline std::vector<PatchModel> config_models(const ExperimentConfig& cfg)
{
    std::vector<PatchModel> out;
    for (std::size_t i = 0; i < cfg.patches.size(); ++i) {
        out.push_back(build_patch(cfg.patches[i].second, "/patches/" + std::to_string(i)));
    }
    return out;
}

inline MobilityNetwork config_network(const ExperimentConfig& cfg)
{
    const auto first = build_patch(cfg.patches.front().second);
    const int r = static_cast<int>(cfg.patches.size());
    if (cfg.network_preset) {
        MobilityNetwork net;
        try {
            net = preset(*cfg.network_preset, first.n, first.m, first.k);
        }
        catch (const DomainError& e) {
            detail::config_fail("/network/preset", e.what());
        }
        if (net.r != r) {
            detail::config_fail("/network/preset", "preset has " + std::to_string(net.r) + " regions, config " +
                                                       std::to_string(r) + " patches");
        }
        return net;
    }
    MobilityNetwork net(r, first.n, first.m, first.k);
    net.name = cfg.network_name;
    for (const auto& e : cfg.edges) {
        auto& l = net.link(e.to, e.from);
        l.cx += e.cx;
        l.cy += e.cy;
        l.cz += e.cz;
    }
    net.validate();
    return net;
}

// ---------------------------------------------------------------------------
// reports

/// Compartment names used as CSV columns, suffixed with the 1-based region.
inline std::vector<std::string> component_names(const PatchModel& model, int region)
{
    std::vector<std::string> base;
    if (model.family == Family::hiv_vaccination) {
        base = {"Y1", "Y2", "W1", "W2", "S", "SV", "A"};
    }
    else {
        for (int i = 0; i < model.n; ++i) {
            base.push_back("x" + std::to_string(i + 1));
        }
        for (int i = 0; i < model.m; ++i) {
            base.push_back("y" + std::to_string(i + 1));
        }
        for (int i = 0; i < model.k; ++i) {
            base.push_back("z" + std::to_string(i + 1));
        }
    }
    for (auto& b : base) {
        b += "_r" + std::to_string(region + 1);
    }
    return base;
}

struct CommandResult {
    json report;
    /// (file name, contents) written next to the report
    std::vector<std::pair<std::string, std::string>> artifacts;
    bool numerical_failure = false;
};

namespace detail {

inline json state_json(const PatchState& s)
{
    return {{"x", to_json(s.x)}, {"y", to_json(s.y)}, {"z", to_json(s.z)}};
}

inline std::string regime_label(double R, int endemic)
{
    if (R > 1.0) {
        return to_string(Regime::above_one);
    }
    if (R < 1.0 && endemic == 0) {
        return to_string(Regime::below_Rc);
    }
    if (R < 1.0 && endemic >= 2) {
        return to_string(Regime::backward_window);
    }
    return "other";
}

inline std::vector<RegionProfile> profiles(const std::vector<PatchModel>& models)
{
    std::vector<RegionProfile> out(models.size());
    parallel_for(models.size(), [&](std::size_t i) { out[i] = profile_region(models[i]); });
    return out;
}

inline json edges_json(const MobilityNetwork& net)
{
    json out = json::array();
    for (auto [from, to] : net.edges()) {
        out.push_back({from + 1, to + 1});
    }
    return out;
}

inline json verdict_json(const PersistenceVerdict& v)
{
    json j = {{"pattern", v.pattern.label()},
              {"verdict", to_string(v.verdict)},
              {"rule", to_string(v.rule)},
              {"note", v.note}};
    json witness = json::array();
    for (int w : v.witness) {
        witness.push_back(w + 1);
    }
    j["witness"] = witness;
    j["offending_R"] = v.offending_R ? json(*v.offending_R) : json(nullptr);
    return j;
}

inline std::string csv_line(const std::vector<std::string>& cells)
{
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        s += (i ? "," : "") + cells[i];
    }
    return s + "\n";
}

inline std::string file_tag(const std::string& s)
{
    std::string out;
    for (char c : s) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
    }
    return out;
}

} // namespace detail

/// Per-patch reproduction number, equilibria with stability, and bifurcation regime.
inline CommandResult cmd_analyze(const ExperimentConfig& cfg)
{
    using namespace detail;
    const auto models = config_models(cfg);
    const auto profs = profiles(models);
    json patches = json::array();
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& p = profs[i];
        json pj = {{"index", i + 1},
                   {"family", to_string(models[i].family)},
                   {"R", p.R},
                   {"irreducible_transmission", p.irreducible},
                   {"regime", regime_label(p.R, p.endemic_count())},
                   {"endemic_count", p.endemic_count()}};
        if (cfg.patches[i].first) {
            pj["library_name"] = *cfg.patches[i].first;
        }
        json eq = json::array();
        for (const auto& e : p.equilibria) {
            eq.push_back({{"kind", to_string(e.kind)},
                          {"state", state_json(e.state)},
                          {"stability", to_string(e.stability)},
                          {"max_real_eig", e.max_real_eig}});
        }
        pj["equilibria"] = eq;
        if (models[i].hiv) {
            std::vector<double> lambdas = hiv_endemic_lambdas(*models[i].hiv);
            pj["endemic_lambdas"] = lambdas;
        }
        patches.push_back(pj);
    }
    return {{{"command", "analyze"}, {"patches", patches}}, {}, false};
}

/// Verdict for every pattern and the persisting count; optionally the exhaustive three-region scan.
inline CommandResult cmd_census(const ExperimentConfig& cfg, bool exhaustive)
{
    using namespace detail;
    const auto models = config_models(cfg);
    const auto profs = profiles(models);
    const auto net = config_network(cfg);
    json report = {{"command", "census"}, {"network", net.name}, {"edges", edges_json(net)}};
    report["weakly_connected"] = is_weakly_connected(net);
    report["irreducible_network"] = is_irreducible(region_digraph(net));
    std::vector<double> Rs;
    for (const auto& p : profs) {
        Rs.push_back(p.R);
    }
    report["R"] = Rs;
    report["endemic_counts"] = endemic_counts(profs);
    json rows = json::array();
    int persisting = 0;
    bool indeterminate = false;
    for (const auto& v : predict_all(profs, net)) {
        rows.push_back(verdict_json(v));
        persisting += v.verdict == Verdict::persists ? 1 : 0;
        indeterminate = indeterminate || v.verdict == Verdict::indeterminate;
    }
    report["patterns"] = rows;
    report["persisting_count"] = indeterminate ? json(nullptr) : json(persisting);

    if (exhaustive) {
        if (models.size() != 3) {
            config_fail("/patches", "exhaustive network scan needs exactly three patches");
        }
        if (cfg.regime_library.empty()) {
            config_fail("/regime_library", "exhaustive network scan assigns regime_library entries to regions");
        }
        std::vector<std::string> names;
        std::vector<RegionProfile> lib;
        for (const auto& [name, spec] : cfg.regime_library) {
            names.push_back(name);
            lib.push_back(profile_region(build_patch(spec, "/regime_library/" + name)));
        }
        const auto nets = enumerate_networks(3, models[0].n, models[0].m, models[0].k);
        std::set<int> all, connected, irreducible;
        std::map<int, json> example;
        int indeterminate_cases = 0;
        const std::size_t L = lib.size();
        for (const auto& candidate : nets) {
            const bool conn = is_weakly_connected(candidate);
            const bool irr = is_irreducible(region_digraph(candidate));
            for (std::size_t a = 0; a < L * L * L; ++a) {
                const std::size_t idx[3] = {a / (L * L), (a / L) % L, a % L};
                const std::vector<RegionProfile> regs{lib[idx[0]], lib[idx[1]], lib[idx[2]]};
                int c = 0;
                try {
                    c = count_persisting(regs, candidate);
                }
                catch (const NumericalError&) {
                    ++indeterminate_cases;
                    continue;
                }
                all.insert(c);
                if (conn) {
                    connected.insert(c);
                    if (!example.count(c)) {
                        example[c] = {{"network", candidate.name},
                                      {"edges", edges_json(candidate)},
                                      {"regimes", {names[idx[0]], names[idx[1]], names[idx[2]]}}};
                    }
                }
                if (irr) {
                    irreducible.insert(c);
                }
            }
        }
        json ex = json::object();
        for (const auto& [c, e] : example) {
            ex[std::to_string(c)] = e;
        }
        report["exhaustive"] = {{"networks_scanned", nets.size()},
                                {"regime_names", names},
                                {"attained_weakly_connected", connected},
                                {"attained_irreducible", irreducible},
                                {"attained_all_digraphs", all},
                                {"indeterminate_cases", indeterminate_cases},
                                {"examples", ex}};
    }
    return {report, {}, false};
}

/// Continues every (or every selected) pattern over the alpha grid and compares with the prediction.
inline CommandResult cmd_continue(const ExperimentConfig& cfg)
{
    using namespace detail;
    const auto models = config_models(cfg);
    const auto profs = profiles(models);
    const auto net = config_network(cfg);
    const auto counts = endemic_counts(profs);
    const auto patterns = cfg.patterns ? *cfg.patterns : enumerate_patterns(counts);
    for (const auto& p : patterns) {
        for (int i = 0; i < p.regions(); ++i) {
            if (p.choices[i] < 0 || p.choices[i] > counts[i]) {
                config_fail("/options/patterns", "pattern " + p.label() + " refers to a missing equilibrium");
            }
        }
    }
    std::vector<BranchRecord> records(patterns.size());
    std::vector<std::string> errors(patterns.size());
    parallel_for(patterns.size(), [&](std::size_t i) {
        try {
            records[i] = continue_branch(patterns[i], profs, net, cfg.alpha_grid);
        }
        catch (const NumericalError& e) {
            records[i].pattern = patterns[i];
            records[i].complete = false;
            errors[i] = e.what();
        }
    });

    CommandResult result;
    std::vector<std::string> header{"alpha"};
    for (int i = 0; i < net.r; ++i) {
        for (auto& c : component_names(models[i], i)) {
            header.push_back(c);
        }
    }
    header.push_back("min_component");
    header.push_back("max_real_eig");

    json rows = json::array();
    int surviving = 0, mismatches = 0;
    const double last_alpha = cfg.alpha_grid.empty() ? 0.0 : *std::max_element(cfg.alpha_grid.begin(), cfg.alpha_grid.end());
    for (std::size_t i = 0; i < patterns.size(); ++i) {
        const auto& rec = records[i];
        const auto predicted = predict(patterns[i], profs, net);
        json row = {{"pattern", patterns[i].label()},
                    {"predicted", to_string(predicted.verdict)},
                    {"rule", to_string(predicted.rule)},
                    {"complete", rec.complete},
                    {"points", rec.points.size()}};
        if (!errors[i].empty()) {
            row["error"] = errors[i];
            result.numerical_failure = true;
        }
        else {
            row["observed"] = to_string(rec.verdict_observed);
            row["exit_alpha"] = rec.exit_alpha ? json(*rec.exit_alpha) : json(nullptr);
            row["agrees"] = predicted.verdict == rec.verdict_observed;
            mismatches += predicted.verdict == rec.verdict_observed ? 0 : 1;
            if (!rec.diagnostics.empty()) {
                row["diagnostics"] = rec.diagnostics;
            }
            const auto* end = rec.at(last_alpha);
            if (end && !rec.exit_alpha) {
                ++surviving;
                row["stability_at_last_alpha"] = to_string(end->stability);
            }
            std::string csv = csv_line(header);
            for (const auto& p : rec.points) {
                std::vector<std::string> cells{format_number(p.alpha)};
                for (Eigen::Index c = 0; c < p.X.size(); ++c) {
                    cells.push_back(format_number(p.X(c)));
                }
                cells.push_back(format_number(p.min_component));
                cells.push_back(format_number(p.max_real_eig));
                csv += csv_line(cells);
            }
            const std::string file = "branch_" + file_tag(patterns[i].label()) + ".csv";
            row["csv"] = file;
            result.artifacts.emplace_back(file, csv);
        }
        rows.push_back(row);
    }
    result.report = {{"command", "continue"},
                     {"network", net.name},
                     {"alpha_grid", cfg.alpha_grid},
                     {"branches", rows},
                     {"surviving_at_last_alpha", surviving},
                     {"verdict_mismatches", mismatches}};
    return result;
}

/// Trajectories of every initial set at every alpha, with terminal classifications.
inline CommandResult cmd_simulate(const ExperimentConfig& cfg)
{
    using namespace detail;
    const auto models = config_models(cfg);
    const auto net = config_network(cfg);
    CommandResult result;
    json runs = json::array();
    if (cfg.initial_sets.empty()) {
        result.report = {{"command", "simulate"}, {"network", net.name}, {"runs", runs}};
        return result;
    }
    const auto profs = profiles(models);
    Tolerances tol;
    tol.rel = cfg.sim.rel_tol;
    tol.abs = cfg.sim.abs_tol;
    tol.classify = cfg.sim.classify_radius;
    std::vector<std::string> header{"t"};
    for (int i = 0; i < net.r; ++i) {
        for (auto& c : component_names(models[i], i)) {
            header.push_back(c);
        }
    }
    for (double alpha : cfg.alpha_grid) {
        const auto catalog = equilibrium_catalog(profs, net, alpha);
        std::vector<Trajectory> trajs(cfg.initial_sets.size());
        std::vector<std::string> errors(cfg.initial_sets.size());
        parallel_for(cfg.initial_sets.size(), [&](std::size_t s) {
            try {
                trajs[s] = integrate(models, net, alpha, cfg.initial_sets[s].X, cfg.sim.t_end, tol, catalog);
            }
            catch (const NumericalError& e) {
                errors[s] = e.what();
            }
        });
        for (std::size_t s = 0; s < cfg.initial_sets.size(); ++s) {
            json run = {{"label", cfg.initial_sets[s].label}, {"alpha", alpha}};
            if (!errors[s].empty()) {
                run["error"] = errors[s];
                result.numerical_failure = true;
                runs.push_back(run);
                continue;
            }
            const auto& traj = trajs[s];
            run["terminal_classification"] = traj.terminal_classification;
            run["terminal_state"] = to_json(traj.terminal());
            run["min_component"] = traj.min_component;
            run["steps"] = traj.times.size() - 1;
            std::string csv = csv_line(header);
            for (std::size_t p = 0; p < traj.times.size(); ++p) {
                std::vector<std::string> cells{format_number(traj.times[p])};
                for (Eigen::Index c = 0; c < traj.states[p].size(); ++c) {
                    cells.push_back(format_number(traj.states[p](c)));
                }
                csv += csv_line(cells);
            }
            const std::string file =
                "trajectory_" + file_tag(cfg.initial_sets[s].label) + "_alpha_" + format_number(alpha) + ".csv";
            run["csv"] = file;
            result.artifacts.emplace_back(file, csv);
            runs.push_back(run);
        }
    }
    result.report = {{"command", "simulate"}, {"network", net.name}, {"runs", runs}};
    return result;
}

} // namespace metapatch
