#pragma once
// Run configuration: JSON round trip with strict key and type checking.

#include "fragmenta/matching.hpp"
#include "fragmenta/nn/model.hpp"
#include "fragmenta/tearing.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

namespace fragmenta::config {

using nlohmann::json;

/// Enum <-> string table used for strict parsing.
template <class E, std::size_t N>
using EnumNames = std::array<std::pair<E, const char*>, N>;

inline constexpr EnumNames<codec::ContourEncoding, 3> kContourEncodingNames{{
    {codec::ContourEncoding::EdgeOnly, "edge"},
    {codec::ContourEncoding::InsideOutside, "inside_outside"},
    {codec::ContourEncoding::EdgePlusInsideOutside, "edge_inside_outside"},
}};
inline constexpr EnumNames<codec::TruncateMode, 2> kTruncateNames{{
    {codec::TruncateMode::UniformStride, "uniform_stride"},
    {codec::TruncateMode::Prefix, "prefix"},
}};
inline constexpr EnumNames<matching::Orientation, 2> kOrientationNames{{
    {matching::Orientation::AntiDiagonal, "anti_diagonal"},
    {matching::Orientation::Diagonal, "diagonal"},
}};
inline constexpr EnumNames<matching::ErosionMode, 2> kErosionNames{{
    {matching::ErosionMode::Masking, "masking"},
    {matching::ErosionMode::Pure, "pure"},
}};
inline constexpr EnumNames<matching::DilationMode, 2> kDilationNames{{
    {matching::DilationMode::Grayscale, "grayscale"},
    {matching::DilationMode::Binary, "binary"},
}};

template <class E, std::size_t N>
struct EnumField {
    E& value;
    const EnumNames<E, N>& names;
};

template <class E, std::size_t N>
EnumField<E, N> enum_field(E& v, const EnumNames<E, N>& names) {
    return {v, names};
}

namespace detail {

template <class T>
struct is_enum_field : std::false_type {};
template <class E, std::size_t N>
struct is_enum_field<EnumField<E, N>> : std::true_type {};

/// Writes every visited field into a JSON object.
struct Writer {
    json& out;
    template <class T>
    void operator()(const char* key, T&& field) {
        using U = std::decay_t<T>;
        if constexpr (is_enum_field<U>::value) {
            for (const auto& [e, name] : field.names) {
                if (e == field.value) out[key] = name;
            }
        } else {
            out[key] = field;
        }
    }
};

/// Reads the fields present in `in`; wrong types and unknown enum names throw.
struct Reader {
    const json& in;
    const std::string& section;
    std::size_t consumed = 0;

    template <class T>
    void operator()(const char* key, T&& field) {
        auto it = in.find(key);
        if (it == in.end()) return;
        ++consumed;
        using U = std::decay_t<T>;
        const std::string where = section + "." + key;
        if constexpr (is_enum_field<U>::value) {
            if (!it->is_string()) throw ConfigError(where + ": expected a string");
            for (const auto& [e, name] : field.names) {
                if (*it == name) {
                    field.value = e;
                    return;
                }
            }
            throw ConfigError(where + ": unknown value " + it->dump());
        } else if constexpr (std::is_same_v<U, bool>) {
            if (!it->is_boolean()) throw ConfigError(where + ": expected a boolean");
            field = it->template get<bool>();
        } else if constexpr (std::is_integral_v<U>) {
            if (!it->is_number_integer()) throw ConfigError(where + ": expected an integer");
            if constexpr (std::is_unsigned_v<U>) {
                if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0) {
                    throw ConfigError(where + ": must be >= 0");
                }
            }
            field = it->template get<U>();
        } else if constexpr (std::is_floating_point_v<U>) {
            if (!it->is_number()) throw ConfigError(where + ": expected a number");
            field = it->template get<U>();
        } else {
            if (!it->is_string()) throw ConfigError(where + ": expected a string");
            field = it->template get<U>();
        }
    }
};

} // namespace detail

template <class F>
void visit(tearing::GeneratorConfig& g, F&& f) {
    f("t_max", g.t_max);
    f("tau", g.tau);
    f("n_max", g.n_max);
    f("d_min", g.d_min);
    f("n_fourier", g.n_fourier);
    f("s1", g.s1);
    f("s2", g.s2);
    f("s3", g.s3);
    f("s4", g.s4);
    f("rho", g.rho);
    f("h_min", g.h_min);
    f("w_min", g.w_min);
    f("retries_per_iteration", g.retries_per_iteration);
    f("max_failed_iterations", g.max_failed_iterations);
    f("endpoint_attempts", g.endpoint_attempts);
    f("waypoint_attempts", g.waypoint_attempts);
    f("polyline_attempts", g.polyline_attempts);
    f("period_attempts", g.period_attempts);
    f("low_overlap_min", g.low_overlap_min);
    f("high_overlap_max", g.high_overlap_max);
}

template <class F>
void visit(nn::ModelConfig& m, F&& f) {
    f("d_feat", m.d_feat);
    f("d_search", m.d_search);
    f("gcn_layers", m.gcn_layers);
    f("ring_k", m.ring_k);
    f("attn_layers", m.attn_layers);
    f("conv_channels", m.conv_channels);
    f("ff_hidden", m.ff_hidden);
    f("patch_size", m.patch_size);
    f("texture_patch_size", m.texture_patch_size);
    f("contour_mode", enum_field(m.contour_mode, kContourEncodingNames));
    f("beta1", m.beta1);
    f("gamma", m.gamma);
    f("temperature", m.temperature);
    f("lr", m.lr);
    f("lr_floor_ratio", m.lr_floor_ratio);
    f("batch_match", m.batch_match);
    f("batch_search", m.batch_search);
    f("match_steps", m.match_steps);
    f("search_steps", m.search_steps);
    f("l_max_match", m.l_max_match);
    f("l_max_search", m.l_max_search);
    f("search_truncation", enum_field(m.search_truncation, kTruncateNames));
    f("divergence_factor", m.divergence_factor);
    f("divergence_patience", m.divergence_patience);
}

template <class F>
void visit(matching::MatchingConfig& c, F&& f) {
    f("eps", c.eps);
    f("orientation", enum_field(c.orientation, kOrientationNames));
    f("erosion", enum_field(c.erosion, kErosionNames));
    f("dilation", enum_field(c.dilation, kDilationNames));
    f("ransac_iterations", c.ransac_iterations);
    f("inlier_tol_px", c.inlier_tol_px);
    f("early_exit_ratio", c.early_exit_ratio);
}

template <class T>
json to_json_object(const T& value) {
    json out = json::object();
    T copy = value;
    visit(copy, detail::Writer{out});
    return out;
}

/// Overrides the fields of `value` present in `in`. Unknown keys throw.
template <class T>
void from_json_object(const json& in, T& value, const std::string& section) {
    if (!in.is_object()) throw ConfigError(section + ": expected an object");
    detail::Reader r{in, section};
    visit(value, r);
    if (r.consumed != in.size()) {
        const json known = to_json_object(value);
        for (const auto& [key, v] : in.items()) {
            if (!known.contains(key)) throw ConfigError(section + ": unknown key '" + key + "'");
        }
    }
}

enum class PairSource { Gt, Candidates, All };
enum class Matcher { Model, Oracle };
enum class SplitSel { Train, Val, Test, All };

inline constexpr EnumNames<PairSource, 3> kPairSourceNames{{
    {PairSource::Gt, "gt"},
    {PairSource::Candidates, "candidates"},
    {PairSource::All, "all"},
}};
inline constexpr EnumNames<Matcher, 2> kMatcherNames{{{Matcher::Model, "model"}, {Matcher::Oracle, "oracle"}}};
inline constexpr EnumNames<SplitSel, 4> kSplitNames{{
    {SplitSel::Train, "train"},
    {SplitSel::Val, "val"},
    {SplitSel::Test, "test"},
    {SplitSel::All, "all"},
}};

template <class E, std::size_t N>
E parse_enum(const std::string& s, const EnumNames<E, N>& names, const std::string& what) {
    for (const auto& [e, name] : names) {
        if (s == name) return e;
    }
    throw ConfigError(what + ": unknown value '" + s + "'");
}

template <class E, std::size_t N>
std::string enum_name(E e, const EnumNames<E, N>& names) {
    for (const auto& [v, name] : names) {
        if (v == e) return name;
    }
    return "unknown";
}

struct Paths {
    std::string images = "images";
    std::string dataset = "dataset";
    std::string run = "run";
};

template <class F>
void visit(Paths& p, F&& f) {
    f("images", p.images);
    f("dataset", p.dataset);
    f("run", p.run);
}

struct InferenceConfig {
    matching::MatchingConfig matching;
    std::size_t top_k = 20;
    PairSource pairs = PairSource::Gt;
    Matcher matcher = Matcher::Model;
    SplitSel split = SplitSel::Test;
    bool cap_correspondences = true;
    double tau_rr = 10.0;
    int render_samples = 0;
};

template <class F>
void visit(InferenceConfig& c, F&& f) {
    f("top_k", c.top_k);
    f("pairs", enum_field(c.pairs, kPairSourceNames));
    f("matcher", enum_field(c.matcher, kMatcherNames));
    f("split", enum_field(c.split, kSplitNames));
    f("cap_correspondences", c.cap_correspondences);
    f("tau_rr", c.tau_rr);
    f("render_samples", c.render_samples);
}

inline constexpr int kConfigVersion = 1;

struct RunConfig {
    Paths paths;
    tearing::GeneratorConfig generator;
    nn::ModelConfig model;
    InferenceConfig inference;
    std::uint64_t seed = 0;

    void validate() const {
        generator.validate();
        model.validate();
        inference.matching.validate();
        if (inference.top_k < 1) throw ConfigError("inference.top_k must be >= 1");
        if (!(inference.tau_rr > 0.0)) throw ConfigError("inference.tau_rr must be > 0");
        if (inference.render_samples < 0) throw ConfigError("inference.render_samples must be >= 0");
    }
};

inline json to_json(const RunConfig& c) {
    json inf = to_json_object(c.inference);
    inf["matching"] = to_json_object(c.inference.matching);
    return {{"format_version", kConfigVersion},
            {"seed", c.seed},
            {"paths", to_json_object(c.paths)},
            {"generator", to_json_object(c.generator)},
            {"model", to_json_object(c.model)},
            {"inference", std::move(inf)}};
}

/// Missing sections and keys keep their defaults. Validates before returning.
inline RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected an object");
    RunConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "format_version") {
            if (!v.is_number_integer() || v.get<int>() != kConfigVersion) {
                throw ConfigError("config: unsupported format_version " + v.dump());
            }
        } else if (key == "seed") {
            if (!v.is_number_unsigned()) throw ConfigError("config.seed: expected a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (key == "paths") {
            from_json_object(v, c.paths, "paths");
        } else if (key == "generator") {
            from_json_object(v, c.generator, "generator");
        } else if (key == "model") {
            from_json_object(v, c.model, "model");
        } else if (key == "inference") {
            json rest = v;
            if (rest.is_object() && rest.contains("matching")) {
                from_json_object(rest.at("matching"), c.inference.matching, "inference.matching");
                rest.erase("matching");
            }
            from_json_object(rest, c.inference, "inference");
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace fragmenta::config
