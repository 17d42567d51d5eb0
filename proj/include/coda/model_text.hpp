#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "coda/model.hpp"

namespace coda {

// Textual model description, e.g.
//
//   {
//     "name": "small4",
//     "input": [1, 16, 16],
//     "classes": 4,
//     "layers": [
//       {"conv": {"out": 12, "k": 3, "stride": 1, "pad": 1}},
//       {"batchnorm": {}},
//       {"relu": {}},
//       {"maxpool": {"k": 2, "stride": 2}},
//       {"flatten": {}},
//       {"fc": {"out": 4}}
//     ]
//   }
//
// Field names are fixed; unknown fields are rejected.

namespace detail {

inline int get_int(const nlohmann::json& o, const char* key, const std::string& where,
                   int fallback, bool required) {
    if (!o.contains(key)) {
        if (required)
            throw ValidationError(where + ": missing field '" + key + "'");
        return fallback;
    }
    const auto& v = o.at(key);
    if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
    if (!v.is_number_integer())
        throw ValidationError(where + ": field '" + key + "' must be an integer");
    return v.get<int>();
}

inline void reject_unknown(const nlohmann::json& o, std::set<std::string> allowed,
                           const std::string& where) {
    for (auto it = o.begin(); it != o.end(); ++it)
        if (!allowed.count(it.key()))
            throw ValidationError(where + ": unknown field '" + it.key() + "'");
}

} // namespace detail

inline ModelGraph parse_model_spec(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model spec is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("model spec: top level must be an object");
    detail::reject_unknown(j, {"name", "input", "classes", "layers"}, "model spec");
    for (const char* k : {"name", "input", "classes", "layers"})
        if (!j.contains(k))
            throw ValidationError(std::string("model spec: missing field '") + k + "'");

    ModelGraph g;
    g.name = j.at("name").get<std::string>();
    const auto& in = j.at("input");
    if (!in.is_array() || in.size() != 3)
        throw ValidationError("model spec: 'input' must be [C, H, W]");
    g.in_c = in[0].get<int>();
    g.in_h = in[1].get<int>();
    g.in_w = in[2].get<int>();
    g.classes = j.at("classes").get<int>();

    const auto& layers = j.at("layers");
    if (!layers.is_array())
        throw ValidationError("model spec: 'layers' must be a list");
    int idx = 0;
    for (const auto& entry : layers) {
        const std::string where = "layer " + std::to_string(idx++);
        if (!entry.is_object() || entry.size() != 1)
            throw ValidationError(where + ": each entry must be a single-key object");
        const std::string kind = entry.begin().key();
        const nlohmann::json& p = entry.begin().value();
        if (!p.is_object())
            throw ValidationError(where + ": parameters of '" + kind +
                                  "' must be an object");
        if (kind == "conv") {
            detail::reject_unknown(p, {"out", "k", "stride", "pad", "bias"}, where);
            ConvSpec c;
            c.out_channels = detail::get_int(p, "out", where, 0, true);
            c.kernel = detail::get_int(p, "k", where, 0, true);
            c.stride = detail::get_int(p, "stride", where, 1, false);
            c.pad = detail::get_int(p, "pad", where, 0, false);
            c.has_bias = detail::get_int(p, "bias", where, 1, false) != 0;
            if (c.out_channels < 1 || c.kernel < 1 || c.stride < 1 || c.pad < 0)
                throw ValidationError(where + ": invalid conv parameters");
            g.layers.emplace_back(c);
        } else if (kind == "batchnorm") {
            detail::reject_unknown(p, {}, where);
            g.layers.emplace_back(BatchNormSpec{});
        } else if (kind == "relu") {
            detail::reject_unknown(p, {}, where);
            g.layers.emplace_back(ReluSpec{});
        } else if (kind == "maxpool") {
            detail::reject_unknown(p, {"k", "stride", "pad"}, where);
            MaxPoolSpec m;
            m.kernel = detail::get_int(p, "k", where, 0, true);
            m.stride = detail::get_int(p, "stride", where, m.kernel, false);
            m.pad = detail::get_int(p, "pad", where, 0, false);
            if (m.kernel < 1 || m.stride < 1 || m.pad < 0)
                throw ValidationError(where + ": invalid maxpool parameters");
            g.layers.emplace_back(m);
        } else if (kind == "flatten") {
            detail::reject_unknown(p, {}, where);
            g.layers.emplace_back(FlattenSpec{});
        } else if (kind == "fc") {
            detail::reject_unknown(p, {"out"}, where);
            FcSpec f;
            f.out_features = detail::get_int(p, "out", where, 0, true);
            if (f.out_features < 1)
                throw ValidationError(where + ": invalid fc parameters");
            g.layers.emplace_back(f);
        } else {
            // Branch/merge topologies and anything else are rejected here.
            throw ValidationError(where + ": unknown layer kind '" + kind + "'");
        }
    }
    validate(g);
    return g;
}

// Loads either a binary model container or a textual spec (parameters are
// then initialized from `seed`).
inline ModelGraph load_model_any(const std::string& path, uint64_t seed = 0) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path);
    std::string content((std::istreambuf_iterator<char>(f)),
                        std::istreambuf_iterator<char>());
    if (content.size() >= 4 && content.compare(0, 4, "CMOD") == 0)
        return deserialize(std::vector<uint8_t>(content.begin(), content.end()));
    ModelGraph g = parse_model_spec(content);
    init_params(g, seed);
    return g;
}

} // namespace coda
