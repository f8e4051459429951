#pragma once

// Model files: JSON with the architecture description, named parameter
// arrays (decimal, round-trip precision), Adam hyperparameters and the
// training seed. Loading rebuilds the graph from the stored description, so
// a file stands alone without the variant table.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "strokeuq/adam.hpp"
#include "strokeuq/errors.hpp"
#include "strokeuq/nn.hpp"
#include "strokeuq/text.hpp"

namespace strokeuq::nn {

inline constexpr std::string_view kModelFormat = "strokeuq.model/1";

struct ModelFile {
    std::string variant;  // aggregation variant name; "max" carries no graph
    NetworkGraph graph;
    ParameterStore params;
    AdamConfig adam;
    uint64_t seed = 0;
    bool has_network = true;
};

namespace detail {

inline std::string kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::relu: return "relu";
        case LayerKind::dropout: return "dropout";
        case LayerKind::global_max_pool: return "global_max_pool";
        case LayerKind::softmax: return "softmax";
        case LayerKind::concat: return "concat";
    }
    throw ValidationError("unknown layer kind");
}

inline LayerKind kind_from_name(const std::string& s) {
    if (s == "dense") return LayerKind::dense;
    if (s == "conv1d") return LayerKind::conv1d;
    if (s == "relu") return LayerKind::relu;
    if (s == "dropout") return LayerKind::dropout;
    if (s == "global_max_pool") return LayerKind::global_max_pool;
    if (s == "softmax") return LayerKind::softmax;
    if (s == "concat") return LayerKind::concat;
    throw ValidationError("unknown layer kind: " + s);
}

inline nlohmann::json layers_to_json(const std::vector<LayerSpec>& layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : layers) {
        nlohmann::json j{{"kind", kind_name(l.kind)}};
        if (l.kind == LayerKind::dense) j["units"] = l.units;
        if (l.kind == LayerKind::conv1d) {
            j["filters"] = l.filters;
            j["kernel"] = l.kernel;
        }
        if (l.kind == LayerKind::dropout) j["rate"] = l.rate;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<LayerSpec> layers_from_json(const nlohmann::json& arr) {
    std::vector<LayerSpec> out;
    for (const auto& j : arr) {
        LayerSpec l;
        l.kind = kind_from_name(j.at("kind").get<std::string>());
        if (l.kind == LayerKind::dense) l.units = j.at("units").get<int>();
        if (l.kind == LayerKind::conv1d) {
            l.filters = j.at("filters").get<int>();
            l.kernel = j.at("kernel").get<int>();
        }
        if (l.kind == LayerKind::dropout) l.rate = j.at("rate").get<double>();
        out.push_back(l);
    }
    return out;
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelFile& model) {
    nlohmann::json j;
    j["format"] = kModelFormat;
    j["variant"] = model.variant;
    j["seed"] = model.seed;
    j["adam"] = {{"lr", model.adam.lr},
                 {"beta1", model.adam.beta1},
                 {"beta2", model.adam.beta2},
                 {"eps", model.adam.eps}};
    if (model.has_network) {
        const auto& g = model.graph;
        j["graph"] = {{"input", g.input_kind == InputKind::sequence ? "sequence" : "vector"},
                      {"input_width", g.input_width},
                      {"pathways", g.pathway_count},
                      {"shared", g.shared_pathway_weights},
                      {"pathway_layers", detail::layers_to_json(g.pathway_layers)},
                      {"head_layers", detail::layers_to_json(g.head_layers)}};
        nlohmann::json params = nlohmann::json::array();
        for (const auto& e : model.params.entries) {
            params.push_back(
                {{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}, {"value", e.value}});
        }
        j["params"] = std::move(params);
    }
    return j;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
    if (j.at("format").get<std::string>() != kModelFormat) {
        throw ValidationError("model file: unsupported format");
    }
    ModelFile m;
    m.variant = j.at("variant").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    const auto& a = j.at("adam");
    m.adam.lr = a.at("lr").get<double>();
    m.adam.beta1 = a.at("beta1").get<double>();
    m.adam.beta2 = a.at("beta2").get<double>();
    m.adam.eps = a.at("eps").get<double>();
    m.has_network = j.contains("graph");
    if (m.has_network) {
        const auto& g = j.at("graph");
        m.graph.input_kind = g.at("input").get<std::string>() == "sequence"
                                 ? InputKind::sequence
                                 : InputKind::vector_per_pathway;
        m.graph.input_width = g.at("input_width").get<int>();
        m.graph.pathway_count = g.at("pathways").get<int>();
        m.graph.shared_pathway_weights = g.at("shared").get<bool>();
        m.graph.pathway_layers = detail::layers_from_json(g.at("pathway_layers"));
        m.graph.head_layers = detail::layers_from_json(g.at("head_layers"));
        validate_graph(m.graph);
        for (const auto& p : j.at("params")) {
            auto& e = m.params.add(p.at("name").get<std::string>(), p.at("rows").get<int>(),
                                   p.at("cols").get<int>());
            const auto vals = p.at("value").get<std::vector<double>>();
            if (vals.size() != e.value.size()) {
                throw ValidationError("model file: parameter " + e.name + " has wrong size");
            }
            e.value = vals;
        }
    }
    return m;
}

inline void save_model(const ModelFile& model, const std::string& path) {
    atomic_write_file(path, model_to_json(model).dump(2) + "\n");
}

inline ModelFile load_model(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("model file " + path + ": " + e.what());
    }
    try {
        return model_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("model file " + path + ": " + e.what());
    }
}

}  // namespace strokeuq::nn
