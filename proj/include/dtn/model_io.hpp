#pragma once

/// @file model_io.hpp JSON dump of an architecture plus its parameters.
/// Doubles are written in shortest round-trip form, so load(save(m)) is exact.

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "dtn/error.hpp"
#include "dtn/nn.hpp"

namespace dtn {

inline constexpr int kModelFormatVersion = 1;

struct Model {
    Architecture specs;
    NetworkParams params;
};

inline nlohmann::ordered_json model_to_json(const Architecture& specs, const NetworkParams& params) {
    check_params(params, specs);
    nlohmann::ordered_json j;
    j["format"] = "dtn-model";
    j["format_version"] = kModelFormatVersion;
    auto& layers = j["layers"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < specs.size(); ++k) {
        nlohmann::ordered_json layer;
        layer["input_dim"] = specs[k].input_dim;
        layer["output_dim"] = specs[k].output_dim;
        layer["activation"] = to_string(specs[k].activation);
        auto& rows = layer["weights"] = nlohmann::ordered_json::array();
        for (Index i = 0; i < params.weights[k].rows(); ++i) {
            auto row = nlohmann::ordered_json::array();
            for (Index c = 0; c < params.weights[k].cols(); ++c) row.push_back(params.weights[k](i, c));
            rows.push_back(std::move(row));
        }
        auto& bias = layer["bias"] = nlohmann::ordered_json::array();
        for (Index i = 0; i < params.biases[k].size(); ++i) bias.push_back(params.biases[k](i));
        layers.push_back(std::move(layer));
    }
    return j;
}

inline Model model_from_json(const nlohmann::ordered_json& j) {
    try {
        if (j.at("format").get<std::string>() != "dtn-model") throw ParseError("model: unexpected format tag");
        int version = j.at("format_version").get<int>();
        if (version != kModelFormatVersion)
            throw ParseError("model: unsupported format_version " + std::to_string(version));
        Model m;
        for (const auto& layer : j.at("layers")) {
            LayerSpec s{layer.at("input_dim").get<Index>(), layer.at("output_dim").get<Index>(),
                        activation_from_string(layer.at("activation").get<std::string>())};
            const auto& rows = layer.at("weights");
            const auto& bias = layer.at("bias");
            if (static_cast<Index>(rows.size()) != s.output_dim || static_cast<Index>(bias.size()) != s.output_dim)
                throw ParseError("model: layer " + std::to_string(m.specs.size()) + " has mis-sized parameters");
            MatrixXd w(s.output_dim, s.input_dim);
            VectorXd b(s.output_dim);
            for (Index i = 0; i < s.output_dim; ++i) {
                const auto& row = rows[static_cast<std::size_t>(i)];
                if (static_cast<Index>(row.size()) != s.input_dim)
                    throw ParseError("model: layer " + std::to_string(m.specs.size()) + " row " + std::to_string(i) +
                                     " has the wrong width");
                for (Index c = 0; c < s.input_dim; ++c) w(i, c) = row[static_cast<std::size_t>(c)].get<double>();
                b(i) = bias[static_cast<std::size_t>(i)].get<double>();
            }
            m.specs.push_back(s);
            m.params.weights.push_back(std::move(w));
            m.params.biases.push_back(std::move(b));
        }
        validate(m.specs);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
}

inline void save_model(const std::filesystem::path& path, const Architecture& specs, const NetworkParams& params) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path.string() + "'");
    out << model_to_json(specs, params).dump(1) << '\n';
}

inline Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace dtn
