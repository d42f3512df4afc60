#pragma once

// Internal JSON helpers shared by fusion.cpp and pipeline.cpp.  Not
// installed; vendor headers stay out of the public interface.

#include <json.hpp>

#include "adlfusion/errors.hpp"
#include "adlfusion/fusion.hpp"

namespace adlfusion::detail {

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{
        {"pose_frames", cfg.pose_frames},
        {"feature_frames", cfg.feature_frames},
        {"joints", cfg.joints},
        {"grid_h", cfg.grid_h},
        {"grid_w", cfg.grid_w},
        {"channels", cfg.channels},
        {"groups", cfg.groups},
        {"heads", cfg.heads},
        {"classes", cfg.classes},
        {"gcn_hidden", cfg.gcn_hidden},
        {"gcn_out", cfg.gcn_out},
        {"mlp_hidden", cfg.mlp_hidden},
        {"attention_hidden", cfg.attention_hidden},
        {"attention_conv_kernel", cfg.attention_conv_kernel},
        {"classifier_hidden", cfg.classifier_hidden},
        {"dropout_rate", cfg.dropout_rate},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.pose_frames = j.value("pose_frames", cfg.pose_frames);
        cfg.feature_frames = j.value("feature_frames", cfg.feature_frames);
        cfg.joints = j.value("joints", cfg.joints);
        cfg.grid_h = j.value("grid_h", cfg.grid_h);
        cfg.grid_w = j.value("grid_w", cfg.grid_w);
        cfg.channels = j.value("channels", cfg.channels);
        cfg.groups = j.value("groups", cfg.groups);
        cfg.heads = j.value("heads", cfg.heads);
        cfg.classes = j.value("classes", cfg.classes);
        cfg.gcn_hidden = j.value("gcn_hidden", cfg.gcn_hidden);
        cfg.gcn_out = j.value("gcn_out", cfg.gcn_out);
        cfg.mlp_hidden = j.value("mlp_hidden", cfg.mlp_hidden);
        cfg.attention_hidden = j.value("attention_hidden", cfg.attention_hidden);
        cfg.attention_conv_kernel = j.value("attention_conv_kernel", cfg.attention_conv_kernel);
        if (j.contains("classifier_hidden")) {
            auto vec = j.at("classifier_hidden").get<std::vector<std::size_t>>();
            if (vec.size() != 2)
                throw ConfigError("model config: classifier_hidden must list two layer widths");
            cfg.classifier_hidden = {vec[0], vec[1]};
        }
        cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    return cfg;
}

} // namespace adlfusion::detail
