#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fcbnet/config.hpp"

namespace fcbnet {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw std::invalid_argument("unknown config key \"" + key + "\" in " + where);
    }
}

template <typename T>
void read(const json& obj, const char* key, T& dst) {
    if (obj.contains(key)) dst = obj.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json root = json::parse(json_text);
    reject_unknown(root, {"model", "train", "data"}, "top level");
    RunConfig rc;

    if (root.contains("model")) {
        const json& m = root.at("model");
        reject_unknown(m, {"backbone", "fcb", "decoder", "num_classes", "use_fcb"}, "model");
        if (m.contains("backbone")) {
            const json& b = m.at("backbone");
            reject_unknown(b, {"variant", "in_channels", "frozen", "weights"}, "model.backbone");
            read(b, "variant", rc.model.backbone.variant);
            read(b, "in_channels", rc.model.backbone.in_channels);
            read(b, "frozen", rc.model.backbone.frozen);
            if (b.contains("weights") && !b.at("weights").is_null())
                rc.model.backbone.weights_source = b.at("weights").get<std::string>();
        }
        if (m.contains("fcb")) {
            const json& f = m.at("fcb");
            reject_unknown(f, {"alpha_init", "ratio", "c_min", "kernel", "preferred_groups"},
                           "model.fcb");
            read(f, "alpha_init", rc.model.fcb.alpha_init);
            read(f, "ratio", rc.model.fcb.bottleneck_ratio);
            read(f, "c_min", rc.model.fcb.c_min);
            read(f, "kernel", rc.model.fcb.dw_kernel);
            read(f, "preferred_groups", rc.model.fcb.preferred_groups);
        }
        if (m.contains("decoder")) {
            const json& d = m.at("decoder");
            reject_unknown(d, {"feature_dim", "refine_depth", "dropout"}, "model.decoder");
            read(d, "feature_dim", rc.model.decoder.feature_dim);
            read(d, "refine_depth", rc.model.decoder.refine_depth);
            read(d, "dropout", rc.model.decoder.dropout_rate);
        }
        read(m, "num_classes", rc.model.num_classes);
        read(m, "use_fcb", rc.model.use_fcb);
    }
    if (root.contains("train")) {
        const json& t = root.at("train");
        reject_unknown(t,
                       {"max_lr", "epochs", "batch_size", "weight_decay", "pct_start",
                        "div_factor", "final_div_factor", "beta1", "beta2", "seed",
                        "cache_features", "class_weights"},
                       "train");
        read(t, "max_lr", rc.train.max_lr);
        read(t, "epochs", rc.train.epochs);
        read(t, "batch_size", rc.train.batch_size);
        read(t, "weight_decay", rc.train.weight_decay);
        read(t, "pct_start", rc.train.pct_start);
        read(t, "div_factor", rc.train.div_factor);
        read(t, "final_div_factor", rc.train.final_div_factor);
        read(t, "beta1", rc.train.beta1);
        read(t, "beta2", rc.train.beta2);
        read(t, "seed", rc.train.seed);
        read(t, "cache_features", rc.train.cache_features);
        if (t.contains("class_weights") && !t.at("class_weights").is_null())
            rc.train.class_weights = t.at("class_weights").get<std::vector<float>>();
    }
    if (root.contains("data")) {
        const json& d = root.at("data");
        reject_unknown(d, {"manifest", "out_dir"}, "data");
        read(d, "manifest", rc.manifest);
        read(d, "out_dir", rc.out_dir);
    }
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

namespace {
json model_json(const FcbNetConfig& c) {
    return json{
        {"backbone",
         {{"variant", c.backbone.variant},
          {"in_channels", c.backbone.in_channels},
          {"frozen", c.backbone.frozen},
          {"weights", c.backbone.weights_source ? json(*c.backbone.weights_source) : json()}}},
        {"fcb",
         {{"alpha_init", c.fcb.alpha_init},
          {"ratio", c.fcb.bottleneck_ratio},
          {"c_min", c.fcb.c_min},
          {"kernel", c.fcb.dw_kernel},
          {"preferred_groups", c.fcb.preferred_groups}}},
        {"decoder",
         {{"feature_dim", c.decoder.feature_dim},
          {"refine_depth", c.decoder.refine_depth},
          {"dropout", c.decoder.dropout_rate}}},
        {"num_classes", c.num_classes},
        {"use_fcb", c.use_fcb}};
}
}  // namespace

std::string run_config_json(const RunConfig& rc) {
    json t = {{"max_lr", rc.train.max_lr},
              {"epochs", rc.train.epochs},
              {"batch_size", rc.train.batch_size},
              {"weight_decay", rc.train.weight_decay},
              {"pct_start", rc.train.pct_start},
              {"div_factor", rc.train.div_factor},
              {"final_div_factor", rc.train.final_div_factor},
              {"beta1", rc.train.beta1},
              {"beta2", rc.train.beta2},
              {"seed", rc.train.seed},
              {"cache_features", rc.train.cache_features},
              {"class_weights",
               rc.train.class_weights ? json(*rc.train.class_weights) : json()}};
    json root = {{"model", model_json(rc.model)},
                 {"train", t},
                 {"data", {{"manifest", rc.manifest}, {"out_dir", rc.out_dir}}}};
    return root.dump(2);
}

std::string canonical_model_json(const FcbNetConfig& config) {
    return model_json(config).dump();  // object keys serialize sorted
}

uint64_t model_fingerprint(const FcbNetConfig& config) {
    const std::string s = canonical_model_json(config);
    uint64_t h = 14695981039346656037ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace fcbnet
