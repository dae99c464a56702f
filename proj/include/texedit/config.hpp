#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "guidance.hpp"
#include "io.hpp"
#include "optimize.hpp"

namespace texedit {

struct SceneConfig {
    std::string mesh;
    std::string kd;      // 8-bit sRGB
    std::string orm;     // 8-bit linear
    std::string normal;  // 8-bit linear
    std::string env;     // equirectangular .pfm or .png
    int env_res = 64;
    int texture_res = 256;  // for maps that are not given
    Vec3 default_kd{0.5, 0.5, 0.5};
    Vec3 default_orm{1.0, 0.5, 0.0};
    double env_constant = 1.0;
};

struct RenderConfig {
    int views = 8;
    int resolution = 512;
    double elevation = 20.0;  // degrees
    double radius = 2.5;
    double fov = 45.0;
    int lut_res = 64;
    int lut_samples = 512;
};

struct ProjectConfig {
    SceneConfig scene;
    GuidanceConfig guidance;
    OptimizeConfig optimize;
    RenderConfig render;
    std::string backend = "mock:null";
    std::string embedder = "mock:hash";
    std::string output = "out";
    std::string after;  // eval: directory holding edited textures/ and env/
    int timeout_ms = 120000;

    void validate() const {
        guidance.validate();
        optimize.validate();
        if (scene.env_res < 1 || (scene.env_res & (scene.env_res - 1)) != 0) throw ConfigError("env_res must be a power of two");
        if (scene.texture_res < 1) throw ConfigError("texture_res must be >= 1");
        if (render.views < 1 || render.resolution < 16) throw ConfigError("render needs >= 1 view at >= 16 pixels");
        if (!(render.radius > 0) || !(render.fov > 0 && render.fov < 180)) throw ConfigError("invalid render camera");
        if (output.empty()) throw ConfigError("output directory must not be empty");
    }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline void read_vec3(const nlohmann::json& j, const char* key, Vec3& dst) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 3) throw ConfigError(std::string("config key '") + key + "' must be a 3-element array");
    dst = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw ConfigError("unknown config key '" + where + "." + k + "'");
    }
}

}  // namespace detail

/// Reads the JSON project file. Relative scene paths resolve against the file's directory.
inline ProjectConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    using detail::read_opt;
    ProjectConfig c;
    detail::check_keys(j, {"scene", "prompts", "guidance", "optimize", "render", "backend", "embedder", "output", "after", "timeout_ms"}, "config");
    if (j.contains("scene")) {
        const auto& s = j["scene"];
        detail::check_keys(s, {"mesh", "kd", "orm", "normal", "env", "env_res", "texture_res", "default_kd", "default_orm", "env_constant"}, "scene");
        read_opt(s, "mesh", c.scene.mesh);
        read_opt(s, "kd", c.scene.kd);
        read_opt(s, "orm", c.scene.orm);
        read_opt(s, "normal", c.scene.normal);
        read_opt(s, "env", c.scene.env);
        read_opt(s, "env_res", c.scene.env_res);
        read_opt(s, "texture_res", c.scene.texture_res);
        detail::read_vec3(s, "default_kd", c.scene.default_kd);
        detail::read_vec3(s, "default_orm", c.scene.default_orm);
        read_opt(s, "env_constant", c.scene.env_constant);
        for (std::string* p : {&c.scene.mesh, &c.scene.kd, &c.scene.orm, &c.scene.normal, &c.scene.env})
            if (!p->empty() && std::filesystem::path(*p).is_relative() && !base.empty()) *p = (base / *p).string();
    }
    if (j.contains("prompts")) {
        const auto& p = j["prompts"];
        detail::check_keys(p, {"source", "target"}, "prompts");
        read_opt(p, "source", c.guidance.source_prompt);
        read_opt(p, "target", c.guidance.target_prompt);
    }
    if (j.contains("guidance")) {
        const auto& g = j["guidance"];
        detail::check_keys(g, {"omega", "weight", "t_min", "t_max", "adjust_period", "adjust", "use_sds"}, "guidance");
        read_opt(g, "omega", c.guidance.omega);
        if (g.contains("weight")) c.guidance.weight = weight_mode_from_string(g["weight"].get<std::string>());
        read_opt(g, "t_min", c.guidance.t_min);
        read_opt(g, "t_max", c.guidance.t_max);
        read_opt(g, "adjust_period", c.guidance.adjust_period);
        read_opt(g, "adjust", c.guidance.adjust);
        read_opt(g, "use_sds", c.guidance.use_sds);
    }
    if (j.contains("optimize")) {
        const auto& o = j["optimize"];
        detail::check_keys(o, {"iterations", "lr_texture", "lr_env", "beta1", "beta2", "adam_eps", "views_per_step", "resolution",
                               "radius_min", "radius_max", "elevation_min", "elevation_max", "azimuth_min", "azimuth_max", "fov",
                               "seed", "checkpoint_period", "train_env", "relight_adjust", "max_consecutive_skips",
                               "background", "prefilter_levels", "prefilter_samples"},
                           "optimize");
        auto& x = c.optimize;
        read_opt(o, "iterations", x.iterations);
        read_opt(o, "lr_texture", x.lr_texture);
        read_opt(o, "lr_env", x.lr_env);
        read_opt(o, "beta1", x.beta1);
        read_opt(o, "beta2", x.beta2);
        read_opt(o, "adam_eps", x.adam_eps);
        read_opt(o, "views_per_step", x.views_per_step);
        read_opt(o, "resolution", x.resolution);
        read_opt(o, "radius_min", x.radius_min);
        read_opt(o, "radius_max", x.radius_max);
        read_opt(o, "elevation_min", x.elevation_min);
        read_opt(o, "elevation_max", x.elevation_max);
        read_opt(o, "azimuth_min", x.azimuth_min);
        read_opt(o, "azimuth_max", x.azimuth_max);
        read_opt(o, "fov", x.fov);
        read_opt(o, "seed", x.seed);
        read_opt(o, "checkpoint_period", x.checkpoint_period);
        read_opt(o, "train_env", x.train_env);
        read_opt(o, "relight_adjust", x.relight_adjust);
        read_opt(o, "max_consecutive_skips", x.max_consecutive_skips);
        detail::read_vec3(o, "background", x.background);
        read_opt(o, "prefilter_levels", x.prefilter.levels);
        read_opt(o, "prefilter_samples", x.prefilter.specular_samples);
    }
    if (j.contains("render")) {
        const auto& r = j["render"];
        detail::check_keys(r, {"views", "resolution", "elevation", "radius", "fov", "lut_res", "lut_samples"}, "render");
        read_opt(r, "views", c.render.views);
        read_opt(r, "resolution", c.render.resolution);
        read_opt(r, "elevation", c.render.elevation);
        read_opt(r, "radius", c.render.radius);
        read_opt(r, "fov", c.render.fov);
        read_opt(r, "lut_res", c.render.lut_res);
        read_opt(r, "lut_samples", c.render.lut_samples);
    }
    read_opt(j, "backend", c.backend);
    read_opt(j, "embedder", c.embedder);
    read_opt(j, "output", c.output);
    read_opt(j, "after", c.after);
    read_opt(j, "timeout_ms", c.timeout_ms);
    return c;
}

inline ProjectConfig load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    } catch (const AssetError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(j, path.parent_path());
}

}  // namespace texedit
