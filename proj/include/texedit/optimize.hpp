#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffrender.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "guidance.hpp"
#include "io.hpp"
#include "shading.hpp"

namespace texedit {

enum class Mode { edit, relight };

struct OptimizeConfig {
    int iterations = 600;
    double lr_texture = 0.01;
    double lr_env = 0.02;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int views_per_step = 1;
    int resolution = 512;
    double radius_min = 2.5;
    double radius_max = 3.0;
    double elevation_min = -15.0;  // degrees
    double elevation_max = 45.0;
    double azimuth_min = 0.0;  // degrees, half-open range
    double azimuth_max = 360.0;
    double fov = 45.0;  // vertical, degrees
    std::uint64_t seed = 0;
    int checkpoint_period = 0;  // 0 disables
    Mode mode = Mode::edit;
    bool train_env = false;        // co-train the environment while editing textures
    bool relight_adjust = false;   // direction adjustment while relighting
    int max_consecutive_skips = 10;
    Vec3 background{0, 0, 0};
    PrefilterSettings prefilter;

    void validate() const {
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (!(lr_texture > 0) || !(lr_env > 0)) throw ConfigError("learning rates must be positive");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) throw ConfigError("invalid Adam hyperparameters");
        if (views_per_step < 1) throw ConfigError("views per step must be >= 1");
        if (resolution < 16) throw ConfigError("render resolution must be >= 16");
        if (!(radius_min > 0 && radius_max >= radius_min)) throw ConfigError("invalid camera radius range");
        if (!(elevation_min <= elevation_max && elevation_min >= -90 && elevation_max <= 90)) throw ConfigError("invalid elevation range");
        if (!(azimuth_min <= azimuth_max)) throw ConfigError("invalid azimuth range");
        if (!(fov > 0 && fov < 180)) throw ConfigError("fov must lie in (0, 180) degrees");
        if (checkpoint_period < 0) throw ConfigError("checkpoint period must be >= 0");
        if (max_consecutive_skips < 0) throw ConfigError("max consecutive skips must be >= 0");
    }
};

inline double radians(double deg) { return deg * kPi / 180.0; }

// ---------------------------------------------------------------------------
// Camera sampling
// ---------------------------------------------------------------------------

struct CameraSample {
    Camera camera;
    double azimuth = 0;    // radians
    double elevation = 0;  // radians
    double radius = 0;
};

namespace detail {
template <class Rng>
double uniform_in(Rng& rng, double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}
}  // namespace detail

/// Orbit camera with uniform azimuth, elevation and radius, looking at `center`.
template <class Rng>
CameraSample sample_camera(Rng& rng, const OptimizeConfig& cfg, const Vec3& center) {
    CameraSample s;
    s.azimuth = detail::uniform_in(rng, radians(cfg.azimuth_min), radians(cfg.azimuth_max));
    s.elevation = detail::uniform_in(rng, radians(cfg.elevation_min), radians(cfg.elevation_max));
    s.radius = detail::uniform_in(rng, cfg.radius_min, cfg.radius_max);
    s.camera = orbit_camera(center, s.radius, s.azimuth, s.elevation, radians(cfg.fov), cfg.resolution, cfg.resolution);
    return s;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    GradientSet m;
    GradientSet v;
    std::int64_t step = 0;

    static AdamState zeros_like(const ParameterSet& p) {
        AdamState s;
        s.m = GradientSet::zeros_like(p.materials, p.env.radiance());
        s.v = s.m;
        return s;
    }
};

namespace detail {

inline void adam_update(std::vector<double>& param, std::vector<double>& m, std::vector<double>& v,
                        const std::vector<double>& g, double lr, const OptimizeConfig& cfg, std::int64_t step) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
}

}  // namespace detail

/// One Adam step on the trainable tensors, then projection onto the valid ranges:
/// material texels to [0, 1], environment radiance to [0, inf).
inline void adam_step(ParameterSet& p, const GradientSet& g, AdamState& s, const OptimizeConfig& cfg) {
    ++s.step;
    const Trainable& tr = p.trainable;
    auto clamp01 = [](std::vector<double>& d) {
        for (double& x : d) x = std::clamp(x, 0.0, 1.0);
    };
    if (tr.kd) {
        detail::adam_update(p.materials.kd.data, s.m.kd.data, s.v.kd.data, g.kd.data, cfg.lr_texture, cfg, s.step);
        clamp01(p.materials.kd.data);
    }
    if (tr.orm) {
        detail::adam_update(p.materials.orm.data, s.m.orm.data, s.v.orm.data, g.orm.data, cfg.lr_texture, cfg, s.step);
        clamp01(p.materials.orm.data);
    }
    if (tr.normal) {
        detail::adam_update(p.materials.normal.data, s.m.normal.data, s.v.normal.data, g.normal.data, cfg.lr_texture, cfg, s.step);
        clamp01(p.materials.normal.data);
    }
    if (tr.env) {
        CubeImage& env = p.env.texels();
        detail::adam_update(env.data, s.m.env.data, s.v.env.data, g.env.data, cfg.lr_env, cfg, s.step);
        for (double& x : env.data) x = std::max(x, 0.0);
    }
}

// ---------------------------------------------------------------------------
// Log
// ---------------------------------------------------------------------------

struct IterationRecord {
    int iteration = 0;
    int t = 0;
    double cotangent_norm = 0;
    double grad_kd = 0, grad_orm = 0, grad_normal = 0, grad_env = 0;
    std::string source_prompt;
    double azimuth = 0, elevation = 0, radius = 0;
    double wall_time = 0;
    bool skipped = false;
};

struct TrainLog {
    std::vector<IterationRecord> records;
    std::vector<AdjustmentEvent> adjustments;
    std::vector<std::string> warnings;

    /// Newline-delimited JSON, one object per record.
    void write_ndjson(std::ostream& os) const {
        using nlohmann::json;
        for (const auto& r : records) {
            json j = {{"type", "iteration"}, {"iteration", r.iteration}, {"t", r.t}, {"cotangent_norm", r.cotangent_norm},
                      {"grad_norm", {{"kd", r.grad_kd}, {"orm", r.grad_orm}, {"normal", r.grad_normal}, {"env", r.grad_env}}},
                      {"source_prompt", r.source_prompt},
                      {"camera", {{"azimuth", r.azimuth}, {"elevation", r.elevation}, {"radius", r.radius}}},
                      {"wall_time", r.wall_time}, {"skipped", r.skipped}};
            os << j.dump() << '\n';
        }
        for (const auto& e : adjustments)
            os << json{{"type", "adjustment"}, {"iteration", e.iteration}, {"from", e.from}, {"to", e.to}}.dump() << '\n';
        for (const auto& w : warnings) os << json{{"type", "warning"}, {"message", w}}.dump() << '\n';
    }
};

// ---------------------------------------------------------------------------
// Scene, checkpoints
// ---------------------------------------------------------------------------

struct Scene {
    Mesh mesh;
    ParameterSet params;
};

/// Lighting tables; missing or stale entries are rebuilt on demand.
struct Lighting {
    std::shared_ptr<const BrdfLut> lut;
    std::shared_ptr<const PrefilteredEnv> prefiltered;
};

struct Checkpoint {
    ParameterSet params;
    AdamState adam;
    std::string rng_state;
    int iteration = 0;  // last completed iteration
    std::string source_prompt;
    int consecutive_skips = 0;

    io::Container to_container() const {
        io::Container c;
        c.put("kd", params.materials.kd);
        c.put("orm", params.materials.orm);
        c.put("normal", params.materials.normal);
        c.put("env", io::cube_to_strip(params.env.radiance()));
        c.put("adam.m.kd", adam.m.kd);
        c.put("adam.m.orm", adam.m.orm);
        c.put("adam.m.normal", adam.m.normal);
        c.put("adam.m.env", io::cube_to_strip(adam.m.env));
        c.put("adam.v.kd", adam.v.kd);
        c.put("adam.v.orm", adam.v.orm);
        c.put("adam.v.normal", adam.v.normal);
        c.put("adam.v.env", io::cube_to_strip(adam.v.env));
        c.put_string("adam.step", std::to_string(adam.step));
        c.put_string("rng", rng_state);
        c.put_string("iteration", std::to_string(iteration));
        c.put_string("source_prompt", source_prompt);
        c.put_string("consecutive_skips", std::to_string(consecutive_skips));
        const Trainable& t = params.trainable;
        c.put_string("trainable", std::string{t.kd ? '1' : '0', t.orm ? '1' : '0', t.normal ? '1' : '0', t.env ? '1' : '0'});
        return c;
    }

    static Checkpoint from_container(const io::Container& c) {
        Checkpoint k;
        k.params.materials.kd = c.image("kd");
        k.params.materials.orm = c.image("orm");
        k.params.materials.normal = c.image("normal");
        k.params.env = EnvironmentMap(io::strip_to_cube(c.image("env")));
        k.adam.m.kd = c.image("adam.m.kd");
        k.adam.m.orm = c.image("adam.m.orm");
        k.adam.m.normal = c.image("adam.m.normal");
        k.adam.m.env = io::strip_to_cube(c.image("adam.m.env"));
        k.adam.v.kd = c.image("adam.v.kd");
        k.adam.v.orm = c.image("adam.v.orm");
        k.adam.v.normal = c.image("adam.v.normal");
        k.adam.v.env = io::strip_to_cube(c.image("adam.v.env"));
        try {
            k.adam.step = std::stoll(c.string("adam.step"));
            k.iteration = std::stoi(c.string("iteration"));
            k.consecutive_skips = std::stoi(c.string("consecutive_skips"));
        } catch (const std::logic_error&) {
            throw AssetError("checkpoint has malformed counters");
        }
        k.rng_state = c.string("rng");
        k.source_prompt = c.string("source_prompt");
        const std::string& t = c.string("trainable");
        if (t.size() != 4) throw AssetError("checkpoint has malformed trainable flags");
        k.params.trainable = {t[0] == '1', t[1] == '1', t[2] == '1', t[3] == '1'};
        return k;
    }
};

struct OptimizeHooks {
    std::function<void(const IterationRecord&)> on_step;
    std::function<void(const Checkpoint&)> on_checkpoint;
    const Checkpoint* resume = nullptr;
};

struct OptimizeResult {
    ParameterSet params;
    TrainLog log;
    std::string source_prompt;
};

// ---------------------------------------------------------------------------
// Loop
// ---------------------------------------------------------------------------

namespace detail {

inline void ensure_lighting(Lighting& lights, const EnvironmentMap& env, const OptimizeConfig& cfg) {
    if (!lights.lut) lights.lut = std::make_shared<const BrdfLut>(precompute_brdf_lut(64, 512, cfg.prefilter.seed));
    if (!lights.prefiltered || !lights.prefiltered->fresh_for(env))
        lights.prefiltered = std::make_shared<const PrefilteredEnv>(build_prefiltered(env, cfg.prefilter));
}

inline double norm_of(const std::vector<double>& v) { return l2_norm(v); }

}  // namespace detail

/// Render, guidance cotangent, backward, Adam step, projection, and periodic source-prompt adjustment.
/// Deterministic for a fixed seed and deterministic predictor/captioner.
inline OptimizeResult optimize(const Scene& scene, const OptimizeConfig& cfg, const GuidanceConfig& gcfg,
                               NoisePredictor& predictor, Captioner* captioner, Lighting lights = {},
                               const OptimizeHooks& hooks = {}) {
    cfg.validate();
    gcfg.validate();
    scene.mesh.validate();
    if (gcfg.target_prompt.empty()) throw ConfigError("target prompt must not be empty");
    if (!gcfg.use_sds && gcfg.source_prompt.empty()) throw ConfigError("source prompt must not be empty");

    OptimizeResult res;
    res.params = scene.params;
    ParameterSet& p = res.params;
    p.validate();
    AdamState adam = AdamState::zeros_like(p);
    std::mt19937_64 rng(cfg.seed);
    std::string y_src = gcfg.source_prompt;
    int start = 1;
    int skips = 0;
    if (hooks.resume) {
        const Checkpoint& k = *hooks.resume;
        p = k.params;
        adam = k.adam;
        std::istringstream(k.rng_state) >> rng;
        y_src = k.source_prompt;
        start = k.iteration + 1;
        skips = k.consecutive_skips;
    }

    const DiffusionSchedule sched = DiffusionSchedule::linear();
    const Vec3 center = scene.mesh.centroid();
    RenderOptions ropt;
    ropt.background = cfg.background;
    detail::ensure_lighting(lights, p.env, cfg);
    const auto t0 = std::chrono::steady_clock::now();

    for (int it = start; it <= cfg.iterations; ++it) {
        IterationRecord rec;
        rec.iteration = it;
        GradientSet grads = GradientSet::zeros_like(p.materials, p.env.radiance());
        Image last_view;
        double cot_sq = 0;
        for (int view = 0; view < cfg.views_per_step; ++view) {
            const CameraSample cs = sample_camera(rng, cfg, center);
            const RenderOutput out = render(scene.mesh, cs.camera, p.materials, p.env, lights.prefiltered, lights.lut, ropt);
            Image x = tonemap(out.image);
            const int t = sample_timestep(rng, gcfg, sched);
            const Tensor eps = sample_noise(rng, predictor.latent_shape(x));
            const Image cot = gcfg.use_sds ? sds_gradient(predictor, x, gcfg.target_prompt, t, eps, gcfg, sched)
                                           : rdl_gradient(predictor, x, gcfg.target_prompt, y_src, t, eps, gcfg, sched);
            for (double c : cot.data) cot_sq += c * c;
            grads += backward(out, tonemap_backward(out.image, cot), p.trainable);
            rec.t = t;
            rec.azimuth = cs.azimuth;
            rec.elevation = cs.elevation;
            rec.radius = cs.radius;
            last_view = std::move(x);
        }
        if (cfg.views_per_step > 1) grads *= 1.0 / cfg.views_per_step;
        rec.cotangent_norm = std::sqrt(cot_sq);
        rec.grad_kd = detail::norm_of(grads.kd.data);
        rec.grad_orm = detail::norm_of(grads.orm.data);
        rec.grad_normal = detail::norm_of(grads.normal.data);
        rec.grad_env = detail::norm_of(grads.env.data);

        if (!grads.finite() || !std::isfinite(rec.cotangent_norm)) {
            rec.skipped = true;
            res.log.warnings.push_back("iteration " + std::to_string(it) + ": non-finite gradient, step skipped");
            if (++skips > cfg.max_consecutive_skips)
                throw DivergedError("more than " + std::to_string(cfg.max_consecutive_skips) +
                                    " consecutive non-finite gradients (last at iteration " + std::to_string(it) + ")");
        } else {
            skips = 0;
            adam_step(p, grads, adam, cfg);
            if (p.trainable.env) detail::ensure_lighting(lights, p.env, cfg);
        }

        if (captioner && gcfg.adjust) {
            const AdjustResult ar = adjust_source_prompt(*captioner, last_view, it, gcfg, y_src);
            if (ar.adjusted) res.log.adjustments.push_back({it, y_src, ar.prompt});
            if (!ar.warning.empty()) res.log.warnings.push_back("iteration " + std::to_string(it) + ": " + ar.warning);
            y_src = ar.prompt;
        }
        rec.source_prompt = y_src;
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.records.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
        if (hooks.on_checkpoint && cfg.checkpoint_period > 0 && it % cfg.checkpoint_period == 0) {
            Checkpoint k;
            k.params = p;
            k.adam = adam;
            std::ostringstream ss;
            ss << rng;
            k.rng_state = ss.str();
            k.iteration = it;
            k.source_prompt = y_src;
            k.consecutive_skips = skips;
            hooks.on_checkpoint(k);
        }
    }
    res.source_prompt = y_src;
    return res;
}

/// Environment-only optimisation with frozen materials.
inline OptimizeResult relight(const Scene& scene, const OptimizeConfig& cfg, const GuidanceConfig& gcfg,
                              NoisePredictor& predictor, Captioner* captioner = nullptr, Lighting lights = {},
                              const OptimizeHooks& hooks = {}) {
    Scene s = scene;
    s.params.trainable = Trainable::env_only();
    GuidanceConfig g = gcfg;
    g.adjust = gcfg.adjust && cfg.relight_adjust;
    OptimizeConfig c = cfg;
    c.mode = Mode::relight;
    return optimize(s, c, g, predictor, captioner, std::move(lights), hooks);
}

/// Texture editing: materials trainable, environment only when co-training is enabled.
inline OptimizeResult edit(const Scene& scene, const OptimizeConfig& cfg, const GuidanceConfig& gcfg,
                           NoisePredictor& predictor, Captioner* captioner = nullptr, Lighting lights = {},
                           const OptimizeHooks& hooks = {}) {
    Scene s = scene;
    s.params.trainable = Trainable::materials_only();
    s.params.trainable.env = cfg.train_env;
    OptimizeConfig c = cfg;
    c.mode = Mode::edit;
    return optimize(s, c, gcfg, predictor, captioner, std::move(lights), hooks);
}

}  // namespace texedit
