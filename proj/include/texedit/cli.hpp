#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "cubemap.hpp"
#include "diffrender.hpp"
#include "eval.hpp"
#include "geometry.hpp"
#include "guidance.hpp"
#include "io.hpp"
#include "optimize.hpp"
#include "shading.hpp"
#include "sidecar.hpp"

namespace texedit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct OutputLayout {
    fs::path root, textures, env, renders, checkpoints, log, cache;

    explicit OutputLayout(const fs::path& r)
        : root(r), textures(r / "textures"), env(r / "env"), renders(r / "renders"), checkpoints(r / "checkpoints"),
          log(r / "log"), cache(r / "cache") {}

    void create() const {
        for (const auto* d : {&textures, &env, &renders, &checkpoints, &log, &cache}) fs::create_directories(*d);
    }
};

// ---------------------------------------------------------------------------
// Scene assets
// ---------------------------------------------------------------------------

inline Image load_or_fill(const std::string& path, io::Encoding enc, int res, const Vec3& fill) {
    if (!path.empty()) return io::read_png(path, enc);
    Image img(res, res, 3);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) img.set_rgb(x, y, fill);
    return img;
}

inline EnvironmentMap load_environment(const SceneConfig& s) {
    if (s.env.empty()) return EnvironmentMap(CubeImage(s.env_res, splat(s.env_constant)));
    const fs::path p(s.env);
    if (!fs::exists(p)) throw AssetError("environment map not found: " + s.env);
    if (p.extension() == ".txc") return EnvironmentMap(io::strip_to_cube(io::Container::load(p).image("env")));
    return EnvironmentMap(equirect_to_cubemap(io::read_hdr(p), s.env_res));
}

inline Scene load_scene(const ProjectConfig& cfg) {
    if (cfg.scene.mesh.empty()) throw ConfigError("scene.mesh is required");
    for (const std::string* p : {&cfg.scene.mesh, &cfg.scene.kd, &cfg.scene.orm, &cfg.scene.normal, &cfg.scene.env})
        if (!p->empty() && !fs::exists(*p)) throw AssetError("file not found: " + *p);
    Scene s;
    s.mesh = load_mesh(cfg.scene.mesh);
    s.params.materials.kd = load_or_fill(cfg.scene.kd, io::Encoding::srgb, cfg.scene.texture_res, cfg.scene.default_kd);
    s.params.materials.orm = load_or_fill(cfg.scene.orm, io::Encoding::linear, cfg.scene.texture_res, cfg.scene.default_orm);
    s.params.materials.normal = load_or_fill(cfg.scene.normal, io::Encoding::linear, cfg.scene.texture_res, {0.5, 0.5, 1.0});
    s.params.env = load_environment(cfg.scene);
    return s;
}

/// Materials and environment written by a previous edit/relight run.
inline void load_edited(const fs::path& dir, ParameterSet& p) {
    const OutputLayout out(dir);
    if (fs::exists(out.textures / "kd.png")) p.materials.kd = io::read_png(out.textures / "kd.png", io::Encoding::srgb);
    if (fs::exists(out.textures / "orm.png")) p.materials.orm = io::read_png(out.textures / "orm.png", io::Encoding::linear);
    if (fs::exists(out.textures / "normal.png")) p.materials.normal = io::read_png(out.textures / "normal.png", io::Encoding::linear);
    if (fs::exists(out.env / "env.pfm")) p.env = EnvironmentMap(io::strip_to_cube(io::read_pfm(out.env / "env.pfm")));
}

// ---------------------------------------------------------------------------
// Content-addressed table cache
// ---------------------------------------------------------------------------

inline io::Container pack_prefiltered(const PrefilteredEnv& pre) {
    io::Container c;
    const auto& sp = pre.specular;
    for (std::size_t l = 0; l < sp.mips.size(); ++l) {
        c.put("mip" + std::to_string(l), io::cube_to_strip(sp.mips[l]));
        const auto& taps = sp.kernels[l];
        Tensor t({taps.size(), 5});
        for (std::size_t i = 0; i < taps.size(); ++i) {
            const double row[5] = {taps[i].dir.x, taps[i].dir.y, taps[i].dir.z, taps[i].weight, static_cast<double>(taps[i].level)};
            std::copy(row, row + 5, t.data.begin() + static_cast<std::ptrdiff_t>(i * 5));
        }
        c.put("kernel" + std::to_string(l), std::move(t));
    }
    c.put("irradiance", io::cube_to_strip(pre.diffuse.irradiance));
    c.put_string("levels", std::to_string(sp.mips.size()));
    c.put_string("source_res", std::to_string(sp.source_res));
    c.put_string("pyramid_levels", std::to_string(sp.pyramid_levels));
    c.put_string("irradiance_source_level", std::to_string(pre.diffuse.source_level));
    return c;
}

/// Rebinds cached tables to `env`; the cache key guarantees they were built from identical radiance.
inline PrefilteredEnv unpack_prefiltered(const io::Container& c, const EnvironmentMap& env) {
    SpecularPrefilter sp;
    const int levels = std::stoi(c.string("levels"));
    for (int l = 0; l < levels; ++l) {
        sp.mips.push_back(io::strip_to_cube(c.image("mip" + std::to_string(l))));
        const Tensor& t = c.tensor("kernel" + std::to_string(l));
        std::vector<KernelTap> taps(t.shape.empty() ? 0 : t.shape[0]);
        for (std::size_t i = 0; i < taps.size(); ++i)
            taps[i] = {{t.data[i * 5], t.data[i * 5 + 1], t.data[i * 5 + 2]}, t.data[i * 5 + 3], static_cast<int>(t.data[i * 5 + 4])};
        sp.kernels.push_back(std::move(taps));
    }
    sp.source_res = std::stoi(c.string("source_res"));
    sp.pyramid_levels = std::stoi(c.string("pyramid_levels"));
    sp.source_version = env.version();
    IrradianceMap irr;
    irr.irradiance = io::strip_to_cube(c.image("irradiance"));
    irr.source_level = std::stoi(c.string("irradiance_source_level"));
    irr.source_res = env.resolution();
    irr.source_version = env.version();
    if (sp.source_res != env.resolution()) throw AssetError("cached tables do not match the environment resolution");
    return PrefilteredEnv::assemble(std::move(sp), std::move(irr));
}

inline std::string env_bytes(const EnvironmentMap& env) {
    std::string b;
    io::put_le<std::int32_t>(b, env.resolution());
    for (double v : env.radiance().data) io::put_le(b, v);
    return b;
}

struct CachedLighting {
    Lighting lights;
    fs::path lut_file, prefilter_file;
    bool lut_hit = false, prefilter_hit = false;
};

inline CachedLighting cached_lighting(const ProjectConfig& cfg, const EnvironmentMap& env, const fs::path& cache_dir) {
    fs::create_directories(cache_dir);
    CachedLighting r;
    const auto& ps = cfg.optimize.prefilter;
    std::ostringstream lk;
    lk << "lut:" << cfg.render.lut_res << ':' << cfg.render.lut_samples << ':' << ps.seed;
    r.lut_file = cache_dir / ("lut-" + io::sha256_hex(lk.str()).substr(0, 24) + ".txc");
    if (fs::exists(r.lut_file)) {
        const io::Container c = io::Container::load(r.lut_file);
        const Tensor& t = c.tensor("lut");
        BrdfLut lut;
        lut.res = static_cast<int>(t.shape.at(0));
        lut.data = t.data;
        r.lights.lut = std::make_shared<const BrdfLut>(std::move(lut));
        r.lut_hit = true;
    } else {
        BrdfLut lut = precompute_brdf_lut(cfg.render.lut_res, cfg.render.lut_samples, ps.seed);
        io::Container c;
        Tensor t({static_cast<std::size_t>(lut.res), static_cast<std::size_t>(lut.res), 2});
        t.data = lut.data;
        c.put("lut", std::move(t));
        c.save(r.lut_file);
        r.lights.lut = std::make_shared<const BrdfLut>(std::move(lut));
    }
    std::ostringstream pk;
    pk << "prefilter:" << ps.levels << ':' << ps.specular_samples << ':' << ps.irradiance_res << ':' << ps.irradiance_source_res
       << ':' << ps.seed << ':';
    r.prefilter_file = cache_dir / ("env-" + io::sha256_hex(pk.str() + env_bytes(env)).substr(0, 24) + ".txc");
    if (fs::exists(r.prefilter_file)) {
        r.lights.prefiltered = std::make_shared<const PrefilteredEnv>(unpack_prefiltered(io::Container::load(r.prefilter_file), env));
        r.prefilter_hit = true;
    } else {
        PrefilteredEnv pre = build_prefiltered(env, ps);
        pack_prefiltered(pre).save(r.prefilter_file);
        r.lights.prefiltered = std::make_shared<const PrefilteredEnv>(std::move(pre));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

struct Backend {
    std::unique_ptr<NoisePredictor> predictor;
    std::unique_ptr<Captioner> captioner;
    std::shared_ptr<sidecar::Client> client;
};

/// mock:null | mock:linear | mock:target=<png> | sidecar:<endpoint>
inline Backend make_backend(const ProjectConfig& cfg) {
    Backend b;
    const std::string& spec = cfg.backend;
    if (spec == "mock:null") {
        b.predictor = std::make_unique<NullPredictor>();
    } else if (spec == "mock:linear") {
        b.predictor = std::make_unique<RandomLinearPredictor>(cfg.optimize.seed);
    } else if (spec.rfind("mock:target=", 0) == 0) {
        const std::string path = spec.substr(12);
        if (!fs::exists(path)) throw AssetError("target image not found: " + path);
        auto p = std::make_unique<TargetImagePredictor>();
        Image target = io::read_png(path, io::Encoding::linear);
        if (target.width != cfg.optimize.resolution || target.height != cfg.optimize.resolution)
            throw ConfigError("target image must match the optimisation resolution");
        p->register_prompt(cfg.guidance.target_prompt, std::move(target));
        b.predictor = std::move(p);
    } else if (spec.rfind("sidecar:", 0) == 0) {
        b.client = std::make_shared<sidecar::Client>(sidecar::connect_endpoint(spec.substr(8)), cfg.timeout_ms);
        b.client->hello();
        b.predictor = std::make_unique<sidecar::Predictor>(b.client);
        b.captioner = std::make_unique<sidecar::RemoteCaptioner>(b.client);
        return b;
    } else {
        throw ConfigError("unknown backend: " + spec);
    }
    b.captioner = std::make_unique<FixedCaptioner>(cfg.guidance.source_prompt.empty() ? "an object" : cfg.guidance.source_prompt);
    return b;
}

inline std::unique_ptr<Embedder> make_embedder(const ProjectConfig& cfg, std::shared_ptr<sidecar::Client>& client) {
    if (cfg.embedder == "mock:hash") return std::make_unique<HashEmbedder>();
    if (cfg.embedder.rfind("sidecar:", 0) == 0) {
        client = std::make_shared<sidecar::Client>(sidecar::connect_endpoint(cfg.embedder.substr(8)), cfg.timeout_ms);
        client->hello();
        return std::make_unique<sidecar::RemoteEmbedder>(client);
    }
    throw ConfigError("unknown embedder: " + cfg.embedder);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::vector<Camera> view_cameras(const ProjectConfig& cfg, const Mesh& mesh) {
    return turntable(mesh.centroid(), cfg.render.radius, radians(cfg.render.elevation), cfg.render.views, radians(cfg.render.fov),
                     cfg.render.resolution, cfg.render.resolution);
}

inline std::vector<Image> render_views(const ProjectConfig& cfg, const Scene& s, const Lighting& lights) {
    RenderOptions opt;
    opt.background = cfg.optimize.background;
    std::vector<Image> out;
    for (const Camera& cam : view_cameras(cfg, s.mesh))
        out.push_back(render(s.mesh, cam, s.params.materials, s.params.env, lights.prefiltered, lights.lut, opt).image);
    return out;
}

inline std::string view_name(const std::string& prefix, std::size_t i) {
    std::ostringstream ss;
    ss << prefix << std::setw(2) << std::setfill('0') << i;
    return ss.str();
}

inline json cmd_precompute(const ProjectConfig& cfg) {
    cfg.validate();
    const OutputLayout out(cfg.output);
    out.create();
    const EnvironmentMap env = load_environment(cfg.scene);
    const CachedLighting c = cached_lighting(cfg, env, out.cache);
    return {{"command", "precompute"}, {"lut", c.lut_file.string()}, {"lut_cached", c.lut_hit},
            {"prefiltered", c.prefilter_file.string()}, {"prefiltered_cached", c.prefilter_hit}};
}

inline json cmd_render(const ProjectConfig& cfg) {
    cfg.validate();
    const OutputLayout out(cfg.output);
    out.create();
    Scene s = load_scene(cfg);
    if (!cfg.after.empty()) load_edited(cfg.after, s.params);
    const CachedLighting c = cached_lighting(cfg, s.params.env, out.cache);
    const auto views = render_views(cfg, s, c.lights);
    json files = json::array();
    for (std::size_t i = 0; i < views.size(); ++i) {
        const fs::path png = out.renders / (view_name("view_", i) + ".png");
        io::write_png(png, views[i], io::Encoding::srgb);
        io::write_pfm(out.renders / (view_name("view_", i) + ".pfm"), views[i]);
        files.push_back(png.string());
    }
    return {{"command", "render"}, {"views", files}};
}

inline void write_parameters(const OutputLayout& out, const ParameterSet& p) {
    io::write_png(out.textures / "kd.png", p.materials.kd, io::Encoding::srgb);
    io::write_png(out.textures / "orm.png", p.materials.orm, io::Encoding::linear);
    io::write_png(out.textures / "normal.png", p.materials.normal, io::Encoding::linear);
    io::write_pfm(out.env / "env.pfm", io::cube_to_strip(p.env.radiance()));
}

struct RunOptions {
    bool dry_run = false;
    std::string resume;  // checkpoint file
};

inline json run_optimisation(const ProjectConfig& cfg, Mode mode, const RunOptions& ro) {
    cfg.validate();
    if (cfg.guidance.target_prompt.empty()) throw ConfigError("prompts.target must not be empty");
    if (!cfg.guidance.use_sds && cfg.guidance.source_prompt.empty()) throw ConfigError("prompts.source must not be empty");
    const OutputLayout out(cfg.output);
    Scene s = load_scene(cfg);
    Backend be = make_backend(cfg);
    const char* name = mode == Mode::edit ? "edit" : "relight";
    if (ro.dry_run) {
        if (be.client) be.client->ping();
        return {{"command", name}, {"dry_run", true}, {"backend", be.predictor->name()}, {"status", "ok"}};
    }
    out.create();
    const CachedLighting c = cached_lighting(cfg, s.params.env, out.cache);

    Checkpoint resume;
    OptimizeHooks hooks;
    if (!ro.resume.empty()) {
        resume = Checkpoint::from_container(io::Container::load(ro.resume));
        hooks.resume = &resume;
    }
    hooks.on_checkpoint = [&](const Checkpoint& k) {
        std::ostringstream name;
        name << "ckpt_" << std::setw(6) << std::setfill('0') << k.iteration << ".txc";
        k.to_container().save(out.checkpoints / name.str());
    };
    OptimizeResult r = mode == Mode::edit ? edit(s, cfg.optimize, cfg.guidance, *be.predictor, be.captioner.get(), c.lights, hooks)
                                          : relight(s, cfg.optimize, cfg.guidance, *be.predictor, be.captioner.get(), c.lights, hooks);
    write_parameters(out, r.params);
    std::ostringstream log;
    r.log.write_ndjson(log);
    io::write_file(out.log / (std::string(name) + ".ndjson"), log.str());
    return {{"command", name}, {"iterations", r.log.records.size()}, {"adjustments", r.log.adjustments.size()},
            {"source_prompt", r.source_prompt}, {"textures", out.textures.string()}, {"env", (out.env / "env.pfm").string()}};
}

inline json cmd_edit(const ProjectConfig& cfg, const RunOptions& ro = {}) { return run_optimisation(cfg, Mode::edit, ro); }
inline json cmd_relight(const ProjectConfig& cfg, const RunOptions& ro = {}) { return run_optimisation(cfg, Mode::relight, ro); }

inline json score_to_json(const ScoreReport& r) {
    json views = json::array();
    for (const auto& v : r.views) views.push_back({{"global", v.global}, {"directional", v.directional}});
    return {{"global", r.global}, {"directional", r.directional}, {"views", views}, {"view_count", r.view_count()},
            {"source_prompt", r.source_prompt}, {"target_prompt", r.target_prompt}};
}

inline json cmd_eval(const ProjectConfig& cfg) {
    cfg.validate();
    if (cfg.after.empty()) throw ConfigError("eval needs --after pointing at an edit output directory");
    if (cfg.guidance.source_prompt.empty() || cfg.guidance.target_prompt.empty()) throw ConfigError("eval needs both prompts");
    const OutputLayout out(cfg.output);
    out.create();
    Scene before = load_scene(cfg);
    Scene after = before;
    load_edited(cfg.after, after.params);
    std::shared_ptr<sidecar::Client> client;
    auto emb = make_embedder(cfg, client);
    const CachedLighting cb = cached_lighting(cfg, before.params.env, out.cache);
    const CachedLighting ca = cached_lighting(cfg, after.params.env, out.cache);
    std::vector<Image> vb, va;
    for (const Image& i : render_views(cfg, before, cb.lights)) vb.push_back(tonemap(i));
    for (const Image& i : render_views(cfg, after, ca.lights)) va.push_back(tonemap(i));
    const ScoreReport rep = score_views(*emb, vb, va, cfg.guidance.source_prompt, cfg.guidance.target_prompt);
    json j = score_to_json(rep);
    io::write_file(out.log / "eval.json", j.dump(2) + "\n");
    j["command"] = "eval";
    return j;
}

/// Machine-readable failure record for the error stream.
inline std::string diagnostic(ErrorKind kind, const std::string& message) {
    return json{{"error", to_string(kind)}, {"exit_code", static_cast<int>(kind)}, {"message", message}}.dump();
}

}  // namespace texedit::cli
