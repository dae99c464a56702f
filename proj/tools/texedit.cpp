#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <texedit/cli.hpp>

namespace {

using texedit::ProjectConfig;

struct Overrides {
    std::string config;
    std::optional<std::string> output, backend, embedder, source, target, mesh, kd, orm, normal, env, after;
    std::optional<int> iterations, resolution, views, env_res, checkpoint_period;
    std::optional<std::uint64_t> seed;
    std::optional<double> omega;
    bool sds = false, train_env = false;
};

void add_common(CLI::App* app, Overrides& o) {
    app->add_option("-c,--config", o.config, "JSON project file");
    app->add_option("-o,--output", o.output, "Output directory");
    app->add_option("--mesh", o.mesh, "OBJ mesh with UVs");
    app->add_option("--kd", o.kd, "Albedo texture (8-bit sRGB PNG)");
    app->add_option("--orm", o.orm, "Occlusion/roughness/metalness texture (8-bit PNG)");
    app->add_option("--normal", o.normal, "Tangent-space normal map (8-bit PNG)");
    app->add_option("--env", o.env, "Equirectangular environment (.pfm or .png)");
    app->add_option("--env-res", o.env_res, "Cubemap face resolution");
    app->add_option("--seed", o.seed, "Random seed");
    app->add_option("--views", o.views, "Turntable view count");
}

void add_guidance(CLI::App* app, Overrides& o) {
    app->add_option("--backend", o.backend, "mock:null | mock:linear | mock:target=<png> | sidecar:<endpoint>");
    app->add_option("--source", o.source, "Source prompt");
    app->add_option("--target", o.target, "Target prompt");
    app->add_option("--iterations", o.iterations, "Optimisation iterations");
    app->add_option("--resolution", o.resolution, "Optimisation render resolution");
    app->add_option("--omega", o.omega, "Classifier-free guidance weight");
    app->add_option("--checkpoint-period", o.checkpoint_period, "Iterations between checkpoints (0 disables)");
    app->add_flag("--sds", o.sds, "Use plain score distillation instead of the relative direction");
}

ProjectConfig resolve(const Overrides& o) {
    ProjectConfig c = o.config.empty() ? ProjectConfig{} : texedit::load_config(o.config);
    auto set = [](auto& dst, const auto& src) {
        if (src) dst = *src;
    };
    set(c.output, o.output);
    set(c.backend, o.backend);
    set(c.embedder, o.embedder);
    set(c.guidance.source_prompt, o.source);
    set(c.guidance.target_prompt, o.target);
    set(c.scene.mesh, o.mesh);
    set(c.scene.kd, o.kd);
    set(c.scene.orm, o.orm);
    set(c.scene.normal, o.normal);
    set(c.scene.env, o.env);
    set(c.scene.env_res, o.env_res);
    set(c.after, o.after);
    set(c.optimize.iterations, o.iterations);
    set(c.optimize.resolution, o.resolution);
    set(c.optimize.checkpoint_period, o.checkpoint_period);
    set(c.optimize.seed, o.seed);
    set(c.render.views, o.views);
    set(c.guidance.omega, o.omega);
    if (o.sds) c.guidance.use_sds = true;
    if (o.train_env) c.optimize.train_env = true;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text-guided texture editing with a differentiable split-sum renderer"};
    app.require_subcommand(1);
    Overrides o;
    texedit::cli::RunOptions run;

    auto* pre = app.add_subcommand("precompute", "Build and cache the BRDF table and prefiltered environment");
    add_common(pre, o);

    auto* rnd = app.add_subcommand("render", "Render a turntable of the scene");
    add_common(rnd, o);
    rnd->add_option("--after", o.after, "Directory of an edit run whose textures replace the scene's");

    auto* edt = app.add_subcommand("edit", "Edit the textures towards the target prompt");
    add_common(edt, o);
    add_guidance(edt, o);
    edt->add_flag("--train-env", o.train_env, "Co-train the environment map");
    edt->add_flag("--dry-run", run.dry_run, "Validate configuration and backend without writing outputs");
    edt->add_option("--resume", run.resume, "Checkpoint to resume from");

    auto* rel = app.add_subcommand("relight", "Optimise only the environment map towards the target prompt");
    add_common(rel, o);
    add_guidance(rel, o);
    rel->add_flag("--dry-run", run.dry_run, "Validate configuration and backend without writing outputs");
    rel->add_option("--resume", run.resume, "Checkpoint to resume from");

    auto* evl = app.add_subcommand("eval", "Score an edit with global and directional similarity");
    add_common(evl, o);
    evl->add_option("--after", o.after, "Directory of the edit run to score")->required();
    evl->add_option("--source", o.source, "Source prompt");
    evl->add_option("--target", o.target, "Target prompt");
    evl->add_option("--embedder", o.embedder, "mock:hash | sidecar:<endpoint>");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << texedit::cli::diagnostic(texedit::ErrorKind::config, e.what()) << '\n';
        return static_cast<int>(texedit::ErrorKind::config);
    }

    try {
        const ProjectConfig cfg = resolve(o);
        nlohmann::json result;
        if (pre->parsed()) result = texedit::cli::cmd_precompute(cfg);
        else if (rnd->parsed()) result = texedit::cli::cmd_render(cfg);
        else if (edt->parsed()) result = texedit::cli::cmd_edit(cfg, run);
        else if (rel->parsed()) result = texedit::cli::cmd_relight(cfg, run);
        else result = texedit::cli::cmd_eval(cfg);
        std::cout << result.dump() << '\n';
        return 0;
    } catch (const texedit::Error& e) {
        std::cerr << texedit::cli::diagnostic(e.kind(), e.what()) << '\n';
        return static_cast<int>(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << texedit::cli::diagnostic(texedit::ErrorKind::config, e.what()) << '\n';
        return static_cast<int>(texedit::ErrorKind::config);
    } catch (const std::exception& e) {
        std::cerr << texedit::cli::diagnostic(texedit::ErrorKind::internal, e.what()) << '\n';
        return static_cast<int>(texedit::ErrorKind::internal);
    }
}
