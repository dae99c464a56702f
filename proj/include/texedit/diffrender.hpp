#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "cubemap.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "shading.hpp"

namespace texedit {

/// Which tensors receive gradients and optimizer updates.
struct Trainable {
    bool kd = true;
    bool orm = true;
    bool normal = true;
    bool env = false;

    bool any() const { return kd || orm || normal || env; }
    static Trainable materials_only() { return {true, true, true, false}; }
    static Trainable env_only() { return {false, false, false, true}; }
    static Trainable all() { return {true, true, true, true}; }
};

/// The optimised state: material texel grids, the environment map, and trainable flags.
struct ParameterSet {
    MaterialSet materials;
    EnvironmentMap env;
    Trainable trainable;

    void validate() const {
        if (!trainable.any()) throw ConfigError("at least one tensor must be trainable");
        materials.validate();
        env.validate();
    }
};

/// Gradients congruent to every tensor of a ParameterSet; non-trainable entries stay zero.
struct GradientSet {
    Image kd;
    Image orm;
    Image normal;
    CubeImage env;

    static GradientSet zeros_like(const MaterialSet& m, const CubeImage& env) {
        GradientSet g;
        g.kd = Image(m.kd.width, m.kd.height, 3);
        g.orm = Image(m.orm.width, m.orm.height, 3);
        g.normal = Image(m.normal.width, m.normal.height, 3);
        g.env = CubeImage(env.res);
        return g;
    }

    GradientSet& operator+=(const GradientSet& o) {
        auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
            if (a.size() != b.size()) throw std::invalid_argument("GradientSet: shape mismatch");
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        };
        acc(kd.data, o.kd.data);
        acc(orm.data, o.orm.data);
        acc(normal.data, o.normal.data);
        acc(env.data, o.env.data);
        return *this;
    }
    GradientSet& operator*=(double s) {
        for (auto* v : {&kd.data, &orm.data, &normal.data, &env.data})
            for (double& x : *v) x *= s;
        return *this;
    }

    bool finite() const {
        return all_finite(kd.data) && all_finite(orm.data) && all_finite(normal.data) && all_finite(env.data);
    }
};

struct RenderOptions {
    Vec3 background{0, 0, 0};
    ShadeOptions shade;
};

/// Per-covered-pixel state retained for the backward pass.
struct PixelRecord {
    std::uint32_t index = 0;  // y * width + x
    Vec2 uv;
    Vec3 geo_normal, tangent, bitangent, view;
    Vec3 tn;  // decoded tangent-space normal before normalisation
    Vec3 shading_normal;
    MaterialSample mat;
    double raw_roughness = 0;
};

struct RenderOutput {
    Image image;  // linear RGB
    Image alpha;  // 1 where covered
    Camera camera;
    std::vector<PixelRecord> records;
    std::shared_ptr<const PrefilteredEnv> prefiltered;
    std::shared_ptr<const BrdfLut> lut;
    RenderOptions options;
    int kd_w = 0, kd_h = 0, orm_w = 0, orm_h = 0, nrm_w = 0, nrm_h = 0;
    int env_res = 0;
};

namespace detail {

inline Vec3 decode_normal(const Vec3& texel) { return texel * 2.0 - splat(1.0); }

inline Vec3 perturbed_normal(const Vec3& tn, const Vec3& t, const Vec3& b, const Vec3& n) {
    const double len = length(tn);
    if (len < 1e-12) return n;
    const Vec3 u = tn / len;
    return normalize(t * u.x + b * u.y + n * u.z);
}

}  // namespace detail

/// Rasterize, sample material maps at the pixel UVs, and shade with the split-sum tables.
inline RenderOutput render(const Mesh& mesh, const Camera& camera, const MaterialSet& mats, const EnvironmentMap& env,
                           std::shared_ptr<const PrefilteredEnv> pre, std::shared_ptr<const BrdfLut> lut,
                           const RenderOptions& opt = {}) {
    if (!pre || !lut) throw std::invalid_argument("render: lighting tables missing");
    if (!pre->fresh_for(env)) throw StaleTablesError("prefiltered environment is stale; rebuild it after updating the environment map");
    camera.validate();
    mats.validate();

    const GBuffer gb = rasterize(mesh, camera);
    RenderOutput out;
    out.camera = camera;
    out.options = opt;
    out.prefiltered = pre;
    out.lut = lut;
    out.kd_w = mats.kd.width;
    out.kd_h = mats.kd.height;
    out.orm_w = mats.orm.width;
    out.orm_h = mats.orm.height;
    out.nrm_w = mats.normal.width;
    out.nrm_h = mats.normal.height;
    out.env_res = env.resolution();
    out.image = Image(camera.width, camera.height, 3);
    out.alpha = Image(camera.width, camera.height, 1);

    for (std::size_t i = 0; i < gb.pixels.size(); ++i) {
        const GBufferPixel& px = gb.pixels[i];
        if (!px.covered) continue;
        PixelRecord r;
        r.index = static_cast<std::uint32_t>(i);
        r.uv = px.uv;
        r.geo_normal = px.normal;
        r.tangent = px.tangent.xyz();
        r.bitangent = cross(px.normal, r.tangent) * px.tangent.w;
        r.view = px.view;
        out.records.push_back(r);
    }

    parallel_for(0, out.records.size(), [&](std::size_t k) {
        PixelRecord& r = out.records[k];
        const Vec3 orm = sample_rgb(mats.orm, r.uv);
        r.mat.kd = sample_rgb(mats.kd, r.uv);
        r.mat.occlusion = orm.x;
        r.raw_roughness = orm.y;
        r.mat.roughness = orm.y;
        r.mat.metalness = orm.z;
        r.tn = detail::decode_normal(sample_rgb(mats.normal, r.uv));
        r.shading_normal = detail::perturbed_normal(r.tn, r.tangent, r.bitangent, r.geo_normal);
    });

    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) out.image.set_rgb(x, y, opt.background);
    parallel_for(0, out.records.size(), [&](std::size_t k) {
        const PixelRecord& r = out.records[k];
        const Vec3 L = shade(r.shading_normal, r.view, r.mat, *pre, *lut, opt.shade);
        const int x = static_cast<int>(r.index % camera.width), y = static_cast<int>(r.index / camera.width);
        out.image.set_rgb(x, y, L);
        out.alpha.at(x, y, 0) = 1.0;
    });
    return out;
}

/// Vector-Jacobian product of render(): image-space cotangent to texel gradients.
/// Accumulation is sequential in pixel order, so results are bit-reproducible.
inline GradientSet backward(const RenderOutput& out, const Image& image_grad, const Trainable& which = Trainable::all()) {
    if (image_grad.width != out.image.width || image_grad.height != out.image.height || image_grad.channels != 3)
        throw std::invalid_argument("backward: image gradient resolution mismatch");
    const PrefilteredEnv& pre = *out.prefiltered;

    GradientSet g;
    g.kd = Image(out.kd_w, out.kd_h, 3);
    g.orm = Image(out.orm_w, out.orm_h, 3);
    g.normal = Image(out.nrm_w, out.nrm_h, 3);
    g.env = CubeImage(out.env_res);

    std::vector<CubeImage> spec_grads;
    for (const auto& mip : pre.specular.mips) spec_grads.emplace_back(mip.res);
    CubeImage irr_grad(pre.diffuse.irradiance.res);

    const auto& opt = out.options.shade;
    for (const PixelRecord& r : out.records) {
        const Vec3 gl{image_grad.data[r.index * 3], image_grad.data[r.index * 3 + 1], image_grad.data[r.index * 3 + 2]};
        if (gl.x == 0 && gl.y == 0 && gl.z == 0) continue;
        const ShadeTerms st = shade_terms(r.shading_normal, r.view, r.mat, pre, *out.lut, opt);
        const ShadeGrads sg = shade_backward(r.shading_normal, r.view, r.mat, st, pre, gl, opt);

        if (which.kd) scatter_rgb(g.kd, uv_footprint(r.uv, out.kd_w, out.kd_h), sg.kd);
        if (which.orm)
            scatter_rgb(g.orm, uv_footprint(r.uv, out.orm_w, out.orm_h),
                        {sg.occlusion, r.raw_roughness > brdf::kMinRoughness ? sg.roughness : 0.0, sg.metalness});
        if (which.normal) {
            const double len = length(r.tn);
            if (len >= 1e-12) {
                // n = normalize(T u.x + B u.y + N u.z), u = tn / |tn|
                const Vec3 p = r.tangent * (r.tn.x / len) + r.bitangent * (r.tn.y / len) + r.geo_normal * (r.tn.z / len);
                const double plen = length(p);
                const Vec3 nn = p / plen;
                const Vec3 dp = (sg.normal - nn * dot(nn, sg.normal)) / plen;
                const Vec3 du{dot(dp, r.tangent), dot(dp, r.bitangent), dot(dp, r.geo_normal)};
                const Vec3 u = r.tn / len;
                const Vec3 dtn = (du - u * dot(u, du)) / len;
                scatter_rgb(g.normal, uv_footprint(r.uv, out.nrm_w, out.nrm_h), dtn * 2.0);
            }
        }
        if (which.env) {
            if (opt.diffuse) irr_grad.scatter(r.shading_normal, sg.irradiance);
            if (opt.specular) {
                spec_grads[static_cast<std::size_t>(st.spec.level0)].scatter(st.reflected, sg.prefiltered * (1.0 - st.spec.frac));
                spec_grads[static_cast<std::size_t>(st.spec.level0 + 1)].scatter(st.reflected, sg.prefiltered * st.spec.frac);
            }
        }
    }
    if (which.env) g.env = prefiltered_adjoint(pre, spec_grads, irr_grad);
    return g;
}

// ---------------------------------------------------------------------------
// Display transform
// ---------------------------------------------------------------------------

inline double linear_to_srgb(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x <= 0.0031308 ? 12.92 * x : 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
}

inline double linear_to_srgb_derivative(double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return x <= 0.0031308 ? 12.92 : 1.055 / 2.4 * std::pow(x, 1.0 / 2.4 - 1.0);
}

inline double srgb_to_linear(double s) {
    s = std::clamp(s, 0.0, 1.0);
    return s <= 0.04045 ? s / 12.92 : std::pow((s + 0.055) / 1.055, 2.4);
}

/// Linear radiance to display sRGB in [0, 1] (clamped).
inline Image tonemap(const Image& linear) {
    Image out = linear;
    for (double& v : out.data) v = linear_to_srgb(v);
    return out;
}

/// Chain an sRGB-space cotangent back to linear space. Zero where the clamp is active.
inline Image tonemap_backward(const Image& linear, const Image& grad_srgb) {
    if (!linear.same_shape(grad_srgb)) throw std::invalid_argument("tonemap_backward: shape mismatch");
    Image out = grad_srgb;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= linear_to_srgb_derivative(linear.data[i]);
    return out;
}

}  // namespace texedit
