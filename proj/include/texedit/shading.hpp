#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "brdf.hpp"
#include "cubemap.hpp"
#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "vec.hpp"

namespace texedit {

// ---------------------------------------------------------------------------
// Materials and lighting
// ---------------------------------------------------------------------------

/// Trainable material texel grids, all RGB in [0, 1].
/// kd is linear albedo; orm holds (occlusion, roughness, metalness);
/// normal encodes a tangent-space direction as 0.5 * n + 0.5.
struct MaterialSet {
    Image kd;
    Image orm;
    Image normal;

    static MaterialSet uniform(int res, const Vec3& kd, const Vec3& orm) {
        MaterialSet m;
        m.kd = Image(res, res, 3);
        m.orm = Image(res, res, 3);
        m.normal = Image(res, res, 3);
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                m.kd.set_rgb(x, y, kd);
                m.orm.set_rgb(x, y, orm);
                m.normal.set_rgb(x, y, {0.5, 0.5, 1.0});
            }
        return m;
    }

    void validate() const {
        for (const Image* img : {&kd, &orm, &normal})
            if (img->empty() || img->channels != 3) throw AssetError("material maps must be non-empty RGB");
    }

    void clamp_to_range() {
        for (Image* img : {&kd, &orm, &normal})
            for (double& v : img->data) v = std::clamp(v, 0.0, 1.0);
    }
};

namespace detail {
inline std::uint64_t next_env_version() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}
}  // namespace detail

/// Cubemap of linear RGB radiance. Every mutation through `texels()` assigns a fresh
/// process-unique version, which precomputed tables record to detect staleness.
class EnvironmentMap {
public:
    EnvironmentMap() = default;
    explicit EnvironmentMap(CubeImage radiance, bool trainable = true)
        : radiance_(std::move(radiance)), trainable_(trainable), version_(detail::next_env_version()) {
        validate();
    }
    static EnvironmentMap constant(int res, const Vec3& c) { return EnvironmentMap(CubeImage(res, c)); }

    const CubeImage& radiance() const { return radiance_; }
    /// Mutable access; invalidates all tables built from this map.
    CubeImage& texels() {
        version_ = detail::next_env_version();
        return radiance_;
    }
    int resolution() const { return radiance_.res; }
    std::uint64_t version() const { return version_; }
    bool trainable() const { return trainable_; }
    void set_trainable(bool t) { trainable_ = t; }

    void validate() const {
        const int r = radiance_.res;
        if (r < 1 || (r & (r - 1)) != 0) throw AssetError("environment face resolution must be a power of two");
        for (double v : radiance_.data)
            if (!(v >= 0.0) || !std::isfinite(v)) throw AssetError("environment radiance must be finite and non-negative");
    }

    void clamp_non_negative() {
        for (double& v : texels().data) v = std::max(v, 0.0);
    }

private:
    CubeImage radiance_;
    bool trainable_ = true;
    std::uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// BRDF lookup table
// ---------------------------------------------------------------------------

/// (A, B) scale/bias pairs of the pre-integrated specular lobe on a grid with samples
/// at both endpoints: n.v_i = i / (R - 1) (clamped to the n.v floor), r_j = j / (R - 1).
struct BrdfLut {
    int res = 0;
    std::vector<double> data;  // (j * res + i) * 2 + {0: A, 1: B}

    double a(int i, int j) const { return data[(static_cast<std::size_t>(j) * res + i) * 2]; }
    double b(int i, int j) const { return data[(static_cast<std::size_t>(j) * res + i) * 2 + 1]; }

    struct Sample {
        double a = 0, b = 0;
        double da_dnov = 0, db_dnov = 0;
        double da_dr = 0, db_dr = 0;
    };

    Sample lookup(double nov, double roughness) const {
        const double fx = std::clamp(nov, 0.0, 1.0) * (res - 1);
        const double fy = std::clamp(roughness, 0.0, 1.0) * (res - 1);
        const int x0 = std::min(static_cast<int>(fx), res - 2);
        const int y0 = std::min(static_cast<int>(fy), res - 2);
        const double tx = fx - x0, ty = fy - y0;
        Sample s;
        auto bil = [&](auto get, double& v, double& dx, double& dy) {
            const double v00 = get(x0, y0), v10 = get(x0 + 1, y0), v01 = get(x0, y0 + 1), v11 = get(x0 + 1, y0 + 1);
            const double top = v00 + (v10 - v00) * tx, bot = v01 + (v11 - v01) * tx;
            v = top + (bot - top) * ty;
            dx = ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) * (res - 1);
            dy = (bot - top) * (res - 1);
        };
        bil([this](int i, int j) { return a(i, j); }, s.a, s.da_dnov, s.da_dr);
        bil([this](int i, int j) { return b(i, j); }, s.b, s.db_dnov, s.db_dr);
        return s;
    }
};

namespace detail {

/// Stratified 2D point set for `n` samples from `rng`.
template <typename Rng>
std::vector<Vec2> stratified_points(int n, Rng& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int side = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(n))));
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < side * side && static_cast<int>(pts.size()) < n; ++i) {
        const int sx = i % side, sy = i / side;
        pts.push_back({(sx + uni(rng)) / side, (sy + uni(rng)) / side});
    }
    while (static_cast<int>(pts.size()) < n) pts.push_back({uni(rng), uni(rng)});
    return pts;
}

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

/// (A, B) at one (n.v, roughness) point, estimated with visible-normal samples.
inline std::pair<double, double> integrate_brdf(double nov, double roughness, const std::vector<Vec2>& pts) {
    nov = std::max(nov, brdf::kMinNoV);
    const double alpha = brdf::alpha_from_roughness(roughness);
    const Vec3 v{std::sqrt(std::max(0.0, 1.0 - nov * nov)), 0.0, nov};
    const double g1_v = 1.0 / (1.0 + brdf::smith_lambda(nov, alpha));
    double sa = 0, sb = 0;
    for (const Vec2& u : pts) {
        const Vec3 h = brdf::sample_ggx_visible(v, u.x, u.y, alpha);
        const double voh = dot(v, h);
        const Vec3 l = h * (2.0 * voh) - v;
        const double nol = l.z;
        if (nol <= 0.0 || voh <= 0.0) continue;
        const double g_vis = brdf::smith_g(nov, nol, alpha) / g1_v;
        const double fc = brdf::schlick_weight(voh);
        sa += (1.0 - fc) * g_vis;
        sb += fc * g_vis;
    }
    const double n = static_cast<double>(pts.size());
    return {sa / n, sb / n};
}

}  // namespace detail

inline BrdfLut precompute_brdf_lut(int resolution, int samples, std::uint64_t seed) {
    if (resolution < 16) throw std::invalid_argument("brdf lut resolution must be >= 16");
    if (samples < 64) throw std::invalid_argument("brdf lut needs >= 64 samples");
    BrdfLut lut;
    lut.res = resolution;
    lut.data.assign(static_cast<std::size_t>(resolution) * resolution * 2, 0.0);
    parallel_for(0, static_cast<std::size_t>(resolution), [&](std::size_t row) {
        const int j = static_cast<int>(row);
        for (int i = 0; i < resolution; ++i) {
            auto rng = detail::seeded_rng(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
            const auto pts = detail::stratified_points(samples, rng);
            const double nov = static_cast<double>(i) / (resolution - 1);
            const double r = static_cast<double>(j) / (resolution - 1);
            const auto [a, b] = detail::integrate_brdf(nov, r, pts);
            lut.data[(static_cast<std::size_t>(j) * resolution + i) * 2] = a;
            lut.data[(static_cast<std::size_t>(j) * resolution + i) * 2 + 1] = b;
        }
    });
    return lut;
}

// ---------------------------------------------------------------------------
// Prefiltered environment
// ---------------------------------------------------------------------------

/// One tap of the GGX prefilter kernel in the local frame of the lookup direction.
/// Taps read from a box-filtered pyramid level chosen from the tap's solid angle.
struct KernelTap {
    Vec3 dir;
    double weight = 0;  // normalised so taps of a level sum to 1
    int level = 0;
};

struct SpecularPrefilter {
    std::vector<CubeImage> mips;            // mip l <-> roughness l / (L - 1)
    std::vector<std::vector<KernelTap>> kernels;  // kernels[l], empty for l = 0 (copy)
    std::uint64_t source_version = 0;
    int source_res = 0;
    int pyramid_levels = 0;

    int levels() const { return static_cast<int>(mips.size()); }
    double roughness_of(int level) const { return static_cast<double>(level) / (levels() - 1); }
};

struct IrradianceMap {
    CubeImage irradiance;
    int source_level = 0;  // pyramid level used as the quadrature source
    std::uint64_t source_version = 0;
    int source_res = 0;
};

/// Split-sum lighting tables for one environment version. Immutable once built.
struct PrefilteredEnv {
    SpecularPrefilter specular;
    IrradianceMap diffuse;
    std::uint64_t source_version = 0;

    static PrefilteredEnv assemble(SpecularPrefilter spec, IrradianceMap diff) {
        if (spec.source_version != diff.source_version)
            throw StaleTablesError("specular and diffuse tables were built from different environment versions");
        PrefilteredEnv p;
        p.source_version = spec.source_version;
        p.specular = std::move(spec);
        p.diffuse = std::move(diff);
        return p;
    }

    bool fresh_for(const EnvironmentMap& env) const { return source_version == env.version(); }

    struct SpecSample {
        int level0 = 0;
        double frac = 0;
    };
    SpecSample spec_levels(double roughness) const {
        const int n = specular.levels();
        const double f = std::clamp(roughness, 0.0, 1.0) * (n - 1);
        const int l0 = std::min(static_cast<int>(f), n - 2);
        return {l0, f - l0};
    }
};

struct PrefilterSettings {
    int levels = 6;
    int specular_samples = 512;
    int irradiance_res = 16;
    int irradiance_source_res = 32;
    std::uint64_t seed = 1;
};

inline int specular_mip_res(int source_res, int level) {
    return std::max(std::min(source_res, 8), source_res >> level);
}

inline SpecularPrefilter prefilter_specular(const EnvironmentMap& env, int levels, int samples, std::uint64_t seed) {
    if (levels < 2) throw std::invalid_argument("prefilter_specular: need at least 2 levels");
    if (samples < 1) throw std::invalid_argument("prefilter_specular: need at least 1 sample");
    const CubeImage& src = env.radiance();
    const auto pyramid = build_pyramid(src);

    SpecularPrefilter out;
    out.source_version = env.version();
    out.source_res = src.res;
    out.pyramid_levels = static_cast<int>(pyramid.size());
    out.mips.resize(static_cast<std::size_t>(levels));
    out.kernels.resize(static_cast<std::size_t>(levels));
    out.mips[0] = src;

    const double texel_solid_angle = 4.0 * kPi / (6.0 * src.res * src.res);
    for (int l = 1; l < levels; ++l) {
        const double r = static_cast<double>(l) / (levels - 1);
        const double alpha = brdf::alpha_from_roughness(r);
        auto rng = detail::seeded_rng(seed, 0x5bec, static_cast<std::uint64_t>(l));
        const auto pts = detail::stratified_points(samples, rng);
        std::vector<KernelTap> taps;
        double wsum = 0;
        for (const Vec2& u : pts) {
            const Vec3 h = brdf::sample_ggx_half(u.x, u.y, alpha);
            const Vec3 ldir = Vec3{0, 0, -1} + h * (2.0 * h.z);
            if (ldir.z <= 0.0) continue;
            // filtered importance sampling: with N = V, pdf(l) = D(h) / 4
            const double pdf = brdf::ggx_d(h.z, alpha) * 0.25;
            const double sample_sa = 1.0 / (samples * pdf);
            double lod = 0.5 * std::log2(sample_sa / texel_solid_angle) + 1.0;
            lod = std::clamp(lod, 0.0, static_cast<double>(pyramid.size() - 1));
            taps.push_back({normalize(ldir), ldir.z, static_cast<int>(std::lround(lod))});
            wsum += ldir.z;
        }
        for (auto& t : taps) t.weight /= wsum;

        CubeImage mip(specular_mip_res(src.res, l));
        parallel_for(0, mip.texel_count(), [&](std::size_t t) {
            const Vec3 n = mip.texel_direction(t);
            Vec3 tt, bb;
            orthonormal_basis(n, tt, bb);
            Vec3 acc;
            for (const KernelTap& tap : taps)
                acc += pyramid[static_cast<std::size_t>(tap.level)].sample(brdf::to_world(tap.dir, tt, bb, n)) * tap.weight;
            mip.set(t, acc);
        });
        out.mips[static_cast<std::size_t>(l)] = std::move(mip);
        out.kernels[static_cast<std::size_t>(l)] = std::move(taps);
    }
    return out;
}

namespace detail {

/// Normalised clamped-cosine quadrature weights of `src` texels around direction n.
template <typename Fn>
void for_each_cosine_weight(const CubeImage& src, const std::vector<double>& solid_angles, const Vec3& n, Fn&& fn) {
    double wsum = 0;
    for (std::size_t j = 0; j < src.texel_count(); ++j) {
        const double c = dot(n, src.texel_direction(j));
        if (c > 0) wsum += c * solid_angles[j];
    }
    if (wsum <= 0) return;
    for (std::size_t j = 0; j < src.texel_count(); ++j) {
        const double c = dot(n, src.texel_direction(j));
        if (c > 0) fn(j, c * solid_angles[j] / wsum);
    }
}

inline std::vector<double> solid_angles(const CubeImage& c) {
    std::vector<double> sa(c.texel_count());
    for (std::size_t j = 0; j < sa.size(); ++j) sa[j] = c.texel_solid_angle(j);
    return sa;
}

inline int irradiance_source_level(const std::vector<CubeImage>& pyramid, int max_res) {
    int level = 0;
    while (level + 1 < static_cast<int>(pyramid.size()) && pyramid[static_cast<std::size_t>(level)].res > max_res) ++level;
    return level;
}

}  // namespace detail

/// Cosine-weighted average radiance per normal direction (irradiance / pi), evaluated by
/// deterministic quadrature over a box-filtered copy of the environment.
inline IrradianceMap convolve_irradiance(const EnvironmentMap& env, int resolution = 16, int source_max_res = 32) {
    if (resolution < 1) throw std::invalid_argument("convolve_irradiance: resolution must be positive");
    const auto pyramid = build_pyramid(env.radiance());
    IrradianceMap out;
    out.source_version = env.version();
    out.source_res = env.resolution();
    out.source_level = detail::irradiance_source_level(pyramid, source_max_res);
    const CubeImage& src = pyramid[static_cast<std::size_t>(out.source_level)];
    const auto sa = detail::solid_angles(src);
    out.irradiance = CubeImage(resolution);
    parallel_for(0, out.irradiance.texel_count(), [&](std::size_t t) {
        Vec3 acc;
        detail::for_each_cosine_weight(src, sa, out.irradiance.texel_direction(t),
                                       [&](std::size_t j, double w) { acc += src.get(j) * w; });
        out.irradiance.set(t, acc);
    });
    return out;
}

inline PrefilteredEnv build_prefiltered(const EnvironmentMap& env, const PrefilterSettings& s = {}) {
    return PrefilteredEnv::assemble(prefilter_specular(env, s.levels, s.specular_samples, s.seed),
                                    convolve_irradiance(env, s.irradiance_res, s.irradiance_source_res));
}

/// Cotangents on the prefiltered tables, folded back onto environment texels.
/// The prefilter is treated as the fixed linear map defined by its cached kernel taps.
inline CubeImage prefiltered_adjoint(const PrefilteredEnv& pre, const std::vector<CubeImage>& spec_grads,
                                     const CubeImage& irr_grad) {
    const SpecularPrefilter& sp = pre.specular;
    std::vector<CubeImage> pyr;
    {
        int r = sp.source_res;
        for (int l = 0; l < sp.pyramid_levels; ++l, r /= 2) pyr.emplace_back(r);
    }
    // mip 0 is a copy of the source
    for (std::size_t i = 0; i < spec_grads[0].data.size(); ++i) pyr[0].data[i] += spec_grads[0].data[i];

    for (int l = 1; l < sp.levels(); ++l) {
        const CubeImage& g = spec_grads[static_cast<std::size_t>(l)];
        const auto& taps = sp.kernels[static_cast<std::size_t>(l)];
        for (std::size_t t = 0; t < g.texel_count(); ++t) {
            const Vec3 gt = g.get(t);
            if (gt.x == 0 && gt.y == 0 && gt.z == 0) continue;
            const Vec3 n = g.texel_direction(t);
            Vec3 tt, bb;
            orthonormal_basis(n, tt, bb);
            for (const KernelTap& tap : taps)
                pyr[static_cast<std::size_t>(tap.level)].scatter(brdf::to_world(tap.dir, tt, bb, n), gt * tap.weight);
        }
    }

    const IrradianceMap& irr = pre.diffuse;
    CubeImage& src_grad = pyr[static_cast<std::size_t>(irr.source_level)];
    const auto sa = detail::solid_angles(src_grad);
    for (std::size_t t = 0; t < irr_grad.texel_count(); ++t) {
        const Vec3 gt = irr_grad.get(t);
        if (gt.x == 0 && gt.y == 0 && gt.z == 0) continue;
        detail::for_each_cosine_weight(src_grad, sa, irr_grad.texel_direction(t),
                                       [&](std::size_t j, double w) { src_grad.add(j, gt * w); });
    }
    return pyramid_adjoint(std::move(pyr));
}

// ---------------------------------------------------------------------------
// Split-sum shading
// ---------------------------------------------------------------------------

/// Material values already sampled at a surface point.
struct MaterialSample {
    Vec3 kd{0.5, 0.5, 0.5};
    double occlusion = 1.0;
    double roughness = 0.5;
    double metalness = 0.0;
};

struct ShadeOptions {
    bool diffuse = true;
    bool specular = true;
};

/// All intermediate quantities of one split-sum evaluation.
struct ShadeTerms {
    Vec3 radiance;
    Vec3 irradiance;
    Vec3 prefiltered;
    Vec3 f0;
    BrdfLut::Sample lut;
    PrefilteredEnv::SpecSample spec;
    Vec3 mirror;     // reflect(v, n)
    Vec3 reflected;  // dominant lobe direction used for the lookup
    double lobe_weight = 1;
    double lobe_len = 1;
    double nov_raw = 0;
    double nov = 0;
    double roughness = 0;  // after the floor
};

/// L = o * [(1 - m) kd Irr(n) + (F0 A + B) Spec(d, r)], where d bends reflect(v, n) towards n
/// by w = (1 - a)(sqrt(1 - a) + a), a = r^2 (dominant direction of the GGX lobe).
inline ShadeTerms shade_terms(const Vec3& n, const Vec3& v, const MaterialSample& mat, const PrefilteredEnv& pre,
                              const BrdfLut& lut, const ShadeOptions& opt = {}) {
    ShadeTerms s;
    s.nov_raw = dot(n, v);
    s.nov = std::clamp(s.nov_raw, brdf::kMinNoV, 1.0);
    s.roughness = std::max(mat.roughness, brdf::kMinRoughness);
    s.mirror = reflect(v, n);
    const double a = s.roughness * s.roughness;
    s.lobe_weight = (1.0 - a) * (std::sqrt(1.0 - a) + a);
    const Vec3 u = n * (1.0 - s.lobe_weight) + s.mirror * s.lobe_weight;
    s.lobe_len = length(u);
    s.reflected = s.lobe_len > 1e-12 ? u / s.lobe_len : n;
    s.f0 = brdf::base_f0(mat.kd, mat.metalness);
    Vec3 lum;
    if (opt.diffuse) {
        s.irradiance = pre.diffuse.irradiance.sample(n);
        lum += mat.kd * s.irradiance * (1.0 - mat.metalness);
    }
    if (opt.specular) {
        s.lut = lut.lookup(s.nov, s.roughness);
        s.spec = pre.spec_levels(s.roughness);
        const auto& mips = pre.specular.mips;
        s.prefiltered = lerp(mips[static_cast<std::size_t>(s.spec.level0)].sample(s.reflected),
                             mips[static_cast<std::size_t>(s.spec.level0 + 1)].sample(s.reflected), s.spec.frac);
        lum += (s.f0 * s.lut.a + splat(s.lut.b)) * s.prefiltered;
    }
    s.radiance = lum * mat.occlusion;
    return s;
}

inline Vec3 shade(const Vec3& n, const Vec3& v, const MaterialSample& mat, const PrefilteredEnv& pre, const BrdfLut& lut,
                  const ShadeOptions& opt = {}) {
    return shade_terms(n, v, mat, pre, lut, opt).radiance;
}

/// Cotangents of one shading evaluation.
struct ShadeGrads {
    Vec3 kd;
    double occlusion = 0, roughness = 0, metalness = 0;
    Vec3 normal;
    Vec3 irradiance;   // cotangent on Irr(n)
    Vec3 prefiltered;  // cotangent on Spec(R, r) before mip interpolation
};

inline ShadeGrads shade_backward(const Vec3& n, const Vec3& v, const MaterialSample& mat, const ShadeTerms& s,
                                 const PrefilteredEnv& pre, const Vec3& g, const ShadeOptions& opt = {}) {
    ShadeGrads out;
    const double o = mat.occlusion, m = mat.metalness;
    Vec3 bracket;
    Vec3 dn;
    if (opt.diffuse) {
        const Vec3 diff = mat.kd * s.irradiance * (1.0 - m);
        bracket += diff;
        out.kd += g * s.irradiance * ((1.0 - m) * o);
        out.metalness -= dot(g, mat.kd * s.irradiance) * o;
        out.irradiance = g * mat.kd * ((1.0 - m) * o);
        dn += pre.diffuse.irradiance.sample_vjp_direction(n, out.irradiance);
    }
    if (opt.specular) {
        const Vec3 fab = s.f0 * s.lut.a + splat(s.lut.b);
        bracket += fab * s.prefiltered;
        const Vec3 gp = g * s.prefiltered * o;  // cotangent on (F0 A + B)
        // F0 = 0.04 (1 - m) + kd m
        out.kd += gp * (s.lut.a * m);
        out.metalness += dot(gp, (mat.kd - splat(brdf::kDielectricF0)) * s.lut.a);
        out.prefiltered = g * fab * o;

        const auto& mips = pre.specular.mips;
        const Vec3 s0 = mips[static_cast<std::size_t>(s.spec.level0)].sample(s.reflected);
        const Vec3 s1 = mips[static_cast<std::size_t>(s.spec.level0 + 1)].sample(s.reflected);
        const Vec3 dD = mips[static_cast<std::size_t>(s.spec.level0)].sample_vjp_direction(s.reflected, out.prefiltered * (1.0 - s.spec.frac)) +
                        mips[static_cast<std::size_t>(s.spec.level0 + 1)].sample_vjp_direction(s.reflected, out.prefiltered * s.spec.frac);
        Vec3 du, dR;
        if (s.lobe_len > 1e-12) {
            du = (dD - s.reflected * dot(s.reflected, dD)) / s.lobe_len;
            dn += du * (1.0 - s.lobe_weight);
            dR = du * s.lobe_weight;
        }
        if (mat.roughness > brdf::kMinRoughness) {
            const double dspec_dr = pre.specular.levels() - 1;
            double dr = dot(gp, s.f0 * s.lut.da_dr + splat(s.lut.db_dr));
            dr += dot(out.prefiltered, (s1 - s0) * dspec_dr);
            const double a = s.roughness * s.roughness;
            const double dw_da = 1.0 - 2.0 * a - 1.5 * std::sqrt(std::max(0.0, 1.0 - a));
            dr += dot(du, s.mirror - n) * dw_da * 2.0 * s.roughness;
            out.roughness = dr;
        }
        // R = 2 (n.v) n - v
        dn += (v * dot(dR, n) + dR * s.nov_raw) * 2.0;
        if (s.nov_raw > brdf::kMinNoV && s.nov_raw < 1.0) {
            const double dnov = dot(gp, s.f0 * s.lut.da_dnov + splat(s.lut.db_dnov));
            dn += v * dnov;
        }
    }
    out.occlusion = dot(g, bracket);
    out.normal = dn;
    return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo reference of the full rendering integral (test oracle)
// ---------------------------------------------------------------------------

/// Unbiased estimate of L(v) = int L_i(l) f(l, v) (n.l) dl with the same metalness-workflow
/// BSDF as shade(): Lambertian (1 - m) kd / pi plus GGX with height-correlated Smith and
/// Schlick Fresnel. Stratified GGX and cosine samples combined with the balance heuristic.
/// `opt` drops lobes the same way it does for shade().
inline Vec3 reference_shade(const Vec3& n, const Vec3& v, const MaterialSample& mat, const EnvironmentMap& env,
                            int samples, std::uint64_t seed, const ShadeOptions& opt = {}) {
    const CubeImage& L = env.radiance();
    const double alpha = brdf::alpha_from_roughness(mat.roughness);
    const double nov = std::clamp(dot(n, v), brdf::kMinNoV, 1.0);
    const Vec3 f0 = brdf::base_f0(mat.kd, mat.metalness);
    const Vec3 diffuse = opt.diffuse ? mat.kd * ((1.0 - mat.metalness) * kInvPi) : Vec3{};
    const double spec_share = !opt.specular ? 0.0 : !opt.diffuse ? 1.0 : 0.5 + 0.4 * mat.metalness;
    const int n_spec = std::clamp(static_cast<int>(std::lround(samples * spec_share)), 0, samples);
    const int n_diff = samples - n_spec;
    Vec3 t, b;
    orthonormal_basis(n, t, b);
    auto rng = detail::seeded_rng(seed, 0xfe11);
    const auto spec_pts = detail::stratified_points(n_spec, rng);
    const auto diff_pts = detail::stratified_points(n_diff, rng);

    Vec3 acc;
    auto add = [&](const Vec3& l) {
        const double nol = dot(n, l);
        if (nol <= 0) return;
        const Vec3 h = normalize(l + v);
        const double noh = std::max(dot(n, h), 0.0);
        const double voh = std::max(dot(v, h), 1e-12);
        const double d = brdf::ggx_d(noh, alpha);
        const double weight = n_spec * d * noh / (4.0 * voh) + n_diff * nol * kInvPi;
        if (weight <= 0) return;
        const Vec3 spec = !opt.specular ? Vec3{}
                                        : brdf::fresnel_schlick(f0, voh) * (d * brdf::smith_g(nov, nol, alpha) / (4.0 * nol * nov));
        acc += L.sample(l) * (diffuse + spec) * (nol / weight);
    };
    for (const Vec2& u : spec_pts) add(reflect(v, brdf::to_world(brdf::sample_ggx_half(u.x, u.y, alpha), t, b, n)));
    for (const Vec2& u : diff_pts) add(brdf::to_world(brdf::sample_cosine(u.x, u.y), t, b, n));
    return acc * mat.occlusion;
}

}  // namespace texedit
