#include <gtest/gtest.h>

#include <random>

#include <texedit/diffrender.hpp>

#include "support.hpp"

using namespace texedit;

namespace {

std::shared_ptr<const BrdfLut> lut() {
    static const auto l = std::make_shared<const BrdfLut>(precompute_brdf_lut(32, 256, 1));
    return l;
}

Camera frame_camera(int res) { return look_at({0, 0, 2}, {0, 0, 0}, {0, 1, 0}, 2 * std::atan(0.5), res, res); }

struct Fixture {
    Mesh mesh = make_uv_sphere(24, 12);
    Camera cam = look_at({0.3, 0.5, 2.6}, {0, 0, 0}, {0, 1, 0}, 0.9, 32, 32);
    MaterialSet mats;
    EnvironmentMap env;
    PrefilterSettings settings;

    explicit Fixture(std::uint64_t seed = 1) {
        std::mt19937_64 rng(seed);
        mats = test::random_materials(8, rng);
        env = EnvironmentMap(test::sky_cube(8));
        settings.specular_samples = 64;
        settings.irradiance_res = 8;
    }

    RenderOutput run(const MaterialSet& m, const EnvironmentMap& e, const RenderOptions& o = {}) const {
        return render(mesh, cam, m, e, std::make_shared<const PrefilteredEnv>(build_prefiltered(e, settings)), lut(), o);
    }
    RenderOutput run() const { return run(mats, env); }
};

double weighted_sum(const Image& img, const Image& w) {
    double s = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i) s += img.data[i] * w.data[i];
    return s;
}

Image ones_like(const Image& img) {
    Image o = img;
    for (double& v : o.data) v = 1.0;
    return o;
}

std::vector<double*> param_slots(MaterialSet& m, CubeImage& env) {
    std::vector<double*> s;
    for (auto* v : {&m.kd.data, &m.orm.data, &m.normal.data, &env.data})
        for (double& x : *v) s.push_back(&x);
    return s;
}

std::vector<double> flat(const GradientSet& g) {
    std::vector<double> out;
    for (const auto* v : {&g.kd.data, &g.orm.data, &g.normal.data, &g.env.data}) out.insert(out.end(), v->begin(), v->end());
    return out;
}

}  // namespace

TEST(Render, BlackEnvironmentGivesBlackPixels) {
    Fixture f;
    f.env = EnvironmentMap(CubeImage(8));
    const RenderOutput out = f.run();
    ASSERT_FALSE(out.records.empty());
    for (const auto& r : out.records)
        for (int c = 0; c < 3; ++c) EXPECT_EQ(out.image.data[r.index * 3 + c], 0.0);
}

TEST(Render, BackgroundFillsUncoveredPixels) {
    Fixture f;
    RenderOptions o;
    o.background = {0.1, 0.2, 0.3};
    const RenderOutput out = f.run(f.mats, f.env, o);
    EXPECT_EQ(out.image.rgb(0, 0).z, 0.3);
    EXPECT_EQ(out.alpha.at(0, 0, 0), 0.0);
    EXPECT_EQ(out.alpha.at(16, 16, 0), 1.0);
}

TEST(Render, FullFrameQuadIsBilinearAlbedoTimesIrradiance) {
    std::mt19937_64 rng(7);
    MaterialSet m = MaterialSet::uniform(8, splat(0.5), {1, 0.5, 0});
    m.kd = test::random_image(8, 8, rng);
    const Vec3 L0{0.9, 1.2, 0.6};
    const EnvironmentMap env = EnvironmentMap::constant(8, L0);
    RenderOptions o;
    o.shade.specular = false;
    const RenderOutput out = render(make_quad(1.0), frame_camera(16), m, env,
                                    std::make_shared<const PrefilteredEnv>(build_prefiltered(env)), lut(), o);
    ASSERT_EQ(out.records.size(), 256u);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const Vec3 want = sample_rgb(m.kd, Vec2{(x + 0.5) / 16, 1 - (y + 0.5) / 16}) * L0;
            EXPECT_NEAR(length(out.image.rgb(x, y) - want), 0.0, 1e-3);
        }
}

TEST(Render, Deterministic) {
    Fixture f;
    EXPECT_TRUE(test::bit_equal(f.run().image.data, f.run().image.data));
}

TEST(Render, FiniteAndNonNegative) {
    Fixture f;
    const RenderOutput out = f.run();
    for (double v : out.image.data) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
    }
}

TEST(Backward, ZeroCotangentGivesZeroGradients) {
    Fixture f;
    const RenderOutput out = f.run();
    Image g(32, 32, 3);
    for (double v : flat(backward(out, g))) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ResolutionMismatchRejected) {
    Fixture f;
    EXPECT_THROW(backward(f.run(), Image(16, 16, 3)), std::invalid_argument);
}

TEST(Backward, SinglePixelTouchesFourAlbedoTexels) {
    MaterialSet m = MaterialSet::uniform(8, splat(0.5), {0.8, 0.5, 0.2});
    const Vec3 L0{0.9, 1.2, 0.6};
    const EnvironmentMap env = EnvironmentMap::constant(8, L0);
    RenderOptions o;
    o.shade.specular = false;
    const RenderOutput out = render(make_quad(1.0), frame_camera(4), m, env,
                                    std::make_shared<const PrefilteredEnv>(build_prefiltered(env)), lut(), o);
    Image g(4, 4, 3);
    const Vec3 cot{1.0, -2.0, 0.5};
    g.set_rgb(1, 2, cot);
    const GradientSet gs = backward(out, g);
    int nonzero = 0;
    Vec3 sum;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const Vec3 v = gs.kd.rgb(x, y);
            if (length(v) > 0) ++nonzero;
            sum += v;
        }
    EXPECT_EQ(nonzero, 4);
    // dL/dkd = o (1 - m) Irr
    const Vec3 want = cot * L0 * (0.8 * 0.8);
    EXPECT_NEAR(length(sum - want), 0.0, 1e-9);
}

TEST(Backward, GradientsStayInsideFootprints) {
    Fixture f;
    const RenderOutput out = f.run();
    const PixelRecord& r = out.records[out.records.size() / 2];
    Image g(32, 32, 3);
    g.data[r.index * 3 + 1] = 1.0;
    const GradientSet gs = backward(out, g, Trainable::materials_only());
    const Footprint fp = uv_footprint(r.uv, 8, 8);
    for (const Image* img : {&gs.kd, &gs.orm, &gs.normal})
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                bool inside = false;
                for (int k = 0; k < 4; ++k) inside = inside || (fp.x[k] == x && fp.y[k] == y);
                if (!inside) {
                    EXPECT_EQ(length(img->rgb(x, y)), 0.0);
                }
            }
}

TEST(Backward, FrozenTensorsGetExactZeros) {
    Fixture f;
    const RenderOutput out = f.run();
    const Image g = ones_like(out.image);
    Trainable t{true, false, true, false};
    const GradientSet gs = backward(out, g, t);
    for (double v : gs.orm.data) EXPECT_EQ(v, 0.0);
    for (double v : gs.env.data) EXPECT_EQ(v, 0.0);
    EXPECT_GT(l2_norm(gs.kd.data), 0.0);
    EXPECT_GT(l2_norm(gs.normal.data), 0.0);
}

TEST(Backward, Deterministic) {
    Fixture f;
    const RenderOutput out = f.run();
    const Image g = ones_like(out.image);
    EXPECT_TRUE(test::bit_equal(flat(backward(out, g)), flat(backward(out, g))));
}

TEST(Backward, AlbedoAndEnvironmentMatchFiniteDifferences) {
    Fixture f;
    const RenderOutput out = f.run();
    const Image w = ones_like(out.image);
    const GradientSet gs = backward(out, w);
    const double h = 1e-3;
    MaterialSet m = f.mats;
    double worst = 0;
    for (std::size_t i = 0; i < m.kd.data.size(); i += 5) {
        const double x = m.kd.data[i];
        m.kd.data[i] = x + h;
        const double up = weighted_sum(f.run(m, f.env).image, w);
        m.kd.data[i] = x - h;
        const double dn = weighted_sum(f.run(m, f.env).image, w);
        m.kd.data[i] = x;
        const double fd = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(fd - gs.kd.data[i]) / std::max(std::abs(fd), 1e-3));
    }
    CubeImage env = f.env.radiance();
    for (std::size_t i = 0; i < env.data.size(); i += 23) {
        const double x = env.data[i];
        env.data[i] = x + h;
        const double up = weighted_sum(f.run(f.mats, EnvironmentMap(env)).image, w);
        env.data[i] = x - h;
        const double dn = weighted_sum(f.run(f.mats, EnvironmentMap(env)).image, w);
        env.data[i] = x;
        const double fd = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(fd - gs.env.data[i]) / std::max(std::abs(fd), 1e-3));
    }
    EXPECT_LE(worst, 1e-3);
}

TEST(Backward, RandomDotProductAdjoint) {
    Fixture f;
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g;
    const RenderOutput out = f.run();
    for (int trial = 0; trial < 5; ++trial) {
        Image u(32, 32, 3);
        for (double& x : u.data) x = g(rng);
        const std::vector<double> bu = flat(backward(out, u));
        MaterialSet mp = f.mats, mm = f.mats;
        CubeImage ep = f.env.radiance(), em = f.env.radiance();
        auto sp = param_slots(mp, ep), sm = param_slots(mm, em);
        std::vector<double> v(sp.size());
        const double h = 1e-6;
        for (double& x : v) x = g(rng);
        for (std::size_t i = 0; i < v.size(); ++i) {
            *sp[i] += h * v[i];
            *sm[i] -= h * v[i];
        }
        const double jvp = (weighted_sum(f.run(mp, EnvironmentMap(ep)).image, u) - weighted_sum(f.run(mm, EnvironmentMap(em)).image, u)) / (2 * h);
        double rhs = 0;
        for (std::size_t i = 0; i < v.size(); ++i) rhs += bu[i] * v[i];
        EXPECT_NEAR(jvp, rhs, 1e-5 * std::max(std::abs(rhs), 1.0));
    }
}

TEST(Tonemap, DerivativeMatchesFiniteDifference) {
    for (double x : {0.001, 0.002, 0.01, 0.2, 0.5, 0.9}) {
        const double h = 1e-7;
        EXPECT_NEAR(linear_to_srgb_derivative(x), (linear_to_srgb(x + h) - linear_to_srgb(x - h)) / (2 * h), 1e-4);
    }
    EXPECT_EQ(linear_to_srgb_derivative(1.5), 0.0);
    EXPECT_EQ(linear_to_srgb_derivative(-0.1), 0.0);
}

TEST(Tonemap, InverseRoundTrip) {
    for (double x : {0.0, 0.002, 0.1, 0.5, 1.0}) EXPECT_NEAR(srgb_to_linear(linear_to_srgb(x)), x, 1e-12);
}

TEST(Tonemap, BackwardZeroWhereClamped) {
    Image lin(2, 1, 3);
    lin.data = {2.0, 0.5, -1.0, 0.1, 0.2, 0.3};
    Image g = lin;
    for (double& v : g.data) v = 1.0;
    const Image b = tonemap_backward(lin, g);
    EXPECT_EQ(b.data[0], 0.0);
    EXPECT_EQ(b.data[2], 0.0);
    EXPECT_GT(b.data[1], 0.0);
}
