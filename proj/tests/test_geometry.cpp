#include <gtest/gtest.h>

#include <sstream>

#include <texedit/geometry.hpp>

using namespace texedit;

namespace {

Mesh obj(const std::string& text, MeshLoadStats* stats = nullptr) {
    std::istringstream in(text);
    return parse_obj(in, stats);
}

const char* kCube = R"(v -1 -1 -1
v 1 -1 -1
v 1 1 -1
v -1 1 -1
v -1 -1 1
v 1 -1 1
v 1 1 1
v -1 1 1
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 5/1 6/2 7/3 8/4
f 2/1 1/2 4/3 3/4
f 6/1 2/2 3/3 7/4
f 1/1 5/2 8/3 4/4
f 8/1 7/2 3/3 4/4
f 1/1 2/2 6/3 5/4
)";

}  // namespace

TEST(Obj, CubeHasTwelveAxisAlignedTriangles) {
    MeshLoadStats st;
    const Mesh m = obj(kCube, &st);
    EXPECT_EQ(m.triangles.size(), 12u);
    EXPECT_TRUE(st.normals_computed);
    for (const auto& tri : m.triangles) {
        const Vec3 a = m.positions[static_cast<std::size_t>(tri[0])], b = m.positions[static_cast<std::size_t>(tri[1])],
                   c = m.positions[static_cast<std::size_t>(tri[2])];
        const Vec3 fn = normalize(cross(b - a, c - a));
        EXPECT_NEAR(std::max({std::abs(fn.x), std::abs(fn.y), std::abs(fn.z)}), 1.0, 1e-12);
        EXPECT_GT(dot(fn, a + b + c), 0.0);
        for (int k = 0; k < 3; ++k) {
            const std::size_t v = static_cast<std::size_t>(tri[k]);
            EXPECT_NEAR(length(m.normals[v]), 1.0, 1e-4);
            EXPECT_GT(dot(m.normals[v], m.positions[v]), 0.0);
        }
    }
}

TEST(Obj, ZeroAreaTriangleDropped) {
    MeshLoadStats st;
    const Mesh m = obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\nf 1/1 2/2 4/2\n", &st);
    EXPECT_EQ(m.triangles.size(), 1u);
    EXPECT_EQ(st.degenerate_dropped, 1u);
}

TEST(Obj, MissingUvsRejected) {
    try {
        obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
        FAIL() << "expected an asset error";
    } catch (const AssetError& e) {
        EXPECT_NE(std::string(e.what()).find("UVs required"), std::string::npos);
    }
}

TEST(Obj, NegativeIndicesAndFans) {
    const Mesh m = obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv -0.5 0.5 0\nvt 0 0\nf -5/-1 -4/-1 -3/-1 -2/-1 -1/-1\n");
    EXPECT_EQ(m.triangles.size(), 3u);
    m.validate();
}

TEST(Obj, MissingFileIsAssetError) { EXPECT_THROW(load_mesh("/nonexistent/mesh.obj"), AssetError); }

TEST(Obj, WriteReadRoundTrip) {
    const Mesh a = make_uv_sphere(8, 4);
    std::ostringstream out;
    write_obj(out, a);
    const Mesh b = obj(out.str());
    ASSERT_EQ(a.triangles.size(), b.triangles.size());
    for (std::size_t t = 0; t < a.triangles.size(); ++t)
        for (int k = 0; k < 3; ++k) {
            const auto ia = static_cast<std::size_t>(a.triangles[t][k]), ib = static_cast<std::size_t>(b.triangles[t][k]);
            EXPECT_NEAR(length(a.positions[ia] - b.positions[ib]), 0.0, 1e-6);
            EXPECT_NEAR(a.uvs[ia].x, b.uvs[ib].x, 1e-6);
            EXPECT_NEAR(a.uvs[ia].y, b.uvs[ib].y, 1e-6);
        }
}

TEST(Tangents, UnitAndOrthogonalToNormals) {
    const Mesh m = make_uv_sphere(24, 12);
    for (std::size_t i = 0; i < m.positions.size(); ++i) {
        EXPECT_NEAR(length(m.normals[i]), 1.0, 1e-4);
        EXPECT_NEAR(length(m.tangents[i].xyz()), 1.0, 1e-4);
        EXPECT_NEAR(dot(m.normals[i], m.tangents[i].xyz()), 0.0, 1e-6);
        EXPECT_TRUE(m.tangents[i].w == 1.0 || m.tangents[i].w == -1.0);
    }
}

TEST(Tangents, QuadTangentFollowsU) {
    const Mesh m = make_quad();
    for (const Vec4& t : m.tangents) {
        EXPECT_NEAR(t.x, 1.0, 1e-12);
        EXPECT_NEAR(t.w, 1.0, 1e-12);
    }
}

TEST(Camera, LookAtIsOrthonormal) {
    const Camera c = look_at({1, 2, 3}, {0, 0.5, 0}, {0, 1, 0}, 0.8, 32, 16);
    EXPECT_NO_THROW(c.validate());
    EXPECT_NEAR(length(c.ray_direction(15.5, 7.5) - normalize(Vec3{0, 0.5, 0} - Vec3{1, 2, 3})), 0.0, 1e-9);
}

TEST(Camera, InvalidFovRejected) {
    Camera c = look_at({0, 0, 3}, {0, 0, 0}, {0, 1, 0}, 0.8, 8, 8);
    c.fov_y = kPi;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Camera, OrbitPlacement) {
    const Camera c = orbit_camera({0, 0, 0}, 2.0, kPi / 2, 0.0, 0.5, 8, 8);
    EXPECT_NEAR(length(c.position - Vec3{2, 0, 0}), 0.0, 1e-12);
    const Camera top = orbit_camera({1, 1, 1}, 3.0, 0.3, kPi / 6, 0.5, 8, 8);
    EXPECT_NEAR(top.position.y - 1.0, 1.5, 1e-12);
}

TEST(Rasterize, FullScreenQuadUvGrid) {
    const Mesh quad = make_quad(1.0);
    // Half-height 1 at distance d with fov_y covers the frame exactly when tan(fov/2) = 1/d.
    const double d = 2.0;
    const Camera cam = look_at({0, 0, d}, {0, 0, 0}, {0, 1, 0}, 2 * std::atan(1.0 / d), 4, 4);
    const GBuffer gb = rasterize(quad, cam);
    ASSERT_EQ(gb.covered_count(), 16u);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const auto& p = gb.at(x, y);
            EXPECT_NEAR(p.uv.x, (x + 0.5) / 4, 1e-5);
            EXPECT_NEAR(p.uv.y, 1.0 - (y + 0.5) / 4, 1e-5);
            EXPECT_NEAR(length(p.view), 1.0, 1e-9);
        }
}

TEST(Rasterize, BehindCameraIsEmpty) {
    const Mesh quad = make_quad(1.0);
    const Camera cam = look_at({0, 0, -3}, {0, 0, -6}, {0, 1, 0}, 1.0, 16, 16);
    EXPECT_EQ(rasterize(quad, cam).covered_count(), 0u);
}

TEST(Rasterize, NearestTriangleWins) {
    Mesh m;
    m.positions = {{-1, -1, 0}, {1, -1, 0}, {0, 1, 0}, {-1, -1, 0.5}, {1, -1, 0.5}, {0, 1, 0.5}};
    m.uvs = {{0, 0}, {1, 0}, {0.5, 1}, {0, 0}, {1, 0}, {0.5, 1}};
    m.triangles = {{0, 1, 2}, {3, 4, 5}};
    m = finalize_mesh(std::move(m));
    const Camera cam = look_at({0, 0, 4}, {0, 0, 0}, {0, 1, 0}, 0.8, 16, 16);
    const GBuffer gb = rasterize(m, cam);
    ASSERT_GT(gb.covered_count(), 0u);
    for (const auto& p : gb.pixels)
        if (p.covered) {
            EXPECT_EQ(p.triangle, 1);
        }
}

TEST(Rasterize, DeterministicAndScaleInvariant) {
    const Mesh a = make_uv_sphere(16, 8, 1.0);
    const Mesh b = make_uv_sphere(16, 8, 2.0);
    const Camera ca = look_at({0, 0.3, 3}, {0, 0, 0}, {0, 1, 0}, 0.9, 48, 48);
    const Camera cb = look_at({0, 0.6, 6}, {0, 0, 0}, {0, 1, 0}, 0.9, 48, 48);
    const GBuffer g1 = rasterize(a, ca), g2 = rasterize(a, ca), g3 = rasterize(b, cb);
    ASSERT_EQ(g1.pixels.size(), g2.pixels.size());
    for (std::size_t i = 0; i < g1.pixels.size(); ++i) {
        EXPECT_EQ(g1.pixels[i].covered, g2.pixels[i].covered);
        EXPECT_EQ(g1.pixels[i].depth, g2.pixels[i].depth);
    }
    std::size_t diff = 0;
    for (std::size_t i = 0; i < g1.pixels.size(); ++i) diff += g1.pixels[i].covered != g3.pixels[i].covered;
    EXPECT_LE(diff, 2u);
}

TEST(Rasterize, AttributesInsideTriangleHull) {
    const Mesh m = make_uv_sphere(12, 6);
    const Camera cam = look_at({0.4, 0.7, 3}, {0, 0, 0}, {0, 1, 0}, 0.9, 40, 40);
    const GBuffer gb = rasterize(m, cam);
    for (const auto& p : gb.pixels) {
        if (!p.covered) continue;
        const auto& tri = m.triangles[static_cast<std::size_t>(p.triangle)];
        const double bsum = p.barycentric.x + p.barycentric.y + p.barycentric.z;
        EXPECT_NEAR(bsum, 1.0, 1e-9);
        EXPECT_GE(std::min({p.barycentric.x, p.barycentric.y, p.barycentric.z}), -1e-9);
        for (int c = 0; c < 2; ++c) {
            double lo = 1e9, hi = -1e9;
            for (int k = 0; k < 3; ++k) {
                const Vec2 uv = m.uvs[static_cast<std::size_t>(tri[k])];
                lo = std::min(lo, c ? uv.y : uv.x);
                hi = std::max(hi, c ? uv.y : uv.x);
            }
            const double v = c ? p.uv.y : p.uv.x;
            EXPECT_GE(v, lo - 1e-9);
            EXPECT_LE(v, hi + 1e-9);
        }
    }
}
