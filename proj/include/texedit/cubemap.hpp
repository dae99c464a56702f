#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "image.hpp"
#include "vec.hpp"

namespace texedit {

// Face order +X, -X, +Y, -Y, +Z, -Z. A face point is axis + u * right + v * down with
// u, v in [-1, 1]; texel (i, j) has u increasing with i and v increasing with j.
struct CubeFace {
    Vec3 axis, right, down;
};

inline constexpr std::array<CubeFace, 6> kCubeFaces{{
    {{1, 0, 0}, {0, 0, -1}, {0, -1, 0}},
    {{-1, 0, 0}, {0, 0, 1}, {0, -1, 0}},
    {{0, 1, 0}, {1, 0, 0}, {0, 0, 1}},
    {{0, -1, 0}, {1, 0, 0}, {0, 0, -1}},
    {{0, 0, 1}, {1, 0, 0}, {0, -1, 0}},
    {{0, 0, -1}, {-1, 0, 0}, {0, -1, 0}},
}};

struct CubeCoord {
    int face = 0;
    double u = 0, v = 0;  // in [-1, 1]
    double ma = 1;        // projection of the direction on the face axis (> 0)
};

inline CubeCoord cube_coord(const Vec3& d) {
    const double ax = std::abs(d.x), ay = std::abs(d.y), az = std::abs(d.z);
    int face;
    if (ax >= ay && ax >= az)
        face = d.x >= 0 ? 0 : 1;
    else if (ay >= az)
        face = d.y >= 0 ? 2 : 3;
    else
        face = d.z >= 0 ? 4 : 5;
    const CubeFace& f = kCubeFaces[static_cast<std::size_t>(face)];
    CubeCoord c;
    c.face = face;
    c.ma = dot(f.axis, d);
    c.u = dot(f.right, d) / c.ma;
    c.v = dot(f.down, d) / c.ma;
    return c;
}

/// Bilinear cube lookup footprint. Filtering never crosses a face edge (clamp within face).
struct CubeFootprint {
    int face = 0;
    std::array<int, 4> x{}, y{};
    std::array<double, 4> w{};
    double tx = 0, ty = 0;  // fractional offsets, for derivatives
    bool clamp_x = false, clamp_y = false;
};

/// Six square RGB faces stored contiguously: data[((face * res + y) * res + x) * 3 + c].
struct CubeImage {
    int res = 0;
    std::vector<double> data;

    CubeImage() = default;
    explicit CubeImage(int r, double fill = 0.0) : res(r), data(static_cast<std::size_t>(6) * r * r * 3, fill) {}
    CubeImage(int r, const Vec3& fill) : CubeImage(r) {
        for (std::size_t i = 0; i < texel_count(); ++i) set(i, fill);
    }

    std::size_t texel_count() const { return static_cast<std::size_t>(6) * res * res; }
    std::size_t texel(int face, int x, int y) const {
        return (static_cast<std::size_t>(face) * res + y) * res + x;
    }
    Vec3 get(std::size_t t) const { return {data[t * 3], data[t * 3 + 1], data[t * 3 + 2]}; }
    void set(std::size_t t, const Vec3& v) {
        data[t * 3] = v.x;
        data[t * 3 + 1] = v.y;
        data[t * 3 + 2] = v.z;
    }
    void add(std::size_t t, const Vec3& v) {
        data[t * 3] += v.x;
        data[t * 3 + 1] += v.y;
        data[t * 3 + 2] += v.z;
    }
    bool same_shape(const CubeImage& o) const { return res == o.res; }

    /// Unit direction through the centre of texel t.
    Vec3 texel_direction(std::size_t t) const {
        const int face = static_cast<int>(t / (static_cast<std::size_t>(res) * res));
        const std::size_t rem = t % (static_cast<std::size_t>(res) * res);
        const int y = static_cast<int>(rem / res), x = static_cast<int>(rem % res);
        const double u = 2.0 * (x + 0.5) / res - 1.0;
        const double v = 2.0 * (y + 0.5) / res - 1.0;
        const CubeFace& f = kCubeFaces[static_cast<std::size_t>(face)];
        return normalize(f.axis + f.right * u + f.down * v);
    }

    /// Solid angle subtended by texel t; sums to 4 pi over the cube.
    double texel_solid_angle(std::size_t t) const {
        const std::size_t rem = t % (static_cast<std::size_t>(res) * res);
        const int y = static_cast<int>(rem / res), x = static_cast<int>(rem % res);
        auto area = [](double a, double b) { return std::atan2(a * b, std::sqrt(a * a + b * b + 1.0)); };
        const double x0 = 2.0 * x / res - 1.0, x1 = 2.0 * (x + 1) / res - 1.0;
        const double y0 = 2.0 * y / res - 1.0, y1 = 2.0 * (y + 1) / res - 1.0;
        return area(x0, y0) - area(x0, y1) - area(x1, y0) + area(x1, y1);
    }

    CubeFootprint footprint(const CubeCoord& c) const {
        const double s = (c.u + 1.0) * 0.5 * res - 0.5;
        const double t = (c.v + 1.0) * 0.5 * res - 0.5;
        const double s0 = std::floor(s), t0 = std::floor(t);
        CubeFootprint f;
        f.face = c.face;
        f.tx = s - s0;
        f.ty = t - t0;
        const int x0 = static_cast<int>(s0), y0 = static_cast<int>(t0);
        auto cl = [this](int v) { return std::clamp(v, 0, res - 1); };
        f.clamp_x = cl(x0) == cl(x0 + 1);
        f.clamp_y = cl(y0) == cl(y0 + 1);
        f.x = {cl(x0), cl(x0 + 1), cl(x0), cl(x0 + 1)};
        f.y = {cl(y0), cl(y0), cl(y0 + 1), cl(y0 + 1)};
        f.w = {(1 - f.tx) * (1 - f.ty), f.tx * (1 - f.ty), (1 - f.tx) * f.ty, f.tx * f.ty};
        return f;
    }

    Vec3 sample(const CubeFootprint& f) const {
        const Vec3 a = get(texel(f.face, f.x[0], f.y[0]));
        const Vec3 b = get(texel(f.face, f.x[1], f.y[1]));
        const Vec3 c = get(texel(f.face, f.x[2], f.y[2]));
        const Vec3 d = get(texel(f.face, f.x[3], f.y[3]));
        // nested lerps keep constant maps exact
        return lerp(lerp(a, b, f.tx), lerp(c, d, f.tx), f.ty);
    }
    Vec3 sample(const Vec3& dir) const { return sample(footprint(cube_coord(dir))); }

    void scatter(const CubeFootprint& f, const Vec3& g) {
        for (int k = 0; k < 4; ++k) add(texel(f.face, f.x[k], f.y[k]), g * f.w[k]);
    }
    void scatter(const Vec3& dir, const Vec3& g) { scatter(footprint(cube_coord(dir)), g); }

    /// Directional derivative support: returns d(sample)/d(dir) contracted with an RGB
    /// cotangent, i.e. the gradient of dot(g, sample(dir)) with respect to dir.
    Vec3 sample_vjp_direction(const Vec3& dir, const Vec3& g) const {
        const CubeCoord c = cube_coord(dir);
        const CubeFootprint f = footprint(c);
        const Vec3 a = get(texel(f.face, f.x[0], f.y[0]));
        const Vec3 b = get(texel(f.face, f.x[1], f.y[1]));
        const Vec3 cc = get(texel(f.face, f.x[2], f.y[2]));
        const Vec3 d = get(texel(f.face, f.x[3], f.y[3]));
        const double ds = f.clamp_x ? 0.0 : dot(g, lerp(b - a, d - cc, f.ty));
        const double dt = f.clamp_y ? 0.0 : dot(g, lerp(cc - a, d - b, f.tx));
        const CubeFace& face = kCubeFaces[static_cast<std::size_t>(c.face)];
        const Vec3 du = (face.right - face.axis * c.u) / c.ma;
        const Vec3 dv = (face.down - face.axis * c.v) / c.ma;
        return (du * ds + dv * dt) * (0.5 * res);
    }
};

/// 2x2 box downsample of every face. Requires an even resolution.
inline CubeImage downsample(const CubeImage& src) {
    if (src.res % 2 != 0 || src.res < 2) throw std::invalid_argument("downsample: resolution must be even");
    CubeImage out(src.res / 2);
    for (int f = 0; f < 6; ++f)
        for (int y = 0; y < out.res; ++y)
            for (int x = 0; x < out.res; ++x) {
                Vec3 s = src.get(src.texel(f, 2 * x, 2 * y)) + src.get(src.texel(f, 2 * x + 1, 2 * y)) +
                         src.get(src.texel(f, 2 * x, 2 * y + 1)) + src.get(src.texel(f, 2 * x + 1, 2 * y + 1));
                out.set(out.texel(f, x, y), s * 0.25);
            }
    return out;
}

/// Adjoint of downsample: spreads each coarse cotangent equally over its four children.
inline void downsample_adjoint(const CubeImage& coarse_grad, CubeImage& fine_grad) {
    for (int f = 0; f < 6; ++f)
        for (int y = 0; y < coarse_grad.res; ++y)
            for (int x = 0; x < coarse_grad.res; ++x) {
                const Vec3 g = coarse_grad.get(coarse_grad.texel(f, x, y)) * 0.25;
                fine_grad.add(fine_grad.texel(f, 2 * x, 2 * y), g);
                fine_grad.add(fine_grad.texel(f, 2 * x + 1, 2 * y), g);
                fine_grad.add(fine_grad.texel(f, 2 * x, 2 * y + 1), g);
                fine_grad.add(fine_grad.texel(f, 2 * x + 1, 2 * y + 1), g);
            }
}

/// Box pyramid down to 1x1 faces (or the first odd resolution). Level 0 is the input.
inline std::vector<CubeImage> build_pyramid(const CubeImage& base) {
    std::vector<CubeImage> levels{base};
    while (levels.back().res >= 2 && levels.back().res % 2 == 0) levels.push_back(downsample(levels.back()));
    return levels;
}

/// Fold per-level cotangents back onto level 0.
inline CubeImage pyramid_adjoint(std::vector<CubeImage> grads) {
    for (std::size_t l = grads.size() - 1; l > 0; --l) downsample_adjoint(grads[l], grads[l - 1]);
    return std::move(grads.front());
}

// Latitude-longitude parameterisation: +Y up, azimuth measured from -Z towards +X.
inline Vec3 equirect_direction(double u, double v) {
    const double phi = (u - 0.5) * 2.0 * kPi;
    const double theta = v * kPi;
    return {std::sin(theta) * std::sin(phi), std::cos(theta), -std::sin(theta) * std::cos(phi)};
}

inline Vec2 equirect_uv(const Vec3& d) {
    const double phi = std::atan2(d.x, -d.z);
    const double theta = std::acos(std::clamp(d.y, -1.0, 1.0));
    return {0.5 + phi / (2.0 * kPi), theta / kPi};
}

/// Bilinear lookup into an equirectangular RGB image; wraps horizontally, clamps at the poles.
inline Vec3 sample_equirect(const Image& img, const Vec3& d) {
    const Vec2 uv = equirect_uv(d);
    const double fx = uv.x * img.width - 0.5;
    const double fy = uv.y * img.height - 0.5;
    const double x0f = std::floor(fx), y0f = std::floor(fy);
    const double tx = fx - x0f, ty = fy - y0f;
    auto wrap = [&](int x) { return ((x % img.width) + img.width) % img.width; };
    auto cl = [&](int y) { return std::clamp(y, 0, img.height - 1); };
    const int x0 = wrap(static_cast<int>(x0f)), x1 = wrap(static_cast<int>(x0f) + 1);
    const int y0 = cl(static_cast<int>(y0f)), y1 = cl(static_cast<int>(y0f) + 1);
    return lerp(lerp(img.rgb(x0, y0), img.rgb(x1, y0), tx), lerp(img.rgb(x0, y1), img.rgb(x1, y1), tx), ty);
}

inline CubeImage equirect_to_cubemap(const Image& equirect, int face_res) {
    if (face_res <= 0) throw std::invalid_argument("equirect_to_cubemap: face resolution must be positive");
    if (equirect.channels < 3 || equirect.empty())
        throw std::invalid_argument("equirect_to_cubemap: expected a non-empty RGB image");
    CubeImage cube(face_res);
    for (std::size_t t = 0; t < cube.texel_count(); ++t)
        cube.set(t, sample_equirect(equirect, cube.texel_direction(t)));
    return cube;
}

inline Image cubemap_to_equirect(const CubeImage& cube, int width, int height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("cubemap_to_equirect: bad size");
    Image out(width, height, 3);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Vec3 d = equirect_direction((x + 0.5) / width, (y + 0.5) / height);
            out.set_rgb(x, y, cube.sample(d));
        }
    return out;
}

}  // namespace texedit
