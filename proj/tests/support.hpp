#pragma once

#include <cmath>
#include <cstring>
#include <random>

#include <texedit/diffrender.hpp>

namespace texedit::test {

/// Sky gradient with a soft sun lobe.
inline CubeImage sky_cube(int res, double sun_power = 2.0) {
    CubeImage c(res);
    const Vec3 sun = normalize(Vec3{0.5, 0.7, 0.4});
    for (std::size_t t = 0; t < c.texel_count(); ++t) {
        const Vec3 d = c.texel_direction(t);
        const double sky = 0.5 + 0.5 * d.y;
        c.set(t, Vec3{0.25, 0.3, 0.4} + Vec3{0.3, 0.4, 0.6} * sky + Vec3{1.0, 0.9, 0.7} * (sun_power * std::exp(6 * (dot(d, sun) - 1))));
    }
    return c;
}

inline Image random_image(int w, int h, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(w, h, 3);
    for (double& v : img.data) v = u(rng);
    return img;
}

inline MaterialSet random_materials(int res, std::mt19937_64& rng) {
    MaterialSet m;
    m.kd = random_image(res, res, rng, 0.1, 0.9);
    m.orm = random_image(res, res, rng, 0.2, 0.9);
    m.normal = random_image(res, res, rng, 0.3, 0.7);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) m.normal.at(x, y, 2) = 0.9;
    return m;
}

inline bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
    return true;
}

}  // namespace texedit::test
