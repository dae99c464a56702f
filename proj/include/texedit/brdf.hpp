#pragma once

#include <algorithm>
#include <cmath>

#include "vec.hpp"

namespace texedit::brdf {

inline constexpr double kMinRoughness = 0.04;
inline constexpr double kMinNoV = 1e-4;
inline constexpr double kDielectricF0 = 0.04;

/// Perceptual roughness to GGX alpha, with the shading-time floor applied.
inline double alpha_from_roughness(double r) {
    const double rr = std::max(r, kMinRoughness);
    return rr * rr;
}

inline double ggx_d(double noh, double alpha) {
    const double a2 = alpha * alpha;
    const double d = noh * noh * (a2 - 1.0) + 1.0;
    return a2 / (kPi * d * d);
}

inline double smith_lambda(double cos_theta, double alpha) {
    const double c = std::clamp(cos_theta, 1e-12, 1.0);
    const double tan2 = (1.0 - c * c) / (c * c);
    return 0.5 * (-1.0 + std::sqrt(1.0 + alpha * alpha * tan2));
}

/// Height-correlated Smith masking-shadowing.
inline double smith_g(double nov, double nol, double alpha) {
    return 1.0 / (1.0 + smith_lambda(nov, alpha) + smith_lambda(nol, alpha));
}

inline double schlick_weight(double voh) {
    const double m = std::clamp(1.0 - voh, 0.0, 1.0);
    const double m2 = m * m;
    return m2 * m2 * m;
}

inline Vec3 fresnel_schlick(const Vec3& f0, double voh) {
    const double w = schlick_weight(voh);
    return f0 + (splat(1.0) - f0) * w;
}

/// GGX half-vector sample around +z; pdf(h) = D(h) * cos(theta_h).
inline Vec3 sample_ggx_half(double u1, double u2, double alpha) {
    const double a2 = alpha * alpha;
    const double cos2 = (1.0 - u1) / (1.0 + (a2 - 1.0) * u1);
    const double cos_t = std::sqrt(cos2);
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos2));
    const double phi = 2.0 * kPi * u2;
    return {sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t};
}

/// GGX visible-normal sample for view `v` in the local frame (v.z > 0);
/// pdf(h) = G1(v) max(v.h, 0) D(h) / v.z.
inline Vec3 sample_ggx_visible(const Vec3& v, double u1, double u2, double alpha) {
    const Vec3 vh = normalize(Vec3{alpha * v.x, alpha * v.y, v.z});
    const double lensq = vh.x * vh.x + vh.y * vh.y;
    const Vec3 t1 = lensq > 0 ? Vec3{-vh.y, vh.x, 0.0} * (1.0 / std::sqrt(lensq)) : Vec3{1, 0, 0};
    const Vec3 t2 = cross(vh, t1);
    const double r = std::sqrt(u1);
    const double phi = 2.0 * kPi * u2;
    const double p1 = r * std::cos(phi);
    const double s = 0.5 * (1.0 + vh.z);
    const double p2 = (1.0 - s) * std::sqrt(std::max(0.0, 1.0 - p1 * p1)) + s * r * std::sin(phi);
    const Vec3 nh = t1 * p1 + t2 * p2 + vh * std::sqrt(std::max(0.0, 1.0 - p1 * p1 - p2 * p2));
    return normalize(Vec3{alpha * nh.x, alpha * nh.y, std::max(1e-12, nh.z)});
}

/// Cosine-weighted hemisphere sample around +z; pdf = cos(theta) / pi.
inline Vec3 sample_cosine(double u1, double u2) {
    const double r = std::sqrt(u1);
    const double phi = 2.0 * kPi * u2;
    return {r * std::cos(phi), r * std::sin(phi), std::sqrt(std::max(0.0, 1.0 - u1))};
}

inline Vec3 to_world(const Vec3& local, const Vec3& t, const Vec3& b, const Vec3& n) {
    return t * local.x + b * local.y + n * local.z;
}

/// Base reflectance of the metalness workflow.
inline Vec3 base_f0(const Vec3& kd, double metalness) {
    return lerp(splat(kDielectricF0), kd, metalness);
}

}  // namespace texedit::brdf
