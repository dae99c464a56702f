#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "vec.hpp"

namespace texedit {

/// Fixed-topology triangle mesh. Tangent w holds the bitangent handedness (+1 or -1).
struct Mesh {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;
    std::vector<Vec4> tangents;
    std::vector<Vec2> uvs;
    std::vector<std::array<std::uint32_t, 3>> triangles;

    std::size_t vertex_count() const { return positions.size(); }

    Vec3 centroid() const {
        Vec3 c;
        for (const auto& p : positions) c += p;
        return positions.empty() ? c : c / static_cast<double>(positions.size());
    }

    /// Throws AssetError when an invariant does not hold.
    void validate() const {
        const std::size_t n = positions.size();
        if (triangles.empty()) throw AssetError("mesh has no triangles");
        if (normals.size() != n || tangents.size() != n || uvs.size() != n)
            throw AssetError("mesh attribute arrays have inconsistent sizes");
        for (const auto& t : triangles)
            for (auto i : t)
                if (i >= n) throw AssetError("triangle index out of range");
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(length(normals[i]) - 1.0) > 1e-4) throw AssetError("non-unit normal");
            if (std::abs(length(tangents[i].xyz()) - 1.0) > 1e-4) throw AssetError("non-unit tangent");
            if (!std::isfinite(uvs[i].x) || !std::isfinite(uvs[i].y)) throw AssetError("non-finite uv");
        }
    }
};

struct MeshLoadStats {
    std::size_t degenerate_dropped = 0;
    bool normals_computed = false;
};

namespace detail {

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * length(cross(b - a, c - a));
}

inline void drop_degenerate(Mesh& mesh, MeshLoadStats& stats) {
    std::vector<std::array<std::uint32_t, 3>> kept;
    kept.reserve(mesh.triangles.size());
    for (const auto& t : mesh.triangles) {
        const double area = triangle_area(mesh.positions[t[0]], mesh.positions[t[1]], mesh.positions[t[2]]);
        if (area <= 1e-12)
            ++stats.degenerate_dropped;
        else
            kept.push_back(t);
    }
    mesh.triangles = std::move(kept);
}

}  // namespace detail

/// Area-weighted vertex normals from faces.
inline void compute_vertex_normals(Mesh& mesh) {
    mesh.normals.assign(mesh.positions.size(), Vec3{});
    for (const auto& t : mesh.triangles) {
        const Vec3 n = cross(mesh.positions[t[1]] - mesh.positions[t[0]], mesh.positions[t[2]] - mesh.positions[t[0]]);
        for (auto i : t) mesh.normals[i] += n;
    }
    for (auto& n : mesh.normals) {
        n = normalize(n);
        if (length(n) == 0) n = {0, 0, 1};
    }
}

/// Per-triangle UV tangents accumulated per vertex, then Gram-Schmidt against the normal.
/// No MikkTSpace welding; seams keep whatever the per-vertex average yields.
inline void compute_tangents(Mesh& mesh) {
    const std::size_t n = mesh.positions.size();
    std::vector<Vec3> tan(n), bitan(n);
    for (const auto& t : mesh.triangles) {
        const Vec3 e1 = mesh.positions[t[1]] - mesh.positions[t[0]];
        const Vec3 e2 = mesh.positions[t[2]] - mesh.positions[t[0]];
        const double du1 = mesh.uvs[t[1]].x - mesh.uvs[t[0]].x, dv1 = mesh.uvs[t[1]].y - mesh.uvs[t[0]].y;
        const double du2 = mesh.uvs[t[2]].x - mesh.uvs[t[0]].x, dv2 = mesh.uvs[t[2]].y - mesh.uvs[t[0]].y;
        const double det = du1 * dv2 - du2 * dv1;
        if (std::abs(det) < 1e-20) continue;
        const double r = 1.0 / det;
        const Vec3 sdir = (e1 * dv2 - e2 * dv1) * r;
        const Vec3 tdir = (e2 * du1 - e1 * du2) * r;
        for (auto i : t) {
            tan[i] += sdir;
            bitan[i] += tdir;
        }
    }
    mesh.tangents.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& nn = mesh.normals[i];
        Vec3 t = tan[i] - nn * dot(nn, tan[i]);
        if (length(t) < 1e-12) {
            Vec3 b;
            orthonormal_basis(nn, t, b);
        }
        t = normalize(t);
        const double w = dot(cross(nn, t), bitan[i]) < 0.0 ? -1.0 : 1.0;
        mesh.tangents[i] = {t.x, t.y, t.z, w};
    }
}

/// Drops degenerate triangles, fills missing normals and computes tangents.
inline Mesh finalize_mesh(Mesh mesh, MeshLoadStats* stats = nullptr) {
    MeshLoadStats local;
    MeshLoadStats& s = stats ? *stats : local;
    detail::drop_degenerate(mesh, s);
    if (mesh.triangles.empty()) throw AssetError("mesh has no non-degenerate triangles");
    if (mesh.normals.size() != mesh.positions.size()) {
        compute_vertex_normals(mesh);
        s.normals_computed = true;
    } else {
        for (auto& nn : mesh.normals) nn = normalize(nn);
    }
    compute_tangents(mesh);
    mesh.validate();
    return mesh;
}

/// Wavefront OBJ subset: v, vt, vn and polygonal f records (fan-triangulated).
inline Mesh parse_obj(std::istream& in, MeshLoadStats* stats = nullptr) {
    std::vector<Vec3> pos, nrm;
    std::vector<Vec2> tex;
    Mesh mesh;
    std::map<std::tuple<long, long, long>, std::uint32_t> remap;
    bool any_missing_normal = false;
    std::string line;
    int line_no = 0;

    auto resolve = [](long idx, std::size_t count) -> long {
        if (idx > 0) return idx - 1;
        if (idx < 0) return static_cast<long>(count) + idx;
        return -1;
    };

    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 p;
            ls >> p.x >> p.y >> p.z;
            pos.push_back(p);
        } else if (tag == "vt") {
            Vec2 t;
            ls >> t.x >> t.y;
            tex.push_back(t);
        } else if (tag == "vn") {
            Vec3 n;
            ls >> n.x >> n.y >> n.z;
            nrm.push_back(n);
        } else if (tag == "f") {
            std::vector<std::uint32_t> poly;
            std::string vert;
            while (ls >> vert) {
                long vi = 0, ti = 0, ni = 0;
                const auto s1 = vert.find('/');
                try {
                    vi = std::stol(vert.substr(0, s1));
                    if (s1 != std::string::npos) {
                        const auto s2 = vert.find('/', s1 + 1);
                        const std::string ts = vert.substr(s1 + 1, s2 == std::string::npos ? std::string::npos : s2 - s1 - 1);
                        if (!ts.empty()) ti = std::stol(ts);
                        if (s2 != std::string::npos && s2 + 1 < vert.size()) ni = std::stol(vert.substr(s2 + 1));
                    }
                } catch (const std::exception&) {
                    throw AssetError("obj line " + std::to_string(line_no) + ": malformed face vertex '" + vert + "'");
                }
                const long v = resolve(vi, pos.size()), t = resolve(ti, tex.size()), n = resolve(ni, nrm.size());
                if (v < 0 || v >= static_cast<long>(pos.size()))
                    throw AssetError("obj line " + std::to_string(line_no) + ": position index out of range");
                if (t < 0 || t >= static_cast<long>(tex.size())) throw AssetError("UVs required: face vertex without texture coordinate");
                if (n >= static_cast<long>(nrm.size()))
                    throw AssetError("obj line " + std::to_string(line_no) + ": normal index out of range");
                if (n < 0) any_missing_normal = true;
                const auto key = std::make_tuple(v, t, n);
                auto it = remap.find(key);
                if (it == remap.end()) {
                    const auto id = static_cast<std::uint32_t>(mesh.positions.size());
                    mesh.positions.push_back(pos[static_cast<std::size_t>(v)]);
                    mesh.uvs.push_back(tex[static_cast<std::size_t>(t)]);
                    mesh.normals.push_back(n >= 0 ? nrm[static_cast<std::size_t>(n)] : Vec3{});
                    it = remap.emplace(key, id).first;
                }
                poly.push_back(it->second);
            }
            for (std::size_t k = 2; k < poly.size(); ++k) mesh.triangles.push_back({poly[0], poly[k - 1], poly[k]});
        }
    }
    if (mesh.triangles.empty()) throw AssetError("mesh has no triangles");
    if (any_missing_normal) mesh.normals.clear();
    return finalize_mesh(std::move(mesh), stats);
}

inline Mesh load_mesh(const std::string& path, MeshLoadStats* stats = nullptr) {
    std::ifstream in(path);
    if (!in) throw AssetError("cannot open mesh file: " + path);
    return parse_obj(in, stats);
}

inline void write_obj(std::ostream& out, const Mesh& mesh) {
    out.precision(17);
    for (const auto& p : mesh.positions) out << "v " << p.x << ' ' << p.y << ' ' << p.z << '\n';
    for (const auto& t : mesh.uvs) out << "vt " << t.x << ' ' << t.y << '\n';
    for (const auto& n : mesh.normals) out << "vn " << n.x << ' ' << n.y << ' ' << n.z << '\n';
    for (const auto& t : mesh.triangles) {
        out << 'f';
        for (auto i : t) out << ' ' << i + 1 << '/' << i + 1 << '/' << i + 1;
        out << '\n';
    }
}

/// Axis-aligned quad in the z = 0 plane facing +z, spanning [-half, half]^2, uv (0,0) at the lower left.
inline Mesh make_quad(double half = 1.0) {
    Mesh m;
    m.positions = {{-half, -half, 0}, {half, -half, 0}, {half, half, 0}, {-half, half, 0}};
    m.uvs = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    m.normals.assign(4, Vec3{0, 0, 1});
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return finalize_mesh(std::move(m));
}

inline Mesh make_uv_sphere(int segments, int rings, double radius = 1.0) {
    Mesh m;
    for (int r = 0; r <= rings; ++r) {
        const double v = static_cast<double>(r) / rings;
        const double theta = v * kPi;
        for (int s = 0; s <= segments; ++s) {
            const double u = static_cast<double>(s) / segments;
            const double phi = u * 2.0 * kPi;
            const Vec3 n{std::sin(theta) * std::sin(phi), std::cos(theta), std::sin(theta) * std::cos(phi)};
            m.positions.push_back(n * radius);
            m.normals.push_back(n);
            m.uvs.push_back({u, 1.0 - v});
        }
    }
    const int stride = segments + 1;
    for (int r = 0; r < rings; ++r)
        for (int s = 0; s < segments; ++s) {
            const auto a = static_cast<std::uint32_t>(r * stride + s), b = a + 1;
            const auto c = static_cast<std::uint32_t>((r + 1) * stride + s), d = c + 1;
            if (r != 0) m.triangles.push_back({a, c, b});
            if (r != rings - 1) m.triangles.push_back({b, c, d});
        }
    return finalize_mesh(std::move(m));
}

struct Camera {
    Vec3 position;
    Mat3 rotation;  // columns: right, up, backward (camera looks along -column 2)
    double fov_y = kPi / 3;
    int width = 64;
    int height = 64;
    double near_plane = 1e-3;
    double far_plane = 1e4;

    void validate() const {
        const Mat3 rtr = rotation.transposed() * rotation;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)) > 1e-5) throw ConfigError("camera rotation is not orthonormal");
        if (!(fov_y > 0 && fov_y < kPi)) throw ConfigError("camera fov must lie in (0, pi)");
        if (width < 1 || height < 1) throw ConfigError("camera resolution must be at least 1x1");
        if (!(near_plane > 0 && far_plane > near_plane)) throw ConfigError("camera near/far planes invalid");
    }

    /// World-space unit ray direction through the centre of pixel (x, y).
    Vec3 ray_direction(double px, double py) const {
        const double tan_half = std::tan(0.5 * fov_y);
        const double aspect = static_cast<double>(width) / height;
        const double cx = (2.0 * (px + 0.5) / width - 1.0) * tan_half * aspect;
        const double cy = (1.0 - 2.0 * (py + 0.5) / height) * tan_half;
        return normalize(rotation * Vec3{cx, cy, -1.0});
    }
};

inline Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint, double fov_y, int width, int height) {
    const Vec3 back = normalize(eye - target);
    Vec3 right = cross(up_hint, back);
    if (length(right) < 1e-9) right = cross(std::abs(back.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 0, 1}, back);
    right = normalize(right);
    const Vec3 up = cross(back, right);
    Camera cam;
    cam.position = eye;
    cam.rotation = Mat3::from_columns(right, up, back);
    cam.fov_y = fov_y;
    cam.width = width;
    cam.height = height;
    return cam;
}

/// Camera on a sphere around `center` (y up), looking at the centre.
/// Azimuth 0 sits on +z; elevation is measured from the horizontal plane.
inline Camera orbit_camera(const Vec3& center, double radius, double azimuth, double elevation, double fov_y, int width,
                           int height) {
    const Vec3 dir{std::cos(elevation) * std::sin(azimuth), std::sin(elevation), std::cos(elevation) * std::cos(azimuth)};
    return look_at(center + dir * radius, center, {0, 1, 0}, fov_y, width, height);
}

/// `views` cameras evenly spaced in azimuth at a fixed elevation.
inline std::vector<Camera> turntable(const Vec3& center, double radius, double elevation, int views, double fov_y, int width,
                                     int height) {
    std::vector<Camera> cams;
    for (int i = 0; i < views; ++i)
        cams.push_back(orbit_camera(center, radius, 2.0 * kPi * i / views, elevation, fov_y, width, height));
    return cams;
}

/// Per-pixel rasterization record. `normal` and `tangent` are the interpolated
/// geometric frame; the tangent-space normal-map perturbation is applied during shading.
struct GBufferPixel {
    bool covered = false;
    Vec3 position;
    Vec3 normal;
    Vec4 tangent;
    Vec2 uv;
    Vec3 view;  // unit, surface towards camera
    std::int32_t triangle = -1;
    Vec3 barycentric;
    double depth = std::numeric_limits<double>::infinity();
};

struct GBuffer {
    int width = 0;
    int height = 0;
    std::vector<GBufferPixel> pixels;

    const GBufferPixel& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t covered_count() const {
        return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](const auto& p) { return p.covered; }));
    }
};

namespace detail {

// Moller-Trumbore; returns distance along the ray and barycentrics (b0, b1, b2).
inline bool intersect(const Vec3& o, const Vec3& d, const Vec3& p0, const Vec3& p1, const Vec3& p2, double& t,
                      Vec3& bary) {
    const Vec3 e1 = p1 - p0, e2 = p2 - p0;
    const Vec3 pv = cross(d, e2);
    const double det = dot(e1, pv);
    if (std::abs(det) < 1e-18) return false;
    const double inv = 1.0 / det;
    const Vec3 tv = o - p0;
    const double u = dot(tv, pv) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Vec3 qv = cross(tv, e1);
    const double v = dot(d, qv) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    t = dot(e2, qv) * inv;
    bary = {1.0 - u - v, u, v};
    return true;
}

}  // namespace detail

/// Pixel-centre visibility with nearest-depth resolve. Triangles are binned by their
/// projected screen bounds; triangles crossing the camera plane test the whole frame.
/// Attributes are interpolated with exact ray barycentrics (perspective correct).
inline GBuffer rasterize(const Mesh& mesh, const Camera& cam) {
    GBuffer gb;
    gb.width = cam.width;
    gb.height = cam.height;
    gb.pixels.assign(static_cast<std::size_t>(cam.width) * cam.height, GBufferPixel{});

    const Mat3 world_to_cam = cam.rotation.transposed();
    const double tan_half = std::tan(0.5 * cam.fov_y);
    const double aspect = static_cast<double>(cam.width) / cam.height;

    struct Bounds {
        int x0, y0, x1, y1;
    };
    std::vector<Bounds> bounds(mesh.triangles.size());
    for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
        const auto& tri = mesh.triangles[ti];
        double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
        bool behind = false, all_behind = true;
        for (auto vi : tri) {
            const Vec3 c = world_to_cam * (mesh.positions[vi] - cam.position);
            if (-c.z <= cam.near_plane) {
                behind = true;
                continue;
            }
            all_behind = false;
            const double sx = ((c.x / -c.z) / (tan_half * aspect) + 1.0) * 0.5 * cam.width - 0.5;
            const double sy = (1.0 - (c.y / -c.z) / tan_half) * 0.5 * cam.height - 0.5;
            minx = std::min(minx, sx);
            maxx = std::max(maxx, sx);
            miny = std::min(miny, sy);
            maxy = std::max(maxy, sy);
        }
        if (all_behind) {
            bounds[ti] = {1, 1, 0, 0};
        } else if (behind) {
            bounds[ti] = {0, 0, cam.width - 1, cam.height - 1};
        } else {
            bounds[ti] = {std::max(0, static_cast<int>(std::floor(minx))), std::max(0, static_cast<int>(std::floor(miny))),
                          std::min(cam.width - 1, static_cast<int>(std::ceil(maxx))),
                          std::min(cam.height - 1, static_cast<int>(std::ceil(maxy)))};
        }
    }

    parallel_for(0, static_cast<std::size_t>(cam.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
            const Bounds& b = bounds[ti];
            if (y < b.y0 || y > b.y1) continue;
            const auto& tri = mesh.triangles[ti];
            const Vec3& p0 = mesh.positions[tri[0]];
            const Vec3& p1 = mesh.positions[tri[1]];
            const Vec3& p2 = mesh.positions[tri[2]];
            for (int x = b.x0; x <= b.x1; ++x) {
                const Vec3 d = cam.ray_direction(x, y);
                double t;
                Vec3 bary;
                if (!detail::intersect(cam.position, d, p0, p1, p2, t, bary)) continue;
                // depth is the camera-space distance along the view axis
                const double depth = t * -dot(d, cam.rotation.column(2));
                if (depth < cam.near_plane || depth > cam.far_plane) continue;
                GBufferPixel& px = gb.pixels[static_cast<std::size_t>(y) * cam.width + x];
                if (depth >= px.depth) continue;
                px.covered = true;
                px.depth = depth;
                px.triangle = static_cast<std::int32_t>(ti);
                px.barycentric = bary;
            }
        }
    });

    for (auto& px : gb.pixels) {
        if (!px.covered) continue;
        const auto& tri = mesh.triangles[static_cast<std::size_t>(px.triangle)];
        const Vec3& b = px.barycentric;
        Vec3 pos, nrm, tan;
        Vec2 uv;
        for (int k = 0; k < 3; ++k) {
            const auto vi = tri[static_cast<std::size_t>(k)];
            pos += mesh.positions[vi] * b[k];
            nrm += mesh.normals[vi] * b[k];
            tan += mesh.tangents[vi].xyz() * b[k];
            uv.x += mesh.uvs[vi].x * b[k];
            uv.y += mesh.uvs[vi].y * b[k];
        }
        px.position = pos;
        px.normal = normalize(nrm);
        Vec3 t = tan - px.normal * dot(px.normal, tan);
        if (length(t) < 1e-12) {
            Vec3 bt;
            orthonormal_basis(px.normal, t, bt);
        }
        t = normalize(t);
        px.tangent = {t.x, t.y, t.z, mesh.tangents[tri[0]].w};
        px.uv = uv;
        px.view = normalize(cam.position - pos);
    }
    return gb;
}

}  // namespace texedit
