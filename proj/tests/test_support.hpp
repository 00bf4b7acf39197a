#pragma once

#include <doctest.h>

#include "dscene/formats.hpp"
#include "dscene/render.hpp"
#include "dscene/rng.hpp"
#include "dscene/synth.hpp"

namespace dstest {

using namespace dscene;

inline CameraIntrinsics small_camera(int w = 64, int h = 48, double f = 48.0) {
    CameraIntrinsics cam;
    cam.width = w;
    cam.height = h;
    cam.fx = cam.fy = f;
    cam.cx = w / 2;
    cam.cy = h / 2;
    return cam;
}

/// Fronto-parallel plane at constant depth z.
inline DepthImage flat_depth(const CameraIntrinsics& cam, float z) {
    DepthImage d(cam);
    for (auto& v : d.depth) v = z;
    return d;
}

/// Depth image of a horizontal floor plane y = height (y-down camera).
inline DepthImage floor_depth(const CameraIntrinsics& cam, double height) {
    DepthImage d(cam);
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            double dir_y = (v - cam.cy) / cam.fy;
            if (dir_y <= 1e-6) continue;  // ray never reaches the floor
            double z = height / dir_y;
            if (z > 0.1 && z <= kMaxDepthMeters) d.at(u, v) = float(z);
        }
    }
    return d;
}

/// Sphere of given radius centered at (0, 0, cz).
inline DepthImage sphere_depth(const CameraIntrinsics& cam, double radius, double cz) {
    DepthImage d(cam);
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            Vector3d dir = cam.unproject(u, v, 1.0);
            double a = dir.squaredNorm();
            double b = -2.0 * dir.z() * cz;
            double c = cz * cz - radius * radius;
            double disc = b * b - 4 * a * c;
            if (disc < 0) continue;
            double t = (-b - std::sqrt(disc)) / (2 * a);
            if (t > 0) d.at(u, v) = float(t);  // depth = z of hit = t * dir.z = t
        }
    }
    return d;
}

/// Exact ray-triangle depth through a pixel center (the rasterizer oracle).
inline double raycast_depth(const MeshInstance& inst, const CameraIntrinsics& cam, int u, int v) {
    Vector3d dir = cam.unproject(u, v, 1.0);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : inst.mesh->faces) {
        Vector3d a = inst.linear * inst.mesh->vertices[f[0]] + inst.offset;
        Vector3d b = inst.linear * inst.mesh->vertices[f[1]] + inst.offset;
        Vector3d c = inst.linear * inst.mesh->vertices[f[2]] + inst.offset;
        Vector3d e1 = b - a, e2 = c - a;
        Vector3d p = dir.cross(e2);
        double det = e1.dot(p);
        if (std::abs(det) < 1e-14) continue;
        Vector3d tv = -a;
        double w1 = tv.dot(p) / det;
        if (w1 < 0 || w1 > 1) continue;
        Vector3d q = tv.cross(e1);
        double w2 = dir.dot(q) / det;
        if (w2 < 0 || w1 + w2 > 1) continue;
        double t = e2.dot(q) / det;
        if (t > 0) best = std::min(best, t);  // depth = t since dir.z = 1
    }
    return best;
}

/// Quad (two triangles) spanning [x0,x1] x [y0,y1] at constant z.
inline TriMesh quad_at_z(double x0, double y0, double x1, double y1, double z) {
    TriMesh m;
    m.vertices = {{x0, y0, z}, {x1, y0, z}, {x1, y1, z}, {x0, y1, z}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

inline GenOptions fast_gen() {
    GenOptions opt;
    opt.width = 96;
    opt.height = 72;
    opt.focal = 72.0;
    opt.target_superpixels = 120;
    return opt;
}

/// Production-scale camera for layout tests (plane scoring is resolution
/// sensitive).
inline GenOptions layout_gen() {
    GenOptions opt;
    opt.target_superpixels = 180;
    opt.make_voxels = false;
    return opt;
}

}  // namespace dstest
