#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dscene/errors.hpp"

namespace dscene {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

constexpr double kMaxDepthMeters = 20.0;

// Camera convention: right-handed, x-right, y-down, z-forward. Pixel (u, v)
// unprojects at depth z to ((u - cx) z / fx, (v - cy) z / fy, z).
struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0) || !(fy > 0)) throw InvalidSpec("focal lengths must be positive");
        if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
            throw InvalidSpec("principal point outside image");
        if (width <= 0 || height <= 0) throw InvalidSpec("empty image dimensions");
    }

    Vector3d unproject(double u, double v, double z) const {
        return {(u - cx) * z / fx, (v - cy) * z / fy, z};
    }

    /// Pixel coordinates (u, v) of a camera-space point; caller checks z > 0.
    Vector2d project(const Vector3d& p) const {
        return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
    }

    bool contains(double u, double v) const {
        return u >= 0 && u <= width - 1 && v >= 0 && v <= height - 1;
    }
};

// Depth map in meters. Missing measurements are stored as NaN internally;
// files use the 0.0 sentinel (see formats.hpp).
struct DepthImage {
    CameraIntrinsics cam;
    std::vector<float> depth;  // row-major, cam.width * cam.height

    DepthImage() = default;
    DepthImage(const CameraIntrinsics& c, float fill = missing())
        : cam(c), depth(size_t(c.width) * size_t(c.height), fill) {}

    static float missing() { return std::numeric_limits<float>::quiet_NaN(); }

    int width() const { return cam.width; }
    int height() const { return cam.height; }
    size_t size() const { return depth.size(); }

    float& at(int u, int v) { return depth[size_t(v) * cam.width + u]; }
    float at(int u, int v) const { return depth[size_t(v) * cam.width + u]; }

    bool valid(int u, int v) const { return valid_value(at(u, v)); }
    static bool valid_value(float z) { return std::isfinite(z) && z > 0.0f; }

    size_t valid_count() const {
        size_t n = 0;
        for (float z : depth) n += valid_value(z);
        return n;
    }
};

/// Extrinsic camera pose: p_cam = rotation * (p_world - position).
struct CameraPose {
    CameraIntrinsics intrinsics;
    Matrix3d rotation = Matrix3d::Identity();
    Vector3d position = Vector3d::Zero();

    Vector3d to_camera(const Vector3d& p_world) const { return rotation * (p_world - position); }
    Vector3d to_world(const Vector3d& p_cam) const {
        return rotation.transpose() * p_cam + position;
    }
};

enum class Axis : uint8_t { X = 0, Y = 1, Z = 2 };

inline Vector3d axis_unit(Axis a) {
    Vector3d v = Vector3d::Zero();
    v[int(a)] = 1.0;
    return v;
}

/// In-plane coordinate axes for a plane perpendicular to `a`, in a fixed
/// order: X -> (y, z), Y -> (x, z), Z -> (x, y).
inline std::pair<int, int> inplane_axes(Axis a) {
    switch (a) {
        case Axis::X: return {1, 2};
        case Axis::Y: return {0, 2};
        default: return {0, 1};
    }
}

struct Rect2 {
    double u0 = 0, v0 = 0, u1 = 0, v1 = 0;

    double width() const { return u1 - u0; }
    double height() const { return v1 - v0; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool empty() const { return u1 <= u0 || v1 <= v0; }

    bool contains(double u, double v) const { return u >= u0 && u <= u1 && v >= v0 && v <= v1; }
    bool contains(const Rect2& r) const {
        return r.u0 >= u0 && r.u1 <= u1 && r.v0 >= v0 && r.v1 <= v1;
    }
    bool overlaps(const Rect2& r) const {
        return u0 < r.u1 && r.u0 < u1 && v0 < r.v1 && r.v0 < v1;
    }

    Rect2 intersect(const Rect2& r) const {
        return {std::max(u0, r.u0), std::max(v0, r.v0), std::min(u1, r.u1), std::min(v1, r.v1)};
    }
    Rect2 bounding_union(const Rect2& r) const {
        return {std::min(u0, r.u0), std::min(v0, r.v0), std::max(u1, r.u1), std::max(v1, r.v1)};
    }

    void expand(double u, double v) {
        u0 = std::min(u0, u);
        v0 = std::min(v0, v);
        u1 = std::max(u1, u);
        v1 = std::max(v1, v);
    }

    static Rect2 empty_rect() {
        constexpr double inf = std::numeric_limits<double>::infinity();
        return {inf, inf, -inf, -inf};
    }
};

/// Binary pixel mask over an image.
struct PixelMask {
    int width = 0, height = 0;
    std::vector<uint8_t> bits;

    PixelMask() = default;
    PixelMask(int w, int h) : width(w), height(h), bits(size_t(w) * size_t(h), 0) {}

    bool get(size_t idx) const { return bits[idx] != 0; }
    bool get(int u, int v) const { return bits[size_t(v) * width + u] != 0; }
    void set(size_t idx, bool on = true) { bits[idx] = on ? 1 : 0; }
    void set(int u, int v, bool on = true) { bits[size_t(v) * width + u] = on ? 1 : 0; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t b : bits) n += b != 0;
        return n;
    }
};

inline double pixel_iou(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b) {
    // Both sorted ascending.
    size_t i = 0, j = 0, inter = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

}  // namespace dscene
