#pragma once

#include <array>
#include <vector>

#include "dscene/geometry.hpp"

namespace dscene {

struct Aabb3 {
    Vector3d lo = Vector3d::Constant(std::numeric_limits<double>::infinity());
    Vector3d hi = Vector3d::Constant(-std::numeric_limits<double>::infinity());

    void expand(const Vector3d& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    Vector3d center() const { return 0.5 * (lo + hi); }
    Vector3d extent() const { return hi - lo; }
    double diagonal() const { return (hi - lo).norm(); }
    bool valid() const { return (hi.array() >= lo.array()).all(); }
};

struct TriMesh {
    std::vector<Vector3d> vertices;
    std::vector<std::array<int, 3>> faces;

    bool empty() const { return faces.empty(); }
    Aabb3 bbox() const;
    double surface_area() const;

    void validate() const;  // throws InvalidSpec on out-of-range indices

    TriMesh transformed(const Matrix3d& linear, const Vector3d& offset) const;

    /// Appends another mesh (disjoint component).
    void append(const TriMesh& other);
};

/// Euler check V - E + F = 2 per connected component, and every undirected
/// edge shared by exactly two faces with opposite orientation.
bool is_watertight(const TriMesh& mesh);

/// Deterministic surface sampling: one sample per triangle centroid plus
/// area-proportional extras, capped at max_points total.
std::vector<Vector3d> sample_mesh_surface(const TriMesh& mesh, int max_points);

/// A mesh posed in camera space: p_cam = linear * p + offset.
struct MeshInstance {
    const TriMesh* mesh = nullptr;
    Matrix3d linear = Matrix3d::Identity();
    Vector3d offset = Vector3d::Zero();
};

}  // namespace dscene
