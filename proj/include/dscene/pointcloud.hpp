#pragma once

#include "dscene/geometry.hpp"

namespace dscene {

struct OrientedPointCloud {
    std::vector<Vector3d> points;
    std::vector<Vector3d> normals;   // unit, camera-facing (n . p < 0)
    std::vector<int32_t> pixel_index;  // row-major source pixel of each point

    size_t size() const { return points.size(); }
    bool has_normals() const { return normals.size() == points.size(); }
};

/// Pinhole back-projection of all valid pixels. Normals are left empty;
/// call estimate_normals for them.
OrientedPointCloud unproject(const DepthImage& d);

/// Least-squares plane normal over the 3D ball neighborhood of each point,
/// flipped to face the camera. Points with fewer than 3 neighbors (self
/// included) or a degenerate neighborhood are dropped from the output.
OrientedPointCloud estimate_normals(const OrientedPointCloud& pc, double radius = 0.05);

}  // namespace dscene
