#pragma once

#include "dscene/pointcloud.hpp"

namespace dscene {

/// Rotation from camera coordinates to room-axis coordinates. Canonicalized
/// so that the room axis closest to camera-down (+y) is +y and, among the
/// remaining choices, camera-forward maps closest to +z.
struct ManhattanFrame {
    Matrix3d rotation = Matrix3d::Identity();

    Vector3d to_room(const Vector3d& p_cam) const { return rotation * p_cam; }
    Vector3d to_camera(const Vector3d& p_room) const { return rotation.transpose() * p_room; }
};

/// Mean over points of the best |n . axis| alignment for a rotation.
double manhattan_alignment_score(const OrientedPointCloud& pc, const Matrix3d& rotation);

/// Exhaustive yaw/pitch/roll grid search (5 deg) plus 0.5 deg local
/// refinement, maximizing the normal-alignment score. Throws DegenerateScene
/// when the best score per point is below 0.85 (isotropic normals reach
/// ~0.83, so anything below that bound has no orthogonal structure).
ManhattanFrame estimate_manhattan_frame(const OrientedPointCloud& pc);

/// The 24 proper rotations of the cube (entries in {-1, 0, 1}, det +1).
const std::vector<Matrix3d>& cube_rotations();

/// Rotates the point cloud into room coordinates.
OrientedPointCloud to_room_frame(const OrientedPointCloud& pc, const ManhattanFrame& frame);

}  // namespace dscene
