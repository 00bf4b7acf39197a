#pragma once

#include "dscene/layout.hpp"
#include "dscene/proposals.hpp"
#include "dscene/render.hpp"
#include "dscene/retrieval.hpp"

namespace dscene {

/// Similarity transform in room coordinates: isotropic scale, yaw about the
/// vertical axis, then translation.
struct Transform {
    double scale = 1.0;
    double yaw = 0.0;  // radians, about room +y
    Vector3d translation = Vector3d::Zero();

    Matrix3d rotation() const {
        double c = std::cos(yaw), s = std::sin(yaw);
        Matrix3d r;
        r << c, 0, s, 0, 1, 0, -s, 0, c;
        return r;
    }
    Matrix3d linear() const { return scale * rotation(); }
    Vector3d apply(const Vector3d& p) const { return linear() * p + translation; }
};

/// Posed mesh in camera space for rendering a room-frame model.
MeshInstance instance_in_camera(const TriMesh& mesh, const Transform& t,
                                const ManhattanFrame& frame);

struct CandidateObject {
    int region_id = -1;
    int library_id = -1;
    int retrieval_rank = 0;
    TriMesh model;  // canonical (library) frame
    Transform transform;
    double fitting_cost = -1.0;
};

struct FitParams {
    double c_missing = 0.3;
    /// Which rendered-vs-observed side the out-of-region term penalizes:
    /// "front" charges surface rendered in front of the observation (space
    /// known to be empty), "behind" charges surface rendered behind it.
    bool penalize_in_front = true;
};

/// Per-pixel fitting cost of a rendered model against the observed depth:
/// in-region absolute depth error, a constant charge for region pixels the
/// render misses, and the out-of-region protrusion term.
double fitting_cost(const TriMesh& model, const Transform& t, const PixelMask& region,
                    const DepthImage& d, const ManhattanFrame& frame,
                    const FitParams& params = {});

struct IcpParams {
    int max_iterations = 15;
    double translation_tolerance = 1e-3;  // meters
    double max_pair_distance = 0.3;       // correspondence rejection
};

/// Translation-only ICP: moves the model samples so their nearest-neighbor
/// offsets to the region points average to zero. Returns the translation
/// delta to add to the initial transform.
Vector3d icp_translation(const std::vector<Vector3d>& region_points,
                         const std::vector<Vector3d>& model_samples_posed,
                         const IcpParams& params = {});

struct AlignParams {
    std::vector<double> scale_factors{0.7, 0.85, 1.0, 1.15, 1.3, 1.5};
    std::vector<double> yaw_grid_deg{-90, -45, 0, 45, 90};
    double scale_min = 0.25, scale_max = 4.0;
    int model_samples = 2000;
    int region_icp_points = 300;
    IcpParams icp;
    FitParams fit;
};

/// Initial placement: model bounding-box centroid on the region centroid at
/// the bbox-diagonal scale ratio, yaw 0.
Transform initial_transform(const TriMesh& model, const std::vector<Vector3d>& region_points,
                            const AlignParams& params = {});

/// Enumerates the scale x yaw grid, solves translation by ICP for each cell,
/// and keeps the transform with the lowest fitting cost (never worse than the
/// initialization). Throws DegenerateRegion below 10 region points.
CandidateObject align_candidate(const CandidateObject& candidate,
                                const std::vector<Vector3d>& region_points_room,
                                const PixelMask& region, const DepthImage& d,
                                const ManhattanFrame& frame, const AlignParams& params = {});

/// Scores candidates at their initialization transform, keeps the best
/// `keep`, and aligns those. Output preserves retrieval-rank order.
std::vector<CandidateObject> prune_candidates(std::vector<CandidateObject> candidates,
                                              const std::vector<Vector3d>& region_points_room,
                                              const PixelMask& region, const DepthImage& d,
                                              const ManhattanFrame& frame, int keep = 3,
                                              const AlignParams& params = {}, int threads = 1);

/// Region pixels back-projected into room coordinates.
std::vector<Vector3d> region_points_room(const RegionProposal& region, const DepthImage& d,
                                         const ManhattanFrame& frame);

}  // namespace dscene
