#pragma once

#include <array>
#include <optional>
#include <string>

#include "dscene/manhattan.hpp"
#include "dscene/mesh.hpp"
#include "dscene/pointcloud.hpp"

namespace dscene {

enum class LayoutCategory : uint8_t { Floor = 0, Ceiling, LeftWall, RightWall, FrontWall };
constexpr int kLayoutCategories = 5;

const char* layout_category_name(LayoutCategory c);
std::optional<LayoutCategory> layout_category_from_name(const std::string& name);

/// Room-axis of the plane a category lives on (floor/ceiling on Y, left and
/// right walls on X, front wall on Z).
Axis layout_category_axis(LayoutCategory c);

/// Surface normal of a category's plane, pointing into the room (toward the
/// camera) in room coordinates: floor (0,-1,0), ceiling (0,1,0), left wall
/// (1,0,0), right wall (-1,0,0), front wall (0,0,-1).
Vector3d layout_category_normal(LayoutCategory c);

struct PlaneHypothesis {
    Axis axis = Axis::Y;
    double offset = 0.0;  // plane is { p : p[axis] == offset }, room coords
    LayoutCategory category = LayoutCategory::Floor;
    double score = 0.0;

    Vector3d normal() const { return layout_category_normal(category); }
};

struct LayoutSurface {
    PlaneHypothesis plane;
    Rect2 extent;                // in-plane rectangle, see inplane_axes()
    std::vector<Rect2> cutouts;  // inside extent, pairwise disjoint
};

/// Per-pixel probabilities over {floor, wall, ceiling, object}.
struct PixelLabelProbs {
    int width = 0, height = 0;
    std::vector<float> floor, wall, ceiling, object;

    static PixelLabelProbs uniform(int w, int h);
    /// Splits 1 - P_object evenly over the three layout channels.
    static PixelLabelProbs from_object_prob(int w, int h, const std::vector<float>& p_object);

    std::array<float, 4> at(size_t idx) const {
        return {floor[idx], wall[idx], ceiling[idx], object[idx]};
    }
    float object_at(size_t idx) const { return object[idx]; }
};

struct AffinityParams {
    double sigma_p = 0.025;
    double sigma_n = 0.0799;
};

/// Probability that an oriented point belongs to a plane: the product of a
/// Gaussian in depth-relative point-plane distance and a Gaussian in angular
/// normal difference (radians).
double point_plane_affinity(const Vector3d& p, const Vector3d& n, const PlaneHypothesis& plane,
                            const AffinityParams& params = {});

struct PlaneFeatureVector {
    std::array<double, 12> f{};  // f[0] = f1 ... f[11] = f12
};

/// Histogram density over training plane offsets, normalized to peak 1.
struct PositionPrior {
    double min_offset = 0.0;
    double bin_width = 0.1;
    std::vector<double> density;

    static PositionPrior estimate(const std::vector<double>& offsets, double bin_width = 0.1);
    double at(double offset) const;
};

/// Feature vector for one candidate plane; pc must be in room coordinates
/// with pixel_index mapping into `labels`.
PlaneFeatureVector plane_feature_vector(const PlaneHypothesis& plane,
                                        const OrientedPointCloud& pc_room,
                                        const PixelLabelProbs& labels, const PositionPrior& prior,
                                        const AffinityParams& params = {});

/// Linear scorer over the 12 features plus bias, applied to raw features.
struct PlaneClassifier {
    std::array<double, 13> w{};  // w[0..11] feature weights, w[12] bias

    double score(const PlaneFeatureVector& fv) const {
        double s = w[12];
        for (int i = 0; i < 12; ++i) s += w[i] * fv.f[i];
        return s;
    }
};

/// Regularized logistic regression by full-batch gradient descent (500
/// epochs, L2 1e-3, standardized features folded back into the weights).
PlaneClassifier train_plane_classifier(
    const std::vector<std::pair<PlaneFeatureVector, bool>>& training);

struct LayoutModel {
    std::array<PlaneClassifier, kLayoutCategories> classifiers;
    std::array<PositionPrior, kLayoutCategories> priors;
};

struct PlaneDetectionParams {
    double sweep_step = 0.02;
    double nms_radius = 0.15;
    double score_threshold = 0.0;
    double min_camera_distance = 0.2;  // candidate planes closer than this to the camera are skipped
    AffinityParams affinity;
    int threads = 1;
};

/// Shared feature evaluator for plane sweeps. Points are pre-filtered per
/// category by normal agreement (beyond ~5 sigma the affinity underflows),
/// so candidate features cost O(points near the plane). Training and
/// detection both use this path so classifier inputs match.
class PlaneSweeper {
public:
    PlaneSweeper(const OrientedPointCloud& pc_cam, const PixelLabelProbs& labels,
                 const ManhattanFrame& frame, const AffinityParams& params = {});

    PlaneFeatureVector features(const PlaneHypothesis& plane, const PositionPrior& prior) const;

    /// Coordinate range of the cloud along an axis (candidate sweep bounds).
    std::pair<double, double> axis_range(Axis axis) const;

    const OrientedPointCloud& cloud_room() const { return pc_room_; }

private:
    struct CategoryPoints {
        std::vector<double> along;
        std::vector<double> norm;
        std::vector<double> angle;
        std::vector<std::array<float, 4>> probs;
    };
    OrientedPointCloud pc_room_;
    std::array<CategoryPoints, kLayoutCategories> per_category_;
    std::array<std::vector<double>, 3> along_all_;
    AffinityParams params_;
    double max_norm_ = 0.0;
};

/// Sweeps candidate offsets per category, scores with the matching
/// classifier, applies per-axis NMS and keeps survivors above threshold.
/// Throws NoFloorFound when no floor survives.
std::vector<PlaneHypothesis> detect_layout_planes(const OrientedPointCloud& pc_cam,
                                                  const PixelLabelProbs& labels,
                                                  const LayoutModel& model,
                                                  const ManhattanFrame& frame,
                                                  const PlaneDetectionParams& params = {});

struct ExtentParams {
    double behind_fraction = 0.05;  // cutout evidence: observed depth 5% behind the plane
    int min_component_pixels = 50;
    double support_affinity = 0.5;  // points with at least this affinity span the footprint
};

/// Maximum extent clipped by detected perpendicular planes (falling back to
/// point-cloud bounds) plus rectangular cutouts from connected components of
/// pixels observed behind the plane. pc_room_cache, when given, must be the
/// room-frame oriented cloud of d (avoids recomputing normals per surface).
LayoutSurface estimate_surface_extent(const PlaneHypothesis& plane,
                                      const std::vector<PlaneHypothesis>& all_planes,
                                      const DepthImage& d, const ManhattanFrame& frame,
                                      const ExtentParams& params = {},
                                      const OrientedPointCloud* pc_room_cache = nullptr);

/// Triangulates extent minus cutouts (room coordinates).
TriMesh layout_surface_mesh(const LayoutSurface& surface);

/// Merges overlapping rectangles into their bounding boxes until disjoint.
std::vector<Rect2> merge_overlapping_rects(std::vector<Rect2> rects);

}  // namespace dscene
