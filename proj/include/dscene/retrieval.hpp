#pragma once

#include <Eigen/Dense>
#include <string>

#include "dscene/manhattan.hpp"
#include "dscene/mesh.hpp"
#include "dscene/proposals.hpp"

namespace dscene {

/// Fixed-layout region descriptor:
///   [0, 24)   surface-normal direction histogram (room frame), L1-normalized
///   [24, 28)  2D bounding box x, y, w, h normalized by image size
///   [28, 34)  3D bounding box dims + centroid (room frame, meters)
///   [34, 58)  color histogram (all zeros on depth-only data)
///   [58]      relative depth (region mean depth / scene mean depth)
struct RegionFeatures {
    static constexpr int kNormalBins = 24;
    static constexpr int kColorBins = 24;
    static constexpr int kDim = kNormalBins + 4 + 6 + kColorBins + 1;

    Eigen::VectorXd v = Eigen::VectorXd::Zero(kDim);
};

/// Direction histogram bin: dominant signed axis (6) x secondary signed axis
/// among the remaining two dimensions (4).
int normal_direction_bin(const Vector3d& n);

/// Extracts features for a region of the depth image. pc_room must carry
/// normals and be in room coordinates. Throws TooFewPoints below 10 valid
/// depth pixels.
RegionFeatures extract_region_features(const RegionProposal& region, const DepthImage& d,
                                       const OrientedPointCloud& pc_room);

struct MetricModel {
    Eigen::MatrixXd W;       // D x D, PSD
    Eigen::VectorXd mean;    // feature standardization
    Eigen::VectorXd stddev;
    int rank = 0;

    Eigen::VectorXd standardize(const Eigen::VectorXd& x) const {
        return (x - mean).cwiseQuotient(stddev);
    }
};

struct CcaParams {
    double ridge = 1e-4;
    bool scale_by_correlation = true;
};

/// Canonical correlation between features X (N x D) and one-hot class labels;
/// returns W = alpha alpha^T over the top-k X-side directions.
MetricModel fit_cca(const Eigen::MatrixXd& X, const std::vector<int>& labels, int num_classes,
                    int k, const CcaParams& params = {});

/// Canonical correlations found by the last fit (diagnostics / tests).
struct CcaResult {
    MetricModel model;
    Eigen::VectorXd correlations;
    Eigen::MatrixXd alpha;  // D x k, X-side directions (unscaled)
};
CcaResult fit_cca_full(const Eigen::MatrixXd& X, const std::vector<int>& labels, int num_classes,
                       int k, const CcaParams& params = {});

double metric_distance(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                       const MetricModel& m);

struct ExemplarEntry {
    RegionFeatures features;
    std::string label;
    TriMesh mesh;
    Vector3d scale_meta = Vector3d::Ones();
    std::string mesh_ref;  // how to re-create / load the mesh
};

struct ExemplarLibrary {
    std::vector<ExemplarEntry> entries;
};

/// Exact k-NN by linear scan, ascending distance, ties by library index.
std::vector<std::pair<int, double>> retrieve_topk(const RegionFeatures& query,
                                                  const ExemplarLibrary& lib,
                                                  const MetricModel& m, int k);

/// Top-K confusion over integer class labels: a query counts on the diagonal
/// if its class appears in the top K, otherwise against the top-1 class.
/// Rows are normalized by per-class query counts.
Eigen::MatrixXd topk_confusion(const Eigen::MatrixXd& queries, const std::vector<int>& query_labels,
                               const Eigen::MatrixXd& lib, const std::vector<int>& lib_labels,
                               int num_classes, const MetricModel& m, int K);

}  // namespace dscene
