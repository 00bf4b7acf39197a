#include "dscene/retrieval.hpp"

#include <algorithm>
#include <unordered_map>

namespace dscene {

int normal_direction_bin(const Vector3d& n) {
    int primary = 0;
    Vector3d a = n.cwiseAbs();
    if (a.y() > a.x() && a.y() >= a.z())
        primary = 1;
    else if (a.z() > a.x() && a.z() > a.y())
        primary = 2;
    int primary_code = primary * 2 + (n[primary] < 0 ? 1 : 0);

    int d1 = primary == 0 ? 1 : 0;
    int d2 = primary == 2 ? 1 : 2;
    int sel = a[d1] >= a[d2] ? d1 : d2;
    int secondary_code = (sel == d2 ? 2 : 0) + (n[sel] < 0 ? 1 : 0);
    return primary_code * 4 + secondary_code;
}

RegionFeatures extract_region_features(const RegionProposal& region, const DepthImage& d,
                                       const OrientedPointCloud& pc_room) {
    if (!pc_room.has_normals()) throw InvalidSpec("point cloud must carry normals");

    // Map pixel -> point index for the region's pixels.
    std::unordered_map<int32_t, int> by_pixel;
    by_pixel.reserve(pc_room.size());
    for (int i = 0; i < int(pc_room.size()); ++i) by_pixel.emplace(pc_room.pixel_index[i], i);

    RegionFeatures feat;
    auto& v = feat.v;

    int W = d.width(), H = d.height();
    int u_lo = W, u_hi = -1, v_lo = H, v_hi = -1;
    Aabb3 box3;
    double depth_sum = 0.0;
    int n_valid = 0;
    for (uint32_t px : region.pixels) {
        int u = int(px % uint32_t(W)), row = int(px / uint32_t(W));
        u_lo = std::min(u_lo, u);
        u_hi = std::max(u_hi, u);
        v_lo = std::min(v_lo, row);
        v_hi = std::max(v_hi, row);
        float z = d.depth[px];
        if (!DepthImage::valid_value(z)) continue;
        ++n_valid;
        depth_sum += z;
        auto it = by_pixel.find(int32_t(px));
        if (it == by_pixel.end()) continue;
        int i = it->second;
        box3.expand(pc_room.points[i]);
        v[normal_direction_bin(pc_room.normals[i])] += 1.0;
    }
    if (n_valid < 10) throw TooFewPoints("region has fewer than 10 valid depth pixels");

    double hist_sum = v.head(RegionFeatures::kNormalBins).sum();
    if (hist_sum > 0) v.head(RegionFeatures::kNormalBins) /= hist_sum;

    v[24] = double(u_lo) / W;
    v[25] = double(v_lo) / H;
    v[26] = double(u_hi - u_lo + 1) / W;
    v[27] = double(v_hi - v_lo + 1) / H;

    if (box3.valid()) {
        Vector3d dims = box3.extent(), c = box3.center();
        for (int i = 0; i < 3; ++i) {
            v[28 + i] = dims[i];
            v[31 + i] = c[i];
        }
    }

    // Color histogram stays zero on depth-only data (indices 34..57).

    double scene_sum = 0.0;
    size_t scene_n = 0;
    for (float z : d.depth) {
        if (DepthImage::valid_value(z)) {
            scene_sum += z;
            ++scene_n;
        }
    }
    double scene_mean = scene_n ? scene_sum / double(scene_n) : 1.0;
    v[58] = (depth_sum / n_valid) / scene_mean;
    return feat;
}

namespace {

// Symmetric inverse square root via eigendecomposition; throws RankDeficient
// on non-positive spectra.
Eigen::MatrixXd inv_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    if (eig.info() != Eigen::Success) throw RankDeficient("eigendecomposition failed");
    Eigen::VectorXd ev = eig.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (!(ev[i] > 0) || !std::isfinite(ev[i]))
            throw RankDeficient("covariance not positive definite after regularization");
        ev[i] = 1.0 / std::sqrt(ev[i]);
    }
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

CcaResult fit_cca_full(const Eigen::MatrixXd& X, const std::vector<int>& labels, int num_classes,
                       int k, const CcaParams& params) {
    const int N = int(X.rows()), D = int(X.cols()), C = num_classes;
    if (int(labels.size()) != N) throw DimensionMismatch("labels vs rows");
    if (N <= D + C) throw InsufficientData("need more samples than feature+class dimensions");
    if (k < 1 || k > std::min(D, C - 1)) throw InvalidSpec("rank k out of range");
    std::vector<int> counts(C, 0);
    for (int l : labels) {
        if (l < 0 || l >= C) throw InvalidSpec("label out of range");
        counts[l]++;
    }
    for (int c = 0; c < C; ++c)
        if (counts[c] < 2) throw InsufficientData("every class needs at least 2 samples");

    MetricModel model;
    model.mean = X.colwise().mean();
    Eigen::MatrixXd Xc = X.rowwise() - model.mean.transpose();
    model.stddev = (Xc.array().square().colwise().mean()).sqrt().matrix();
    for (int j = 0; j < D; ++j) model.stddev[j] = std::max(model.stddev[j], 1e-9);
    Eigen::MatrixXd Xs = Xc.array().rowwise() / model.stddev.transpose().array();

    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(N, C);
    for (int i = 0; i < N; ++i) Z(i, labels[i]) = 1.0;
    Eigen::RowVectorXd z_mean = Z.colwise().mean();
    Eigen::MatrixXd Zc = Z.rowwise() - z_mean;

    Eigen::MatrixXd Sxx = Xs.transpose() * Xs / N + params.ridge * Eigen::MatrixXd::Identity(D, D);
    Eigen::MatrixXd Szz = Zc.transpose() * Zc / N + params.ridge * Eigen::MatrixXd::Identity(C, C);
    Eigen::MatrixXd Sxz = Xs.transpose() * Zc / N;

    Eigen::MatrixXd wx = inv_sqrt(Sxx);
    Eigen::MatrixXd wz = inv_sqrt(Szz);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(wx * Sxz * wz, Eigen::ComputeThinU | Eigen::ComputeThinV);

    CcaResult result;
    result.correlations = svd.singularValues().head(k);
    result.alpha = wx * svd.matrixU().leftCols(k);

    Eigen::MatrixXd alpha_scaled = result.alpha;
    if (params.scale_by_correlation)
        alpha_scaled = result.alpha * result.correlations.asDiagonal();
    model.W = alpha_scaled * alpha_scaled.transpose();
    model.rank = k;
    result.model = std::move(model);
    return result;
}

MetricModel fit_cca(const Eigen::MatrixXd& X, const std::vector<int>& labels, int num_classes,
                    int k, const CcaParams& params) {
    return fit_cca_full(X, labels, num_classes, k, params).model;
}

double metric_distance(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                       const MetricModel& m) {
    if (x1.size() != x2.size() || x1.size() != m.W.rows())
        throw DimensionMismatch("metric_distance inputs");
    Eigen::VectorXd diff = m.standardize(x1) - m.standardize(x2);
    double q = diff.dot(m.W * diff);
    return std::sqrt(std::max(q, 0.0));
}

std::vector<std::pair<int, double>> retrieve_topk(const RegionFeatures& query,
                                                  const ExemplarLibrary& lib,
                                                  const MetricModel& m, int k) {
    if (lib.entries.empty()) throw InvalidSpec("empty exemplar library");
    if (k < 1) throw InvalidSpec("k must be >= 1");
    std::vector<std::pair<int, double>> scored;
    scored.reserve(lib.entries.size());
    for (int i = 0; i < int(lib.entries.size()); ++i)
        scored.emplace_back(i, metric_distance(query.v, lib.entries[i].features.v, m));
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second < b.second; });
    if (int(scored.size()) > k) scored.resize(k);
    return scored;
}

Eigen::MatrixXd topk_confusion(const Eigen::MatrixXd& queries, const std::vector<int>& query_labels,
                               const Eigen::MatrixXd& lib, const std::vector<int>& lib_labels,
                               int num_classes, const MetricModel& m, int K) {
    const int C = num_classes;
    Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(C, C);
    Eigen::VectorXd row_counts = Eigen::VectorXd::Zero(C);

    for (int q = 0; q < int(queries.rows()); ++q) {
        std::vector<std::pair<int, double>> scored;
        scored.reserve(lib.rows());
        for (int i = 0; i < int(lib.rows()); ++i) {
            Eigen::VectorXd diff = m.standardize(queries.row(q)) - m.standardize(lib.row(i));
            double d = std::sqrt(std::max(diff.dot(m.W * diff), 0.0));
            scored.emplace_back(i, d);
        }
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.second < b.second; });
        int top = std::min<int>(K, int(scored.size()));
        int truth = query_labels[q];
        bool hit = false;
        for (int i = 0; i < top; ++i)
            if (lib_labels[scored[i].first] == truth) {
                hit = true;
                break;
            }
        if (hit)
            confusion(truth, truth) += 1.0;
        else
            confusion(truth, lib_labels[scored[0].first]) += 1.0;
        row_counts[truth] += 1.0;
    }
    for (int c = 0; c < C; ++c)
        if (row_counts[c] > 0) confusion.row(c) /= row_counts[c];
    return confusion;
}

}  // namespace dscene
