#include "dscene/pointcloud.hpp"

#include <Eigen/Eigenvalues>
#include <unordered_map>

namespace dscene {

OrientedPointCloud unproject(const DepthImage& d) {
    d.cam.validate();
    OrientedPointCloud pc;
    for (int v = 0; v < d.height(); ++v) {
        for (int u = 0; u < d.width(); ++u) {
            float z = d.at(u, v);
            if (!DepthImage::valid_value(z)) continue;
            pc.points.push_back(d.cam.unproject(u, v, z));
            pc.pixel_index.push_back(v * d.width() + u);
        }
    }
    if (pc.points.empty()) throw AllPixelsMissing();
    return pc;
}

namespace {

struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    size_t operator()(const CellKey& k) const {
        uint64_t h = uint64_t(k.x) * 0x9E3779B97F4A7C15ull;
        h ^= uint64_t(k.y) * 0xC2B2AE3D27D4EB4Full;
        h ^= uint64_t(k.z) * 0x165667B19E3779F9ull;
        return size_t(h ^ (h >> 29));
    }
};

}  // namespace

OrientedPointCloud estimate_normals(const OrientedPointCloud& pc, double radius) {
    if (!(radius > 0)) throw InvalidSpec("normal estimation radius must be positive");

    // Bucket points into a grid with cell size = radius; the 27-cell stencil
    // then covers every candidate neighbor.
    std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
    auto cell_of = [&](const Vector3d& p) {
        return CellKey{int64_t(std::floor(p.x() / radius)), int64_t(std::floor(p.y() / radius)),
                       int64_t(std::floor(p.z() / radius))};
    };
    for (int i = 0; i < int(pc.points.size()); ++i) grid[cell_of(pc.points[i])].push_back(i);

    OrientedPointCloud out;
    double r2 = radius * radius;
    std::vector<int> nbrs;
    for (int i = 0; i < int(pc.points.size()); ++i) {
        const Vector3d& p = pc.points[i];
        CellKey c = cell_of(p);
        nbrs.clear();
        Vector3d mean = Vector3d::Zero();
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == grid.end()) continue;
                    for (int j : it->second) {
                        if ((pc.points[j] - p).squaredNorm() <= r2) {
                            nbrs.push_back(j);
                            mean += pc.points[j];
                        }
                    }
                }
        if (nbrs.size() < 3) continue;
        mean /= double(nbrs.size());

        Matrix3d cov = Matrix3d::Zero();
        for (int j : nbrs) {
            Vector3d q = pc.points[j] - mean;
            cov += q * q.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
        if (eig.info() != Eigen::Success) continue;
        // Smallest-eigenvalue direction; reject rank-deficient neighborhoods
        // (all points collinear gives two near-zero eigenvalues).
        if (eig.eigenvalues()[1] <= 1e-12 * std::max(1.0, eig.eigenvalues()[2])) continue;
        Vector3d n = eig.eigenvectors().col(0);
        double nn = n.norm();
        if (!(nn > 0) || !n.allFinite()) continue;
        n /= nn;
        if (n.dot(p) > 0) n = -n;  // face the camera
        out.points.push_back(p);
        out.normals.push_back(n);
        out.pixel_index.push_back(pc.pixel_index[i]);
    }
    return out;
}

}  // namespace dscene
