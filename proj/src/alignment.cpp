#include "dscene/alignment.hpp"

#include <unordered_map>

#include "dscene/parallel.hpp"

namespace dscene {

MeshInstance instance_in_camera(const TriMesh& mesh, const Transform& t,
                                const ManhattanFrame& frame) {
    MeshInstance inst;
    inst.mesh = &mesh;
    inst.linear = frame.rotation.transpose() * t.linear();
    inst.offset = frame.rotation.transpose() * t.translation;
    return inst;
}

double fitting_cost(const TriMesh& model, const Transform& t, const PixelMask& region,
                    const DepthImage& d, const ManhattanFrame& frame, const FitParams& params) {
    MeshInstance inst = instance_in_camera(model, t, frame);
    DepthRender render = render_depth(std::span(&inst, 1), d.cam);

    double cost = 0.0;
    size_t n = d.size();
    for (size_t j = 0; j < n; ++j) {
        bool in_region = region.get(j);
        bool rendered = render.covered(j);
        if (in_region && rendered) {
            float obs = d.depth[j];
            if (DepthImage::valid_value(obs)) cost += std::abs(double(obs) - double(render.depth[j]));
        } else if (in_region && !rendered) {
            cost += params.c_missing;
        } else if (!in_region && rendered) {
            float obs = d.depth[j];
            if (!DepthImage::valid_value(obs)) continue;
            double diff = params.penalize_in_front ? double(obs) - double(render.depth[j])
                                                   : double(render.depth[j]) - double(obs);
            cost += std::max(diff, 0.0);
        }
    }
    return cost;
}

namespace {

// Uniform hash grid over 3D points for nearest-within-radius queries.
class PointGrid {
public:
    PointGrid(const std::vector<Vector3d>& pts, double cell) : pts_(pts), cell_(cell) {
        cells_.reserve(pts.size());
        for (int i = 0; i < int(pts.size()); ++i) {
            cells_[key(pts[i])].push_back(i);
            bbox_.expand(pts[i]);
        }
    }

    /// Index of the nearest point within max_dist, or -1. Searches outward
    /// in Chebyshev shells and stops once closer shells cannot win.
    int nearest(const Vector3d& q, double max_dist) const {
        // Queries far from every point are common while a bad pose is being
        // probed; reject them against the bounding box first.
        Vector3d clamped = q.cwiseMax(bbox_.lo).cwiseMin(bbox_.hi);
        if ((q - clamped).squaredNorm() > max_dist * max_dist) return -1;
        int max_reach = int(std::ceil(max_dist / cell_));
        int64_t kx = coord(q.x()), ky = coord(q.y()), kz = coord(q.z());
        int best = -1;
        double best_d2 = max_dist * max_dist;
        auto scan_cell = [&](int64_t x, int64_t y, int64_t z) {
            auto it = cells_.find(pack(x, y, z));
            if (it == cells_.end()) return;
            for (int i : it->second) {
                double d2 = (pts_[i] - q).squaredNorm();
                if (d2 < best_d2 || (d2 == best_d2 && (best < 0 || i < best))) {
                    best_d2 = d2;
                    best = i;
                }
            }
        };
        for (int r = 0; r <= max_reach; ++r) {
            if (best >= 0 && r >= 2) {
                double ring_min = (r - 1) * cell_;
                if (ring_min * ring_min > best_d2) break;
            }
            if (r == 0) {
                scan_cell(kx, ky, kz);
                continue;
            }
            for (int dx = -r; dx <= r; ++dx) {
                for (int dy = -r; dy <= r; ++dy) {
                    if (std::max(std::abs(dx), std::abs(dy)) == r) {
                        for (int dz = -r; dz <= r; ++dz) scan_cell(kx + dx, ky + dy, kz + dz);
                    } else {
                        scan_cell(kx + dx, ky + dy, kz - r);
                        scan_cell(kx + dx, ky + dy, kz + r);
                    }
                }
            }
        }
        return best;
    }

private:
    int64_t coord(double x) const { return int64_t(std::floor(x / cell_)); }
    uint64_t key(const Vector3d& p) const { return pack(coord(p.x()), coord(p.y()), coord(p.z())); }
    static uint64_t pack(int64_t x, int64_t y, int64_t z) {
        return (uint64_t(x) & 0x1FFFFF) | ((uint64_t(y) & 0x1FFFFF) << 21) |
               ((uint64_t(z) & 0x1FFFFF) << 42);
    }
    const std::vector<Vector3d>& pts_;
    double cell_;
    Aabb3 bbox_;
    std::unordered_map<uint64_t, std::vector<int>> cells_;
};

std::vector<Vector3d> subsample(const std::vector<Vector3d>& pts, int max_count) {
    if (int(pts.size()) <= max_count) return pts;
    std::vector<Vector3d> out;
    out.reserve(max_count);
    double stride = double(pts.size()) / max_count;
    for (int i = 0; i < max_count; ++i) out.push_back(pts[size_t(i * stride)]);
    return out;
}

}  // namespace

Vector3d icp_translation(const std::vector<Vector3d>& region_points,
                         const std::vector<Vector3d>& model_samples_posed,
                         const IcpParams& params) {
    if (region_points.empty() || model_samples_posed.empty()) return Vector3d::Zero();
    // Cell size tracks the sample spacing so ring searches stay shallow even
    // for large posed models.
    Aabb3 sample_box;
    for (const auto& s : model_samples_posed) sample_box.expand(s);
    double cell = std::clamp(sample_box.diagonal() / 20.0, params.max_pair_distance / 3.0,
                             params.max_pair_distance);
    PointGrid grid(model_samples_posed, std::max(cell, 1e-3));
    Vector3d total = Vector3d::Zero();
    double prev_msd = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < params.max_iterations; ++iter) {
        Vector3d sum = Vector3d::Zero();
        double sq = 0.0;
        int n = 0;
        for (const auto& p : region_points) {
            int j = grid.nearest(p - total, params.max_pair_distance);
            if (j < 0) continue;
            Vector3d offset = (p - total) - model_samples_posed[j];
            sum += offset;
            sq += offset.squaredNorm();
            ++n;
        }
        if (n == 0) break;
        Vector3d delta = sum / double(n);
        total += delta;
        if (delta.norm() < params.translation_tolerance) break;
        // Stalled correspondences cannot improve a translation-only fit.
        double msd = sq / double(n);
        if (msd > prev_msd - 1e-8) break;
        prev_msd = msd;
    }
    return total;
}

Transform initial_transform(const TriMesh& model, const std::vector<Vector3d>& region_points,
                            const AlignParams& params) {
    Aabb3 model_box = model.bbox();
    Aabb3 region_box;
    Vector3d centroid = Vector3d::Zero();
    for (const auto& p : region_points) {
        region_box.expand(p);
        centroid += p;
    }
    centroid /= double(region_points.size());

    Transform t;
    double model_diag = model_box.diagonal();
    t.scale = model_diag > 1e-9 ? region_box.diagonal() / model_diag : 1.0;
    t.scale = std::clamp(t.scale, params.scale_min, params.scale_max);
    t.yaw = 0.0;
    t.translation = centroid - t.linear() * model_box.center();
    return t;
}

CandidateObject align_candidate(const CandidateObject& candidate,
                                const std::vector<Vector3d>& region_points_room,
                                const PixelMask& region, const DepthImage& d,
                                const ManhattanFrame& frame, const AlignParams& params) {
    if (region_points_room.size() < 10)
        throw DegenerateRegion("region has fewer than 10 valid depth points");

    std::vector<Vector3d> samples = sample_mesh_surface(candidate.model, params.model_samples);
    std::vector<Vector3d> icp_points = subsample(region_points_room, params.region_icp_points);

    Transform init = initial_transform(candidate.model, region_points_room, params);
    Vector3d centroid = Vector3d::Zero();
    for (const auto& p : region_points_room) centroid += p;
    centroid /= double(region_points_room.size());
    Vector3d model_center = candidate.model.bbox().center();

    CandidateObject best = candidate;
    best.transform = init;
    best.fitting_cost = fitting_cost(candidate.model, init, region, d, frame, params.fit);

    for (size_t si = 0; si < params.scale_factors.size(); ++si) {
        for (size_t yi = 0; yi < params.yaw_grid_deg.size(); ++yi) {
            Transform t;
            t.scale = std::clamp(init.scale * params.scale_factors[si], params.scale_min,
                                 params.scale_max);
            t.yaw = params.yaw_grid_deg[yi] * 3.14159265358979323846 / 180.0;
            t.translation = centroid - t.linear() * model_center;

            // Pose samples once; ICP only shifts the translation.
            std::vector<Vector3d> posed(samples.size());
            Matrix3d lin = t.linear();
            for (size_t i = 0; i < samples.size(); ++i) posed[i] = lin * samples[i] + t.translation;
            t.translation += icp_translation(icp_points, posed, params.icp);

            double cost = fitting_cost(candidate.model, t, region, d, frame, params.fit);
            if (cost < best.fitting_cost) {
                best.transform = t;
                best.fitting_cost = cost;
            }
        }
    }
    return best;
}

std::vector<CandidateObject> prune_candidates(std::vector<CandidateObject> candidates,
                                              const std::vector<Vector3d>& region_points_room,
                                              const PixelMask& region, const DepthImage& d,
                                              const ManhattanFrame& frame, int keep,
                                              const AlignParams& params, int threads) {
    if (candidates.empty()) throw InvalidSpec("no candidates to prune");
    if (region_points_room.size() < 10)
        throw DegenerateRegion("region has fewer than 10 valid depth points");

    std::vector<double> init_cost(candidates.size());
    parallel_for(int64_t(candidates.size()), threads, [&](int64_t i) {
        Transform init = initial_transform(candidates[i].model, region_points_room, params);
        init_cost[i] = fitting_cost(candidates[i].model, init, region, d, frame, params.fit);
    });

    std::vector<int> order(candidates.size());
    for (int i = 0; i < int(order.size()); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return init_cost[a] < init_cost[b]; });
    if (int(order.size()) > keep) order.resize(keep);
    std::sort(order.begin(), order.end());  // retrieval-rank order

    std::vector<CandidateObject> aligned(order.size());
    parallel_for(int64_t(order.size()), threads, [&](int64_t i) {
        aligned[i] =
            align_candidate(candidates[order[i]], region_points_room, region, d, frame, params);
    });
    return aligned;
}

std::vector<Vector3d> region_points_room(const RegionProposal& region, const DepthImage& d,
                                         const ManhattanFrame& frame) {
    std::vector<Vector3d> pts;
    for (uint32_t px : region.pixels) {
        int u = int(px % uint32_t(d.width()));
        int v = int(px / uint32_t(d.width()));
        float z = d.at(u, v);
        if (!DepthImage::valid_value(z)) continue;
        pts.push_back(frame.to_room(d.cam.unproject(u, v, z)));
    }
    return pts;
}

}  // namespace dscene
