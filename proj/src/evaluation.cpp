#include "dscene/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <map>

#include "dscene/render.hpp"

namespace dscene {

size_t Bitset::count() const {
    size_t n = 0;
    for (uint64_t w : words) n += std::popcount(w);
    return n;
}

Bitset Bitset::operator&(const Bitset& o) const {
    Bitset out(size);
    for (size_t i = 0; i < words.size(); ++i) out.words[i] = words[i] & o.words[i];
    return out;
}

Bitset Bitset::operator|(const Bitset& o) const {
    Bitset out(size);
    for (size_t i = 0; i < words.size(); ++i) out.words[i] = words[i] | o.words[i];
    return out;
}

Bitset Bitset::and_not(const Bitset& o) const {
    Bitset out(size);
    for (size_t i = 0; i < words.size(); ++i) out.words[i] = words[i] & ~o.words[i];
    // Mask tail bits beyond size so counts stay exact.
    size_t tail = size & 63;
    if (tail && !out.words.empty()) out.words.back() &= (uint64_t(1) << tail) - 1;
    return out;
}

VoxelGrid make_voxel_grid(const Vector3d& origin, double spacing, int nx, int ny, int nz) {
    if (!(spacing > 0) || nx <= 0 || ny <= 0 || nz <= 0) throw InvalidSpec("bad voxel grid spec");
    VoxelGrid g;
    g.origin = origin;
    g.spacing = spacing;
    g.nx = nx;
    g.ny = ny;
    g.nz = nz;
    g.occupancy = Bitset(g.voxel_count());
    g.scope = Bitset(g.voxel_count());
    for (size_t i = 0; i < g.voxel_count(); ++i) g.scope.set(i);
    return g;
}

VoxelGrid make_voxel_grid_for_box(const Vector3d& lo, const Vector3d& hi, double spacing) {
    Vector3d span = hi - lo;
    return make_voxel_grid(lo, spacing, std::max(1, int(std::ceil(span.x() / spacing - 1e-9))),
                           std::max(1, int(std::ceil(span.y() / spacing - 1e-9))),
                           std::max(1, int(std::ceil(span.z() / spacing - 1e-9))));
}

namespace {

struct RowCrossings {
    std::vector<float> xs;
    bool degenerate = false;
};

// Parity crossings of the mesh against the +x ray through (y, z).
void collect_crossings(const TriMesh& mesh, double y, double z,
                       std::vector<double>& xs, bool& degenerate) {
    xs.clear();
    degenerate = false;
    for (const auto& f : mesh.faces) {
        const Vector3d& a = mesh.vertices[f[0]];
        const Vector3d& b = mesh.vertices[f[1]];
        const Vector3d& c = mesh.vertices[f[2]];
        double min_y = std::min({a.y(), b.y(), c.y()}), max_y = std::max({a.y(), b.y(), c.y()});
        double min_z = std::min({a.z(), b.z(), c.z()}), max_z = std::max({a.z(), b.z(), c.z()});
        if (y < min_y || y > max_y || z < min_z || z > max_z) continue;

        double e0 = (b.y() - a.y()) * (z - a.z()) - (b.z() - a.z()) * (y - a.y());
        double e1 = (c.y() - b.y()) * (z - b.z()) - (c.z() - b.z()) * (y - b.y());
        double e2 = (a.y() - c.y()) * (z - c.z()) - (a.z() - c.z()) * (y - c.y());
        double area = e0 + e1 + e2;
        double scale = std::max({std::abs(e0), std::abs(e1), std::abs(e2), 1e-30});
        // Hits on (or numerically near) an edge or a sliver projection flag
        // the row for a jittered retry.
        if (std::min({std::abs(e0), std::abs(e1), std::abs(e2)}) < 1e-9 * scale) degenerate = true;
        bool pos = e0 > 0 && e1 > 0 && e2 > 0;
        bool neg = e0 < 0 && e1 < 0 && e2 < 0;
        if (!pos && !neg) continue;
        if (std::abs(area) < 1e-9 * scale) {
            degenerate = true;
            continue;
        }
        double w0 = e1 / area, w1 = e2 / area, w2 = e0 / area;
        xs.push_back(w0 * a.x() + w1 * b.x() + w2 * c.x());
    }
    if (xs.size() % 2 != 0) degenerate = true;
}

void voxelize_parity(VoxelGrid& grid, const TriMesh& mesh) {
    std::vector<double> xs;
    for (int k = 0; k < grid.nz; ++k) {
        for (int j = 0; j < grid.ny; ++j) {
            double y = grid.origin.y() + (j + 0.5) * grid.spacing;
            double z = grid.origin.z() + (k + 0.5) * grid.spacing;
            bool degenerate = true;
            for (int attempt = 0; attempt < 8 && degenerate; ++attempt) {
                double dy = attempt * attempt * 1.13e-4 * grid.spacing;
                double dz = attempt * attempt * 1.71e-4 * grid.spacing;
                collect_crossings(mesh, y + dy, z + dz, xs, degenerate);
            }
            if (xs.empty()) continue;
            if (xs.size() % 2 != 0) xs.pop_back();  // give up on a pathological row
            std::sort(xs.begin(), xs.end());
            for (size_t p = 0; p + 1 < xs.size(); p += 2) {
                double span_lo = (xs[p] - grid.origin.x()) / grid.spacing - 0.5;
                double span_hi = (xs[p + 1] - grid.origin.x()) / grid.spacing - 0.5;
                int i_lo = std::max(0, int(std::ceil(span_lo)));
                int i_hi = std::min(grid.nx - 1, int(std::floor(span_hi)));
                for (int i = i_lo; i <= i_hi; ++i) grid.occupancy.set(grid.index(i, j, k));
            }
        }
    }
}

void voxelize_stamp_fill(VoxelGrid& grid, const TriMesh& mesh) {
    // Surface stamp at sub-voxel sampling, then fill interior z-columns.
    Bitset stamp(grid.voxel_count());
    double step = grid.spacing * 0.5;
    for (const auto& f : mesh.faces) {
        const Vector3d& a = mesh.vertices[f[0]];
        const Vector3d& b = mesh.vertices[f[1]];
        const Vector3d& c = mesh.vertices[f[2]];
        double len = std::max((b - a).norm(), (c - a).norm());
        int n = std::max(1, int(std::ceil(len / step)));
        for (int p = 0; p <= n; ++p) {
            for (int q = 0; q <= n - p; ++q) {
                Vector3d pt = a + (double(p) / n) * (b - a) + (double(q) / n) * (c - a);
                Vector3d g = (pt - grid.origin) / grid.spacing;
                int i = int(std::floor(g.x())), j = int(std::floor(g.y())),
                    k = int(std::floor(g.z()));
                if (i < 0 || j < 0 || k < 0 || i >= grid.nx || j >= grid.ny || k >= grid.nz)
                    continue;
                stamp.set(grid.index(i, j, k));
            }
        }
    }
    for (int j = 0; j < grid.ny; ++j) {
        for (int i = 0; i < grid.nx; ++i) {
            int first = -1, last = -1;
            for (int k = 0; k < grid.nz; ++k) {
                if (stamp.test(grid.index(i, j, k))) {
                    if (first < 0) first = k;
                    last = k;
                }
            }
            for (int k = first; k >= 0 && k <= last; ++k) grid.occupancy.set(grid.index(i, j, k));
        }
    }
}

}  // namespace

void voxelize_mesh(VoxelGrid& grid, const TriMesh& mesh_world) {
    if (mesh_world.faces.empty()) return;
    if (is_watertight(mesh_world))
        voxelize_parity(grid, mesh_world);
    else
        voxelize_stamp_fill(grid, mesh_world);
}

void apply_scope(VoxelGrid& grid, const std::vector<LayoutSurface>& surfaces,
                 const CameraPose& cam, double cutout_extension) {
    // Outermost plane per category bounds the room.
    std::array<std::optional<double>, kLayoutCategories> bound;
    for (const auto& s : surfaces) {
        int c = int(s.plane.category);
        bool outermost_is_max = s.plane.category == LayoutCategory::Floor ||
                                s.plane.category == LayoutCategory::RightWall ||
                                s.plane.category == LayoutCategory::FrontWall;
        if (!bound[c])
            bound[c] = s.plane.offset;
        else
            bound[c] = outermost_is_max ? std::max(*bound[c], s.plane.offset)
                                        : std::min(*bound[c], s.plane.offset);
    }
    auto inside_category = [&](const Vector3d& p, int skip_cat) {
        for (int c = 0; c < kLayoutCategories; ++c) {
            if (c == skip_cat || !bound[c]) continue;
            double coord = p[int(layout_category_axis(LayoutCategory(c)))];
            bool is_max_side = LayoutCategory(c) == LayoutCategory::Floor ||
                               LayoutCategory(c) == LayoutCategory::RightWall ||
                               LayoutCategory(c) == LayoutCategory::FrontWall;
            if (is_max_side ? coord > *bound[c] : coord < *bound[c]) return false;
        }
        return true;
    };
    auto in_frustum = [&](const Vector3d& p) {
        Vector3d pc = cam.to_camera(p);
        if (pc.z() <= 0) return false;
        Vector2d px = cam.intrinsics.project(pc);
        return cam.intrinsics.contains(px.x(), px.y());
    };

    Bitset scope(grid.voxel_count());
    for (int k = 0; k < grid.nz; ++k) {
        for (int j = 0; j < grid.ny; ++j) {
            for (int i = 0; i < grid.nx; ++i) {
                Vector3d p = grid.center(i, j, k);
                if (!in_frustum(p)) continue;
                size_t idx = grid.index(i, j, k);
                if (inside_category(p, -1)) {
                    scope.set(idx);
                    continue;
                }
                // Openings extend the scope behind their surface.
                for (const auto& s : surfaces) {
                    if (s.cutouts.empty()) continue;
                    double coord = p[int(s.plane.axis)];
                    double sign = s.plane.offset >= 0 ? 1.0 : -1.0;
                    double behind = sign * (coord - s.plane.offset);
                    if (behind <= 0 || behind > cutout_extension) continue;
                    if (!inside_category(p, int(s.plane.category))) continue;
                    auto [u_dim, v_dim] = inplane_axes(s.plane.axis);
                    bool in_hole = false;
                    for (const auto& cut : s.cutouts)
                        if (cut.contains(p[u_dim], p[v_dim])) {
                            in_hole = true;
                            break;
                        }
                    if (in_hole) {
                        scope.set(idx);
                        break;
                    }
                }
            }
        }
    }
    grid.scope = scope;
    grid.occupancy = grid.occupancy & grid.scope;
}

VoxelGrid voxelize_scene(const std::vector<TriMesh>& object_meshes_world,
                         const std::vector<LayoutSurface>& surfaces, const CameraPose& cam,
                         double spacing) {
    Aabb3 box;
    for (const auto& s : surfaces) {
        TriMesh m = layout_surface_mesh(s);
        for (const auto& v : m.vertices) box.expand(v);
    }
    for (const auto& m : object_meshes_world)
        for (const auto& v : m.vertices) box.expand(v);
    if (!box.valid()) throw InvalidSpec("nothing to voxelize");
    VoxelGrid grid = make_voxel_grid_for_box(box.lo - Vector3d::Constant(spacing),
                                             box.hi + Vector3d::Constant(spacing), spacing);
    for (const auto& m : object_meshes_world) voxelize_mesh(grid, m);
    apply_scope(grid, surfaces, cam);
    return grid;
}

namespace {

double voxel_depth(const VoxelGrid& g, int i, int j, int k, const CameraPose& cam) {
    return std::max(0.0, cam.to_camera(g.center(i, j, k)).z());
}

VoxelPR tolerant_pr(const VoxelGrid& grid_geometry, const Bitset& predicted, const Bitset& truth,
                    double eps_factor, const CameraPose& cam) {
    const VoxelGrid& g = grid_geometry;
    size_t n_pred = predicted.count();
    size_t n_truth = truth.count();
    if (n_pred == 0 && n_truth == 0) return {1.0, 1.0};

    Bitset recalled(g.voxel_count());
    size_t tp = 0;
    for (int k = 0; k < g.nz; ++k) {
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                size_t idx = g.index(i, j, k);
                if (!predicted.test(idx)) continue;
                double eps = eps_factor * voxel_depth(g, i, j, k, cam);
                double eps2 = eps * eps;
                int reach = int(std::floor(eps / g.spacing + 1e-12));
                bool hit = false;
                for (int dk = -reach; dk <= reach; ++dk) {
                    int kk = k + dk;
                    if (kk < 0 || kk >= g.nz) continue;
                    for (int dj = -reach; dj <= reach; ++dj) {
                        int jj = j + dj;
                        if (jj < 0 || jj >= g.ny) continue;
                        for (int di = -reach; di <= reach; ++di) {
                            int ii = i + di;
                            if (ii < 0 || ii >= g.nx) continue;
                            double d2 = double(di) * di + double(dj) * dj + double(dk) * dk;
                            if (d2 * g.spacing * g.spacing > eps2 + 1e-15) continue;
                            size_t t_idx = g.index(ii, jj, kk);
                            if (truth.test(t_idx)) {
                                hit = true;
                                recalled.set(t_idx);
                            }
                        }
                    }
                }
                if (hit) ++tp;
            }
        }
    }
    VoxelPR pr;
    pr.precision = n_pred == 0 ? 1.0 : double(tp) / double(n_pred);
    pr.recall = n_truth == 0 ? 1.0 : double(recalled.count()) / double(n_truth);
    return pr;
}

}  // namespace

VoxelPR voxel_pr(const VoxelGrid& predicted, const VoxelGrid& truth, double eps_factor,
                 const CameraPose& cam) {
    if (!predicted.same_geometry(truth)) throw GridMismatch("voxel grid geometry differs");
    Bitset domain = predicted.scope & truth.scope;
    return tolerant_pr(predicted, predicted.occupancy & domain, truth.occupancy & domain,
                       eps_factor, cam);
}

VoxelPR freespace_pr(const VoxelGrid& predicted, const VoxelGrid& truth, double eps_factor,
                     const CameraPose& cam) {
    if (!predicted.same_geometry(truth)) throw GridMismatch("voxel grid geometry differs");
    Bitset domain = predicted.scope & truth.scope;
    Bitset pred_free = domain.and_not(predicted.occupancy);
    Bitset truth_free = domain.and_not(truth.occupancy);
    return tolerant_pr(predicted, pred_free, truth_free, eps_factor, cam);
}

VoxelGrid sensor_voxels(const VoxelGrid& like, const DepthImage& d, const CameraPose& cam) {
    VoxelGrid g = make_voxel_grid(like.origin, like.spacing, like.nx, like.ny, like.nz);
    g.scope = like.scope;
    for (int k = 0; k < g.nz; ++k) {
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                Vector3d pc = cam.to_camera(g.center(i, j, k));
                if (pc.z() <= 0) continue;
                Vector2d px = cam.intrinsics.project(pc);
                int u = int(std::lround(px.x())), v = int(std::lround(px.y()));
                if (u < 0 || v < 0 || u >= d.width() || v >= d.height()) continue;
                float obs = d.at(u, v);
                if (!DepthImage::valid_value(obs)) continue;
                if (std::abs(pc.z() - double(obs)) <= 0.5 * g.spacing)
                    g.occupancy.set(g.index(i, j, k));
            }
        }
    }
    g.occupancy = g.occupancy & g.scope;
    return g;
}

// ---------------------------------------------------------------------------
// Layout and instance metrics

LayoutRender render_layout_surfaces(const std::vector<LayoutSurface>& surfaces,
                                    const CameraPose& cam) {
    std::vector<TriMesh> meshes;
    meshes.reserve(surfaces.size());
    std::vector<MeshInstance> instances;
    for (const auto& s : surfaces) meshes.push_back(layout_surface_mesh(s));
    for (auto& m : meshes) {
        MeshInstance inst;
        inst.mesh = &m;
        inst.linear = cam.rotation;
        inst.offset = -cam.rotation * cam.position;
        instances.push_back(inst);
    }
    DepthRender r = render_depth(instances, cam.intrinsics);

    LayoutRender out;
    out.width = r.width;
    out.height = r.height;
    out.depth = std::move(r.depth);
    out.label.assign(out.depth.size(), kOpeningLabel);
    for (size_t i = 0; i < out.label.size(); ++i)
        if (r.label[i] != kBackgroundLabel)
            out.label[i] = int8_t(surfaces[r.label[i]].plane.category);
    return out;
}

namespace {

SplitMetric split_rates(const std::vector<double>& err_sum, const std::vector<size_t>& n) {
    // index 0 = occluded, 1 = visible
    SplitMetric m;
    size_t total = n[0] + n[1];
    m.overall = total ? (err_sum[0] + err_sum[1]) / double(total) : 0.0;
    m.occluded = n[0] ? err_sum[0] / double(n[0]) : 0.0;
    m.visible = n[1] ? err_sum[1] / double(n[1]) : 0.0;
    return m;
}

}  // namespace

SplitMetric layout_label_error(const std::vector<int8_t>& predicted,
                               const std::vector<int8_t>& truth,
                               const std::vector<uint8_t>& object_mask) {
    if (predicted.size() != truth.size() || predicted.size() != object_mask.size())
        throw SizeMismatch("label error inputs");
    std::vector<double> err(2, 0.0);
    std::vector<size_t> n(2, 0);
    for (size_t i = 0; i < predicted.size(); ++i) {
        int split = object_mask[i] ? 0 : 1;
        ++n[split];
        if (predicted[i] != truth[i]) err[split] += 1.0;
    }
    return split_rates(err, n);
}

SplitMetric layout_depth_error(const std::vector<float>& predicted,
                               const std::vector<float>& truth,
                               const std::vector<uint8_t>& object_mask) {
    if (predicted.size() != truth.size() || predicted.size() != object_mask.size())
        throw SizeMismatch("depth error inputs");
    std::vector<double> err(2, 0.0);
    std::vector<size_t> n(2, 0);
    for (size_t i = 0; i < predicted.size(); ++i) {
        if (!std::isfinite(predicted[i]) || !std::isfinite(truth[i])) continue;
        int split = object_mask[i] ? 0 : 1;
        ++n[split];
        err[split] += std::abs(double(predicted[i]) - double(truth[i]));
    }
    return split_rates(err, n);
}

CoverageResult instance_coverage(const std::vector<uint32_t>& predicted,
                                 const std::vector<uint32_t>& truth) {
    if (predicted.size() != truth.size()) throw SizeMismatch("instance map sizes");
    std::map<uint32_t, size_t> truth_area, pred_area;
    std::map<std::pair<uint32_t, uint32_t>, size_t> inter;
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] != 0) ++truth_area[truth[i]];
        if (predicted[i] != 0) ++pred_area[predicted[i]];
        if (truth[i] != 0 && predicted[i] != 0) ++inter[{truth[i], predicted[i]}];
    }
    CoverageResult out;
    if (truth_area.empty()) return {1.0, 1.0};
    double weighted = 0, unweighted = 0, total_area = 0;
    for (const auto& [t, area] : truth_area) {
        double best_iou = 0;
        for (const auto& [key, is] : inter) {
            if (key.first != t) continue;
            double uni = double(area) + double(pred_area[key.second]) - double(is);
            best_iou = std::max(best_iou, double(is) / uni);
        }
        weighted += best_iou * double(area);
        unweighted += best_iou;
        total_area += double(area);
    }
    out.weighted = weighted / total_area;
    out.unweighted = unweighted / double(truth_area.size());
    return out;
}

}  // namespace dscene
