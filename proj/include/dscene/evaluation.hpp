#pragma once

#include "dscene/layout.hpp"
#include "dscene/mesh.hpp"

namespace dscene {

struct Bitset {
    size_t size = 0;
    std::vector<uint64_t> words;

    Bitset() = default;
    explicit Bitset(size_t n) : size(n), words((n + 63) / 64, 0) {}

    bool test(size_t i) const { return (words[i >> 6] >> (i & 63)) & 1; }
    void set(size_t i) { words[i >> 6] |= uint64_t(1) << (i & 63); }
    void clear(size_t i) { words[i >> 6] &= ~(uint64_t(1) << (i & 63)); }
    size_t count() const;

    Bitset operator&(const Bitset& o) const;
    Bitset operator|(const Bitset& o) const;
    /// this AND NOT o.
    Bitset and_not(const Bitset& o) const;
};

/// Regular occupancy grid, x-fastest storage. Voxel (i,j,k) spans the
/// half-open box origin + [i, i+1) x [j, j+1) x [k, k+1) * spacing; its
/// center sits at origin + (i+0.5, j+0.5, k+0.5) * spacing.
struct VoxelGrid {
    Vector3d origin = Vector3d::Zero();
    double spacing = 0.03;
    int nx = 0, ny = 0, nz = 0;
    Bitset occupancy;
    Bitset scope;

    size_t voxel_count() const { return size_t(nx) * ny * nz; }
    size_t index(int i, int j, int k) const { return (size_t(k) * ny + j) * nx + i; }
    Vector3d center(int i, int j, int k) const {
        return origin + spacing * Vector3d(i + 0.5, j + 0.5, k + 0.5);
    }
    bool same_geometry(const VoxelGrid& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz && spacing == o.spacing &&
               (origin - o.origin).norm() < 1e-9;
    }
};

VoxelGrid make_voxel_grid(const Vector3d& origin, double spacing, int nx, int ny, int nz);

/// Covers an axis-aligned world box with voxels at the given spacing.
VoxelGrid make_voxel_grid_for_box(const Vector3d& lo, const Vector3d& hi, double spacing);

/// Solid voxelization of one closed mesh (parity ray casting along +x),
/// OR-ed into the grid occupancy. Meshes that fail the watertight check are
/// voxelized by surface stamping plus interior fill along z-columns.
void voxelize_mesh(VoxelGrid& grid, const TriMesh& mesh_world);

/// Scope = inside the outermost layout surfaces, inside the camera frustum,
/// extended through cutouts up to cutout_extension behind their plane.
/// Occupancy is clipped to the resulting scope.
void apply_scope(VoxelGrid& grid, const std::vector<LayoutSurface>& surfaces,
                 const CameraPose& cam, double cutout_extension = 1.0);

/// Solid voxelization of a whole scene: per-object parity voxelization,
/// union, then scope clipping.
VoxelGrid voxelize_scene(const std::vector<TriMesh>& object_meshes_world,
                         const std::vector<LayoutSurface>& surfaces, const CameraPose& cam,
                         double spacing = 0.03);

struct VoxelPR {
    double precision = 1.0;
    double recall = 1.0;
};

/// Depth-proportional tolerance matching: a predicted voxel is correct when
/// a truth voxel lies within eps_factor * its center depth (and every truth
/// voxel within that ball counts as recalled). eps_factor = 0 is exact
/// matching. Evaluation is restricted to the intersection of both scopes.
VoxelPR voxel_pr(const VoxelGrid& predicted, const VoxelGrid& truth, double eps_factor,
                 const CameraPose& cam);

/// Same, on the free-space complement (scope minus occupancy).
VoxelPR freespace_pr(const VoxelGrid& predicted, const VoxelGrid& truth, double eps_factor,
                     const CameraPose& cam);

/// Sensor baseline occupancy: grid voxels whose center projects to a valid
/// depth pixel and sits within half a spacing of the observed depth along
/// the ray; freespace baseline marks voxels strictly in front.
VoxelGrid sensor_voxels(const VoxelGrid& like, const DepthImage& d, const CameraPose& cam);

// ---------------------------------------------------------------------------
// Layout and instance metrics

constexpr int8_t kOpeningLabel = 5;  // renders use the five categories plus this

struct LayoutRender {
    int width = 0, height = 0;
    std::vector<float> depth;    // +inf where no surface
    std::vector<int8_t> label;   // LayoutCategory value or kOpeningLabel
};

/// Front-most layout surface per pixel; rays passing through every cutout
/// take the surface observed behind it, or the opening label if none.
LayoutRender render_layout_surfaces(const std::vector<LayoutSurface>& surfaces,
                                    const CameraPose& cam);

struct SplitMetric {
    double overall = 0, occluded = 0, visible = 0;
};

/// Fraction of pixels whose category differs; split by the ground-truth
/// object occlusion mask.
SplitMetric layout_label_error(const std::vector<int8_t>& predicted,
                               const std::vector<int8_t>& truth,
                               const std::vector<uint8_t>& object_mask);

/// Mean absolute depth difference in meters over pixels where both renders
/// hit a surface, same split.
SplitMetric layout_depth_error(const std::vector<float>& predicted,
                               const std::vector<float>& truth,
                               const std::vector<uint8_t>& object_mask);

struct CoverageResult {
    double weighted = 0;    // MeanCovW
    double unweighted = 0;  // MeanCovU
};

/// Best-IoU coverage of each ground-truth instance (id 0 = background).
CoverageResult instance_coverage(const std::vector<uint32_t>& predicted,
                                 const std::vector<uint32_t>& truth);

struct EvalReport {
    SplitMetric layout_pixel_error;
    SplitMetric layout_depth_error;
    SplitMetric sensor_depth_error;
    VoxelPR freespace;
    VoxelPR occupancy_exact;
    VoxelPR occupancy_eps;
    CoverageResult coverage;
};

}  // namespace dscene
