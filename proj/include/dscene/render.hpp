#pragma once

#include <span>

#include "dscene/geometry.hpp"
#include "dscene/mesh.hpp"

namespace dscene {

constexpr int32_t kBackgroundLabel = -1;

struct DepthRender {
    int width = 0, height = 0;
    std::vector<float> depth;    // camera z, +inf where nothing rendered
    std::vector<int32_t> label;  // winning mesh index, kBackgroundLabel where none

    DepthRender() = default;
    DepthRender(int w, int h)
        : width(w),
          height(h),
          depth(size_t(w) * h, std::numeric_limits<float>::infinity()),
          label(size_t(w) * h, kBackgroundLabel) {}

    bool covered(size_t idx) const { return label[idx] != kBackgroundLabel; }
};

/// Z-buffer rasterization of posed meshes. A pixel is filled when its center
/// lies inside the projected triangle; nearest surface wins, depth ties go to
/// the lower mesh index. Triangles are clipped against z = near before
/// projection.
DepthRender render_depth(std::span<const MeshInstance> meshes, const CameraIntrinsics& cam,
                         double near_plane = 0.01);

/// Front and back depth per pixel for a single posed mesh (for depth-interval
/// overlap tests). Pixels the mesh does not cover carry +inf / -inf.
struct MinMaxRender {
    int width = 0, height = 0;
    std::vector<float> zmin;
    std::vector<float> zmax;

    MinMaxRender() = default;
    MinMaxRender(int w, int h)
        : width(w),
          height(h),
          zmin(size_t(w) * h, std::numeric_limits<float>::infinity()),
          zmax(size_t(w) * h, -std::numeric_limits<float>::infinity()) {}

    bool covered(size_t idx) const { return zmax[idx] >= zmin[idx]; }
};

MinMaxRender render_minmax(const MeshInstance& inst, const CameraIntrinsics& cam,
                           double near_plane = 0.01);

}  // namespace dscene
