#include "dscene/render.hpp"

namespace dscene {

namespace {

// Clips a camera-space triangle against z >= near. Emits 0, 1 or 2 triangles.
int clip_near(const Vector3d in[3], double near_z, Vector3d out[6]) {
    Vector3d poly[4];
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const Vector3d& a = in[i];
        const Vector3d& b = in[(i + 1) % 3];
        bool ain = a.z() >= near_z;
        bool bin = b.z() >= near_z;
        if (ain) poly[n++] = a;
        if (ain != bin) {
            double t = (near_z - a.z()) / (b.z() - a.z());
            poly[n++] = a + t * (b - a);
        }
    }
    if (n < 3) return 0;
    out[0] = poly[0];
    out[1] = poly[1];
    out[2] = poly[2];
    if (n == 3) return 1;
    out[3] = poly[0];
    out[4] = poly[2];
    out[5] = poly[3];
    return 2;
}

template <typename PixelFn>
void rasterize_triangle(const Vector3d cam_tri[3], const CameraIntrinsics& cam, PixelFn&& emit) {
    // Screen-space vertices with inverse depth for perspective-correct z.
    double sx[3], sy[3], invz[3];
    for (int i = 0; i < 3; ++i) {
        sx[i] = cam.fx * cam_tri[i].x() / cam_tri[i].z() + cam.cx;
        sy[i] = cam.fy * cam_tri[i].y() / cam_tri[i].z() + cam.cy;
        invz[i] = 1.0 / cam_tri[i].z();
    }
    double area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0]);
    if (area == 0.0) return;
    if (area < 0) {  // normalize winding so edge functions are >= 0 inside
        std::swap(sx[1], sx[2]);
        std::swap(sy[1], sy[2]);
        std::swap(invz[1], invz[2]);
        area = -area;
    }

    int u_lo = std::max(0, int(std::ceil(std::min({sx[0], sx[1], sx[2]}))));
    int u_hi = std::min(cam.width - 1, int(std::floor(std::max({sx[0], sx[1], sx[2]}))));
    int v_lo = std::max(0, int(std::ceil(std::min({sy[0], sy[1], sy[2]}))));
    int v_hi = std::min(cam.height - 1, int(std::floor(std::max({sy[0], sy[1], sy[2]}))));
    if (u_lo > u_hi || v_lo > v_hi) return;

    auto edge = [&](int i, int j, double px, double py) {
        return (sx[j] - sx[i]) * (py - sy[i]) - (sy[j] - sy[i]) * (px - sx[i]);
    };
    // Inclusion on edges follows the top-left rule (y grows downward).
    auto edge_accepts_zero = [&](int i, int j) {
        double dx = sx[j] - sx[i], dy = sy[j] - sy[i];
        return (dy == 0.0 && dx > 0.0) || dy > 0.0;
    };
    bool accept0 = edge_accepts_zero(1, 2);
    bool accept1 = edge_accepts_zero(2, 0);
    bool accept2 = edge_accepts_zero(0, 1);

    for (int v = v_lo; v <= v_hi; ++v) {
        for (int u = u_lo; u <= u_hi; ++u) {
            double e0 = edge(1, 2, u, v);
            double e1 = edge(2, 0, u, v);
            double e2 = edge(0, 1, u, v);
            bool inside = (e0 > 0 || (e0 == 0 && accept0)) && (e1 > 0 || (e1 == 0 && accept1)) &&
                          (e2 > 0 || (e2 == 0 && accept2));
            if (!inside) continue;
            double w = (e0 * invz[0] + e1 * invz[1] + e2 * invz[2]) / area;
            if (w <= 0) continue;
            emit(u, v, float(1.0 / w));
        }
    }
}

}  // namespace

DepthRender render_depth(std::span<const MeshInstance> meshes, const CameraIntrinsics& cam,
                         double near_plane) {
    cam.validate();
    DepthRender out(cam.width, cam.height);
    for (size_t m = 0; m < meshes.size(); ++m) {
        const MeshInstance& inst = meshes[m];
        if (!inst.mesh) continue;
        if (!inst.linear.allFinite() || !inst.offset.allFinite())
            throw InvalidSpec("non-finite mesh transform");
        for (const auto& f : inst.mesh->faces) {
            Vector3d tri[3];
            for (int i = 0; i < 3; ++i)
                tri[i] = inst.linear * inst.mesh->vertices[f[i]] + inst.offset;
            Vector3d clipped[6];
            int n = clip_near(tri, near_plane, clipped);
            for (int t = 0; t < n; ++t) {
                rasterize_triangle(clipped + 3 * t, cam, [&](int u, int v, float z) {
                    size_t idx = size_t(v) * cam.width + u;
                    if (z < out.depth[idx]) {
                        out.depth[idx] = z;
                        out.label[idx] = int32_t(m);
                    }
                });
            }
        }
    }
    return out;
}

MinMaxRender render_minmax(const MeshInstance& inst, const CameraIntrinsics& cam,
                           double near_plane) {
    cam.validate();
    MinMaxRender out(cam.width, cam.height);
    if (!inst.mesh) return out;
    for (const auto& f : inst.mesh->faces) {
        Vector3d tri[3];
        for (int i = 0; i < 3; ++i) tri[i] = inst.linear * inst.mesh->vertices[f[i]] + inst.offset;
        Vector3d clipped[6];
        int n = clip_near(tri, near_plane, clipped);
        for (int t = 0; t < n; ++t) {
            rasterize_triangle(clipped + 3 * t, cam, [&](int u, int v, float z) {
                size_t idx = size_t(v) * cam.width + u;
                out.zmin[idx] = std::min(out.zmin[idx], z);
                out.zmax[idx] = std::max(out.zmax[idx], z);
            });
        }
    }
    return out;
}

}  // namespace dscene
