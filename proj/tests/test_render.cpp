#include "test_support.hpp"

using namespace dscene;
using namespace dstest;

TEST_CASE("flat quad renders constant depth") {
    CameraIntrinsics cam = small_camera();
    TriMesh quad = quad_at_z(-5, -5, 5, 5, 2.0);
    MeshInstance inst;
    inst.mesh = &quad;
    DepthRender r = render_depth(std::span(&inst, 1), cam);
    size_t covered = 0;
    for (size_t i = 0; i < r.depth.size(); ++i) {
        if (!r.covered(i)) continue;
        ++covered;
        CHECK(r.depth[i] == doctest::Approx(2.0).epsilon(1e-6));
    }
    CHECK(covered == r.depth.size());  // quad spans the whole frustum
}

TEST_CASE("z-buffer keeps the nearer quad") {
    CameraIntrinsics cam = small_camera();
    TriMesh near_quad = quad_at_z(-0.3, -0.3, 0.3, 0.3, 1.0);
    TriMesh far_quad = quad_at_z(-5, -5, 5, 5, 2.0);
    std::vector<MeshInstance> meshes(2);
    meshes[0].mesh = &far_quad;
    meshes[1].mesh = &near_quad;
    DepthRender r = render_depth(meshes, cam);
    // Wherever both project, the z=1 quad (index 1) wins.
    bool saw_near = false;
    for (size_t i = 0; i < r.depth.size(); ++i) {
        REQUIRE(r.covered(i));
        if (r.label[i] == 1) {
            saw_near = true;
            CHECK(r.depth[i] == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    CHECK(saw_near);
}

TEST_CASE("equal-depth tie goes to the lower mesh index") {
    CameraIntrinsics cam = small_camera();
    TriMesh a = quad_at_z(-5, -5, 5, 5, 2.0);
    TriMesh b = quad_at_z(-5, -5, 5, 5, 2.0);
    std::vector<MeshInstance> meshes(2);
    meshes[0].mesh = &a;
    meshes[1].mesh = &b;
    DepthRender r = render_depth(meshes, cam);
    for (size_t i = 0; i < r.depth.size(); ++i)
        if (r.covered(i)) CHECK(r.label[i] == 0);
}

TEST_CASE("rendered depth matches the ray-casting oracle") {
    CameraIntrinsics cam = small_camera(80, 60, 60.0);
    Rng rng(99);
    for (int trial = 0; trial < 4; ++trial) {
        TriMesh mesh = make_prism(rng.uniform(0.3, 0.6), rng.uniform(0.4, 1.0), 8);
        MeshInstance inst;
        inst.mesh = &mesh;
        double a = rng.uniform(-0.8, 0.8);
        inst.linear = Eigen::AngleAxisd(a, Vector3d(rng.normal(), rng.normal(), rng.normal())
                                               .normalized())
                          .toRotationMatrix();
        inst.offset = Vector3d(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3),
                               rng.uniform(2.0, 3.5));
        DepthRender r = render_depth(std::span(&inst, 1), cam);
        size_t covered = 0;
        for (int v = 0; v < cam.height; ++v) {
            for (int u = 0; u < cam.width; ++u) {
                size_t i = size_t(v) * cam.width + u;
                if (!r.covered(i)) continue;
                ++covered;
                double oracle = raycast_depth(inst, cam, u, v);
                REQUIRE(std::isfinite(oracle));
                CHECK(std::abs(r.depth[i] - oracle) < 1e-4);
            }
        }
        CHECK(covered > 50);
    }
}

TEST_CASE("translating a fronto-parallel quad shifts depth exactly") {
    CameraIntrinsics cam = small_camera();
    TriMesh quad = quad_at_z(-5, -5, 5, 5, 2.0);
    MeshInstance inst;
    inst.mesh = &quad;
    DepthRender base = render_depth(std::span(&inst, 1), cam);
    double delta = 0.37;
    inst.offset = Vector3d(0, 0, delta);
    DepthRender shifted = render_depth(std::span(&inst, 1), cam);
    for (size_t i = 0; i < base.depth.size(); ++i) {
        REQUIRE(base.covered(i));
        REQUIRE(shifted.covered(i));
        CHECK(shifted.depth[i] - base.depth[i] == doctest::Approx(delta).epsilon(1e-5));
    }
}

TEST_CASE("geometry behind the camera is clipped") {
    CameraIntrinsics cam = small_camera();
    // Horizontal strip crossing the camera plane: spans z in [-1, 1].
    TriMesh mesh;
    mesh.vertices = {{-2, 0.25, -1}, {2, 0.25, -1}, {2, 0.25, 1}, {-2, 0.25, 1}};
    mesh.faces = {{0, 1, 2}, {0, 2, 3}};
    MeshInstance inst;
    inst.mesh = &mesh;
    DepthRender r = render_depth(std::span(&inst, 1), cam);
    size_t covered = 0;
    for (size_t i = 0; i < r.depth.size(); ++i)
        if (r.covered(i)) {
            ++covered;
            CHECK(r.depth[i] > 0.0f);
            CHECK(r.depth[i] < 1.05f);
        }
    CHECK(covered > 0);
}

TEST_CASE("min-max render brackets the z-buffer") {
    CameraIntrinsics cam = small_camera();
    TriMesh box = make_box(0.6, 0.6, 0.6);
    MeshInstance inst;
    inst.mesh = &box;
    inst.offset = Vector3d(0, 0, 2.0);
    DepthRender front = render_depth(std::span(&inst, 1), cam);
    MinMaxRender mm = render_minmax(inst, cam);
    bool saw_back = false;
    for (size_t i = 0; i < mm.zmin.size(); ++i) {
        CHECK(mm.covered(i) == front.covered(i));
        if (!mm.covered(i)) continue;
        CHECK(mm.zmin[i] == front.depth[i]);
        CHECK(mm.zmax[i] >= mm.zmin[i]);
        CHECK(mm.zmin[i] >= 1.7f - 1e-4f);
        CHECK(mm.zmax[i] <= 2.3f + 1e-4f);
        if (mm.zmax[i] > 2.29f) saw_back = true;
    }
    CHECK(saw_back);
}
