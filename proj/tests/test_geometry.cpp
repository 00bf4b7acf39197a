#include "test_support.hpp"

#include "dscene/pointcloud.hpp"

using namespace dscene;
using namespace dstest;

TEST_CASE("unproject principal ray") {
    CameraIntrinsics cam = small_camera();
    DepthImage d(cam);
    d.at(int(cam.cx), int(cam.cy)) = 3.0f;
    OrientedPointCloud pc = unproject(d);
    REQUIRE(pc.size() == 1);
    CHECK(pc.points[0].isApprox(Vector3d(0, 0, 3.0), 1e-12));
}

TEST_CASE("unproject 45 degree ray") {
    CameraIntrinsics cam = small_camera(160, 120, 40.0);
    DepthImage d(cam);
    int u = int(cam.cx + cam.fx), v = int(cam.cy);
    d.at(u, v) = 2.0f;
    OrientedPointCloud pc = unproject(d);
    REQUIRE(pc.size() == 1);
    CHECK(pc.points[0].x() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(pc.points[0].y() == doctest::Approx(0.0));
    CHECK(pc.points[0].z() == doctest::Approx(2.0));
}

TEST_CASE("unproject then project recovers every pixel") {
    CameraIntrinsics cam = small_camera(8, 8, 11.0);
    cam.cx = 3.5;
    cam.cy = 4.0;
    Rng rng(17);
    DepthImage d(cam);
    for (auto& z : d.depth) z = float(rng.uniform(0.5, 6.0));
    OrientedPointCloud pc = unproject(d);
    REQUIRE(pc.size() == d.size());
    for (size_t i = 0; i < pc.size(); ++i) {
        Vector2d px = cam.project(pc.points[i]);
        int u = pc.pixel_index[i] % cam.width;
        int v = pc.pixel_index[i] / cam.width;
        CHECK(px.x() == doctest::Approx(u).epsilon(1e-9));
        CHECK(px.y() == doctest::Approx(v).epsilon(1e-9));
        CHECK(pc.points[i].z() == doctest::Approx(double(d.at(u, v))).epsilon(1e-9));
    }
}

TEST_CASE("unproject with no valid pixels fails") {
    DepthImage d(small_camera());
    CHECK_THROWS_AS(unproject(d), AllPixelsMissing);
}

TEST_CASE("intrinsics validation") {
    CameraIntrinsics cam = small_camera();
    cam.fx = -1;
    CHECK_THROWS_AS(cam.validate(), InvalidSpec);
    cam = small_camera();
    cam.cx = cam.width;
    CHECK_THROWS_AS(cam.validate(), InvalidSpec);
}

TEST_CASE("rect operations") {
    Rect2 a{0, 0, 2, 2}, b{1, 1, 3, 3}, c{5, 5, 6, 6};
    CHECK(a.overlaps(b));
    CHECK_FALSE(a.overlaps(c));
    Rect2 i = a.intersect(b);
    CHECK(i.u0 == 1);
    CHECK(i.v1 == 2);
    CHECK(a.bounding_union(c).u1 == 6);
    CHECK(a.contains(1.5, 0.5));
    CHECK_FALSE(a.contains(b));
}

TEST_CASE("pixel iou on sorted lists") {
    std::vector<uint32_t> a{1, 2, 3, 4}, b{3, 4, 5, 6}, c{10, 11};
    CHECK(pixel_iou(a, a) == 1.0);
    CHECK(pixel_iou(a, b) == doctest::Approx(2.0 / 6.0));
    CHECK(pixel_iou(a, c) == 0.0);
}
