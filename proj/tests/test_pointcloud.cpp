#include "test_support.hpp"

#include "dscene/manhattan.hpp"
#include "dscene/pointcloud.hpp"

using namespace dscene;
using namespace dstest;

TEST_CASE("normals of a fronto-parallel wall") {
    CameraIntrinsics cam = small_camera();
    OrientedPointCloud pc = estimate_normals(unproject(flat_depth(cam, 2.0f)), 0.12);
    REQUIRE(pc.size() > 100);
    for (size_t i = 0; i < pc.size(); ++i) {
        CHECK((pc.normals[i] - Vector3d(0, 0, -1)).norm() < 1e-3);
        CHECK(pc.normals[i].dot(pc.points[i]) < 0);
    }
}

TEST_CASE("normals of a horizontal floor") {
    CameraIntrinsics cam = small_camera(96, 72, 96.0);
    DepthImage d = floor_depth(cam, 1.0);
    for (auto& z : d.depth)
        if (DepthImage::valid_value(z) && z > 8.0f) z = DepthImage::missing();
    OrientedPointCloud pc = estimate_normals(unproject(d), 0.15);
    REQUIRE(pc.size() > 100);
    size_t good = 0;
    for (size_t i = 0; i < pc.size(); ++i)
        if ((pc.normals[i] - Vector3d(0, -1, 0)).norm() < 1e-3) ++good;
    CHECK(double(good) / double(pc.size()) > 0.95);  // borders of the band are noisier
}

TEST_CASE("normals of a synthetic sphere track the analytic normal") {
    CameraIntrinsics cam = small_camera(96, 96, 96.0);
    double radius = 0.5, cz = 2.0;
    OrientedPointCloud pc = estimate_normals(unproject(sphere_depth(cam, radius, cz)), 0.05);
    REQUIRE(pc.size() > 200);
    Vector3d center(0, 0, cz);
    size_t checked = 0;
    for (size_t i = 0; i < pc.size(); ++i) {
        // Interior points only: skip the silhouette ring.
        Vector3d radial = pc.points[i] - center;
        if (-radial.normalized().z() < 0.6) continue;
        ++checked;
        Vector3d analytic = radial.normalized();
        if (analytic.dot(pc.points[i]) > 0) analytic = -analytic;
        double angle = std::acos(std::clamp(pc.normals[i].dot(analytic), -1.0, 1.0));
        CHECK(angle < 5.0 * 3.14159265358979 / 180.0);
    }
    CHECK(checked > 100);
}

TEST_CASE("isolated points are dropped") {
    CameraIntrinsics cam = small_camera();
    DepthImage d(cam);
    d.at(3, 3) = 2.0f;
    d.at(40, 30) = 3.0f;  // far apart: neither has neighbors
    OrientedPointCloud pc = estimate_normals(unproject(d), 0.05);
    CHECK(pc.size() == 0);
}

TEST_CASE("manhattan frame of an axis-aligned scene is the identity") {
    CameraIntrinsics cam = small_camera(96, 72, 72.0);
    DepthImage scene = floor_depth(cam, 1.2);
    for (size_t i = 0; i < scene.depth.size(); ++i) {
        // frontal wall at z = 4 wherever the floor is farther or absent
        if (!DepthImage::valid_value(scene.depth[i]) || scene.depth[i] > 4.0f)
            scene.depth[i] = 4.0f;
    }
    OrientedPointCloud pc = estimate_normals(unproject(scene), 0.12);
    ManhattanFrame frame = estimate_manhattan_frame(pc);
    double angle = Eigen::AngleAxisd(frame.rotation).angle();
    CHECK(angle < 1.0 * 3.14159265358979 / 180.0);
}

TEST_CASE("manhattan frame recovers a known yaw") {
    CameraIntrinsics cam = small_camera(96, 72, 72.0);
    GenOptions opt = fast_gen();
    GroundTruthBundle bundle = generate_scene(31, Difficulty::Easy, opt, NoiseModel::none());
    OrientedPointCloud pc = estimate_normals(unproject(bundle.depth), 0.12);
    ManhattanFrame est = estimate_manhattan_frame(pc);
    Matrix3d truth = bundle.spec.true_frame().rotation;
    // compare modulo the cube symmetry group
    double best = 1e9;
    for (const auto& c : cube_rotations())
        best = std::min(best, Eigen::AngleAxisd(est.rotation * (c * truth).transpose()).angle());
    CHECK(best < 1.0 * 3.14159265358979 / 180.0);
}

TEST_CASE("manhattan frame is equivariant modulo cube rotations") {
    GroundTruthBundle bundle = generate_scene(32, Difficulty::Easy, fast_gen(), NoiseModel::none());
    OrientedPointCloud pc = estimate_normals(unproject(bundle.depth), 0.12);
    ManhattanFrame a = estimate_manhattan_frame(pc);

    Matrix3d q = Eigen::AngleAxisd(0.21, Vector3d(0.2, 1.0, 0.1).normalized()).toRotationMatrix();
    OrientedPointCloud rotated = pc;
    for (auto& p : rotated.points) p = q * p;
    for (auto& n : rotated.normals) n = q * n;
    ManhattanFrame b = estimate_manhattan_frame(rotated);

    // b . q should equal a modulo a cube rotation
    double best = 1e9;
    for (const auto& c : cube_rotations())
        best = std::min(best, ((b.rotation * q) - c * a.rotation).norm());
    CHECK(best < 0.05);

    double sa = manhattan_alignment_score(pc, a.rotation);
    double sb = manhattan_alignment_score(rotated, b.rotation);
    CHECK(sa == doctest::Approx(sb).epsilon(5e-3));
}

TEST_CASE("alignment score is invariant under cube rotations of the frame") {
    GroundTruthBundle bundle = generate_scene(33, Difficulty::Easy, fast_gen(), NoiseModel::none());
    OrientedPointCloud pc = estimate_normals(unproject(bundle.depth), 0.12);
    ManhattanFrame frame = estimate_manhattan_frame(pc);
    double base = manhattan_alignment_score(pc, frame.rotation);
    for (const auto& c : cube_rotations())
        CHECK(manhattan_alignment_score(pc, c * frame.rotation) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("uniformly scattered normals have no manhattan structure") {
    Rng rng(5);
    OrientedPointCloud pc;
    for (int i = 0; i < 600; ++i) {
        Vector3d n(rng.normal(), rng.normal(), rng.normal());
        n.normalize();
        Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3));
        if (n.dot(p) > 0) n = -n;
        pc.points.push_back(p);
        pc.normals.push_back(n);
        pc.pixel_index.push_back(i);
    }
    CHECK_THROWS_AS(estimate_manhattan_frame(pc), DegenerateScene);
}
