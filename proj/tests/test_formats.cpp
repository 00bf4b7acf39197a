#include <fstream>

#include "test_support.hpp"

using namespace dscene;
using namespace dstest;

namespace {
fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "dscene_test_formats";
    fs::create_directories(dir);
    return dir;
}
}  // namespace

TEST_CASE("dmap round trip preserves payload and missing sentinel") {
    auto dir = temp_dir();
    CameraIntrinsics cam = small_camera(17, 9, 10.0);
    Rng rng(3);
    DepthImage d(cam);
    for (auto& z : d.depth) z = rng.uniform() < 0.2 ? DepthImage::missing() : float(rng.uniform(0.1, 19.0));
    write_depth_image(dir / "t.dmap", d);
    DepthImage back = read_depth_image(dir / "t.dmap", cam);
    for (size_t i = 0; i < d.size(); ++i) {
        if (DepthImage::valid_value(d.depth[i]))
            CHECK(back.depth[i] == d.depth[i]);
        else
            CHECK_FALSE(DepthImage::valid_value(back.depth[i]));
    }
}

TEST_CASE("dmap header layout is exact") {
    auto dir = temp_dir();
    std::vector<float> v{1.5f, 0.0f, 2.25f, 3.0f, 4.0f, 5.0f};
    write_dmap(dir / "h.dmap", 3, 2, v);
    std::ifstream in(dir / "h.dmap", std::ios::binary);
    std::string header;
    std::getline(in, header);
    CHECK(header == "DMAP 3 2");
    float payload[6];
    in.read(reinterpret_cast<char*>(payload), 24);
    CHECK(payload[2] == 2.25f);
}

TEST_CASE("spix round trip") {
    auto dir = temp_dir();
    Rng rng(4);
    std::vector<uint32_t> labels(12 * 7);
    for (auto& l : labels) l = rng.uniform() < 0.1 ? kInvalidSuperpixel : uint32_t(rng.uniform_int(40));
    write_spix(dir / "t.spix", 12, 7, labels);
    int w = 0, h = 0;
    auto back = read_spix(dir / "t.spix", w, h);
    CHECK(w == 12);
    CHECK(h == 7);
    CHECK(back == labels);
}

TEST_CASE("vox round trip") {
    auto dir = temp_dir();
    VoxelGrid g = make_voxel_grid(Vector3d(-1, -2, 0.5), 0.05, 9, 7, 11);
    Rng rng(5);
    for (size_t i = 0; i < g.voxel_count(); ++i)
        if (rng.uniform() < 0.3) g.occupancy.set(i);
    write_vox(dir / "t.vox", g);
    VoxelGrid back = read_vox(dir / "t.vox");
    CHECK(back.same_geometry(g));
    REQUIRE(back.voxel_count() == g.voxel_count());
    for (size_t i = 0; i < g.voxel_count(); ++i) CHECK(back.occupancy.test(i) == g.occupancy.test(i));
}

TEST_CASE("off round trip and polygon triangulation") {
    auto dir = temp_dir();
    TriMesh box = make_box(0.4, 0.6, 0.8);
    write_off(dir / "m.off", box);
    TriMesh back = read_off(dir / "m.off");
    REQUIRE(back.vertices.size() == box.vertices.size());
    REQUIRE(back.faces.size() == box.faces.size());
    CHECK(is_watertight(back));

    std::ofstream quad(dir / "q.off");
    quad << "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
    quad.close();
    TriMesh q = read_off(dir / "q.off");
    CHECK(q.faces.size() == 2);  // fan-triangulated
}

TEST_CASE("bad headers are rejected") {
    auto dir = temp_dir();
    std::ofstream(dir / "bad.dmap") << "DUMP 3 2\n";
    int w, h;
    CHECK_THROWS_AS(read_dmap(dir / "bad.dmap", w, h), IoError);
    CHECK_THROWS_AS(read_dmap(dir / "nonexistent.dmap", w, h), IoError);
    std::ofstream(dir / "short.spix") << "SPIX 4 4\nxx";
    CHECK_THROWS_AS(read_spix(dir / "short.spix", w, h), IoError);
}

TEST_CASE("scene file round trip") {
    auto dir = temp_dir();
    SceneSpec spec = random_scene_spec(11, Difficulty::Medium, fast_gen());
    SceneFile f = scene_file_from_spec(spec);
    write_scene_file(dir / "scene.json", f);
    SceneFile back = read_scene_file(dir / "scene.json");
    CHECK(back.seed == f.seed);
    REQUIRE(back.layout.size() == f.layout.size());
    REQUIRE(back.objects.size() == f.objects.size());
    for (size_t i = 0; i < f.layout.size(); ++i) {
        CHECK(back.layout[i].plane.category == f.layout[i].plane.category);
        CHECK(back.layout[i].plane.offset == doctest::Approx(f.layout[i].plane.offset));
        CHECK(back.layout[i].cutouts.size() == f.layout[i].cutouts.size());
    }
    for (size_t i = 0; i < f.objects.size(); ++i) {
        CHECK(back.objects[i].shape_id == f.objects[i].shape_id);
        CHECK(back.objects[i].instance_id == f.objects[i].instance_id);
        CHECK(back.objects[i].translation.isApprox(f.objects[i].translation, 1e-9));
    }
    CHECK(back.camera.rotation.isApprox(f.camera.rotation, 1e-12));
}

TEST_CASE("classifier, prior and metric persistence") {
    auto dir = temp_dir();
    PlaneClassifier clf;
    Rng rng(6);
    for (auto& w : clf.w) w = rng.normal();
    write_classifier(dir / "c.weights", clf);
    PlaneClassifier cb = read_classifier(dir / "c.weights");
    for (int i = 0; i < 13; ++i) CHECK(cb.w[i] == doctest::Approx(clf.w[i]).epsilon(1e-15));

    PositionPrior prior = PositionPrior::estimate({1.0, 1.05, 1.4, 2.0});
    write_prior(dir / "p.prior", prior);
    PositionPrior pb = read_prior(dir / "p.prior");
    CHECK(pb.min_offset == doctest::Approx(prior.min_offset));
    CHECK(pb.density == prior.density);

    MetricModel m;
    m.rank = 2;
    m.mean = Eigen::VectorXd::Random(5);
    m.stddev = Eigen::VectorXd::Random(5).cwiseAbs() + Eigen::VectorXd::Ones(5);
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(5, 2);
    m.W = a * a.transpose();
    write_metric_model(dir / "metric.json", m);
    MetricModel mb = read_metric_model(dir / "metric.json");
    CHECK((mb.W - m.W).norm() < 1e-12);
    CHECK((mb.mean - m.mean).norm() < 1e-12);
}

TEST_CASE("exemplar library round trip") {
    auto dir = temp_dir() / "lib";
    fs::remove_all(dir);
    ExemplarLibrary lib;
    for (int i = 0; i < 3; ++i) {
        ExemplarEntry e;
        e.label = shape_ids()[i];
        e.mesh = make_box(0.3 + 0.1 * i, 0.4, 0.5);
        e.features.v.setRandom();
        e.scale_meta = Vector3d(1, 2, 3);
        e.mesh_ref = shape_mesh_ref("box", {0.3 + 0.1 * i, 0.4, 0.5});
        lib.entries.push_back(e);
    }
    write_exemplar_library(dir, lib);
    ExemplarLibrary back = read_exemplar_library(dir);
    REQUIRE(back.entries.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back.entries[i].label == lib.entries[i].label);
        CHECK((back.entries[i].features.v - lib.entries[i].features.v).norm() < 1e-12);
        CHECK(back.entries[i].mesh.faces.size() == lib.entries[i].mesh.faces.size());
        CHECK(back.entries[i].mesh_ref == lib.entries[i].mesh_ref);
    }
}

TEST_CASE("bundle write and read back") {
    auto dir = temp_dir() / "bundle";
    fs::remove_all(dir);
    GroundTruthBundle bundle = generate_scene(21, Difficulty::Easy, fast_gen(), NoiseModel::none());
    write_bundle(dir, bundle);
    BundleData back = read_bundle(dir);
    CHECK(back.depth.width() == bundle.depth.width());
    CHECK(back.superpixels.count == bundle.superpixels.count);
    CHECK(back.scene.objects.size() == bundle.spec.objects.size());
    CHECK(back.has_truth_voxels());
    VoxelGrid voxels = back.truth_voxels();
    CHECK(voxels.occupancy.count() == bundle.truth_voxels.occupancy.count());

    fs::remove(dir / "pobject.dmap");
    CHECK_THROWS_WITH_AS(read_bundle(dir), doctest::Contains("pobject.dmap"), IoError);
}

TEST_CASE("mesh ref resolution") {
    auto dir = temp_dir();
    TriMesh chair = resolve_mesh_ref("shape:chair:0.5,0.9,0.5", dir);
    CHECK(chair.faces.size() > 10);
    std::string id;
    std::vector<double> params;
    CHECK(parse_shape_ref("shape:prism:0.3,1.0,8", id, params));
    CHECK(id == "prism");
    REQUIRE(params.size() == 3);
    CHECK(params[2] == 8.0);
    CHECK_FALSE(parse_shape_ref("meshes/chair.off", id, params));
}
