#include <memory>

#include "test_support.hpp"

#include "dscene/layout.hpp"
#include "dscene/pipeline.hpp"

using namespace dscene;
using namespace dstest;

TEST_CASE("affinity peaks at one and decays with both distances") {
    PlaneHypothesis floor{Axis::Y, 1.5, LayoutCategory::Floor, 0};
    Vector3d on_plane(0.3, 1.5, 2.0);
    CHECK(point_plane_affinity(on_plane, Vector3d(0, -1, 0), floor) == doctest::Approx(1.0));

    // normal rotated by exactly one sigma_n
    double a = 0.0799;
    Vector3d tilted(std::sin(a), -std::cos(a), 0);
    CHECK(point_plane_affinity(on_plane, tilted, floor) ==
          doctest::Approx(std::exp(-0.5)).epsilon(1e-9));

    // 0.05 m off-plane at distance 2 -> dist_p = 0.025 = one sigma_p
    PlaneHypothesis wall{Axis::Z, 2.0, LayoutCategory::FrontWall, 0};
    Vector3d off(0, 0, 1.95);
    CHECK(point_plane_affinity(off, Vector3d(0, 0, -1), wall) ==
          doctest::Approx(std::exp(-0.5 * (0.05 / 1.95 / 0.025) * (0.05 / 1.95 / 0.025)))
              .epsilon(1e-9));
    Vector3d off_at_2(0, 0, 2.0);
    PlaneHypothesis wall_2050{Axis::Z, 2.05, LayoutCategory::FrontWall, 0};
    CHECK(point_plane_affinity(off_at_2, Vector3d(0, 0, -1), wall_2050) ==
          doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("affinity is monotone in point-plane distance") {
    PlaneHypothesis wall{Axis::Z, 3.0, LayoutCategory::FrontWall, 0};
    double prev = 2.0;
    for (double dz = 0.0; dz < 0.5; dz += 0.05) {
        double a = point_plane_affinity(Vector3d(0.5, -0.2, 3.0 - dz), Vector3d(0, 0, -1), wall);
        CHECK(a <= prev + 1e-15);
        CHECK(a > 0.0);
        CHECK(a <= 1.0);
        prev = a;
    }
}

namespace {

OrientedPointCloud cloud_on_plane(int n, double z) {
    OrientedPointCloud pc;
    for (int i = 0; i < n; ++i) {
        pc.points.push_back(Vector3d(0.01 * i, 0.02 * i, z));
        pc.normals.push_back(Vector3d(0, 0, -1));
        pc.pixel_index.push_back(i);
    }
    return pc;
}

}  // namespace

TEST_CASE("plane features: guarded divisor and uniform label weights") {
    int n = 40;
    OrientedPointCloud pc = cloud_on_plane(n, 2.0);
    PixelLabelProbs labels = PixelLabelProbs::uniform(n, 1);
    PositionPrior prior = PositionPrior::estimate({2.0});
    PlaneHypothesis wall{Axis::Z, 2.0, LayoutCategory::FrontWall, 0};
    PlaneFeatureVector fv = plane_feature_vector(wall, pc, labels, prior);
    CHECK(fv.f[0] == doctest::Approx(double(n)).epsilon(1e-9));     // f1 = N
    for (int c = 1; c <= 4; ++c) CHECK(fv.f[c] == doctest::Approx(n / 4.0).epsilon(1e-9));
    CHECK(fv.f[5] == 0.0);                                          // nothing behind
    CHECK(fv.f[6] == doctest::Approx(fv.f[0]));                     // f7 = f1 / max(f6,1)
    CHECK(fv.f[11] == 1.0);
}

TEST_CASE("f6 equals the brute-force behind count") {
    // 16x16 wall at 2 m with a hole exposing points 0.5 m behind.
    CameraIntrinsics cam = small_camera(16, 16, 16.0);
    DepthImage d = flat_depth(cam, 2.0f);
    for (int v = 6; v < 10; ++v)
        for (int u = 6; u < 10; ++u) d.at(u, v) = 2.5f;
    OrientedPointCloud pc = unproject(d);
    pc.normals.assign(pc.size(), Vector3d(0, 0, -1));
    PixelLabelProbs labels = PixelLabelProbs::uniform(16, 16);
    PositionPrior prior = PositionPrior::estimate({2.0});
    PlaneHypothesis wall{Axis::Z, 2.0, LayoutCategory::FrontWall, 0};
    PlaneFeatureVector fv = plane_feature_vector(wall, pc, labels, prior);

    // oracle: count points with depth beyond the plane by >= 3% of 2 m
    int64_t behind = 0;
    for (const auto& p : pc.points)
        if (p.z() - 2.0 >= 0.06) ++behind;
    CHECK(behind == 16);
    CHECK(fv.f[5] == double(behind));
    for (int c = 0; c < 5; ++c) CHECK(fv.f[6 + c] == doctest::Approx(fv.f[c] / 16.0));
}

TEST_CASE("sweeper features match the exact computation") {
    GroundTruthBundle bundle = generate_scene(41, Difficulty::Easy, fast_gen(), NoiseModel::none());
    OrientedPointCloud pc = estimate_normals(unproject(bundle.depth), 0.12);
    PixelLabelProbs labels = PixelLabelProbs::from_object_prob(bundle.depth.width(),
                                                               bundle.depth.height(),
                                                               bundle.p_object);
    ManhattanFrame frame = bundle.spec.true_frame();
    PlaneSweeper sweeper(pc, labels, frame, {});
    OrientedPointCloud pc_room = to_room_frame(pc, frame);
    PositionPrior prior = PositionPrior::estimate({1.0, 1.5, 2.0});

    Rng rng(2);
    for (int c = 0; c < kLayoutCategories; ++c) {
        auto cat = LayoutCategory(c);
        PlaneHypothesis cand{layout_category_axis(cat), 0, cat, 0};
        auto [lo, hi] = sweeper.axis_range(cand.axis);
        for (int t = 0; t < 4; ++t) {
            cand.offset = rng.uniform(lo, hi);
            PlaneFeatureVector fast = sweeper.features(cand, prior);
            PlaneFeatureVector exact = plane_feature_vector(cand, pc_room, labels, prior);
            for (int k = 0; k < 12; ++k)
                CHECK(fast.f[k] == doctest::Approx(exact.f[k]).epsilon(1e-4).scale(1.0));
        }
    }
}

TEST_CASE("classifier separates separable clusters and needs enough data") {
    Rng rng(7);
    std::vector<std::pair<PlaneFeatureVector, bool>> training;
    for (int i = 0; i < 60; ++i) {
        PlaneFeatureVector fv;
        bool pos = i % 2 == 0;
        for (int k = 0; k < 12; ++k) fv.f[k] = rng.normal() + (pos ? 3.0 : -3.0);
        training.emplace_back(fv, pos);
    }
    PlaneClassifier clf = train_plane_classifier(training);
    int correct = 0;
    for (const auto& [fv, y] : training) correct += (clf.score(fv) > 0) == y;
    CHECK(correct == 60);

    std::vector<std::pair<PlaneFeatureVector, bool>> tiny(training.begin(), training.begin() + 12);
    tiny.resize(12);
    for (size_t i = 0; i < tiny.size(); ++i) tiny[i].second = i < 3;  // only 3 positives
    CHECK_THROWS_AS(train_plane_classifier(tiny), InsufficientData);
}

TEST_CASE("classifier is at chance on label-independent features") {
    Rng rng(8);
    std::vector<std::pair<PlaneFeatureVector, bool>> training, heldout;
    for (int i = 0; i < 400; ++i) {
        PlaneFeatureVector fv;
        for (int k = 0; k < 12; ++k) fv.f[k] = rng.normal();
        (i < 300 ? training : heldout).emplace_back(fv, rng.uniform() < 0.5);
    }
    PlaneClassifier clf = train_plane_classifier(training);
    int correct = 0;
    for (const auto& [fv, y] : heldout) correct += (clf.score(fv) > 0) == y;
    double acc = double(correct) / double(heldout.size());
    CHECK(acc > 0.35);
    CHECK(acc < 0.65);
}

namespace {

struct DetectionFixture {
    GroundTruthBundle bundle;
    OrientedPointCloud pc;
    PixelLabelProbs labels;
    ManhattanFrame frame;

    explicit DetectionFixture(uint64_t seed, Difficulty diff = Difficulty::Medium)
        : bundle(generate_scene(seed, diff, layout_gen(), NoiseModel::none())),
          pc(estimate_normals(unproject(bundle.depth), 0.12)),
          labels(PixelLabelProbs::from_object_prob(bundle.depth.width(), bundle.depth.height(),
                                                   bundle.p_object)),
          frame(bundle.spec.true_frame()) {}
};

const LayoutModel& trained_layout_model() {
    static const LayoutModel model = [] {
        PipelineConfig cfg;
        cfg.normal_radius = 0.12;
        std::array<std::vector<double>, kLayoutCategories> offsets;
        std::vector<std::unique_ptr<DetectionFixture>> fixtures;
        for (uint64_t s = 900; s < 918; ++s) {
            fixtures.push_back(std::make_unique<DetectionFixture>(s));
            for (const auto& surf : fixtures.back()->bundle.spec.layout)
                offsets[int(surf.plane.category)].push_back(
                    surf.plane.offset -
                    fixtures.back()->bundle.spec.camera.position[int(surf.plane.axis)]);
        }
        LayoutModel model;
        for (int c = 0; c < kLayoutCategories; ++c)
            model.priors[c] = PositionPrior::estimate(offsets[c]);
        std::array<std::vector<std::pair<PlaneFeatureVector, bool>>, kLayoutCategories> training;
        for (const auto& fx : fixtures) {
            PlaneSweeper sweeper(fx->pc, fx->labels, fx->frame, cfg.affinity());
            std::vector<PlaneHypothesis> truth;
            for (const auto& surf : fx->bundle.spec.layout) {
                PlaneHypothesis t = surf.plane;
                t.offset -= fx->bundle.spec.camera.position[int(t.axis)];
                truth.push_back(t);
            }
            collect_plane_training(sweeper, truth, model.priors, cfg, training);
        }
        for (int c = 0; c < kLayoutCategories; ++c)
            model.classifiers[c] = train_plane_classifier(training[c]);
        return model;
    }();
    return model;
}

}  // namespace

TEST_CASE("detected planes match the generated room") {
    const LayoutModel& model = trained_layout_model();
    int scenes_ok = 0;
    for (uint64_t seed : {950, 951, 952}) {
        DetectionFixture fx(seed);
        std::vector<PlaneHypothesis> planes =
            detect_layout_planes(fx.pc, fx.labels, model, fx.frame, {});
        // every truth plane matched within 0.02 m, no spurious detections
        size_t matched = 0;
        for (const auto& surf : fx.bundle.spec.layout) {
            double want = surf.plane.offset - fx.bundle.spec.camera.position[int(surf.plane.axis)];
            for (const auto& det : planes) {
                if (det.category == surf.plane.category && std::abs(det.offset - want) <= 0.02) {
                    ++matched;
                    break;
                }
            }
        }
        if (matched == fx.bundle.spec.layout.size() &&
            planes.size() == fx.bundle.spec.layout.size())
            ++scenes_ok;
    }
    CHECK(scenes_ok == 3);
}

TEST_CASE("NMS keeps detections at least the radius apart") {
    const LayoutModel& model = trained_layout_model();
    DetectionFixture fx(960);
    std::vector<PlaneHypothesis> planes = detect_layout_planes(fx.pc, fx.labels, model, fx.frame, {});
    for (size_t i = 0; i < planes.size(); ++i)
        for (size_t j = i + 1; j < planes.size(); ++j)
            if (planes[i].axis == planes[j].axis)
                CHECK(std::abs(planes[i].offset - planes[j].offset) >= 0.15);
}

TEST_CASE("equal scores suppress to a single plane per radius") {
    // Constant classifier: every candidate in a category ties; NMS must keep
    // a maximal >=0.15-apart subset (ties resolved toward smaller offsets).
    DetectionFixture fx(961);
    LayoutModel flat;
    for (int c = 0; c < kLayoutCategories; ++c) {
        flat.classifiers[c].w.fill(0.0);
        flat.classifiers[c].w[12] = 1.0;  // constant positive score
        flat.priors[c] = PositionPrior::estimate({1.0});
    }
    std::vector<PlaneHypothesis> planes = detect_layout_planes(fx.pc, fx.labels, flat, fx.frame, {});
    for (size_t i = 0; i < planes.size(); ++i)
        for (size_t j = i + 1; j < planes.size(); ++j)
            if (planes[i].axis == planes[j].axis)
                CHECK(std::abs(planes[i].offset - planes[j].offset) >= 0.15 - 1e-12);
    // With ties broken toward smaller offsets, the smallest candidate of each
    // axis survives.
    double min_y = 1e9;
    for (const auto& p : planes)
        if (p.axis == Axis::Y) min_y = std::min(min_y, p.offset);
    PlaneSweeper sweeper(fx.pc, fx.labels, fx.frame, {});
    auto [lo, hi] = sweeper.axis_range(Axis::Y);
    CHECK(min_y <= std::ceil((lo - 0.02) / 0.02) * 0.02 + 1e-9);
}

TEST_CASE("no floor hypothesis raises NoFloorFound") {
    // A scene with only a frontal wall: floor candidates all score negative
    // with a classifier biased against them.
    CameraIntrinsics cam = small_camera(48, 36, 36.0);
    OrientedPointCloud pc = estimate_normals(unproject(flat_depth(cam, 3.0f)), 0.2);
    PixelLabelProbs labels = PixelLabelProbs::uniform(48, 36);
    LayoutModel model;
    for (int c = 0; c < kLayoutCategories; ++c) {
        model.classifiers[c].w.fill(0.0);
        model.classifiers[c].w[12] = c == int(LayoutCategory::FrontWall) ? 1.0 : -1.0;
        model.priors[c] = PositionPrior::estimate({1.0});
    }
    CHECK_THROWS_AS(detect_layout_planes(pc, labels, model, ManhattanFrame{}, {}), NoFloorFound);
}

TEST_CASE("surface extent clips to perpendicular planes and finds cutouts") {
    const LayoutModel& model = trained_layout_model();
    GenOptions opt = layout_gen();
    // search for a medium scene with a doorway/window
    for (uint64_t seed = 970; seed < 995; ++seed) {
        GroundTruthBundle bundle = generate_scene(seed, Difficulty::Medium, opt, NoiseModel::none());
        const LayoutSurface* gt_front = nullptr;
        for (const auto& s : bundle.spec.layout)
            if (!s.cutouts.empty()) gt_front = &s;
        if (!gt_front) continue;

        DetectionFixture fx(seed);
        std::vector<PlaneHypothesis> planes =
            detect_layout_planes(fx.pc, fx.labels, model, fx.frame, {});
        const PlaneHypothesis* front = nullptr;
        for (const auto& p : planes)
            if (p.category == LayoutCategory::FrontWall) front = &p;
        REQUIRE(front != nullptr);

        OrientedPointCloud pc_room = to_room_frame(fx.pc, fx.frame);
        LayoutSurface surf =
            estimate_surface_extent(*front, planes, bundle.depth, fx.frame, {}, &pc_room);

        // extent spans floor-to-ceiling between the side walls
        double floor_off = -bundle.spec.camera.position.y();
        double ceil_off = bundle.spec.layout[1].plane.offset - bundle.spec.camera.position.y();
        CHECK(surf.extent.v0 == doctest::Approx(ceil_off).epsilon(0.03));
        CHECK(surf.extent.v1 == doctest::Approx(floor_off).epsilon(0.03));

        REQUIRE(surf.cutouts.size() == 1);
        Rect2 want = gt_front->cutouts[0];
        // ground truth hole in camera-centered coordinates
        want.u0 -= bundle.spec.camera.position.x();
        want.u1 -= bundle.spec.camera.position.x();
        want.v0 -= bundle.spec.camera.position.y();
        want.v1 -= bundle.spec.camera.position.y();
        Rect2 got = surf.cutouts[0];
        // hole edges within ~2 pixel projections at the wall distance
        double tol = 2.5 * front->offset / bundle.depth.cam.fx;
        CHECK(std::abs(got.u0 - std::max(want.u0, surf.extent.u0)) < tol);
        CHECK(std::abs(got.u1 - std::min(want.u1, surf.extent.u1)) < tol);
        CHECK(std::abs(got.v1 - std::min(want.v1, surf.extent.v1)) < tol);
        for (const auto& c : surf.cutouts) CHECK(surf.extent.contains(c));
        return;  // one qualifying scene is enough here
    }
    FAIL("no medium scene with a cutout in the seed range");
}

TEST_CASE("wall with nothing behind has no cutouts") {
    const LayoutModel& model = trained_layout_model();
    DetectionFixture fx(941, Difficulty::Easy);
    std::vector<PlaneHypothesis> planes = detect_layout_planes(fx.pc, fx.labels, model, fx.frame, {});
    OrientedPointCloud pc_room = to_room_frame(fx.pc, fx.frame);
    for (const auto& p : planes) {
        if (p.category != LayoutCategory::FrontWall) continue;
        LayoutSurface surf = estimate_surface_extent(p, planes, fx.bundle.depth, fx.frame, {}, &pc_room);
        CHECK(surf.cutouts.empty());
    }
}

TEST_CASE("two separate windows give two cutouts matching a flood-fill oracle") {
    // Hand-built wall at 3 m with two window holes showing a backdrop at 4 m.
    CameraIntrinsics cam = small_camera(96, 72, 72.0);
    DepthImage d = flat_depth(cam, 3.0f);
    auto punch = [&](int u0, int v0, int u1, int v1) {
        for (int v = v0; v < v1; ++v)
            for (int u = u0; u < u1; ++u) d.at(u, v) = 4.0f;
    };
    punch(10, 20, 26, 40);
    punch(60, 22, 80, 44);
    OrientedPointCloud pc = estimate_normals(unproject(d), 0.2);
    ManhattanFrame frame;  // identity
    PlaneHypothesis wall{Axis::Z, 3.0, LayoutCategory::FrontWall, 1.0};
    OrientedPointCloud pc_room = to_room_frame(pc, frame);
    LayoutSurface surf = estimate_surface_extent(wall, {wall}, d, frame, {}, &pc_room);
    CHECK(surf.cutouts.size() == 2);

    // oracle: flood fill components of behind-pixels
    std::vector<int> comp(d.size(), -1);
    int n_comp = 0;
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            if (d.at(u, v) < 3.15f || comp[v * cam.width + u] >= 0) continue;
            std::vector<std::pair<int, int>> stack{{u, v}};
            comp[v * cam.width + u] = n_comp;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= cam.width || ny >= cam.height) continue;
                        if (d.at(nx, ny) >= 3.15f && comp[ny * cam.width + nx] < 0) {
                            comp[ny * cam.width + nx] = n_comp;
                            stack.emplace_back(nx, ny);
                        }
                    }
            }
            ++n_comp;
        }
    }
    CHECK(n_comp == 2);
}

TEST_CASE("merge overlapping rects") {
    auto merged = merge_overlapping_rects({{0, 0, 2, 2}, {1, 1, 3, 3}, {5, 5, 6, 6}});
    CHECK(merged.size() == 2);
    bool found = false;
    for (const auto& r : merged)
        if (r.u0 == 0 && r.u1 == 3 && r.v1 == 3) found = true;
    CHECK(found);
}

TEST_CASE("plane classification AUC on a held-out corpus") {
    const LayoutModel& model = trained_layout_model();
    PipelineConfig cfg;
    cfg.normal_radius = 0.12;
    std::vector<std::pair<double, bool>> scored;
    for (uint64_t s = 1100; s < 1112; ++s) {
        DetectionFixture fx(s);
        PlaneSweeper sweeper(fx.pc, fx.labels, fx.frame, cfg.affinity());
        std::vector<PlaneHypothesis> truth;
        for (const auto& surf : fx.bundle.spec.layout) {
            PlaneHypothesis t = surf.plane;
            t.offset -= fx.bundle.spec.camera.position[int(t.axis)];
            truth.push_back(t);
        }
        std::array<std::vector<std::pair<PlaneFeatureVector, bool>>, kLayoutCategories> samples;
        collect_plane_training(sweeper, truth, model.priors, cfg, samples);
        for (int c = 0; c < kLayoutCategories; ++c)
            for (const auto& [fv, y] : samples[c])
                scored.emplace_back(model.classifiers[c].score(fv), y);
    }
    // AUC by rank statistic
    std::sort(scored.begin(), scored.end());
    double pos = 0, neg = 0, rank_sum = 0;
    for (size_t i = 0; i < scored.size(); ++i) {
        if (scored[i].second) {
            pos += 1;
            rank_sum += double(i + 1);
        } else {
            neg += 1;
        }
    }
    REQUIRE(pos > 50);
    REQUIRE(neg > 500);
    double auc = (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
    CHECK(auc > 0.9);
}
