#pragma once

#include "dscene/evaluation.hpp"
#include "dscene/proposals.hpp"
#include "dscene/retrieval.hpp"
#include "dscene/rng.hpp"

namespace dscene {

// ---------------------------------------------------------------------------
// Shape library: parametric watertight meshes, bbox-centered local frame.

TriMesh make_box(double w, double h, double d);
TriMesh make_table(double w, double h, double d);
TriMesh make_chair(double w, double h, double d);
TriMesh make_lshelf(double w, double h, double d);
TriMesh make_prism(double radius, double h, int sides = 8);

/// ids: box, table, chair, lshelf, prism
const std::vector<std::string>& shape_ids();
TriMesh make_shape(const std::string& id, const std::vector<double>& params);
std::string shape_mesh_ref(const std::string& id, const std::vector<double>& params);
/// Parses "shape:<id>:<p1>,<p2>,..."; returns false if not a shape ref.
bool parse_shape_ref(const std::string& ref, std::string& id, std::vector<double>& params);

// ---------------------------------------------------------------------------
// Scene specification

struct NoiseModel {
    double sigma_rel = 0.01;  // multiplicative Gaussian
    double dropout = 0.02;    // probability of losing a pixel
    bool quantize = true;     // 1 mm depth quantization

    bool active() const { return sigma_rel > 0 || dropout > 0; }
    static NoiseModel none() { return {0.0, 0.0, true}; }
};

struct SceneObjectSpec {
    std::string shape_id;
    std::vector<double> params;
    double scale = 1.0;
    double yaw = 0.0;
    Vector3d translation = Vector3d::Zero();
    uint32_t instance_id = 0;

    TriMesh world_mesh() const;
};

/// World frame: y down, floor at y = 0, camera looking roughly along +z.
struct SceneSpec {
    CameraPose camera;
    std::vector<LayoutSurface> layout;
    std::vector<SceneObjectSpec> objects;
    NoiseModel noise = NoiseModel::none();
    uint64_t seed = 0;

    /// True camera-to-room rotation (the Manhattan frame a perfect estimator
    /// would recover).
    ManhattanFrame true_frame() const { return {camera.rotation.transpose()}; }
};

enum class Difficulty { Easy, Medium, Hard };

struct GenOptions {
    int width = 160, height = 120;
    double focal = 120.0;
    int target_superpixels = 180;
    double pobject_blur_sigma = 3.0;
    /// Probability of merging a boundary superpixel into a neighboring
    /// instance (stress flag; 0 keeps superpixels instance-pure).
    double leaky_superpixels = 0.0;
    double voxel_spacing = 0.03;
    bool make_voxels = true;
};

struct GroundTruthBundle {
    SceneSpec spec;
    DepthImage depth;                 // sensor depth (noise applied if active)
    DepthImage depth_clean;           // exact render
    SuperpixelMap instances;          // 0 = layout/background
    std::vector<float> p_object;
    std::vector<float> boundary;
    SuperpixelMap superpixels;
    VoxelGrid truth_voxels;
    LayoutRender layout_render;       // ground-truth layout depth/labels
};

/// Deterministic bundle from a fixed spec.
GroundTruthBundle generate_scene(const SceneSpec& spec, const GenOptions& opt = {});

/// Random scene at a difficulty preset; placement guarantees every object
/// keeps some visible support.
SceneSpec random_scene_spec(uint64_t seed, Difficulty difficulty, const GenOptions& opt = {},
                            const NoiseModel& noise = NoiseModel::none());
GroundTruthBundle generate_scene(uint64_t seed, Difficulty difficulty, const GenOptions& opt = {},
                                 const NoiseModel& noise = NoiseModel::none());

/// Multiplicative Gaussian depth noise, dropout, 1 mm quantization.
DepthImage add_sensor_noise(const DepthImage& d, const NoiseModel& model, Rng rng);

/// One exemplar per visible ground-truth object instance across the given
/// bundles: features from its region, label and mesh from its generator.
ExemplarLibrary build_exemplar_library(const std::vector<const GroundTruthBundle*>& bundles);

}  // namespace dscene
