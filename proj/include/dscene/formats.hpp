#pragma once

#include <filesystem>
#include <string>

#include "dscene/evaluation.hpp"
#include "dscene/layout.hpp"
#include "dscene/mesh.hpp"
#include "dscene/retrieval.hpp"
#include "dscene/synth.hpp"

namespace dscene {

namespace fs = std::filesystem;

// DMAP: "DMAP <width> <height>\n" + width*height little-endian float32,
// row-major, meters, 0.0 = missing.
void write_dmap(const fs::path& path, int width, int height, const std::vector<float>& data);
std::vector<float> read_dmap(const fs::path& path, int& width, int& height);

void write_depth_image(const fs::path& path, const DepthImage& d);
DepthImage read_depth_image(const fs::path& path, const CameraIntrinsics& cam);

// SPIX: "SPIX <width> <height>\n" + width*height little-endian uint32.
void write_spix(const fs::path& path, int width, int height, const std::vector<uint32_t>& labels);
std::vector<uint32_t> read_spix(const fs::path& path, int& width, int& height);

// VOX: "VOX <nx> <ny> <nz> <spacing> <ox> <oy> <oz>\n" + bit-packed
// occupancy, x-fastest, LSB-first within each byte.
void write_vox(const fs::path& path, const VoxelGrid& grid);
VoxelGrid read_vox(const fs::path& path);

// ASCII OFF triangle meshes (polygon faces are fan-triangulated on read).
void write_off(const fs::path& path, const TriMesh& mesh);
TriMesh read_off(const fs::path& path);

// Scene file (ground truth and predicted models share the schema).
struct SceneFile {
    CameraPose camera;
    std::vector<LayoutSurface> layout;
    std::vector<SceneObjectSpec> objects;  // mesh refs: "shape:..." or OFF path
    uint64_t seed = 0;
};

void write_scene_file(const fs::path& path, const SceneFile& scene);
SceneFile read_scene_file(const fs::path& path);

SceneFile scene_file_from_spec(const SceneSpec& spec);
SceneSpec spec_from_scene_file(const SceneFile& file, const NoiseModel& noise = NoiseModel::none());

/// Resolves a mesh reference: "shape:<id>:<params>" via the shape library,
/// anything else as an OFF path relative to base_dir.
TriMesh resolve_mesh_ref(const std::string& ref, const fs::path& base_dir);

// Layout classifier persistence: 13 floats, one per line.
void write_classifier(const fs::path& path, const PlaneClassifier& clf);
PlaneClassifier read_classifier(const fs::path& path);

// Position prior: "PRIOR <min_offset> <bin_width> <n>\n" + n densities.
void write_prior(const fs::path& path, const PositionPrior& prior);
PositionPrior read_prior(const fs::path& path);

void write_layout_model(const fs::path& dir, const LayoutModel& model);
LayoutModel read_layout_model(const fs::path& dir);

// Metric model as JSON (W, mean, stddev, rank).
void write_metric_model(const fs::path& path, const MetricModel& m);
MetricModel read_metric_model(const fs::path& path);

// Exemplar library directory: index file listing one entry per line, plus a
// sidecar text file and an OFF mesh per entry.
void write_exemplar_library(const fs::path& dir, const ExemplarLibrary& lib);
ExemplarLibrary read_exemplar_library(const fs::path& dir);

// Bundle directory (depth.dmap, instances.spix, pobject.dmap, boundary.dmap,
// superpixels.spix, scene.json, truth_voxels.vox).
void write_bundle(const fs::path& dir, const GroundTruthBundle& bundle);

struct BundleData {
    SceneFile scene;
    DepthImage depth;
    SuperpixelMap instances;
    std::vector<float> p_object;
    std::vector<float> boundary;
    SuperpixelMap superpixels;
    fs::path dir;

    bool has_truth_voxels() const;
    VoxelGrid truth_voxels() const;  // loaded on demand
};

BundleData read_bundle(const fs::path& dir);

}  // namespace dscene
