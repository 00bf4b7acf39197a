#pragma once

#include "dscene/composition.hpp"
#include "dscene/formats.hpp"

namespace dscene {

struct PipelineConfig {
    // plane affinity / detection
    double sigma_p = 0.025;
    double sigma_n = 0.0799;
    double nms_radius = 0.15;
    double plane_step = 0.02;
    double plane_threshold = 0.0;
    double normal_radius = 0.12;  // ~3 pixel footprints at the synthetic camera resolution
    double cutout_behind_fraction = 0.05;
    int min_cutout_pixels = 50;
    // proposals
    int proposal_count = 100;
    double dedup_iou = 0.95;
    // retrieval
    int retrieval_k = 10;
    int kept_candidates = 3;
    // alignment
    double c_missing = 0.3;
    std::string protrusion = "front";  // "front" | "behind" (out-of-region penalty side)
    // composition
    double noise_ratio = 1.03;
    double phase1_weight = 10.0;
    std::string depth_term = "ratio";  // "ratio" | "absolute"
    // evaluation
    double voxel_spacing = 0.03;
    double eps_factor = 0.05;
    // run control
    uint64_t seed = 0;
    int threads = 1;
    bool use_cache = true;

    void apply_json_file(const fs::path& path);
    /// Audit dump, ordered; excludes thread count (results never depend on it).
    std::vector<std::pair<std::string, std::string>> kv() const;

    AffinityParams affinity() const { return {sigma_p, sigma_n}; }
    PlaneDetectionParams detection_params() const;
    ExtentParams extent_params() const;
    AlignParams align_params() const;
    CompositionParams composition_params() const;
};

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    int scenes = 40;
    Difficulty difficulty = Difficulty::Medium;
    uint64_t seed = 5000;
    GenOptions gen;
    NoiseModel noise = NoiseModel::none();
};

/// Trains the layout classifiers/priors, the retrieval metric, and builds
/// the exemplar library from synthetic scenes; writes everything under
/// models_dir (layout/, metric.json, library/).
void train_models(const fs::path& models_dir, const PipelineConfig& cfg, const TrainOptions& opt);

struct Models {
    LayoutModel layout;
    MetricModel metric;
    ExemplarLibrary library;
};
Models read_models(const fs::path& models_dir);

/// Labeled plane-candidate features for classifier training (sweep grid over
/// one scene; positives within half a step of a true plane offset). The
/// priors fill f12 exactly as detection will see it.
void collect_plane_training(const PlaneSweeper& sweeper,
                            const std::vector<PlaneHypothesis>& true_planes,
                            const std::array<PositionPrior, kLayoutCategories>& priors,
                            const PipelineConfig& cfg,
                            std::array<std::vector<std::pair<PlaneFeatureVector, bool>>,
                                       kLayoutCategories>& out);

// ---------------------------------------------------------------------------
// Stages (each reads its inputs from the bundle directory and writes its
// artifacts back, so stages can be re-run independently and diffed)

struct LayoutStage {
    ManhattanFrame frame;
    std::vector<LayoutSurface> surfaces;
};
LayoutStage stage_layout(const fs::path& bundle_dir, const Models& models,
                         const PipelineConfig& cfg);
LayoutStage read_layout_stage(const fs::path& bundle_dir);

std::vector<RegionProposal> stage_propose(const fs::path& bundle_dir, const PipelineConfig& cfg);
std::vector<RegionProposal> read_propose_stage(const fs::path& bundle_dir);

struct RetrievalStage {
    // per proposal: (library id, distance), ascending; empty when the region
    // had too few valid points
    std::vector<std::vector<std::pair<int, double>>> matches;
};
RetrievalStage stage_retrieve(const fs::path& bundle_dir, const Models& models,
                              const PipelineConfig& cfg);
RetrievalStage read_retrieve_stage(const fs::path& bundle_dir);

std::vector<CandidateObject> stage_fit(const fs::path& bundle_dir, const Models& models,
                                       const PipelineConfig& cfg);
std::vector<CandidateObject> read_fit_stage(const fs::path& bundle_dir, const Models& models);

SceneModel stage_compose(const fs::path& bundle_dir, const Models& models,
                         const PipelineConfig& cfg);

EvalReport stage_eval(const fs::path& bundle_dir, const PipelineConfig& cfg,
                      const fs::path& model_path = {});

struct PipelineResult {
    SceneModel model;
    EvalReport report;
};

/// layout -> propose -> retrieve -> fit -> compose -> eval over one bundle
/// directory. Stage failures carry the stage name; artifacts written before
/// the failure stay on disk.
PipelineResult run_pipeline(const fs::path& bundle_dir, const fs::path& models_dir,
                            const PipelineConfig& cfg);

void write_report_kv(const fs::path& path, const EvalReport& report, const SceneModel& model,
                     const PipelineConfig& cfg);
void write_report_text(const fs::path& path, const EvalReport& report, const SceneModel& model);

}  // namespace dscene
