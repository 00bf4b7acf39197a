#pragma once

#include "dscene/alignment.hpp"

namespace dscene {

struct Hypothesis {
    enum class Kind : uint8_t { Layout, Object };
    Kind kind = Kind::Layout;
    LayoutSurface surface;                // layout hypotheses
    CandidateObject object;               // object hypotheses
    std::vector<uint32_t> region_pixels;  // object region mask (sorted)

    static Hypothesis make_layout(LayoutSurface s);
    static Hypothesis make_object(CandidateObject obj, std::vector<uint32_t> region_pixels);

    bool is_object() const { return kind == Kind::Object; }
};

struct CostBreakdown {
    double depth = 0;           // rendered-vs-observed depth disagreement
    double object_prob = 0;     // |isObject - P_object|
    double region_overlap = 0;  // shared region-pixel evidence
    double volume_overlap = 0;  // pairwise 3D overlap

    double total() const { return depth + object_prob + region_overlap + volume_overlap; }
};

struct CompositionParams {
    double noise_ratio = 1.03;   // depth errors below this ratio are free
    double phase1_depth_weight = 10.0;
    /// Depth term form: true reads the error as |log2(rendered/observed)|,
    /// false as log2(|rendered - observed|) (both minus log2(noise_ratio),
    /// clipped to [0, 1]).
    bool depth_log_ratio = true;
    double min_depth_extent = 0.01;  // overlap3d normalization floor
    int threads = 1;
};

/// Immutable composition instance: hypotheses pre-rendered once, pairwise 3D
/// overlaps cached.
class CompositionProblem {
public:
    CompositionProblem(std::vector<Hypothesis> hypotheses, const DepthImage& d,
                       const PixelLabelProbs& labels, const ManhattanFrame& frame,
                       const CompositionParams& params = {});

    int size() const { return int(hyps_.size()); }
    const Hypothesis& hyp(int i) const { return hyps_[i]; }
    const std::vector<Hypothesis>& hypotheses() const { return hyps_; }
    const CompositionParams& params() const { return params_; }
    const DepthImage& depth() const { return *depth_; }
    const ManhattanFrame& frame() const { return frame_; }

    /// From-scratch selection cost of an indicator vector.
    CostBreakdown cost(const std::vector<char>& y) const;

    /// Pairwise depth-interval overlap (objects only, 0 otherwise).
    double overlap3d(int i, int k) const;

    /// Whether the two hypotheses' renderings share any pixel.
    bool pixels_overlap(int i, int k) const;

    /// Composite z-buffer of the selected set; labels carry hypothesis ids.
    DepthRender composite_render(const std::vector<char>& y) const;

    struct Coverage {
        std::vector<uint32_t> pixel;  // sorted
        std::vector<float> zmin, zmax;
    };
    const Coverage& coverage(int i) const { return coverage_[i]; }

private:
    friend class SelectionState;

    std::vector<Hypothesis> hyps_;
    const DepthImage* depth_;
    std::vector<float> p_object_;
    ManhattanFrame frame_;
    CompositionParams params_;

    std::vector<Coverage> coverage_;
    Eigen::MatrixXd overlap3d_;  // objects x objects (dense over all hyps)

    size_t n_valid_obs_ = 0;
    double p_object_sum_ = 0.0;

    double depth_term_adjustment(float rendered_z, float observed_z) const;
};

/// Incrementally maintained selection: supports O(coverage) flip evaluation
/// and commit, exactly matching CompositionProblem::cost.
class SelectionState {
public:
    explicit SelectionState(const CompositionProblem& prob);

    void reset();
    void set(const std::vector<char>& y);
    const std::vector<char>& selection() const { return y_; }

    double depth_weight() const { return depth_weight_; }
    void set_depth_weight(double w) { depth_weight_ = w; }

    double total_cost() const;
    CostBreakdown breakdown() const;

    /// Cost change if hypothesis i were flipped; state unchanged.
    double flip_delta(int i) const;
    void apply_flip(int i);

    int selected_floor_count() const;

private:
    struct Cover {
        float z;
        int16_t hyp;
    };

    const CompositionProblem* prob_;
    std::vector<char> y_;
    double depth_weight_ = 1.0;

    std::vector<std::vector<Cover>> covers_;  // per pixel, selected hyps only
    std::vector<float> winner_z_;
    std::vector<int16_t> winner_hyp_;
    std::vector<uint16_t> region_count_;

    double depth_adj_ = 0;   // sum over covered valid pixels of (term - 1)
    double objprob_adj_ = 0; // sum over object-won pixels of (1 - 2 p)
    double region_overlap_ = 0;
    double volume_overlap_ = 0;

    double pixel_depth_adj(uint32_t px, float z, bool covered) const;
    double pixel_objprob_adj(uint32_t px, bool object_won) const;
};

struct SceneModel {
    std::vector<char> selection;
    std::vector<LayoutSurface> layout;
    std::vector<CandidateObject> objects;
    CostBreakdown cost;
};

SceneModel scene_model_from_selection(const CompositionProblem& prob,
                                      const std::vector<char>& y);

struct GreedyReport {
    std::vector<CostBreakdown> phase_costs;  // after each phase
    std::vector<CostBreakdown> step_costs;   // after every applied flip
    int flips = 0;
};

/// Three-phase greedy: depth-weighted growth, unweighted add/remove sweeps,
/// then targeted re-tries that swap out overlapping models. The selection
/// always keeps at least one floor surface.
SceneModel greedy_compose(const CompositionProblem& prob, GreedyReport* report = nullptr);

/// Exhaustive 2^N argmin (N <= 16), ties to the lexicographically smallest
/// indicator vector.
SceneModel brute_force_compose(const CompositionProblem& prob);

/// Greedy under the constraint of exactly one selected object per group
/// (ground-truth region mode). Layout hypotheses are selected greedily.
SceneModel compose_with_gt_segments(const CompositionProblem& prob,
                                    const std::vector<std::vector<int>>& groups);

}  // namespace dscene
