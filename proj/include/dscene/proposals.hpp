#pragma once

#include "dscene/geometry.hpp"
#include "dscene/layout.hpp"

namespace dscene {

constexpr uint32_t kInvalidSuperpixel = 0xFFFFFFFFu;

/// Label map: valid pixels carry a superpixel id in [0, count), pixels with
/// no depth carry kInvalidSuperpixel.
struct SuperpixelMap {
    int width = 0, height = 0;
    std::vector<uint32_t> labels;
    int count = 0;

    uint32_t at(size_t idx) const { return labels[idx]; }
    static SuperpixelMap from_labels(int w, int h, std::vector<uint32_t> labels);
};

struct SuperpixelGraph {
    int width = 0, height = 0;
    std::vector<std::vector<uint32_t>> pixels;  // per superpixel, sorted
    std::vector<double> objectness;             // mean P_object per superpixel
    struct Edge {
        int a, b;
        double weight;  // mean boundary strength across the shared border
    };
    std::vector<Edge> edges;
    std::vector<std::vector<std::pair<int, double>>> adjacency;  // node -> (nbr, weight)

    int node_count() const { return int(pixels.size()); }
};

/// Builds the adjacency graph. `valid` marks pixels that must be covered by a
/// superpixel; throws NonPartition if any is not.
SuperpixelGraph build_graph(const SuperpixelMap& spix, const std::vector<float>& boundary_strength,
                            const std::vector<float>& p_object,
                            const std::vector<uint8_t>& valid);

struct RegionProposal {
    std::vector<uint32_t> pixels;  // sorted pixel indices (union of members)
    std::vector<int> members;      // superpixel ids
    int seed = -1;
};

struct PrimParams {
    double seed_objectness_floor = 0.1;
    double threshold_lo = 0.2, threshold_hi = 0.8;       // stop-cost range
    double size_frac_lo = 0.05, size_frac_hi = 0.5;      // of image area, in pixels
};

/// Objectness-seeded randomized Prim region growth; n independent draws,
/// deterministic given rng_seed.
std::vector<RegionProposal> randomized_prim_proposals(const SuperpixelGraph& g, int n,
                                                      uint64_t rng_seed,
                                                      const PrimParams& params = {});

/// Greedy scan in generation order dropping near-duplicates by pixel IoU.
std::vector<RegionProposal> deduplicate(const std::vector<RegionProposal>& proposals,
                                        double iou_threshold = 0.95);

PixelMask proposal_mask(const RegionProposal& r, int width, int height);

}  // namespace dscene
