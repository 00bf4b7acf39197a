#include "dscene/proposals.hpp"

#include <algorithm>
#include <map>

#include "dscene/rng.hpp"

namespace dscene {

SuperpixelMap SuperpixelMap::from_labels(int w, int h, std::vector<uint32_t> labels) {
    if (labels.size() != size_t(w) * h) throw SizeMismatch("superpixel label map size");
    SuperpixelMap m;
    m.width = w;
    m.height = h;
    m.labels = std::move(labels);
    uint32_t max_label = 0;
    bool any = false;
    for (uint32_t l : m.labels) {
        if (l == kInvalidSuperpixel) continue;
        max_label = std::max(max_label, l);
        any = true;
    }
    m.count = any ? int(max_label) + 1 : 0;
    return m;
}

SuperpixelGraph build_graph(const SuperpixelMap& spix, const std::vector<float>& boundary_strength,
                            const std::vector<float>& p_object,
                            const std::vector<uint8_t>& valid) {
    size_t n_px = size_t(spix.width) * spix.height;
    if (boundary_strength.size() != n_px || p_object.size() != n_px || valid.size() != n_px)
        throw SizeMismatch("graph input map sizes");

    SuperpixelGraph g;
    g.width = spix.width;
    g.height = spix.height;
    g.pixels.resize(spix.count);
    g.objectness.assign(spix.count, 0.0);

    std::vector<double> obj_sum(spix.count, 0.0);
    for (size_t i = 0; i < n_px; ++i) {
        uint32_t l = spix.labels[i];
        if (l == kInvalidSuperpixel) {
            if (valid[i]) throw NonPartition("valid pixel not covered by any superpixel");
            continue;
        }
        if (int(l) >= spix.count) throw NonPartition("superpixel id out of range");
        g.pixels[l].push_back(uint32_t(i));
        obj_sum[l] += p_object[i];
    }
    for (int s = 0; s < spix.count; ++s) {
        if (g.pixels[s].empty()) throw NonPartition("empty superpixel id");
        g.objectness[s] = obj_sum[s] / double(g.pixels[s].size());
    }

    // Edge weight: mean, over 4-adjacent cross pairs, of the two pixels'
    // boundary strengths.
    std::map<std::pair<int, int>, std::pair<double, int64_t>> acc;
    auto visit_pair = [&](size_t i, size_t j) {
        uint32_t a = spix.labels[i], b = spix.labels[j];
        if (a == b || a == kInvalidSuperpixel || b == kInvalidSuperpixel) return;
        int lo = std::min(int(a), int(b)), hi = std::max(int(a), int(b));
        auto& slot = acc[{lo, hi}];
        slot.first += 0.5 * (double(boundary_strength[i]) + double(boundary_strength[j]));
        slot.second += 1;
    };
    for (int v = 0; v < spix.height; ++v) {
        for (int u = 0; u < spix.width; ++u) {
            size_t i = size_t(v) * spix.width + u;
            if (u + 1 < spix.width) visit_pair(i, i + 1);
            if (v + 1 < spix.height) visit_pair(i, i + size_t(spix.width));
        }
    }
    g.adjacency.resize(spix.count);
    for (const auto& [key, slot] : acc) {
        double w = slot.first / double(slot.second);
        g.edges.push_back({key.first, key.second, w});
        g.adjacency[key.first].emplace_back(key.second, w);
        g.adjacency[key.second].emplace_back(key.first, w);
    }
    return g;
}

std::vector<RegionProposal> randomized_prim_proposals(const SuperpixelGraph& g, int n,
                                                      uint64_t rng_seed,
                                                      const PrimParams& params) {
    if (n < 1 || g.node_count() == 0) throw InvalidSpec("empty graph or n < 1");

    std::vector<double> seed_weight(g.node_count());
    double total_weight = 0.0;
    for (int s = 0; s < g.node_count(); ++s) {
        seed_weight[s] = g.objectness[s] >= params.seed_objectness_floor ? g.objectness[s] : 0.0;
        total_weight += seed_weight[s];
    }
    if (total_weight <= 0.0) throw NoValidSeed();

    double image_area = double(g.width) * double(g.height);
    Rng base(rng_seed);
    std::vector<RegionProposal> proposals(n);

    for (int draw = 0; draw < n; ++draw) {
        Rng rng = base.derive(uint64_t(draw));

        double pick = rng.uniform() * total_weight;
        int seed = 0;
        for (int s = 0; s < g.node_count(); ++s) {
            pick -= seed_weight[s];
            if (pick < 0) {
                seed = s;
                break;
            }
            if (s == g.node_count() - 1) seed = s;
        }
        while (seed_weight[seed] == 0.0) seed = (seed + 1) % g.node_count();

        double stop_threshold = rng.uniform(params.threshold_lo, params.threshold_hi);
        double max_size = rng.uniform(params.size_frac_lo, params.size_frac_hi) * image_area;

        std::vector<char> in_region(g.node_count(), 0);
        std::vector<double> best_link(g.node_count(), std::numeric_limits<double>::infinity());
        std::vector<int> members{seed};
        in_region[seed] = 1;
        size_t pixel_count = g.pixels[seed].size();
        for (const auto& [nbr, w] : g.adjacency[seed]) best_link[nbr] = std::min(best_link[nbr], w);

        while (double(pixel_count) <= max_size) {
            int best = -1;
            double best_cost = std::numeric_limits<double>::infinity();
            for (int s = 0; s < g.node_count(); ++s) {
                if (in_region[s] || !std::isfinite(best_link[s])) continue;
                double cost = best_link[s] * (1.0 - g.objectness[s]);
                if (cost < best_cost) {
                    best_cost = cost;
                    best = s;
                }
            }
            if (best < 0 || best_cost > stop_threshold) break;
            in_region[best] = 1;
            members.push_back(best);
            pixel_count += g.pixels[best].size();
            for (const auto& [nbr, w] : g.adjacency[best])
                if (!in_region[nbr]) best_link[nbr] = std::min(best_link[nbr], w);
        }

        RegionProposal& prop = proposals[draw];
        prop.seed = seed;
        std::sort(members.begin(), members.end());
        prop.members = std::move(members);
        for (int s : prop.members)
            prop.pixels.insert(prop.pixels.end(), g.pixels[s].begin(), g.pixels[s].end());
        std::sort(prop.pixels.begin(), prop.pixels.end());
    }
    return proposals;
}

std::vector<RegionProposal> deduplicate(const std::vector<RegionProposal>& proposals,
                                        double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw InvalidSpec("iou threshold must be in (0,1]");
    std::vector<RegionProposal> kept;
    for (const auto& prop : proposals) {
        bool dup = false;
        for (const auto& k : kept) {
            if (pixel_iou(prop.pixels, k.pixels) >= iou_threshold) {
                dup = true;
                break;
            }
        }
        if (!dup) kept.push_back(prop);
    }
    return kept;
}

PixelMask proposal_mask(const RegionProposal& r, int width, int height) {
    PixelMask mask(width, height);
    for (uint32_t px : r.pixels) mask.set(px);
    return mask;
}

}  // namespace dscene
