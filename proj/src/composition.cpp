#include "dscene/composition.hpp"

#include <algorithm>
#include <set>

#include "dscene/parallel.hpp"

namespace dscene {

Hypothesis Hypothesis::make_layout(LayoutSurface s) {
    Hypothesis h;
    h.kind = Kind::Layout;
    h.surface = std::move(s);
    return h;
}

Hypothesis Hypothesis::make_object(CandidateObject obj, std::vector<uint32_t> region_pixels) {
    Hypothesis h;
    h.kind = Kind::Object;
    h.object = std::move(obj);
    h.region_pixels = std::move(region_pixels);
    return h;
}

CompositionProblem::CompositionProblem(std::vector<Hypothesis> hypotheses, const DepthImage& d,
                                       const PixelLabelProbs& labels, const ManhattanFrame& frame,
                                       const CompositionParams& params)
    : hyps_(std::move(hypotheses)), depth_(&d), frame_(frame), params_(params) {
    if (labels.object.size() != d.size()) throw SizeMismatch("label map vs depth image");
    p_object_ = labels.object;
    for (float z : d.depth) n_valid_obs_ += DepthImage::valid_value(z);
    for (float p : p_object_) p_object_sum_ += p;

    coverage_.resize(hyps_.size());
    parallel_for(int64_t(hyps_.size()), params_.threads, [&](int64_t i) {
        auto& cov = coverage_[i];
        const Hypothesis& h = hyps_[i];
        if (h.kind == Hypothesis::Kind::Layout) {
            TriMesh mesh = layout_surface_mesh(h.surface);
            MeshInstance inst;
            inst.mesh = &mesh;
            inst.linear = frame_.rotation.transpose();
            inst.offset = Vector3d::Zero();
            DepthRender r = render_depth(std::span(&inst, 1), d.cam);
            for (size_t px = 0; px < r.depth.size(); ++px) {
                if (!r.covered(px)) continue;
                cov.pixel.push_back(uint32_t(px));
                cov.zmin.push_back(r.depth[px]);
                cov.zmax.push_back(r.depth[px]);
            }
        } else {
            MeshInstance inst = instance_in_camera(h.object.model, h.object.transform, frame_);
            MinMaxRender r = render_minmax(inst, d.cam);
            for (size_t px = 0; px < r.zmin.size(); ++px) {
                if (!r.covered(px)) continue;
                cov.pixel.push_back(uint32_t(px));
                cov.zmin.push_back(r.zmin[px]);
                cov.zmax.push_back(r.zmax[px]);
            }
        }
    });

    const int n = size();
    overlap3d_ = Eigen::MatrixXd::Zero(n, n);
    std::vector<std::pair<int, int>> object_pairs;
    for (int i = 0; i < n; ++i)
        for (int k = i + 1; k < n; ++k)
            if (hyps_[i].is_object() && hyps_[k].is_object()) object_pairs.emplace_back(i, k);
    parallel_for(int64_t(object_pairs.size()), params_.threads, [&](int64_t idx) {
        auto [i, k] = object_pairs[idx];
        const Coverage& a = coverage_[i];
        const Coverage& b = coverage_[k];
        double total = 0.0;
        size_t ia = 0, ib = 0;
        while (ia < a.pixel.size() && ib < b.pixel.size()) {
            if (a.pixel[ia] == b.pixel[ib]) {
                double inter = std::min(a.zmax[ia], b.zmax[ib]) -
                               std::max(a.zmin[ia], b.zmin[ib]);
                if (inter > 0) {
                    double ext_a = std::max(double(a.zmax[ia] - a.zmin[ia]), params_.min_depth_extent);
                    double ext_b = std::max(double(b.zmax[ib] - b.zmin[ib]), params_.min_depth_extent);
                    total += std::min(1.0, inter / std::min(ext_a, ext_b));
                }
                ++ia;
                ++ib;
            } else if (a.pixel[ia] < b.pixel[ib]) {
                ++ia;
            } else {
                ++ib;
            }
        }
        overlap3d_(i, k) = overlap3d_(k, i) = total;
    });
}

double CompositionProblem::depth_term_adjustment(float rendered_z, float observed_z) const {
    double term;
    if (params_.depth_log_ratio) {
        double ratio = double(rendered_z) / double(observed_z);
        term = std::abs(std::log2(ratio)) - std::log2(params_.noise_ratio);
    } else {
        term = std::log2(std::abs(double(rendered_z) - double(observed_z))) -
               std::log2(params_.noise_ratio);
    }
    return std::clamp(term, 0.0, 1.0) - 1.0;
}

double CompositionProblem::overlap3d(int i, int k) const { return overlap3d_(i, k); }

bool CompositionProblem::pixels_overlap(int i, int k) const {
    const Coverage& a = coverage_[i];
    const Coverage& b = coverage_[k];
    size_t ia = 0, ib = 0;
    while (ia < a.pixel.size() && ib < b.pixel.size()) {
        if (a.pixel[ia] == b.pixel[ib]) return true;
        if (a.pixel[ia] < b.pixel[ib])
            ++ia;
        else
            ++ib;
    }
    return false;
}

CostBreakdown CompositionProblem::cost(const std::vector<char>& y) const {
    if (int(y.size()) != size()) throw DimensionMismatch("selection vector size");
    DepthRender composite = composite_render(y);

    CostBreakdown out;
    out.depth = double(n_valid_obs_);
    out.object_prob = p_object_sum_;
    for (size_t px = 0; px < composite.depth.size(); ++px) {
        if (!composite.covered(px)) continue;
        float obs = depth_->depth[px];
        if (DepthImage::valid_value(obs))
            out.depth += depth_term_adjustment(composite.depth[px], obs);
        if (hyps_[composite.label[px]].is_object())
            out.object_prob += 1.0 - 2.0 * double(p_object_[px]);
    }

    std::vector<uint16_t> region_count(depth_->size(), 0);
    for (int i = 0; i < size(); ++i) {
        if (!y[i] || !hyps_[i].is_object()) continue;
        for (uint32_t px : hyps_[i].region_pixels) ++region_count[px];
    }
    for (uint16_t c : region_count)
        if (c > 1) out.region_overlap += c - 1;

    for (int i = 0; i < size(); ++i)
        for (int k = i + 1; k < size(); ++k)
            if (y[i] && y[k]) out.volume_overlap += overlap3d_(i, k);
    return out;
}

DepthRender CompositionProblem::composite_render(const std::vector<char>& y) const {
    DepthRender composite(depth_->width(), depth_->height());
    for (int i = 0; i < size(); ++i) {
        if (!y[i]) continue;
        const Coverage& cov = coverage_[i];
        for (size_t j = 0; j < cov.pixel.size(); ++j) {
            uint32_t px = cov.pixel[j];
            if (cov.zmin[j] < composite.depth[px]) {
                composite.depth[px] = cov.zmin[j];
                composite.label[px] = i;
            }
        }
    }
    return composite;
}

// ---------------------------------------------------------------------------
// SelectionState

SelectionState::SelectionState(const CompositionProblem& prob) : prob_(&prob) { reset(); }

void SelectionState::reset() {
    y_.assign(prob_->size(), 0);
    covers_.assign(prob_->depth_->size(), {});
    winner_z_.assign(prob_->depth_->size(), std::numeric_limits<float>::infinity());
    winner_hyp_.assign(prob_->depth_->size(), -1);
    region_count_.assign(prob_->depth_->size(), 0);
    depth_adj_ = objprob_adj_ = region_overlap_ = volume_overlap_ = 0.0;
}

void SelectionState::set(const std::vector<char>& y) {
    if (int(y.size()) != prob_->size()) throw DimensionMismatch("selection vector size");
    reset();
    for (int i = 0; i < prob_->size(); ++i)
        if (y[i]) apply_flip(i);
}

double SelectionState::pixel_depth_adj(uint32_t px, float z, bool covered) const {
    float obs = prob_->depth_->depth[px];
    if (!DepthImage::valid_value(obs)) return 0.0;
    return covered ? prob_->depth_term_adjustment(z, obs) : 0.0;
}

double SelectionState::pixel_objprob_adj(uint32_t px, bool object_won) const {
    return object_won ? 1.0 - 2.0 * double(prob_->p_object_[px]) : 0.0;
}

double SelectionState::total_cost() const {
    return depth_weight_ * (double(prob_->n_valid_obs_) + depth_adj_) +
           (prob_->p_object_sum_ + objprob_adj_) + region_overlap_ + volume_overlap_;
}

CostBreakdown SelectionState::breakdown() const {
    CostBreakdown b;
    b.depth = double(prob_->n_valid_obs_) + depth_adj_;
    b.object_prob = prob_->p_object_sum_ + objprob_adj_;
    b.region_overlap = region_overlap_;
    b.volume_overlap = volume_overlap_;
    return b;
}

double SelectionState::flip_delta(int i) const {
    const bool adding = !y_[i];
    const auto& cov = prob_->coverage_[i];
    const auto& hyps = prob_->hyps_;
    double d_depth = 0, d_objprob = 0, d_region = 0, d_volume = 0;

    for (size_t j = 0; j < cov.pixel.size(); ++j) {
        uint32_t px = cov.pixel[j];
        float old_z = winner_z_[px];
        int16_t old_hyp = winner_hyp_[px];
        float new_z = old_z;
        int16_t new_hyp = old_hyp;
        if (adding) {
            float z = cov.zmin[j];
            if (z < old_z || (z == old_z && (old_hyp < 0 || i < old_hyp))) {
                new_z = z;
                new_hyp = int16_t(i);
            }
        } else {
            if (old_hyp == i) {
                new_z = std::numeric_limits<float>::infinity();
                new_hyp = -1;
                for (const Cover& c : covers_[px]) {
                    if (c.hyp == i) continue;
                    if (c.z < new_z || (c.z == new_z && c.hyp < new_hyp)) {
                        new_z = c.z;
                        new_hyp = c.hyp;
                    }
                }
            }
        }
        if (new_hyp == old_hyp) continue;
        bool old_cov = old_hyp >= 0, new_cov = new_hyp >= 0;
        d_depth += pixel_depth_adj(px, new_z, new_cov) - pixel_depth_adj(px, old_z, old_cov);
        bool old_obj = old_cov && hyps[old_hyp].is_object();
        bool new_obj = new_cov && hyps[new_hyp].is_object();
        if (old_obj != new_obj)
            d_objprob += pixel_objprob_adj(px, new_obj) - pixel_objprob_adj(px, old_obj);
    }

    if (hyps[i].is_object()) {
        for (uint32_t px : hyps[i].region_pixels) {
            uint16_t c = region_count_[px];
            if (adding) {
                if (c >= 1) d_region += 1.0;
            } else {
                if (c >= 2) d_region -= 1.0;
            }
        }
        for (int k = 0; k < prob_->size(); ++k)
            if (y_[k] && k != i) d_volume += prob_->overlap3d_(i, k);
        if (!adding) d_volume = -d_volume;
    }

    return depth_weight_ * d_depth + d_objprob + d_region + d_volume;
}

void SelectionState::apply_flip(int i) {
    const bool adding = !y_[i];
    const auto& cov = prob_->coverage_[i];
    const auto& hyps = prob_->hyps_;

    for (size_t j = 0; j < cov.pixel.size(); ++j) {
        uint32_t px = cov.pixel[j];
        float old_z = winner_z_[px];
        int16_t old_hyp = winner_hyp_[px];
        auto& list = covers_[px];
        if (adding) {
            list.push_back({cov.zmin[j], int16_t(i)});
        } else {
            for (size_t c = 0; c < list.size(); ++c) {
                if (list[c].hyp == i) {
                    list[c] = list.back();
                    list.pop_back();
                    break;
                }
            }
        }
        float new_z = std::numeric_limits<float>::infinity();
        int16_t new_hyp = -1;
        for (const Cover& c : list) {
            if (c.z < new_z || (c.z == new_z && c.hyp < new_hyp)) {
                new_z = c.z;
                new_hyp = c.hyp;
            }
        }
        if (new_hyp == old_hyp) continue;
        bool old_cov = old_hyp >= 0, new_cov = new_hyp >= 0;
        depth_adj_ += pixel_depth_adj(px, new_z, new_cov) - pixel_depth_adj(px, old_z, old_cov);
        bool old_obj = old_cov && hyps[old_hyp].is_object();
        bool new_obj = new_cov && hyps[new_hyp].is_object();
        if (old_obj != new_obj)
            objprob_adj_ += pixel_objprob_adj(px, new_obj) - pixel_objprob_adj(px, old_obj);
        winner_z_[px] = new_z;
        winner_hyp_[px] = new_hyp;
    }

    if (hyps[i].is_object()) {
        for (uint32_t px : hyps[i].region_pixels) {
            if (adding) {
                if (region_count_[px] >= 1) region_overlap_ += 1.0;
                ++region_count_[px];
            } else {
                --region_count_[px];
                if (region_count_[px] >= 1) region_overlap_ -= 1.0;
            }
        }
        double vol = 0.0;
        for (int k = 0; k < prob_->size(); ++k)
            if (y_[k] && k != i) vol += prob_->overlap3d_(i, k);
        volume_overlap_ += adding ? vol : -vol;
    }

    y_[i] = adding ? 1 : 0;
}

int SelectionState::selected_floor_count() const {
    int n = 0;
    for (int i = 0; i < prob_->size(); ++i)
        if (y_[i] && !prob_->hyps_[i].is_object() &&
            prob_->hyps_[i].surface.plane.category == LayoutCategory::Floor)
            ++n;
    return n;
}

// ---------------------------------------------------------------------------
// Search

SceneModel scene_model_from_selection(const CompositionProblem& prob,
                                      const std::vector<char>& y) {
    SceneModel model;
    model.selection = y;
    for (int i = 0; i < prob.size(); ++i) {
        if (!y[i]) continue;
        if (prob.hyp(i).is_object())
            model.objects.push_back(prob.hyp(i).object);
        else
            model.layout.push_back(prob.hyp(i).surface);
    }
    model.cost = prob.cost(y);
    return model;
}

namespace {

constexpr double kImprovementEps = 1e-12;

bool is_floor_hyp(const CompositionProblem& prob, int i) {
    return !prob.hyp(i).is_object() &&
           prob.hyp(i).surface.plane.category == LayoutCategory::Floor;
}

// One greedy pass: repeatedly applies the best strictly improving flip.
// Removing the last selected floor is not allowed. Records runner-up
// additions when a collector is given.
int greedy_flips(const CompositionProblem& prob, SelectionState& state,
                 std::set<int>* second_best_adds, GreedyReport* report = nullptr) {
    int flips = 0;
    while (true) {
        int best = -1;
        double best_delta = -kImprovementEps;
        int best_add = -1, second_add = -1;
        double best_add_delta = -kImprovementEps, second_add_delta = -kImprovementEps;
        bool floor_locked = state.selected_floor_count() <= 1;
        for (int i = 0; i < prob.size(); ++i) {
            if (state.selection()[i] && floor_locked && is_floor_hyp(prob, i)) continue;
            double delta = state.flip_delta(i);
            if (delta < best_delta) {
                best = i;
                best_delta = delta;
            }
            if (!state.selection()[i]) {
                if (delta < best_add_delta) {
                    second_add = best_add;
                    second_add_delta = best_add_delta;
                    best_add = i;
                    best_add_delta = delta;
                } else if (delta < second_add_delta) {
                    second_add = i;
                    second_add_delta = delta;
                }
            }
        }
        if (best < 0) break;
        if (second_best_adds && second_add >= 0) second_best_adds->insert(second_add);
        state.apply_flip(best);
        if (report) report->step_costs.push_back(state.breakdown());
        ++flips;
        if (flips > 4 * prob.size() + 64) break;  // strict improvement makes this unreachable
    }
    return flips;
}

void force_floor(const CompositionProblem& prob, SelectionState& state) {
    if (state.selected_floor_count() > 0) return;
    int best = -1;
    double best_delta = std::numeric_limits<double>::infinity();
    for (int i = 0; i < prob.size(); ++i) {
        if (!is_floor_hyp(prob, i)) continue;
        double delta = state.flip_delta(i);
        if (delta < best_delta) {
            best_delta = delta;
            best = i;
        }
    }
    if (best < 0) throw NoFloorFound("no floor hypothesis available");
    state.apply_flip(best);
}

}  // namespace

SceneModel greedy_compose(const CompositionProblem& prob, GreedyReport* report) {
    if (prob.size() == 0) throw NoHypotheses();
    SelectionState state(prob);
    std::set<int> second_best_adds;
    int flips = 0;

    // Phase 1: depth-weighted greedy from the empty selection.
    state.set_depth_weight(prob.params().phase1_depth_weight);
    force_floor(prob, state);
    if (report) report->step_costs.push_back(state.breakdown());
    flips += 1 + greedy_flips(prob, state, &second_best_adds, report);
    if (report) report->phase_costs.push_back(state.breakdown());

    // Phase 2: unweighted add/remove sweeps.
    state.set_depth_weight(1.0);
    flips += greedy_flips(prob, state, &second_best_adds, report);
    if (report) report->phase_costs.push_back(state.breakdown());

    // Phase 3: trial insertions with overlap eviction. Candidate objects are
    // those sharing a region with a selected object or runner-up additions.
    std::set<int> selected_regions;
    for (int i = 0; i < prob.size(); ++i)
        if (state.selection()[i] && prob.hyp(i).is_object())
            selected_regions.insert(prob.hyp(i).object.region_id);

    std::vector<int> trials;
    for (int i = 0; i < prob.size(); ++i) {
        if (state.selection()[i]) continue;
        if (!prob.hyp(i).is_object()) {
            trials.push_back(i);
        } else if (selected_regions.count(prob.hyp(i).object.region_id) ||
                   second_best_adds.count(i)) {
            trials.push_back(i);
        }
    }

    for (int t : trials) {
        if (state.selection()[t]) continue;
        std::vector<char> snapshot = state.selection();
        double before = state.total_cost();

        state.apply_flip(t);
        ++flips;
        for (int i = 0; i < prob.size(); ++i) {
            if (i == t || !state.selection()[i]) continue;
            if (!prob.pixels_overlap(t, i)) continue;
            if (is_floor_hyp(prob, i) && state.selected_floor_count() <= 1) continue;
            state.apply_flip(i);
            ++flips;
        }
        flips += greedy_flips(prob, state, nullptr);

        if (state.total_cost() < before - kImprovementEps) continue;  // keep
        state.set(snapshot);
    }
    if (report) {
        report->phase_costs.push_back(state.breakdown());
        report->flips = flips;
    }
    return scene_model_from_selection(prob, state.selection());
}

SceneModel brute_force_compose(const CompositionProblem& prob) {
    const int n = prob.size();
    if (n == 0) throw NoHypotheses();
    if (n > 16) throw TooManyHypotheses("brute force capped at 16 hypotheses");

    std::vector<char> best_y;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<char> y(n, 0);
    for (uint32_t mask = 0; mask < (1u << n); ++mask) {
        for (int i = 0; i < n; ++i) y[i] = (mask >> i) & 1;
        double c = prob.cost(y).total();
        if (c < best_cost - 1e-12 ||
            (std::abs(c - best_cost) <= 1e-12 && (best_y.empty() || y < best_y))) {
            best_cost = c;
            best_y = y;
        }
    }
    return scene_model_from_selection(prob, best_y);
}

SceneModel compose_with_gt_segments(const CompositionProblem& prob,
                                    const std::vector<std::vector<int>>& groups) {
    if (prob.size() == 0) throw NoHypotheses();
    for (const auto& g : groups)
        if (g.empty()) throw InvalidSpec("empty hypothesis group");

    SelectionState state(prob);
    force_floor(prob, state);

    auto layout_greedy = [&]() {
        int flips = 0;
        while (true) {
            int best = -1;
            double best_delta = -kImprovementEps;
            bool floor_locked = state.selected_floor_count() <= 1;
            for (int i = 0; i < prob.size(); ++i) {
                if (prob.hyp(i).is_object()) continue;
                if (state.selection()[i] && floor_locked && is_floor_hyp(prob, i)) continue;
                double delta = state.flip_delta(i);
                if (delta < best_delta) {
                    best_delta = delta;
                    best = i;
                }
            }
            if (best < 0) break;
            state.apply_flip(best);
            ++flips;
        }
        return flips;
    };

    layout_greedy();

    // Exactly one selection per group, initialized by the best member.
    std::vector<int> chosen(groups.size(), -1);
    for (size_t g = 0; g < groups.size(); ++g) {
        int best = -1;
        double best_delta = std::numeric_limits<double>::infinity();
        for (int i : groups[g]) {
            double delta = state.flip_delta(i);
            if (delta < best_delta) {
                best_delta = delta;
                best = i;
            }
        }
        chosen[g] = best;
        state.apply_flip(best);
    }

    for (int round = 0; round < 20; ++round) {
        bool changed = false;
        for (size_t g = 0; g < groups.size(); ++g) {
            int current = chosen[g];
            int best = current;
            double best_cost = state.total_cost();
            for (int i : groups[g]) {
                if (i == current) continue;
                state.apply_flip(current);
                state.apply_flip(i);
                double c = state.total_cost();
                if (c < best_cost - kImprovementEps) {
                    best_cost = c;
                    best = i;
                }
                state.apply_flip(i);
                state.apply_flip(current);
            }
            if (best != current) {
                state.apply_flip(current);
                state.apply_flip(best);
                chosen[g] = best;
                changed = true;
            }
        }
        if (layout_greedy() > 0) changed = true;
        if (!changed) break;
    }
    return scene_model_from_selection(prob, state.selection());
}

}  // namespace dscene
