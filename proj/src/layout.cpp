#include "dscene/layout.hpp"

#include <algorithm>
#include <deque>

#include "dscene/parallel.hpp"

namespace dscene {

const char* layout_category_name(LayoutCategory c) {
    switch (c) {
        case LayoutCategory::Floor: return "floor";
        case LayoutCategory::Ceiling: return "ceiling";
        case LayoutCategory::LeftWall: return "left wall";
        case LayoutCategory::RightWall: return "right wall";
        default: return "front wall";
    }
}

std::optional<LayoutCategory> layout_category_from_name(const std::string& name) {
    for (int i = 0; i < kLayoutCategories; ++i) {
        auto c = LayoutCategory(i);
        if (name == layout_category_name(c)) return c;
    }
    return std::nullopt;
}

Axis layout_category_axis(LayoutCategory c) {
    switch (c) {
        case LayoutCategory::Floor:
        case LayoutCategory::Ceiling: return Axis::Y;
        case LayoutCategory::LeftWall:
        case LayoutCategory::RightWall: return Axis::X;
        default: return Axis::Z;
    }
}

Vector3d layout_category_normal(LayoutCategory c) {
    switch (c) {
        case LayoutCategory::Floor: return {0, -1, 0};
        case LayoutCategory::Ceiling: return {0, 1, 0};
        case LayoutCategory::LeftWall: return {1, 0, 0};
        case LayoutCategory::RightWall: return {-1, 0, 0};
        default: return {0, 0, -1};
    }
}

PixelLabelProbs PixelLabelProbs::uniform(int w, int h) {
    PixelLabelProbs out;
    out.width = w;
    out.height = h;
    size_t n = size_t(w) * h;
    out.floor.assign(n, 0.25f);
    out.wall.assign(n, 0.25f);
    out.ceiling.assign(n, 0.25f);
    out.object.assign(n, 0.25f);
    return out;
}

PixelLabelProbs PixelLabelProbs::from_object_prob(int w, int h,
                                                  const std::vector<float>& p_object) {
    if (p_object.size() != size_t(w) * h) throw SizeMismatch("object probability map size");
    PixelLabelProbs out;
    out.width = w;
    out.height = h;
    out.object = p_object;
    size_t n = p_object.size();
    out.floor.resize(n);
    out.wall.resize(n);
    out.ceiling.resize(n);
    for (size_t i = 0; i < n; ++i) {
        float rest = (1.0f - p_object[i]) / 3.0f;
        out.floor[i] = rest;
        out.wall[i] = rest;
        out.ceiling[i] = rest;
    }
    return out;
}

double point_plane_affinity(const Vector3d& p, const Vector3d& n, const PlaneHypothesis& plane,
                            const AffinityParams& params) {
    double dist_to_point = p.norm();
    if (!(dist_to_point > 0)) return 0.0;
    double dist_p = std::abs(p[int(plane.axis)] - plane.offset) / dist_to_point;
    double c = std::clamp(n.dot(plane.normal()), -1.0, 1.0);
    double dist_n = std::acos(c);
    double a = dist_p / params.sigma_p;
    double b = dist_n / params.sigma_n;
    return std::exp(-0.5 * a * a) * std::exp(-0.5 * b * b);
}

PositionPrior PositionPrior::estimate(const std::vector<double>& offsets, double bin_width) {
    if (offsets.empty()) throw InsufficientData("no offsets for position prior");
    PositionPrior prior;
    prior.bin_width = bin_width;
    double lo = *std::min_element(offsets.begin(), offsets.end());
    double hi = *std::max_element(offsets.begin(), offsets.end());
    // Two guard bins each side; a raw histogram over a few dozen offsets is
    // full of holes, so smooth with a small triangular kernel.
    prior.min_offset = std::floor(lo / bin_width) * bin_width - 2 * bin_width;
    int bins = int(std::floor((hi - prior.min_offset) / bin_width)) + 3;
    std::vector<double> counts(bins, 0.0);
    for (double o : offsets) {
        int b = int(std::floor((o - prior.min_offset) / bin_width));
        b = std::clamp(b, 0, bins - 1);
        counts[b] += 1.0;
    }
    const double kernel[5] = {1, 2, 3, 2, 1};
    prior.density.assign(bins, 0.0);
    for (int b = 0; b < bins; ++b) {
        for (int k = -2; k <= 2; ++k) {
            int src = b + k;
            if (src >= 0 && src < bins) prior.density[b] += kernel[k + 2] * counts[src];
        }
    }
    double peak = *std::max_element(prior.density.begin(), prior.density.end());
    for (double& d : prior.density) d /= peak;
    return prior;
}

double PositionPrior::at(double offset) const {
    if (density.empty()) return 0.0;
    int b = int(std::floor((offset - min_offset) / bin_width));
    if (b < 0 || b >= int(density.size())) return 0.0;
    return density[b];
}

static constexpr double kF6BehindFraction = 0.03;

namespace {

double behind_distance(const Vector3d& p, Axis axis, double offset) {
    double sign = offset >= 0 ? 1.0 : -1.0;
    return sign * (p[int(axis)] - offset);
}

}  // namespace

PlaneFeatureVector plane_feature_vector(const PlaneHypothesis& plane,
                                        const OrientedPointCloud& pc_room,
                                        const PixelLabelProbs& labels, const PositionPrior& prior,
                                        const AffinityParams& params) {
    PlaneFeatureVector fv;
    double behind_threshold = kF6BehindFraction * std::abs(plane.offset);
    int64_t behind = 0;
    for (size_t i = 0; i < pc_room.size(); ++i) {
        const Vector3d& p = pc_room.points[i];
        double a = point_plane_affinity(p, pc_room.normals[i], plane, params);
        fv.f[0] += a;
        auto probs = labels.at(size_t(pc_room.pixel_index[i]));
        for (int c = 0; c < 4; ++c) fv.f[1 + c] += a * probs[c];
        if (behind_distance(p, plane.axis, plane.offset) >= behind_threshold) ++behind;
    }
    fv.f[5] = double(behind);
    double divisor = std::max(fv.f[5], 1.0);
    for (int c = 0; c < 5; ++c) fv.f[6 + c] = fv.f[c] / divisor;
    fv.f[11] = prior.at(plane.offset);
    return fv;
}

PlaneClassifier train_plane_classifier(
    const std::vector<std::pair<PlaneFeatureVector, bool>>& training) {
    int pos = 0, neg = 0;
    for (const auto& [fv, y] : training) (y ? pos : neg)++;
    if (pos < 10 || neg < 10)
        throw InsufficientData("need at least 10 positives and 10 negatives");

    const int n = int(training.size());
    std::array<double, 12> mean{}, stddev{};
    for (const auto& [fv, y] : training)
        for (int j = 0; j < 12; ++j) mean[j] += fv.f[j];
    for (auto& m : mean) m /= n;
    for (const auto& [fv, y] : training)
        for (int j = 0; j < 12; ++j) stddev[j] += (fv.f[j] - mean[j]) * (fv.f[j] - mean[j]);
    for (auto& s : stddev) s = std::max(std::sqrt(s / n), 1e-9);

    std::array<double, 13> w{};
    const double lr = 0.5, lambda = 1e-3;
    std::vector<std::array<double, 12>> x(n);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 12; ++j) x[i][j] = (training[i].first.f[j] - mean[j]) / stddev[j];
        y[i] = training[i].second ? 1.0 : 0.0;
    }
    for (int epoch = 0; epoch < 500; ++epoch) {
        std::array<double, 13> grad{};
        for (int i = 0; i < n; ++i) {
            double s = w[12];
            for (int j = 0; j < 12; ++j) s += w[j] * x[i][j];
            double err = 1.0 / (1.0 + std::exp(-s)) - y[i];
            for (int j = 0; j < 12; ++j) grad[j] += err * x[i][j];
            grad[12] += err;
        }
        for (int j = 0; j < 12; ++j) w[j] -= lr * (grad[j] / n + lambda * w[j]);
        w[12] -= lr * grad[12] / n;
    }

    // Calibrate the bias so a zero logit is a usable decision threshold even
    // under heavy class imbalance: shift by the cut maximizing TPR - FPR on
    // the training set.
    std::vector<std::pair<double, bool>> scored(n);
    for (int i = 0; i < n; ++i) {
        double s = w[12];
        for (int j = 0; j < 12; ++j) s += w[j] * x[i][j];
        scored[i] = {s, training[i].second};
    }
    std::sort(scored.begin(), scored.end());
    double tp = pos, fp = neg;
    double best_j = tp / pos - fp / neg, best_cut = scored.front().first - 1.0;
    for (int i = 0; i < n; ++i) {
        if (scored[i].second)
            tp -= 1;
        else
            fp -= 1;
        double cut = i + 1 < n ? 0.5 * (scored[i].first + scored[i + 1].first)
                               : scored[i].first + 1.0;
        double j_stat = tp / pos - fp / neg;
        if (j_stat > best_j + 1e-12) {
            best_j = j_stat;
            best_cut = cut;
        }
    }
    w[12] -= best_cut;

    // Fold standardization back so the classifier applies to raw features.
    PlaneClassifier clf;
    double bias = w[12];
    for (int j = 0; j < 12; ++j) {
        clf.w[j] = w[j] / stddev[j];
        bias -= w[j] * mean[j] / stddev[j];
    }
    clf.w[12] = bias;
    return clf;
}

// ---------------------------------------------------------------------------
// Plane sweep

PlaneSweeper::PlaneSweeper(const OrientedPointCloud& pc_cam, const PixelLabelProbs& labels,
                           const ManhattanFrame& frame, const AffinityParams& params)
    : pc_room_(to_room_frame(pc_cam, frame)), params_(params) {
    for (int a = 0; a < 3; ++a) {
        auto& v = along_all_[a];
        v.reserve(pc_room_.size());
        for (const auto& p : pc_room_.points) v.push_back(p[a]);
        std::sort(v.begin(), v.end());
    }
    for (const auto& p : pc_room_.points) max_norm_ = std::max(max_norm_, p.norm());
    const double max_angle = 5.0 * params_.sigma_n;
    for (int c = 0; c < kLayoutCategories; ++c) {
        auto cat = LayoutCategory(c);
        Vector3d cat_normal = layout_category_normal(cat);
        int axis = int(layout_category_axis(cat));
        std::vector<int> order;
        for (int i = 0; i < int(pc_room_.size()); ++i) {
            double dot = std::clamp(pc_room_.normals[i].dot(cat_normal), -1.0, 1.0);
            if (std::acos(dot) <= max_angle) order.push_back(i);
        }
        std::sort(order.begin(), order.end(), [&](int i, int j) {
            return pc_room_.points[i][axis] < pc_room_.points[j][axis];
        });
        auto& cp = per_category_[c];
        for (int i : order) {
            const Vector3d& p = pc_room_.points[i];
            cp.along.push_back(p[axis]);
            cp.norm.push_back(p.norm());
            cp.angle.push_back(
                std::acos(std::clamp(pc_room_.normals[i].dot(cat_normal), -1.0, 1.0)));
            cp.probs.push_back(labels.at(size_t(pc_room_.pixel_index[i])));
        }
    }
}

std::pair<double, double> PlaneSweeper::axis_range(Axis axis) const {
    const auto& along = along_all_[int(axis)];
    if (along.empty()) return {0.0, 0.0};
    return {along.front(), along.back()};
}

PlaneFeatureVector PlaneSweeper::features(const PlaneHypothesis& plane,
                                          const PositionPrior& prior) const {
    PlaneFeatureVector fv;
    const auto& cp = per_category_[int(plane.category)];
    double window = 5.0 * params_.sigma_p * max_norm_;
    auto lo = std::lower_bound(cp.along.begin(), cp.along.end(), plane.offset - window);
    auto hi = std::upper_bound(cp.along.begin(), cp.along.end(), plane.offset + window);
    for (auto it = lo; it != hi; ++it) {
        size_t i = size_t(it - cp.along.begin());
        double dist_p = std::abs(cp.along[i] - plane.offset) / cp.norm[i];
        double a = dist_p / params_.sigma_p;
        if (a > 5.0) continue;
        double b = cp.angle[i] / params_.sigma_n;
        double aff = std::exp(-0.5 * a * a) * std::exp(-0.5 * b * b);
        fv.f[0] += aff;
        for (int c = 0; c < 4; ++c) fv.f[1 + c] += aff * cp.probs[i][c];
    }
    // f6 over the full cloud via the per-axis sorted coordinates.
    const auto& along = along_all_[int(plane.axis)];
    double threshold = kF6BehindFraction * std::abs(plane.offset);
    int64_t behind;
    if (plane.offset >= 0) {
        behind =
            along.end() - std::lower_bound(along.begin(), along.end(), plane.offset + threshold);
    } else {
        behind =
            std::upper_bound(along.begin(), along.end(), plane.offset - threshold) - along.begin();
    }
    fv.f[5] = double(behind);
    double divisor = std::max(fv.f[5], 1.0);
    for (int c = 0; c < 5; ++c) fv.f[6 + c] = fv.f[c] / divisor;
    fv.f[11] = prior.at(plane.offset);
    return fv;
}

std::vector<PlaneHypothesis> detect_layout_planes(const OrientedPointCloud& pc_cam,
                                                  const PixelLabelProbs& labels,
                                                  const LayoutModel& model,
                                                  const ManhattanFrame& frame,
                                                  const PlaneDetectionParams& params) {
    PlaneSweeper sweeper(pc_cam, labels, frame, params.affinity);

    std::vector<PlaneHypothesis> candidates;
    for (int c = 0; c < kLayoutCategories; ++c) {
        auto cat = LayoutCategory(c);
        Axis axis = layout_category_axis(cat);
        auto [lo, hi] = sweeper.axis_range(axis);
        if (lo == hi) continue;
        // One extra step each side so a plane at the extreme of the observed
        // points still gets a candidate beyond it.
        lo -= params.sweep_step;
        hi += params.sweep_step;
        // Category side: floor below the camera, ceiling above, left wall at
        // negative x, right wall at positive x, front wall ahead.
        bool positive_side = cat == LayoutCategory::Floor || cat == LayoutCategory::RightWall ||
                             cat == LayoutCategory::FrontWall;
        if (positive_side)
            lo = std::max(lo, params.min_camera_distance);
        else
            hi = std::min(hi, -params.min_camera_distance);
        double start = std::ceil(lo / params.sweep_step) * params.sweep_step;
        for (double o = start; o <= hi + 1e-12; o += params.sweep_step)
            candidates.push_back({axis, o, cat, 0.0});
    }

    parallel_for(int64_t(candidates.size()), params.threads, [&](int64_t i) {
        auto& cand = candidates[i];
        PlaneFeatureVector fv = sweeper.features(cand, model.priors[int(cand.category)]);
        cand.score = model.classifiers[int(cand.category)].score(fv);
    });

    // Per-axis NMS, strongest first; deterministic tie-break on offset.
    std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.offset != b.offset) return a.offset < b.offset;
        return int(a.category) < int(b.category);
    });
    std::vector<PlaneHypothesis> kept;
    for (const auto& cand : candidates) {
        if (cand.score <= params.score_threshold) continue;
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.axis == cand.axis && std::abs(k.offset - cand.offset) < params.nms_radius) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(cand);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.category != b.category) return int(a.category) < int(b.category);
        return a.offset < b.offset;
    });

    bool has_floor = std::any_of(kept.begin(), kept.end(),
                                 [](const auto& p) { return p.category == LayoutCategory::Floor; });
    if (!has_floor) throw NoFloorFound();
    return kept;
}

// ---------------------------------------------------------------------------
// Surface extent

LayoutSurface estimate_surface_extent(const PlaneHypothesis& plane,
                                      const std::vector<PlaneHypothesis>& all_planes,
                                      const DepthImage& d, const ManhattanFrame& frame,
                                      const ExtentParams& params,
                                      const OrientedPointCloud* pc_room_cache) {
    auto [u_dim, v_dim] = inplane_axes(plane.axis);

    OrientedPointCloud pc_local;
    if (!pc_room_cache) pc_local = to_room_frame(estimate_normals(unproject(d)), frame);
    const OrientedPointCloud& pc_room = pc_room_cache ? *pc_room_cache : pc_local;

    // Footprint of supporting points, and overall cloud bounds as fallback.
    Rect2 support = Rect2::empty_rect();
    Rect2 bounds = Rect2::empty_rect();
    for (size_t i = 0; i < pc_room.size(); ++i) {
        const Vector3d& p = pc_room.points[i];
        bounds.expand(p[u_dim], p[v_dim]);
        if (point_plane_affinity(p, pc_room.normals[i], plane) >= params.support_affinity)
            support.expand(p[u_dim], p[v_dim]);
    }
    if (support.empty()) support = bounds;
    double cu = 0.5 * (support.u0 + support.u1);
    double cv = 0.5 * (support.v0 + support.v1);

    // Clip against the nearest perpendicular detected plane on each side.
    auto clip = [&](int dim, double center, double fallback_lo, double fallback_hi) {
        double lo = -1e30, hi = 1e30;
        for (const auto& other : all_planes) {
            if (int(other.axis) != dim) continue;
            if (other.offset <= center)
                lo = std::max(lo, other.offset);
            else
                hi = std::min(hi, other.offset);
        }
        if (lo == -1e30) lo = fallback_lo;
        if (hi == 1e30) hi = fallback_hi;
        return std::make_pair(lo, hi);
    };
    LayoutSurface surface;
    surface.plane = plane;
    auto [u_lo, u_hi] = clip(u_dim, cu, bounds.u0, bounds.u1);
    auto [v_lo, v_hi] = clip(v_dim, cv, bounds.v0, bounds.v1);
    surface.extent = {u_lo, v_lo, u_hi, v_hi};

    // Cutout evidence: pixels observed well behind the plane, within extent.
    const int W = d.width(), H = d.height();
    std::vector<uint8_t> behind_mask(size_t(W) * H, 0);
    std::vector<float> hit_u(size_t(W) * H, 0), hit_v(size_t(W) * H, 0);
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            float z = d.at(u, v);
            if (!DepthImage::valid_value(z)) continue;
            Vector3d dir_room = frame.to_room(d.cam.unproject(u, v, 1.0));
            double denom = dir_room[int(plane.axis)];
            if (std::abs(denom) < 1e-9) continue;
            double t = plane.offset / denom;  // camera z of the ray-plane hit
            if (t <= 0) continue;
            Vector3d q = t * dir_room;
            if (!surface.extent.contains(q[u_dim], q[v_dim])) continue;
            if (z >= t * (1.0 + params.behind_fraction)) {
                size_t idx = size_t(v) * W + u;
                behind_mask[idx] = 1;
                hit_u[idx] = float(q[u_dim]);
                hit_v[idx] = float(q[v_dim]);
            }
        }
    }

    // 8-connected components of the evidence mask.
    std::vector<int32_t> comp(size_t(W) * H, -1);
    std::vector<Rect2> cutouts;
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            size_t idx = size_t(v) * W + u;
            if (!behind_mask[idx] || comp[idx] >= 0) continue;
            int id = int(cutouts.size());
            std::deque<std::pair<int, int>> queue{{u, v}};
            comp[idx] = id;
            Rect2 box = Rect2::empty_rect();
            int npix = 0;
            while (!queue.empty()) {
                auto [x, y] = queue.front();
                queue.pop_front();
                size_t j = size_t(y) * W + x;
                box.expand(hit_u[j], hit_v[j]);
                ++npix;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
                        size_t nj = size_t(ny) * W + nx;
                        if (behind_mask[nj] && comp[nj] < 0) {
                            comp[nj] = id;
                            queue.emplace_back(nx, ny);
                        }
                    }
                }
            }
            if (npix >= params.min_component_pixels)
                cutouts.push_back(box.intersect(surface.extent));
            else
                cutouts.push_back(Rect2{});  // placeholder keeps component ids aligned
        }
    }
    std::erase_if(cutouts, [](const Rect2& r) { return r.empty(); });
    surface.cutouts = merge_overlapping_rects(std::move(cutouts));
    return surface;
}

std::vector<Rect2> merge_overlapping_rects(std::vector<Rect2> rects) {
    bool merged = true;
    while (merged) {
        merged = false;
        for (size_t i = 0; i < rects.size() && !merged; ++i) {
            for (size_t j = i + 1; j < rects.size() && !merged; ++j) {
                if (rects[i].overlaps(rects[j])) {
                    rects[i] = rects[i].bounding_union(rects[j]);
                    rects.erase(rects.begin() + j);
                    merged = true;
                }
            }
        }
    }
    return rects;
}

TriMesh layout_surface_mesh(const LayoutSurface& surface) {
    auto [u_dim, v_dim] = inplane_axes(surface.plane.axis);
    int axis = int(surface.plane.axis);

    std::vector<double> u_breaks{surface.extent.u0, surface.extent.u1};
    for (const auto& c : surface.cutouts) {
        if (c.u0 > surface.extent.u0 && c.u0 < surface.extent.u1) u_breaks.push_back(c.u0);
        if (c.u1 > surface.extent.u0 && c.u1 < surface.extent.u1) u_breaks.push_back(c.u1);
    }
    std::sort(u_breaks.begin(), u_breaks.end());

    TriMesh mesh;
    auto add_rect = [&](double u0, double v0, double u1, double v1) {
        if (u1 - u0 <= 1e-12 || v1 - v0 <= 1e-12) return;
        int base = int(mesh.vertices.size());
        auto mk = [&](double u, double v) {
            Vector3d p = Vector3d::Zero();
            p[axis] = surface.plane.offset;
            p[u_dim] = u;
            p[v_dim] = v;
            return p;
        };
        mesh.vertices.push_back(mk(u0, v0));
        mesh.vertices.push_back(mk(u1, v0));
        mesh.vertices.push_back(mk(u1, v1));
        mesh.vertices.push_back(mk(u0, v1));
        mesh.faces.push_back({base, base + 1, base + 2});
        mesh.faces.push_back({base, base + 2, base + 3});
    };

    for (size_t b = 0; b + 1 < u_breaks.size(); ++b) {
        double u0 = u_breaks[b], u1 = u_breaks[b + 1];
        if (u1 - u0 <= 1e-12) continue;
        double mid = 0.5 * (u0 + u1);
        // Free v-intervals in this band: extent minus overlapping cutouts.
        std::vector<std::pair<double, double>> holes;
        for (const auto& c : surface.cutouts)
            if (mid > c.u0 && mid < c.u1) holes.emplace_back(c.v0, c.v1);
        std::sort(holes.begin(), holes.end());
        double v_cursor = surface.extent.v0;
        for (const auto& [h0, h1] : holes) {
            add_rect(u0, v_cursor, u1, std::min(h0, surface.extent.v1));
            v_cursor = std::max(v_cursor, std::min(h1, surface.extent.v1));
        }
        add_rect(u0, v_cursor, u1, surface.extent.v1);
    }
    return mesh;
}

}  // namespace dscene
