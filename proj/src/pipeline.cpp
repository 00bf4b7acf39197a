#include "dscene/pipeline.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace dscene {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::apply_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    json j = json::parse(in);
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("sigma_p", sigma_p);
    get("sigma_n", sigma_n);
    get("nms_radius", nms_radius);
    get("plane_step", plane_step);
    get("plane_threshold", plane_threshold);
    get("normal_radius", normal_radius);
    get("cutout_behind_fraction", cutout_behind_fraction);
    get("min_cutout_pixels", min_cutout_pixels);
    get("proposal_count", proposal_count);
    get("dedup_iou", dedup_iou);
    get("retrieval_k", retrieval_k);
    get("kept_candidates", kept_candidates);
    get("c_missing", c_missing);
    get("protrusion", protrusion);
    get("noise_ratio", noise_ratio);
    get("phase1_weight", phase1_weight);
    get("depth_term", depth_term);
    get("voxel_spacing", voxel_spacing);
    get("eps_factor", eps_factor);
    get("seed", seed);
    get("threads", threads);
    get("use_cache", use_cache);
}

namespace {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> PipelineConfig::kv() const {
    std::vector<std::pair<std::string, std::string>> out;
    auto num = [&](const char* k, double v) { out.emplace_back(std::string("cfg.") + k, fmt6(v)); };
    auto str = [&](const char* k, const std::string& v) {
        out.emplace_back(std::string("cfg.") + k, v);
    };
    num("sigma_p", sigma_p);
    num("sigma_n", sigma_n);
    num("nms_radius", nms_radius);
    num("plane_step", plane_step);
    num("plane_threshold", plane_threshold);
    num("normal_radius", normal_radius);
    num("cutout_behind_fraction", cutout_behind_fraction);
    out.emplace_back("cfg.min_cutout_pixels", std::to_string(min_cutout_pixels));
    out.emplace_back("cfg.proposal_count", std::to_string(proposal_count));
    num("dedup_iou", dedup_iou);
    out.emplace_back("cfg.retrieval_k", std::to_string(retrieval_k));
    out.emplace_back("cfg.kept_candidates", std::to_string(kept_candidates));
    num("c_missing", c_missing);
    str("protrusion", protrusion);
    num("noise_ratio", noise_ratio);
    num("phase1_weight", phase1_weight);
    str("depth_term", depth_term);
    num("voxel_spacing", voxel_spacing);
    num("eps_factor", eps_factor);
    out.emplace_back("cfg.seed", std::to_string(seed));
    return out;
}

PlaneDetectionParams PipelineConfig::detection_params() const {
    PlaneDetectionParams p;
    p.sweep_step = plane_step;
    p.nms_radius = nms_radius;
    p.score_threshold = plane_threshold;
    p.affinity = affinity();
    p.threads = threads;
    return p;
}

ExtentParams PipelineConfig::extent_params() const {
    ExtentParams p;
    p.behind_fraction = cutout_behind_fraction;
    p.min_component_pixels = min_cutout_pixels;
    return p;
}

AlignParams PipelineConfig::align_params() const {
    AlignParams p;
    p.fit.c_missing = c_missing;
    p.fit.penalize_in_front = protrusion != "behind";
    return p;
}

CompositionParams PipelineConfig::composition_params() const {
    CompositionParams p;
    p.noise_ratio = noise_ratio;
    p.phase1_depth_weight = phase1_weight;
    p.depth_log_ratio = depth_term != "absolute";
    p.threads = threads;
    return p;
}

// ---------------------------------------------------------------------------
// Stage cache

namespace {

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

class StageCache {
public:
    StageCache(const fs::path& dir, std::string stage, bool enabled)
        : dir_(dir), stage_(std::move(stage)), enabled_(enabled) {}

    void add_string(const std::string& s) { hash_ = fnv1a(hash_, s.data(), s.size()); }

    void add_file(const fs::path& p) {
        add_string(p.filename().string());
        std::ifstream in(p, std::ios::binary);
        if (!in) {
            add_string("<absent>");
            return;
        }
        char buf[1 << 16];
        while (in.read(buf, sizeof buf) || in.gcount() > 0)
            hash_ = fnv1a(hash_, buf, size_t(in.gcount()));
    }

    bool fresh(const std::vector<fs::path>& artifacts) const {
        if (!enabled_) return false;
        std::ifstream in(hash_path());
        if (!in) return false;
        std::string stored;
        in >> stored;
        if (stored != hex()) return false;
        for (const auto& a : artifacts)
            if (!fs::exists(a)) return false;
        return true;
    }

    void commit() const {
        std::ofstream out(hash_path());
        out << hex() << "\n";
    }

private:
    fs::path hash_path() const { return dir_ / (stage_ + ".hash"); }
    std::string hex() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)hash_);
        return buf;
    }
    fs::path dir_;
    std::string stage_;
    bool enabled_;
    uint64_t hash_ = 0xCBF29CE484222325ull;
};

std::string config_fingerprint(const PipelineConfig& cfg) {
    std::string s;
    for (const auto& [k, v] : cfg.kv()) s += k + "=" + v + ";";
    return s;
}

json rect_json(const Rect2& r) { return json::array({r.u0, r.v0, r.u1, r.v1}); }
Rect2 rect_from(const json& j) { return {j.at(0), j.at(1), j.at(2), j.at(3)}; }

json surface_json(const LayoutSurface& s) {
    json js;
    js["category"] = layout_category_name(s.plane.category);
    js["offset"] = s.plane.offset;
    js["score"] = s.plane.score;
    js["extent"] = rect_json(s.extent);
    js["cutouts"] = json::array();
    for (const auto& c : s.cutouts) js["cutouts"].push_back(rect_json(c));
    return js;
}

LayoutSurface surface_from(const json& js) {
    LayoutSurface s;
    auto cat = layout_category_from_name(js.at("category"));
    if (!cat) throw IoError("bad category in layout artifact");
    s.plane.category = *cat;
    s.plane.axis = layout_category_axis(*cat);
    s.plane.offset = js.at("offset");
    s.plane.score = js.value("score", 0.0);
    s.extent = rect_from(js.at("extent"));
    for (const auto& jc : js.value("cutouts", json::array())) s.cutouts.push_back(rect_from(jc));
    return s;
}

OrientedPointCloud bundle_cloud(const BundleData& bundle, const PipelineConfig& cfg) {
    return estimate_normals(unproject(bundle.depth), cfg.normal_radius);
}

std::vector<uint8_t> valid_mask(const DepthImage& d) {
    std::vector<uint8_t> valid(d.size(), 0);
    for (size_t i = 0; i < d.size(); ++i)
        valid[i] = DepthImage::valid_value(d.depth[i]) ? 1 : 0;
    return valid;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

void collect_plane_training(const PlaneSweeper& sweeper,
                            const std::vector<PlaneHypothesis>& true_planes,
                            const std::array<PositionPrior, kLayoutCategories>& priors,
                            const PipelineConfig& cfg,
                            std::array<std::vector<std::pair<PlaneFeatureVector, bool>>,
                                       kLayoutCategories>& out) {
    PlaneDetectionParams det = cfg.detection_params();
    for (int c = 0; c < kLayoutCategories; ++c) {
        auto cat = LayoutCategory(c);
        Axis axis = layout_category_axis(cat);
        auto [lo, hi] = sweeper.axis_range(axis);
        if (lo == hi) continue;
        lo -= det.sweep_step;
        hi += det.sweep_step;
        bool positive_side = cat == LayoutCategory::Floor || cat == LayoutCategory::RightWall ||
                             cat == LayoutCategory::FrontWall;
        if (positive_side)
            lo = std::max(lo, det.min_camera_distance);
        else
            hi = std::min(hi, -det.min_camera_distance);
        std::vector<std::pair<double, bool>> offsets;  // (offset, positive)
        std::vector<bool> hard;
        double start = std::ceil(lo / det.sweep_step) * det.sweep_step;
        for (double o = start; o <= hi + 1e-12; o += det.sweep_step) {
            double nearest = 1e30;
            for (const auto& t : true_planes)
                if (t.category == cat) nearest = std::min(nearest, std::abs(t.offset - o));
            bool positive = nearest <= 0.5 * det.sweep_step + 1e-9;
            // Inside the f6 blind ring (3% of depth) a neighbor of a true
            // plane is genuinely ambiguous; keep it out of training.
            double ring = std::max(2.0 * det.sweep_step, 0.03 * std::abs(o));
            if (!positive && nearest <= ring) continue;
            offsets.emplace_back(o, positive);
            hard.push_back(!positive && nearest <= 0.6);
        }
        // Thin the easy negatives; full sweeps are ~200x imbalanced per
        // scene. Hard negatives near a true plane are always kept.
        int easy_negatives = 0;
        for (size_t i = 0; i < offsets.size(); ++i)
            easy_negatives += !offsets[i].second && !hard[i];
        int stride = std::max(1, easy_negatives / 40);
        int neg_index = 0;
        for (size_t i = 0; i < offsets.size(); ++i) {
            bool positive = offsets[i].second;
            if (!positive && !hard[i] && (neg_index++ % stride) != 0) continue;
            PlaneHypothesis cand{axis, offsets[i].first, cat, 0.0};
            out[c].emplace_back(sweeper.features(cand, priors[c]), positive);
        }
    }
}

void train_models(const fs::path& models_dir, const PipelineConfig& cfg, const TrainOptions& opt) {
    if (opt.scenes < 1) throw EmptyTrainingSet();
    fs::create_directories(models_dir);

    std::vector<GroundTruthBundle> bundles;
    bundles.reserve(opt.scenes);
    GenOptions gen = opt.gen;
    gen.make_voxels = false;
    for (int i = 0; i < opt.scenes; ++i)
        bundles.push_back(generate_scene(opt.seed + uint64_t(i), opt.difficulty, gen, opt.noise));

    // Position priors first (camera-centered offsets), then classifier
    // features with f12 filled from those priors.
    std::array<std::vector<double>, kLayoutCategories> true_offsets;
    for (const auto& bundle : bundles)
        for (const auto& s : bundle.spec.layout)
            true_offsets[int(s.plane.category)].push_back(
                s.plane.offset - bundle.spec.camera.position[int(s.plane.axis)]);
    LayoutModel layout_model;
    for (int c = 0; c < kLayoutCategories; ++c)
        layout_model.priors[c] = PositionPrior::estimate(true_offsets[c]);

    std::array<std::vector<std::pair<PlaneFeatureVector, bool>>, kLayoutCategories> training;
    for (const auto& bundle : bundles) {
        OrientedPointCloud pc;
        try {
            pc = estimate_normals(unproject(bundle.depth), cfg.normal_radius);
        } catch (const AllPixelsMissing&) {
            continue;
        }
        PixelLabelProbs labels = PixelLabelProbs::from_object_prob(
            bundle.depth.width(), bundle.depth.height(), bundle.p_object);
        ManhattanFrame frame = bundle.spec.true_frame();
        PlaneSweeper sweeper(pc, labels, frame, cfg.affinity());
        std::vector<PlaneHypothesis> truth;
        for (const auto& s : bundle.spec.layout) {
            PlaneHypothesis t = s.plane;
            t.offset -= bundle.spec.camera.position[int(t.axis)];
            truth.push_back(t);
        }
        collect_plane_training(sweeper, truth, layout_model.priors, cfg, training);
    }

    for (int c = 0; c < kLayoutCategories; ++c)
        layout_model.classifiers[c] = train_plane_classifier(training[c]);
    write_layout_model(models_dir / "layout", layout_model);

    // Exemplar library + CCA metric over its features.
    std::vector<const GroundTruthBundle*> refs;
    for (const auto& b : bundles) refs.push_back(&b);
    ExemplarLibrary lib = build_exemplar_library(refs);
    write_exemplar_library(models_dir / "library", lib);

    std::vector<std::string> present;
    for (const auto& id : shape_ids())
        for (const auto& e : lib.entries)
            if (e.label == id) {
                present.push_back(id);
                break;
            }
    std::vector<int> labels(lib.entries.size());
    Eigen::MatrixXd X(lib.entries.size(), RegionFeatures::kDim);
    for (size_t i = 0; i < lib.entries.size(); ++i) {
        X.row(i) = lib.entries[i].features.v.transpose();
        labels[i] =
            int(std::find(present.begin(), present.end(), lib.entries[i].label) - present.begin());
    }
    int C = int(present.size());
    int k = std::min(RegionFeatures::kDim, C - 1);
    MetricModel metric = fit_cca(X, labels, C, k);
    write_metric_model(models_dir / "metric.json", metric);
}

Models read_models(const fs::path& models_dir) {
    Models m;
    m.layout = read_layout_model(models_dir / "layout");
    m.metric = read_metric_model(models_dir / "metric.json");
    m.library = read_exemplar_library(models_dir / "library");
    return m;
}

// ---------------------------------------------------------------------------
// Stages

LayoutStage stage_layout(const fs::path& bundle_dir, const Models& models,
                         const PipelineConfig& cfg) {
    BundleData bundle = read_bundle(bundle_dir);

    StageCache cache(bundle_dir, "layout", cfg.use_cache);
    cache.add_string("layout:v1:" + config_fingerprint(cfg));
    cache.add_file(bundle_dir / "depth.dmap");
    cache.add_file(bundle_dir / "pobject.dmap");
    // Model values feed the hash so retraining invalidates the stage.
    for (int c = 0; c < kLayoutCategories; ++c) {
        for (double w : models.layout.classifiers[c].w) cache.add_string(fmt6(w));
        for (double d : models.layout.priors[c].density) cache.add_string(fmt6(d));
    }
    if (cache.fresh({bundle_dir / "layout.json"})) return read_layout_stage(bundle_dir);

    OrientedPointCloud pc = bundle_cloud(bundle, cfg);
    ManhattanFrame frame = estimate_manhattan_frame(pc);
    PixelLabelProbs labels = PixelLabelProbs::from_object_prob(bundle.depth.width(),
                                                               bundle.depth.height(),
                                                               bundle.p_object);
    std::vector<PlaneHypothesis> planes =
        detect_layout_planes(pc, labels, models.layout, frame, cfg.detection_params());

    OrientedPointCloud pc_room = to_room_frame(pc, frame);
    LayoutStage stage;
    stage.frame = frame;
    for (const auto& plane : planes)
        stage.surfaces.push_back(estimate_surface_extent(plane, planes, bundle.depth, frame,
                                                         cfg.extent_params(), &pc_room));

    json j;
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot.push_back(frame.rotation(r, c));
    j["rotation"] = rot;
    j["surfaces"] = json::array();
    for (const auto& s : stage.surfaces) j["surfaces"].push_back(surface_json(s));
    std::ofstream out(bundle_dir / "layout.json");
    out << j.dump(2) << "\n";
    cache.commit();
    return stage;
}

LayoutStage read_layout_stage(const fs::path& bundle_dir) {
    std::ifstream in(bundle_dir / "layout.json");
    if (!in) throw IoError("missing layout.json (run the layout stage first)");
    json j = json::parse(in);
    LayoutStage stage;
    const json& rot = j.at("rotation");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) stage.frame.rotation(r, c) = rot.at(r * 3 + c);
    for (const auto& js : j.at("surfaces")) stage.surfaces.push_back(surface_from(js));
    return stage;
}

std::vector<RegionProposal> stage_propose(const fs::path& bundle_dir, const PipelineConfig& cfg) {
    BundleData bundle = read_bundle(bundle_dir);

    StageCache cache(bundle_dir, "propose", cfg.use_cache);
    cache.add_string("propose:v1:" + config_fingerprint(cfg));
    cache.add_file(bundle_dir / "superpixels.spix");
    cache.add_file(bundle_dir / "boundary.dmap");
    cache.add_file(bundle_dir / "pobject.dmap");
    cache.add_file(bundle_dir / "depth.dmap");
    if (cache.fresh({bundle_dir / "proposals.json"})) return read_propose_stage(bundle_dir);

    SuperpixelGraph graph =
        build_graph(bundle.superpixels, bundle.boundary, bundle.p_object, valid_mask(bundle.depth));
    std::vector<RegionProposal> proposals =
        randomized_prim_proposals(graph, cfg.proposal_count, cfg.seed);
    proposals = deduplicate(proposals, cfg.dedup_iou);

    json j;
    j["proposals"] = json::array();
    for (const auto& p : proposals) {
        json jp;
        jp["seed"] = p.seed;
        jp["members"] = p.members;
        j["proposals"].push_back(jp);
    }
    std::ofstream out(bundle_dir / "proposals.json");
    out << j.dump() << "\n";
    cache.commit();
    return proposals;
}

std::vector<RegionProposal> read_propose_stage(const fs::path& bundle_dir) {
    std::ifstream in(bundle_dir / "proposals.json");
    if (!in) throw IoError("missing proposals.json (run the propose stage first)");
    json j = json::parse(in);
    BundleData bundle = read_bundle(bundle_dir);
    SuperpixelGraph graph =
        build_graph(bundle.superpixels, bundle.boundary, bundle.p_object, valid_mask(bundle.depth));
    std::vector<RegionProposal> out;
    for (const auto& jp : j.at("proposals")) {
        RegionProposal p;
        p.seed = jp.at("seed");
        for (int m : jp.at("members")) p.members.push_back(m);
        for (int m : p.members)
            p.pixels.insert(p.pixels.end(), graph.pixels[m].begin(), graph.pixels[m].end());
        std::sort(p.pixels.begin(), p.pixels.end());
        out.push_back(std::move(p));
    }
    return out;
}

RetrievalStage stage_retrieve(const fs::path& bundle_dir, const Models& models,
                              const PipelineConfig& cfg) {
    BundleData bundle = read_bundle(bundle_dir);
    LayoutStage layout = read_layout_stage(bundle_dir);
    std::vector<RegionProposal> proposals = read_propose_stage(bundle_dir);

    StageCache cache(bundle_dir, "retrieve", cfg.use_cache);
    cache.add_string("retrieve:v1:" + config_fingerprint(cfg));
    cache.add_file(bundle_dir / "layout.json");
    cache.add_file(bundle_dir / "proposals.json");
    cache.add_file(bundle_dir / "depth.dmap");
    cache.add_string(fmt6(models.metric.W.sum()) + fmt6(models.metric.mean.sum()) +
                     std::to_string(models.library.entries.size()));
    if (cache.fresh({bundle_dir / "retrieval.json"})) return read_retrieve_stage(bundle_dir);

    OrientedPointCloud pc_room = to_room_frame(bundle_cloud(bundle, cfg), layout.frame);

    RetrievalStage stage;
    stage.matches.resize(proposals.size());
    for (size_t i = 0; i < proposals.size(); ++i) {
        try {
            RegionFeatures feat = extract_region_features(proposals[i], bundle.depth, pc_room);
            stage.matches[i] = retrieve_topk(feat, models.library, models.metric, cfg.retrieval_k);
        } catch (const TooFewPoints&) {
            // region keeps an empty match list
        }
    }

    json j;
    j["regions"] = json::array();
    for (size_t i = 0; i < stage.matches.size(); ++i) {
        json jr;
        jr["region"] = i;
        jr["matches"] = json::array();
        for (const auto& [lib_id, dist] : stage.matches[i])
            jr["matches"].push_back({{"library", lib_id}, {"distance", dist}});
        j["regions"].push_back(jr);
    }
    std::ofstream out(bundle_dir / "retrieval.json");
    out << j.dump() << "\n";
    cache.commit();
    return stage;
}

RetrievalStage read_retrieve_stage(const fs::path& bundle_dir) {
    std::ifstream in(bundle_dir / "retrieval.json");
    if (!in) throw IoError("missing retrieval.json (run the retrieve stage first)");
    json j = json::parse(in);
    RetrievalStage stage;
    stage.matches.resize(j.at("regions").size());
    for (const auto& jr : j.at("regions")) {
        size_t idx = jr.at("region");
        for (const auto& jm : jr.at("matches"))
            stage.matches[idx].emplace_back(jm.at("library"), jm.at("distance"));
    }
    return stage;
}

std::vector<CandidateObject> stage_fit(const fs::path& bundle_dir, const Models& models,
                                       const PipelineConfig& cfg) {
    BundleData bundle = read_bundle(bundle_dir);
    LayoutStage layout = read_layout_stage(bundle_dir);
    std::vector<RegionProposal> proposals = read_propose_stage(bundle_dir);
    RetrievalStage retrieval = read_retrieve_stage(bundle_dir);

    StageCache cache(bundle_dir, "fit", cfg.use_cache);
    cache.add_string("fit:v1:" + config_fingerprint(cfg));
    cache.add_file(bundle_dir / "layout.json");
    cache.add_file(bundle_dir / "proposals.json");
    cache.add_file(bundle_dir / "retrieval.json");
    cache.add_file(bundle_dir / "depth.dmap");
    if (cache.fresh({bundle_dir / "candidates.json"})) return read_fit_stage(bundle_dir, models);

    AlignParams params = cfg.align_params();
    std::vector<CandidateObject> all;
    for (size_t r = 0; r < proposals.size(); ++r) {
        if (retrieval.matches[r].empty()) continue;
        std::vector<Vector3d> pts = region_points_room(proposals[r], bundle.depth, layout.frame);
        if (pts.size() < 10) continue;
        PixelMask mask = proposal_mask(proposals[r], bundle.depth.width(), bundle.depth.height());

        std::vector<CandidateObject> candidates;
        for (size_t rank = 0; rank < retrieval.matches[r].size(); ++rank) {
            CandidateObject c;
            c.region_id = int(r);
            c.library_id = retrieval.matches[r][rank].first;
            c.retrieval_rank = int(rank);
            c.model = models.library.entries[c.library_id].mesh;
            candidates.push_back(std::move(c));
        }
        std::vector<CandidateObject> kept =
            prune_candidates(std::move(candidates), pts, mask, bundle.depth, layout.frame,
                             cfg.kept_candidates, params, cfg.threads);
        for (auto& c : kept) all.push_back(std::move(c));
    }

    json j;
    j["candidates"] = json::array();
    for (const auto& c : all) {
        json jc;
        jc["region"] = c.region_id;
        jc["library"] = c.library_id;
        jc["rank"] = c.retrieval_rank;
        jc["mesh"] = models.library.entries[c.library_id].mesh_ref;
        jc["scale"] = c.transform.scale;
        jc["yaw"] = c.transform.yaw;
        jc["translation"] = json::array(
            {c.transform.translation.x(), c.transform.translation.y(), c.transform.translation.z()});
        jc["cost"] = c.fitting_cost;
        j["candidates"].push_back(jc);
    }
    std::ofstream out(bundle_dir / "candidates.json");
    out << j.dump() << "\n";
    cache.commit();
    return all;
}

std::vector<CandidateObject> read_fit_stage(const fs::path& bundle_dir, const Models& models) {
    std::ifstream in(bundle_dir / "candidates.json");
    if (!in) throw IoError("missing candidates.json (run the fit stage first)");
    json j = json::parse(in);
    std::vector<CandidateObject> out;
    for (const auto& jc : j.at("candidates")) {
        CandidateObject c;
        c.region_id = jc.at("region");
        c.library_id = jc.at("library");
        c.retrieval_rank = jc.at("rank");
        c.model = models.library.entries[c.library_id].mesh;
        c.transform.scale = jc.at("scale");
        c.transform.yaw = jc.at("yaw");
        const auto& t = jc.at("translation");
        c.transform.translation = Vector3d(t.at(0).get<double>(), t.at(1).get<double>(),
                                           t.at(2).get<double>());
        c.fitting_cost = jc.at("cost");
        out.push_back(std::move(c));
    }
    return out;
}

SceneModel stage_compose(const fs::path& bundle_dir, const Models& models,
                         const PipelineConfig& cfg) {
    BundleData bundle = read_bundle(bundle_dir);
    LayoutStage layout = read_layout_stage(bundle_dir);
    std::vector<RegionProposal> proposals = read_propose_stage(bundle_dir);
    std::vector<CandidateObject> candidates = read_fit_stage(bundle_dir, models);

    PixelLabelProbs labels = PixelLabelProbs::from_object_prob(bundle.depth.width(),
                                                               bundle.depth.height(),
                                                               bundle.p_object);
    std::vector<Hypothesis> hyps;
    for (const auto& s : layout.surfaces) hyps.push_back(Hypothesis::make_layout(s));
    for (const auto& c : candidates)
        hyps.push_back(Hypothesis::make_object(c, proposals[c.region_id].pixels));

    CompositionProblem problem(std::move(hyps), bundle.depth, labels, layout.frame,
                               cfg.composition_params());
    GreedyReport report;
    SceneModel model = greedy_compose(problem, &report);

    // model.json lives in the camera-centered room frame.
    SceneFile out_scene;
    out_scene.camera.intrinsics = bundle.depth.cam;
    out_scene.camera.rotation = layout.frame.rotation.transpose();
    out_scene.camera.position = Vector3d::Zero();
    out_scene.layout = model.layout;
    out_scene.seed = cfg.seed;
    for (size_t i = 0; i < model.objects.size(); ++i) {
        const CandidateObject& c = model.objects[i];
        SceneObjectSpec o;
        std::string id;
        std::vector<double> params;
        const std::string& ref = models.library.entries[c.library_id].mesh_ref;
        if (parse_shape_ref(ref, id, params)) {
            o.shape_id = id;
            o.params = params;
        } else {
            o.shape_id = ref;
        }
        o.scale = c.transform.scale;
        o.yaw = c.transform.yaw;
        o.translation = c.transform.translation;
        o.instance_id = uint32_t(i + 1);
        out_scene.objects.push_back(std::move(o));
    }
    write_scene_file(bundle_dir / "model.json", out_scene);

    DepthRender composite = problem.composite_render(model.selection);
    std::vector<float> depth_out(composite.depth.size());
    std::vector<uint32_t> label_out(composite.depth.size(), 0);
    std::vector<int> selected_order(problem.size(), 0);
    int next_label = 0;
    for (int i = 0; i < problem.size(); ++i)
        if (model.selection[i]) selected_order[i] = ++next_label;
    for (size_t px = 0; px < composite.depth.size(); ++px) {
        depth_out[px] = composite.covered(px) ? composite.depth[px] : 0.0f;
        if (composite.covered(px)) label_out[px] = uint32_t(selected_order[composite.label[px]]);
    }
    write_dmap(bundle_dir / "render_depth.dmap", composite.width, composite.height, depth_out);
    write_spix(bundle_dir / "render_labels.spix", composite.width, composite.height, label_out);

    std::ofstream rep(bundle_dir / "compose_report.txt");
    rep << "hypotheses=" << problem.size() << " selected_layout=" << model.layout.size()
        << " selected_objects=" << model.objects.size() << " flips=" << report.flips << "\n";
    auto dump = [&](const char* tag, const CostBreakdown& b) {
        rep << tag << " depth=" << fmt6(b.depth) << " object_prob=" << fmt6(b.object_prob)
            << " region_overlap=" << fmt6(b.region_overlap)
            << " volume_overlap=" << fmt6(b.volume_overlap) << " total=" << fmt6(b.total()) << "\n";
    };
    for (size_t i = 0; i < report.step_costs.size(); ++i)
        dump(("step_" + std::to_string(i)).c_str(), report.step_costs[i]);
    for (size_t i = 0; i < report.phase_costs.size(); ++i)
        dump(("phase_" + std::to_string(i + 1)).c_str(), report.phase_costs[i]);
    dump("final", model.cost);
    return model;
}

EvalReport stage_eval(const fs::path& bundle_dir, const PipelineConfig& cfg,
                      const fs::path& model_path_in) {
    BundleData bundle = read_bundle(bundle_dir);
    fs::path model_path = model_path_in.empty() ? bundle_dir / "model.json" : model_path_in;
    SceneFile model = read_scene_file(model_path);
    SceneFile truth = bundle.scene;

    EvalReport report;

    // Layout renders from each frame's own camera; pixels align.
    LayoutRender pred_layout = render_layout_surfaces(model.layout, model.camera);
    LayoutRender gt_layout = render_layout_surfaces(truth.layout, truth.camera);
    std::vector<uint8_t> object_mask(bundle.instances.labels.size(), 0);
    for (size_t i = 0; i < object_mask.size(); ++i)
        object_mask[i] = bundle.instances.labels[i] != 0 ? 1 : 0;
    report.layout_pixel_error = layout_label_error(pred_layout.label, gt_layout.label, object_mask);
    report.layout_depth_error = layout_depth_error(pred_layout.depth, gt_layout.depth, object_mask);
    std::vector<float> sensor_depth(bundle.depth.depth.size());
    for (size_t i = 0; i < sensor_depth.size(); ++i)
        sensor_depth[i] = DepthImage::valid_value(bundle.depth.depth[i])
                              ? bundle.depth.depth[i]
                              : std::numeric_limits<float>::infinity();
    report.sensor_depth_error = layout_depth_error(sensor_depth, gt_layout.depth, object_mask);

    // Voxel metrics in the truth grid, scoped by annotated layout.
    if (bundle.has_truth_voxels()) {
        VoxelGrid truth_grid = bundle.truth_voxels();
        apply_scope(truth_grid, truth.layout, truth.camera);

        VoxelGrid pred_grid = make_voxel_grid(truth_grid.origin, truth_grid.spacing, truth_grid.nx,
                                              truth_grid.ny, truth_grid.nz);
        Matrix3d to_world = truth.camera.rotation.transpose() * model.camera.rotation;
        for (const auto& o : model.objects) {
            TriMesh mesh = resolve_mesh_ref(
                o.params.empty() ? o.shape_id : shape_mesh_ref(o.shape_id, o.params),
                model_path.parent_path());
            Transform t;
            t.scale = o.scale;
            t.yaw = o.yaw;
            t.translation = o.translation;
            TriMesh posed = mesh.transformed(to_world * t.linear(),
                                             to_world * t.translation + truth.camera.position);
            voxelize_mesh(pred_grid, posed);
        }
        apply_scope(pred_grid, truth.layout, truth.camera);

        report.occupancy_exact = voxel_pr(pred_grid, truth_grid, 0.0, truth.camera);
        report.occupancy_eps = voxel_pr(pred_grid, truth_grid, cfg.eps_factor, truth.camera);
        report.freespace = freespace_pr(pred_grid, truth_grid, 0.0, truth.camera);
    }

    // Instance coverage from a fresh render of the predicted model.
    {
        std::vector<TriMesh> meshes;
        std::vector<MeshInstance> instances;
        int n_layout = int(model.layout.size());
        for (const auto& s : model.layout) meshes.push_back(layout_surface_mesh(s));
        for (const auto& o : model.objects) {
            TriMesh local = resolve_mesh_ref(
                o.params.empty() ? o.shape_id : shape_mesh_ref(o.shape_id, o.params),
                model_path.parent_path());
            Transform t;
            t.scale = o.scale;
            t.yaw = o.yaw;
            t.translation = o.translation;
            meshes.push_back(local.transformed(t.linear(), t.translation));
        }
        for (const auto& m : meshes) {
            MeshInstance inst;
            inst.mesh = &m;
            inst.linear = model.camera.rotation;
            inst.offset = -model.camera.rotation * model.camera.position;
            instances.push_back(inst);
        }
        DepthRender render = render_depth(instances, model.camera.intrinsics);
        std::vector<uint32_t> pred_instances(render.depth.size(), 0);
        for (size_t i = 0; i < pred_instances.size(); ++i)
            if (render.label[i] >= n_layout)
                pred_instances[i] = uint32_t(render.label[i] - n_layout + 1);
        report.coverage = instance_coverage(pred_instances, bundle.instances.labels);
    }
    return report;
}

void write_report_kv(const fs::path& path, const EvalReport& report, const SceneModel& model,
                     const PipelineConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& [k, v] : cfg.kv()) out << k << "=" << v << "\n";
    auto put = [&](const char* k, double v) { out << k << "=" << fmt6(v) << "\n"; };
    put("layout.pixel_err.overall", report.layout_pixel_error.overall);
    put("layout.pixel_err.occluded", report.layout_pixel_error.occluded);
    put("layout.pixel_err.visible", report.layout_pixel_error.visible);
    put("layout.depth_err.overall", report.layout_depth_error.overall);
    put("layout.depth_err.occluded", report.layout_depth_error.occluded);
    put("layout.depth_err.visible", report.layout_depth_error.visible);
    put("sensor.depth_err.overall", report.sensor_depth_error.overall);
    put("sensor.depth_err.occluded", report.sensor_depth_error.occluded);
    put("sensor.depth_err.visible", report.sensor_depth_error.visible);
    put("freespace.precision", report.freespace.precision);
    put("freespace.recall", report.freespace.recall);
    put("occupancy.precision", report.occupancy_exact.precision);
    put("occupancy.recall", report.occupancy_exact.recall);
    put("occupancy_eps.precision", report.occupancy_eps.precision);
    put("occupancy_eps.recall", report.occupancy_eps.recall);
    put("coverage.weighted", report.coverage.weighted);
    put("coverage.unweighted", report.coverage.unweighted);
    put("model.cost.depth", model.cost.depth);
    put("model.cost.object_prob", model.cost.object_prob);
    put("model.cost.region_overlap", model.cost.region_overlap);
    put("model.cost.volume_overlap", model.cost.volume_overlap);
    put("model.cost.total", model.cost.total());
    out << "model.layout_count=" << model.layout.size() << "\n";
    out << "model.object_count=" << model.objects.size() << "\n";
}

void write_report_text(const fs::path& path, const EvalReport& report, const SceneModel& model) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "Scene model: " << model.layout.size() << " layout surfaces, " << model.objects.size()
        << " objects, selection cost " << fmt6(model.cost.total()) << "\n\n";
    auto split = [&](const char* name, const SplitMetric& m, const char* unit) {
        out << name << ": overall " << fmt6(m.overall) << unit << ", occluded " << fmt6(m.occluded)
            << unit << ", visible " << fmt6(m.visible) << unit << "\n";
    };
    split("Layout pixel error", report.layout_pixel_error, "");
    split("Layout depth error", report.layout_depth_error, " m");
    split("Sensor depth error", report.sensor_depth_error, " m");
    out << "Freespace P/R: " << fmt6(report.freespace.precision) << " / "
        << fmt6(report.freespace.recall) << "\n";
    out << "Occupancy P/R (exact): " << fmt6(report.occupancy_exact.precision) << " / "
        << fmt6(report.occupancy_exact.recall) << "\n";
    out << "Occupancy P/R (eps): " << fmt6(report.occupancy_eps.precision) << " / "
        << fmt6(report.occupancy_eps.recall) << "\n";
    out << "Coverage MeanCovW/MeanCovU: " << fmt6(report.coverage.weighted) << " / "
        << fmt6(report.coverage.unweighted) << "\n";
}

PipelineResult run_pipeline(const fs::path& bundle_dir, const fs::path& models_dir,
                            const PipelineConfig& cfg) {
    Models models;
    try {
        models = read_models(models_dir);
    } catch (const Error& e) {
        throw StageError("models", e.what());
    }
    auto guard = [&](const char* stage, auto&& fn) {
        try {
            return fn();
        } catch (const StageError&) {
            throw;
        } catch (const Error& e) {
            throw StageError(stage, e.what());
        }
    };
    guard("layout", [&] { return stage_layout(bundle_dir, models, cfg); });
    guard("propose", [&] { return stage_propose(bundle_dir, cfg); });
    guard("retrieve", [&] { return stage_retrieve(bundle_dir, models, cfg); });
    guard("fit", [&] { return stage_fit(bundle_dir, models, cfg); });
    PipelineResult result;
    result.model = guard("compose", [&] { return stage_compose(bundle_dir, models, cfg); });
    result.report = guard("eval", [&] { return stage_eval(bundle_dir, cfg); });
    write_report_kv(bundle_dir / "report.kv", result.report, result.model, cfg);
    write_report_text(bundle_dir / "report.txt", result.report, result.model);
    return result;
}

}  // namespace dscene
