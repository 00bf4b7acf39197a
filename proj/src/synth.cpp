#include "dscene/synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <deque>
#include <map>
#include <sstream>

#include "dscene/alignment.hpp"
#include "dscene/render.hpp"

namespace dscene {

// ---------------------------------------------------------------------------
// Shape library

namespace {

void append_axis_box(TriMesh& m, const Vector3d& lo, const Vector3d& hi) {
    int b = int(m.vertices.size());
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back({i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(),
                              i & 4 ? hi.z() : lo.z()});
    const int f[12][3] = {{0, 2, 3}, {0, 3, 1},  // z = lo
                          {4, 5, 7}, {4, 7, 6},  // z = hi
                          {0, 6, 2}, {0, 4, 6},  // x = lo
                          {1, 3, 7}, {1, 7, 5},  // x = hi
                          {0, 1, 5}, {0, 5, 4},  // y = lo
                          {2, 7, 3}, {2, 6, 7}}; // y = hi
    for (const auto& face : f) m.faces.push_back({b + face[0], b + face[1], b + face[2]});
}

void recenter(TriMesh& m) {
    Vector3d c = m.bbox().center();
    for (auto& v : m.vertices) v -= c;
}

}  // namespace

TriMesh make_box(double w, double h, double d) {
    TriMesh m;
    append_axis_box(m, {-w / 2, -h / 2, -d / 2}, {w / 2, h / 2, d / 2});
    return m;
}

TriMesh make_table(double w, double h, double d) {
    TriMesh m;
    double tt = std::clamp(0.15 * h, 0.04, 0.1);
    double ll = std::clamp(0.15 * std::min(w, d), 0.03, 0.08);
    // y down: table top at y = -h/2.
    append_axis_box(m, {-w / 2, -h / 2, -d / 2}, {w / 2, -h / 2 + tt, d / 2});
    for (int ix = 0; ix < 2; ++ix) {
        for (int iz = 0; iz < 2; ++iz) {
            double x0 = ix ? w / 2 - ll : -w / 2;
            double z0 = iz ? d / 2 - ll : -d / 2;
            append_axis_box(m, {x0, -h / 2 + tt, z0}, {x0 + ll, h / 2, z0 + ll});
        }
    }
    recenter(m);
    return m;
}

TriMesh make_chair(double w, double h, double d) {
    TriMesh m;
    double st = std::clamp(0.1 * h, 0.04, 0.09);   // seat thickness
    double bt = std::clamp(0.15 * d, 0.04, 0.08);  // back thickness
    double ll = std::clamp(0.14 * std::min(w, d), 0.03, 0.07);
    double seat_y = -0.05 * h;  // seat top below mid-height
    append_axis_box(m, {-w / 2, seat_y, -d / 2}, {w / 2, seat_y + st, d / 2});
    append_axis_box(m, {-w / 2, -h / 2, -d / 2}, {w / 2, seat_y, -d / 2 + bt});
    for (int ix = 0; ix < 2; ++ix) {
        for (int iz = 0; iz < 2; ++iz) {
            double x0 = ix ? w / 2 - ll : -w / 2;
            double z0 = iz ? d / 2 - ll : -d / 2;
            append_axis_box(m, {x0, seat_y + st, z0}, {x0 + ll, h / 2, z0 + ll});
        }
    }
    recenter(m);
    return m;
}

TriMesh make_lshelf(double w, double h, double d) {
    TriMesh m;
    double split = -w / 2 + 0.45 * w;
    append_axis_box(m, {-w / 2, -h / 2, -d / 2}, {split, h / 2, d / 2});
    append_axis_box(m, {split, 0.0, -d / 2}, {w / 2, h / 2, d / 2});
    recenter(m);
    return m;
}

TriMesh make_prism(double radius, double h, int sides) {
    if (sides < 3) throw InvalidSpec("prism needs at least 3 sides");
    TriMesh m;
    const double tau = 6.283185307179586476925286766559;
    for (int i = 0; i < sides; ++i) {
        double a = tau * i / sides;
        m.vertices.push_back({radius * std::cos(a), -h / 2, radius * std::sin(a)});
    }
    for (int i = 0; i < sides; ++i) {
        double a = tau * i / sides;
        m.vertices.push_back({radius * std::cos(a), h / 2, radius * std::sin(a)});
    }
    for (int i = 1; i + 1 < sides; ++i) {
        m.faces.push_back({0, i, i + 1});                          // top cap (y = -h/2)
        m.faces.push_back({sides, sides + i + 1, sides + i});      // bottom cap
    }
    for (int i = 0; i < sides; ++i) {
        int j = (i + 1) % sides;
        m.faces.push_back({i, sides + i, sides + j});
        m.faces.push_back({i, sides + j, j});
    }
    return m;
}

const std::vector<std::string>& shape_ids() {
    static const std::vector<std::string> ids{"box", "table", "chair", "lshelf", "prism"};
    return ids;
}

TriMesh make_shape(const std::string& id, const std::vector<double>& params) {
    auto need = [&](size_t n) {
        if (params.size() < n) throw InvalidSpec("shape " + id + " needs more parameters");
    };
    if (id == "box") {
        need(3);
        return make_box(params[0], params[1], params[2]);
    }
    if (id == "table") {
        need(3);
        return make_table(params[0], params[1], params[2]);
    }
    if (id == "chair") {
        need(3);
        return make_chair(params[0], params[1], params[2]);
    }
    if (id == "lshelf") {
        need(3);
        return make_lshelf(params[0], params[1], params[2]);
    }
    if (id == "prism") {
        need(2);
        return make_prism(params[0], params[1], params.size() > 2 ? int(params[2]) : 8);
    }
    throw InvalidSpec("unknown shape id: " + id);
}

std::string shape_mesh_ref(const std::string& id, const std::vector<double>& params) {
    std::ostringstream os;
    os << "shape:" << id << ":";
    for (size_t i = 0; i < params.size(); ++i) {
        if (i) os << ",";
        os << params[i];
    }
    return os.str();
}

bool parse_shape_ref(const std::string& ref, std::string& id, std::vector<double>& params) {
    if (ref.rfind("shape:", 0) != 0) return false;
    size_t second = ref.find(':', 6);
    if (second == std::string::npos) return false;
    id = ref.substr(6, second - 6);
    params.clear();
    std::stringstream ss(ref.substr(second + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) params.push_back(std::stod(tok));
    }
    return true;
}

TriMesh SceneObjectSpec::world_mesh() const {
    TriMesh local = make_shape(shape_id, params);
    Transform t;
    t.scale = scale;
    t.yaw = yaw;
    t.translation = translation;
    return local.transformed(t.linear(), t.translation);
}

// ---------------------------------------------------------------------------
// Bundle generation

namespace {

std::vector<float> gaussian_blur(const std::vector<float>& img, int w, int h, double sigma) {
    if (sigma <= 0) return img;
    int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i)
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));

    std::vector<float> tmp(img.size()), out(img.size());
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            double sum = 0, wsum = 0;
            for (int i = -radius; i <= radius; ++i) {
                int x = u + i;
                if (x < 0 || x >= w) continue;
                sum += kernel[i + radius] * img[size_t(v) * w + x];
                wsum += kernel[i + radius];
            }
            tmp[size_t(v) * w + u] = float(sum / wsum);
        }
    }
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            double sum = 0, wsum = 0;
            for (int i = -radius; i <= radius; ++i) {
                int y = v + i;
                if (y < 0 || y >= h) continue;
                sum += kernel[i + radius] * tmp[size_t(y) * w + u];
                wsum += kernel[i + radius];
            }
            out[size_t(v) * w + u] = float(sum / wsum);
        }
    }
    return out;
}

void validate_spec(const SceneSpec& spec) {
    spec.camera.intrinsics.validate();
    double floor_y = -1e30, ceil_y = 1e30, left_x = 1e30, right_x = -1e30, front_z = -1e30;
    for (const auto& s : spec.layout) {
        switch (s.plane.category) {
            case LayoutCategory::Floor: floor_y = std::max(floor_y, s.plane.offset); break;
            case LayoutCategory::Ceiling: ceil_y = std::min(ceil_y, s.plane.offset); break;
            case LayoutCategory::LeftWall: left_x = std::min(left_x, s.plane.offset); break;
            case LayoutCategory::RightWall: right_x = std::max(right_x, s.plane.offset); break;
            case LayoutCategory::FrontWall: front_z = std::max(front_z, s.plane.offset); break;
        }
    }
    const Vector3d& c = spec.camera.position;
    if (c.y() >= floor_y || c.y() <= ceil_y || c.x() <= left_x || c.x() >= right_x ||
        c.z() >= front_z)
        throw InvalidSpec("camera outside the room");
    std::map<uint32_t, int> ids;
    for (const auto& o : spec.objects) {
        if (o.instance_id == 0 || ids[o.instance_id]++ > 0)
            throw InvalidSpec("object instance ids must be unique and nonzero");
        Aabb3 box = o.world_mesh().bbox();
        if (box.hi.y() > floor_y + 1e-6) throw InvalidSpec("object below the floor");
    }
}

struct SuperpixelBuild {
    std::vector<uint32_t> labels;
    int count = 0;
};

SuperpixelBuild build_superpixels(const std::vector<uint32_t>& instances,
                                  const std::vector<uint8_t>& valid, int W, int H,
                                  int target_count, double leaky_prob, Rng rng) {
    // Jittered grid boundaries, intersected with instances, split into
    // 4-connected components. Instance-pure unless leaking is requested.
    int g = std::max(4, int(std::lround(std::sqrt(double(W) * H / std::max(1, target_count)))));
    std::vector<int> col_bound, row_bound;
    for (int x = g; x < W; x += g) col_bound.push_back(x + rng.uniform_int(g / 2 + 1) - g / 4);
    for (int y = g; y < H; y += g) row_bound.push_back(y + rng.uniform_int(g / 2 + 1) - g / 4);
    auto cell_index = [](const std::vector<int>& bounds, int x) {
        return int(std::upper_bound(bounds.begin(), bounds.end(), x) - bounds.begin());
    };

    std::vector<int64_t> key(size_t(W) * H, -1);
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            size_t i = size_t(v) * W + u;
            if (!valid[i]) continue;
            int cu = cell_index(col_bound, u), cv = cell_index(row_bound, v);
            key[i] = (int64_t(instances[i]) << 32) | int64_t(cv * (W / g + 2) + cu);
        }
    }

    SuperpixelBuild out;
    out.labels.assign(size_t(W) * H, kInvalidSuperpixel);
    std::vector<std::vector<uint32_t>> sp_pixels;
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            size_t i = size_t(v) * W + u;
            if (key[i] < 0 || out.labels[i] != kInvalidSuperpixel) continue;
            uint32_t id = uint32_t(sp_pixels.size());
            sp_pixels.emplace_back();
            std::deque<std::pair<int, int>> queue{{u, v}};
            out.labels[i] = id;
            while (!queue.empty()) {
                auto [x, y] = queue.front();
                queue.pop_front();
                sp_pixels[id].push_back(uint32_t(y) * W + x);
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int n = 0; n < 4; ++n) {
                    int nx = x + dx[n], ny = y + dy[n];
                    if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
                    size_t ni = size_t(ny) * W + nx;
                    if (key[ni] == key[i] && out.labels[ni] == kInvalidSuperpixel) {
                        out.labels[ni] = id;
                        queue.emplace_back(nx, ny);
                    }
                }
            }
        }
    }

    // Fold tiny fragments into a same-instance 4-neighbor.
    for (uint32_t id = 0; id < sp_pixels.size(); ++id) {
        if (sp_pixels[id].size() >= 8 || sp_pixels[id].empty()) continue;
        uint32_t target = kInvalidSuperpixel;
        for (uint32_t px : sp_pixels[id]) {
            int u = int(px % uint32_t(W)), v = int(px / uint32_t(W));
            const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
            for (int n = 0; n < 4 && target == kInvalidSuperpixel; ++n) {
                int nx = u + dx[n], ny = v + dy[n];
                if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
                size_t ni = size_t(ny) * W + nx;
                uint32_t nid = out.labels[ni];
                if (nid != kInvalidSuperpixel && nid != id && instances[ni] == instances[px])
                    target = nid;
            }
            if (target != kInvalidSuperpixel) break;
        }
        if (target == kInvalidSuperpixel) continue;
        for (uint32_t px : sp_pixels[id]) out.labels[px] = target;
        sp_pixels[target].insert(sp_pixels[target].end(), sp_pixels[id].begin(),
                                 sp_pixels[id].end());
        sp_pixels[id].clear();
    }

    // Optional impurity stress: merge boundary superpixels across instances.
    if (leaky_prob > 0) {
        for (uint32_t id = 0; id < sp_pixels.size(); ++id) {
            if (sp_pixels[id].empty()) continue;
            uint32_t foreign = kInvalidSuperpixel;
            for (uint32_t px : sp_pixels[id]) {
                int u = int(px % uint32_t(W)), v = int(px / uint32_t(W));
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int n = 0; n < 4; ++n) {
                    int nx = u + dx[n], ny = v + dy[n];
                    if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
                    size_t ni = size_t(ny) * W + nx;
                    uint32_t nid = out.labels[ni];
                    if (nid != kInvalidSuperpixel && nid != id && instances[ni] != instances[px]) {
                        foreign = nid;
                        break;
                    }
                }
                if (foreign != kInvalidSuperpixel) break;
            }
            if (foreign == kInvalidSuperpixel || sp_pixels[foreign].empty()) continue;
            if (rng.uniform() >= leaky_prob) continue;
            for (uint32_t px : sp_pixels[id]) out.labels[px] = foreign;
            sp_pixels[foreign].insert(sp_pixels[foreign].end(), sp_pixels[id].begin(),
                                      sp_pixels[id].end());
            sp_pixels[id].clear();
        }
    }

    // Compact ids in first-pixel raster order.
    std::vector<uint32_t> remap(sp_pixels.size(), kInvalidSuperpixel);
    uint32_t next = 0;
    for (size_t i = 0; i < out.labels.size(); ++i) {
        uint32_t id = out.labels[i];
        if (id == kInvalidSuperpixel) continue;
        if (remap[id] == kInvalidSuperpixel) remap[id] = next++;
        out.labels[i] = remap[id];
    }
    out.count = int(next);
    return out;
}

}  // namespace

DepthImage add_sensor_noise(const DepthImage& d, const NoiseModel& model, Rng rng) {
    if (model.sigma_rel < 0 || model.dropout < 0 || model.dropout >= 1)
        throw InvalidSpec("bad noise model");
    DepthImage out = d;
    for (size_t i = 0; i < out.depth.size(); ++i) {
        float z = out.depth[i];
        if (!DepthImage::valid_value(z)) {
            out.depth[i] = DepthImage::missing();
            continue;
        }
        if (model.dropout > 0 && rng.uniform() < model.dropout) {
            out.depth[i] = DepthImage::missing();
            continue;
        }
        double zz = double(z);
        if (model.sigma_rel > 0) zz *= 1.0 + model.sigma_rel * rng.normal();
        if (model.quantize) zz = std::round(zz * 1000.0) / 1000.0;
        out.depth[i] = (zz > 0 && zz <= kMaxDepthMeters) ? float(zz) : DepthImage::missing();
    }
    return out;
}

GroundTruthBundle generate_scene(const SceneSpec& spec, const GenOptions& opt) {
    validate_spec(spec);
    Rng rng(spec.seed);

    GroundTruthBundle bundle;
    bundle.spec = spec;

    const int W = spec.camera.intrinsics.width, H = spec.camera.intrinsics.height;
    const size_t n_px = size_t(W) * H;

    // Render layout + objects with mesh labels.
    std::vector<TriMesh> meshes;
    for (const auto& s : spec.layout) meshes.push_back(layout_surface_mesh(s));
    for (const auto& o : spec.objects) meshes.push_back(o.world_mesh());
    std::vector<MeshInstance> instances(meshes.size());
    for (size_t i = 0; i < meshes.size(); ++i) {
        instances[i].mesh = &meshes[i];
        instances[i].linear = spec.camera.rotation;
        instances[i].offset = -spec.camera.rotation * spec.camera.position;
    }
    DepthRender render = render_depth(instances, spec.camera.intrinsics);

    bundle.depth_clean = DepthImage(spec.camera.intrinsics);
    std::vector<uint32_t> inst_map(n_px, 0);
    const int n_layout = int(spec.layout.size());
    for (size_t i = 0; i < n_px; ++i) {
        if (!render.covered(i)) continue;
        if (render.depth[i] > kMaxDepthMeters) continue;
        bundle.depth_clean.depth[i] = render.depth[i];
        if (render.label[i] >= n_layout)
            inst_map[i] = spec.objects[render.label[i] - n_layout].instance_id;
    }
    bundle.depth = spec.noise.active()
                       ? add_sensor_noise(bundle.depth_clean, spec.noise, rng.derive(101))
                       : bundle.depth_clean;

    bundle.instances = SuperpixelMap::from_labels(W, H, std::vector<uint32_t>(inst_map));
    // Instance ids pass straight through; from_labels infers the count.
    bundle.instances.count = 0;
    for (uint32_t id : inst_map) bundle.instances.count = std::max<int>(bundle.instances.count, int(id) + 1);

    // P_object: 1 on objects, 0 elsewhere, optionally blurred.
    std::vector<float> pobj(n_px, 0.0f);
    for (size_t i = 0; i < n_px; ++i) pobj[i] = inst_map[i] != 0 ? 1.0f : 0.0f;
    bundle.p_object = gaussian_blur(pobj, W, H, opt.pobject_blur_sigma);

    // Boundary strength from instance transitions.
    Rng brng = rng.derive(102);
    bundle.boundary.assign(n_px, 0.0f);
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            size_t i = size_t(v) * W + u;
            bool edge = false;
            const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
            for (int n = 0; n < 4 && !edge; ++n) {
                int nx = u + dx[n], ny = v + dy[n];
                if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
                edge = inst_map[size_t(ny) * W + nx] != inst_map[i];
            }
            double s = (edge ? 0.9 : 0.1) + brng.uniform(-0.05, 0.05);
            bundle.boundary[i] = float(std::clamp(s, 0.0, 1.0));
        }
    }

    std::vector<uint8_t> valid(n_px, 0);
    for (size_t i = 0; i < n_px; ++i) valid[i] = bundle.depth_clean.valid(int(i % W), int(i / W));
    SuperpixelBuild sp = build_superpixels(inst_map, valid, W, H, opt.target_superpixels,
                                           opt.leaky_superpixels, rng.derive(103));
    bundle.superpixels = SuperpixelMap::from_labels(W, H, std::move(sp.labels));

    bundle.layout_render = render_layout_surfaces(spec.layout, spec.camera);

    if (opt.make_voxels) {
        Aabb3 box;
        for (const auto& s : spec.layout) {
            TriMesh m = layout_surface_mesh(s);
            for (const auto& v : m.vertices) box.expand(v);
        }
        for (const auto& s : spec.layout) {
            if (s.cutouts.empty()) continue;
            // Extend the grid past the plane so opening scope stays inside.
            Vector3d outward = -layout_category_normal(s.plane.category);
            if (outward.sum() > 0)
                box.expand(box.hi + outward * 1.05);
            else
                box.expand(box.lo + outward * 1.05);
        }
        for (size_t i = n_layout; i < meshes.size(); ++i) box.expand(meshes[i].bbox().lo), box.expand(meshes[i].bbox().hi);
        VoxelGrid grid = make_voxel_grid_for_box(box.lo - Vector3d::Constant(opt.voxel_spacing),
                                                 box.hi + Vector3d::Constant(opt.voxel_spacing),
                                                 opt.voxel_spacing);
        for (size_t i = n_layout; i < meshes.size(); ++i) voxelize_mesh(grid, meshes[i]);
        apply_scope(grid, spec.layout, spec.camera);
        bundle.truth_voxels = std::move(grid);
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Random scenes

namespace {

struct RoomBox {
    double x0, x1, yc, z1;  // left, right, ceiling (negative y), front
};

LayoutSurface make_surface(LayoutCategory cat, double offset, Rect2 extent) {
    LayoutSurface s;
    s.plane.category = cat;
    s.plane.axis = layout_category_axis(cat);
    s.plane.offset = offset;
    s.extent = extent;
    return s;
}

int count_visible(const DepthRender& composite, const TriMesh& world_mesh,
                  const CameraPose& cam) {
    MeshInstance inst;
    inst.mesh = &world_mesh;
    inst.linear = cam.rotation;
    inst.offset = -cam.rotation * cam.position;
    DepthRender solo = render_depth(std::span(&inst, 1), cam.intrinsics);
    int visible = 0;
    for (size_t i = 0; i < solo.depth.size(); ++i)
        if (solo.covered(i) && solo.depth[i] <= composite.depth[i] + 1e-5f) ++visible;
    return visible;
}

void merge_render(DepthRender& composite, const TriMesh& world_mesh, const CameraPose& cam,
                  int label) {
    MeshInstance inst;
    inst.mesh = &world_mesh;
    inst.linear = cam.rotation;
    inst.offset = -cam.rotation * cam.position;
    DepthRender solo = render_depth(std::span(&inst, 1), cam.intrinsics);
    for (size_t i = 0; i < solo.depth.size(); ++i) {
        if (solo.covered(i) && solo.depth[i] < composite.depth[i]) {
            composite.depth[i] = solo.depth[i];
            composite.label[i] = label;
        }
    }
}

Rect2 projected_rect(const TriMesh& world_mesh, const CameraPose& cam) {
    Rect2 r = Rect2::empty_rect();
    for (const auto& v : world_mesh.vertices) {
        Vector3d pc = cam.to_camera(v);
        if (pc.z() <= 0.05) continue;
        Vector2d px = cam.intrinsics.project(pc);
        r.expand(px.x(), px.y());
    }
    return r;
}

std::pair<std::string, std::vector<double>> sample_shape(Rng& rng) {
    int which = rng.uniform_int(int(shape_ids().size()));
    const std::string& id = shape_ids()[which];
    if (id == "box")
        return {id, {rng.uniform(0.35, 1.1), rng.uniform(0.3, 1.0), rng.uniform(0.35, 1.1)}};
    if (id == "table")
        return {id, {rng.uniform(0.9, 1.5), rng.uniform(0.65, 0.78), rng.uniform(0.6, 0.95)}};
    if (id == "chair")
        return {id, {rng.uniform(0.42, 0.55), rng.uniform(0.85, 1.0), rng.uniform(0.42, 0.55)}};
    if (id == "lshelf")
        return {id, {rng.uniform(0.7, 1.3), rng.uniform(1.0, 1.8), rng.uniform(0.3, 0.45)}};
    return {id, {rng.uniform(0.18, 0.4), rng.uniform(0.5, 1.1), 8}};
}

}  // namespace

SceneSpec random_scene_spec(uint64_t seed, Difficulty difficulty, const GenOptions& opt,
                            const NoiseModel& noise) {
    Rng rng(seed);
    Rng r_room = rng.derive(1);
    Rng r_cam = rng.derive(2);
    Rng r_obj = rng.derive(3);
    Rng r_cut = rng.derive(4);

    SceneSpec spec;
    spec.seed = seed;
    spec.noise = noise;

    spec.camera.intrinsics.width = opt.width;
    spec.camera.intrinsics.height = opt.height;
    spec.camera.intrinsics.fx = spec.camera.intrinsics.fy = opt.focal;
    spec.camera.intrinsics.cx = opt.width / 2;
    spec.camera.intrinsics.cy = opt.height / 2;
    const double deg = 3.14159265358979323846 / 180.0;

    // Draw rooms and cameras until every core surface keeps solid image
    // support; nearly all draws pass on the first try.
    RoomBox room{};
    const int min_surface_pixels = std::max(60, opt.width * opt.height / 80);
    bool viable = false;
    for (int room_try = 0; room_try < 8 && !viable; ++room_try) {
        double wx = r_room.uniform(4.0, 5.2);
        double h = r_room.uniform(2.4, 3.0);
        room.x0 = -wx / 2;
        room.x1 = wx / 2;
        room.yc = -h;
        room.z1 = r_room.uniform(5.0, 6.5);
        for (int cam_try = 0; cam_try < 12 && !viable; ++cam_try) {
            spec.camera.position = {r_cam.uniform(-0.5, 0.5), -r_cam.uniform(1.3, 1.7),
                                    r_cam.uniform(0.35, 0.7)};
            double cam_yaw = r_cam.uniform(-6, 6) * deg;
            double cam_pitch = r_cam.uniform(-2, 5) * deg;
            double cam_roll = r_cam.uniform(-2, 2) * deg;
            Matrix3d r_cw = (Eigen::AngleAxisd(cam_pitch, Vector3d::UnitX()) *
                             Eigen::AngleAxisd(cam_yaw, Vector3d::UnitY()) *
                             Eigen::AngleAxisd(cam_roll, Vector3d::UnitZ()))
                                .toRotationMatrix();
            spec.camera.rotation = r_cw.transpose();

            spec.layout.clear();
            spec.layout.push_back(
                make_surface(LayoutCategory::Floor, 0.0, {room.x0, 0, room.x1, room.z1}));
            spec.layout.push_back(
                make_surface(LayoutCategory::Ceiling, room.yc, {room.x0, 0, room.x1, room.z1}));
            spec.layout.push_back(
                make_surface(LayoutCategory::LeftWall, room.x0, {room.yc, 0, 0, room.z1}));
            spec.layout.push_back(
                make_surface(LayoutCategory::RightWall, room.x1, {room.yc, 0, 0, room.z1}));
            spec.layout.push_back(
                make_surface(LayoutCategory::FrontWall, room.z1, {room.x0, room.yc, room.x1, 0}));

            std::vector<TriMesh> meshes;
            std::vector<MeshInstance> instances;
            for (const auto& s : spec.layout) meshes.push_back(layout_surface_mesh(s));
            for (auto& m : meshes) {
                MeshInstance inst;
                inst.mesh = &m;
                inst.linear = spec.camera.rotation;
                inst.offset = -spec.camera.rotation * spec.camera.position;
                instances.push_back(inst);
            }
            DepthRender r = render_depth(instances, spec.camera.intrinsics);
            std::vector<int> support(spec.layout.size(), 0);
            for (size_t i = 0; i < r.label.size(); ++i)
                if (r.label[i] >= 0) ++support[r.label[i]];
            viable = std::all_of(support.begin(), support.end(),
                                 [&](int n) { return n >= min_surface_pixels; });
        }
    }

    // Hard scenes may add a partial room divider (kept only if visible).
    if (difficulty == Difficulty::Hard && r_cut.uniform() < 0.6) {
        double zd = r_cut.uniform(spec.camera.position.z() + 1.8, room.z1 - 1.2);
        double span = r_cut.uniform(1.2, (room.x1 - room.x0) - 1.6);
        bool from_left = r_cut.uniform() < 0.5;
        Rect2 ext = from_left ? Rect2{room.x0, room.yc, room.x0 + span, 0.0}
                              : Rect2{room.x1 - span, room.yc, room.x1, 0.0};
        LayoutSurface divider = make_surface(LayoutCategory::FrontWall, zd, ext);
        TriMesh dm = layout_surface_mesh(divider);
        MeshInstance inst;
        inst.mesh = &dm;
        inst.linear = spec.camera.rotation;
        inst.offset = -spec.camera.rotation * spec.camera.position;
        DepthRender r = render_depth(std::span(&inst, 1), spec.camera.intrinsics);
        int visible = 0;
        for (size_t i = 0; i < r.label.size(); ++i) visible += r.label[i] >= 0;
        if (visible >= min_surface_pixels) spec.layout.push_back(divider);
    }

    // Wall openings with a backing slab behind them (the slab provides the
    // depth evidence an opening needs).
    LayoutSurface& front = spec.layout[4];
    std::vector<SceneObjectSpec> slabs;
    bool want_cutout = difficulty != Difficulty::Easy && r_cut.uniform() < 0.75;
    if (want_cutout) {
        std::vector<TriMesh> meshes;
        std::vector<MeshInstance> instances;
        for (const auto& s : spec.layout) meshes.push_back(layout_surface_mesh(s));
        for (auto& m : meshes) {
            MeshInstance inst;
            inst.mesh = &m;
            inst.linear = spec.camera.rotation;
            inst.offset = -spec.camera.rotation * spec.camera.position;
            instances.push_back(inst);
        }
        DepthRender base = render_depth(instances, spec.camera.intrinsics);

        for (int attempt = 0; attempt < 10; ++attempt) {
            bool doorway = r_cut.uniform() < 0.5;
            double xc = r_cut.uniform(room.x0 + 1.0, room.x1 - 1.0);
            Rect2 hole;
            if (doorway) {
                // Opening with a sill: rays through the very bottom of a
                // floor-level hole would pass under any backing geometry, so
                // depth evidence there cannot exist.
                double hw = r_cut.uniform(0.45, 0.65);
                double sill = r_cut.uniform(0.25, 0.45);
                hole = {xc - hw, -sill - r_cut.uniform(1.5, 1.8), xc + hw, -sill};
            } else {
                double hw = r_cut.uniform(0.5, 0.8), hh = r_cut.uniform(0.4, 0.6);
                double yc = -r_cut.uniform(1.0, 1.6);
                hole = {xc - hw, yc - hh, xc + hw, yc + hh};
            }
            // The opening must be observed: count front-wall pixels whose ray
            // passes through the hole.
            int through = 0;
            for (size_t i = 0; i < base.label.size(); ++i) {
                if (base.label[i] != 4) continue;  // front wall surface index
                int u = int(i % size_t(opt.width)), v = int(i / size_t(opt.width));
                Vector3d dir = spec.camera.rotation.transpose() *
                               spec.camera.intrinsics.unproject(u, v, 1.0);
                double t = (room.z1 - spec.camera.position.z()) / dir.z();
                if (t <= 0) continue;
                Vector3d q = spec.camera.position + t * dir;
                if (hole.contains(q.x(), q.y())) ++through;
            }
            if (through < min_surface_pixels) continue;

            front.cutouts.push_back(hole);
            SceneObjectSpec slab;
            slab.shape_id = "box";
            double sw = hole.width() + 0.8;
            double sy0 = std::max(room.yc + 0.05, hole.v0 - 0.4);
            double sh = -sy0;  // down to the floor
            slab.params = {sw, sh, 0.12};
            slab.yaw = 0.0;
            slab.translation = {0.5 * (hole.u0 + hole.u1), sy0 + sh / 2,
                                room.z1 + r_cut.uniform(0.45, 0.75)};
            slabs.push_back(slab);
            break;
        }
    }

    // Object placement against an incrementally built z-buffer; every object
    // must keep a visible footprint.
    std::vector<TriMesh> layout_meshes;
    for (const auto& s : spec.layout) layout_meshes.push_back(layout_surface_mesh(s));
    DepthRender composite(opt.width, opt.height);
    for (const auto& m : layout_meshes) merge_render(composite, m, spec.camera, 0);
    for (const auto& slab : slabs) merge_render(composite, slab.world_mesh(), spec.camera, 0);

    int n_objects;
    switch (difficulty) {
        case Difficulty::Easy: n_objects = 2 + r_obj.uniform_int(2); break;
        case Difficulty::Medium: n_objects = 4 + r_obj.uniform_int(3); break;
        default: n_objects = 7 + r_obj.uniform_int(4); break;
    }

    std::vector<Rect2> accepted_rects;
    std::vector<Vector3d> accepted_pos;
    double occlusion_bias =
        difficulty == Difficulty::Easy ? 0.0 : (difficulty == Difficulty::Medium ? 0.25 : 0.5);

    for (int k = 0; k < n_objects; ++k) {
        auto [id, params] = sample_shape(r_obj);
        SceneObjectSpec obj;
        obj.shape_id = id;
        obj.params = params;
        obj.scale = 1.0;
        for (int attempt = 0; attempt < 25; ++attempt) {
            obj.yaw = r_obj.uniform(-1.5, 1.5);
            TriMesh local = make_shape(id, params);
            double hh = local.bbox().extent().y();
            double zmin = spec.camera.position.z() + 1.3;
            double x, z;
            if (!accepted_pos.empty() && r_obj.uniform() < occlusion_bias) {
                // Drop the new object onto the sight line of an earlier one.
                const Vector3d& prev = accepted_pos[r_obj.uniform_int(int(accepted_pos.size()))];
                Vector3d dir = prev - spec.camera.position;
                double t = r_obj.uniform(0.45, 0.8);
                x = spec.camera.position.x() + dir.x() * t + r_obj.uniform(-0.2, 0.2);
                z = spec.camera.position.z() + dir.z() * t;
            } else {
                x = r_obj.uniform(room.x0 + 0.8, room.x1 - 0.8);
                z = r_obj.uniform(zmin, room.z1 - 0.5);
            }
            obj.translation = {x, -hh / 2, z};
            TriMesh world = obj.world_mesh();
            Aabb3 box = world.bbox();
            if (box.lo.x() < room.x0 + 0.1 || box.hi.x() > room.x1 - 0.1 ||
                box.hi.z() > room.z1 - 0.1 || box.lo.z() < zmin - 0.6)
                continue;
            if (difficulty == Difficulty::Easy) {
                Rect2 pr = projected_rect(world, spec.camera);
                bool clash = false;
                for (const auto& r : accepted_rects)
                    if (pr.overlaps(r)) {
                        clash = true;
                        break;
                    }
                if (clash) continue;
            }
            if (count_visible(composite, world, spec.camera) < 80) continue;
            merge_render(composite, world, spec.camera, 1);
            accepted_rects.push_back(projected_rect(world, spec.camera));
            accepted_pos.push_back(obj.translation);
            spec.objects.push_back(obj);
            break;
        }
    }
    for (const auto& slab : slabs) spec.objects.push_back(slab);
    for (size_t i = 0; i < spec.objects.size(); ++i)
        spec.objects[i].instance_id = uint32_t(i + 1);
    return spec;
}

GroundTruthBundle generate_scene(uint64_t seed, Difficulty difficulty, const GenOptions& opt,
                                 const NoiseModel& noise) {
    return generate_scene(random_scene_spec(seed, difficulty, opt, noise), opt);
}

ExemplarLibrary build_exemplar_library(const std::vector<const GroundTruthBundle*>& bundles) {
    if (bundles.empty()) throw EmptyTrainingSet();
    ExemplarLibrary lib;
    for (const GroundTruthBundle* bundle : bundles) {
        ManhattanFrame frame = bundle->spec.true_frame();
        OrientedPointCloud pc_room;
        try {
            pc_room = to_room_frame(estimate_normals(unproject(bundle->depth)), frame);
        } catch (const AllPixelsMissing&) {
            continue;
        }
        const int W = bundle->depth.width();
        for (const auto& obj : bundle->spec.objects) {
            RegionProposal region;
            for (size_t i = 0; i < bundle->instances.labels.size(); ++i)
                if (bundle->instances.labels[i] == obj.instance_id)
                    region.pixels.push_back(uint32_t(i));
            (void)W;
            if (region.pixels.size() < 10) continue;
            ExemplarEntry entry;
            try {
                entry.features = extract_region_features(region, bundle->depth, pc_room);
            } catch (const TooFewPoints&) {
                continue;
            }
            entry.label = obj.shape_id;
            entry.mesh = make_shape(obj.shape_id, obj.params);
            Aabb3 box = entry.mesh.bbox();
            entry.scale_meta = box.extent();
            entry.mesh_ref = shape_mesh_ref(obj.shape_id, obj.params);
            lib.entries.push_back(std::move(entry));
        }
    }
    if (lib.entries.empty()) throw EmptyTrainingSet("no visible objects in training scenes");
    return lib;
}

}  // namespace dscene
