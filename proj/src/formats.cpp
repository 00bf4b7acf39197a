#include "dscene/formats.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace dscene {

using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot read " + path.string());
    return in;
}

}  // namespace

void write_dmap(const fs::path& path, int width, int height, const std::vector<float>& data) {
    if (data.size() != size_t(width) * height) throw SizeMismatch("dmap payload size");
    auto out = open_out(path, std::ios::binary);
    out << "DMAP " << width << " " << height << "\n";
    out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size() * 4));
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<float> read_dmap(const fs::path& path, int& width, int& height) {
    auto in = open_in(path, std::ios::binary);
    std::string magic;
    in >> magic >> width >> height;
    if (magic != "DMAP" || width <= 0 || height <= 0)
        throw IoError("bad DMAP header in " + path.string());
    in.get();  // newline
    std::vector<float> data(size_t(width) * height);
    in.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * 4));
    if (!in) throw IoError("short DMAP payload in " + path.string());
    return data;
}

void write_depth_image(const fs::path& path, const DepthImage& d) {
    std::vector<float> data = d.depth;
    for (float& z : data)
        if (!DepthImage::valid_value(z)) z = 0.0f;
    write_dmap(path, d.width(), d.height(), data);
}

DepthImage read_depth_image(const fs::path& path, const CameraIntrinsics& cam) {
    int w = 0, h = 0;
    std::vector<float> data = read_dmap(path, w, h);
    if (w != cam.width || h != cam.height) throw SizeMismatch("depth file vs intrinsics");
    DepthImage d(cam);
    for (size_t i = 0; i < data.size(); ++i)
        d.depth[i] = data[i] > 0.0f && data[i] <= float(kMaxDepthMeters) ? data[i]
                                                                         : DepthImage::missing();
    return d;
}

void write_spix(const fs::path& path, int width, int height, const std::vector<uint32_t>& labels) {
    if (labels.size() != size_t(width) * height) throw SizeMismatch("spix payload size");
    auto out = open_out(path, std::ios::binary);
    out << "SPIX " << width << " " << height << "\n";
    out.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size() * 4));
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<uint32_t> read_spix(const fs::path& path, int& width, int& height) {
    auto in = open_in(path, std::ios::binary);
    std::string magic;
    in >> magic >> width >> height;
    if (magic != "SPIX" || width <= 0 || height <= 0)
        throw IoError("bad SPIX header in " + path.string());
    in.get();
    std::vector<uint32_t> labels(size_t(width) * height);
    in.read(reinterpret_cast<char*>(labels.data()), std::streamsize(labels.size() * 4));
    if (!in) throw IoError("short SPIX payload in " + path.string());
    return labels;
}

void write_vox(const fs::path& path, const VoxelGrid& grid) {
    auto out = open_out(path, std::ios::binary);
    out << "VOX " << grid.nx << " " << grid.ny << " " << grid.nz << " " << grid.spacing << " "
        << grid.origin.x() << " " << grid.origin.y() << " " << grid.origin.z() << "\n";
    size_t n = grid.voxel_count();
    std::vector<uint8_t> bytes((n + 7) / 8, 0);
    for (size_t i = 0; i < n; ++i)
        if (grid.occupancy.test(i)) bytes[i >> 3] |= uint8_t(1) << (i & 7);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

VoxelGrid read_vox(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::string magic;
    int nx, ny, nz;
    double spacing, ox, oy, oz;
    in >> magic >> nx >> ny >> nz >> spacing >> ox >> oy >> oz;
    if (magic != "VOX" || nx <= 0 || ny <= 0 || nz <= 0 || spacing <= 0)
        throw IoError("bad VOX header in " + path.string());
    in.get();
    VoxelGrid grid = make_voxel_grid(Vector3d(ox, oy, oz), spacing, nx, ny, nz);
    size_t n = grid.voxel_count();
    std::vector<uint8_t> bytes((n + 7) / 8);
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!in) throw IoError("short VOX payload in " + path.string());
    for (size_t i = 0; i < n; ++i)
        if (bytes[i >> 3] & (uint8_t(1) << (i & 7))) grid.occupancy.set(i);
    return grid;
}

void write_off(const fs::path& path, const TriMesh& mesh) {
    auto out = open_out(path);
    out << "OFF\n" << mesh.vertices.size() << " " << mesh.faces.size() << " 0\n";
    out.precision(9);
    for (const auto& v : mesh.vertices) out << v.x() << " " << v.y() << " " << v.z() << "\n";
    for (const auto& f : mesh.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
    if (!out) throw IoError("short write to " + path.string());
}

TriMesh read_off(const fs::path& path) {
    auto in = open_in(path);
    std::string magic;
    in >> magic;
    if (magic != "OFF") throw IoError("bad OFF header in " + path.string());
    size_t nv, nf, ne;
    in >> nv >> nf >> ne;
    TriMesh mesh;
    mesh.vertices.resize(nv);
    for (auto& v : mesh.vertices) in >> v.x() >> v.y() >> v.z();
    for (size_t i = 0; i < nf; ++i) {
        int n;
        in >> n;
        if (n < 3) throw IoError("bad face in " + path.string());
        std::vector<int> idx(n);
        for (int& k : idx) in >> k;
        for (int k = 1; k + 1 < n; ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
    if (!in) throw IoError("truncated OFF file " + path.string());
    mesh.validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// Scene files

namespace {

json rect_to_json(const Rect2& r) { return json::array({r.u0, r.v0, r.u1, r.v1}); }

Rect2 rect_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2), j.at(3)}; }

json vec3_to_json(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vector3d vec3_from_json(const json& j) {
    return Vector3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

const char* axis_name(Axis a) { return a == Axis::X ? "x" : (a == Axis::Y ? "y" : "z"); }

Axis axis_from_name(const std::string& s) {
    if (s == "x") return Axis::X;
    if (s == "y") return Axis::Y;
    if (s == "z") return Axis::Z;
    throw IoError("bad axis name: " + s);
}

}  // namespace

void write_scene_file(const fs::path& path, const SceneFile& scene) {
    json j;
    json cam;
    cam["fx"] = scene.camera.intrinsics.fx;
    cam["fy"] = scene.camera.intrinsics.fy;
    cam["cx"] = scene.camera.intrinsics.cx;
    cam["cy"] = scene.camera.intrinsics.cy;
    cam["width"] = scene.camera.intrinsics.width;
    cam["height"] = scene.camera.intrinsics.height;
    cam["position"] = vec3_to_json(scene.camera.position);
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot.push_back(scene.camera.rotation(r, c));
    cam["rotation"] = rot;
    j["camera"] = cam;

    j["layout"] = json::array();
    for (const auto& s : scene.layout) {
        json js;
        js["category"] = layout_category_name(s.plane.category);
        js["axis"] = axis_name(s.plane.axis);
        js["offset"] = s.plane.offset;
        js["extent"] = rect_to_json(s.extent);
        js["cutouts"] = json::array();
        for (const auto& c : s.cutouts) js["cutouts"].push_back(rect_to_json(c));
        if (s.plane.score != 0.0) js["score"] = s.plane.score;
        j["layout"].push_back(js);
    }

    j["objects"] = json::array();
    for (const auto& o : scene.objects) {
        json jo;
        jo["mesh"] = o.params.empty() ? o.shape_id : shape_mesh_ref(o.shape_id, o.params);
        jo["scale"] = o.scale;
        jo["yaw"] = o.yaw;
        jo["translation"] = vec3_to_json(o.translation);
        jo["instance_id"] = o.instance_id;
        j["objects"].push_back(jo);
    }
    j["seed"] = scene.seed;

    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

SceneFile read_scene_file(const fs::path& path) {
    auto in = open_in(path);
    json j = json::parse(in);
    SceneFile scene;
    const json& cam = j.at("camera");
    scene.camera.intrinsics.fx = cam.at("fx");
    scene.camera.intrinsics.fy = cam.at("fy");
    scene.camera.intrinsics.cx = cam.at("cx");
    scene.camera.intrinsics.cy = cam.at("cy");
    scene.camera.intrinsics.width = cam.at("width");
    scene.camera.intrinsics.height = cam.at("height");
    if (cam.contains("position")) scene.camera.position = vec3_from_json(cam.at("position"));
    if (cam.contains("rotation")) {
        const json& rot = cam.at("rotation");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) scene.camera.rotation(r, c) = rot.at(r * 3 + c);
    }
    for (const json& js : j.value("layout", json::array())) {
        LayoutSurface s;
        auto cat = layout_category_from_name(js.at("category"));
        if (!cat) throw IoError("bad layout category in " + path.string());
        s.plane.category = *cat;
        s.plane.axis = axis_from_name(js.at("axis"));
        s.plane.offset = js.at("offset");
        s.plane.score = js.value("score", 0.0);
        s.extent = rect_from_json(js.at("extent"));
        for (const json& jc : js.value("cutouts", json::array()))
            s.cutouts.push_back(rect_from_json(jc));
        scene.layout.push_back(s);
    }
    for (const json& jo : j.value("objects", json::array())) {
        SceneObjectSpec o;
        std::string ref = jo.at("mesh");
        std::vector<double> params;
        std::string id;
        if (parse_shape_ref(ref, id, params)) {
            o.shape_id = id;
            o.params = params;
        } else {
            o.shape_id = ref;  // treated as a mesh path by resolve_mesh_ref
        }
        o.scale = jo.at("scale");
        o.yaw = jo.at("yaw");
        o.translation = vec3_from_json(jo.at("translation"));
        o.instance_id = jo.at("instance_id");
        scene.objects.push_back(o);
    }
    scene.seed = j.value("seed", uint64_t(0));
    return scene;
}

SceneFile scene_file_from_spec(const SceneSpec& spec) {
    SceneFile f;
    f.camera = spec.camera;
    f.layout = spec.layout;
    f.objects = spec.objects;
    f.seed = spec.seed;
    return f;
}

SceneSpec spec_from_scene_file(const SceneFile& file, const NoiseModel& noise) {
    SceneSpec spec;
    spec.camera = file.camera;
    spec.layout = file.layout;
    spec.objects = file.objects;
    spec.seed = file.seed;
    spec.noise = noise;
    return spec;
}

TriMesh resolve_mesh_ref(const std::string& ref, const fs::path& base_dir) {
    std::string id;
    std::vector<double> params;
    if (parse_shape_ref(ref, id, params)) return make_shape(id, params);
    fs::path p(ref);
    if (p.is_relative()) p = base_dir / p;
    return read_off(p);
}

// ---------------------------------------------------------------------------
// Model persistence

void write_classifier(const fs::path& path, const PlaneClassifier& clf) {
    auto out = open_out(path);
    out.precision(17);
    for (double w : clf.w) out << w << "\n";
}

PlaneClassifier read_classifier(const fs::path& path) {
    auto in = open_in(path);
    PlaneClassifier clf;
    for (double& w : clf.w)
        if (!(in >> w)) throw IoError("classifier file needs 13 values: " + path.string());
    return clf;
}

void write_prior(const fs::path& path, const PositionPrior& prior) {
    auto out = open_out(path);
    out.precision(17);
    out << "PRIOR " << prior.min_offset << " " << prior.bin_width << " " << prior.density.size()
        << "\n";
    for (double d : prior.density) out << d << "\n";
}

PositionPrior read_prior(const fs::path& path) {
    auto in = open_in(path);
    std::string magic;
    size_t n;
    PositionPrior prior;
    in >> magic >> prior.min_offset >> prior.bin_width >> n;
    if (magic != "PRIOR") throw IoError("bad prior file " + path.string());
    prior.density.resize(n);
    for (double& d : prior.density)
        if (!(in >> d)) throw IoError("truncated prior file " + path.string());
    return prior;
}

namespace {

std::string category_slug(LayoutCategory c) {
    std::string name = layout_category_name(c);
    for (char& ch : name)
        if (ch == ' ') ch = '_';
    return name;
}

}  // namespace

void write_layout_model(const fs::path& dir, const LayoutModel& model) {
    fs::create_directories(dir);
    for (int c = 0; c < kLayoutCategories; ++c) {
        std::string slug = category_slug(LayoutCategory(c));
        write_classifier(dir / (slug + ".weights"), model.classifiers[c]);
        write_prior(dir / (slug + ".prior"), model.priors[c]);
    }
}

LayoutModel read_layout_model(const fs::path& dir) {
    LayoutModel model;
    for (int c = 0; c < kLayoutCategories; ++c) {
        std::string slug = category_slug(LayoutCategory(c));
        model.classifiers[c] = read_classifier(dir / (slug + ".weights"));
        model.priors[c] = read_prior(dir / (slug + ".prior"));
    }
    return model;
}

void write_metric_model(const fs::path& path, const MetricModel& m) {
    json j;
    j["rank"] = m.rank;
    j["dim"] = m.W.rows();
    j["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
    j["stddev"] = std::vector<double>(m.stddev.data(), m.stddev.data() + m.stddev.size());
    std::vector<double> w(m.W.size());
    for (int r = 0; r < m.W.rows(); ++r)
        for (int c = 0; c < m.W.cols(); ++c) w[size_t(r) * m.W.cols() + c] = m.W(r, c);
    j["W"] = w;
    auto out = open_out(path);
    out << j.dump() << "\n";
}

MetricModel read_metric_model(const fs::path& path) {
    auto in = open_in(path);
    json j = json::parse(in);
    MetricModel m;
    m.rank = j.at("rank");
    int dim = j.at("dim");
    std::vector<double> mean = j.at("mean"), stddev = j.at("stddev"), w = j.at("W");
    if (int(mean.size()) != dim || int(stddev.size()) != dim || int(w.size()) != dim * dim)
        throw IoError("inconsistent metric model " + path.string());
    m.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), dim);
    m.stddev = Eigen::Map<Eigen::VectorXd>(stddev.data(), dim);
    m.W = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        w.data(), dim, dim);
    return m;
}

void write_exemplar_library(const fs::path& dir, const ExemplarLibrary& lib) {
    fs::create_directories(dir);
    std::ofstream index = open_out(dir / "index.txt");
    for (size_t i = 0; i < lib.entries.size(); ++i) {
        const ExemplarEntry& e = lib.entries[i];
        std::string stem = "entry_" + std::to_string(i);
        index << stem << "\n";
        write_off(dir / (stem + ".off"), e.mesh);
        auto side = open_out(dir / (stem + ".txt"));
        side.precision(17);
        side << "label=" << e.label << "\n";
        side << "features=";
        for (int k = 0; k < e.features.v.size(); ++k) {
            if (k) side << " ";
            side << e.features.v[k];
        }
        side << "\n";
        side << "scale=" << e.scale_meta.x() << " " << e.scale_meta.y() << " " << e.scale_meta.z()
             << "\n";
        side << "mesh_ref=" << e.mesh_ref << "\n";
    }
}

ExemplarLibrary read_exemplar_library(const fs::path& dir) {
    auto index = open_in(dir / "index.txt");
    ExemplarLibrary lib;
    std::string stem;
    while (index >> stem) {
        ExemplarEntry e;
        e.mesh = read_off(dir / (stem + ".off"));
        auto side = open_in(dir / (stem + ".txt"));
        std::string line;
        while (std::getline(side, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq), value = line.substr(eq + 1);
            if (key == "label") {
                e.label = value;
            } else if (key == "features") {
                std::istringstream vs(value);
                std::vector<double> feats;
                double x;
                while (vs >> x) feats.push_back(x);
                if (int(feats.size()) != RegionFeatures::kDim)
                    throw IoError("bad feature count in " + stem);
                e.features.v = Eigen::Map<Eigen::VectorXd>(feats.data(), feats.size());
            } else if (key == "scale") {
                std::istringstream vs(value);
                vs >> e.scale_meta.x() >> e.scale_meta.y() >> e.scale_meta.z();
            } else if (key == "mesh_ref") {
                e.mesh_ref = value;
            }
        }
        lib.entries.push_back(std::move(e));
    }
    if (lib.entries.empty()) throw IoError("empty exemplar library " + dir.string());
    return lib;
}

// ---------------------------------------------------------------------------
// Bundles

void write_bundle(const fs::path& dir, const GroundTruthBundle& bundle) {
    fs::create_directories(dir);
    write_depth_image(dir / "depth.dmap", bundle.depth);
    write_spix(dir / "instances.spix", bundle.instances.width, bundle.instances.height,
               bundle.instances.labels);
    write_dmap(dir / "pobject.dmap", bundle.depth.width(), bundle.depth.height(),
               bundle.p_object);
    write_dmap(dir / "boundary.dmap", bundle.depth.width(), bundle.depth.height(),
               bundle.boundary);
    write_spix(dir / "superpixels.spix", bundle.superpixels.width, bundle.superpixels.height,
               bundle.superpixels.labels);
    write_scene_file(dir / "scene.json", scene_file_from_spec(bundle.spec));
    if (bundle.truth_voxels.voxel_count() > 0) write_vox(dir / "truth_voxels.vox", bundle.truth_voxels);
}

bool BundleData::has_truth_voxels() const { return fs::exists(dir / "truth_voxels.vox"); }

VoxelGrid BundleData::truth_voxels() const { return read_vox(dir / "truth_voxels.vox"); }

BundleData read_bundle(const fs::path& dir) {
    BundleData b;
    b.dir = dir;
    auto require = [&](const char* name) {
        fs::path p = dir / name;
        if (!fs::exists(p)) throw IoError("bundle is missing " + p.string());
        return p;
    };
    b.scene = read_scene_file(require("scene.json"));
    b.depth = read_depth_image(require("depth.dmap"), b.scene.camera.intrinsics);
    int w = 0, h = 0;
    b.instances = SuperpixelMap::from_labels(
        b.depth.width(), b.depth.height(),
        [&] {
            auto v = read_spix(require("instances.spix"), w, h);
            if (w != b.depth.width() || h != b.depth.height())
                throw SizeMismatch("instances.spix dimensions");
            return v;
        }());
    b.p_object = read_dmap(require("pobject.dmap"), w, h);
    if (w != b.depth.width() || h != b.depth.height()) throw SizeMismatch("pobject.dmap dims");
    b.boundary = read_dmap(require("boundary.dmap"), w, h);
    if (w != b.depth.width() || h != b.depth.height()) throw SizeMismatch("boundary.dmap dims");
    b.superpixels = SuperpixelMap::from_labels(
        b.depth.width(), b.depth.height(),
        [&] {
            auto v = read_spix(require("superpixels.spix"), w, h);
            if (w != b.depth.width() || h != b.depth.height())
                throw SizeMismatch("superpixels.spix dimensions");
            return v;
        }());
    return b;
}

}  // namespace dscene
