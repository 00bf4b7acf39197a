#include "dscene/mesh.hpp"

#include <Eigen/Geometry>
#include <cstdint>
#include <map>
#include <numeric>

namespace dscene {

Aabb3 TriMesh::bbox() const {
    Aabb3 box;
    for (const auto& v : vertices) box.expand(v);
    return box;
}

double TriMesh::surface_area() const {
    double area = 0.0;
    for (const auto& f : faces) {
        const Vector3d& a = vertices[f[0]];
        area += 0.5 * (vertices[f[1]] - a).cross(vertices[f[2]] - a).norm();
    }
    return area;
}

void TriMesh::validate() const {
    int n = int(vertices.size());
    for (const auto& f : faces)
        for (int idx : f)
            if (idx < 0 || idx >= n) throw InvalidSpec("face index out of range");
}

TriMesh TriMesh::transformed(const Matrix3d& linear, const Vector3d& offset) const {
    TriMesh out;
    out.vertices.reserve(vertices.size());
    for (const auto& v : vertices) out.vertices.push_back(linear * v + offset);
    out.faces = faces;
    return out;
}

void TriMesh::append(const TriMesh& other) {
    int base = int(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    faces.reserve(faces.size() + other.faces.size());
    for (const auto& f : other.faces)
        faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

bool is_watertight(const TriMesh& mesh) {
    if (mesh.faces.empty()) return false;
    // Directed edge counts: each undirected edge must appear once per direction.
    std::map<std::pair<int, int>, int> directed;
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            int a = f[k], b = f[(k + 1) % 3];
            if (a == b) return false;
            if (++directed[{a, b}] > 1) return false;
        }
    }
    for (const auto& [edge, cnt] : directed) {
        auto it = directed.find({edge.second, edge.first});
        if (it == directed.end() || it->second != cnt) return false;
    }

    UnionFind uf(int(mesh.vertices.size()));
    for (const auto& f : mesh.faces) {
        uf.unite(f[0], f[1]);
        uf.unite(f[1], f[2]);
    }
    // Per-component Euler characteristic. Isolated vertices are ignored.
    std::map<int, std::array<int64_t, 3>> vef;  // root -> {V, E, F}
    std::vector<char> seen(mesh.vertices.size(), 0);
    for (const auto& f : mesh.faces) {
        int root = uf.find(f[0]);
        auto& c = vef[root];
        c[2] += 1;
        for (int idx : f) {
            if (!seen[idx]) {
                seen[idx] = 1;
                c[0] += 1;
            }
        }
    }
    for (const auto& [edge, cnt] : directed) {
        (void)cnt;
        if (edge.first < edge.second) vef[uf.find(edge.first)][1] += 1;
    }
    for (const auto& [root, c] : vef) {
        (void)root;
        if (c[0] - c[1] + c[2] != 2) return false;
    }
    return true;
}

std::vector<Vector3d> sample_mesh_surface(const TriMesh& mesh, int max_points) {
    std::vector<Vector3d> samples;
    if (mesh.faces.empty() || max_points <= 0) return samples;

    int n_faces = int(mesh.faces.size());
    int n_centroids = std::min(n_faces, max_points);
    samples.reserve(size_t(max_points));
    for (int i = 0; i < n_centroids; ++i) {
        const auto& f = mesh.faces[i];
        samples.push_back((mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0);
    }
    int extra_budget = max_points - n_centroids;
    if (extra_budget <= 0) return samples;

    double total_area = mesh.surface_area();
    if (total_area <= 0) return samples;

    // Low-discrepancy barycentric pattern, deterministic per (face, sample).
    auto frac = [](double x) { return x - std::floor(x); };
    for (int i = 0; i < n_faces && extra_budget > 0; ++i) {
        const auto& f = mesh.faces[i];
        const Vector3d& a = mesh.vertices[f[0]];
        const Vector3d& b = mesh.vertices[f[1]];
        const Vector3d& c = mesh.vertices[f[2]];
        double area = 0.5 * (b - a).cross(c - a).norm();
        int quota = int(std::floor(area / total_area * (max_points - n_centroids)));
        quota = std::min(quota, extra_budget);
        for (int k = 0; k < quota; ++k) {
            double r1 = frac((k + 1) * 0.7548776662466927 + i * 0.1127);
            double r2 = frac((k + 1) * 0.5698402909980532 + i * 0.2931);
            if (r1 + r2 > 1.0) {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            samples.push_back(a + r1 * (b - a) + r2 * (c - a));
        }
        extra_budget -= quota;
    }
    return samples;
}

}  // namespace dscene
