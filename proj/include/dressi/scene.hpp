#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dressi/image.hpp"

namespace dressi {

struct MeshBuffers {
    ImageBuffer positions;  // Vec3, one vertex per pixel, row-major
    ImageBuffer uvs;        // Vec2
    ImageBuffer faces;      // IVec3, one face per pixel
    bool uvs_missing = false;

    int vertex_count() const { return int(positions.pixel_count()); }
    int face_count() const { return int(faces.pixel_count()); }
};

// ---- matrices (row-major mat4 in a 1x1 image) ----

using Mat4 = std::array<double, 16>;

inline ImageBuffer mat4_image(const Mat4& m) {
    ImageBuffer img(VType::Mat4, {1, 1});
    for (int i = 0; i < 16; ++i) img.put(i, m[i]);
    return img;
}

inline Mat4 mat4_identity() {
    Mat4 m{};
    m[0] = m[5] = m[10] = m[15] = 1.0;
    return m;
}

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
    Mat4 r{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 4 + j];
            r[i * 4 + j] = s;
        }
    return r;
}

// Perspective projection, ndc z in [-1,1]; y is negated so +y in world space
// points up in the (top-left origin) image.
inline Mat4 make_perspective(double fovy_deg, double aspect, double z_near, double z_far) {
    const double f = 1.0 / std::tan(fovy_deg * M_PI / 360.0);
    Mat4 m{};
    m[0] = f / aspect;
    m[5] = -f;
    m[10] = (z_far + z_near) / (z_near - z_far);
    m[11] = 2.0 * z_far * z_near / (z_near - z_far);
    m[14] = -1.0;
    return m;
}

inline Mat4 make_look_at(const std::array<double, 3>& eye, const std::array<double, 3>& center,
                         const std::array<double, 3>& up) {
    auto sub = [](auto a, auto b) {
        return std::array<double, 3>{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
    };
    auto cross = [](auto a, auto b) {
        return std::array<double, 3>{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                                     a[0] * b[1] - a[1] * b[0]};
    };
    auto norm = [](std::array<double, 3> v) {
        const double l = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        return std::array<double, 3>{v[0] / l, v[1] / l, v[2] / l};
    };
    auto dot = [](auto a, auto b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; };

    const auto fwd = norm(sub(center, eye));
    const auto side = norm(cross(fwd, up));
    const auto upn = cross(side, fwd);
    Mat4 m = mat4_identity();
    for (int i = 0; i < 3; ++i) {
        m[0 * 4 + i] = side[i];
        m[1 * 4 + i] = upn[i];
        m[2 * 4 + i] = -fwd[i];
    }
    m[3] = -dot(side, eye);
    m[7] = -dot(upn, eye);
    m[11] = dot(fwd, eye);
    return m;
}

// ---- procedural assets ----

inline MeshBuffers make_quad() {
    MeshBuffers m;
    m.positions = ImageBuffer(VType::Vec3, {4, 1});
    m.uvs = ImageBuffer(VType::Vec2, {4, 1});
    m.faces = ImageBuffer(VType::IVec3, {2, 1});
    const double p[4][3] = {{-1, -1, 0}, {1, -1, 0}, {1, 1, 0}, {-1, 1, 0}};
    const double t[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < 3; ++c) m.positions.set(i, 0, c, p[i][c]);
        for (int c = 0; c < 2; ++c) m.uvs.set(i, 0, c, t[i][c]);
    }
    const int f[2][3] = {{0, 1, 2}, {0, 2, 3}};
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 3; ++c) m.faces.set(i, 0, c, f[i][c]);
    return m;
}

inline MeshBuffers make_icosphere(int subdivisions, double radius = 1.0) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<std::array<double, 3>> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
        {5, 11, 4}, {11, 10, 2}, {10, 7, 6},  {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
        {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
        {8, 6, 7},  {9, 8, 1}};

    auto normalize = [&](std::array<double, 3> v) {
        const double l = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        return std::array<double, 3>{v[0] / l, v[1] / l, v[2] / l};
    };
    for (auto& v : verts) v = normalize(v);

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            std::array<double, 3> m = {(verts[a][0] + verts[b][0]) / 2,
                                       (verts[a][1] + verts[b][1]) / 2,
                                       (verts[a][2] + verts[b][2]) / 2};
            verts.push_back(normalize(m));
            midpoint[key] = int(verts.size()) - 1;
            return int(verts.size()) - 1;
        };
        std::vector<std::array<int, 3>> next;
        for (auto& f : faces) {
            const int a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
            next.push_back({f[0], a, c});
            next.push_back({f[1], b, a});
            next.push_back({f[2], c, b});
            next.push_back({a, b, c});
        }
        faces = std::move(next);
    }

    MeshBuffers m;
    m.positions = ImageBuffer(VType::Vec3, {int(verts.size()), 1});
    m.uvs = ImageBuffer(VType::Vec2, {int(verts.size()), 1});
    m.faces = ImageBuffer(VType::IVec3, {int(faces.size()), 1});
    for (size_t i = 0; i < verts.size(); ++i) {
        for (int c = 0; c < 3; ++c) m.positions.set(int(i), 0, c, verts[i][c] * radius);
        const double u = std::atan2(verts[i][2], verts[i][0]) / (2 * M_PI) + 0.5;
        const double v = std::acos(std::clamp(verts[i][1], -1.0, 1.0)) / M_PI;
        m.uvs.set(int(i), 0, 0, u);
        m.uvs.set(int(i), 0, 1, v);
    }
    for (size_t i = 0; i < faces.size(); ++i)
        for (int c = 0; c < 3; ++c) m.faces.set(int(i), 0, c, faces[i][c]);
    return m;
}

inline ImageBuffer make_checkerboard(int size, int cells,
                                     std::array<double, 3> a = {0.9, 0.9, 0.9},
                                     std::array<double, 3> b = {0.1, 0.1, 0.4}) {
    ImageBuffer img(VType::Vec3, {size, size});
    const int cell = std::max(1, size / cells);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool odd = ((x / cell) + (y / cell)) & 1;
            for (int c = 0; c < 3; ++c) img.set(x, y, c, odd ? b[c] : a[c]);
        }
    return img;
}

// ---- minimal triangle-mesh text format (OBJ subset: v / vt / f) ----

inline MeshBuffers load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_mesh: cannot open " + path);
    std::vector<std::array<double, 3>> vs;
    std::vector<std::array<double, 2>> ts;
    std::vector<std::array<int, 3>> fs;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            std::array<double, 3> v{};
            ss >> v[0] >> v[1] >> v[2];
            vs.push_back(v);
        } else if (tag == "vt") {
            std::array<double, 2> t{};
            ss >> t[0] >> t[1];
            ts.push_back(t);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ss >> tok) {
                // accept "i", "i/t", "i/t/n"
                idx.push_back(std::atoi(tok.c_str()));
            }
            if (idx.size() != 3)
                throw std::runtime_error("load_mesh: non-triangle face in " + path);
            for (int k : idx)
                if (k < 1 || size_t(k) > vs.size() + 1000000)
                    throw std::runtime_error("load_mesh: face index out of range");
            fs.push_back({idx[0] - 1, idx[1] - 1, idx[2] - 1});
        }
    }
    if (vs.empty() || fs.empty()) throw std::runtime_error("load_mesh: empty mesh in " + path);
    for (auto& f : fs)
        for (int k : f)
            if (k < 0 || size_t(k) >= vs.size())
                throw std::runtime_error("load_mesh: face index out of range");

    MeshBuffers m;
    m.positions = ImageBuffer(VType::Vec3, {int(vs.size()), 1});
    m.uvs = ImageBuffer(VType::Vec2, {int(vs.size()), 1});
    m.faces = ImageBuffer(VType::IVec3, {int(fs.size()), 1});
    for (size_t i = 0; i < vs.size(); ++i)
        for (int c = 0; c < 3; ++c) m.positions.set(int(i), 0, c, vs[i][c]);
    if (ts.size() == vs.size()) {
        for (size_t i = 0; i < ts.size(); ++i)
            for (int c = 0; c < 2; ++c) m.uvs.set(int(i), 0, c, ts[i][c]);
    } else {
        m.uvs_missing = true;
        std::fprintf(stderr, "load_mesh: %s has no per-vertex uvs, using zeros\n", path.c_str());
    }
    for (size_t i = 0; i < fs.size(); ++i)
        for (int c = 0; c < 3; ++c) m.faces.set(int(i), 0, c, fs[i][c]);
    return m;
}

inline void save_mesh(const std::string& path, const MeshBuffers& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_mesh: cannot open " + path);
    out.precision(17);
    for (int i = 0; i < m.vertex_count(); ++i)
        out << "v " << m.positions.get(i, 0, 0) << " " << m.positions.get(i, 0, 1) << " "
            << m.positions.get(i, 0, 2) << "\n";
    for (int i = 0; i < m.vertex_count(); ++i)
        out << "vt " << m.uvs.get(i, 0, 0) << " " << m.uvs.get(i, 0, 1) << "\n";
    for (int i = 0; i < m.face_count(); ++i)
        out << "f " << m.faces.get_i(i, 0, 0) + 1 << " " << m.faces.get_i(i, 0, 1) + 1 << " "
            << m.faces.get_i(i, 0, 2) + 1 << "\n";
}

// Built-in asset specs: "builtin:quad", "builtin:icosphere:N", or a file path.
inline MeshBuffers resolve_mesh(const std::string& spec) {
    if (spec.rfind("builtin:", 0) == 0) {
        std::string rest = spec.substr(8);
        if (rest == "quad") return make_quad();
        if (rest.rfind("icosphere", 0) == 0) {
            int sub = 2;
            auto colon = rest.find(':');
            if (colon != std::string::npos) sub = std::atoi(rest.c_str() + colon + 1);
            return make_icosphere(sub);
        }
        throw std::invalid_argument("resolve_mesh: unknown builtin " + spec);
    }
    return load_mesh(spec);
}

}  // namespace dressi
