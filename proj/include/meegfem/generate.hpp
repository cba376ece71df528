#pragma once

// Programmatic meshes and sensor layouts: structured boxes, layered
// spheres, spiral sensor montages.

#include <meegfem/conductivity.hpp>
#include <meegfem/io.hpp>
#include <meegfem/mesh.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>

namespace meeg::generate
{

namespace detail
{

// Kuhn split of the unit cube into 6 tets sharing the main diagonal.
// Corner index = dx + 2*dy + 4*dz.
inline std::vector<std::array<int, 4>> kuhn_tets()
{
    std::vector<std::array<int, 4>> out;
    std::array<int, 3> perm{0, 1, 2};
    do
    {
        int c0 = 0;
        int c1 = c0 | (1 << perm[0]);
        int c2 = c1 | (1 << perm[1]);
        out.push_back({c0, c1, c2, 7});
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

inline double tet_volume6(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d)
{
    Mat3 m;
    m.col(0) = b - a;
    m.col(1) = c - a;
    m.col(2) = d - a;
    return m.determinant();
}

// Structured (2K)^3 or nx*ny*nz grid of cells with a vertex map; cells are
// emitted as hexes or split into tets.
template <typename VertexFn, typename LabelFn>
Mesh structured(ElementKind kind, std::array<int, 3> lo, std::array<int, 3> hi, VertexFn&& vertex_of,
                LabelFn&& label_of)
{
    const int nx = hi[0] - lo[0], ny = hi[1] - lo[1], nz = hi[2] - lo[2];
    auto vid = [&](int i, int j, int k) {
        return static_cast<std::size_t>((i - lo[0]) + (nx + 1) * ((j - lo[1]) + (ny + 1) * (k - lo[2])));
    };
    std::vector<Vec3> vertices(static_cast<std::size_t>((nx + 1) * (ny + 1) * (nz + 1)));
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i)
                vertices[vid(i, j, k)] = vertex_of(i, j, k);

    std::vector<std::size_t> conn;
    std::vector<int> labels;
    const auto tets = kuhn_tets();
    for (int k = lo[2]; k < hi[2]; ++k)
        for (int j = lo[1]; j < hi[1]; ++j)
            for (int i = lo[0]; i < hi[0]; ++i)
            {
                std::array<std::size_t, 8> corner; // bit order dx + 2dy + 4dz
                for (int c = 0; c < 8; ++c)
                    corner[static_cast<std::size_t>(c)] = vid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                int label = label_of(i, j, k);
                if (kind == ElementKind::hexahedron)
                {
                    // Gmsh order: (000)(100)(110)(010)(001)(101)(111)(011)
                    static constexpr std::array<int, 8> gm{0, 1, 3, 2, 4, 5, 7, 6};
                    for (int c : gm)
                        conn.push_back(corner[static_cast<std::size_t>(c)]);
                    labels.push_back(label);
                }
                else
                {
                    // mirror the split per octant so the shared diagonal points away
                    // from the grid origin; mirrored neighbours stay conforming
                    const int mirror = (i < 0 ? 1 : 0) | (j < 0 ? 2 : 0) | (k < 0 ? 4 : 0);
                    for (auto t : tets)
                    {
                        std::array<std::size_t, 4> v;
                        for (int c = 0; c < 4; ++c)
                            v[static_cast<std::size_t>(c)] = corner[static_cast<std::size_t>(t[static_cast<std::size_t>(c)] ^ mirror)];
                        if (tet_volume6(vertices[v[0]], vertices[v[1]], vertices[v[2]], vertices[v[3]]) < 0.0)
                            std::swap(v[1], v[2]);
                        conn.insert(conn.end(), v.begin(), v.end());
                        labels.push_back(label);
                    }
                }
            }
    return Mesh(kind, std::move(vertices), std::move(conn), std::move(labels));
}

} // namespace detail

/// Axis-aligned box [lo, hi] split into n[0] x n[1] x n[2] cells.
inline Mesh box_mesh(ElementKind kind, std::array<int, 3> n, const Vec3& lo, const Vec3& hi, int label = 1)
{
    Vec3 h = (hi - lo).cwiseQuotient(Vec3(n[0], n[1], n[2]));
    return detail::structured(
        kind, {0, 0, 0}, n, [&](int i, int j, int k) { return Vec3(lo + h.cwiseProduct(Vec3(i, j, k))); },
        [&](int, int, int) { return label; });
}

/// Concentric layered ball. Shell s spans (radii[s-1], radii[s]] and is
/// resolved by `levels[s]` radial cell layers (radii[-1] = 0). The grid is
/// a (2K)^3 cube whose inf-norm shells are mapped to spheres, blending
/// from the cube at the center to exact spheres at the first interface.
struct SphereMeshSpec
{
    std::vector<double> radii{78.0, 86.0, 92.0};
    std::vector<int> levels{6, 2, 1};
    std::vector<int> labels{1, 2, 3};
    ElementKind kind = ElementKind::tetrahedron;

    /// Same geometry with every radial and tangential resolution doubled.
    SphereMeshSpec refined() const
    {
        SphereMeshSpec s = *this;
        for (int& l : s.levels)
            l *= 2;
        return s;
    }

    int total_levels() const
    {
        int k = 0;
        for (int l : levels)
            k += l;
        return k;
    }
};

inline Mesh sphere_mesh(const SphereMeshSpec& spec)
{
    const int k_total = spec.total_levels();
    std::vector<double> rho{0.0};
    std::vector<int> shell_of_level{0};
    double r0 = 0.0;
    for (std::size_t s = 0; s < spec.radii.size(); ++s)
    {
        for (int l = 1; l <= spec.levels[s]; ++l)
        {
            rho.push_back(r0 + (spec.radii[s] - r0) * l / spec.levels[s]);
            shell_of_level.push_back(static_cast<int>(s));
        }
        r0 = spec.radii[s];
    }
    const int blend = spec.levels[0];

    auto vertex_of = [&](int i, int j, int k) {
        int t = std::max({std::abs(i), std::abs(j), std::abs(k)});
        if (t == 0)
            return Vec3(0, 0, 0);
        Vec3 q = Vec3(i, j, k) / t;
        Vec3 u = q.normalized();
        double w = std::min(1.0, static_cast<double>(t) / blend);
        return Vec3(rho[static_cast<std::size_t>(t)] * ((1.0 - w) * q + w * u));
    };
    auto label_of = [&](int i, int j, int k) {
        // cell spans inf-norm levels [t-1, t]
        int t = std::max({std::abs(2 * i + 1), std::abs(2 * j + 1), std::abs(2 * k + 1)});
        t = (t + 1) / 2;
        return spec.labels[static_cast<std::size_t>(shell_of_level[static_cast<std::size_t>(t)])];
    };
    return detail::structured(spec.kind, {-k_total, -k_total, -k_total}, {k_total, k_total, k_total}, vertex_of,
                              label_of);
}

inline VolumeConductor with_conductivities(Mesh mesh, const std::map<int, double>& sigma)
{
    std::map<int, ConductivityTensor> table;
    for (auto [label, s] : sigma)
        table.emplace(label, ConductivityTensor::isotropic(s));
    return VolumeConductor::from_labels(std::move(mesh), table);
}

/// Quasi-uniform points on a sphere (golden-angle spiral).
inline std::vector<Vec3> fibonacci_sphere(std::size_t n, double radius, const Vec3& center = Vec3::Zero())
{
    std::vector<Vec3> out;
    const double golden = pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i)
    {
        double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        double r = std::sqrt(1.0 - z * z);
        double phi = golden * static_cast<double>(i);
        out.push_back(center + radius * Vec3(r * std::cos(phi), r * std::sin(phi), z));
    }
    return out;
}

/// Unit vector orthogonal to v.
inline Vec3 any_orthogonal(const Vec3& v)
{
    Vec3 a = std::abs(v[0]) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    return v.cross(a).normalized();
}

inline Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    Vec3 v;
    do
        v = Vec3(g(rng), g(rng), g(rng));
    while (v.norm() < 1e-6);
    return v.normalized();
}

} // namespace meeg::generate
