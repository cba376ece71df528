#pragma once

#include "common.hpp"
#include "quadrature.hpp"

#include <array>
#include <cmath>

namespace meeg
{

enum class ElementKind
{
    tetrahedron,
    hexahedron
};

inline const char* to_string(ElementKind kind)
{
    return kind == ElementKind::tetrahedron ? "tetrahedron" : "hexahedron";
}

inline constexpr std::size_t max_element_vertices = 8;
inline constexpr std::size_t max_element_faces = 6;
inline constexpr std::size_t max_face_vertices = 4;

inline constexpr std::size_t vertex_count(ElementKind kind)
{
    return kind == ElementKind::tetrahedron ? 4 : 8;
}

inline constexpr std::size_t face_count(ElementKind kind)
{
    return kind == ElementKind::tetrahedron ? 4 : 6;
}

inline constexpr std::size_t face_vertex_count(ElementKind kind)
{
    return kind == ElementKind::tetrahedron ? 3 : 4;
}

// Local face -> local vertices. Tet face i is opposite vertex i. Hex faces
// follow the Gmsh vertex numbering and are listed counter-clockwise seen
// from outside.
inline constexpr std::array<std::array<std::size_t, 4>, 4> tet_faces{{
    {1, 2, 3, 0}, {0, 3, 2, 0}, {0, 1, 3, 0}, {0, 2, 1, 0}}};

inline constexpr std::array<std::array<std::size_t, 4>, 6> hex_faces{{
    {0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {2, 3, 7, 6}, {0, 4, 7, 3}, {1, 2, 6, 5}}};

inline constexpr std::array<std::array<int, 3>, 8> hex_corners{{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};

inline constexpr std::array<std::array<std::size_t, 2>, 12> hex_edges{{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

inline std::span<const std::size_t> local_face(ElementKind kind, std::size_t face)
{
    if (kind == ElementKind::tetrahedron)
        return {tet_faces[face].data(), 3};
    return {hex_faces[face].data(), 4};
}

/// Shape function values at reference coordinates (P1 on the unit tet,
/// Q1 on the unit cube).
struct BasisValues
{
    std::array<double, max_element_vertices> value{};
    std::array<Vec3, max_element_vertices> grad{}; // reference gradients
};

inline BasisValues reference_basis(ElementKind kind, const Vec3& xi)
{
    BasisValues b;
    if (kind == ElementKind::tetrahedron)
    {
        b.value = {1.0 - xi[0] - xi[1] - xi[2], xi[0], xi[1], xi[2]};
        b.grad[0] = Vec3(-1, -1, -1);
        b.grad[1] = Vec3(1, 0, 0);
        b.grad[2] = Vec3(0, 1, 0);
        b.grad[3] = Vec3(0, 0, 1);
        return b;
    }
    for (std::size_t i = 0; i < 8; ++i)
    {
        std::array<double, 3> f{}, df{};
        for (int c = 0; c < 3; ++c)
        {
            bool hi = hex_corners[i][static_cast<std::size_t>(c)] == 1;
            f[static_cast<std::size_t>(c)] = hi ? xi[c] : 1.0 - xi[c];
            df[static_cast<std::size_t>(c)] = hi ? 1.0 : -1.0;
        }
        b.value[i] = f[0] * f[1] * f[2];
        b.grad[i] = Vec3(df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]);
    }
    return b;
}

inline Vec3 reference_center(ElementKind kind)
{
    return kind == ElementKind::tetrahedron ? Vec3(0.25, 0.25, 0.25) : Vec3(0.5, 0.5, 0.5);
}

/// Geometry of one element: the affine (tet) or trilinear (hex) reference map.
class ElementGeometry
{
public:
    ElementGeometry(ElementKind kind, std::span<const Vec3> corners) : m_kind(kind), m_n(corners.size())
    {
        for (std::size_t i = 0; i < m_n; ++i)
            m_corners[i] = corners[i];
    }

    ElementKind kind() const noexcept { return m_kind; }
    std::size_t size() const noexcept { return m_n; }
    const Vec3& corner(std::size_t i) const { return m_corners[i]; }

    Vec3 global(const Vec3& xi) const
    {
        auto b = reference_basis(m_kind, xi);
        Vec3 x = Vec3::Zero();
        for (std::size_t i = 0; i < m_n; ++i)
            x += b.value[i] * m_corners[i];
        return x;
    }

    /// J(a, b) = d x_a / d xi_b
    Mat3 jacobian(const Vec3& xi) const
    {
        auto b = reference_basis(m_kind, xi);
        Mat3 j = Mat3::Zero();
        for (std::size_t i = 0; i < m_n; ++i)
            j += m_corners[i] * b.grad[i].transpose();
        return j;
    }

    Vec3 center() const
    {
        Vec3 c = Vec3::Zero();
        for (std::size_t i = 0; i < m_n; ++i)
            c += m_corners[i];
        return c / static_cast<double>(m_n);
    }

    double diameter() const
    {
        double d = 0.0;
        for (std::size_t i = 0; i < m_n; ++i)
            for (std::size_t j = i + 1; j < m_n; ++j)
                d = std::max(d, (m_corners[i] - m_corners[j]).norm());
        return d;
    }

    /// Physical gradients of all shape functions at reference point xi.
    /// Returns the Jacobian determinant.
    double gradients(const Vec3& xi, std::array<Vec3, max_element_vertices>& grads,
                     std::array<double, max_element_vertices>* values = nullptr) const
    {
        auto b = reference_basis(m_kind, xi);
        Mat3 j = Mat3::Zero();
        for (std::size_t i = 0; i < m_n; ++i)
            j += m_corners[i] * b.grad[i].transpose();
        double det = j.determinant();
        Mat3 jit = j.inverse().transpose();
        for (std::size_t i = 0; i < m_n; ++i)
            grads[i] = jit * b.grad[i];
        if (values)
            *values = b.value;
        return det;
    }

    /// Reference coordinates of a physical point. Exact for tets; Newton
    /// iteration on the trilinear map for hexes. Returns false if Newton
    /// does not converge.
    bool local(const Vec3& x, Vec3& xi) const
    {
        if (m_kind == ElementKind::tetrahedron)
        {
            Mat3 j;
            j.col(0) = m_corners[1] - m_corners[0];
            j.col(1) = m_corners[2] - m_corners[0];
            j.col(2) = m_corners[3] - m_corners[0];
            xi = j.partialPivLu().solve(x - m_corners[0]);
            return true;
        }
        xi = reference_center(m_kind);
        double scale = diameter();
        for (int iter = 0; iter < 50; ++iter)
        {
            Vec3 r = global(xi) - x;
            if (r.norm() <= 1e-14 * scale)
                return true;
            xi -= jacobian(xi).partialPivLu().solve(r);
        }
        return (global(xi) - x).norm() <= 1e-10 * scale;
    }

    double volume() const
    {
        if (m_kind == ElementKind::tetrahedron)
            return jacobian(Vec3::Zero()).determinant() / 6.0;
        double v = 0.0;
        for (const auto& q : hex_rule(2))
            v += q.weight * jacobian(q.local).determinant();
        return v;
    }

    /// Jacobian determinants at the element corners (one for tets).
    std::vector<double> corner_determinants() const
    {
        if (m_kind == ElementKind::tetrahedron)
            return {jacobian(Vec3::Zero()).determinant()};
        std::vector<double> out;
        for (const auto& c : hex_corners)
            out.push_back(jacobian(Vec3(c[0], c[1], c[2])).determinant());
        return out;
    }

private:
    ElementKind m_kind;
    std::size_t m_n;
    std::array<Vec3, max_element_vertices> m_corners;
};

} // namespace meeg
