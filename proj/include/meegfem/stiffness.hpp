#pragma once

#include "conductivity.hpp"
#include "sparse.hpp"

namespace meeg
{

/// Assembled conforming-FEM system matrix. Degree of freedom i is mesh
/// vertex i; homogeneous Neumann conditions are natural (no surface term).
struct StiffnessSystem
{
    CsrMatrix matrix;
    std::uint64_t conductor_checksum = 0;

    std::size_t size() const noexcept { return matrix.rows(); }
};

/// Element matrix K_ab = int_K sigma grad(phi_a) . grad(phi_b). Only a <= b is
/// computed; the lower triangle is mirrored so K is exactly symmetric.
/// Hex elements use `hex_order` Gauss points per direction.
inline Eigen::Matrix<double, 8, 8> element_stiffness(const ElementGeometry& geo, const Mat3& sigma, int hex_order = 2)
{
    Eigen::Matrix<double, 8, 8> k = Eigen::Matrix<double, 8, 8>::Zero();
    const std::size_t n = geo.size();
    std::array<Vec3, max_element_vertices> grads;
    auto accumulate = [&](const Vec3& xi, double weight) {
        double det = geo.gradients(xi, grads);
        if (!(det > 0.0))
            throw NumericalError("degenerate element (non-positive Jacobian determinant)");
        for (std::size_t a = 0; a < n; ++a)
        {
            Vec3 sg = sigma * grads[a];
            for (std::size_t b = a; b < n; ++b)
                k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += weight * det * sg.dot(grads[b]);
        }
    };
    if (geo.kind() == ElementKind::tetrahedron)
        accumulate(reference_center(ElementKind::tetrahedron), 1.0 / 6.0);
    else
        for (const auto& q : hex_rule(hex_order))
            accumulate(q.local, q.weight);
    for (Eigen::Index a = 0; a < 8; ++a)
        for (Eigen::Index b = 0; b < a; ++b)
            k(a, b) = k(b, a);
    return k;
}

inline StiffnessSystem assemble_stiffness(const VolumeConductor& vc, int hex_order = 2)
{
    const Mesh& mesh = vc.mesh();
    const std::size_t n = mesh.num_vertices();

    std::vector<std::vector<std::size_t>> pattern(n);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
    {
        auto el = mesh.element(e);
        for (std::size_t a : el)
            pattern[a].insert(pattern[a].end(), el.begin(), el.end());
    }
    for (auto& r : pattern)
    {
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
    }

    StiffnessSystem sys{CsrMatrix(pattern), vc.checksum()};
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
    {
        Eigen::Matrix<double, 8, 8> k;
        try
        {
            k = element_stiffness(mesh.geometry(e), vc.sigma(e), hex_order);
        }
        catch (const NumericalError& err)
        {
            throw NumericalError("element " + std::to_string(e) + ": " + err.what());
        }
        auto el = mesh.element(e);
        for (std::size_t a = 0; a < el.size(); ++a)
            for (std::size_t b = a; b < el.size(); ++b)
            {
                double v = k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                sys.matrix.at(el[a], el[b]) += v;
                if (el[a] != el[b])
                    sys.matrix.at(el[b], el[a]) += v;
            }
    }
    return sys;
}

} // namespace meeg
