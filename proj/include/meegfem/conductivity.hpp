#pragma once

#include "common.hpp"
#include "mesh.hpp"

#include <map>
#include <memory>
#include <sstream>

namespace meeg
{

/// Symmetric conductivity tensor (S/m), stored as the upper triangle
/// (xx, xy, xz, yy, yz, zz). Positive definite by construction.
class ConductivityTensor
{
public:
    static ConductivityTensor isotropic(double sigma) { return ConductivityTensor({sigma, 0, 0, sigma, 0, sigma}); }

    explicit ConductivityTensor(std::array<double, 6> upper) : m_upper(upper)
    {
        Eigen::SelfAdjointEigenSolver<Mat3> es(matrix(), Eigen::EigenvaluesOnly);
        if (!(es.eigenvalues().minCoeff() > 0.0))
        {
            std::ostringstream os;
            os << "conductivity tensor is not positive definite (eigenvalues " << es.eigenvalues().transpose() << ")";
            throw ConfigError(os.str());
        }
    }

    const std::array<double, 6>& upper() const noexcept { return m_upper; }

    Mat3 matrix() const
    {
        Mat3 m;
        m << m_upper[0], m_upper[1], m_upper[2], //
            m_upper[1], m_upper[3], m_upper[4],  //
            m_upper[2], m_upper[4], m_upper[5];
        return m;
    }

    bool is_isotropic() const noexcept
    {
        return m_upper[1] == 0.0 && m_upper[2] == 0.0 && m_upper[4] == 0.0 && m_upper[0] == m_upper[3] &&
               m_upper[0] == m_upper[5];
    }

    friend bool operator==(const ConductivityTensor&, const ConductivityTensor&) = default;

private:
    std::array<double, 6> m_upper;
};

/// The mesh together with one conductivity tensor per element.
class VolumeConductor
{
public:
    VolumeConductor(Mesh mesh, std::vector<ConductivityTensor> tensors)
        : m_mesh(std::make_shared<const Mesh>(std::move(mesh))), m_tensors(std::move(tensors))
    {
        if (m_tensors.size() != m_mesh->num_elements())
            throw ConfigError("expected one conductivity tensor per element (" +
                              std::to_string(m_mesh->num_elements()) + "), got " + std::to_string(m_tensors.size()));
        m_matrices.reserve(m_tensors.size());
        for (const auto& t : m_tensors)
            m_matrices.push_back(t.matrix());
    }

    /// Binds tensors by tissue label. Every label present in the mesh needs a binding.
    static VolumeConductor from_labels(Mesh mesh, const std::map<int, ConductivityTensor>& by_label)
    {
        std::vector<ConductivityTensor> tensors;
        tensors.reserve(mesh.num_elements());
        for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        {
            auto it = by_label.find(mesh.label(e));
            if (it == by_label.end())
                throw ConfigError("no conductivity bound to tissue label " + std::to_string(mesh.label(e)));
            tensors.push_back(it->second);
        }
        return VolumeConductor(std::move(mesh), std::move(tensors));
    }

    const Mesh& mesh() const noexcept { return *m_mesh; }
    const ConductivityTensor& tensor(std::size_t e) const { return m_tensors[e]; }
    const Mat3& sigma(std::size_t e) const { return m_matrices[e]; }
    const std::vector<ConductivityTensor>& tensors() const noexcept { return m_tensors; }

    std::uint64_t checksum() const
    {
        Fnv1a h;
        h.add(m_mesh->checksum());
        for (const auto& t : m_tensors)
            h.add_bytes(t.upper().data(), 6 * sizeof(double));
        return h.value();
    }

private:
    std::shared_ptr<const Mesh> m_mesh;
    std::vector<ConductivityTensor> m_tensors;
    std::vector<Mat3> m_matrices;
};

} // namespace meeg
