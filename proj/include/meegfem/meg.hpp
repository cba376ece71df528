#pragma once

// Magnetic field of the volume currents: element-wise constant flux
// beta = P alpha, Biot-Savart sensor functionals S(y), and the MEG transfer
// matrix built from the pulled-back functionals P^t S(y).
//
// Units: mm, S/m, nA*mm. With these, mu0/4pi = 0.1 gives fields in fT.

#include "transfer.hpp"

namespace meeg
{

using FluxMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// beta_K = sigma_K sum_i alpha_i grad phi_i |_K, one row per element
/// (constant on tets, evaluated at the reference center on hexes).
struct FluxRepresentation
{
    FluxMatrix beta;

    double dot(const FluxMatrix& s) const { return (beta.array() * s.array()).sum(); }
};

namespace detail
{

template <typename F>
void for_each_center_gradient(const VolumeConductor& vc, F&& f)
{
    const Mesh& mesh = vc.mesh();
    const Vec3 xi = reference_center(mesh.kind());
    std::array<Vec3, max_element_vertices> grads;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
    {
        mesh.geometry(e).gradients(xi, grads);
        f(e, mesh.element(e), grads);
    }
}

} // namespace detail

inline FluxRepresentation project_flux(const VolumeConductor& vc, const Eigen::VectorXd& alpha)
{
    const Mesh& mesh = vc.mesh();
    if (static_cast<std::size_t>(alpha.size()) != mesh.num_vertices())
        throw std::invalid_argument("project_flux: coefficient vector has wrong length");
    FluxRepresentation flux;
    flux.beta.resize(static_cast<Eigen::Index>(mesh.num_elements()), 3);
    detail::for_each_center_gradient(vc,
                                      [&](std::size_t e, auto el, const auto& grads)
                                      {
                                          Vec3 g = Vec3::Zero();
                                          for (std::size_t i = 0; i < el.size(); ++i)
                                              g += alpha[static_cast<Eigen::Index>(el[i])] * grads[i];
                                          flux.beta.row(static_cast<Eigen::Index>(e)) =
                                              (vc.sigma(e) * g).transpose();
                                      });
    return flux;
}

struct SensorOptions
{
    int quadrature_order = 2;
    /// Order used for elements closer to the coil than two diameters.
    int near_quadrature_order = 6;
};

/// Row K holds s_K with s_K . e_c = -mu0/4pi o . int_K e_c x (y - x)/|y - x|^3,
/// so that <s, beta> is the field of the volume current -sigma grad u.
inline FluxMatrix assemble_sensor_functional(const VolumeConductor& vc, const ElementLocator& locator,
                                             const Coil& coil, const SensorOptions& options = {})
{
    const Mesh& mesh = vc.mesh();
    if (!coil.position.allFinite() || !coil.orientation.allFinite())
        throw GeometryError("coil position and orientation must be finite");
    if (locator.find(coil.position).found())
        throw GeometryError("coil at (" + std::to_string(coil.position[0]) + ", " + std::to_string(coil.position[1]) +
                            ", " + std::to_string(coil.position[2]) + ") lies inside or on the mesh");
    const Vec3& y = coil.position;
    const Vec3& o = coil.orientation;
    const bool tet = mesh.kind() == ElementKind::tetrahedron;
    FluxMatrix s(static_cast<Eigen::Index>(mesh.num_elements()), 3);
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
    {
        auto geo = mesh.geometry(e);
        const bool near = (geo.center() - y).norm() < 2.0 * geo.diameter();
        const int order = near ? std::max(options.quadrature_order, options.near_quadrature_order)
                               : options.quadrature_order;
        const auto& rule = tet ? tet_rule(order) : hex_rule(order);
        Vec3 acc = Vec3::Zero();
        for (const auto& q : rule)
        {
            Vec3 r = y - geo.global(q.local);
            double rn = r.norm();
            acc += q.weight * std::abs(geo.jacobian(q.local).determinant()) * r.cross(o) / (rn * rn * rn);
        }
        s.row(static_cast<Eigen::Index>(e)) = (-mu0_over_4pi * acc).transpose();
    }
    return s;
}

/// P^t s: the sensor functional as a vector over DOFs.
inline Eigen::VectorXd pull_back(const VolumeConductor& vc, const FluxMatrix& s)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vc.mesh().num_vertices()));
    detail::for_each_center_gradient(vc,
                                      [&](std::size_t e, auto el, const auto& grads)
                                      {
                                          Vec3 w = vc.sigma(e) * s.row(static_cast<Eigen::Index>(e)).transpose();
                                          for (std::size_t i = 0; i < el.size(); ++i)
                                              out[static_cast<Eigen::Index>(el[i])] += w.dot(grads[i]);
                                      });
    return out;
}

/// Secondary field <s_k, P alpha> for each sensor functional.
inline Eigen::VectorXd meg_secondary(const VolumeConductor& vc, const Eigen::VectorXd& alpha,
                                     std::span<const FluxMatrix> functionals)
{
    auto flux = project_flux(vc, alpha);
    Eigen::VectorXd out(static_cast<Eigen::Index>(functionals.size()));
    for (std::size_t k = 0; k < functionals.size(); ++k)
        out[static_cast<Eigen::Index>(k)] = flux.dot(functionals[k]);
    return out;
}

/// Field of the dipole itself in free space, mu0/4pi M x (y - x0)/|y - x0|^3,
/// along each coil orientation.
inline Eigen::VectorXd meg_primary(const Dipole& dipole, std::span<const Coil> coils)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(coils.size()));
    for (std::size_t k = 0; k < coils.size(); ++k)
    {
        Vec3 r = coils[k].position - dipole.position;
        double rn = r.norm();
        if (!(rn > 0.0))
            throw GeometryError("coil " + std::to_string(k) + " coincides with the dipole");
        out[static_cast<Eigen::Index>(k)] =
            mu0_over_4pi * coils[k].orientation.dot(dipole.moment.cross(r)) / (rn * rn * rn);
    }
    return out;
}

inline std::vector<FluxMatrix> assemble_sensor_functionals(const VolumeConductor& vc, const ElementLocator& locator,
                                                           std::span<const Coil> coils,
                                                           const SensorOptions& options = {}, unsigned workers = 1)
{
    std::vector<FluxMatrix> out(coils.size());
    parallel_for(coils.size(), workers,
                 [&](std::size_t k) { out[k] = assemble_sensor_functional(vc, locator, coils[k], options); });
    return out;
}

inline TransferMatrix compute_meg_transfer(const StiffnessSystem& system, const VolumeConductor& vc,
                                           const ElementLocator& locator, std::span<const Coil> coils,
                                           const TransferOptions& options = {}, const SensorOptions& sensor = {})
{
    if (system.conductor_checksum != vc.checksum())
        throw std::invalid_argument("stiffness system was assembled for a different volume conductor");
    // validate all coils before any solve
    for (std::size_t k = 0; k < coils.size(); ++k)
        if (locator.find(coils[k].position).found())
            throw GeometryError("coil " + std::to_string(k) + " lies inside or on the mesh");
    return compute_transfer(
        system, coils.size(),
        [&](std::size_t k) { return pull_back(vc, assemble_sensor_functional(vc, locator, coils[k], sensor)); },
        Modality::meg, options);
}

/// Secondary field via the MEG transfer matrix. The subtraction model's
/// correction potential lacks the singularity potential's volume currents,
/// which this path cannot add back, so it is rejected.
inline Eigen::VectorXd apply_meg_transfer(const TransferMatrix& t, const SourceModelOutput& output)
{
    if (t.modality != Modality::meg)
        throw ConfigError("modality mismatch: MEG query on a " + std::string(to_string(t.modality)) +
                          " transfer matrix");
    if (output.post)
        throw ConfigError("MEG is not supported with the subtraction source model");
    return transfer_product(t, output);
}

} // namespace meeg
