#pragma once

// Dipole source models: each turns a current dipole into a right-hand side
// for the FEM system, optionally with a post-processing step applied to
// potentials evaluated from the solution.

#include "conductivity.hpp"
#include "io.hpp"
#include "kdtree.hpp"
#include "locator.hpp"
#include "sparse.hpp"

#include <optional>
#include <variant>

namespace meeg
{

enum class SourceModelKind
{
    partial_integration,
    venant,
    subtraction
};

inline SourceModelKind parse_source_model(const std::string& s)
{
    if (s == "partial_integration")
        return SourceModelKind::partial_integration;
    if (s == "venant")
        return SourceModelKind::venant;
    if (s == "subtraction")
        return SourceModelKind::subtraction;
    throw ConfigError("unknown source model '" + s + "' (expected partial_integration, venant or subtraction)");
}

inline const char* to_string(SourceModelKind k)
{
    switch (k)
    {
    case SourceModelKind::partial_integration: return "partial_integration";
    case SourceModelKind::venant: return "venant";
    case SourceModelKind::subtraction: return "subtraction";
    }
    return "?";
}

struct VenantOptions
{
    double reference_length = 20.0; // mm
    double regularization = 1e-6;
    /// Restrict q to sum(q) = 0 so the loads are exactly compatible with the
    /// pure Neumann problem (the unconstrained minimizer leaks O(lambda)).
    bool exact_zero_sum = true;
};

struct SubtractionOptions
{
    int quadrature_order = 2;
    /// Remove the (quadrature-sized) constant component so the right-hand
    /// side satisfies the solver's compatibility condition.
    bool project_compatible = true;
};

struct SourceModelConfig
{
    SourceModelKind kind = SourceModelKind::partial_integration;
    VenantOptions venant;
    SubtractionOptions subtraction;
};

/// Infinite-medium potential of the dipole in conductivity sigma_inf,
/// added back to the correction potential of the subtraction approach.
struct SingularityPotential
{
    Dipole dipole;
    double sigma_infinity;

    double value(const Vec3& x) const
    {
        Vec3 d = x - dipole.position;
        double r = d.norm();
        if (!(r > 0.0))
            throw GeometryError("singularity potential evaluated at the dipole position");
        return dipole.moment.dot(d) / (4.0 * pi * sigma_infinity * r * r * r);
    }

    Vec3 gradient(const Vec3& x) const
    {
        Vec3 d = x - dipole.position;
        double r2 = d.squaredNorm();
        double r = std::sqrt(r2);
        const Vec3& m = dipole.moment;
        return (m / (r2 * r) - 3.0 * m.dot(d) * d / (r2 * r2 * r)) / (4.0 * pi * sigma_infinity);
    }
};

struct SourceModelOutput
{
    std::variant<SparseVector, Eigen::VectorXd> rhs;
    std::optional<SingularityPotential> post; // none, or add-singularity

    bool is_sparse() const noexcept { return std::holds_alternative<SparseVector>(rhs); }
    const SparseVector& sparse() const { return std::get<SparseVector>(rhs); }
    const Eigen::VectorXd& dense() const { return std::get<Eigen::VectorXd>(rhs); }

    Eigen::VectorXd to_dense(std::size_t n) const
    {
        return is_sparse() ? sparse().dense(n) : dense();
    }

    double sum() const { return is_sparse() ? sparse().sum() : dense().sum(); }
};

/// Per-conductor data shared by all bound source models: the element
/// locator, a vertex k-d tree and the vertex adjacency.
class SourceContext
{
public:
    SourceContext(const VolumeConductor& vc, const ElementLocator& locator)
        : m_vc(&vc), m_locator(&locator), m_vertices(vc.mesh().vertices()), m_adjacency(vc.mesh())
    {}

    const VolumeConductor& conductor() const noexcept { return *m_vc; }
    const ElementLocator& locator() const noexcept { return *m_locator; }
    const KdTree& vertex_tree() const noexcept { return m_vertices; }
    const VertexAdjacency& adjacency() const noexcept { return m_adjacency; }

private:
    const VolumeConductor* m_vc;
    const ElementLocator* m_locator;
    KdTree m_vertices;
    VertexAdjacency m_adjacency;
};

class BoundSourceModel
{
public:
    BoundSourceModel(const SourceModelConfig& config, const SourceContext& ctx, const Dipole& dipole,
                     std::size_t element)
        : m_config(config), m_ctx(&ctx), m_dipole(dipole), m_element(element)
    {}

    const SourceModelConfig& config() const noexcept { return m_config; }
    const SourceContext& context() const noexcept { return *m_ctx; }
    const Dipole& dipole() const noexcept { return m_dipole; }
    std::size_t element() const noexcept { return m_element; }

    SourceModelOutput assemble() const;

private:
    SourceModelConfig m_config;
    const SourceContext* m_ctx;
    Dipole m_dipole;
    std::size_t m_element;
};

/// Resolves the dipole element; model-specific data is prepared lazily by
/// the assembly functions.
inline BoundSourceModel bind(const SourceModelConfig& config, const SourceContext& ctx, const Dipole& dipole)
{
    if (!dipole.position.allFinite() || !dipole.moment.allFinite())
        throw GeometryError("dipole position and moment must be finite");
    auto r = ctx.locator().find(dipole.position);
    if (!r.found())
        throw GeometryError("dipole at (" + std::to_string(dipole.position[0]) + ", " +
                            std::to_string(dipole.position[1]) + ", " + std::to_string(dipole.position[2]) +
                            ") is outside-domain");
    if (config.kind == SourceModelKind::subtraction && !ctx.conductor().tensor(r.element).is_isotropic())
        throw ConfigError("subtraction source model requires an isotropic conductivity in the dipole element");
    return BoundSourceModel(config, ctx, dipole, r.element);
}

/// b_i = M . grad phi_i(x_dp) on the dipole element's vertices.
inline SourceModelOutput assemble_rhs_partial_integration(const BoundSourceModel& bound)
{
    const Mesh& mesh = bound.context().conductor().mesh();
    const Dipole& dp = bound.dipole();
    SourceModelOutput out{SparseVector{}, std::nullopt};
    if (dp.moment.isZero(0.0))
        return out;
    auto geo = mesh.geometry(bound.element());
    Vec3 xi;
    if (!geo.local(dp.position, xi))
        throw NumericalError("cannot compute local coordinates of the dipole");
    std::array<Vec3, max_element_vertices> grads;
    geo.gradients(xi, grads);
    auto el = mesh.element(bound.element());
    std::vector<std::pair<std::size_t, double>> pairs;
    for (std::size_t i = 0; i < el.size(); ++i)
        pairs.emplace_back(el[i], dp.moment.dot(grads[i]));
    out.rhs = SparseVector::from_pairs(std::move(pairs));
    return out;
}

/// Monopole loads reproducing the dipole moment on a set of vertices:
/// q minimizes ||X q - t||^2 + lambda ||q||^2 where per Cartesian direction
/// c the rows of X hold the scaled moments 1, d_c, d_c^2 (d = (vertex -
/// x_dp) / reference_length) and t = (0, M_c / reference_length, 0).
/// With exact_zero_sum the minimization runs over {q : sum(q) = 0}, i.e.
/// q = P X^T (X P X^T + lambda I)^-1 t with P the centering projector.
inline std::vector<double> venant_loads(std::span<const Vec3> vertices, const Vec3& position, const Vec3& moment,
                                        const VenantOptions& options = {})
{
    const auto k = static_cast<Eigen::Index>(vertices.size());
    Eigen::MatrixXd x(9, k);
    Eigen::VectorXd t = Eigen::VectorXd::Zero(9);
    for (Eigen::Index j = 0; j < k; ++j)
    {
        Vec3 d = (vertices[static_cast<std::size_t>(j)] - position) / options.reference_length;
        for (int c = 0; c < 3; ++c)
        {
            x(3 * c, j) = 1.0;
            x(3 * c + 1, j) = d[c];
            x(3 * c + 2, j) = d[c] * d[c];
        }
    }
    for (int c = 0; c < 3; ++c)
        t[3 * c + 1] = moment[c] / options.reference_length;
    if (options.exact_zero_sum)
        x.colwise() -= x.rowwise().mean();
    Eigen::MatrixXd gram = x * x.transpose();
    gram.diagonal().array() += options.regularization;
    Eigen::VectorXd q = x.transpose() * gram.ldlt().solve(t);
    if (options.exact_zero_sum)
        q.array() -= q.mean();
    return {q.data(), q.data() + q.size()};
}

/// Venant loads on the one-ring of the vertex nearest to the dipole.
inline SourceModelOutput assemble_rhs_venant(const BoundSourceModel& bound)
{
    const auto& ctx = bound.context();
    const Mesh& mesh = ctx.conductor().mesh();
    const Dipole& dp = bound.dipole();
    SourceModelOutput out{SparseVector{}, std::nullopt};
    if (dp.moment.isZero(0.0))
        return out;
    std::size_t nearest = ctx.vertex_tree().nearest(dp.position);
    std::vector<std::size_t> ring(ctx.adjacency()[nearest].begin(), ctx.adjacency()[nearest].end());
    ring.push_back(nearest);
    std::sort(ring.begin(), ring.end());
    std::vector<Vec3> pos;
    for (auto v : ring)
        pos.push_back(mesh.vertex(v));
    auto q = venant_loads(pos, dp.position, dp.moment, bound.config().venant);
    SparseVector b;
    b.index = ring;
    b.value = q;
    out.rhs = std::move(b);
    return out;
}

/// Right-hand side of the correction potential u - u_inf:
///   b_i = -int_Omega (sigma - sigma_inf I) grad u_inf . grad phi_i
///         -int_dOmega sigma_inf (grad u_inf . n) phi_i
/// Elements with sigma == sigma_inf I are skipped.
inline SourceModelOutput assemble_rhs_subtraction(const BoundSourceModel& bound)
{
    const auto& vc = bound.context().conductor();
    const Mesh& mesh = vc.mesh();
    const Dipole& dp = bound.dipole();
    const int order = bound.config().subtraction.quadrature_order;
    const double sigma_inf = vc.tensor(bound.element()).upper()[0];
    SingularityPotential u_inf{dp, sigma_inf};

    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.num_vertices()));
    SourceModelOutput out{b, u_inf};
    if (dp.moment.isZero(0.0))
        return out;

    const Mat3 sigma_inf_mat = sigma_inf * Mat3::Identity();
    const auto& rule = mesh.kind() == ElementKind::tetrahedron ? tet_rule(order) : hex_rule(order);
    std::array<Vec3, max_element_vertices> grads;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
    {
        Mat3 diff = vc.sigma(e) - sigma_inf_mat;
        if (diff.isZero(0.0))
            continue;
        auto geo = mesh.geometry(e);
        auto el = mesh.element(e);
        for (const auto& q : rule)
        {
            double det = geo.gradients(q.local, grads);
            Vec3 flux = diff * u_inf.gradient(geo.global(q.local));
            for (std::size_t i = 0; i < el.size(); ++i)
                b[static_cast<Eigen::Index>(el[i])] -= q.weight * det * flux.dot(grads[i]);
        }
    }

    const bool tri = mesh.kind() == ElementKind::tetrahedron;
    const auto& face_rule = tri ? triangle_rule(order) : quad_rule(order);
    for (const auto& bf : mesh.boundary_faces())
    {
        auto fv = mesh.face_vertices(bf.element, bf.face);
        const Vec3& v0 = mesh.vertex(fv[0]);
        const Vec3& v1 = mesh.vertex(fv[1]);
        const Vec3& v2 = mesh.vertex(fv[2]);
        const Vec3 inward = mesh.element_center(bf.element) - v0;
        for (const auto& q : face_rule)
        {
            const double s = q.local[0], t = q.local[1];
            Vec3 x, ds, dt;
            std::array<double, 4> psi{};
            if (tri)
            {
                x = v0 + s * (v1 - v0) + t * (v2 - v0);
                ds = v1 - v0;
                dt = v2 - v0;
                psi = {1.0 - s - t, s, t, 0.0};
            }
            else
            {
                const Vec3& v3 = mesh.vertex(fv[3]);
                psi = {(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t};
                x = psi[0] * v0 + psi[1] * v1 + psi[2] * v2 + psi[3] * v3;
                ds = (1 - t) * (v1 - v0) + t * (v2 - v3);
                dt = (1 - s) * (v3 - v0) + s * (v2 - v1);
            }
            Vec3 area_normal = ds.cross(dt); // |.| = surface element
            if (area_normal.dot(inward) > 0.0)
                area_normal = -area_normal;
            double g = sigma_inf * u_inf.gradient(x).dot(area_normal);
            for (std::size_t k = 0; k < (tri ? 3u : 4u); ++k)
                b[static_cast<Eigen::Index>(fv[k])] -= q.weight * g * psi[k];
        }
    }
    if (bound.config().subtraction.project_compatible)
        b.array() -= b.mean();
    out.rhs = std::move(b);
    return out;
}

inline SourceModelOutput BoundSourceModel::assemble() const
{
    switch (m_config.kind)
    {
    case SourceModelKind::partial_integration: return assemble_rhs_partial_integration(*this);
    case SourceModelKind::venant: return assemble_rhs_venant(*this);
    case SourceModelKind::subtraction: return assemble_rhs_subtraction(*this);
    }
    throw std::logic_error("unknown source model");
}

/// Applies the model's post-processing to potentials sampled at `points`.
inline Eigen::VectorXd post_process(const SourceModelOutput& output, const Eigen::VectorXd& values,
                                    std::span<const Vec3> points)
{
    if (static_cast<std::size_t>(values.size()) != points.size())
        throw std::invalid_argument("post_process: values and points differ in length");
    Eigen::VectorXd out = values;
    if (output.post)
        for (std::size_t k = 0; k < points.size(); ++k)
            out[static_cast<Eigen::Index>(k)] += output.post->value(points[k]);
    return out;
}

} // namespace meeg
