#pragma once

// Config-driven facade: loads the volume conductor, builds the locator, and
// runs direct solves, transfer computations, transfer application and scans.
// The stiffness matrix is assembled on first use and then shared.

#include "config.hpp"
#include "io.hpp"
#include "locator.hpp"
#include "meg.hpp"
#include "parallel.hpp"
#include "scan.hpp"
#include "solver.hpp"
#include "sources.hpp"
#include "stiffness.hpp"
#include "transfer.hpp"

#include <cassert>
#include <map>
#include <memory>
#include <set>

namespace meeg
{

inline const std::set<std::string>& known_config_keys()
{
    static const std::set<std::string> keys = {
        "type",
        "solver_type",
        "element_type",
        "volume_conductor.grid.filename",
        "volume_conductor.tensors.filename",
        "source_model.type",
        "source_model.venant.reference_length",
        "source_model.venant.regularization",
        "source_model.venant.exact_zero_sum",
        "source_model.subtraction.quadrature_order",
        "source_model.subtraction.project_compatible",
        "solver.tolerance",
        "solver.max_iterations",
        "solver.preconditioner",
        "solver.workers",
        "electrodes.max_distance",
        "meg.quadrature_order",
        "meg.near_quadrature_order",
        "meg.include_primary",
    };
    return keys;
}

/// Per-operation settings resolved from the config tree.
struct DriverSettings
{
    SourceModelConfig source_model;
    SolverOptions solver;
    unsigned workers = 1;
    RestrictionOptions electrodes;
    SensorOptions meg;
    bool meg_include_primary = true;
};

inline DriverSettings resolve_settings(const Config& c)
{
    DriverSettings s;
    s.source_model.kind = parse_source_model(c.get("source_model.type", "venant"));
    auto& v = s.source_model.venant;
    v.reference_length = c.get_double("source_model.venant.reference_length", v.reference_length);
    v.regularization = c.get_double("source_model.venant.regularization", v.regularization);
    v.exact_zero_sum = c.get_bool("source_model.venant.exact_zero_sum", v.exact_zero_sum);
    if (v.reference_length <= 0.0 || v.regularization < 0.0)
        throw ConfigError("source_model.venant: reference_length must be > 0 and regularization >= 0");
    auto& sub = s.source_model.subtraction;
    sub.quadrature_order = static_cast<int>(c.get_int("source_model.subtraction.quadrature_order", sub.quadrature_order));
    sub.project_compatible = c.get_bool("source_model.subtraction.project_compatible", sub.project_compatible);
    if (sub.quadrature_order < 1)
        throw ConfigError("source_model.subtraction.quadrature_order must be >= 1");

    s.solver.tolerance = c.get_double("solver.tolerance", s.solver.tolerance);
    if (!(s.solver.tolerance > 0.0 && s.solver.tolerance < 1.0))
        throw ConfigError("solver.tolerance must lie in (0, 1)");
    long it = c.get_int("solver.max_iterations", 0);
    if (it < 0)
        throw ConfigError("solver.max_iterations must be >= 0");
    s.solver.max_iterations = static_cast<std::size_t>(it);
    s.solver.preconditioner = parse_preconditioner(c.get("solver.preconditioner", "jacobi"));
    long w = c.get_int("solver.workers", 1);
    if (w < 0)
        throw ConfigError("solver.workers must be >= 0");
    s.workers = static_cast<unsigned>(w);

    s.electrodes.max_distance = c.get_double("electrodes.max_distance", s.electrodes.max_distance);
    s.meg.quadrature_order = static_cast<int>(c.get_int("meg.quadrature_order", s.meg.quadrature_order));
    s.meg.near_quadrature_order = static_cast<int>(c.get_int("meg.near_quadrature_order", s.meg.near_quadrature_order));
    if (s.meg.quadrature_order < 1 || s.meg.near_quadrature_order < 1)
        throw ConfigError("meg quadrature orders must be >= 1");
    s.meg_include_primary = c.get_bool("meg.include_primary", true);
    return s;
}

/// Rejects discretizations outside the fitted continuous Galerkin scheme.
inline void check_discretization(const Config& c)
{
    const std::string& type = c.required("type");
    if (type == "unfitted")
        throw ConfigError("type: unfitted not implemented, out of scope (CutFEM/UDG unfitted discretizations)");
    if (type != "fitted")
        throw ConfigError("unknown type '" + type + "' (expected fitted)");
    const std::string& solver = c.required("solver_type");
    if (solver == "dg")
        throw ConfigError("solver_type: dg not implemented, out of scope (discontinuous Galerkin FEM)");
    if (solver == "mixed")
        throw ConfigError("solver_type: mixed not implemented, out of scope (mixed FEM)");
    if (solver != "cg")
        throw ConfigError("solver_type '" + solver + "' not implemented (expected cg)");
}

inline ElementKind parse_element_type(const std::string& s)
{
    if (s == "tetrahedron")
        return ElementKind::tetrahedron;
    if (s == "hexahedron")
        return ElementKind::hexahedron;
    throw ConfigError("unknown element_type '" + s + "' (expected tetrahedron or hexahedron)");
}

/// Forward results with one row per dipole. Rows of failed dipoles are NaN.
struct ForwardResult
{
    enum class Failure
    {
        config,
        geometry,
        numerical
    };
    struct DipoleError
    {
        std::size_t index;
        Failure kind;
        std::string message;
    };

    RowMatrix values;
    std::vector<DipoleError> errors;

    bool ok() const noexcept { return errors.empty(); }

    /// The values; throws a single error listing every failed dipole.
    RowMatrix checked() const&
    {
        throw_if_failed();
        return values;
    }
    RowMatrix checked() &&
    {
        throw_if_failed();
        return std::move(values);
    }

    void throw_if_failed() const
    {
        if (errors.empty())
            return;
        std::ostringstream os;
        os << errors.size() << " dipole(s) failed:";
        Failure worst = Failure::geometry;
        for (const auto& e : errors)
        {
            os << "\n  dipole " << e.index << ": " << e.message;
            if (e.kind == Failure::config)
                worst = Failure::config;
            else if (e.kind == Failure::numerical && worst != Failure::config)
                worst = Failure::numerical;
        }
        if (worst == Failure::config)
            throw ConfigError(os.str());
        if (worst == Failure::numerical)
            throw NumericalError(os.str());
        throw GeometryError(os.str());
    }
};

class Driver
{
public:
    /// Loads `volume_conductor.grid.filename` and `volume_conductor.tensors.filename`.
    explicit Driver(const Config& config) : m_config(config)
    {
        check_config();
        Mesh mesh = load_mesh(config.required("volume_conductor.grid.filename"));
        auto table = read_conductivity_table(config.required("volume_conductor.tensors.filename"));
        init(VolumeConductor::from_labels(std::move(mesh), table));
    }

    /// In-memory mesh; the config's file keys are ignored.
    Driver(const Config& config, VolumeConductor conductor) : m_config(config)
    {
        check_config();
        init(std::move(conductor));
    }

    Driver(const Config& config, Mesh mesh, const std::map<int, ConductivityTensor>& by_label)
        : Driver(config, VolumeConductor::from_labels(std::move(mesh), by_label))
    {}

    Driver(const Driver&) = delete;
    Driver& operator=(const Driver&) = delete;

    const Config& config() const noexcept { return m_config; }
    const VolumeConductor& conductor() const noexcept { return *m_vc; }
    const Mesh& mesh() const noexcept { return m_vc->mesh(); }
    const ElementLocator& locator() const noexcept { return *m_locator; }
    const SourceContext& source_context() const noexcept { return *m_sources; }
    DriverSettings settings(const Config& overrides = {}) const { return resolve_settings(m_config.merged(overrides)); }

    bool stiffness_assembled() const noexcept { return m_stiffness != nullptr; }
    std::size_t assembly_count() const noexcept { return m_assemblies; }
    /// Transfer matrices actually computed (cache hits excluded).
    std::size_t transfer_count() const noexcept { return m_transfers; }

    const StiffnessSystem& stiffness()
    {
        if (!m_stiffness)
        {
            m_stiffness = std::make_unique<StiffnessSystem>(assemble_stiffness(*m_vc));
            ++m_assemblies;
        }
        return *m_stiffness;
    }

    const Restriction& restriction(std::span<const Vec3> electrodes, const Config& overrides = {}) const
    {
        return restriction_for(electrodes, settings(overrides));
    }

    /// Direct path per dipole: assemble, solve, restrict, post-process, center.
    ForwardResult solve_eeg(std::span<const Dipole> dipoles, std::span<const Vec3> electrodes,
                            const Config& overrides = {})
    {
        Guard guard(*m_vc);
        const auto s = settings(overrides);
        const Restriction& r = restriction_for(electrodes, s);
        const StiffnessSystem& system = stiffness();
        return per_dipole(dipoles, r.size(), s.workers,
                          [&](const Dipole& d)
                          {
                              auto out = bind(s.source_model, *m_sources, d).assemble();
                              Eigen::VectorXd u = solve_checked(system, out, s.solver);
                              return mean_centered(
                                  post_process(out, restrict_potential(r, u), r.electrodes.evaluation_points));
                          });
    }

    /// Direct path: secondary field from the flux of the FEM potential, plus
    /// the primary field when `meg.include_primary` is set.
    ForwardResult solve_meg(std::span<const Dipole> dipoles, std::span<const Coil> coils, const Config& overrides = {})
    {
        Guard guard(*m_vc);
        const auto s = settings(overrides);
        reject_meg_subtraction(s);
        const auto fluxes = assemble_sensor_functionals(*m_vc, *m_locator, coils, s.meg, s.workers);
        const StiffnessSystem& system = stiffness();
        return per_dipole(dipoles, coils.size(), s.workers,
                          [&](const Dipole& d)
                          {
                              auto out = bind(s.source_model, *m_sources, d).assemble();
                              Eigen::VectorXd u = solve_checked(system, out, s.solver);
                              Eigen::VectorXd b = meg_secondary(*m_vc, u, fluxes);
                              if (s.meg_include_primary)
                                  b += meg_primary(d, coils);
                              return b;
                          });
    }

    std::shared_ptr<const TransferMatrix> compute_eeg_transfer(std::span<const Vec3> electrodes,
                                                               const Config& overrides = {})
    {
        Guard guard(*m_vc);
        const auto s = settings(overrides);
        Fnv1a key;
        key.add(std::uint64_t{1});
        for (const auto& p : electrodes)
            key.add_bytes(p.data(), 3 * sizeof(double));
        key.add(s.electrodes.max_distance);
        return cached(key, s,
                      [&](const TransferOptions& opt)
                      {
                          const Restriction& r = restriction_for(electrodes, s);
                          return meeg::compute_eeg_transfer(stiffness(), r, opt);
                      });
    }

    std::shared_ptr<const TransferMatrix> compute_meg_transfer(std::span<const Coil> coils,
                                                               const Config& overrides = {})
    {
        Guard guard(*m_vc);
        const auto s = settings(overrides);
        Fnv1a key;
        key.add(std::uint64_t{2});
        for (const auto& c : coils)
        {
            key.add_bytes(c.position.data(), 3 * sizeof(double));
            key.add_bytes(c.orientation.data(), 3 * sizeof(double));
        }
        key.add(static_cast<std::uint64_t>(s.meg.quadrature_order));
        key.add(static_cast<std::uint64_t>(s.meg.near_quadrature_order));
        return cached(key, s,
                      [&](const TransferOptions& opt)
                      { return meeg::compute_meg_transfer(stiffness(), *m_vc, *m_locator, coils, opt, s.meg); });
    }

    /// Loads a transfer file, refusing one computed for another conductor.
    TransferMatrix load_transfer(const std::string& path) const { return meeg::load_transfer(path, m_vc->checksum()); }

    /// Lead fields through a transfer matrix. EEG needs the electrodes the
    /// matrix was computed for; MEG needs the coils for the primary field.
    ForwardResult apply_eeg_transfer(const TransferMatrix& t, std::span<const Dipole> dipoles,
                                     std::span<const Vec3> electrodes, const Config& overrides = {}) const
    {
        Guard guard(*m_vc);
        check_transfer(t, Modality::eeg);
        const auto s = settings(overrides);
        const Restriction& r = restriction_for(electrodes, s);
        return per_dipole(dipoles, t.sensors(), s.workers,
                          [&](const Dipole& d)
                          {
                              auto out = bind(s.source_model, *m_sources, d).assemble();
                              return meeg::apply_eeg_transfer(t, out, r.electrodes);
                          });
    }

    ForwardResult apply_meg_transfer(const TransferMatrix& t, std::span<const Dipole> dipoles,
                                     std::span<const Coil> coils, const Config& overrides = {}) const
    {
        Guard guard(*m_vc);
        check_transfer(t, Modality::meg);
        const auto s = settings(overrides);
        reject_meg_subtraction(s);
        if (s.meg_include_primary && coils.size() != t.sensors())
            throw ConfigError("coil count " + std::to_string(coils.size()) + " differs from transfer matrix rows " +
                              std::to_string(t.sensors()));
        return per_dipole(dipoles, t.sensors(), s.workers,
                          [&](const Dipole& d)
                          {
                              auto out = bind(s.source_model, *m_sources, d).assemble();
                              Eigen::VectorXd b = meeg::apply_meg_transfer(t, out);
                              if (s.meg_include_primary)
                                  b += meg_primary(d, coils);
                              return b;
                          });
    }

    ScanResult scan_eeg(const TransferMatrix& t, std::span<const Vec3> electrodes, const SourceSpace& space,
                        const Eigen::VectorXd& measurement, const Config& overrides = {}) const
    {
        Guard guard(*m_vc);
        check_transfer(t, Modality::eeg);
        const auto s = settings(overrides);
        const Restriction& r = restriction_for(electrodes, s);
        return dipole_scan(t, *m_sources, r.electrodes, space, s.source_model, measurement, s.workers);
    }

    ScanResult scan_meg(const TransferMatrix& t, std::span<const Coil> coils, const SourceSpace& space,
                        const Eigen::VectorXd& measurement, const Config& overrides = {}) const
    {
        Guard guard(*m_vc);
        check_transfer(t, Modality::meg);
        const auto s = settings(overrides);
        reject_meg_subtraction(s);
        if (static_cast<std::size_t>(measurement.size()) != t.sensors() ||
            (s.meg_include_primary && coils.size() != t.sensors()))
            throw ConfigError("measurement/coil count differs from transfer matrix rows");
        return dipole_scan(
            *m_sources, space, s.source_model, measurement,
            [&](const SourceModelOutput& out, const Dipole& d)
            {
                Eigen::VectorXd b = meeg::apply_meg_transfer(t, out);
                if (s.meg_include_primary)
                    b += meg_primary(d, coils);
                return b;
            },
            s.workers);
    }

private:
    // Debug builds verify that no operation mutates the volume conductor.
    class Guard
    {
    public:
#ifndef NDEBUG
        explicit Guard(const VolumeConductor& vc) : m_vc(vc), m_before(vc.checksum()) {}
        ~Guard() { assert(m_vc.checksum() == m_before && "volume conductor mutated by a driver operation"); }

    private:
        const VolumeConductor& m_vc;
        std::uint64_t m_before;
#else
        explicit Guard(const VolumeConductor&) {}
#endif
    };

    void check_config() const
    {
        check_discretization(m_config);
        m_config.required("element_type");
        for (const auto& k : m_config.unknown_keys(known_config_keys()))
            log::warn("unknown config key '" + k + "' ignored");
        resolve_settings(m_config); // surface bad values at creation
    }

    void init(VolumeConductor vc)
    {
        const ElementKind want = parse_element_type(m_config.required("element_type"));
        if (vc.mesh().kind() != want)
            throw ConfigError(std::string("element_type is '") + to_string(want) + "' but the mesh contains " +
                              to_string(vc.mesh().kind()) + " elements");
        m_vc = std::make_unique<const VolumeConductor>(std::move(vc));
        m_locator = std::make_unique<const ElementLocator>(build_locator(m_vc->mesh()));
        m_sources = std::make_unique<const SourceContext>(*m_vc, *m_locator);
    }

    // Restrictions are cached per electrode set; building one may need
    // exhaustive point location for electrodes outside the mesh.
    const Restriction& restriction_for(std::span<const Vec3> electrodes, const DriverSettings& s) const
    {
        Fnv1a key;
        for (const auto& p : electrodes)
            key.add_bytes(p.data(), 3 * sizeof(double));
        key.add(s.electrodes.max_distance);
        auto it = m_restrictions.find(key.value());
        if (it == m_restrictions.end())
            it = m_restrictions
                     .emplace(key.value(), std::make_unique<const Restriction>(
                                               build_restriction(*m_vc, *m_locator, electrodes, s.electrodes)))
                     .first;
        return *it->second;
    }

    void check_transfer(const TransferMatrix& t, Modality m) const
    {
        if (t.modality != m)
            throw ConfigError(std::string("modality mismatch: ") + to_string(m) + " operation on a " +
                              to_string(t.modality) + " transfer matrix");
        if (t.conductor_checksum != m_vc->checksum())
            throw ConfigError("transfer matrix was computed for a different volume conductor");
        if (t.dofs() != m_vc->mesh().num_vertices())
            throw ConfigError("transfer matrix width differs from the mesh vertex count");
    }

    static void reject_meg_subtraction(const DriverSettings& s)
    {
        if (s.source_model.kind == SourceModelKind::subtraction)
            throw ConfigError("MEG is not supported with the subtraction source model");
    }

    static Eigen::VectorXd solve_checked(const StiffnessSystem& system, const SourceModelOutput& out,
                                         const SolverOptions& options)
    {
        auto sol = std::visit([&](const auto& rhs) { return solve(system, rhs, options); }, out.rhs);
        if (!sol.converged)
            throw NumericalError("solver did not converge (residual " + std::to_string(sol.residual_norm) + " after " +
                                 std::to_string(sol.iterations) + " iterations)");
        return sol.coefficients;
    }

    template <typename F>
    static ForwardResult per_dipole(std::span<const Dipole> dipoles, std::size_t sensors, unsigned workers, F&& f)
    {
        ForwardResult res;
        res.values.setConstant(static_cast<Eigen::Index>(dipoles.size()), static_cast<Eigen::Index>(sensors),
                               std::numeric_limits<double>::quiet_NaN());
        std::vector<std::optional<ForwardResult::DipoleError>> err(dipoles.size());
        parallel_for(dipoles.size(), workers,
                     [&](std::size_t i)
                     {
                         try
                         {
                             Eigen::VectorXd v = f(dipoles[i]);
                             res.values.row(static_cast<Eigen::Index>(i)) = v.transpose();
                         }
                         catch (const ConfigError& e)
                         {
                             err[i] = {i, ForwardResult::Failure::config, e.what()};
                         }
                         catch (const NumericalError& e)
                         {
                             err[i] = {i, ForwardResult::Failure::numerical, e.what()};
                         }
                         catch (const GeometryError& e)
                         {
                             err[i] = {i, ForwardResult::Failure::geometry, e.what()};
                         }
                     });
        for (auto& e : err)
            if (e)
                res.errors.push_back(std::move(*e));
        return res;
    }

    template <typename F>
    std::shared_ptr<const TransferMatrix> cached(Fnv1a key, const DriverSettings& s, F&& compute)
    {
        key.add(s.solver.tolerance);
        key.add(static_cast<std::uint64_t>(s.solver.max_iterations));
        key.add(static_cast<std::uint64_t>(s.solver.preconditioner));
        auto it = m_cache.find(key.value());
        if (it != m_cache.end())
            return it->second;
        TransferOptions opt{s.solver, s.workers};
        auto t = std::make_shared<const TransferMatrix>(compute(opt));
        ++m_transfers;
        m_cache.emplace(key.value(), t);
        return t;
    }

    Config m_config;
    std::unique_ptr<const VolumeConductor> m_vc;
    std::unique_ptr<const ElementLocator> m_locator;
    std::unique_ptr<const SourceContext> m_sources;
    std::unique_ptr<StiffnessSystem> m_stiffness;
    std::size_t m_assemblies = 0;
    std::size_t m_transfers = 0;
    std::map<std::uint64_t, std::shared_ptr<const TransferMatrix>> m_cache;
    mutable std::map<std::uint64_t, std::unique_ptr<const Restriction>> m_restrictions;
};

inline std::unique_ptr<Driver> create_driver(const Config& config) { return std::make_unique<Driver>(config); }

} // namespace meeg
