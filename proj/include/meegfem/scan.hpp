#pragma once

// Normal-constrained single dipole scan: per source-space position the
// optimal non-negative strength along the given orientation and the
// goodness of fit of the resulting topography.

#include "transfer.hpp"

namespace meeg
{

struct SourceSpace
{
    std::vector<Vec3> positions;
    std::vector<Vec3> orientations; // empty, or one unit normal per position

    std::size_t size() const noexcept { return positions.size(); }
    bool has_orientations() const noexcept { return !orientations.empty(); }

    void validate() const
    {
        if (has_orientations() && orientations.size() != positions.size())
            throw ConfigError("source space: orientation count differs from position count");
        for (std::size_t i = 0; i < orientations.size(); ++i)
            if (std::abs(orientations[i].norm() - 1.0) > 1e-12)
                throw ConfigError("source space: orientation " + std::to_string(i) + " is not unit length");
    }
};

/// Lines `x y z` or `x y z nx ny nz`; normals are normalized on read.
inline SourceSpace read_source_space(const std::string& path)
{
    SourceSpace space;
    auto records = detail::read_records(path, {3, 6});
    bool with_normals = !records.empty() && records.front().size() == 6;
    for (std::size_t i = 0; i < records.size(); ++i)
    {
        const auto& r = records[i];
        if ((r.size() == 6) != with_normals)
            throw ParseError(path, i + 1, "mixed source lines with and without normals");
        space.positions.emplace_back(r[0], r[1], r[2]);
        if (with_normals)
        {
            Vec3 n(r[3], r[4], r[5]);
            if (!(n.norm() > 0.0))
                throw ParseError(path, i + 1, "zero source normal");
            space.orientations.push_back(n.normalized());
        }
    }
    return space;
}

/// s = max(<l, m> / |l|^2, 0)
inline double optimal_strength(const Eigen::VectorXd& l, const Eigen::VectorXd& m)
{
    if (l.size() != m.size())
        throw std::invalid_argument("optimal_strength: length mismatch");
    double ll = l.squaredNorm();
    if (!(ll > 0.0))
        throw NumericalError("optimal_strength: zero leadfield");
    return std::max(l.dot(m) / ll, 0.0);
}

/// GOF = 1 - |l s - m|^2 / |m|^2
inline double gof(const Eigen::VectorXd& l, double s, const Eigen::VectorXd& m)
{
    if (l.size() != m.size())
        throw std::invalid_argument("gof: length mismatch");
    double mm = m.squaredNorm();
    if (!(mm > 0.0))
        throw NumericalError("gof: zero measurement");
    return 1.0 - (s * l - m).squaredNorm() / mm;
}

struct ScanResult
{
    std::vector<double> strength; // NaN at skipped positions
    std::vector<double> gof;
    std::vector<std::pair<std::size_t, std::string>> skipped;
    std::size_t best = no_index;

    double best_strength() const { return strength.at(best); }
    double best_gof() const { return gof.at(best); }
};

/// Leadfield of a unit dipole: sensor values for a bound source model.
using ForwardFunction = std::function<Eigen::VectorXd(const SourceModelOutput&, const Dipole&)>;

inline ScanResult dipole_scan(const SourceContext& ctx, const SourceSpace& space, const SourceModelConfig& model,
                              const Eigen::VectorXd& measurement, const ForwardFunction& forward,
                              unsigned workers = 1)
{
    space.validate();
    if (space.size() == 0)
        throw ConfigError("source space is empty");
    if (!space.has_orientations())
        throw ConfigError("normal-constrained scan requires source orientations");
    const std::size_t n = space.size();
    ScanResult r;
    r.strength.assign(n, std::numeric_limits<double>::quiet_NaN());
    r.gof.assign(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::string> reason(n);
    parallel_for(n, workers,
                 [&](std::size_t i)
                 {
                     const Dipole dp{space.positions[i], space.orientations[i]};
                     try
                     {
                         auto out = bind(model, ctx, dp).assemble();
                         Eigen::VectorXd l = forward(out, dp);
                         double s = optimal_strength(l, measurement);
                         r.strength[i] = s;
                         r.gof[i] = gof(l, s, measurement);
                     }
                     catch (const GeometryError& e)
                     {
                         reason[i] = e.what();
                     }
                 });
    for (std::size_t i = 0; i < n; ++i)
    {
        if (!reason[i].empty())
        {
            r.skipped.emplace_back(i, reason[i]);
            continue;
        }
        if (r.best == no_index || r.gof[i] > r.gof[r.best])
            r.best = i;
    }
    if (r.best == no_index)
        throw GeometryError("no source-space position lies inside the mesh");
    return r;
}

/// EEG scan through a transfer matrix; the measurement is mean-centered.
inline ScanResult dipole_scan(const TransferMatrix& t, const SourceContext& ctx, const ElectrodeArray& electrodes,
                              const SourceSpace& space, const SourceModelConfig& model,
                              const Eigen::VectorXd& measurement, unsigned workers = 1)
{
    if (static_cast<std::size_t>(measurement.size()) != t.sensors())
        throw std::invalid_argument("measurement length differs from transfer matrix rows");
    return dipole_scan(
        ctx, space, model, mean_centered(measurement),
        [&](const SourceModelOutput& out, const Dipole&) { return apply_eeg_transfer(t, out, electrodes); },
        workers);
}

} // namespace meeg
