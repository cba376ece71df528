#pragma once

// Closed-form reference solutions for concentric sphere models and
// topography/magnitude error metrics.

#include "common.hpp"
#include "io.hpp"

#include <cmath>

namespace meeg
{

/// Concentric isotropic shells; radii ascending in mm, one conductivity
/// (S/m) per shell, Legendre series truncated after `order` terms.
struct SphereModel
{
    Vec3 center = Vec3::Zero();
    std::vector<double> radii;
    std::vector<double> conductivities;
    int order = 80;

    void validate() const
    {
        if (radii.empty() || radii.size() != conductivities.size())
            throw ConfigError("sphere model needs one conductivity per radius");
        for (std::size_t i = 0; i < radii.size(); ++i)
        {
            if (!(radii[i] > 0.0) || (i > 0 && !(radii[i] > radii[i - 1])))
                throw ConfigError("sphere radii must be positive and strictly ascending");
            if (!(conductivities[i] > 0.0))
                throw ConfigError("sphere conductivities must be positive");
        }
        if (order < 1)
            throw ConfigError("series order must be >= 1");
    }

    double outer_radius() const { return radii.back(); }
};

/// Potential (uV) on the outer surface for a dipole in the innermost shell.
///
/// Per degree n the potential in shell j is (A_j rho^n + B_j rho^-(n+1))
/// times the angular factor of the dipole's primary expansion, with
/// rho = r / R_outer. The coefficients are recursed inwards from the
/// insulating outer surface (A = (n+1)/n B) through the interfaces
/// (continuity of potential and normal current) and scaled so that the
/// singular part in the innermost shell equals the infinite-medium dipole.
inline double sphere_eeg(const SphereModel& model, const Vec3& dipole_position, const Vec3& moment,
                         const Vec3& electrode)
{
    model.validate();
    const double big_r = model.outer_radius();
    const Vec3 r0v = dipole_position - model.center;
    const Vec3 rv = electrode - model.center;
    const double r0 = r0v.norm();
    if (!(r0 < model.radii.front()))
        throw GeometryError("dipole is not inside the innermost sphere");
    if (std::abs(rv.norm() - big_r) > 1e-6 * big_r)
        throw GeometryError("electrode is not on the outer sphere");

    const std::size_t shells = model.radii.size();
    const Vec3 rhat = rv.normalized();
    const Vec3 r0hat = r0 > 0.0 ? Vec3(r0v / r0) : Vec3(0, 0, 1);
    const double cosg = std::clamp(rhat.dot(r0hat), -1.0, 1.0);
    const double m_r0 = moment.dot(r0hat);
    const double m_r = moment.dot(rhat);
    const double ecc = r0 / big_r;
    const double primary = 1.0 / (4.0 * pi * model.conductivities[0] * big_r * big_r);

    // Legendre P_n and P_n' by recurrence
    double p_prev = 1.0, p = cosg;  // P_0, P_1
    double dp_prev = 0.0, dp = 1.0; // P_0', P_1'
    double sum = 0.0, abs_sum = 0.0, last = 0.0;
    for (int n = 1; n <= model.order; ++n)
    {
        const double nn = n;
        // outer shell: B = 1, A from the insulating boundary
        double a = (nn + 1.0) / nn, b = 1.0;
        for (std::size_t j = shells - 1; j > 0; --j)
        {
            const double rho = model.radii[j - 1] / big_r;
            const double v = a * std::pow(rho, nn) + b * std::pow(rho, -nn - 1.0);
            const double flux = model.conductivities[j] * (nn * a * std::pow(rho, nn - 1.0) -
                                                           (nn + 1.0) * b * std::pow(rho, -nn - 2.0));
            const double a_in = ((nn + 1.0) * v / rho + flux / model.conductivities[j - 1]) /
                                ((2.0 * nn + 1.0) * std::pow(rho, nn - 1.0));
            const double b_in = (v - a_in * std::pow(rho, nn)) * std::pow(rho, nn + 1.0);
            a = a_in;
            b = b_in;
        }
        const double surface = (2.0 * nn + 1.0) / nn * primary / b;
        const double angular = std::pow(ecc, nn - 1.0) * (nn * p * m_r0 + dp * (m_r - cosg * m_r0));
        last = surface * angular;
        sum += last;
        abs_sum += std::abs(last);

        const double p_next = ((2.0 * nn + 1.0) * cosg * p - nn * p_prev) / (nn + 1.0);
        const double dp_next = dp_prev + (2.0 * nn + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    if (std::abs(last) > 1e-10 * abs_sum)
        throw NumericalError("sphere series not converged at order " + std::to_string(model.order));
    return sum;
}

/// Magnetic field (fT) of a dipole inside any spherically symmetric
/// conductor centered at `center`, projected on the coil orientation.
inline double sarvas_meg(const Vec3& center, const Vec3& dipole_position, const Vec3& moment, const Vec3& coil_position,
                         const Vec3& orientation)
{
    const Vec3 r = coil_position - center;
    const Vec3 r0 = dipole_position - center;
    const Vec3 av = r - r0;
    const double a = av.norm();
    const double rn = r.norm();
    if (!(a > 0.0) || !(rn > r0.norm()))
        throw GeometryError("sarvas_meg: coil must lie outside the dipole's radius");
    const double f = a * (rn * a + rn * rn - r0.dot(r));
    if (!(f > 0.0))
        throw GeometryError("sarvas_meg: degenerate geometry");
    const Vec3 grad_f = (a * a / rn + av.dot(r) / a + 2.0 * a + 2.0 * rn) * r - (a + 2.0 * rn + av.dot(r) / a) * r0;
    const Vec3 q = moment.cross(r0);
    const Vec3 b = mu0_over_4pi / (f * f) * (f * q - q.dot(r) * grad_f);
    return b.dot(orientation);
}

/// Relative difference measure ||u/|u| - v/|v|||, in [0, 2].
inline double rdm(std::span<const double> u, std::span<const double> v)
{
    if (u.size() != v.size() || u.empty())
        throw std::invalid_argument("rdm: vectors must have equal non-zero length");
    Eigen::Map<const Eigen::VectorXd> a(u.data(), static_cast<Eigen::Index>(u.size()));
    Eigen::Map<const Eigen::VectorXd> b(v.data(), static_cast<Eigen::Index>(v.size()));
    if (a.norm() == 0.0 || b.norm() == 0.0)
        throw std::invalid_argument("rdm: zero-norm input");
    return (a / a.norm() - b / b.norm()).norm();
}

/// Magnitude ratio ||u|| / ||v||.
inline double mag(std::span<const double> u, std::span<const double> v)
{
    if (u.size() != v.size() || u.empty())
        throw std::invalid_argument("mag: vectors must have equal non-zero length");
    Eigen::Map<const Eigen::VectorXd> a(u.data(), static_cast<Eigen::Index>(u.size()));
    Eigen::Map<const Eigen::VectorXd> b(v.data(), static_cast<Eigen::Index>(v.size()));
    if (a.norm() == 0.0 || b.norm() == 0.0)
        throw std::invalid_argument("mag: zero-norm input");
    return a.norm() / b.norm();
}

inline double rdm(const Eigen::VectorXd& u, const Eigen::VectorXd& v)
{
    return rdm(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
               std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

inline double mag(const Eigen::VectorXd& u, const Eigen::VectorXd& v)
{
    return mag(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
               std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

/// Sphere model description: `radii r1 r2 ...`, `conductivities s1 s2 ...`,
/// optional `center x y z` and `order L`; '#' comments.
inline SphereModel read_sphere_model(const std::string& path)
{
    auto in = detail::open_input(path);
    SphereModel model;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        auto t = detail::split_ws(detail::strip_comment(line));
        if (t.empty())
            continue;
        std::vector<double> values(t.size() - 1);
        for (std::size_t i = 1; i < t.size(); ++i)
            if (!detail::parse_number(t[i], values[i - 1]))
                throw ParseError(path, lineno, "invalid number '" + t[i] + "'");
        if (t[0] == "radii")
            model.radii = values;
        else if (t[0] == "conductivities")
            model.conductivities = values;
        else if (t[0] == "center" && values.size() == 3)
            model.center = Vec3(values[0], values[1], values[2]);
        else if (t[0] == "order" && values.size() == 1)
            model.order = static_cast<int>(values[0]);
        else
            throw ParseError(path, lineno, "unknown or malformed key '" + t[0] + "'");
    }
    try
    {
        model.validate();
    }
    catch (const ConfigError& e)
    {
        throw ConfigError(path + ": " + e.what());
    }
    return model;
}

} // namespace meeg
