#pragma once

#include "sparse.hpp"
#include "stiffness.hpp"

#include <cmath>
#include <sstream>

namespace meeg
{

enum class Preconditioner
{
    none,
    jacobi,
    symmetric_gauss_seidel
};

inline Preconditioner parse_preconditioner(const std::string& s)
{
    if (s == "none")
        return Preconditioner::none;
    if (s == "jacobi")
        return Preconditioner::jacobi;
    if (s == "sgs" || s == "symmetric_gauss_seidel")
        return Preconditioner::symmetric_gauss_seidel;
    throw ConfigError("unknown preconditioner '" + s + "' (expected none, jacobi or sgs)");
}

struct SolverOptions
{
    double tolerance = 1e-8;
    std::size_t max_iterations = 0; // 0 = 10 * n
    Preconditioner preconditioner = Preconditioner::jacobi;
};

/// Discrete potential u_h = sum_i alpha_i phi_i, gauge fixed to zero mean.
struct Solution
{
    Eigen::VectorXd coefficients;
    double residual_norm = 0.0; // ||b - A x|| / ||b||
    std::size_t iterations = 0;
    bool converged = true;
};

/// Relative tolerance of the compatibility condition sum(b) = 0.
inline constexpr double compatibility_tolerance = 1e-8;

namespace detail
{

inline void remove_mean(Eigen::VectorXd& v)
{
    if (v.size() > 0)
        v.array() -= v.mean();
}

class PreconditionerApply
{
public:
    PreconditionerApply(const CsrMatrix& a, Preconditioner kind) : m_a(a), m_kind(kind), m_diag(a.diagonal())
    {
        for (Eigen::Index i = 0; i < m_diag.size(); ++i)
            if (!(m_diag[i] > 0.0))
                throw NumericalError("non-positive diagonal entry in row " + std::to_string(i));
    }

    void apply(const Eigen::VectorXd& r, Eigen::VectorXd& z) const
    {
        switch (m_kind)
        {
        case Preconditioner::none: z = r; break;
        case Preconditioner::jacobi: z = r.cwiseQuotient(m_diag); break;
        case Preconditioner::symmetric_gauss_seidel: sgs(r, z); break;
        }
    }

private:
    // z = (D+U)^-1 D (D+L)^-1 r
    void sgs(const Eigen::VectorXd& r, Eigen::VectorXd& z) const
    {
        const std::size_t n = m_a.rows();
        z.resize(r.size());
        for (std::size_t i = 0; i < n; ++i)
        {
            double s = r[static_cast<Eigen::Index>(i)];
            auto cols = m_a.row_cols(i);
            auto vals = m_a.row_values(i);
            for (std::size_t k = 0; k < cols.size() && cols[k] < i; ++k)
                s -= vals[k] * z[static_cast<Eigen::Index>(cols[k])];
            z[static_cast<Eigen::Index>(i)] = s / m_diag[static_cast<Eigen::Index>(i)];
        }
        z.array() *= m_diag.array();
        for (std::size_t ii = n; ii-- > 0;)
        {
            double s = z[static_cast<Eigen::Index>(ii)];
            auto cols = m_a.row_cols(ii);
            auto vals = m_a.row_values(ii);
            for (std::size_t k = cols.size(); k-- > 0 && cols[k] > ii;)
                s -= vals[k] * z[static_cast<Eigen::Index>(cols[k])];
            z[static_cast<Eigen::Index>(ii)] = s / m_diag[static_cast<Eigen::Index>(ii)];
        }
    }

    const CsrMatrix& m_a;
    Preconditioner m_kind;
    Eigen::VectorXd m_diag;
};

} // namespace detail

/// Preconditioned CG for the singular Neumann system. The right-hand side
/// must satisfy sum(b) ~ 0; iterates are projected onto the zero-mean
/// subspace after every update. Stops when the preconditioned residual
/// norm drops below `tolerance` relative to its initial value.
inline Solution solve(const StiffnessSystem& system, const Eigen::VectorXd& rhs, const SolverOptions& options = {})
{
    const CsrMatrix& a = system.matrix;
    const std::size_t n = a.rows();
    if (static_cast<std::size_t>(rhs.size()) != n)
        throw std::invalid_argument("solve: right-hand side has length " + std::to_string(rhs.size()) +
                                    ", expected " + std::to_string(n));

    Solution sol;
    sol.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const double bnorm = rhs.norm();
    if (bnorm == 0.0)
        return sol;
    if (std::abs(rhs.sum()) > compatibility_tolerance * bnorm)
    {
        std::ostringstream os;
        os << "incompatible right-hand side: sum(b) = " << rhs.sum() << " exceeds " << compatibility_tolerance
           << " * ||b|| = " << compatibility_tolerance * bnorm;
        throw NumericalError(os.str());
    }

    Eigen::VectorXd r = rhs;
    detail::remove_mean(r);
    detail::PreconditionerApply precond(a, options.preconditioner);
    const std::size_t max_it = options.max_iterations ? options.max_iterations : 10 * n;

    Eigen::VectorXd& x = sol.coefficients;
    Eigen::VectorXd z, p, q;
    precond.apply(r, z);
    detail::remove_mean(z);
    p = z;
    double rz = r.dot(z);
    const double rz0 = rz;
    std::size_t it = 0;
    while (std::sqrt(std::abs(rz)) > options.tolerance * std::sqrt(std::abs(rz0)))
    {
        if (it >= max_it)
        {
            sol.converged = false;
            break;
        }
        a.multiply(p, q);
        double pq = p.dot(q);
        if (!(pq > 0.0))
        {
            sol.converged = false;
            break;
        }
        double alpha = rz / pq;
        x += alpha * p;
        detail::remove_mean(x);
        r -= alpha * q;
        precond.apply(r, z);
        detail::remove_mean(z);
        double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
        ++it;
    }
    sol.iterations = it;
    Eigen::VectorXd ax;
    a.multiply(x, ax);
    sol.residual_norm = (rhs - ax).norm() / bnorm;
    return sol;
}

inline Solution solve(const StiffnessSystem& system, const SparseVector& rhs, const SolverOptions& options = {})
{
    return solve(system, rhs.dense(system.size()), options);
}

} // namespace meeg
