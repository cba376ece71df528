#pragma once

#include "common.hpp"

#include <algorithm>

namespace meeg
{

/// Sparse vector over degrees of freedom: sorted unique indices.
struct SparseVector
{
    std::vector<std::size_t> index;
    std::vector<double> value;

    std::size_t nnz() const noexcept { return index.size(); }

    double sum() const
    {
        double s = 0.0;
        for (double v : value)
            s += v;
        return s;
    }

    Eigen::VectorXd dense(std::size_t n) const
    {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < index.size(); ++k)
            out[static_cast<Eigen::Index>(index[k])] += value[k];
        return out;
    }

    /// Builds from unsorted (index, value) pairs, summing duplicates in
    /// input order. Exact zeros produced by the caller are kept.
    static SparseVector from_pairs(std::vector<std::pair<std::size_t, double>> pairs)
    {
        std::stable_sort(pairs.begin(), pairs.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        SparseVector v;
        for (const auto& [i, x] : pairs)
        {
            if (!v.index.empty() && v.index.back() == i)
                v.value.back() += x;
            else
            {
                v.index.push_back(i);
                v.value.push_back(x);
            }
        }
        return v;
    }
};

/// Compressed sparse row matrix with sorted column indices.
class CsrMatrix
{
public:
    CsrMatrix() = default;

    /// Pattern from per-row sorted unique column lists; values zero.
    explicit CsrMatrix(const std::vector<std::vector<std::size_t>>& rows)
    {
        m_row_ptr.reserve(rows.size() + 1);
        m_row_ptr.push_back(0);
        for (const auto& r : rows)
        {
            m_cols.insert(m_cols.end(), r.begin(), r.end());
            m_row_ptr.push_back(m_cols.size());
        }
        m_values.assign(m_cols.size(), 0.0);
    }

    std::size_t rows() const noexcept { return m_row_ptr.empty() ? 0 : m_row_ptr.size() - 1; }
    std::size_t nnz() const noexcept { return m_cols.size(); }

    std::span<const std::size_t> row_cols(std::size_t i) const
    {
        return {m_cols.data() + m_row_ptr[i], m_row_ptr[i + 1] - m_row_ptr[i]};
    }
    std::span<const double> row_values(std::size_t i) const
    {
        return {m_values.data() + m_row_ptr[i], m_row_ptr[i + 1] - m_row_ptr[i]};
    }

    double& at(std::size_t i, std::size_t j)
    {
        auto cols = row_cols(i);
        auto it = std::lower_bound(cols.begin(), cols.end(), j);
        if (it == cols.end() || *it != j)
            throw std::out_of_range("CsrMatrix::at: entry not in sparsity pattern");
        return m_values[m_row_ptr[i] + static_cast<std::size_t>(it - cols.begin())];
    }

    double coeff(std::size_t i, std::size_t j) const
    {
        auto cols = row_cols(i);
        auto it = std::lower_bound(cols.begin(), cols.end(), j);
        if (it == cols.end() || *it != j)
            return 0.0;
        return m_values[m_row_ptr[i] + static_cast<std::size_t>(it - cols.begin())];
    }

    void multiply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const
    {
        const std::size_t n = rows();
        y.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
        {
            double s = 0.0;
            for (std::size_t k = m_row_ptr[i]; k < m_row_ptr[i + 1]; ++k)
                s += m_values[k] * x[static_cast<Eigen::Index>(m_cols[k])];
            y[static_cast<Eigen::Index>(i)] = s;
        }
    }

    Eigen::VectorXd operator*(const Eigen::VectorXd& x) const
    {
        Eigen::VectorXd y;
        multiply(x, y);
        return y;
    }

    Eigen::VectorXd diagonal() const
    {
        Eigen::VectorXd d(static_cast<Eigen::Index>(rows()));
        for (std::size_t i = 0; i < rows(); ++i)
            d[static_cast<Eigen::Index>(i)] = coeff(i, i);
        return d;
    }

    double max_abs() const
    {
        double m = 0.0;
        for (double v : m_values)
            m = std::max(m, std::abs(v));
        return m;
    }

    void scale(double c)
    {
        for (double& v : m_values)
            v *= c;
    }

    const std::vector<std::size_t>& row_ptr() const noexcept { return m_row_ptr; }
    const std::vector<std::size_t>& cols() const noexcept { return m_cols; }
    const std::vector<double>& values() const noexcept { return m_values; }

private:
    std::vector<std::size_t> m_row_ptr;
    std::vector<std::size_t> m_cols;
    std::vector<double> m_values;
};

} // namespace meeg
