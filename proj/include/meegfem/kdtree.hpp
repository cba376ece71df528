#pragma once

#include "common.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace meeg
{

/// Balanced 3-d tree over a fixed point set. Points are split at the
/// median along x, y, z in turn; the tree is stored implicitly in a
/// permuted index array (node = midpoint of its range).
/// Nearest-point ties are broken towards the lower point index.
class KdTree
{
public:
    KdTree() = default;

    explicit KdTree(std::vector<Vec3> points) : m_points(std::move(points)), m_order(m_points.size())
    {
        std::iota(m_order.begin(), m_order.end(), std::size_t{0});
        build(0, m_order.size(), 0);
    }

    std::size_t size() const noexcept { return m_points.size(); }
    const Vec3& point(std::size_t i) const { return m_points[i]; }

    /// Depth of the implicit tree (0 for an empty tree).
    std::size_t depth() const { return depth_of(0, m_order.size()); }

    /// Index of the nearest point; `no_index` for an empty tree.
    std::size_t nearest(const Vec3& q) const
    {
        Best best;
        search(q, 0, m_order.size(), 0, best);
        return best.index;
    }

private:
    struct Best
    {
        double dist2 = std::numeric_limits<double>::infinity();
        std::size_t index = no_index;

        void offer(double d2, std::size_t i)
        {
            if (d2 < dist2 || (d2 == dist2 && i < index))
            {
                dist2 = d2;
                index = i;
            }
        }
    };

    void build(std::size_t lo, std::size_t hi, int axis)
    {
        if (hi - lo <= 1)
            return;
        std::size_t mid = lo + (hi - lo) / 2;
        auto less = [&](std::size_t a, std::size_t b) {
            double pa = m_points[a][axis], pb = m_points[b][axis];
            return pa < pb || (pa == pb && a < b);
        };
        std::nth_element(m_order.begin() + static_cast<std::ptrdiff_t>(lo),
                         m_order.begin() + static_cast<std::ptrdiff_t>(mid),
                         m_order.begin() + static_cast<std::ptrdiff_t>(hi), less);
        build(lo, mid, (axis + 1) % 3);
        build(mid + 1, hi, (axis + 1) % 3);
    }

    std::size_t depth_of(std::size_t lo, std::size_t hi) const
    {
        if (hi <= lo)
            return 0;
        std::size_t mid = lo + (hi - lo) / 2;
        return 1 + std::max(depth_of(lo, mid), depth_of(mid + 1, hi));
    }

    void search(const Vec3& q, std::size_t lo, std::size_t hi, int axis, Best& best) const
    {
        if (hi <= lo)
            return;
        std::size_t mid = lo + (hi - lo) / 2;
        std::size_t idx = m_order[mid];
        const Vec3& p = m_points[idx];
        best.offer((p - q).squaredNorm(), idx);

        double diff = q[axis] - p[axis];
        int next = (axis + 1) % 3;
        // equal coordinates may sit on either side of the split
        if (diff < 0.0)
        {
            search(q, lo, mid, next, best);
            if (diff * diff <= best.dist2)
                search(q, mid + 1, hi, next, best);
        }
        else
        {
            search(q, mid + 1, hi, next, best);
            if (diff * diff <= best.dist2)
                search(q, lo, mid, next, best);
        }
    }

    std::vector<Vec3> m_points;
    std::vector<std::size_t> m_order;
};

} // namespace meeg
