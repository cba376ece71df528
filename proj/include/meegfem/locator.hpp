#pragma once

#include "kdtree.hpp"
#include "mesh.hpp"

#include <deque>
#include <set>

namespace meeg
{

enum class LocateOutcome
{
    found,
    outside_domain,
    non_convex_abort
};

struct LocateResult
{
    LocateOutcome outcome = LocateOutcome::outside_domain;
    std::size_t element = no_index; // found element, or last visited element on abort
    std::size_t hops = 0;

    bool found() const noexcept { return outcome == LocateOutcome::found; }
};

/// Relative slack of the face hyperplane tests, scaled by element diameter.
inline constexpr double containment_tolerance = 1e-10;

/// Signed distances of p to the face hyperplanes of element e (positive =
/// outside that face).
inline std::array<double, max_element_faces> face_distances(const Mesh& mesh, std::size_t e, const Vec3& p)
{
    std::array<double, max_element_faces> d{};
    for (std::size_t f = 0; f < mesh.faces_per_element(); ++f)
    {
        auto [c, n] = mesh.face_plane(e, f);
        d[f] = (p - c).dot(n);
    }
    return d;
}

inline bool contains(const Mesh& mesh, std::size_t e, const Vec3& p)
{
    const double tol = containment_tolerance * mesh.geometry(e).diameter();
    auto d = face_distances(mesh, e, p);
    for (std::size_t f = 0; f < mesh.faces_per_element(); ++f)
        if (d[f] > tol)
            return false;
    return true;
}

namespace detail
{

// A point on a shared face (edge, vertex) is contained in several elements;
// report the lowest index among them.
inline std::size_t lowest_containing(const Mesh& mesh, std::size_t start, const Vec3& p)
{
    std::size_t best = start;
    std::set<std::size_t> seen{start};
    std::deque<std::size_t> queue{start};
    while (!queue.empty())
    {
        std::size_t e = queue.front();
        queue.pop_front();
        const double tol = containment_tolerance * mesh.geometry(e).diameter();
        auto d = face_distances(mesh, e, p);
        for (std::size_t f = 0; f < mesh.faces_per_element(); ++f)
        {
            if (std::abs(d[f]) > tol)
                continue;
            std::size_t nb = mesh.neighbor(e, f);
            if (nb == boundary || seen.count(nb))
                continue;
            seen.insert(nb);
            if (contains(mesh, nb, p))
            {
                best = std::min(best, nb);
                queue.push_back(nb);
            }
        }
    }
    return best;
}

} // namespace detail

/// Face-normal guided walk from `start` towards `p`. For the current
/// element every face hyperplane (face centroid, outward normal) is tested;
/// the walk moves across the first face that has `p` on its outer side,
/// stops with outside_domain at a boundary face, and with found when `p`
/// is inside all faces. The walk is bounded by 4*M hops.
inline LocateResult edge_hop(const Mesh& mesh, std::size_t start, const Vec3& p)
{
    if (start >= mesh.num_elements())
        throw std::out_of_range("edge_hop: start element out of range");
    const std::size_t limit = 4 * mesh.num_elements();
    std::size_t current = start;
    std::size_t hops = 0;
    while (true)
    {
        const double tol = containment_tolerance * mesh.geometry(current).diameter();
        std::size_t next = no_index;
        for (std::size_t f = 0; f < mesh.faces_per_element(); ++f)
        {
            auto [c, n] = mesh.face_plane(current, f);
            if ((p - c).dot(n) > tol)
            {
                std::size_t nb = mesh.neighbor(current, f);
                if (nb == boundary)
                    return {LocateOutcome::outside_domain, current, hops};
                next = nb;
                break;
            }
        }
        if (next == no_index)
            return {LocateOutcome::found, detail::lowest_containing(mesh, current, p), hops};
        if (++hops > limit)
            return {LocateOutcome::non_convex_abort, current, hops};
        current = next;
    }
}

/// Exhaustive search in element order; returns the lowest-index element
/// containing p.
inline LocateResult linear_search(const Mesh& mesh, const Vec3& p)
{
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        if (contains(mesh, e, p))
            return {LocateOutcome::found, e, 0};
    return {LocateOutcome::outside_domain, no_index, 0};
}

/// k-d tree over element centers used to seed edge hopping.
class ElementLocator
{
public:
    explicit ElementLocator(const Mesh& mesh) : m_mesh(&mesh)
    {
        std::vector<Vec3> centers(mesh.num_elements());
        for (std::size_t e = 0; e < mesh.num_elements(); ++e)
            centers[e] = mesh.element_center(e);
        m_tree = KdTree(std::move(centers));
        std::tie(m_lo, m_hi) = mesh.bounding_box();
        m_boxes.reserve(mesh.num_elements());
        for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        {
            Eigen::AlignedBox3d box;
            for (std::size_t v : mesh.element(e))
                box.extend(mesh.vertex(v));
            // wider than the face-test slack
            const double pad = 1e-8 * box.diagonal().norm();
            box.min().array() -= pad;
            box.max().array() += pad;
            m_boxes.push_back(box);
        }
    }

    const Mesh& mesh() const noexcept { return *m_mesh; }
    const KdTree& tree() const noexcept { return m_tree; }

    std::size_t nearest_center(const Vec3& p) const { return m_tree.nearest(p); }

    /// Seeds edge hopping with the nearest element center. When the walk
    /// aborts or leaves the mesh through a boundary face (possible on
    /// non-convex meshes), the result is confirmed by linear search.
    LocateResult find(const Vec3& p) const
    {
        const double pad = 1e-9 * (m_hi - m_lo).norm();
        if ((p.array() < m_lo.array() - pad).any() || (p.array() > m_hi.array() + pad).any())
            return {LocateOutcome::outside_domain, no_index, 0};
        auto r = edge_hop(*m_mesh, nearest_center(p), p);
        if (r.found())
            return r;
        auto fallback = boxed_search(p);
        fallback.hops = r.hops;
        return fallback;
    }

    /// linear_search restricted to elements whose padded box holds p.
    LocateResult boxed_search(const Vec3& p) const
    {
        for (std::size_t e = 0; e < m_boxes.size(); ++e)
            if (m_boxes[e].contains(p) && contains(*m_mesh, e, p))
                return {LocateOutcome::found, e, 0};
        return {LocateOutcome::outside_domain, no_index, 0};
    }

private:
    const Mesh* m_mesh;
    KdTree m_tree;
    Vec3 m_lo, m_hi;
    std::vector<Eigen::AlignedBox3d> m_boxes;
};

inline ElementLocator build_locator(const Mesh& mesh)
{
    return ElementLocator(mesh);
}

inline LocateResult find_element(const ElementLocator& locator, const Vec3& p)
{
    return locator.find(p);
}

} // namespace meeg
