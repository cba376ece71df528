#pragma once

#include "common.hpp"
#include "element.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <sstream>

namespace meeg
{

/// Face neighbor entry: element index across the face, or `boundary`.
inline constexpr std::size_t boundary = no_index;

struct BoundaryFace
{
    std::size_t element;
    std::size_t face; // local face index
};

/// Unstructured volume mesh with a single element kind (tet4 or hex8).
/// Immutable after construction; face neighbors are built eagerly.
class Mesh
{
public:
    Mesh() = default;

    /// Validates the input and builds the face topology. Throws MeshError.
    Mesh(ElementKind kind, std::vector<Vec3> vertices, std::vector<std::size_t> connectivity,
         std::vector<int> labels)
        : m_kind(kind), m_vertices(std::move(vertices)), m_connectivity(std::move(connectivity)),
          m_labels(std::move(labels))
    {
        const std::size_t nv = vertex_count(m_kind);
        if (m_connectivity.size() % nv != 0)
            throw MeshError("connectivity length is not a multiple of the element vertex count");
        const std::size_t ne = m_connectivity.size() / nv;
        if (m_labels.size() != ne)
            throw MeshError("label count does not match element count");
        if (ne == 0)
            throw MeshError("mesh has no elements");

        for (std::size_t e = 0; e < ne; ++e)
            for (std::size_t v : element(e))
                if (v >= m_vertices.size())
                {
                    std::ostringstream os;
                    os << "element " << e << " references vertex " << v << " (vertex count " << m_vertices.size() << ")";
                    throw MeshError(os.str());
                }

        for (std::size_t e = 0; e < ne; ++e)
        {
            auto dets = geometry(e).corner_determinants();
            if (*std::min_element(dets.begin(), dets.end()) <= 0.0)
            {
                std::ostringstream os;
                os << "element " << e << " is inverted or degenerate (non-positive Jacobian)";
                throw MeshError(os.str());
            }
        }
        build_neighbors();
    }

    ElementKind kind() const noexcept { return m_kind; }
    std::size_t num_vertices() const noexcept { return m_vertices.size(); }
    std::size_t num_elements() const noexcept { return m_labels.size(); }
    std::size_t vertices_per_element() const noexcept { return vertex_count(m_kind); }
    std::size_t faces_per_element() const noexcept { return face_count(m_kind); }

    const std::vector<Vec3>& vertices() const noexcept { return m_vertices; }
    const Vec3& vertex(std::size_t i) const { return m_vertices[i]; }
    const std::vector<std::size_t>& connectivity() const noexcept { return m_connectivity; }
    const std::vector<int>& labels() const noexcept { return m_labels; }
    int label(std::size_t e) const { return m_labels[e]; }

    std::span<const std::size_t> element(std::size_t e) const
    {
        const std::size_t nv = vertices_per_element();
        return {m_connectivity.data() + e * nv, nv};
    }

    ElementGeometry geometry(std::size_t e) const
    {
        std::array<Vec3, max_element_vertices> c;
        auto idx = element(e);
        for (std::size_t i = 0; i < idx.size(); ++i)
            c[i] = m_vertices[idx[i]];
        return ElementGeometry(m_kind, std::span<const Vec3>(c.data(), idx.size()));
    }

    Vec3 element_center(std::size_t e) const
    {
        Vec3 c = Vec3::Zero();
        for (std::size_t v : element(e))
            c += m_vertices[v];
        return c / static_cast<double>(vertices_per_element());
    }

    /// Neighbor across local face f of element e, or `boundary`.
    std::size_t neighbor(std::size_t e, std::size_t f) const { return m_neighbors[e * faces_per_element() + f]; }

    std::span<const std::size_t> neighbors(std::size_t e) const
    {
        return {m_neighbors.data() + e * faces_per_element(), faces_per_element()};
    }

    /// Global vertex indices of local face f of element e.
    std::array<std::size_t, max_face_vertices> face_vertices(std::size_t e, std::size_t f) const
    {
        std::array<std::size_t, max_face_vertices> out{};
        auto lf = local_face(m_kind, f);
        auto el = element(e);
        for (std::size_t i = 0; i < lf.size(); ++i)
            out[i] = el[lf[i]];
        return out;
    }

    const std::vector<BoundaryFace>& boundary_faces() const noexcept { return m_boundary_faces; }
    std::size_t num_interior_faces() const noexcept { return m_num_interior_faces; }

    /// Centroid and outward unit normal of a face. Hex faces use the
    /// diagonal cross product as the normal.
    std::pair<Vec3, Vec3> face_plane(std::size_t e, std::size_t f) const
    {
        auto fv = face_vertices(e, f);
        const std::size_t n = face_vertex_count(m_kind);
        Vec3 c = Vec3::Zero();
        for (std::size_t i = 0; i < n; ++i)
            c += m_vertices[fv[i]];
        c /= static_cast<double>(n);
        Vec3 normal;
        if (n == 3)
            normal = (m_vertices[fv[1]] - m_vertices[fv[0]]).cross(m_vertices[fv[2]] - m_vertices[fv[0]]);
        else
            normal = (m_vertices[fv[2]] - m_vertices[fv[0]]).cross(m_vertices[fv[3]] - m_vertices[fv[1]]);
        normal.normalize();
        if ((element_center(e) - c).dot(normal) > 0.0)
            normal = -normal;
        return {c, normal};
    }

    std::pair<Vec3, Vec3> bounding_box() const
    {
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (const auto& v : m_vertices)
        {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        return {lo, hi};
    }

    std::uint64_t checksum() const
    {
        Fnv1a h;
        h.add(static_cast<int>(m_kind));
        for (const auto& v : m_vertices)
            h.add_bytes(v.data(), 3 * sizeof(double));
        h.add_span(std::span<const std::size_t>(m_connectivity));
        h.add_span(std::span<const int>(m_labels));
        return h.value();
    }

private:
    void build_neighbors()
    {
        const std::size_t ne = num_elements();
        const std::size_t nf = faces_per_element();
        const std::size_t fv = face_vertex_count(m_kind);

        struct FaceKey
        {
            std::array<std::size_t, max_face_vertices> key;
            std::size_t element;
            std::size_t face;
        };
        std::vector<FaceKey> faces;
        faces.reserve(ne * nf);
        for (std::size_t e = 0; e < ne; ++e)
            for (std::size_t f = 0; f < nf; ++f)
            {
                FaceKey k{face_vertices(e, f), e, f};
                for (std::size_t i = fv; i < max_face_vertices; ++i)
                    k.key[i] = no_index;
                std::sort(k.key.begin(), k.key.begin() + static_cast<std::ptrdiff_t>(fv));
                faces.push_back(k);
            }
        std::sort(faces.begin(), faces.end(), [](const FaceKey& a, const FaceKey& b) {
            if (a.key != b.key)
                return a.key < b.key;
            return std::tie(a.element, a.face) < std::tie(b.element, b.face);
        });

        m_neighbors.assign(ne * nf, boundary);
        m_boundary_faces.clear();
        m_num_interior_faces = 0;
        for (std::size_t i = 0; i < faces.size();)
        {
            std::size_t j = i + 1;
            while (j < faces.size() && faces[j].key == faces[i].key)
                ++j;
            if (j - i == 1)
            {
                m_boundary_faces.push_back({faces[i].element, faces[i].face});
            }
            else if (j - i == 2)
            {
                const auto& a = faces[i];
                const auto& b = faces[i + 1];
                if (a.element == b.element)
                    throw MeshError("element " + std::to_string(a.element) + " has a repeated face");
                m_neighbors[a.element * nf + a.face] = b.element;
                m_neighbors[b.element * nf + b.face] = a.element;
                ++m_num_interior_faces;
            }
            else
            {
                throw MeshError("face shared by more than two elements (element " + std::to_string(faces[i].element) +
                                ")");
            }
            i = j;
        }
        std::sort(m_boundary_faces.begin(), m_boundary_faces.end(),
                  [](const BoundaryFace& a, const BoundaryFace& b) {
                      return std::tie(a.element, a.face) < std::tie(b.element, b.face);
                  });
    }

    ElementKind m_kind = ElementKind::tetrahedron;
    std::vector<Vec3> m_vertices;
    std::vector<std::size_t> m_connectivity;
    std::vector<int> m_labels;
    std::vector<std::size_t> m_neighbors;
    std::vector<BoundaryFace> m_boundary_faces;
    std::size_t m_num_interior_faces = 0;
};

inline double element_measure(const Mesh& mesh, std::size_t element)
{
    if (element >= mesh.num_elements())
        throw std::out_of_range("element_measure: element index " + std::to_string(element) + " out of range");
    return mesh.geometry(element).volume();
}

/// Vertex-to-vertex adjacency along element edges.
class VertexAdjacency
{
public:
    explicit VertexAdjacency(const Mesh& mesh)
    {
        std::vector<std::vector<std::size_t>> adj(mesh.num_vertices());
        auto link = [&](std::size_t a, std::size_t b) {
            adj[a].push_back(b);
            adj[b].push_back(a);
        };
        for (std::size_t e = 0; e < mesh.num_elements(); ++e)
        {
            auto el = mesh.element(e);
            if (mesh.kind() == ElementKind::tetrahedron)
            {
                for (std::size_t i = 0; i < 4; ++i)
                    for (std::size_t j = i + 1; j < 4; ++j)
                        link(el[i], el[j]);
            }
            else
            {
                for (const auto& ed : hex_edges)
                    link(el[ed[0]], el[ed[1]]);
            }
        }
        m_offsets.push_back(0);
        for (auto& a : adj)
        {
            std::sort(a.begin(), a.end());
            a.erase(std::unique(a.begin(), a.end()), a.end());
            m_targets.insert(m_targets.end(), a.begin(), a.end());
            m_offsets.push_back(m_targets.size());
        }
    }

    std::span<const std::size_t> operator[](std::size_t v) const
    {
        return {m_targets.data() + m_offsets[v], m_offsets[v + 1] - m_offsets[v]};
    }

private:
    std::vector<std::size_t> m_offsets;
    std::vector<std::size_t> m_targets;
};

} // namespace meeg
