#pragma once

// Electrode restriction, transfer matrices T = R A^-1 and their application
// to source right-hand sides.

#include "parallel.hpp"
#include "solver.hpp"
#include "sources.hpp"
#include "stiffness.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace meeg
{

enum class Modality : std::uint32_t
{
    eeg = 1,
    meg = 2
};

inline const char* to_string(Modality m)
{
    return m == Modality::eeg ? "eeg" : "meg";
}

inline Modality parse_modality(const std::string& s)
{
    if (s == "eeg")
        return Modality::eeg;
    if (s == "meg")
        return Modality::meg;
    throw ConfigError("unknown modality '" + s + "' (expected eeg or meg)");
}

inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0)
        return a;
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3)
        return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0)
        return a + d1 / (d1 - d3) * ab;
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6)
        return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0)
        return a + d2 / (d2 - d6) * ac;
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
        return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

/// Projects points onto the boundary faces around the nearest boundary
/// vertex. Quadrilateral faces are split into two triangles.
class BoundaryProjector
{
public:
    struct Projection
    {
        Vec3 point;
        std::size_t element = no_index;
        double distance = 0.0;
    };

    explicit BoundaryProjector(const Mesh& mesh) : m_mesh(&mesh)
    {
        std::vector<std::vector<std::size_t>> faces_of(mesh.num_vertices());
        const auto& bf = mesh.boundary_faces();
        for (std::size_t i = 0; i < bf.size(); ++i)
        {
            auto fv = mesh.face_vertices(bf[i].element, bf[i].face);
            for (std::size_t k = 0; k < face_vertex_count(mesh.kind()); ++k)
                faces_of[fv[k]].push_back(i);
        }
        std::vector<Vec3> pts;
        for (std::size_t v = 0; v < faces_of.size(); ++v)
            if (!faces_of[v].empty())
            {
                m_vertex.push_back(v);
                pts.push_back(mesh.vertex(v));
                m_faces.push_back(std::move(faces_of[v]));
            }
        if (pts.empty())
            throw MeshError("mesh has no boundary faces");
        m_tree = KdTree(std::move(pts));
    }

    Projection project(const Vec3& p) const
    {
        const auto& bfs = m_mesh->boundary_faces();
        Projection best;
        best.distance = std::numeric_limits<double>::infinity();
        for (std::size_t i : m_faces[m_tree.nearest(p)])
        {
            auto fv = m_mesh->face_vertices(bfs[i].element, bfs[i].face);
            auto consider = [&](std::size_t a, std::size_t b, std::size_t c)
            {
                Vec3 q = closest_point_on_triangle(p, m_mesh->vertex(fv[a]), m_mesh->vertex(fv[b]),
                                                   m_mesh->vertex(fv[c]));
                double d = (q - p).norm();
                if (d < best.distance)
                    best = {q, bfs[i].element, d};
            };
            consider(0, 1, 2);
            if (face_vertex_count(m_mesh->kind()) == 4)
                consider(0, 2, 3);
        }
        return best;
    }

private:
    const Mesh* m_mesh;
    std::vector<std::size_t> m_vertex;
    std::vector<std::vector<std::size_t>> m_faces;
    KdTree m_tree;
};

struct ElectrodeArray
{
    std::vector<Vec3> positions;
    std::vector<Vec3> evaluation_points; // projected onto the mesh where needed
    std::vector<std::size_t> element;
    std::vector<Vec3> local;
    std::vector<double> projection_distance;

    std::size_t size() const noexcept { return positions.size(); }
};

/// Sparse rows of R: basis values at each electrode's evaluation point.
struct Restriction
{
    ElectrodeArray electrodes;
    std::vector<SparseVector> rows;
    std::size_t dofs = 0;

    std::size_t size() const noexcept { return rows.size(); }
};

struct RestrictionOptions
{
    double max_distance = 20.0; // mm
};

namespace detail
{

inline Vec3 clamp_local(ElementKind kind, Vec3 xi)
{
    for (int c = 0; c < 3; ++c)
        xi[c] = std::clamp(xi[c], 0.0, 1.0);
    if (kind == ElementKind::tetrahedron)
    {
        double s = xi.sum();
        if (s > 1.0)
            xi /= s;
    }
    return xi;
}

} // namespace detail

inline Restriction build_restriction(const VolumeConductor& vc, const ElementLocator& locator,
                                     std::span<const Vec3> electrodes, const RestrictionOptions& options = {})
{
    const Mesh& mesh = vc.mesh();
    Restriction r;
    r.dofs = mesh.num_vertices();
    auto& ea = r.electrodes;
    std::optional<BoundaryProjector> projector;
    std::vector<std::size_t> too_far;
    for (std::size_t k = 0; k < electrodes.size(); ++k)
    {
        const Vec3& p = electrodes[k];
        Vec3 at = p;
        double dist = 0.0;
        auto found = locator.find(p);
        std::size_t e = found.element;
        if (!found.found())
        {
            if (!projector)
                projector.emplace(mesh);
            auto proj = projector->project(p);
            at = proj.point;
            e = proj.element;
        }
        auto geo = mesh.geometry(e);
        Vec3 xi;
        geo.local(at, xi);
        xi = detail::clamp_local(mesh.kind(), xi);
        if (!found.found())
        {
            at = geo.global(xi);
            dist = (at - p).norm();
        }
        auto basis = reference_basis(mesh.kind(), xi);
        auto el = mesh.element(e);
        std::vector<std::pair<std::size_t, double>> pairs;
        for (std::size_t i = 0; i < el.size(); ++i)
            if (std::abs(basis.value[i]) > 1e-14)
                pairs.emplace_back(el[i], basis.value[i]);
        if (dist > options.max_distance)
            too_far.push_back(k);
        ea.positions.push_back(p);
        ea.evaluation_points.push_back(at);
        ea.element.push_back(e);
        ea.local.push_back(xi);
        ea.projection_distance.push_back(dist);
        r.rows.push_back(SparseVector::from_pairs(std::move(pairs)));
    }
    if (!too_far.empty())
    {
        std::ostringstream msg;
        msg << "electrodes farther than " << options.max_distance << " mm from the mesh:";
        for (auto k : too_far)
            msg << ' ' << k << " (" << ea.projection_distance[k] << " mm)";
        throw GeometryError(msg.str());
    }
    return r;
}

/// R u for a FEM coefficient vector u.
inline Eigen::VectorXd restrict_potential(const Restriction& r, const Eigen::VectorXd& u)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(r.size()));
    for (std::size_t k = 0; k < r.size(); ++k)
    {
        double s = 0;
        for (std::size_t j = 0; j < r.rows[k].nnz(); ++j)
            s += r.rows[k].value[j] * u[static_cast<Eigen::Index>(r.rows[k].index[j])];
        out[static_cast<Eigen::Index>(k)] = s;
    }
    return out;
}

inline Eigen::VectorXd mean_centered(Eigen::VectorXd v)
{
    if (v.size())
        v.array() -= v.mean();
    return v;
}

struct TransferMatrix
{
    Modality modality = Modality::eeg;
    // sensors x dofs, column-major: the columns hit by a sparse right-hand
    // side are contiguous
    Eigen::MatrixXd rows;
    std::uint64_t conductor_checksum = 0;
    double tolerance = 0.0;

    std::size_t sensors() const noexcept { return static_cast<std::size_t>(rows.rows()); }
    std::size_t dofs() const noexcept { return static_cast<std::size_t>(rows.cols()); }
};

struct TransferOptions
{
    SolverOptions solver;
    unsigned workers = 1; // 0: hardware concurrency
};

/// Solves A t_k = rhs(k) - mean for every sensor k. Rows are independent and
/// bitwise reproducible for any worker count.
inline TransferMatrix compute_transfer(const StiffnessSystem& system, std::size_t sensors,
                                       const std::function<Eigen::VectorXd(std::size_t)>& row_rhs,
                                       Modality modality, const TransferOptions& options = {})
{
    const auto n = static_cast<Eigen::Index>(system.size());
    TransferMatrix t;
    t.modality = modality;
    t.conductor_checksum = system.conductor_checksum;
    t.tolerance = options.solver.tolerance;
    t.rows.resize(static_cast<Eigen::Index>(sensors), n);
    std::vector<char> ok(sensors, 0);
    std::vector<double> residual(sensors, 0.0);
    parallel_for(sensors, options.workers,
                 [&](std::size_t k)
                 {
                     Eigen::VectorXd r = row_rhs(k);
                     if (r.size() != n)
                         throw std::invalid_argument("transfer row has wrong length");
                     r.array() -= r.mean();
                     auto sol = solve(system, r, options.solver);
                     t.rows.row(static_cast<Eigen::Index>(k)) = sol.coefficients.transpose();
                     ok[k] = sol.converged;
                     residual[k] = sol.residual_norm;
                 });
    std::ostringstream failed;
    for (std::size_t k = 0; k < sensors; ++k)
        if (!ok[k])
            failed << " " << k << " (residual " << residual[k] << ")";
    if (!failed.str().empty())
        throw NumericalError("transfer row solve did not converge for sensors:" + failed.str());
    return t;
}

inline TransferMatrix compute_eeg_transfer(const StiffnessSystem& system, const Restriction& r,
                                           const TransferOptions& options = {})
{
    if (r.dofs != system.size())
        throw std::invalid_argument("restriction and stiffness system differ in size");
    return compute_transfer(
        system, r.size(), [&](std::size_t k) { return r.rows[k].dense(system.size()); }, Modality::eeg, options);
}

/// T b. The sparse path touches only the stored entries of b.
inline Eigen::VectorXd transfer_product(const TransferMatrix& t, const SourceModelOutput& output)
{
    const auto rows = t.rows.rows();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(rows);
    if (output.is_sparse())
    {
        const auto& b = output.sparse();
        for (std::size_t j = 0; j < b.nnz(); ++j)
            if (b.index[j] >= t.dofs())
                throw std::invalid_argument("right-hand side index exceeds transfer matrix width");
        for (std::size_t j = 0; j < b.nnz(); ++j)
        {
            const double* col = t.rows.data() + static_cast<Eigen::Index>(b.index[j]) * rows;
            const double v = b.value[j];
            for (Eigen::Index k = 0; k < rows; ++k)
                out[k] += col[k] * v;
        }
    }
    else
    {
        if (static_cast<std::size_t>(output.dense().size()) != t.dofs())
            throw std::invalid_argument("right-hand side length differs from transfer matrix width");
        out.noalias() = t.rows * output.dense();
    }
    return out;
}

/// EEG: T b, plus the singularity potential at the evaluation points when the
/// model requires it, mean-centered over the montage.
inline Eigen::VectorXd apply_eeg_transfer(const TransferMatrix& t, const SourceModelOutput& output,
                                          const ElectrodeArray& electrodes)
{
    if (t.modality != Modality::eeg)
        throw ConfigError("modality mismatch: EEG query on a " + std::string(to_string(t.modality)) +
                          " transfer matrix");
    if (electrodes.size() != t.sensors())
        throw std::invalid_argument("electrode count differs from transfer matrix rows");
    return mean_centered(post_process(output, transfer_product(t, output), electrodes.evaluation_points));
}

// Binary container: magic "MEEGTRF1", u32 modality, u64 rows, u64 cols,
// u64 conductor checksum, f64 tolerance, rows*cols f64 (row-major), u64
// FNV-1a of the data bytes. All little-endian.

inline constexpr char transfer_magic[8] = {'M', 'E', 'E', 'G', 'T', 'R', 'F', '1'};

namespace detail
{

template <typename T>
void write_le(std::ostream& out, T v)
{
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b, b + sizeof(T));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path)
{
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T)))
        throw ConfigError(path + ": truncated transfer file");
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

} // namespace detail

struct TransferHeader
{
    Modality modality;
    std::uint64_t rows, cols, conductor_checksum;
    double tolerance;
};

inline void save_transfer(const TransferMatrix& t, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write file '" + path + "'");
    out.write(transfer_magic, 8);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.modality));
    detail::write_le<std::uint64_t>(out, t.sensors());
    detail::write_le<std::uint64_t>(out, t.dofs());
    detail::write_le<std::uint64_t>(out, t.conductor_checksum);
    detail::write_le<double>(out, t.tolerance);
    Fnv1a h;
    for (Eigen::Index i = 0; i < t.rows.rows(); ++i)
        for (Eigen::Index j = 0; j < t.rows.cols(); ++j)
        {
            const double v = t.rows(i, j);
            detail::write_le<double>(out, v);
            h.add(v);
        }
    detail::write_le<std::uint64_t>(out, h.value());
    if (!out)
        throw ConfigError("failed writing '" + path + "'");
}

inline TransferHeader read_transfer_header(std::istream& in, const std::string& path)
{
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, transfer_magic, 8) != 0)
        throw ConfigError(path + ": not a transfer matrix file (bad magic)");
    TransferHeader h{};
    auto m = detail::read_le<std::uint32_t>(in, path);
    if (m != 1 && m != 2)
        throw ConfigError(path + ": unknown modality tag " + std::to_string(m));
    h.modality = static_cast<Modality>(m);
    h.rows = detail::read_le<std::uint64_t>(in, path);
    h.cols = detail::read_le<std::uint64_t>(in, path);
    h.conductor_checksum = detail::read_le<std::uint64_t>(in, path);
    h.tolerance = detail::read_le<double>(in, path);
    return h;
}

inline TransferHeader read_transfer_header(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open file '" + path + "'");
    return read_transfer_header(in, path);
}

/// Loads a transfer matrix; when `expected_checksum` is given, a file built
/// for a different conductor is rejected.
inline TransferMatrix load_transfer(const std::string& path, std::optional<std::uint64_t> expected_checksum = {})
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open file '" + path + "'");
    auto h = read_transfer_header(in, path);
    if (expected_checksum && *expected_checksum != h.conductor_checksum)
        throw ConfigError("transfer matrix '" + path + "' was computed for a different volume conductor (checksum " +
                          std::to_string(h.conductor_checksum) + ", expected " + std::to_string(*expected_checksum) +
                          ")");
    TransferMatrix t;
    t.modality = h.modality;
    t.conductor_checksum = h.conductor_checksum;
    t.tolerance = h.tolerance;
    t.rows.resize(static_cast<Eigen::Index>(h.rows), static_cast<Eigen::Index>(h.cols));
    Fnv1a hash;
    for (Eigen::Index i = 0; i < t.rows.rows(); ++i)
        for (Eigen::Index j = 0; j < t.rows.cols(); ++j)
        {
            const double v = detail::read_le<double>(in, path);
            t.rows(i, j) = v;
            hash.add(v);
        }
    if (detail::read_le<std::uint64_t>(in, path) != hash.value())
        throw ConfigError(path + ": transfer matrix data checksum mismatch (file corrupted)");
    return t;
}

} // namespace meeg
