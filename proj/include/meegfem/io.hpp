#pragma once

#include "common.hpp"
#include "conductivity.hpp"
#include "mesh.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

namespace meeg
{

namespace detail
{

inline std::ifstream open_input(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open file '" + path + "'");
    return in;
}

inline std::vector<std::string> split_ws(std::string_view line)
{
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size())
    {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
            ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])))
            ++j;
        if (j > i)
            out.emplace_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string_view strip_comment(std::string_view line)
{
    auto pos = line.find('#');
    return pos == std::string_view::npos ? line : line.substr(0, pos);
}

template <typename T>
bool parse_number(const std::string& token, T& value)
{
    if constexpr (std::is_floating_point_v<T>)
    {
        // strtod for portability of exponent/inf handling
        char* end = nullptr;
        value = std::strtod(token.c_str(), &end);
        return end == token.c_str() + token.size() && !token.empty();
    }
    else
    {
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        return ec == std::errc() && ptr == token.data() + token.size();
    }
}

/// Reads whitespace-separated numeric records, skipping blank lines and
/// '#' comments. Every record must have one of the allowed field counts.
inline std::vector<std::vector<double>> read_records(const std::string& path, std::initializer_list<std::size_t> counts)
{
    auto in = open_input(path);
    std::vector<std::vector<double>> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        auto tokens = split_ws(strip_comment(line));
        if (tokens.empty())
            continue;
        if (std::find(counts.begin(), counts.end(), tokens.size()) == counts.end())
            throw ParseError(path, lineno, "unexpected field count " + std::to_string(tokens.size()));
        std::vector<double> rec(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (!parse_number(tokens[i], rec[i]) || !std::isfinite(rec[i]))
                throw ParseError(path, lineno, "invalid number '" + tokens[i] + "'");
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace detail

/// Reads the Gmsh 2.2 ASCII subset: $MeshFormat, $Nodes, $Elements.
/// Volume element types 4 (tet4) and 5 (hex8) are accepted; the first
/// element tag is the tissue label. Point, line and surface elements
/// (types 15, 1, 2, 3) and unknown sections are skipped with a warning.
inline Mesh load_mesh(const std::string& path)
{
    auto in = detail::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    auto next = [&](const char* what) -> std::string {
        if (!std::getline(in, line))
            throw ParseError(path, lineno, std::string("unexpected end of file, expected ") + what);
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        return line;
    };
    auto expect = [&](const char* tag) {
        auto l = next(tag);
        if (l != tag)
            throw ParseError(path, lineno, std::string("expected ") + tag);
    };

    bool have_format = false, have_nodes = false, have_elements = false;
    std::vector<Vec3> vertices;
    std::map<long, std::size_t> node_index;
    std::vector<std::size_t> connectivity;
    std::vector<int> labels;
    std::optional<int> element_type;
    std::size_t skipped_lower_dim = 0;

    while (std::getline(in, line))
    {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        if (line == "$MeshFormat")
        {
            auto t = detail::split_ws(next("format line"));
            if (t.size() < 3)
                throw ParseError(path, lineno, "malformed $MeshFormat line");
            if (t[0].rfind("2.", 0) != 0)
                throw ParseError(path, lineno, "unsupported MSH version " + t[0] + " (expected 2.x)");
            if (t[1] != "0")
                throw ParseError(path, lineno, "binary MSH files are not supported");
            expect("$EndMeshFormat");
            have_format = true;
        }
        else if (line == "$Nodes")
        {
            std::size_t n = 0;
            if (!detail::parse_number(detail::split_ws(next("node count")).at(0), n))
                throw ParseError(path, lineno, "invalid node count");
            vertices.reserve(n);
            for (std::size_t i = 0; i < n; ++i)
            {
                auto t = detail::split_ws(next("node record"));
                long id = 0;
                Vec3 x;
                if (t.size() != 4 || !detail::parse_number(t[0], id) || !detail::parse_number(t[1], x[0]) ||
                    !detail::parse_number(t[2], x[1]) || !detail::parse_number(t[3], x[2]))
                    throw ParseError(path, lineno, "malformed node record");
                if (!node_index.emplace(id, vertices.size()).second)
                    throw ParseError(path, lineno, "duplicate node id " + t[0]);
                vertices.push_back(x);
            }
            expect("$EndNodes");
            have_nodes = true;
        }
        else if (line == "$Elements")
        {
            if (!have_nodes)
                throw ParseError(path, lineno, "$Elements before $Nodes");
            std::size_t n = 0;
            if (!detail::parse_number(detail::split_ws(next("element count")).at(0), n))
                throw ParseError(path, lineno, "invalid element count");
            for (std::size_t i = 0; i < n; ++i)
            {
                auto t = detail::split_ws(next("element record"));
                std::vector<long> v(t.size());
                for (std::size_t k = 0; k < t.size(); ++k)
                    if (!detail::parse_number(t[k], v[k]))
                        throw ParseError(path, lineno, "malformed element record");
                if (v.size() < 3)
                    throw ParseError(path, lineno, "malformed element record");
                int type = static_cast<int>(v[1]);
                std::size_t ntags = static_cast<std::size_t>(v[2]);
                if (type == 1 || type == 2 || type == 3 || type == 15)
                {
                    ++skipped_lower_dim;
                    continue;
                }
                if (type != 4 && type != 5)
                    throw ParseError(path, lineno, "unsupported element type " + std::to_string(type));
                if (element_type && *element_type != type)
                    throw ParseError(path, lineno, "mixed element kinds (tetrahedra and hexahedra) are not supported");
                element_type = type;
                std::size_t nv = type == 4 ? 4 : 8;
                if (v.size() != 3 + ntags + nv)
                    throw ParseError(path, lineno, "element record has wrong node count");
                labels.push_back(ntags > 0 ? static_cast<int>(v[3]) : 0);
                for (std::size_t k = 0; k < nv; ++k)
                {
                    auto it = node_index.find(v[3 + ntags + k]);
                    if (it == node_index.end())
                        throw ParseError(path, lineno, "dangling node reference " + std::to_string(v[3 + ntags + k]));
                    connectivity.push_back(it->second);
                }
            }
            expect("$EndElements");
            have_elements = true;
        }
        else if (line.size() > 1 && line[0] == '$')
        {
            std::string end = "$End" + line.substr(1);
            log::warn(path + ":" + std::to_string(lineno) + ": skipping unknown section " + line);
            std::size_t start = lineno;
            while (true)
            {
                if (!std::getline(in, line))
                    throw ParseError(path, start, "unterminated section, expected " + end);
                ++lineno;
                if (!line.empty() && line.back() == '\r')
                    line.pop_back();
                if (line == end)
                    break;
            }
        }
        else
        {
            throw ParseError(path, lineno, "unexpected content outside of a section");
        }
    }
    if (!have_format)
        throw ParseError(path, lineno, "missing $MeshFormat section");
    if (!have_elements || !element_type)
        throw ParseError(path, lineno, "no volume elements found");
    if (skipped_lower_dim > 0)
        log::warn(path + ": skipped " + std::to_string(skipped_lower_dim) + " point/line/surface elements");

    auto kind = *element_type == 4 ? ElementKind::tetrahedron : ElementKind::hexahedron;
    return Mesh(kind, std::move(vertices), std::move(connectivity), std::move(labels));
}

/// Writes the mesh in the same Gmsh 2.2 ASCII subset (1-based ids,
/// two tags: label and elementary entity = label).
inline void write_mesh(const Mesh& mesh, std::ostream& out)
{
    out << "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n";
    out << "$Nodes\n" << mesh.num_vertices() << '\n';
    out << std::setprecision(17);
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i)
    {
        const auto& v = mesh.vertex(i);
        out << i + 1 << ' ' << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    }
    out << "$EndNodes\n$Elements\n" << mesh.num_elements() << '\n';
    const int type = mesh.kind() == ElementKind::tetrahedron ? 4 : 5;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
    {
        out << e + 1 << ' ' << type << " 2 " << mesh.label(e) << ' ' << mesh.label(e);
        for (auto v : mesh.element(e))
            out << ' ' << v + 1;
        out << '\n';
    }
    out << "$EndElements\n";
}

inline void write_mesh(const Mesh& mesh, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write file '" + path + "'");
    write_mesh(mesh, out);
}

/// Conductivity file: `label sigma` (isotropic) or
/// `label xx xy xz yy yz zz` per line, '#' comments.
inline std::map<int, ConductivityTensor> read_conductivity_table(const std::string& path)
{
    auto records = detail::read_records(path, {2, 7});
    std::map<int, ConductivityTensor> table;
    std::size_t idx = 0;
    for (const auto& r : records)
    {
        ++idx;
        int label = static_cast<int>(r[0]);
        if (static_cast<double>(label) != r[0])
            throw ConfigError(path + ": record " + std::to_string(idx) + ": label must be an integer");
        try
        {
            auto t = r.size() == 2 ? ConductivityTensor::isotropic(r[1])
                                   : ConductivityTensor({r[1], r[2], r[3], r[4], r[5], r[6]});
            if (!table.emplace(label, t).second)
                throw ConfigError("duplicate binding for label " + std::to_string(label));
        }
        catch (const ConfigError& e)
        {
            throw ConfigError(path + ": record " + std::to_string(idx) + ": " + e.what());
        }
    }
    return table;
}

inline VolumeConductor load_conductivities(const std::string& path, Mesh mesh)
{
    return VolumeConductor::from_labels(std::move(mesh), read_conductivity_table(path));
}

struct Dipole
{
    Vec3 position;
    Vec3 moment; // nA*mm
};

struct Coil
{
    Vec3 position;
    Vec3 orientation; // unit magnetometer axis
};

inline std::vector<Vec3> read_points(const std::string& path)
{
    std::vector<Vec3> out;
    for (const auto& r : detail::read_records(path, {3}))
        out.emplace_back(r[0], r[1], r[2]);
    return out;
}

inline std::vector<Dipole> read_dipoles(const std::string& path)
{
    std::vector<Dipole> out;
    for (const auto& r : detail::read_records(path, {6}))
        out.push_back({Vec3(r[0], r[1], r[2]), Vec3(r[3], r[4], r[5])});
    return out;
}

inline std::vector<Coil> read_coils(const std::string& path)
{
    std::vector<Coil> out;
    std::size_t idx = 0;
    for (const auto& r : detail::read_records(path, {6}))
    {
        Vec3 n(r[3], r[4], r[5]);
        if (n.norm() == 0.0)
            throw ConfigError(path + ": coil " + std::to_string(idx) + " has zero orientation");
        out.push_back({Vec3(r[0], r[1], r[2]), n.normalized()});
        ++idx;
    }
    return out;
}

inline std::vector<double> read_values(const std::string& path)
{
    auto in = detail::open_input(path);
    std::vector<double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        for (const auto& tok : detail::split_ws(detail::strip_comment(line)))
        {
            double v = 0.0;
            if (!detail::parse_number(tok, v))
                throw ParseError(path, lineno, "invalid number '" + tok + "'");
            out.push_back(v);
        }
    }
    return out;
}

inline void write_matrix_text(const RowMatrix& m, std::ostream& out)
{
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out << (j ? " " : "") << m(i, j);
        out << '\n';
    }
}

template <typename Range>
void write_points(const Range& points, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write file '" + path + "'");
    out << std::setprecision(17);
    for (const Vec3& p : points)
        out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
}

} // namespace meeg
