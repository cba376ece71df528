#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iostream>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace meeg
{

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Dense row-major matrix used for potentials, lead fields and transfer rows.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t no_index = static_cast<std::size_t>(-1);

/// mu0 / (4 pi) in the fixed unit system: lengths in mm, dipole moments in
/// nA*mm, conductivities in S/m. Fields then come out in fT.
/// (1e-7 T*m/A) * (1e-12 A*m) / (1e-6 m^2) = 1e-13 T = 0.1 fT.
inline constexpr double mu0_over_4pi = 0.1;

inline constexpr double pi = 3.14159265358979323846;

// Error taxonomy. Input and configuration problems map to CLI exit code 2,
// numerical and geometric failures to exit code 3.
struct Error : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error
{
    using Error::Error;
};

struct ParseError : Error
{
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), line_number(line)
    {}

    std::size_t line_number;
};

struct MeshError : Error
{
    using Error::Error;
};

struct NumericalError : Error
{
    using Error::Error;
};

struct GeometryError : Error
{
    using Error::Error;
};

namespace log
{

using Handler = std::function<void(std::string_view)>;

inline Handler& handler()
{
    static Handler h = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
    return h;
}

inline std::mutex& handler_mutex()
{
    static std::mutex m;
    return m;
}

inline void set_handler(Handler h)
{
    std::lock_guard lock(handler_mutex());
    handler() = std::move(h);
}

inline void warn(std::string_view msg)
{
    std::lock_guard lock(handler_mutex());
    if (handler())
        handler()(msg);
}

} // namespace log

/// 64-bit FNV-1a, used to tie persisted transfer matrices to a volume conductor.
class Fnv1a
{
public:
    void add_bytes(const void* data, std::size_t size)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i)
        {
            m_state ^= p[i];
            m_state *= 0x100000001b3ULL;
        }
    }

    template <typename T>
    void add(const T& value)
    {
        add_bytes(&value, sizeof(T));
    }

    template <typename T>
    void add_span(std::span<const T> values)
    {
        add_bytes(values.data(), values.size_bytes());
    }

    std::uint64_t value() const noexcept { return m_state; }

private:
    std::uint64_t m_state = 0xcbf29ce484222325ULL;
};

} // namespace meeg
