#pragma once

#include "common.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace meeg
{

struct QuadraturePoint
{
    Vec3 local;    // reference coordinates (unused trailing components are 0)
    double weight; // weight w.r.t. the reference measure
};

using QuadratureRule = std::vector<QuadraturePoint>;

/// Gauss-Legendre nodes and weights on [0, 1].
inline std::vector<std::pair<double, double>> gauss_legendre_01(int n)
{
    if (n < 1)
        throw std::invalid_argument("gauss_legendre_01: n must be >= 1");

    std::vector<std::pair<double, double>> out(static_cast<std::size_t>(n));
    for (int i = 0; i < (n + 1) / 2; ++i)
    {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int iter = 0; iter < 100; ++iter)
        {
            double pn = 1.0, pn_1 = 0.0;
            for (int k = 1; k <= n; ++k)
            {
                double pn_2 = pn_1;
                pn_1 = pn;
                pn = ((2.0 * k - 1.0) * x * pn_1 - (k - 1.0) * pn_2) / k;
            }
            dp = n * (x * pn - pn_1) / (x * x - 1.0);
            double dx = pn / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16)
                break;
        }
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[static_cast<std::size_t>(i)] = {0.5 * (1.0 - x), 0.5 * w};
        out[static_cast<std::size_t>(n - 1 - i)] = {0.5 * (1.0 + x), 0.5 * w};
    }
    return out;
}

namespace detail
{

inline QuadratureRule make_hex_rule(int n)
{
    auto g = gauss_legendre_01(n);
    QuadratureRule rule;
    for (auto [x, wx] : g)
        for (auto [y, wy] : g)
            for (auto [z, wz] : g)
                rule.push_back({Vec3(x, y, z), wx * wy * wz});
    return rule;
}

inline QuadratureRule make_quad_rule(int n)
{
    auto g = gauss_legendre_01(n);
    QuadratureRule rule;
    for (auto [x, wx] : g)
        for (auto [y, wy] : g)
            rule.push_back({Vec3(x, y, 0.0), wx * wy});
    return rule;
}

// Collapsed (Duffy) tensor rules for simplices of arbitrary order.
inline QuadratureRule make_tet_rule(int order)
{
    if (order <= 1)
        return {{Vec3(0.25, 0.25, 0.25), 1.0 / 6.0}};
    if (order == 2)
    {
        const double a = 0.5854101966249685, b = 0.1381966011250105;
        return {{Vec3(b, b, b), 1.0 / 24.0},
                {Vec3(a, b, b), 1.0 / 24.0},
                {Vec3(b, a, b), 1.0 / 24.0},
                {Vec3(b, b, a), 1.0 / 24.0}};
    }
    auto g = gauss_legendre_01(order);
    QuadratureRule rule;
    for (auto [u, wu] : g)
        for (auto [v, wv] : g)
            for (auto [w, ww] : g)
            {
                Vec3 p(u, v * (1.0 - u), w * (1.0 - u) * (1.0 - v));
                rule.push_back({p, wu * wv * ww * (1.0 - u) * (1.0 - u) * (1.0 - v)});
            }
    return rule;
}

inline QuadratureRule make_triangle_rule(int order)
{
    if (order <= 1)
        return {{Vec3(1.0 / 3.0, 1.0 / 3.0, 0.0), 0.5}};
    if (order == 2)
        return {{Vec3(1.0 / 6.0, 1.0 / 6.0, 0.0), 1.0 / 6.0},
                {Vec3(2.0 / 3.0, 1.0 / 6.0, 0.0), 1.0 / 6.0},
                {Vec3(1.0 / 6.0, 2.0 / 3.0, 0.0), 1.0 / 6.0}};
    auto g = gauss_legendre_01(order);
    QuadratureRule rule;
    for (auto [u, wu] : g)
        for (auto [v, wv] : g)
            rule.push_back({Vec3(u, v * (1.0 - u), 0.0), wu * wv * (1.0 - u)});
    return rule;
}

enum class RuleShape
{
    tet,
    hex,
    triangle,
    quad
};

inline const QuadratureRule& cached_rule(RuleShape shape, int order)
{
    static std::mutex mutex;
    static std::map<std::pair<int, int>, QuadratureRule> cache;
    std::lock_guard lock(mutex);
    auto key = std::make_pair(static_cast<int>(shape), order);
    auto it = cache.find(key);
    if (it == cache.end())
    {
        QuadratureRule r;
        switch (shape)
        {
        case RuleShape::tet: r = make_tet_rule(order); break;
        case RuleShape::hex: r = make_hex_rule(std::max(order, 1)); break;
        case RuleShape::triangle: r = make_triangle_rule(order); break;
        case RuleShape::quad: r = make_quad_rule(std::max(order, 1)); break;
        }
        it = cache.emplace(key, std::move(r)).first;
    }
    return it->second;
}

} // namespace detail

/// Volume rule on the reference tetrahedron (measure 1/6). Order 1 is the
/// centroid rule, order 2 the 4-point rule exact for quadratics, higher
/// orders use collapsed Gauss products with `order` points per direction.
inline const QuadratureRule& tet_rule(int order)
{
    return detail::cached_rule(detail::RuleShape::tet, std::max(order, 1));
}

/// Tensor Gauss rule on the unit cube with `order` points per direction.
inline const QuadratureRule& hex_rule(int order)
{
    return detail::cached_rule(detail::RuleShape::hex, std::max(order, 1));
}

inline const QuadratureRule& triangle_rule(int order)
{
    return detail::cached_rule(detail::RuleShape::triangle, std::max(order, 1));
}

inline const QuadratureRule& quad_rule(int order)
{
    return detail::cached_rule(detail::RuleShape::quad, std::max(order, 1));
}

} // namespace meeg
