#include <meegfem/solver.hpp>
#include <meegfem/sources.hpp>
#include <meegfem/stiffness.hpp>

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace meeg;

namespace
{

struct Problem
{
    VolumeConductor vc;
    ElementLocator locator;
    SourceContext ctx;

    explicit Problem(VolumeConductor conductor)
        : vc(std::move(conductor)), locator(vc.mesh()), ctx(vc, locator)
    {}
};

VolumeConductor unit_tet()
{
    Mesh m(ElementKind::tetrahedron, {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {0, 1, 2, 3}, {1});
    return fixtures::with_conductivities(std::move(m), {{1, 1.0}});
}

VolumeConductor sphere(ElementKind kind, std::array<int, 3> levels, std::map<int, double> sigma)
{
    fixtures::SphereMeshSpec spec;
    spec.levels.assign(levels.begin(), levels.end());
    spec.kind = kind;
    return fixtures::with_conductivities(fixtures::sphere_mesh(spec), sigma);
}

SourceModelConfig config(SourceModelKind k)
{
    SourceModelConfig c;
    c.kind = k;
    return c;
}

} // namespace

TEST(PartialIntegration, ReferenceTetrahedron)
{
    Problem s(unit_tet());
    auto out = bind(config(SourceModelKind::partial_integration), s.ctx, {Vec3(0.2, 0.2, 0.2), Vec3(1, 0, 0)})
                   .assemble();
    ASSERT_TRUE(out.is_sparse());
    EXPECT_FALSE(out.post);
    const auto& b = out.sparse();
    ASSERT_EQ(b.nnz(), 4u);
    const double expected[4] = {-1, 1, 0, 0};
    for (std::size_t k = 0; k < 4; ++k)
    {
        EXPECT_EQ(b.index[k], k);
        EXPECT_NEAR(b.value[k], expected[k], 1e-15);
    }
}

TEST(PartialIntegration, HexEntriesAndZeroSum)
{
    Problem s(fixtures::with_conductivities(
        fixtures::box_mesh(ElementKind::hexahedron, {3, 3, 3}, Vec3::Zero(), Vec3(3, 3, 3)), {{1, 1.0}}));
    auto out = bind(config(SourceModelKind::partial_integration), s.ctx, {Vec3(1.3, 1.6, 1.45), Vec3(0.3, -1, 2)})
                   .assemble();
    EXPECT_EQ(out.sparse().nnz(), 8u);
    double norm = 0;
    for (double v : out.sparse().value)
        norm += v * v;
    EXPECT_LE(std::abs(out.sum()), 1e-14 * std::sqrt(norm));
}

TEST(SourceModels, LinearInMoment)
{
    Problem s(sphere(ElementKind::tetrahedron, {3, 1, 1}, {{1, 0.33}, {2, 0.0042}, {3, 0.33}}));
    const Vec3 x(5, -8, 20);
    const Vec3 m1(1, 2, -0.5), m2(-0.7, 0.1, 3);
    for (auto k : {SourceModelKind::partial_integration, SourceModelKind::venant, SourceModelKind::subtraction})
    {
        auto c = config(k);
        std::size_t n = s.vc.mesh().num_vertices();
        auto b1 = bind(c, s.ctx, {x, m1}).assemble().to_dense(n);
        auto b2 = bind(c, s.ctx, {x, m2}).assemble().to_dense(n);
        auto b12 = bind(c, s.ctx, {x, 2.0 * m1 - 3.0 * m2}).assemble().to_dense(n);
        EXPECT_LE((b12 - (2.0 * b1 - 3.0 * b2)).norm(), 1e-12 * b12.norm()) << to_string(k);
        auto b0 = bind(c, s.ctx, {x, Vec3::Zero()}).assemble().to_dense(n);
        EXPECT_EQ(b0.norm(), 0.0) << to_string(k);
    }
}

TEST(SourceModels, BindErrors)
{
    Problem s(sphere(ElementKind::tetrahedron, {3, 1, 1}, {{1, 0.33}, {2, 0.0042}, {3, 0.33}}));
    EXPECT_THROW(bind(config(SourceModelKind::venant), s.ctx, {Vec3(0, 0, 200), Vec3(1, 0, 0)}), GeometryError);

    auto mesh = fixtures::box_mesh(ElementKind::tetrahedron, {2, 2, 2}, Vec3::Zero(), Vec3(2, 2, 2));
    std::vector<ConductivityTensor> t(mesh.num_elements(), ConductivityTensor({1.0, 0.0, 0.0, 0.5, 0.0, 0.2}));
    Problem aniso(VolumeConductor(std::move(mesh), std::move(t)));
    EXPECT_THROW(bind(config(SourceModelKind::subtraction), aniso.ctx, {Vec3(1, 1, 1), Vec3(1, 0, 0)}), ConfigError);
    EXPECT_NO_THROW(bind(config(SourceModelKind::partial_integration), aniso.ctx, {Vec3(1, 1, 1), Vec3(1, 0, 0)}));
}

// Independent oracle: solve the primal normal equations (X^T X + lambda I) q
// = X^T t built entry by entry.
TEST(Venant, MatchesNormalEquations)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<Vec3> pts;
    for (int i = 0; i < 15; ++i)
        pts.emplace_back(u(rng), u(rng), u(rng));
    const Vec3 x(0.1, -0.2, 0.3), m(2.0, -1.0, 0.5);
    VenantOptions opt;
    opt.exact_zero_sum = false;
    auto q = venant_loads(pts, x, m, opt);

    const std::size_t k = pts.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
        {
            double s = 0;
            for (int c = 0; c < 3; ++c)
            {
                double di = (pts[i][c] - x[c]) / 20.0, dj = (pts[j][c] - x[c]) / 20.0;
                s += 1.0 + di * dj + di * di * dj * dj;
            }
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s + (i == j ? 1e-6 : 0.0);
        }
    for (std::size_t i = 0; i < k; ++i)
        for (int c = 0; c < 3; ++c)
            rhs[static_cast<Eigen::Index>(i)] += (pts[i][c] - x[c]) / 20.0 * m[c] / 20.0;
    Eigen::VectorXd oracle = a.fullPivLu().solve(rhs);
    for (std::size_t i = 0; i < k; ++i)
        EXPECT_NEAR(q[i], oracle[static_cast<Eigen::Index>(i)], 1e-7 * oracle.cwiseAbs().maxCoeff());

    // moments are reproduced
    Vec3 dip = Vec3::Zero();
    double total = 0;
    for (std::size_t i = 0; i < k; ++i)
    {
        dip += q[i] * (pts[i] - x);
        total += q[i];
    }
    EXPECT_LE((dip - m).norm(), 1e-4 * m.norm());
    EXPECT_LE(std::abs(total), 1e-4 * m.norm() / 20.0);
}

TEST(Venant, ZeroSumConstraintIsExactAndSmall)
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<Vec3> pts;
    for (int i = 0; i < 13; ++i)
        pts.emplace_back(u(rng), u(rng), u(rng));
    const Vec3 x(0.3, 0.1, -0.2), m(-1.0, 0.4, 2.0);
    VenantOptions free;
    free.exact_zero_sum = false;
    auto q0 = venant_loads(pts, x, m, free);
    auto q1 = venant_loads(pts, x, m);
    double sum = 0, norm = 0, diff = 0;
    Vec3 dip = Vec3::Zero();
    for (std::size_t i = 0; i < pts.size(); ++i)
    {
        sum += q1[i];
        norm += q1[i] * q1[i];
        diff += (q1[i] - q0[i]) * (q1[i] - q0[i]);
        dip += q1[i] * (pts[i] - x);
    }
    EXPECT_LE(std::abs(sum), 1e-14 * std::sqrt(norm));
    EXPECT_LE(std::sqrt(diff), 1e-3 * std::sqrt(norm));
    EXPECT_LE((dip - m).norm(), 1e-4 * m.norm());
}

TEST(Venant, MirrorSymmetricNeighbourhoodGivesAntisymmetricLoads)
{
    const Vec3 x(1, 2, 3);
    std::vector<Vec3> pts;
    for (int c = 0; c < 3; ++c)
        for (double s : {-1.0, 1.0})
        {
            Vec3 p = x;
            p[c] += 1.5 * s;
            pts.push_back(p);
        }
    auto q = venant_loads(pts, x, Vec3(4, 0, 0));
    EXPECT_NEAR(q[0], -q[1], 1e-12);
    EXPECT_LT(q[0], 0.0);
    for (std::size_t i = 2; i < 6; ++i)
        EXPECT_NEAR(q[i], 0.0, 1e-12);
}

TEST(Venant, ZeroSumWithinRegularization)
{
    Problem s(sphere(ElementKind::tetrahedron, {3, 1, 1}, {{1, 0.33}, {2, 0.0042}, {3, 0.33}}));
    auto out = bind(config(SourceModelKind::venant), s.ctx, {Vec3(3, 10, -25), Vec3(0.2, 0.9, 0.4)}).assemble();
    double norm = 0;
    for (double v : out.sparse().value)
        norm += v * v;
    EXPECT_LE(std::abs(out.sum()), 1e-8 * std::sqrt(norm));
}

TEST(SourceModels, SparseEntryCountsBoundedUnderRefinement)
{
    const Vec3 x(4, -6, 30), m(0, 1, 0);
    std::size_t max_ring = 0;
    for (int level : {2, 4, 8})
    {
        Problem s(sphere(ElementKind::tetrahedron, {level, (level + 1) / 2, (level + 1) / 2},
                       {{1, 0.33}, {2, 0.0042}, {3, 0.33}}));
        for (std::size_t v = 0; v < s.vc.mesh().num_vertices(); ++v)
            max_ring = std::max(max_ring, s.ctx.adjacency()[v].size() + 1);
        auto pi = bind(config(SourceModelKind::partial_integration), s.ctx, {x, m}).assemble();
        auto ve = bind(config(SourceModelKind::venant), s.ctx, {x, m}).assemble();
        EXPECT_LE(pi.sparse().nnz(), 8u);
        EXPECT_LE(ve.sparse().nnz(), max_ring);
        EXPECT_LE(ve.sparse().nnz(), 27u);
    }
}

TEST(Subtraction, SingularityGradientMatchesFiniteDifferences)
{
    SingularityPotential u{{Vec3(1, 2, 3), Vec3(0.5, -1, 2)}, 0.33};
    const Vec3 x(4, -1, 7);
    const double h = 1e-5;
    for (int c = 0; c < 3; ++c)
    {
        Vec3 e = Vec3::Zero();
        e[c] = h;
        double fd = (u.value(x + e) - u.value(x - e)) / (2 * h);
        EXPECT_NEAR(u.gradient(x)[c], fd, 1e-7 * u.gradient(x).norm());
    }
    EXPECT_THROW(u.value(Vec3(1, 2, 3)), GeometryError);
}

TEST(Subtraction, HomogeneousRhsHasOnlyBoundaryTerm)
{
    Problem s(sphere(ElementKind::tetrahedron, {3, 1, 1}, {{1, 0.33}, {2, 0.33}, {3, 0.33}}));
    auto c = config(SourceModelKind::subtraction);
    c.subtraction.project_compatible = false;
    auto out = bind(c, s.ctx, {Vec3(0, 0, 20), Vec3(0, 0, 1)}).assemble();
    ASSERT_FALSE(out.is_sparse());
    ASSERT_TRUE(out.post);
    EXPECT_DOUBLE_EQ(out.post->sigma_infinity, 0.33);
    // interior vertices receive nothing
    const Mesh& mesh = s.vc.mesh();
    std::vector<bool> on_boundary(mesh.num_vertices(), false);
    for (const auto& bf : mesh.boundary_faces())
        for (std::size_t k = 0; k < 3; ++k)
            on_boundary[mesh.face_vertices(bf.element, bf.face)[k]] = true;
    for (std::size_t v = 0; v < mesh.num_vertices(); ++v)
    {
        if (!on_boundary[v])
        {
            EXPECT_EQ(out.dense()[static_cast<Eigen::Index>(v)], 0.0);
        }
    }
    // raw sum equals minus the dipole's total flux through the boundary, zero
    // up to quadrature error
    EXPECT_LE(std::abs(out.sum()), 1e-2 * out.dense().cwiseAbs().sum());

    auto projected = bind(config(SourceModelKind::subtraction), s.ctx, {Vec3(0, 0, 20), Vec3(0, 0, 1)}).assemble();
    EXPECT_LE(std::abs(projected.sum()), 1e-12 * projected.dense().norm());
}

TEST(Subtraction, PostProcessAddsSingularity)
{
    Problem s(unit_tet());
    SourceModelOutput none{SparseVector{}, std::nullopt};
    std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0)};
    Eigen::VectorXd v(2);
    v << 1.0, 2.0;
    EXPECT_EQ(post_process(none, v, pts), v);

    auto out = bind(config(SourceModelKind::subtraction), s.ctx, {Vec3(0.2, 0.2, 0.2), Vec3(1, 0, 0)}).assemble();
    auto w = post_process(out, v, pts);
    for (int k = 0; k < 2; ++k)
    {
        Vec3 d = pts[static_cast<std::size_t>(k)] - Vec3(0.2, 0.2, 0.2);
        double u_inf = d[0] / (4 * pi * 1.0 * std::pow(d.norm(), 3));
        EXPECT_NEAR(w[k], v[k] + u_inf, 1e-14);
    }
    std::vector<Vec3> bad{Vec3(0.2, 0.2, 0.2), Vec3(1, 0, 0)};
    EXPECT_THROW(post_process(out, v, bad), GeometryError);
}

// The two numerical solutions of the same homogeneous problem agree at the
// outer surface.
TEST(Subtraction, AgreesWithPartialIntegrationOnHomogeneousSphere)
{
    Problem s(sphere(ElementKind::hexahedron, {12, 3, 3}, {{1, 0.33}, {2, 0.33}, {3, 0.33}}));
    auto sys = assemble_stiffness(s.vc);
    const Dipole dp{Vec3(5, 3, 30), Vec3(0.2, 0.3, 0.93).normalized()};
    auto pts = fixtures::fibonacci_sphere(30, 92.0);
    const Mesh& mesh = s.vc.mesh();
    KdTree boundary(mesh.vertices());

    auto sample = [&](SourceModelKind k)
    {
        auto out = bind(config(k), s.ctx, dp).assemble();
        auto sol = out.is_sparse() ? solve(sys, out.sparse()) : solve(sys, out.dense());
        EXPECT_TRUE(sol.converged);
        Eigen::VectorXd v(static_cast<Eigen::Index>(pts.size()));
        std::vector<Vec3> at;
        for (std::size_t i = 0; i < pts.size(); ++i)
        {
            std::size_t nv = boundary.nearest(pts[i]);
            at.push_back(mesh.vertex(nv));
            v[static_cast<Eigen::Index>(i)] = sol.coefficients[static_cast<Eigen::Index>(nv)];
        }
        v = post_process(out, v, at);
        return Eigen::VectorXd(v.array() - v.mean());
    };
    auto vpi = sample(SourceModelKind::partial_integration);
    auto vsub = sample(SourceModelKind::subtraction);
    EXPECT_LT((vpi - vsub).norm() / vsub.norm(), 0.05);
}
