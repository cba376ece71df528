#include <meegfem/solver.hpp>
#include <meegfem/stiffness.hpp>

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace meeg;

namespace
{

VolumeConductor unit_tet(double sigma = 1.0)
{
    Mesh m(ElementKind::tetrahedron, {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {0, 1, 2, 3}, {1});
    return fixtures::with_conductivities(std::move(m), {{1, sigma}});
}

VolumeConductor layered_sphere(ElementKind kind, int inner_levels = 3)
{
    fixtures::SphereMeshSpec spec;
    spec.levels = {inner_levels, 1, 1};
    spec.kind = kind;
    return fixtures::with_conductivities(fixtures::sphere_mesh(spec), {{1, 0.33}, {2, 0.0042}, {3, 0.33}});
}

// Q1 gradient on an axis-aligned box [0,hx]x[0,hy]x[0,hz], written out
// independently of the library's reference element tables.
Vec3 box_q1_gradient(int corner, const Vec3& x, const Vec3& h)
{
    static const int bits[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    double f[3], df[3];
    for (int c = 0; c < 3; ++c)
    {
        double t = x[c] / h[c];
        f[c] = bits[corner][c] ? t : 1 - t;
        df[c] = (bits[corner][c] ? 1.0 : -1.0) / h[c];
    }
    return Vec3(df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]);
}

} // namespace

TEST(Stiffness, ReferenceTetrahedronByHand)
{
    // grad phi = (-1,-1,-1), e_x, e_y, e_z; volume 1/6
    Eigen::Matrix4d expected;
    expected << 3, -1, -1, -1, //
        -1, 1, 0, 0,           //
        -1, 0, 1, 0,           //
        -1, 0, 0, 1;
    expected /= 6.0;
    auto sys = assemble_stiffness(unit_tet());
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            EXPECT_NEAR(sys.matrix.coeff(i, j), expected(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                        1e-15);
    EXPECT_NEAR(sys.matrix.coeff(0, 0), 0.5, 1e-15);
}

TEST(Stiffness, ScalesLinearlyWithConductivity)
{
    auto a = assemble_stiffness(unit_tet(1.0));
    auto b = assemble_stiffness(unit_tet(2.0));
    for (std::size_t k = 0; k < a.matrix.nnz(); ++k)
        EXPECT_EQ(b.matrix.values()[k], 2.0 * a.matrix.values()[k]);

    auto s1 = assemble_stiffness(layered_sphere(ElementKind::tetrahedron));
    fixtures::SphereMeshSpec spec;
    spec.levels = {3, 1, 1};
    auto scaled = fixtures::with_conductivities(fixtures::sphere_mesh(spec), {{1, 0.33 * 0.37}, {2, 0.0042 * 0.37}, {3, 0.33 * 0.37}});
    auto s2 = assemble_stiffness(scaled);
    for (std::size_t k = 0; k < s1.matrix.nnz(); ++k)
        EXPECT_NEAR(s2.matrix.values()[k], 0.37 * s1.matrix.values()[k], 1e-14 * s1.matrix.max_abs());
}

TEST(Stiffness, AxisAlignedHexMatchesHigherOrderQuadrature)
{
    const Vec3 h(1.0, 2.0, 0.5);
    Mesh m = fixtures::box_mesh(ElementKind::hexahedron, {1, 1, 1}, Vec3::Zero(), h);
    Mat3 sigma;
    sigma << 1.0, 0.2, 0.1, 0.2, 0.8, -0.3, 0.1, -0.3, 1.5;
    VolumeConductor vc(m, {ConductivityTensor({1.0, 0.2, 0.1, 0.8, -0.3, 1.5})});
    auto sys = assemble_stiffness(vc);

    const double gp[3] = {0.5 - 0.5 * std::sqrt(0.6), 0.5, 0.5 + 0.5 * std::sqrt(0.6)};
    const double gw[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    Eigen::Matrix<double, 8, 8> oracle = Eigen::Matrix<double, 8, 8>::Zero();
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c)
            {
                Vec3 x(gp[a] * h[0], gp[b] * h[1], gp[c] * h[2]);
                double w = gw[a] * gw[b] * gw[c] * h.prod();
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j)
                        oracle(i, j) += w * (sigma * box_q1_gradient(i, x, h)).dot(box_q1_gradient(j, x, h));
            }
    // corner (dx, dy, dz) of the single box cell is global vertex dx + 2 dy + 4 dz
    const std::size_t global[8] = {0, 1, 3, 2, 4, 5, 7, 6};
    for (std::size_t i = 0; i < 8; ++i)
    {
        double rowsum = 0.0;
        for (std::size_t j = 0; j < 8; ++j)
        {
            EXPECT_NEAR(sys.matrix.coeff(global[i], global[j]),
                        oracle(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 1e-12);
            EXPECT_EQ(sys.matrix.coeff(i, j), sys.matrix.coeff(j, i));
            rowsum += sys.matrix.coeff(i, j);
        }
        EXPECT_NEAR(rowsum, 0.0, 1e-14);
    }
}

TEST(Stiffness, SymmetryNullSpaceAndDiagonal)
{
    for (auto kind : {ElementKind::tetrahedron, ElementKind::hexahedron})
    {
        auto sys = assemble_stiffness(layered_sphere(kind));
        const auto& a = sys.matrix;
        const double amax = a.max_abs();
        for (std::size_t i = 0; i < a.rows(); ++i)
        {
            auto cols = a.row_cols(i);
            auto vals = a.row_values(i);
            double rowsum = 0.0;
            for (std::size_t k = 0; k < cols.size(); ++k)
            {
                EXPECT_EQ(vals[k], a.coeff(cols[k], i)) << "asymmetric at " << i << "," << cols[k];
                rowsum += vals[k];
            }
            EXPECT_LE(std::abs(rowsum), 1e-10 * amax);
            EXPECT_GT(a.coeff(i, i), 0.0);
        }
    }
}

TEST(Stiffness, PositiveOnZeroMeanSubspace)
{
    auto sys = assemble_stiffness(layered_sphere(ElementKind::tetrahedron));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int t = 0; t < 10; ++t)
    {
        Eigen::VectorXd v(static_cast<Eigen::Index>(sys.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i)
            v[i] = g(rng);
        v.array() -= v.mean();
        EXPECT_GT(v.dot(sys.matrix * v), 0.0);
    }
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(sys.size()));
    EXPECT_LE(std::abs(ones.dot(sys.matrix * ones)), 1e-10 * sys.matrix.max_abs() * static_cast<double>(sys.size()));
}

class SolverTest : public ::testing::Test
{
protected:
    static const StiffnessSystem& system()
    {
        static StiffnessSystem sys = assemble_stiffness(layered_sphere(ElementKind::tetrahedron, 4));
        return sys;
    }

    static Eigen::VectorXd random_zero_mean(std::mt19937_64& rng)
    {
        std::normal_distribution<double> g;
        Eigen::VectorXd v(static_cast<Eigen::Index>(system().size()));
        for (Eigen::Index i = 0; i < v.size(); ++i)
            v[i] = g(rng);
        v.array() -= v.mean();
        return v;
    }
};

TEST_F(SolverTest, ZeroRightHandSide)
{
    auto sol = solve(system(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(system().size())));
    EXPECT_EQ(sol.iterations, 0u);
    EXPECT_EQ(sol.coefficients.norm(), 0.0);
    EXPECT_TRUE(sol.converged);
}

TEST_F(SolverTest, ManufacturedSolution)
{
    std::mt19937_64 rng(5);
    for (auto pc : {Preconditioner::jacobi, Preconditioner::symmetric_gauss_seidel, Preconditioner::none})
    {
        Eigen::VectorXd v = random_zero_mean(rng);
        Eigen::VectorXd b = system().matrix * v;
        SolverOptions opt;
        opt.preconditioner = pc;
        auto sol = solve(system(), b, opt);
        EXPECT_TRUE(sol.converged);
        EXPECT_LE(std::abs(sol.coefficients.mean()), 1e-12);
        EXPECT_LE(sol.residual_norm, opt.tolerance);
        // the error is bounded by cond(A) times the residual, not by tol itself
        EXPECT_LE((sol.coefficients - v).norm(), 1e-4 * v.norm());

        opt.tolerance = 1e-12;
        auto tight = solve(system(), b, opt);
        EXPECT_LE((tight.coefficients - v).norm(), 1e-8 * v.norm());
    }
}

TEST_F(SolverTest, IncompatibleRightHandSide)
{
    std::mt19937_64 rng(6);
    Eigen::VectorXd b = random_zero_mean(rng);
    b.array() += 0.1 * b.norm() / static_cast<double>(b.size());
    EXPECT_THROW(solve(system(), b), NumericalError);
}

TEST_F(SolverTest, IterationLimitReturnsBestIterateFlagged)
{
    std::mt19937_64 rng(7);
    Eigen::VectorXd b = system().matrix * random_zero_mean(rng);
    SolverOptions opt;
    opt.max_iterations = 3;
    auto sol = solve(system(), b, opt);
    EXPECT_FALSE(sol.converged);
    EXPECT_EQ(sol.iterations, 3u);
    EXPECT_LT(sol.residual_norm, 1.0);
}

TEST_F(SolverTest, SparseAndDenseRightHandSidesAgree)
{
    SparseVector b;
    b.index = {3, 10, 40};
    b.value = {1.0, -0.25, -0.75};
    auto a = solve(system(), b);
    auto d = solve(system(), b.dense(system().size()));
    EXPECT_EQ(a.coefficients, d.coefficients);
}
