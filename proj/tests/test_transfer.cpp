#include <meegfem/transfer.hpp>

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace meeg;

namespace
{

VolumeConductor layered(ElementKind kind = ElementKind::tetrahedron, std::array<int, 3> levels = {3, 1, 1})
{
    fixtures::SphereMeshSpec spec;
    spec.levels.assign(levels.begin(), levels.end());
    spec.kind = kind;
    return fixtures::with_conductivities(fixtures::sphere_mesh(spec), {{1, 0.33}, {2, 0.0042}, {3, 0.33}});
}

struct Problem
{
    VolumeConductor vc;
    ElementLocator locator;
    SourceContext ctx;
    StiffnessSystem system;

    explicit Problem(VolumeConductor conductor)
        : vc(std::move(conductor)), locator(vc.mesh()), ctx(vc, locator), system(assemble_stiffness(vc))
    {}
};

std::string temp_path(const std::string& name)
{
    return (std::filesystem::temp_directory_path() / ("meegfem_" + name)).string();
}

Eigen::VectorXd direct(const Problem& p, const Restriction& r, const SourceModelOutput& out, double tol)
{
    SolverOptions o;
    o.tolerance = tol;
    auto sol = out.is_sparse() ? solve(p.system, out.sparse(), o) : solve(p.system, out.dense(), o);
    return mean_centered(post_process(out, restrict_potential(r, sol.coefficients), r.electrodes.evaluation_points));
}

} // namespace

TEST(Restriction, VertexElectrodeIsLagrangeRow)
{
    auto vc = layered();
    ElementLocator loc(vc.mesh());
    const std::size_t v = vc.mesh().num_vertices() / 3;
    std::vector<Vec3> pts{vc.mesh().vertex(v)};
    auto r = build_restriction(vc, loc, pts);
    ASSERT_EQ(r.rows[0].nnz(), 1u);
    EXPECT_EQ(r.rows[0].index[0], v);
    EXPECT_NEAR(r.rows[0].value[0], 1.0, 1e-12);
}

TEST(Restriction, TetCentroidGivesQuarterWeights)
{
    auto vc = layered();
    ElementLocator loc(vc.mesh());
    const std::size_t e = 123;
    std::vector<Vec3> pts{vc.mesh().element_center(e)};
    auto r = build_restriction(vc, loc, pts);
    EXPECT_EQ(r.electrodes.element[0], e);
    ASSERT_EQ(r.rows[0].nnz(), 4u);
    auto el = vc.mesh().element(e);
    for (std::size_t k = 0; k < 4; ++k)
    {
        EXPECT_TRUE(std::find(el.begin(), el.end(), r.rows[0].index[k]) != el.end());
        EXPECT_NEAR(r.rows[0].value[k], 0.25, 1e-14);
    }
}

TEST(Restriction, OutsideElectrodeProjectsWithPartitionOfUnity)
{
    for (auto kind : {ElementKind::tetrahedron, ElementKind::hexahedron})
    {
        auto vc = layered(kind);
        ElementLocator loc(vc.mesh());
        auto dirs = fixtures::fibonacci_sphere(20, 1.0);
        std::vector<Vec3> pts;
        for (const auto& d : dirs)
            pts.push_back(97.0 * d);
        auto r = build_restriction(vc, loc, pts);
        for (std::size_t k = 0; k < pts.size(); ++k)
        {
            EXPECT_NEAR(r.rows[k].sum(), 1.0, 1e-12);
            EXPECT_LE(r.rows[k].nnz(), kind == ElementKind::tetrahedron ? 4u : 8u);
            // the surface is a polyhedral approximation of radius 92
            EXPECT_GT(r.electrodes.projection_distance[k], 4.0);
            EXPECT_LT(r.electrodes.projection_distance[k], 8.0);
            EXPECT_NEAR((r.electrodes.evaluation_points[k] - pts[k]).norm(), r.electrodes.projection_distance[k],
                        1e-9);
            // the row interpolates the geometry map at the evaluation point
            Vec3 rec = Vec3::Zero();
            for (std::size_t j = 0; j < r.rows[k].nnz(); ++j)
                rec += r.rows[k].value[j] * vc.mesh().vertex(r.rows[k].index[j]);
            EXPECT_LE((rec - r.electrodes.evaluation_points[k]).norm(), 1e-9);
            if (kind == ElementKind::tetrahedron)
            {
                EXPECT_TRUE(contains(vc.mesh(), r.electrodes.element[k], r.electrodes.evaluation_points[k]));
            }
        }
    }
}

TEST(Restriction, FarElectrodesAreReportedByIndex)
{
    auto vc = layered();
    ElementLocator loc(vc.mesh());
    std::vector<Vec3> pts{Vec3(0, 0, 95), Vec3(0, 0, 150), Vec3(0, 95, 0), Vec3(200, 0, 0)};
    try
    {
        build_restriction(vc, loc, pts);
        FAIL() << "expected GeometryError";
    }
    catch (const GeometryError& e)
    {
        std::string msg = e.what();
        EXPECT_NE(msg.find(" 1 ("), std::string::npos) << msg;
        EXPECT_NE(msg.find(" 3 ("), std::string::npos) << msg;
        EXPECT_EQ(msg.find(" 0 ("), std::string::npos) << msg;
    }
    RestrictionOptions wide;
    wide.max_distance = 200;
    EXPECT_NO_THROW(build_restriction(vc, loc, pts, wide));
}

TEST(Transfer, BipolarRowMatchesDirectDifference)
{
    Problem p(layered());
    const std::size_t a = 10, b = p.vc.mesh().num_vertices() - 20;
    const std::size_t n = p.system.size();
    TransferOptions opt;
    opt.solver.tolerance = 1e-10;
    auto t = compute_transfer(
        p.system, 1,
        [&](std::size_t)
        {
            Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
            r[static_cast<Eigen::Index>(a)] = 1;
            r[static_cast<Eigen::Index>(b)] = -1;
            return r;
        },
        Modality::eeg, opt);
    SourceModelConfig c;
    auto out = bind(c, p.ctx, {Vec3(10, -5, 40), Vec3(0, 1, 0)}).assemble();
    auto sol = solve(p.system, out.sparse(), opt.solver);
    double direct_diff = sol.coefficients[static_cast<Eigen::Index>(a)] - sol.coefficients[static_cast<Eigen::Index>(b)];
    double via_t = transfer_product(t, out)[0];
    EXPECT_NEAR(via_t, direct_diff, 2 * opt.solver.tolerance * sol.coefficients.norm());
    EXPECT_LE(std::abs(t.rows.row(0).sum()), 1e-10 * t.rows.row(0).norm());
}

TEST(Transfer, FullMontageMatchesDirectSolves)
{
    Problem p(layered());
    auto r = build_restriction(p.vc, p.locator, fixtures::fibonacci_sphere(74, 92.0));
    TransferOptions opt;
    opt.solver.tolerance = 1e-10;
    auto t = compute_eeg_transfer(p.system, r, opt);
    ASSERT_EQ(t.sensors(), 74u);
    EXPECT_EQ(t.modality, Modality::eeg);
    EXPECT_EQ(t.conductor_checksum, p.vc.checksum());

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    int done = 0;
    while (done < 10)
    {
        Vec3 x(u(rng), u(rng), u(rng));
        if (x.norm() > 1.0)
            continue;
        x *= 0.8 * 78.0;
        Dipole dp{x, fixtures::random_unit(rng)};
        for (auto kind : {SourceModelKind::partial_integration, SourceModelKind::venant, SourceModelKind::subtraction})
        {
            SourceModelConfig c;
            c.kind = kind;
            auto out = bind(c, p.ctx, dp).assemble();
            auto viat = apply_eeg_transfer(t, out, r.electrodes);
            auto ref = direct(p, r, out, 1e-10);
            EXPECT_LE((viat - ref).cwiseAbs().maxCoeff() / ref.norm(), 1e-6) << to_string(kind);
            if (kind != SourceModelKind::subtraction)
            {
                EXPECT_LE(std::abs(viat.sum()), 1e-10 * viat.norm());
            }
        }
        ++done;
    }
}

TEST(Transfer, ApplicationSemantics)
{
    Problem p(layered());
    auto r = build_restriction(p.vc, p.locator, fixtures::fibonacci_sphere(8, 92.0));
    auto t = compute_eeg_transfer(p.system, r);
    SourceModelOutput empty{SparseVector{}, std::nullopt};
    EXPECT_EQ(transfer_product(t, empty).norm(), 0.0);
    EXPECT_EQ(apply_eeg_transfer(t, empty, r.electrodes).norm(), 0.0);

    SourceModelOutput unit{SparseVector{{42}, {1.0}}, std::nullopt};
    EXPECT_EQ(transfer_product(t, unit), Eigen::VectorXd(t.rows.col(42)));

    Eigen::VectorXd dense = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.dofs()));
    dense[42] = 1.0;
    SourceModelOutput as_dense{dense, std::nullopt};
    EXPECT_LE((transfer_product(t, as_dense) - t.rows.col(42)).norm(), 1e-15 * t.rows.col(42).norm());

    TransferMatrix meg = t;
    meg.modality = Modality::meg;
    EXPECT_THROW(apply_eeg_transfer(meg, unit, r.electrodes), ConfigError);

    SourceModelOutput bad{SparseVector{{t.dofs()}, {1.0}}, std::nullopt};
    EXPECT_THROW(transfer_product(t, bad), std::invalid_argument);
}

TEST(Transfer, WorkerCountDoesNotChangeRows)
{
    Problem p(layered());
    auto r = build_restriction(p.vc, p.locator, fixtures::fibonacci_sphere(9, 92.0));
    TransferOptions one, three;
    three.workers = 3;
    auto t1 = compute_eeg_transfer(p.system, r, one);
    auto t3 = compute_eeg_transfer(p.system, r, three);
    EXPECT_TRUE(t1.rows == t3.rows);
}

TEST(Transfer, NonConvergenceListsSensors)
{
    Problem p(layered());
    auto r = build_restriction(p.vc, p.locator, fixtures::fibonacci_sphere(3, 92.0));
    TransferOptions opt;
    opt.solver.max_iterations = 2;
    try
    {
        compute_eeg_transfer(p.system, r, opt);
        FAIL() << "expected NumericalError";
    }
    catch (const NumericalError& e)
    {
        std::string msg = e.what();
        EXPECT_NE(msg.find("sensors: 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find(" 2 ("), std::string::npos) << msg;
    }
}

TEST(TransferFile, RoundTripAndRejection)
{
    Problem p(layered());
    auto r = build_restriction(p.vc, p.locator, fixtures::fibonacci_sphere(5, 92.0));
    auto t = compute_eeg_transfer(p.system, r);
    auto path = temp_path("transfer.bin");
    save_transfer(t, path);

    auto h = read_transfer_header(path);
    EXPECT_EQ(h.modality, Modality::eeg);
    EXPECT_EQ(h.rows, 5u);
    EXPECT_EQ(h.cols, p.system.size());
    EXPECT_EQ(h.conductor_checksum, p.vc.checksum());
    EXPECT_EQ(h.tolerance, 1e-8);
    EXPECT_EQ(std::filesystem::file_size(path), 8 + 4 + 8 * 3 + 8 + 8 * 5 * p.system.size() + 8);

    auto back = load_transfer(path, p.vc.checksum());
    EXPECT_TRUE(back.rows == t.rows);
    EXPECT_EQ(back.conductor_checksum, t.conductor_checksum);
    EXPECT_THROW(load_transfer(path, p.vc.checksum() + 1), ConfigError);

    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(100);
        char c = 0x5a;
        f.write(&c, 1);
    }
    EXPECT_THROW(load_transfer(path), ConfigError);
    std::filesystem::resize_file(path, 30);
    EXPECT_THROW(load_transfer(path), ConfigError);
    {
        std::ofstream f(path, std::ios::binary);
        f << "not a transfer matrix";
    }
    EXPECT_THROW(read_transfer_header(path), ConfigError);
    std::filesystem::remove(path);
}

TEST(TransferFile, LittleEndianLayout)
{
    TransferMatrix t;
    t.modality = Modality::meg;
    t.rows.resize(1, 2);
    t.rows << 1.0, -2.0;
    t.conductor_checksum = 0x0102030405060708ULL;
    t.tolerance = 0.5;
    auto path = temp_path("layout.bin");
    save_transfer(t, path);
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
    ASSERT_EQ(bytes.size(), 8u + 4 + 24 + 8 + 16 + 8);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "MEEGTRF1");
    EXPECT_EQ(bytes[8], 2);
    EXPECT_EQ(bytes[12], 1);           // rows
    EXPECT_EQ(bytes[28], 0x08);        // checksum low byte
    EXPECT_EQ(bytes[35], 0x01);        // checksum high byte
    EXPECT_EQ(bytes[36 + 8 + 7], 0x3f); // 1.0 = 0x3ff0000000000000
    EXPECT_EQ(bytes[36 + 8 + 6], 0xf0);
    std::filesystem::remove(path);
}

// Applying T to a sparse right-hand side costs O(nnz * N) regardless of the
// mesh size; the dense product grows with n.
TEST(TransferPerformance, SparseApplicationIndependentOfMeshSize)
{
    using clock = std::chrono::steady_clock;
    std::vector<double> sparse_t, dense_t;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int level : {3, 6, 12})
    {
        fixtures::SphereMeshSpec spec;
        spec.levels = {level, (level + 1) / 3, (level + 1) / 3};
        auto vc = fixtures::with_conductivities(fixtures::sphere_mesh(spec), {{1, 0.33}, {2, 0.0042}, {3, 0.33}});
        ElementLocator loc(vc.mesh());
        SourceContext ctx(vc, loc);
        const std::size_t n = vc.mesh().num_vertices();
        TransferMatrix t;
        t.rows.resize(32, static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < t.rows.size(); ++i)
            t.rows.data()[i] = g(rng);
        auto pi = bind(SourceModelConfig{}, ctx, {Vec3(3, 4, 30), Vec3(1, 0, 0)}).assemble();
        SourceModelOutput dense{pi.to_dense(n), std::nullopt};

        auto median_time = [&](const SourceModelOutput& out, int reps)
        {
            std::vector<double> samples;
            double sink = 0;
            for (int s = 0; s < 9; ++s)
            {
                auto t0 = clock::now();
                for (int k = 0; k < reps; ++k)
                    sink += transfer_product(t, out)[0];
                samples.push_back(std::chrono::duration<double>(clock::now() - t0).count() / reps);
            }
            EXPECT_TRUE(std::isfinite(sink));
            std::nth_element(samples.begin(), samples.begin() + 4, samples.end());
            return samples[4];
        };
        sparse_t.push_back(median_time(pi, 20000));
        dense_t.push_back(median_time(dense, 5));
    }
    for (std::size_t i = 0; i < 3; ++i)
        std::printf("level %zu: sparse %.3g s, dense %.3g s\n", i, sparse_t[i], dense_t[i]);
    double smin = *std::min_element(sparse_t.begin(), sparse_t.end());
    double smax = *std::max_element(sparse_t.begin(), sparse_t.end());
    EXPECT_LE(smax, 2.0 * smin);
    EXPECT_GE(dense_t[2], 4.0 * dense_t[0]);
}
