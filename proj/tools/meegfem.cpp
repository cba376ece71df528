// meegfem command line front end.
//
// Exit codes: 0 success, 2 configuration/input errors, 3 numerical or
// geometric failures, 1 anything else.

#include <meegfem/analytic.hpp>
#include <meegfem/driver.hpp>
#include <meegfem/generate.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace meeg;
namespace fs = std::filesystem;

namespace
{

struct Common
{
    std::string config;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true)
{
    auto* opt = cmd->add_option("-c,--config", c.config, "INI configuration file");
    if (config_required)
        opt->required();
    cmd->add_option("--set", c.sets, "override a config key (key=value), repeatable");
}

// Relative `*.filename` entries in the file are taken relative to the file.
Config load_config(const Common& c)
{
    Config cfg;
    if (!c.config.empty())
    {
        cfg = Config::from_ini(c.config);
        const fs::path base = fs::path(c.config).parent_path();
        const auto entries = cfg.entries();
        for (const auto& [k, v] : entries)
        {
            const std::string suffix = ".filename";
            if (k.size() > suffix.size() && k.compare(k.size() - suffix.size(), suffix.size(), suffix) == 0 &&
                fs::path(v).is_relative())
                cfg.set(k, (base / v).lexically_normal().string());
        }
    }
    for (const auto& s : c.sets)
    {
        auto [k, v] = Config::parse_assignment(s);
        cfg.set(k, v);
    }
    return cfg;
}

void warn_to_stderr()
{
    log::set_handler([](std::string_view m) { std::cerr << "warning: " << m << '\n'; });
}

// Lead fields are written one row per sensor, one column per dipole.
void write_leadfield(const ForwardResult& res, const std::string& path)
{
    RowMatrix out = std::move(res).checked().transpose();
    if (path.empty() || path == "-")
    {
        write_matrix_text(out, std::cout);
        return;
    }
    std::ofstream f(path);
    if (!f)
        throw ConfigError("cannot write file '" + path + "'");
    write_matrix_text(out, f);
}

void report_failures(const ForwardResult& res)
{
    for (const auto& e : res.errors)
        std::cerr << "dipole " << e.index << ": " << e.message << '\n';
}

std::ostream& open_out(const std::string& path, std::ofstream& file)
{
    if (path.empty() || path == "-")
        return std::cout;
    file.open(path);
    if (!file)
        throw ConfigError("cannot write file '" + path + "'");
    return file;
}

void mesh_info(const Common& c, const std::string& mesh_path, const std::string& tensor_path)
{
    std::string grid = mesh_path, tensors = tensor_path;
    if (!c.config.empty() || !c.sets.empty())
    {
        Config cfg = load_config(c);
        if (grid.empty())
            grid = cfg.required("volume_conductor.grid.filename");
        if (tensors.empty())
            tensors = cfg.get("volume_conductor.tensors.filename", "");
    }
    if (grid.empty())
        throw ConfigError("mesh-info needs --mesh or a config with volume_conductor.grid.filename");
    Mesh mesh = load_mesh(grid);
    std::map<int, std::size_t> labels;
    double volume = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
    {
        ++labels[mesh.label(e)];
        volume += mesh.geometry(e).volume();
    }
    auto [lo, hi] = mesh.bounding_box();
    std::cout << "file:            " << grid << '\n'
              << "element type:    " << to_string(mesh.kind()) << '\n'
              << "vertices:        " << mesh.num_vertices() << '\n'
              << "elements:        " << mesh.num_elements() << '\n'
              << "boundary faces:  " << mesh.boundary_faces().size() << '\n'
              << "volume (mm^3):   " << std::setprecision(10) << volume << '\n'
              << "bounding box:    [" << lo.transpose() << "] .. [" << hi.transpose() << "]\n"
              << "mesh checksum:   " << std::hex << mesh.checksum() << std::dec << '\n';
    for (auto [label, n] : labels)
        std::cout << "label " << std::setw(6) << label << ":    " << n << " elements\n";
    if (!tensors.empty())
    {
        auto vc = load_conductivities(tensors, std::move(mesh));
        std::cout << "conductor checksum: " << std::hex << vc.checksum() << std::dec << '\n';
    }
}

void transfer_info(const std::string& path)
{
    auto h = read_transfer_header(path);
    std::cout << "file:               " << path << '\n'
              << "modality:           " << to_string(h.modality) << '\n'
              << "sensors (rows):     " << h.rows << '\n'
              << "dofs (columns):     " << h.cols << '\n'
              << "conductor checksum: " << std::hex << h.conductor_checksum << std::dec << '\n'
              << "solver tolerance:   " << h.tolerance << '\n';
}

std::string orientation_name(const Dipole& d, const Vec3& center)
{
    Vec3 r = d.position - center;
    if (r.norm() == 0.0 || d.moment.norm() == 0.0)
        return "central";
    double c = std::abs(r.normalized().dot(d.moment.normalized()));
    if (c > 1.0 - 1e-9)
        return "radial";
    if (c < 1e-9)
        return "tangential";
    return "oblique";
}

struct SphereArgs
{
    std::string sphere, electrodes, dipoles, coils, output;
    std::vector<std::string> models{"partial_integration", "venant", "subtraction"};
    std::size_t num_electrodes = 74;
};

void validate_sphere(const Common& c, const SphereArgs& a)
{
    SphereModel sphere = read_sphere_model(a.sphere);
    Driver driver(load_config(c));
    const double outer = sphere.outer_radius();

    std::vector<Vec3> el = a.electrodes.empty() ? generate::fibonacci_sphere(a.num_electrodes, outer, sphere.center)
                                                : read_points(a.electrodes);
    std::vector<Dipole> dips;
    if (a.dipoles.empty())
    {
        const Vec3 dir = Vec3(0.3, 0.2, 0.93).normalized();
        for (double ecc : {0.2, 0.5, 0.8})
        {
            Vec3 p = sphere.center + ecc * sphere.radii.front() * dir;
            dips.push_back({p, dir});
            dips.push_back({p, generate::any_orthogonal(dir)});
        }
    }
    else
        dips = read_dipoles(a.dipoles);

    std::ofstream file;
    std::ostream& out = open_out(a.output, file);
    out << std::setprecision(6) << std::fixed;
    out << "# modality model dipole eccentricity orientation rdm mag\n";

    RowMatrix eeg_ref(static_cast<Eigen::Index>(dips.size()), static_cast<Eigen::Index>(el.size()));
    for (std::size_t i = 0; i < dips.size(); ++i)
    {
        Eigen::VectorXd ref(static_cast<Eigen::Index>(el.size()));
        for (std::size_t k = 0; k < el.size(); ++k)
            ref[static_cast<Eigen::Index>(k)] = sphere_eeg(sphere, dips[i].position, dips[i].moment, el[k]);
        eeg_ref.row(static_cast<Eigen::Index>(i)) = mean_centered(ref).transpose();
    }
    std::vector<Coil> coils;
    if (!a.coils.empty())
        coils = read_coils(a.coils);

    bool failed = false;
    auto emit = [&](const char* modality, const std::string& model, const ForwardResult& res, const RowMatrix& ref)
    {
        report_failures(res);
        failed |= !res.ok();
        for (std::size_t i = 0; i < dips.size(); ++i)
        {
            const auto row = static_cast<Eigen::Index>(i);
            if (!res.values.row(row).allFinite())
                continue;
            Eigen::VectorXd u = res.values.row(row).transpose(), v = ref.row(row).transpose();
            out << modality << ' ' << model << ' ' << i << ' '
                << (dips[i].position - sphere.center).norm() / sphere.radii.front() << ' '
                << orientation_name(dips[i], sphere.center) << ' ';
            // a radial dipole has no exterior field in the sphere model
            if (v.norm() <= 1e-12 * std::max(u.norm(), 1e-300))
                out << "n/a n/a\n";
            else
                out << rdm(u, v) << ' ' << mag(u, v) << '\n';
        }
    };

    for (const auto& model : a.models)
    {
        Config o{{"source_model.type", model}};
        emit("eeg", model, driver.solve_eeg(dips, el, o), eeg_ref);
    }
    if (!coils.empty())
    {
        RowMatrix meg_ref(static_cast<Eigen::Index>(dips.size()), static_cast<Eigen::Index>(coils.size()));
        for (std::size_t i = 0; i < dips.size(); ++i)
            for (std::size_t k = 0; k < coils.size(); ++k)
                meg_ref(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                    sarvas_meg(sphere.center, dips[i].position, dips[i].moment, coils[k].position, coils[k].orientation);
        for (const auto& model : a.models)
        {
            if (parse_source_model(model) == SourceModelKind::subtraction)
                continue;
            Config o{{"source_model.type", model}, {"meg.include_primary", "true"}};
            emit("meg", model, driver.solve_meg(dips, coils, o), meg_ref);
        }
    }
    if (failed)
        throw GeometryError("some dipoles could not be evaluated");
}

struct MakeSphereArgs
{
    std::vector<double> radii{78.0, 86.0, 92.0};
    std::vector<int> levels{6, 2, 1};
    std::vector<int> labels{1, 2, 3};
    std::vector<double> conductivities{0.33, 0.0042, 0.33};
    std::string element_type = "tetrahedron";
    std::string output;
    std::string tensors;
    std::string config;
};

void make_sphere(const MakeSphereArgs& a)
{
    generate::SphereMeshSpec spec;
    spec.radii = a.radii;
    spec.levels = a.levels;
    spec.labels = a.labels;
    spec.kind = parse_element_type(a.element_type);
    if (spec.radii.empty() || spec.levels.size() != spec.radii.size() || spec.labels.size() != spec.radii.size())
        throw ConfigError("--radii, --levels and --labels need the same number of entries");
    for (std::size_t i = 0; i < spec.radii.size(); ++i)
        if (spec.levels[i] < 1 || !(spec.radii[i] > (i ? spec.radii[i - 1] : 0.0)))
            throw ConfigError("radii must be positive and ascending, levels >= 1");
    Mesh mesh = generate::sphere_mesh(spec);
    write_mesh(mesh, a.output);
    std::cout << "wrote " << a.output << ": " << mesh.num_elements() << " " << to_string(mesh.kind()) << " elements, "
              << mesh.num_vertices() << " vertices\n";
    if (!a.tensors.empty())
    {
        if (a.conductivities.size() != spec.labels.size())
            throw ConfigError("--conductivities needs one value per shell");
        std::ofstream f(a.tensors);
        if (!f)
            throw ConfigError("cannot write file '" + a.tensors + "'");
        f << "# label sigma (S/m)\n";
        for (std::size_t i = 0; i < spec.labels.size(); ++i)
            f << spec.labels[i] << ' ' << a.conductivities[i] << '\n';
    }
    if (!a.config.empty())
    {
        std::ofstream f(a.config);
        if (!f)
            throw ConfigError("cannot write file '" + a.config + "'");
        auto rel = [&](const std::string& p)
        { return fs::absolute(p).lexically_relative(fs::absolute(a.config).parent_path()).string(); };
        f << "type = fitted\nsolver_type = cg\nelement_type = " << to_string(spec.kind) << "\n\n"
          << "[volume_conductor]\ngrid.filename = " << rel(a.output) << '\n';
        if (!a.tensors.empty())
            f << "tensors.filename = " << rel(a.tensors) << '\n';
        f << "\n[source_model]\ntype = venant\n\n[solver]\ntolerance = 1e-8\npreconditioner = jacobi\n";
    }
}

Eigen::VectorXd read_measurement(const std::string& path)
{
    auto v = read_values(path);
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

int run(int argc, char** argv)
{
    CLI::App app{"Finite element EEG/MEG forward modeling"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "meegfem 0.1.0");

    Common common;

    // mesh-info
    std::string info_mesh, info_tensors;
    auto* mi = app.add_subcommand("mesh-info", "print mesh statistics and checksums");
    add_common(mi, common, false);
    mi->add_option("--mesh", info_mesh, "Gmsh 2.2 mesh file (overrides the config)");
    mi->add_option("--tensors", info_tensors, "conductivity file");

    // solve-eeg / solve-meg
    std::string dipoles, electrodes, coils, output;
    auto* se = app.add_subcommand("solve-eeg", "direct EEG lead fields (sensors x dipoles)");
    add_common(se, common);
    se->add_option("--dipoles", dipoles, "dipole file (x y z mx my mz)")->required();
    se->add_option("--electrodes", electrodes, "electrode file (x y z)")->required();
    se->add_option("-o,--output", output, "output text matrix (default stdout)");

    auto* sm = app.add_subcommand("solve-meg", "direct MEG lead fields (sensors x dipoles)");
    add_common(sm, common);
    sm->add_option("--dipoles", dipoles, "dipole file")->required();
    sm->add_option("--coils", coils, "coil file (x y z nx ny nz)")->required();
    sm->add_option("-o,--output", output, "output text matrix (default stdout)");

    // transfer [info]
    std::string modality = "eeg", info_file;
    auto* tr = app.add_subcommand("transfer", "compute and save a transfer matrix");
    tr->require_subcommand(0, 1);
    add_common(tr, common, false);
    tr->add_option("--modality", modality, "eeg or meg")->check(CLI::IsMember({"eeg", "meg"}));
    auto* tr_el = tr->add_option("--electrodes", electrodes, "electrode file (eeg)");
    auto* tr_co = tr->add_option("--coils", coils, "coil file (meg)");
    tr_el->excludes(tr_co);
    tr->add_option("-o,--output", output, "transfer file to write");
    auto* ti = tr->add_subcommand("info", "print a transfer file header");
    ti->add_option("file", info_file, "transfer file")->required();

    // apply-transfer
    std::string transfer_path;
    auto* ap = app.add_subcommand("apply-transfer", "lead fields through a saved transfer matrix");
    add_common(ap, common);
    ap->add_option("--transfer", transfer_path, "transfer file")->required();
    ap->add_option("--dipoles", dipoles, "dipole file")->required();
    auto* ap_el = ap->add_option("--electrodes", electrodes, "electrodes the matrix was computed for (eeg)");
    auto* ap_co = ap->add_option("--coils", coils, "coils the matrix was computed for (meg)");
    ap_el->excludes(ap_co);
    ap->add_option("-o,--output", output, "output text matrix (default stdout)");

    // scan
    std::string source_space, measurement;
    auto* sc = app.add_subcommand("scan", "normal-constrained dipole scan");
    add_common(sc, common);
    sc->add_option("--transfer", transfer_path, "transfer file")->required();
    sc->add_option("--source-space", source_space, "source space file (x y z nx ny nz)")->required();
    sc->add_option("--measurement", measurement, "measurement file (one value per sensor)")->required();
    auto* sc_el = sc->add_option("--electrodes", electrodes, "electrode file (eeg)");
    auto* sc_co = sc->add_option("--coils", coils, "coil file (meg)");
    sc_el->excludes(sc_co);
    sc->add_option("-o,--output", output, "per-position table (default stdout)");

    // validate-sphere
    SphereArgs sphere;
    auto* vs = app.add_subcommand("validate-sphere", "compare against the multilayer sphere series and Sarvas");
    add_common(vs, common);
    vs->add_option("--sphere", sphere.sphere, "sphere model file")->required();
    vs->add_option("--electrodes", sphere.electrodes, "electrodes on the outer sphere (default: spiral montage)");
    vs->add_option("--num-electrodes", sphere.num_electrodes, "size of the default montage");
    vs->add_option("--dipoles", sphere.dipoles, "dipole file (default: radial+tangential at 0.2/0.5/0.8)");
    vs->add_option("--coils", sphere.coils, "coil file; adds MEG rows");
    vs->add_option("--models", sphere.models, "source models")->delimiter(',');
    vs->add_option("-o,--output", sphere.output, "table file (default stdout)");

    // make-sphere
    MakeSphereArgs ms;
    auto* mk = app.add_subcommand("make-sphere", "write a layered sphere mesh");
    mk->add_option("--radii", ms.radii, "shell radii in mm")->delimiter(',');
    mk->add_option("--levels", ms.levels, "radial cell layers per shell")->delimiter(',');
    mk->add_option("--labels", ms.labels, "tissue label per shell")->delimiter(',');
    mk->add_option("--conductivities", ms.conductivities, "S/m per shell")->delimiter(',');
    mk->add_option("--element-type", ms.element_type, "tetrahedron or hexahedron");
    mk->add_option("-o,--output", ms.output, "mesh file")->required();
    mk->add_option("--tensors", ms.tensors, "also write a conductivity file");
    mk->add_option("--write-config", ms.config, "also write a matching INI config");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    warn_to_stderr();

    if (*mi)
        mesh_info(common, info_mesh, info_tensors);
    else if (*se)
    {
        Driver d(load_config(common));
        auto res = d.solve_eeg(read_dipoles(dipoles), read_points(electrodes));
        report_failures(res);
        write_leadfield(res, output);
    }
    else if (*sm)
    {
        Driver d(load_config(common));
        auto res = d.solve_meg(read_dipoles(dipoles), read_coils(coils));
        report_failures(res);
        write_leadfield(res, output);
    }
    else if (*tr)
    {
        if (*ti)
        {
            transfer_info(info_file);
            return 0;
        }
        if (common.config.empty() || output.empty())
            throw ConfigError("transfer needs --config and --output");
        Driver d(load_config(common));
        std::shared_ptr<const TransferMatrix> t;
        if (parse_modality(modality) == Modality::eeg)
        {
            if (electrodes.empty())
                throw ConfigError("transfer --modality eeg needs --electrodes");
            t = d.compute_eeg_transfer(read_points(electrodes));
        }
        else
        {
            if (coils.empty())
                throw ConfigError("transfer --modality meg needs --coils");
            t = d.compute_meg_transfer(read_coils(coils));
        }
        save_transfer(*t, output);
        std::cerr << "wrote " << output << ": " << t->sensors() << " x " << t->dofs() << " " << to_string(t->modality)
                  << " transfer matrix\n";
    }
    else if (*ap)
    {
        Driver d(load_config(common));
        TransferMatrix t = d.load_transfer(transfer_path);
        auto dips = read_dipoles(dipoles);
        ForwardResult res;
        if (t.modality == Modality::eeg)
        {
            if (electrodes.empty())
                throw ConfigError("EEG transfer application needs --electrodes");
            res = d.apply_eeg_transfer(t, dips, read_points(electrodes));
        }
        else
        {
            std::vector<Coil> c;
            if (!coils.empty())
                c = read_coils(coils);
            else if (d.settings().meg_include_primary)
                throw ConfigError("MEG transfer application needs --coils (or meg.include_primary = false)");
            res = d.apply_meg_transfer(t, dips, c);
        }
        report_failures(res);
        write_leadfield(res, output);
    }
    else if (*sc)
    {
        Driver d(load_config(common));
        TransferMatrix t = d.load_transfer(transfer_path);
        SourceSpace space = read_source_space(source_space);
        Eigen::VectorXd m = read_measurement(measurement);
        ScanResult r;
        if (t.modality == Modality::eeg)
        {
            if (electrodes.empty())
                throw ConfigError("EEG scan needs --electrodes");
            r = d.scan_eeg(t, read_points(electrodes), space, m);
        }
        else
        {
            std::vector<Coil> c;
            if (!coils.empty())
                c = read_coils(coils);
            else if (d.settings().meg_include_primary)
                throw ConfigError("MEG scan needs --coils (or meg.include_primary = false)");
            r = d.scan_meg(t, c, space, m);
        }
        for (const auto& [i, why] : r.skipped)
            std::cerr << "skipped position " << i << ": " << why << '\n';
        std::ofstream file;
        std::ostream& out = open_out(output, file);
        out << std::setprecision(12) << "# index x y z strength gof\n";
        for (std::size_t i = 0; i < space.size(); ++i)
        {
            const Vec3& p = space.positions[i];
            out << i << ' ' << p[0] << ' ' << p[1] << ' ' << p[2] << ' ' << r.strength[i] << ' ' << r.gof[i] << '\n';
        }
        const Vec3& b = space.positions[r.best];
        std::cerr << std::setprecision(12) << "best " << r.best << " at (" << b[0] << ", " << b[1] << ", " << b[2]
                  << ") strength " << r.best_strength() << " gof " << r.best_gof() << '\n';
    }
    else if (*vs)
        validate_sphere(common, sphere);
    else if (*mk)
        make_sphere(ms);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    try
    {
        return run(argc, argv);
    }
    catch (const ConfigError& e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    catch (const ParseError& e)
    {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    }
    catch (const MeshError& e)
    {
        std::cerr << "mesh error: " << e.what() << '\n';
        return 2;
    }
    catch (const NumericalError& e)
    {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    }
    catch (const GeometryError& e)
    {
        std::cerr << "geometry error: " << e.what() << '\n';
        return 3;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
