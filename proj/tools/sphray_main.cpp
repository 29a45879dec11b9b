#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sphray/oracle.hpp"
#include "sphray/sphray.hpp"

using nlohmann::json;

namespace {

struct RunConfig {
    std::string kernel = "cubic-bspline";
    std::uint64_t seed = 0;
    int threads = 0; // 0 = SPHRAY_THREADS env, then hardware
    int int_width = 64;
    int K = 4;
    int D = 3;
    int table_size = 1024;
    std::string lut;
    std::string tf;
    std::string camera;
    std::string out;
    std::string particles;
    double variance = 0.0; // a_max / phi_repr; 0 = derive from data (or 1e5)
    double step = 0.0;     // ray sampling step; 0 = h_r / 8
};

void apply_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw sphray::IoError("cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw sphray::IoError(path + ": " + e.what());
    }
    for (const auto& [key, val] : j.items()) {
        try {
            if (key == "kernel") rc.kernel = val.get<std::string>();
            else if (key == "seed") rc.seed = val.get<std::uint64_t>();
            else if (key == "threads") rc.threads = val.get<int>();
            else if (key == "int-width") rc.int_width = val.get<int>();
            else if (key == "K") rc.K = val.get<int>();
            else if (key == "D") rc.D = val.get<int>();
            else if (key == "table-size") rc.table_size = val.get<int>();
            else if (key == "lut") rc.lut = val.get<std::string>();
            else if (key == "tf") rc.tf = val.get<std::string>();
            else if (key == "camera") rc.camera = val.get<std::string>();
            else if (key == "out") rc.out = val.get<std::string>();
            else if (key == "particles") rc.particles = val.get<std::string>();
            else if (key == "variance") rc.variance = val.get<double>();
            else if (key == "step") rc.step = val.get<double>();
            else throw sphray::ConfigError(path + ": unknown config key '" + key + "'");
        } catch (const json::exception& e) {
            throw sphray::ConfigError(path + ": bad value for '" + key + "': " + e.what());
        }
    }
}

void add_common_options(CLI::App* cmd, RunConfig& rc, std::string& config_path) {
    cmd->add_option("--config", config_path, "JSON file mirroring the flags; flags override");
    cmd->add_option("--kernel", rc.kernel, "builtin kernel id or kernel JSON path");
    cmd->add_option("--seed", rc.seed, "RNG seed for optimizer restarts");
    cmd->add_option("--threads", rc.threads,
                    "worker threads (0 = auto; SPHRAY_THREADS overrides)");
    cmd->add_option("--int-width", rc.int_width, "integer width: 32, 64 or 128");
    cmd->add_option("--K", rc.K, "knot count of the approximation (1..8)");
    cmd->add_option("--D", rc.D, "piece degree of the approximation (1..6)");
    cmd->add_option("-N,--table-size", rc.table_size, "number of tabulated ray distances");
    cmd->add_option("--lut", rc.lut, "approximation table (.splt) to load");
    cmd->add_option("--tf", rc.tf, "transfer function CSV");
    cmd->add_option("--camera", rc.camera, "camera JSON");
    cmd->add_option("--out", rc.out, "output path");
    cmd->add_option("--particles", rc.particles, "particle CSV or SPRT file");
    cmd->add_option("--variance", rc.variance,
                    "data variance a_max/phi_repr for error estimates");
    cmd->add_option("--step", rc.step, "compositing sample step in world units");
}

// The config file must be applied before CLI11 stores flag values, so that
// explicit flags win. A manual scan keeps that ordering independent of the
// parser's callback sequence.
std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

sphray::Lut obtain_lut(const RunConfig& rc, const sphray::PiecewisePolynomialKernel& kernel,
                       bool allow_build) {
    if (!rc.lut.empty()) {
        sphray::Lut lut = sphray::load_lut(rc.lut);
        if (lut.kernel_id != kernel.id)
            throw sphray::ConfigError("table " + rc.lut + " was built for kernel '" +
                                      lut.kernel_id + "', not '" + kernel.id + "'");
        return lut;
    }
    if (!allow_build) throw sphray::ConfigError("no --lut given");
    sphray::ApproxConfig cfg{rc.K, rc.D};
    sphray::LutBuildOptions opts;
    opts.seed = rc.seed;
    opts.threads = sphray::resolve_threads(rc.threads);
    return sphray::build_lut(kernel, cfg, rc.table_size, opts);
}

int cmd_lut_build(const RunConfig& rc) {
    if (rc.out.empty()) throw sphray::ConfigError("lut-build needs --out");
    const auto kernel = sphray::load_kernel(rc.kernel);
    const sphray::ApproxConfig cfg{rc.K, rc.D};
    cfg.validate();
    sphray::LutBuildOptions opts;
    opts.seed = rc.seed;
    opts.threads = sphray::resolve_threads(rc.threads);
    const auto lut = sphray::build_lut(kernel, cfg, rc.table_size, opts);
    sphray::save_lut(lut, rc.out);
    const auto c = sphray::kernel_constants(kernel);
    std::printf("K %d  D %d  N %d  E* %.6e  -> %s\n", lut.K, lut.D,
                static_cast<int>(lut.entries.size()), sphray::overall_error(lut, c),
                rc.out.c_str());
    return 0;
}

int cmd_error_report(const RunConfig& rc) {
    const auto kernel = sphray::load_kernel(rc.kernel);
    const auto c = sphray::kernel_constants(kernel);
    const auto lut = obtain_lut(rc, kernel, true);
    const sphray::ApproxConfig cfg{lut.K, lut.D};

    double variance = rc.variance;
    std::string variance_source = "flag";
    if (!(variance > 0.0)) {
        if (!rc.particles.empty()) {
            const auto ps = sphray::load_particles(rc.particles);
            const auto stats = sphray::dataset_stats(ps, lut);
            variance = stats.a_max / stats.phi_repr;
            variance_source = "dataset";
        } else {
            variance = 1e5;
            variance_source = "default";
        }
    }

    const double estar = sphray::overall_error(lut, c);
    json rows = json::array();
    for (int bits : {32, 64, 128}) {
        const double sigma_hat =
            variance * sphray::kernel_scale(kernel) /
            sphray::int_max_double(sphray::int_width_from(bits));
        const double tau = sphray::optimal_tau(cfg, c, kernel.q, sigma_hat);
        const double qd = sphray::quantization_error(cfg, c, kernel.q, tau, sigma_hat);
        rows.push_back({{"width", bits},
                        {"tau", tau},
                        {"E_star", estar},
                        {"Q_D", qd},
                        {"combined", std::hypot(estar, qd)}});
    }
    json report = {{"kernel", kernel.id},
                   {"K", lut.K},
                   {"D", lut.D},
                   {"N", lut.entries.size()},
                   {"variance", variance},
                   {"variance_source", variance_source},
                   {"rows", rows}};
    const std::string text = report.dump(2);
    std::printf("%s\n", text.c_str());
    if (!rc.out.empty()) {
        std::ofstream f(rc.out);
        if (!f) throw sphray::IoError("cannot open " + rc.out + " for writing");
        f << text << "\n";
    }
    return 0;
}

int cmd_render(const RunConfig& rc) {
    if (rc.out.empty()) throw sphray::ConfigError("render needs --out");
    if (rc.particles.empty()) throw sphray::ConfigError("render needs --particles");
    if (rc.tf.empty()) throw sphray::ConfigError("render needs --tf");
    const auto kernel = sphray::load_kernel(rc.kernel);
    const auto particles = sphray::load_particles(rc.particles);
    const auto tf = sphray::load_transfer_function(rc.tf);
    sphray::Camera cam;
    if (!rc.camera.empty()) cam = sphray::load_camera(rc.camera);
    cam.validate();
    const auto width = sphray::int_width_from(rc.int_width);

    json report;
    sphray::Image img;
    if (particles.empty()) {
        img.width = cam.width;
        img.height = cam.height;
        img.pixels.assign(static_cast<std::size_t>(cam.width) * cam.height, sphray::Rgb{});
        report["quanta"] = nullptr;
        report["stats"] = {{"particles", 0}, {"knots", 0}, {"rays_touched", 0}};
        report["errors"] = nullptr;
        report["overflow_count"] = 0;
    } else {
        const auto lut = obtain_lut(rc, kernel, true);
        const auto c = sphray::kernel_constants(kernel);
        const sphray::ApproxConfig cfg{lut.K, lut.D};
        const auto stats = sphray::dataset_stats(particles, lut);
        const auto qc = sphray::choose_quanta(cfg, c, kernel.q, stats, width);

        sphray::RenderOptions opts;
        opts.step = rc.step;
        opts.threads = rc.threads;
        sphray::RenderStats rs;
        img = sphray::dispatch_int_width(width, [&](auto tag) {
            using Int = typename decltype(tag)::type;
            return sphray::render_scene<Int>(particles, cam, tf, lut, qc, stats, opts, &rs);
        });

        const double estar = sphray::overall_error(lut, c);
        const double qd = sphray::quantization_error(cfg, c, kernel.q, qc.tau / stats.h_r,
                                                     qc.sigma / stats.phi_repr);
        report["quanta"] = {{"tau", qc.tau},
                            {"sigma", qc.sigma},
                            {"int_width", rc.int_width}};
        report["stats"] = {{"particles", rs.particles},
                           {"skipped_particles", rs.skipped_particles},
                           {"knots", rs.knots},
                           {"rays_touched", rs.rays_touched},
                           {"int_ops", rs.int_ops},
                           {"residual_failures", rs.residual_failures},
                           {"step", rs.step}};
        report["dataset"] = {{"count", stats.count},
                             {"h_r", stats.h_r},
                             {"phi_repr", stats.phi_repr},
                             {"a_max", stats.a_max},
                             {"clustering_factor", stats.clustering_factor}};
        report["errors"] = {{"E_star", estar},
                            {"Q_D", qd},
                            {"combined", std::hypot(estar, qd)}};
        report["overflow_count"] = 0; // an overflow aborts the run instead
        report["K"] = lut.K;
        report["D"] = lut.D;
    }
    report["kernel"] = kernel.id;
    report["seed"] = rc.seed;
    report["image"] = rc.out;

    sphray::save_ppm(img, rc.out);
    const std::string report_path = rc.out + ".json";
    std::ofstream f(report_path);
    if (!f) throw sphray::IoError("cannot open " + report_path + " for writing");
    f << report.dump(2) << "\n";
    std::printf("wrote %s and %s\n", rc.out.c_str(), report_path.c_str());
    return 0;
}

int cmd_validate(const RunConfig& rc) {
    if (rc.particles.empty()) throw sphray::ConfigError("validate needs --particles");
    const auto kernel = sphray::load_kernel(rc.kernel);
    const auto particles = sphray::load_particles(rc.particles);
    if (particles.empty()) {
        std::printf("validate: PASS (empty dataset)\n");
        return 0;
    }
    sphray::Camera cam;
    if (!rc.camera.empty()) cam = sphray::load_camera(rc.camera);
    cam.width = std::min(cam.width, 32);
    cam.height = std::min(cam.height, 32);
    cam.validate();

    const auto lut = obtain_lut(rc, kernel, true);
    if (lut.entries.size() < 4096)
        std::printf("note: %zu distance entries; the nearest-entry snap widens per-ray error "
                    "on thin tables (-N 8192 recommended for validation)\n",
                    lut.entries.size());
    const sphray::ApproxConfig cfg{lut.K, lut.D};
    const auto c = sphray::kernel_constants(kernel);
    const auto stats = sphray::dataset_stats(particles, lut);
    const auto width = sphray::int_width_from(rc.int_width);
    const auto qc = sphray::choose_quanta(cfg, c, kernel.q, stats, width);

    using Int = std::int64_t;
    if (width != sphray::IntWidth::w64)
        std::printf("note: validation replays with 64-bit integers\n");

    // gather the full knot stream once
    std::vector<sphray::QuantizedKnot<Int>> stream;
    double h_min = particles[0].h;
    for (std::size_t i = 0; i < particles.size(); ++i) {
        const auto& p = particles[i];
        h_min = std::min(h_min, p.h);
        for (const auto& hit : sphray::particle_ray_footprint(p, cam, kernel.q)) {
            auto ks = sphray::quantize_particle<Int>(p, hit.ray.id, hit.t_chi, hit.lam, lut,
                                                     qc, static_cast<std::int64_t>(i));
            stream.insert(stream.end(), ks.begin(), ks.end());
        }
    }
    sphray::sort_knots<Int>(stream);

    bool all_pass = true;

    // group 1: every touched ray telescopes to the zero polynomial
    {
        std::size_t rays = 0, bad = 0;
        std::size_t lo = 0;
        while (lo < stream.size()) {
            std::size_t hi = lo;
            while (hi < stream.size() && stream[hi].ray == stream[lo].ray) ++hi;
            sphray::RayAccumulator<Int> acc(lut.D);
            Int t_prev{};
            bool first = true;
            std::array<sphray::Checked<Int>, sphray::max_degree + 1> merged{};
            auto flush = [&](Int t) {
                std::array<Int, sphray::max_degree + 1> jump{};
                for (int d = 0; d <= lut.D; ++d) jump[d] = merged[d].v;
                acc.consume(t, jump);
                merged = {};
            };
            for (std::size_t i = lo; i < hi; ++i) {
                if (!first && stream[i].t != t_prev) flush(t_prev);
                for (int d = 0; d <= lut.D; ++d)
                    merged[d] = merged[d] + sphray::Checked<Int>(stream[i].b[d]);
                t_prev = stream[i].t;
                first = false;
            }
            if (!first) flush(t_prev);
            ++rays;
            if (!acc.all_zero()) ++bad;
            lo = hi;
        }
        std::printf("telescoping: %s (%zu rays, %zu with nonzero tail)\n",
                    bad ? "FAIL" : "PASS", rays, bad);
        if (bad) all_pass = false;
    }

    // group 2: exact superposition, production recurrence vs bigint replay
    {
        std::size_t rays = 0, bad = 0;
        std::size_t lo = 0;
        while (lo < stream.size()) {
            std::size_t hi = lo;
            while (hi < stream.size() && stream[hi].ray == stream[lo].ray) ++hi;
            const std::span<const sphray::QuantizedKnot<Int>> slice(stream.data() + lo,
                                                                    hi - lo);
            const auto pieces = sphray::accumulate<Int>(slice, lut.D);
            const auto replay = sphray::oracle::replay_ray<Int>(slice, lut.D);
            bool ok = pieces.size() == replay.size();
            for (std::size_t i = 0; ok && i < pieces.size(); ++i) {
                ok = sphray::oracle::BigInt(static_cast<long long>(pieces[i].t)) ==
                     replay[i].t;
                for (int d = 0; ok && d <= lut.D; ++d)
                    ok = sphray::oracle::BigInt(static_cast<long long>(pieces[i].a[d])) ==
                         replay[i].a[d];
            }
            ++rays;
            if (!ok) ++bad;
            lo = hi;
        }
        std::printf("superposition: %s (%zu rays replayed in exact arithmetic)\n",
                    bad ? "FAIL" : "PASS", rays);
        if (bad) all_pass = false;
    }

    // group 3: dense-L2 envelope against the exact field on sampled rays
    {
        const double estar = sphray::overall_error(lut, c);
        const double qd = sphray::quantization_error(cfg, c, kernel.q, qc.tau / stats.h_r,
                                                     qc.sigma / stats.phi_repr);
        const double envelope = 4.0 * std::hypot(estar, qd);
        const double h_step = h_min / 64.0;

        std::size_t rays = 0, bad = 0;
        std::size_t lo = 0, tested = 0;
        while (lo < stream.size() && tested < 64) {
            std::size_t hi = lo;
            while (hi < stream.size() && stream[hi].ray == stream[lo].ray) ++hi;
            const std::uint64_t ray_id = stream[lo].ray;
            const std::span<const sphray::QuantizedKnot<Int>> slice(stream.data() + lo,
                                                                    hi - lo);
            const auto pieces = sphray::accumulate<Int>(slice, lut.D);
            const auto ray = cam.ray_at(static_cast<int>(ray_id % cam.width),
                                        static_cast<int>(ray_id / cam.width));
            const double t0 = static_cast<double>(pieces.front().t) * qc.tau;
            const double t1 = static_cast<double>(pieces.back().t) * qc.tau;
            if (t1 > t0) {
                const int n = std::max(64, static_cast<int>((t1 - t0) / h_step));
                auto approx = [&](double t) {
                    std::size_t k = 0;
                    while (k + 1 < pieces.size() &&
                           static_cast<double>(pieces[k + 1].t) * qc.tau <= t)
                        ++k;
                    return sphray::evaluate_piece(pieces[k], qc, lut.D, t);
                };
                auto exact = [&](double t) {
                    return sphray::oracle::field_along_ray(particles, ray, t);
                };
                const double num = sphray::oracle::l2_distance(approx, exact, t0, t1, n);
                const double den = sphray::oracle::l2_norm(exact, t0, t1, n);
                ++rays;
                ++tested;
                if (den > 0.0 && num / den > envelope) ++bad;
            }
            lo = hi;
        }
        const double frac = rays ? static_cast<double>(rays - bad) / rays : 1.0;
        const bool ok = frac >= 0.95;
        std::printf("dense-L2 envelope: %s (%zu rays, %.1f%% within %.3e)\n",
                    ok ? "PASS" : "FAIL", rays, 100.0 * frac, envelope);
        if (!ok) all_pass = false;
    }

    std::printf("validate: %s\n", all_pass ? "PASS" : "FAIL");
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantized piecewise-polynomial SPH ray casting"};
    app.require_subcommand(1);

    RunConfig rc;
    std::string config_path;

    auto* build = app.add_subcommand("lut-build", "optimize and write an approximation table");
    auto* report = app.add_subcommand("error-report", "approximation/quantization error table");
    auto* render = app.add_subcommand("render", "render particles to a PPM image plus report");
    auto* validate = app.add_subcommand("validate", "oracle cross-checks on a dataset");
    for (auto* cmd : {build, report, render, validate}) add_common_options(cmd, rc, config_path);

    const std::string pre = find_config_arg(argc, argv);
    try {
        if (!pre.empty()) apply_config_file(rc, pre);
        CLI11_PARSE(app, argc, argv);
        if (build->parsed()) return cmd_lut_build(rc);
        if (report->parsed()) return cmd_error_report(rc);
        if (render->parsed()) return cmd_render(rc);
        if (validate->parsed()) return cmd_validate(rc);
    } catch (const sphray::OverflowError& e) {
        std::fprintf(stderr, "overflow: %s\n", e.what());
        if (e.particle_index >= 0)
            std::fprintf(stderr, "  particle %lld, ray %llu\n",
                         static_cast<long long>(e.particle_index),
                         static_cast<unsigned long long>(e.ray_id));
        std::fprintf(stderr, "  a wider --int-width avoids the overflow\n");
        return 3;
    } catch (const sphray::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const sphray::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const sphray::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    }
    return 0;
}
