#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"
#include "sphray/sphray.hpp"

using namespace sphray;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::path("/tmp/sphray_cli_tests") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const fs::path& dir, const std::string& args, const std::string& env = "") {
    const fs::path out = dir / "stdout.txt";
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + SPHRAY_CLI_PATH + " " + args +
                            " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

std::vector<Particle> small_scene() {
    return {
        {-0.8, 0.5, 0.3, 1.0, 1.2, 0.6, 1.5},
        {0.4, -0.6, -0.4, 0.8, 0.9, 0.8, 2.0},
        {0.9, 0.8, 0.8, 1.2, 1.1, 0.5, 0.7},
        {-0.3, -0.9, -0.9, 0.6, 1.0, 0.9, 1.1},
        {0.1, 0.2, 0.5, 1.5, 1.4, 0.7, 2.4},
        {-1.0, -0.2, 0.0, 0.9, 0.8, 0.6, 0.9},
    };
}

fs::path write_scene(const fs::path& dir, const std::vector<Particle>& ps) {
    const fs::path p = dir / "scene.csv";
    save_particles(ps, p.string());
    return p;
}

fs::path write_tf(const fs::path& dir) {
    const fs::path p = dir / "tf.csv";
    write_text(p, "value,r,g,b,absorption\n"
                  "0,0,0,0,0\n"
                  "1,1,0.5,0.2,2\n"
                  "5,1,1,1,4\n");
    return p;
}

fs::path write_cam(const fs::path& dir, int w = 16, int h = 16) {
    const fs::path p = dir / "camera.json";
    write_text(p, "{\"mode\": \"orthographic\", \"position\": [0, 0, 4],"
                  " \"look_at\": [0, 0, 0], \"width\": " +
                      std::to_string(w) + ", \"height\": " + std::to_string(h) +
                      ", \"ortho_height\": 4.0}\n");
    return p;
}

} // namespace

TEST_CASE("cli requires a subcommand") {
    const auto dir = scratch_dir("nosub");
    REQUIRE(run_cli(dir, "").code != 0);
    REQUIRE(run_cli(dir, "frobnicate").code != 0);
}

TEST_CASE("lut-build writes a loadable, reproducible table") {
    const auto dir = scratch_dir("lutbuild");
    const auto a = dir / "a.splt";
    const auto b = dir / "b.splt";

    auto r = run_cli(dir, "lut-build --K 2 --D 1 -N 8 --seed 5 --out " + a.string());
    INFO(r.err);
    REQUIRE(r.code == 0);
    REQUIRE_THAT(r.out, ContainsSubstring("K 2") && ContainsSubstring("E*"));

    const auto lut = load_lut(a.string());
    REQUIRE(lut.K == 2);
    REQUIRE(lut.D == 1);
    REQUIRE(lut.entries.size() == 8);
    REQUIRE(lut.kernel_id == "cubic-bspline");

    REQUIRE(run_cli(dir, "lut-build --K 2 --D 1 -N 8 --seed 5 --threads 2 --out " +
                             b.string())
                .code == 0);
    REQUIRE(slurp(a) == slurp(b));
}

TEST_CASE("invalid configurations exit with code 2") {
    const auto dir = scratch_dir("badcfg");
    const auto out = (dir / "x.splt").string();

    auto r = run_cli(dir, "lut-build --K 0 -N 4 --out " + out);
    REQUIRE(r.code == 2);

    r = run_cli(dir, "lut-build --K 2 --D 1 -N 4");
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("--out"));

    r = run_cli(dir, "error-report --int-width 48 -N 4 --K 2 --D 1");
    REQUIRE(r.code == 2);

    r = run_cli(dir, "lut-build --kernel /tmp/no_such_kernel_anywhere.json -N 4 --out " + out);
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("unknown kernel"));
}

TEST_CASE("error-report emits machine-readable estimates") {
    const auto dir = scratch_dir("report");
    const auto rep = dir / "rep.json";

    auto r = run_cli(dir, "error-report --K 2 --D 1 -N 8 --variance 1e5 --out " + rep.string());
    INFO(r.err);
    REQUIRE(r.code == 0);

    const auto j = nlohmann::json::parse(slurp(rep));
    REQUIRE(j["kernel"] == "cubic-bspline");
    REQUIRE(j["K"] == 2);
    REQUIRE(j["D"] == 1);
    REQUIRE(j["N"] == 8);
    REQUIRE(j["variance"] == 1e5);
    REQUIRE(j["variance_source"] == "flag");
    REQUIRE(j["rows"].size() == 3);

    double prev_qd = 1e300;
    for (const auto& row : j["rows"]) {
        REQUIRE(row["tau"].get<double>() > 0.0);
        REQUIRE(row["E_star"].get<double>() > 0.0);
        REQUIRE(row["Q_D"].get<double>() > 0.0);
        const double combined = std::hypot(row["E_star"].get<double>(),
                                           row["Q_D"].get<double>());
        REQUIRE(row["combined"].get<double>() == Catch::Approx(combined).epsilon(1e-12));
        REQUIRE(row["Q_D"].get<double>() < prev_qd);
        prev_qd = row["Q_D"].get<double>();
    }

    r = run_cli(dir, "error-report --K 2 --D 1 -N 8 --out " + rep.string());
    REQUIRE(r.code == 0);
    REQUIRE(nlohmann::json::parse(slurp(rep))["variance_source"] == "default");

    const auto scene = write_scene(dir, small_scene());
    r = run_cli(dir, "error-report --K 2 --D 1 -N 8 --particles " + scene.string() +
                         " --out " + rep.string());
    REQUIRE(r.code == 0);
    const auto jd = nlohmann::json::parse(slurp(rep));
    REQUIRE(jd["variance_source"] == "dataset");
    REQUIRE(jd["variance"].get<double>() > 0.0);
}

TEST_CASE("render writes a ppm image plus a sidecar report") {
    const auto dir = scratch_dir("render");
    const auto scene = write_scene(dir, small_scene());
    const auto tf = write_tf(dir);
    const auto cam = write_cam(dir, 12, 10);
    const auto img = dir / "img.ppm";

    const std::string common = " --K 2 --D 1 -N 8 --seed 1 --particles " + scene.string() +
                               " --tf " + tf.string() + " --camera " + cam.string();
    auto r = run_cli(dir, "render" + common + " --out " + img.string());
    INFO(r.err);
    REQUIRE(r.code == 0);

    const std::string bytes = slurp(img);
    const std::string header = "P6\n12 10\n255\n";
    REQUIRE(bytes.substr(0, header.size()) == header);
    REQUIRE(bytes.size() == header.size() + 12 * 10 * 3);

    const auto j = nlohmann::json::parse(slurp(dir / "img.ppm.json"));
    REQUIRE(j["stats"]["residual_failures"] == 0);
    REQUIRE(j["stats"]["particles"] == 6);
    REQUIRE(j["stats"]["knots"].get<long long>() > 0);
    REQUIRE(j["stats"]["rays_touched"].get<long long>() > 0);
    REQUIRE(j["quanta"]["int_width"] == 64);
    REQUIRE(j["quanta"]["tau"].get<double>() > 0.0);
    REQUIRE(j["errors"]["combined"].get<double>() > 0.0);
    REQUIRE(j["dataset"]["count"] == 6);
    REQUIRE(j["K"] == 2);
    REQUIRE(j["image"] == img.string());

    SECTION("thread count and worker env do not change the pixels") {
        const auto img3 = dir / "img3.ppm";
        REQUIRE(run_cli(dir, "render" + common + " --threads 3 --out " + img3.string())
                    .code == 0);
        REQUIRE(slurp(img3) == bytes);

        const auto img4 = dir / "img4.ppm";
        REQUIRE(run_cli(dir, "render" + common + " --out " + img4.string(),
                        "SPHRAY_THREADS=2")
                    .code == 0);
        REQUIRE(slurp(img4) == bytes);
    }

    SECTION("an empty dataset renders the background") {
        const auto empty = dir / "empty.csv";
        write_text(empty, std::string(particle_csv_header) + "\n");
        const auto img0 = dir / "empty.ppm";
        r = run_cli(dir, "render --particles " + empty.string() + " --tf " + tf.string() +
                             " --camera " + cam.string() + " --out " + img0.string());
        REQUIRE(r.code == 0);
        const std::string b0 = slurp(img0);
        REQUIRE(b0.substr(0, header.size()) == header);
        for (std::size_t i = header.size(); i < b0.size(); ++i)
            REQUIRE(b0[i] == '\0');
        const auto j0 = nlohmann::json::parse(slurp(dir / "empty.ppm.json"));
        REQUIRE(j0["quanta"].is_null());
        REQUIRE(j0["overflow_count"] == 0);
    }

    SECTION("missing inputs are configuration errors") {
        REQUIRE(run_cli(dir, "render" + common).code == 2);
        REQUIRE(run_cli(dir, "render --tf " + tf.string() + " --out " + img.string()).code ==
                2);
        REQUIRE(run_cli(dir, "render --particles " + scene.string() + " --out " +
                                 img.string())
                    .code == 2);
    }
}

TEST_CASE("distant particles overflow narrow knot positions but not wide ones") {
    const auto dir = scratch_dir("overflow");
    auto ps = small_scene();
    ps.push_back({0.0, 0.0, -2e7, 1.0, 1.0, 0.5, 1.0});
    const auto scene = write_scene(dir, ps);
    const auto tf = write_tf(dir);
    const auto cam = write_cam(dir);
    const auto img = dir / "img.ppm";

    const std::string common = " --K 2 --D 1 -N 8 --particles " + scene.string() + " --tf " +
                               tf.string() + " --camera " + cam.string() + " --out " +
                               img.string();

    auto r = run_cli(dir, "render --int-width 32" + common);
    REQUIRE(r.code == 3);
    REQUIRE_THAT(r.err, ContainsSubstring("overflow") &&
                            ContainsSubstring("wider --int-width"));

    r = run_cli(dir, "render --int-width 64" + common);
    INFO(r.err);
    REQUIRE(r.code == 0);
}

TEST_CASE("validate cross-checks a dataset against exact arithmetic") {
    const auto dir = scratch_dir("validate");
    const auto scene = write_scene(dir, small_scene());
    const auto cam = write_cam(dir);

    auto r = run_cli(dir, "validate --K 2 --D 1 -N 512 --seed 1 --particles " +
                              scene.string() + " --camera " + cam.string());
    INFO(r.out);
    INFO(r.err);
    REQUIRE(r.code == 0);
    REQUIRE_THAT(r.out, ContainsSubstring("telescoping: PASS"));
    REQUIRE_THAT(r.out, ContainsSubstring("superposition: PASS"));
    REQUIRE_THAT(r.out, ContainsSubstring("dense-L2 envelope: PASS"));
    REQUIRE_THAT(r.out, ContainsSubstring("validate: PASS"));
    REQUIRE_THAT(r.out, ContainsSubstring("note:"));
}

TEST_CASE("config files set defaults and flags override them") {
    const auto dir = scratch_dir("config");
    const auto c1 = dir / "c1.splt";
    const auto c2 = dir / "c2.splt";
    const auto cfg = dir / "run.json";
    write_text(cfg, "{\"K\": 2, \"D\": 1, \"table-size\": 8, \"out\": \"" + c1.string() +
                        "\"}\n");

    auto r = run_cli(dir, "lut-build --config " + cfg.string());
    INFO(r.err);
    REQUIRE(r.code == 0);
    REQUIRE(load_lut(c1.string()).entries.size() == 8);

    r = run_cli(dir, "lut-build --config=" + cfg.string() + " -N 4 --out " + c2.string());
    REQUIRE(r.code == 0);
    const auto lut = load_lut(c2.string());
    REQUIRE(lut.entries.size() == 4);
    REQUIRE(lut.K == 2);

    write_text(cfg, "{\"bogus\": 1}\n");
    r = run_cli(dir, "lut-build --config " + cfg.string() + " --out " + c2.string());
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("unknown config key"));

    write_text(cfg, "{\"K\": \"four\"}\n");
    r = run_cli(dir, "lut-build --config " + cfg.string() + " --out " + c2.string());
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("bad value"));

    r = run_cli(dir, "lut-build --config " + (dir / "missing.json").string() + " --out " +
                         c2.string());
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("cannot open config file"));
}

TEST_CASE("tables remember which kernel built them") {
    const auto dir = scratch_dir("kernelid");
    const auto table = dir / "t.splt";
    REQUIRE(run_cli(dir, "lut-build --K 2 --D 1 -N 4 --out " + table.string()).code == 0);

    auto j = kernel_to_json(cubic_bspline());
    j["id"] = "wiggle";
    const auto kpath = dir / "wiggle.json";
    write_text(kpath, j.dump());

    const auto r = run_cli(dir, "error-report --kernel " + kpath.string() + " --lut " +
                                    table.string());
    REQUIRE(r.code == 2);
    REQUIRE_THAT(r.err, ContainsSubstring("was built for kernel"));
}

TEST_CASE("the bundled example scene renders") {
    const auto dir = scratch_dir("example");
    const fs::path data = SPHRAY_DATA_DIR;
    const auto img = dir / "desk.ppm";

    const auto r = run_cli(dir, "render --K 2 --D 1 -N 16 --particles " +
                                    (data / "desk_scene.csv").string() + " --tf " +
                                    (data / "tf.csv").string() + " --camera " +
                                    (data / "camera.json").string() + " --out " + img.string());
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "desk.ppm.json"));
    REQUIRE(j["stats"]["residual_failures"] == 0);
    REQUIRE(j["stats"]["rays_touched"].get<long long>() > 0);
}
