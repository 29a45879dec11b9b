#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sphray/raycast.hpp"

namespace sphray {

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::string trim(std::string s) {
    const auto notspace = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
    return s;
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError(where + ": not a number: '" + s + "'");
    }
}

inline void validate_particle(const Particle& p, const std::string& where) {
    if (!(p.h > 0.0)) throw IoError(where + ": smoothing radius must be positive");
    if (!(p.density > 0.0)) throw IoError(where + ": density must be positive");
    for (double v : {p.x, p.y, p.z, p.mass, p.value})
        if (!std::isfinite(v)) throw IoError(where + ": attribute not finite");
}

} // namespace detail

inline constexpr const char* particle_csv_header = "x,y,z,mass,density,h,value";

inline std::vector<Particle> read_particles_csv(std::istream& is, const std::string& name) {
    std::string line;
    if (!std::getline(is, line)) throw IoError(name + ": empty file");
    if (detail::trim(line) != particle_csv_header)
        throw IoError(name + ": first line must be '" + std::string(particle_csv_header) +
                      "'");
    std::vector<Particle> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_row(line);
        const std::string where = name + ":" + std::to_string(lineno);
        if (cells.size() != 7) throw IoError(where + ": expected 7 comma-separated values");
        Particle p;
        p.x = detail::parse_number(cells[0], where);
        p.y = detail::parse_number(cells[1], where);
        p.z = detail::parse_number(cells[2], where);
        p.mass = detail::parse_number(cells[3], where);
        p.density = detail::parse_number(cells[4], where);
        p.h = detail::parse_number(cells[5], where);
        p.value = detail::parse_number(cells[6], where);
        detail::validate_particle(p, where);
        out.push_back(p);
    }
    return out;
}

inline void write_particles_csv(std::span<const Particle> ps, std::ostream& os) {
    os << particle_csv_header << "\n";
    os.precision(17);
    for (const auto& p : ps)
        os << p.x << ',' << p.y << ',' << p.z << ',' << p.mass << ',' << p.density << ','
           << p.h << ',' << p.value << "\n";
    if (!os) throw IoError("particle csv: write failure");
}

inline void write_particles_binary(std::span<const Particle> ps, std::ostream& os) {
    os.write("SPRT", 4);
    detail::put_u64(os, ps.size());
    for (const auto& p : ps) {
        for (double v : {p.x, p.y, p.z, p.mass, p.density, p.h, p.value})
            detail::put_f64(os, v);
    }
    if (!os) throw IoError("particle binary: write failure");
}

inline std::vector<Particle> read_particles_binary(std::istream& is, const std::string& name) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SPRT", 4) != 0) throw IoError(name + ": bad magic");
    const auto n = detail::get_u64(is);
    std::vector<Particle> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        Particle p;
        p.x = detail::get_f64(is);
        p.y = detail::get_f64(is);
        p.z = detail::get_f64(is);
        p.mass = detail::get_f64(is);
        p.density = detail::get_f64(is);
        p.h = detail::get_f64(is);
        p.value = detail::get_f64(is);
        detail::validate_particle(p, name + ": record " + std::to_string(i));
        out.push_back(p);
    }
    return out;
}

/// Loads a particle file, sniffing the binary magic and falling back to CSV.
inline std::vector<Particle> load_particles(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open particle file " + path);
    char magic[4] = {};
    f.read(magic, 4);
    f.clear();
    f.seekg(0);
    if (std::memcmp(magic, "SPRT", 4) == 0) return read_particles_binary(f, path);
    return read_particles_csv(f, path);
}

inline void save_particles(std::span<const Particle> ps, const std::string& path,
                           bool binary = false) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    if (binary)
        write_particles_binary(ps, f);
    else
        write_particles_csv(ps, f);
}

/// Rows of `value,r,g,b,absorption`; a leading header row is allowed.
inline TransferFunction read_transfer_function_csv(std::istream& is, const std::string& name) {
    TransferFunction tf;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (lineno == 1 && !t.empty() && !std::isdigit(static_cast<unsigned char>(t[0])) &&
            t[0] != '-' && t[0] != '+' && t[0] != '.')
            continue; // header
        const auto cells = detail::split_csv_row(t);
        const std::string where = name + ":" + std::to_string(lineno);
        if (cells.size() != 5) throw IoError(where + ": expected value,r,g,b,absorption");
        TfPoint p;
        p.value = detail::parse_number(cells[0], where);
        p.r = detail::parse_number(cells[1], where);
        p.g = detail::parse_number(cells[2], where);
        p.b = detail::parse_number(cells[3], where);
        p.absorption = detail::parse_number(cells[4], where);
        tf.points.push_back(p);
    }
    std::sort(tf.points.begin(), tf.points.end(),
              [](const TfPoint& a, const TfPoint& b) { return a.value < b.value; });
    tf.validate();
    return tf;
}

inline TransferFunction load_transfer_function(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open transfer function " + path);
    return read_transfer_function_csv(f, path);
}

/// Binary PPM, 8 bits per channel, linear values clamped to [0, 1].
inline void write_ppm(const Image& img, std::ostream& os) {
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (const auto& px : img.pixels) {
        for (double v : {px.r, px.g, px.b}) {
            const int b = static_cast<int>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
            os.put(static_cast<char>(b));
        }
    }
    if (!os) throw IoError("ppm: write failure");
}

inline void save_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    write_ppm(img, f);
}

inline nlohmann::json kernel_to_json(const PiecewisePolynomialKernel& k) {
    nlohmann::json pieces = nlohmann::json::array();
    for (const auto& pc : k.pieces) {
        nlohmann::json coeffs = nlohmann::json::array();
        for (std::size_t i = 0; i < pc.poly.size(); ++i) coeffs.push_back(pc.poly[i]);
        pieces.push_back({{"interval", {pc.r_lo, pc.r_hi}}, {"coefficients", coeffs}});
    }
    return {{"id", k.id}, {"q", k.q}, {"pieces", pieces}};
}

inline PiecewisePolynomialKernel kernel_from_json(const nlohmann::json& j) {
    PiecewisePolynomialKernel k;
    try {
        k.id = j.at("id").get<std::string>();
        k.q = j.at("q").get<double>();
        for (const auto& pj : j.at("pieces")) {
            KernelPiece pc;
            pc.r_lo = pj.at("interval").at(0).get<double>();
            pc.r_hi = pj.at("interval").at(1).get<double>();
            const auto& cs = pj.at("coefficients");
            for (std::size_t i = 0; i < cs.size(); ++i) pc.poly.set(i, cs.at(i).get<double>());
            k.pieces.push_back(pc);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("kernel json: ") + e.what());
    }
    validate_kernel(k);
    return k;
}

/// Accepts the builtin id "cubic-bspline" or a path to a kernel description.
inline PiecewisePolynomialKernel load_kernel(const std::string& id_or_path) {
    if (id_or_path.empty() || id_or_path == "cubic-bspline") return cubic_bspline();
    std::ifstream f(id_or_path);
    if (!f) throw IoError("unknown kernel '" + id_or_path +
                          "' (not a builtin id and not a readable file)");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(id_or_path + ": " + e.what());
    }
    return kernel_from_json(j);
}

inline Vec3 vec3_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw IoError("camera json: expected [x, y, z]");
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    try {
        const std::string mode = j.value("mode", std::string("orthographic"));
        if (mode == "orthographic")
            c.mode = Camera::Mode::orthographic;
        else if (mode == "pinhole")
            c.mode = Camera::Mode::pinhole;
        else
            throw IoError("camera json: mode must be 'orthographic' or 'pinhole'");
        if (j.contains("position")) c.position = vec3_from_json(j.at("position"));
        if (j.contains("look_at")) c.look_at = vec3_from_json(j.at("look_at"));
        if (j.contains("up")) c.up = vec3_from_json(j.at("up"));
        c.width = j.value("width", c.width);
        c.height = j.value("height", c.height);
        c.fov_deg = j.value("fov_deg", c.fov_deg);
        c.ortho_height = j.value("ortho_height", c.ortho_height);
        c.near = j.value("near", c.near);
        c.far = j.value("far", c.far);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("camera json: ") + e.what());
    }
    c.validate();
    return c;
}

inline Camera load_camera(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open camera file " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return camera_from_json(j);
}

} // namespace sphray
