#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sphray/parallel.hpp"
#include "sphray/quantize.hpp"

namespace sphray {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    double dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(Vec3 o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        if (!(n > 0.0)) throw ConfigError("cannot normalize a zero vector");
        return *this * (1.0 / n);
    }
};

struct Ray {
    Vec3 origin;
    Vec3 dir; // unit length
    std::uint64_t id = 0;
    int px = 0;
    int py = 0;
};

struct Camera {
    enum class Mode { orthographic, pinhole };

    Mode mode = Mode::orthographic;
    Vec3 position{0.0, 0.0, 0.0};
    Vec3 look_at{0.0, 0.0, -1.0};
    Vec3 up{0.0, 1.0, 0.0};
    int width = 64;
    int height = 64;
    double fov_deg = 60.0;      // vertical, pinhole only
    double ortho_height = 2.0;  // vertical world extent, orthographic only
    double near = 0.0;
    double far = 1e30;

    void validate() const {
        if (width < 1 || height < 1) throw ConfigError("camera: resolution must be positive");
        if (!(far > near)) throw ConfigError("camera: far plane must lie beyond near");
        if (mode == Mode::pinhole && !(fov_deg > 0.0 && fov_deg < 180.0))
            throw ConfigError("camera: field of view must be inside (0, 180) degrees");
        if (mode == Mode::orthographic && !(ortho_height > 0.0))
            throw ConfigError("camera: orthographic height must be positive");
        (void)forward(); // rejects look_at == position and degenerate up
        (void)right();
    }

    Vec3 forward() const { return (look_at - position).normalized(); }
    Vec3 right() const {
        Vec3 r = forward().cross(up);
        if (!(r.norm() > 1e-12)) throw ConfigError("camera: up is parallel to view direction");
        return r.normalized();
    }
    Vec3 up_vector() const { return right().cross(forward()); }

    double aspect() const { return static_cast<double>(width) / height; }

    /// Ray through the center of pixel (px, py); py counts down from the top.
    Ray ray_at(int px, int py) const {
        const double u = (px + 0.5) / width * 2.0 - 1.0;
        const double v = 1.0 - (py + 0.5) / height * 2.0;
        Ray r;
        r.px = px;
        r.py = py;
        r.id = static_cast<std::uint64_t>(py) * width + px;
        if (mode == Mode::orthographic) {
            const double hw = 0.5 * ortho_height * aspect();
            const double hh = 0.5 * ortho_height;
            r.origin = position + right() * (u * hw) + up_vector() * (v * hh);
            r.dir = forward();
        } else {
            const double th = std::tan(fov_deg * std::numbers::pi / 360.0);
            r.origin = position;
            r.dir = (forward() + right() * (u * th * aspect()) + up_vector() * (v * th))
                        .normalized();
        }
        return r;
    }
};

struct RayHit {
    Ray ray;
    double lam = 0.0;   // perpendicular distance in smoothing-radius units
    double t_chi = 0.0; // ray parameter of the closest point to the center
};

namespace detail {

inline bool hit_ray(const Ray& r, Vec3 chi, double support, double h, double near, double far,
                    RayHit& out) {
    const Vec3 oc = chi - r.origin;
    const double t = oc.dot(r.dir);
    const double d2 = oc.dot(oc) - t * t;
    if (!(d2 < support * support)) return false;
    if (t + support <= near || t - support >= far) return false;
    out = {r, std::sqrt(std::max(d2, 0.0)) / h, t};
    return true;
}

} // namespace detail

/// All rays passing strictly inside the particle's influence sphere of radius
/// q h, with their closest-point parameters. A conservative pixel bounding
/// box is scanned and each candidate is tested exactly, so the result equals
/// the all-pixel test.
inline std::vector<RayHit> particle_ray_footprint(const Particle& p, const Camera& cam,
                                                  double q) {
    const Vec3 chi{p.x, p.y, p.z};
    const double support = q * p.h;
    std::vector<RayHit> hits;

    int px0 = 0, px1 = cam.width - 1, py0 = 0, py1 = cam.height - 1;
    const Vec3 rel = chi - cam.position;
    if (cam.mode == Camera::Mode::orthographic) {
        const double hw = 0.5 * cam.ortho_height * cam.aspect();
        const double hh = 0.5 * cam.ortho_height;
        const double cx = rel.dot(cam.right());
        const double cy = rel.dot(cam.up_vector());
        // pixel center grid: x = (px + 0.5)/W * 2hw - hw
        px0 = std::max(px0, static_cast<int>(std::floor((cx - support + hw) / (2 * hw) *
                                                        cam.width - 0.5)) - 1);
        px1 = std::min(px1, static_cast<int>(std::ceil((cx + support + hw) / (2 * hw) *
                                                       cam.width - 0.5)) + 1);
        py0 = std::max(py0, static_cast<int>(std::floor((hh - (cy + support)) / (2 * hh) *
                                                        cam.height - 0.5)) - 1);
        py1 = std::min(py1, static_cast<int>(std::ceil((hh - (cy - support)) / (2 * hh) *
                                                       cam.height - 0.5)) + 1);
    } else {
        const double depth = rel.dot(cam.forward());
        if (depth - support > 0.0) {
            // extremes of x/z over the sphere's bounding box: a positive
            // numerator peaks at the near face, a negative one at the far
            // face; the result is a superset and the per-ray test trims it
            const double zmin = depth - support;
            const double zmax = depth + support;
            const double cx = rel.dot(cam.right());
            const double cy = rel.dot(cam.up_vector());
            const double th = std::tan(cam.fov_deg * std::numbers::pi / 360.0);
            auto ratio_lo = [&](double c) { return (c - support) / (c - support <= 0.0 ? zmin : zmax); };
            auto ratio_hi = [&](double c) { return (c + support) / (c + support >= 0.0 ? zmin : zmax); };
            const double u_lo = ratio_lo(cx) / (th * cam.aspect());
            const double u_hi = ratio_hi(cx) / (th * cam.aspect());
            const double v_lo = ratio_lo(cy) / th;
            const double v_hi = ratio_hi(cy) / th;
            px0 = std::max(px0, static_cast<int>(std::floor((u_lo + 1.0) * 0.5 * cam.width -
                                                            0.5)) - 1);
            px1 = std::min(px1, static_cast<int>(std::ceil((u_hi + 1.0) * 0.5 * cam.width -
                                                           0.5)) + 1);
            py0 = std::max(py0, static_cast<int>(std::floor((1.0 - v_hi) * 0.5 * cam.height -
                                                            0.5)) - 1);
            py1 = std::min(py1, static_cast<int>(std::ceil((1.0 - v_lo) * 0.5 * cam.height -
                                                           0.5)) + 1);
        } // else the sphere reaches behind the eye: scan everything
    }

    RayHit hit;
    for (int py = std::max(py0, 0); py <= std::min(py1, cam.height - 1); ++py)
        for (int px = std::max(px0, 0); px <= std::min(px1, cam.width - 1); ++px)
            if (detail::hit_ray(cam.ray_at(px, py), chi, support, p.h, cam.near, cam.far, hit))
                hits.push_back(hit);
    return hits;
}

/// Orders knots by ray and position. Equal positions may keep any relative
/// order: their jumps are added before use, which commutes exactly.
template <class Int>
void sort_knots(std::vector<QuantizedKnot<Int>>& knots) {
    std::stable_sort(knots.begin(), knots.end(),
                     [](const QuantizedKnot<Int>& a, const QuantizedKnot<Int>& b) {
                         return a.ray != b.ray ? a.ray < b.ray : a.t < b.t;
                     });
}

/// One piece of the accumulated field: coefficients (in sigma/tau^d units of
/// the piece-local offset) valid from knot position t to the next knot.
template <class Int>
struct FieldPiece {
    Int t{};
    std::array<Int, max_degree + 1> a{};
};

/// Exact integer re-expansion of the running polynomial at each knot. The
/// op counter exposes the constant per-knot cost (quadratic in the degree).
template <class Int>
class RayAccumulator {
public:
    explicit RayAccumulator(int D) : D_(D) {}

    void consume(Int t, const std::array<Int, max_degree + 1>& jump) {
        if (started_ && !(t_prev_ < t))
            throw NumericError("accumulate: knots not sorted along the ray");
        if (started_) advance(t);
        t_prev_ = t;
        started_ = true;
        for (int d = 0; d <= D_; ++d) {
            a_[d] = a_[d] + Checked<Int>(jump[d]);
            ++ops_;
        }
    }

    const std::array<Checked<Int>, max_degree + 1>& coefficients() const { return a_; }
    bool all_zero() const {
        for (int d = 0; d <= D_; ++d)
            if (a_[d].v != Int{}) return false;
        return true;
    }
    std::uint64_t ops() const { return ops_; }

private:
    void advance(Int t) {
        const Checked<Int> dt = Checked<Int>(t) - Checked<Int>(t_prev_);
        std::array<Checked<Int>, max_degree + 1> next{};
        for (int d = 0; d <= D_; ++d) {
            Checked<Int> acc{};
            Checked<Int> pw(Int{1});
            for (int j = d; j <= D_; ++j) {
                acc = acc + Checked<Int>(binomial_int(j, d)) * a_[j] * pw;
                ops_ += 2;
                if (j < D_) {
                    pw = pw * dt;
                    ++ops_;
                }
            }
            next[d] = acc;
        }
        a_ = next;
    }

    int D_;
    std::array<Checked<Int>, max_degree + 1> a_{};
    Int t_prev_{};
    bool started_ = false;
    std::uint64_t ops_ = 0;
};

/// Folds one ray's sorted knots into field pieces. Knots sharing a position
/// are merged by adding their jumps first. The trailing piece carries the
/// residual coefficients; for closed particle sets they are exactly zero.
template <class Int>
std::vector<FieldPiece<Int>> accumulate(std::span<const QuantizedKnot<Int>> stream, int D,
                                        std::uint64_t* ops = nullptr) {
    std::vector<FieldPiece<Int>> pieces;
    if (stream.empty()) return pieces;
    RayAccumulator<Int> acc(D);

    std::size_t i = 0;
    try {
        while (i < stream.size()) {
            std::size_t j = i + 1;
            std::array<Int, max_degree + 1> jump = stream[i].b;
            while (j < stream.size() && stream[j].t == stream[i].t) {
                for (int d = 0; d <= D; ++d)
                    jump[d] = (Checked<Int>(jump[d]) + Checked<Int>(stream[j].b[d])).v;
                ++j;
            }
            acc.consume(stream[i].t, jump);
            FieldPiece<Int> pc;
            pc.t = stream[i].t;
            for (int d = 0; d <= D; ++d) pc.a[d] = acc.coefficients()[d].v;
            pieces.push_back(pc);
            i = j;
        }
    } catch (const OverflowError& e) {
        throw OverflowError("accumulate: " + std::string(e.what()) + " (ray " +
                                std::to_string(stream[i].ray) + ")",
                            e.particle_index, stream[i].ray);
    }
    if (ops) *ops += acc.ops();
    return pieces;
}

/// Field value of one piece at world position t along the ray.
template <class Int>
double evaluate_piece(const FieldPiece<Int>& pc, const QuantaConfig& qc, int D, double t) {
    const double x = t / qc.tau - static_cast<double>(pc.t);
    double acc = 0.0;
    for (int d = D; d >= 0; --d) acc = acc * x + static_cast<double>(pc.a[d]);
    return acc * qc.sigma;
}

struct TfPoint {
    double value = 0.0;
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;
    double absorption = 0.0;
};

/// Maps field values to emission color and absorption by linear interpolation
/// between sorted control points, clamping beyond the ends.
struct TransferFunction {
    std::vector<TfPoint> points;

    void validate() const {
        if (points.empty()) throw ConfigError("transfer function: no control points");
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (points[i].absorption < 0.0)
                throw ConfigError("transfer function: absorption must be nonnegative");
            if (i > 0 && !(points[i].value > points[i - 1].value))
                throw ConfigError("transfer function: values must be strictly increasing");
        }
    }

    TfPoint sample(double v) const {
        if (points.empty()) return {};
        if (v <= points.front().value) return points.front();
        if (v >= points.back().value) return points.back();
        std::size_t i = 1;
        while (points[i].value < v) ++i;
        const TfPoint& a = points[i - 1];
        const TfPoint& b = points[i];
        const double w = (v - a.value) / (b.value - a.value);
        return {v, a.r + w * (b.r - a.r), a.g + w * (b.g - a.g), a.b + w * (b.b - a.b),
                a.absorption + w * (b.absorption - a.absorption)};
    }
};

struct Rgb {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;
};

struct Rgba {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;
    double a = 0.0; // opacity
};

/// Emission/absorption compositing over one ray's pieces, front to back with
/// midpoint sampling (at least two samples per piece, more when the piece is
/// longer than the step) and early exit once opacity passes 0.999.
template <class Int>
Rgba composite(std::span<const FieldPiece<Int>> pieces, const QuantaConfig& qc, int D,
               const TransferFunction& tf, double step, double t_min, double t_max) {
    Rgba out;
    double T = 1.0; // transmittance
    if (!(step > 0.0)) throw ConfigError("composite: step must be positive");

    for (std::size_t i = 0; i + 1 < pieces.size() && T > 1e-3; ++i) {
        const double lo = std::max(static_cast<double>(pieces[i].t) * qc.tau, t_min);
        const double hi = std::min(static_cast<double>(pieces[i + 1].t) * qc.tau, t_max);
        if (!(hi > lo)) continue;
        const int n = std::max(2, static_cast<int>(std::ceil((hi - lo) / step)));
        const double dt = (hi - lo) / n;
        for (int s = 0; s < n && T > 1e-3; ++s) {
            const double t = lo + (s + 0.5) * dt;
            const TfPoint m = tf.sample(evaluate_piece(pieces[i], qc, D, t));
            const double alpha = 1.0 - std::exp(-m.absorption * dt);
            out.r += T * alpha * m.r;
            out.g += T * alpha * m.g;
            out.b += T * alpha * m.b;
            T *= 1.0 - alpha;
        }
    }
    out.a = 1.0 - T;
    return out;
}

struct Image {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels; // row-major, top row first

    Rgb& at(int px, int py) { return pixels[static_cast<std::size_t>(py) * width + px]; }
    const Rgb& at(int px, int py) const {
        return pixels[static_cast<std::size_t>(py) * width + px];
    }
};

struct RenderOptions {
    double step = 0.0; // sampling step in world units; <= 0 picks h_r / 8
    Rgb background;
    int threads = 1;
};

struct RenderStats {
    std::size_t particles = 0;
    std::size_t skipped_particles = 0; // outside every ray's reach
    std::size_t knots = 0;
    std::size_t rays_touched = 0;
    std::uint64_t int_ops = 0;
    std::size_t residual_failures = 0;
    double step = 0.0;
};

/// Three sweeps: quantize particle contributions onto rays, sort the knots,
/// then accumulate and composite each touched ray. Untouched rays show the
/// background. The output is bitwise deterministic for any thread count:
/// integer knot data is exact and merging is order-independent.
template <class Int>
Image render_scene(std::span<const Particle> particles, const Camera& cam,
                   const TransferFunction& tf, const Lut& lut, const QuantaConfig& qc,
                   const DatasetStats& stats, const RenderOptions& opts,
                   RenderStats* out_stats = nullptr) {
    cam.validate();
    tf.validate();
    const int D = lut.D;
    RenderStats st;
    st.particles = particles.size();
    st.step = opts.step > 0.0 ? opts.step : stats.h_r / 8.0;

    const int threads = resolve_threads(opts.threads);

    // sweep 1: particle contributions to per-chunk knot buffers
    std::vector<std::vector<QuantizedKnot<Int>>> buffers(particles.size() ? threads : 0);
    std::vector<std::size_t> skipped(buffers.size(), 0);
    if (!particles.empty()) {
        const std::size_t chunk = (particles.size() + threads - 1) / threads;
        parallel_for(buffers.size(), threads, [&](std::size_t b) {
            const std::size_t lo = b * chunk;
            const std::size_t hi = std::min(lo + chunk, particles.size());
            for (std::size_t i = lo; i < hi; ++i) {
                auto hits = particle_ray_footprint(particles[i], cam, lut.q);
                if (hits.empty()) ++skipped[b];
                for (const auto& hit : hits) {
                    auto ks = quantize_particle<Int>(particles[i], hit.ray.id, hit.t_chi,
                                                     hit.lam, lut, qc,
                                                     static_cast<std::int64_t>(i));
                    buffers[b].insert(buffers[b].end(), ks.begin(), ks.end());
                }
            }
        });
    }
    std::vector<QuantizedKnot<Int>> knots;
    for (auto& b : buffers) knots.insert(knots.end(), b.begin(), b.end());
    buffers.clear();
    st.knots = knots.size();
    for (auto n : skipped) st.skipped_particles += n;

    // sweep 2
    sort_knots(knots);

    // ray boundaries in the sorted stream
    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < knots.size(); ++i)
        if (i == 0 || knots[i].ray != knots[i - 1].ray) starts.push_back(i);
    starts.push_back(knots.size());
    const std::size_t nrays = starts.empty() ? 0 : starts.size() - 1;
    st.rays_touched = nrays;

    Image img;
    img.width = cam.width;
    img.height = cam.height;
    img.pixels.assign(static_cast<std::size_t>(cam.width) * cam.height, opts.background);

    // sweep 3
    std::vector<std::uint64_t> ops(nrays, 0);
    std::vector<std::uint8_t> residual_bad(nrays, 0);
    parallel_for(nrays, threads, [&](std::size_t r) {
        const std::span<const QuantizedKnot<Int>> stream(knots.data() + starts[r],
                                                         starts[r + 1] - starts[r]);
        auto pieces = accumulate(stream, D, &ops[r]);
        bool zero = true;
        for (int d = 0; d <= D; ++d)
            if (pieces.back().a[d] != Int{}) zero = false;
        residual_bad[r] = !zero;

        const std::uint64_t id = stream[0].ray;
        const int px = static_cast<int>(id % cam.width);
        const int py = static_cast<int>(id / cam.width);
        const Rgba c = composite<Int>(pieces, qc, D, tf, st.step, cam.near, cam.far);
        img.at(px, py) = {c.r + (1.0 - c.a) * opts.background.r,
                          c.g + (1.0 - c.a) * opts.background.g,
                          c.b + (1.0 - c.a) * opts.background.b};
    });
    for (std::size_t r = 0; r < nrays; ++r) {
        st.int_ops += ops[r];
        st.residual_failures += residual_bad[r];
    }

    if (out_stats) *out_stats = st;
    return img;
}

} // namespace sphray
