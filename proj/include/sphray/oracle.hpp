#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "sphray/quantize.hpp"
#include "sphray/raycast.hpp"

// Reference implementations for testing. Everything here recomputes results
// from first principles with methods chosen to be different from the library's
// own: closed-form kernel evaluation instead of the piece table, composite
// Simpson instead of adaptive Gauss quadrature, a dense Gram solve instead of
// sequential orthogonalization, arbitrary-precision integers instead of the
// checked fixed-width recurrence. Production headers are included only for
// their data types.
namespace sphray::oracle {

using BigInt = boost::multiprecision::cpp_int;

/// Cubic B-spline in its textbook form, support radius 2.
inline double cubic_w(double r) {
    r = std::abs(r);
    constexpr double c = 1.0 / (4.0 * std::numbers::pi);
    if (r < 1.0) return c * (4.0 - 6.0 * r * r + 3.0 * r * r * r);
    if (r < 2.0) return c * (2.0 - r) * (2.0 - r) * (2.0 - r);
    return 0.0;
}

/// Composite Simpson rule with n panels (n is rounded up to even).
template <class F>
double simpson(F&& f, double a, double b, int n) {
    if (n < 2) n = 2;
    if (n % 2) ++n;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

template <class F>
double l2_norm(F&& f, double a, double b, int n) {
    return std::sqrt(std::max(simpson([&](double t) { return f(t) * f(t); }, a, b, n), 0.0));
}

template <class F, class G>
double l2_distance(F&& f, G&& g, double a, double b, int n) {
    return std::sqrt(std::max(simpson(
                                  [&](double t) {
                                      const double d = f(t) - g(t);
                                      return d * d;
                                  },
                                  a, b, n),
                              0.0));
}

/// Restriction of the 3d kernel to a line passing at distance lam from the
/// particle center, as a function of arc length from the closest point.
inline auto section(double lam) {
    return [lam](double t) { return cubic_w(std::hypot(lam, t)); };
}

inline double section_support(double lam) {
    return lam >= 2.0 ? 0.0 : std::sqrt(4.0 - lam * lam);
}

inline double section_norm(double lam, int n = 4096) {
    const double s = section_support(lam);
    if (s == 0.0) return 0.0;
    return std::sqrt(2.0 * std::max(simpson([&](double t) { return cubic_w(std::hypot(lam, t)) *
                                                                   cubic_w(std::hypot(lam, t)); },
                                            0.0, s, n),
                                    0.0));
}

/// L2 error of the best single even hat (the K = 2, D = 1 candidate space:
/// one free knot theta, approximant proportional to max(0, 1 - |t|/theta)).
inline double hat_error(double lam, double theta, int n = 4096) {
    const double s = section_support(lam);
    const double nb2 = 2.0 * simpson([&](double t) {
        const double v = cubic_w(std::hypot(lam, t));
        return v * v;
    }, 0.0, s, n);
    const double hi = std::min(theta, s);
    double ip = 0.0;
    if (hi > 0.0)
        ip = 2.0 * simpson([&](double t) {
            return cubic_w(std::hypot(lam, t)) * (1.0 - t / theta);
        }, 0.0, hi, n);
    // the tail of the hat past the support sees a zero section
    const double hat2 = 2.0 * theta / 3.0;
    return std::sqrt(std::max(nb2 - ip * ip / hat2, 0.0));
}

/// Solves A x = b in place with partial pivoting. A is row-major n x n.
inline std::vector<double> solve_dense(std::vector<double> A, std::vector<double> b) {
    const int n = static_cast<int>(b.size());
    for (int c = 0; c < n; ++c) {
        int p = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(A[r * n + c]) > std::abs(A[p * n + c])) p = r;
        for (int j = 0; j < n; ++j) std::swap(A[c * n + j], A[p * n + j]);
        std::swap(b[c], b[p]);
        const double piv = A[c * n + c];
        if (std::abs(piv) < 1e-300) throw NumericError("oracle: singular gram matrix");
        for (int r = c + 1; r < n; ++r) {
            const double m = A[r * n + c] / piv;
            if (m == 0.0) continue;
            for (int j = c; j < n; ++j) A[r * n + j] -= m * A[c * n + j];
            b[r] -= m * b[c];
        }
    }
    std::vector<double> x(n, 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double acc = b[r];
        for (int j = r + 1; j < n; ++j) acc -= A[r * n + j] * x[j];
        x[r] = acc / A[r * n + r];
    }
    return x;
}

/// Projection error onto even continuous piecewise polynomials of degree D
/// vanishing outside the outermost knot, built from the truncated power basis
/// (theta_j - |t|)_+^d and a dense normal-equations solve. This basis spans
/// the candidate space only when a breakpoint at t = 0 is allowed, i.e. for
/// even total knot counts.
inline double tpower_projection_error(double lam, std::span<const double> knots, int D,
                                      int n = 4096) {
    const double s = section_support(lam);
    const auto B = section(lam);
    const double lim = std::max(s, knots.empty() ? 0.0 : knots.back());

    std::vector<std::function<double(double)>> basis;
    for (double theta : knots)
        for (int d = 1; d <= D; ++d)
            basis.push_back([theta, d](double t) {
                const double u = theta - std::abs(t);
                return u > 0.0 ? std::pow(u, d) : 0.0;
            });

    const int m = static_cast<int>(basis.size());
    std::vector<double> G(m * m, 0.0), rhs(m, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = i; j < m; ++j) {
            const double v =
                2.0 * simpson([&](double t) { return basis[i](t) * basis[j](t); }, 0.0, lim, n);
            G[i * m + j] = G[j * m + i] = v;
        }
        rhs[i] = 2.0 * simpson([&](double t) { return basis[i](t) * B(t); }, 0.0, lim, n);
    }
    const auto x = solve_dense(G, rhs);

    double captured = 0.0;
    for (int i = 0; i < m; ++i) captured += x[i] * rhs[i];
    const double nb2 =
        2.0 * simpson([&](double t) { return B(t) * B(t); }, 0.0, s, n);
    return std::sqrt(std::max(nb2 - captured, 0.0));
}

/// Golden-section minimum of a unimodal function on [a, b].
template <class F>
double golden_min(F&& f, double a, double b, int iters = 200) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc < fd) {
            b = d, d = c, fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c, c = d, fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return (a + b) / 2.0;
}

/// Exhaustive minimum over n+1 equally spaced samples of [a, b].
template <class F>
std::pair<double, double> grid_min(F&& f, double a, double b, int n) {
    double best_x = a, best = f(a);
    for (int i = 1; i <= n; ++i) {
        const double x = a + (b - a) * i / n;
        const double v = f(x);
        if (v < best) best = v, best_x = x;
    }
    return {best_x, best};
}

/// Monte-Carlo estimate of the L2 norm of a radial function over R^3,
/// sampling the radius uniformly: ||w||^2 = 4 pi q E[r^2 w(r)^2].
inline double mc_radial_norm3(const std::function<double(double)>& w, double q, int samples,
                              std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, q);
    double acc = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double r = uni(rng);
        const double v = w(r);
        acc += r * r * v * v;
    }
    return std::sqrt(4.0 * std::numbers::pi * q * acc / samples);
}

/// Radial derivative of the textbook cubic B-spline.
inline double cubic_dw(double r) {
    r = std::abs(r);
    constexpr double c = 1.0 / (4.0 * std::numbers::pi);
    if (r < 1.0) return c * (-12.0 * r + 9.0 * r * r);
    if (r < 2.0) return -3.0 * c * (2.0 - r) * (2.0 - r);
    return 0.0;
}

/// The impact-parameter-weighted L2 norm of the section slope over all rays
/// collapses to a single radial integral: writing the section derivative as
/// w'(r) t / r and switching the (lam, t) half plane to polar coordinates,
/// int lam (dB/dt)^2 dlam dt = 2/3 int_0^q r^2 w'(r)^2 dr.
inline double slope_norm(const std::function<double(double)>& dw, double q, int n = 65536) {
    return std::sqrt(
        2.0 / 3.0 *
        simpson([&](double r) { return r * r * dw(r) * dw(r); }, 0.0, q, n));
}

/// Superposed field of all particles at a point, straight from the sum.
inline double field_at(std::span<const Particle> ps, const Vec3& x) {
    double acc = 0.0;
    for (const auto& p : ps) {
        const double dx = x.x - p.x, dy = x.y - p.y, dz = x.z - p.z;
        const double r = std::sqrt(dx * dx + dy * dy + dz * dz) / p.h;
        if (r < 2.0) acc += p.mass * p.value / (p.density * p.h * p.h * p.h) * cubic_w(r);
    }
    return acc;
}

inline double field_along_ray(std::span<const Particle> ps, const Ray& ray, double t) {
    return field_at(ps, ray.origin + ray.dir * t);
}

/// Every pixel whose ray passes within the support sphere, by trying them all.
inline std::vector<std::uint64_t> brute_force_footprint(const Camera& cam, const Vec3& center,
                                                        double support) {
    std::vector<std::uint64_t> out;
    for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
            const Ray r = cam.ray_at(px, py);
            const Vec3 rel = center - r.origin;
            const double tc = rel.dot(r.dir);
            const double d2 = rel.dot(rel) - tc * tc;
            if (!(d2 < support * support)) continue;
            const double half = std::sqrt(support * support - d2);
            if (tc + half > cam.near && tc - half < cam.far) out.push_back(r.id);
        }
    return out;
}

inline BigInt big_binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    BigInt num = 1, den = 1;
    for (int i = 0; i < k; ++i) {
        num *= n - i;
        den *= i + 1;
    }
    return num / den;
}

struct ReplayPiece {
    BigInt t;
    std::array<BigInt, max_degree + 1> a{};
};

/// Recomputes the running polynomial of one ray without the recurrence: the
/// coefficient of (t - t_k)^d on piece k is the full double sum over all
/// preceding jumps, evaluated in arbitrary precision. Knots must be sorted;
/// equal positions are merged here, matching the streaming semantics.
template <class Int>
std::vector<ReplayPiece> replay_ray(std::span<const QuantizedKnot<Int>> knots, int D) {
    std::vector<BigInt> ts;
    std::vector<std::array<BigInt, max_degree + 1>> jumps;
    for (const auto& k : knots) {
        const BigInt t = BigInt(static_cast<long long>(k.t));
        if (!ts.empty() && t < ts.back())
            throw NumericError("oracle replay: knots not sorted");
        if (ts.empty() || t != ts.back()) {
            ts.push_back(t);
            jumps.emplace_back();
        }
        for (int d = 0; d <= D; ++d)
            jumps.back()[d] += BigInt(static_cast<long long>(k.b[d]));
    }

    std::vector<ReplayPiece> out(ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) {
        out[k].t = ts[k];
        for (int d = 0; d <= D; ++d) {
            BigInt acc = 0;
            for (std::size_t i = 0; i <= k; ++i) {
                const BigInt off = ts[k] - ts[i];
                BigInt pw = 1; // off^(j - d), starting at j = d
                for (int j = d; j <= D; ++j) {
                    acc += big_binomial(j, d) * jumps[i][j] * pw;
                    pw *= off;
                }
            }
            out[k].a[d] = acc;
        }
    }
    return out;
}

/// Value of the replayed integer polynomial on piece k at integer abscissa t.
inline BigInt replay_eval(const ReplayPiece& pc, const BigInt& t, int D) {
    const BigInt x = t - pc.t;
    BigInt acc = 0;
    for (int d = D; d >= 0; --d) acc = acc * x + pc.a[d];
    return acc;
}

} // namespace sphray::oracle
