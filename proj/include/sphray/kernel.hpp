#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sphray/errors.hpp"
#include "sphray/polynomial.hpp"
#include "sphray/quadrature.hpp"

namespace sphray {

/// One smooth radial piece of a kernel: w(r) = poly(r) on [r_lo, r_hi).
struct KernelPiece {
    double r_lo = 0.0;
    double r_hi = 0.0;
    Polynomial poly;
};

/// Radially symmetric smoothing kernel given as polynomial pieces tiling
/// [0, q]. Values vanish identically for r >= q.
struct PiecewisePolynomialKernel {
    std::string id;
    double q = 0.0;
    std::vector<KernelPiece> pieces;

    double operator()(double r) const {
        r = std::abs(r);
        if (r >= q) return 0.0;
        for (const auto& p : pieces)
            if (r < p.r_hi) return p.poly.eval(r);
        return 0.0;
    }

    double derivative(double r) const {
        r = std::abs(r);
        if (r >= q) return 0.0;
        for (const auto& p : pieces)
            if (r < p.r_hi) return p.poly.derivative().eval(r);
        return 0.0;
    }

    /// Piece edges including 0 and q, ascending.
    std::vector<double> breakpoints() const {
        std::vector<double> b;
        b.push_back(0.0);
        for (const auto& p : pieces) b.push_back(p.r_hi);
        return b;
    }
};

/// Checks interval tiling and value continuity at interior breakpoints.
inline void validate_kernel(const PiecewisePolynomialKernel& k, double tol = 1e-12) {
    if (!(k.q > 0.0)) throw ConfigError("kernel: support radius must be positive");
    if (k.pieces.empty()) throw ConfigError("kernel: needs at least one piece");
    double edge = 0.0;
    for (std::size_t i = 0; i < k.pieces.size(); ++i) {
        const auto& p = k.pieces[i];
        if (std::abs(p.r_lo - edge) > tol)
            throw ConfigError("kernel: pieces leave a gap at r = " + std::to_string(edge));
        if (!(p.r_hi > p.r_lo)) throw ConfigError("kernel: empty or reversed piece interval");
        if (i > 0) {
            const double left = k.pieces[i - 1].poly.eval(p.r_lo);
            const double right = p.poly.eval(p.r_lo);
            if (std::abs(left - right) > tol)
                throw ConfigError("kernel: discontinuity at r = " + std::to_string(p.r_lo));
        }
        edge = p.r_hi;
    }
    if (std::abs(edge - k.q) > tol) throw ConfigError("kernel: pieces do not reach the support radius");
}

/// The classic cubic B-spline smoothing kernel with support radius 2,
/// normalized so its 3D integral is 1: w(0) = 1/pi, w(1) = 1/(4 pi).
inline PiecewisePolynomialKernel cubic_bspline() {
    constexpr double s = 1.0 / (4.0 * std::numbers::pi);
    PiecewisePolynomialKernel k;
    k.id = "cubic-bspline";
    k.q = 2.0;
    // (2-r)^3 - 4(1-r)^3 = 4 - 6 r^2 + 3 r^3
    k.pieces.push_back({0.0, 1.0, Polynomial{4.0 * s, 0.0, -6.0 * s, 3.0 * s}});
    // (2-r)^3 = 8 - 12 r + 6 r^2 - r^3
    k.pieces.push_back({1.0, 2.0, Polynomial{8.0 * s, -12.0 * s, 6.0 * s, -1.0 * s}});
    return k;
}

/// A kernel value seen along a ray passing at normalized distance `lam` from
/// the particle center, parametrized by the signed offset t from the closest
/// approach: w(sqrt(lam^2 + t^2)).
inline double ray_section(const PiecewisePolynomialKernel& k, double lam, double t) {
    return k(std::sqrt(lam * lam + t * t));
}

inline double ray_section_dt(const PiecewisePolynomialKernel& k, double lam, double t) {
    const double r = std::sqrt(lam * lam + t * t);
    if (r == 0.0 || r >= k.q) return 0.0;
    return k.derivative(r) * t / r;
}

/// Half width of the interval where the section is nonzero.
inline double ray_section_support(const PiecewisePolynomialKernel& k, double lam) {
    const double d2 = k.q * k.q - lam * lam;
    return d2 > 0.0 ? std::sqrt(d2) : 0.0;
}

/// Offsets t > 0 where the section crosses a kernel piece edge; these are the
/// only points where it is not smooth, so quadrature segments split there.
/// For small lam the radius sqrt(lam^2 + t^2) bends sharply around t ~ lam,
/// which a fixed-order rule under-resolves, so a short geometric ladder of
/// extra cuts covers that layer.
inline std::vector<double> ray_section_splits(const PiecewisePolynomialKernel& k, double lam) {
    std::vector<double> out;
    for (double rb : k.breakpoints()) {
        if (rb > lam) {
            const double tb = std::sqrt(rb * rb - lam * lam);
            if (tb > 0.0) out.push_back(tb);
        }
    }
    if (lam > 0.0 && lam < 0.1 * k.q)
        for (double m : {1.0, 4.0, 16.0}) out.push_back(m * lam);
    return out;
}

/// Largest kernel amplitude, sampled. Used to scale absolute quadrature
/// floors for quantities that decay far below it near the support edge.
inline double kernel_scale(const PiecewisePolynomialKernel& k) {
    double m = 0.0;
    for (int i = 0; i <= 256; ++i) m = std::max(m, std::abs(k(k.q * i / 256.0)));
    return m;
}

/// Squared L2 norm of the section over the whole real line. The `scale`
/// overload avoids resampling the kernel amplitude in hot loops.
inline double ray_section_norm_sq(const PiecewisePolynomialKernel& k, double lam, double scale) {
    const double s = ray_section_support(k, lam);
    if (s <= 0.0) return 0.0;
    auto splits = ray_section_splits(k, lam);
    auto cuts = make_cuts(0.0, s, splits);
    return 2.0 * integrate_segments(
                     [&](double t) {
                         const double v = ray_section(k, lam, t);
                         return v * v;
                     },
                     cuts, 1e-12, 1e-12 * scale * scale * k.q);
}

inline double ray_section_norm_sq(const PiecewisePolynomialKernel& k, double lam) {
    return ray_section_norm_sq(k, lam, kernel_scale(k));
}

struct KernelConstants {
    double kappa = 0.0;       // L2 norm of one unit contribution over 3D space
    double kappa_prime = 0.0; // aggregate L2 norm of the section slope over all rays
};

inline KernelConstants kernel_constants(const PiecewisePolynomialKernel& k) {
    KernelConstants c;

    auto bp = k.breakpoints();
    const double norm3d_sq =
        4.0 * std::numbers::pi *
        integrate_segments(
            [&](double t) {
                const double v = t * k(t);
                return v * v;
            },
            std::span<const double>(bp));
    c.kappa = std::sqrt(std::max(norm3d_sq, 0.0));

    const double w0 = kernel_scale(k);
    auto slope_inner = [&](double lam) {
        const double s = ray_section_support(k, lam);
        if (s <= 0.0) return 0.0;
        auto cuts = make_cuts(0.0, s, ray_section_splits(k, lam));
        return 2.0 * integrate_segments(
                         [&](double t) {
                             const double g = ray_section_dt(k, lam, t);
                             return g * g;
                         },
                         cuts, 1e-12, 1e-12 * w0 * w0 * k.q);
    };
    auto outer_cuts = make_cuts(0.0, k.q, bp);
    const double slope_sq = integrate_segments([&](double lam) { return lam * slope_inner(lam); },
                                               std::span<const double>(outer_cuts), 1e-12,
                                               1e-12 * w0 * w0 * k.q * k.q);
    c.kappa_prime = std::sqrt(std::max(slope_sq, 0.0));
    return c;
}

} // namespace sphray
