#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sphray/int_ops.hpp"
#include "sphray/lut.hpp"

namespace sphray {

struct Particle {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double mass = 0.0;
    double density = 0.0;
    double h = 0.0;
    double value = 0.0;

    /// Scale of this particle's field contribution, mass*value/(density*h^3).
    double contribution_factor() const { return mass * value / (density * h * h * h); }
};

/// Per-dataset quantities driving quanta selection: medians as representative
/// attributes and a declared upper bound for the accumulated coefficients.
struct DatasetStats {
    double mass_r = 0.0;
    double density_r = 0.0;
    double h_r = 0.0;
    double value_r = 0.0;
    double phi_repr = 0.0;
    double a_max = 0.0;
    double clustering_factor = 0.0;
    std::size_t count = 0;
};

/// The two quantum values: lengths along a ray come in multiples of tau,
/// order-d polynomial coefficients in multiples of sigma/tau^d.
struct QuantaConfig {
    double tau = 0.0;
    double sigma = 0.0;
    IntWidth width = IntWidth::w64;

    double int_max() const { return int_max_double(width); }
    double sigma_d(int d) const { return sigma / std::pow(tau, d); }
};

namespace detail {

inline double order_weight(double q, int d) {
    return 2.0 * std::pow(q, 2 * d + 3) / ((2 * d + 1) * (2 * d + 3));
}

} // namespace detail

/// Mean-style relative error caused by snapping knot positions to tau and
/// coefficients to sigma/tau^d, combined across orders as if orthogonal:
///   (1/4k) sqrt(k'^2 tau^2 + sum_d 2q^(2d+3)/((2d+1)(2d+3)) sigma^2/tau^2d).
inline double quantization_error(const ApproxConfig& cfg, const KernelConstants& c, double q,
                                 double tau, double sigma) {
    cfg.validate();
    if (!(tau > 0.0)) throw ConfigError("quantization_error: tau must be positive");
    if (!(sigma >= 0.0)) throw ConfigError("quantization_error: sigma must be nonnegative");
    double s = c.kappa_prime * c.kappa_prime * tau * tau;
    for (int d = 0; d <= cfg.D; ++d)
        s += detail::order_weight(q, d) * sigma * sigma / std::pow(tau, 2 * d);
    return std::sqrt(s) / (4.0 * c.kappa);
}

/// d(Q^2)/dtau. Positive-order terms fall with tau, the positional term
/// grows, so the sign change brackets the optimum.
inline double quantization_error_slope(const ApproxConfig& cfg, const KernelConstants& c,
                                       double q, double tau, double sigma) {
    double s = 2.0 * c.kappa_prime * c.kappa_prime * tau;
    for (int d = 1; d <= cfg.D; ++d)
        s -= 2.0 * d * detail::order_weight(q, d) * sigma * sigma / std::pow(tau, 2 * d + 1);
    return s / (16.0 * c.kappa * c.kappa);
}

/// d^2(Q^2)/dtau^2, a sum of positive terms: Q^2 is strictly convex in tau.
inline double quantization_error_curvature(const ApproxConfig& cfg, const KernelConstants& c,
                                           double q, double tau, double sigma) {
    double s = 2.0 * c.kappa_prime * c.kappa_prime;
    for (int d = 1; d <= cfg.D; ++d)
        s += 2.0 * d * (2 * d + 1) * detail::order_weight(q, d) * sigma * sigma /
             std::pow(tau, 2 * d + 2);
    return s / (16.0 * c.kappa * c.kappa);
}

/// Unique minimizer of Q over tau at fixed sigma, by bisecting the slope's
/// sign change on a log scale.
inline double optimal_tau(const ApproxConfig& cfg, const KernelConstants& c, double q,
                          double sigma) {
    cfg.validate();
    if (!(sigma > 0.0))
        throw ConfigError("optimal_tau: sigma must be positive (a zero value quantum drives "
                          "tau to zero)");
    double lo = 1e-12, hi = 1e12;
    while (quantization_error_slope(cfg, c, q, lo, sigma) > 0.0 && lo > 1e-300) lo *= 1e-3;
    while (quantization_error_slope(cfg, c, q, hi, sigma) < 0.0 && hi < 1e300) hi *= 1e3;
    for (int it = 0; it < 300 && hi > lo * (1.0 + 1e-15); ++it) {
        const double mid = std::sqrt(lo * hi);
        if (quantization_error_slope(cfg, c, q, mid, sigma) > 0.0)
            hi = mid;
        else
            lo = mid;
    }
    return std::sqrt(lo * hi);
}

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Medians as representative attributes; a_max as the largest single-particle
/// amplitude (contribution factor times the largest tabulated approximation
/// amplitude) times a clustering factor covering overlapping particles.
inline DatasetStats dataset_stats(std::span<const Particle> particles, const Lut& lut,
                                  double clustering_factor = 16.0) {
    if (particles.empty()) throw ConfigError("dataset_stats: empty particle set");
    if (!(clustering_factor > 0.0))
        throw ConfigError("dataset_stats: clustering factor must be positive");

    std::vector<double> mass, density, h, value;
    mass.reserve(particles.size());
    density.reserve(particles.size());
    h.reserve(particles.size());
    value.reserve(particles.size());
    double phi_max = 0.0;
    for (const auto& p : particles) {
        if (!(p.h > 0.0) || !(p.density > 0.0))
            throw ConfigError("dataset_stats: particles need positive smoothing radius "
                              "and density");
        mass.push_back(p.mass);
        density.push_back(p.density);
        h.push_back(p.h);
        value.push_back(p.value);
        phi_max = std::max(phi_max, std::abs(p.contribution_factor()));
    }

    DatasetStats s;
    s.mass_r = detail::median(std::move(mass));
    s.density_r = detail::median(std::move(density));
    s.h_r = detail::median(std::move(h));
    s.value_r = detail::median(std::move(value));
    s.phi_repr = s.mass_r * s.value_r / (s.density_r * s.h_r * s.h_r * s.h_r);
    s.clustering_factor = clustering_factor;
    s.count = particles.size();

    double amp = 0.0;
    for (const auto& e : lut.entries) amp = std::max(amp, entry_amplitude(e, lut.K, lut.D));
    s.a_max = clustering_factor * phi_max * amp;
    return s;
}

/// sigma is pinned to the largest value the integer width can hold; tau then
/// minimizes the error estimate in the representative particle's units.
inline QuantaConfig choose_quanta(const ApproxConfig& cfg, const KernelConstants& c, double q,
                                  const DatasetStats& stats, IntWidth width) {
    if (!(stats.a_max > 0.0)) throw ConfigError("choose_quanta: a_max must be positive");
    if (!(stats.phi_repr > 0.0))
        throw ConfigError("choose_quanta: representative contribution factor must be "
                          "positive");
    if (!(stats.h_r > 0.0))
        throw ConfigError("choose_quanta: representative smoothing radius must be positive");

    QuantaConfig qc;
    qc.width = width;
    qc.sigma = stats.a_max / int_max_double(width);
    qc.tau = optimal_tau(cfg, c, q, qc.sigma / stats.phi_repr) * stats.h_r;
    return qc;
}

/// One emitted knot: the position in tau units and the jump of each
/// polynomial coefficient in sigma/tau^d units, tagged with the target ray.
template <class Int>
struct QuantizedKnot {
    std::uint64_t ray = 0;
    Int t{};
    std::array<Int, max_degree + 1> b{};
};

/// Converts one particle's table entry into integer knots for one ray.
/// t_chi is the ray parameter of the particle's closest point, lam the
/// perpendicular distance in smoothing-radius units. Only the positive-side
/// data is rounded; the negative side and the closure come from the exact
/// integer mirror so the result telescopes to zero past the last knot.
template <class Int>
std::vector<QuantizedKnot<Int>> quantize_particle(const Particle& p, std::uint64_t ray,
                                                  double t_chi, double lam, const Lut& lut,
                                                  const QuantaConfig& qc,
                                                  std::int64_t particle_index = -1) {
    if (!(lam < lut.q)) return {};
    const auto& e = lut.lookup(lam);
    const int K = lut.K;
    const int D = lut.D;
    const int m = positive_knot_count({K, D});

    try {
        std::vector<Checked<Int>> pos(m + 1);
        pos[0] = Checked<Int>(round_to_int<Int>(t_chi / qc.tau, "knot position"));
        for (int k = 1; k <= m; ++k)
            pos[k] = pos[0] +
                     Checked<Int>(round_to_int<Int>(p.h * e.knots[k - 1] / qc.tau,
                                                    "knot offset"));

        std::vector<std::array<Checked<Int>, max_degree + 1>> b(m);
        const auto idx = basis_index_set({K, D});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double raw = std::pow(qc.tau, idx[i].d) * p.mass * p.value * e.s_hat[i] /
                               (qc.sigma * p.density * std::pow(p.h, idx[i].d + 3));
            b[idx[i].k - 1][idx[i].d] =
                Checked<Int>(round_to_int<Int>(raw, "difference coefficient"));
        }

        const auto knots = mirror_closure<Checked<Int>>(pos, b, K, D);

        std::vector<QuantizedKnot<Int>> out;
        out.reserve(knots.size());
        for (const auto& kn : knots) {
            if (!out.empty() && out.back().t == kn.pos.v) {
                for (int d = 0; d <= D; ++d)
                    out.back().b[d] = (Checked<Int>(out.back().b[d]) + kn.b[d]).v;
            } else {
                QuantizedKnot<Int> o;
                o.ray = ray;
                o.t = kn.pos.v;
                for (int d = 0; d <= D; ++d) o.b[d] = kn.b[d].v;
                out.push_back(o);
            }
        }
        return out;
    } catch (const OverflowError& oe) {
        throw OverflowError("quantize: " + std::string(oe.what()) + " (particle " +
                                std::to_string(particle_index) + ", ray " +
                                std::to_string(ray) + ")",
                            particle_index, ray);
    }
}

} // namespace sphray
