#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sphray/errors.hpp"

namespace sphray {

/// Order-32 Gauss-Legendre rule on [-1, 1]. Nodes and weights are computed
/// once by Newton iteration on P_32, which reproduces the tabulated values
/// to machine precision without 64 hardcoded literals.
struct GaussLegendre32 {
    static constexpr int order = 32;
    std::array<double, order> node{};
    std::array<double, order> weight{};

    static const GaussLegendre32& get() {
        static const GaussLegendre32 rule;
        return rule;
    }

private:
    GaussLegendre32() {
        const int n = order;
        for (int i = 0; i < (n + 1) / 2; ++i) {
            double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16) {
                    p0 = 1.0, p1 = x;
                    for (int k = 2; k <= n; ++k) {
                        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n * (x * p1 - p0) / (x * x - 1.0);
                    break;
                }
            }
            node[i] = -x;
            node[n - 1 - i] = x;
            double w = 2.0 / ((1.0 - x * x) * dp * dp);
            weight[i] = w;
            weight[n - 1 - i] = w;
        }
    }
};

template <class F>
double gauss_legendre(F&& f, double a, double b) {
    const auto& rule = GaussLegendre32::get();
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    double acc = 0.0;
    for (int i = 0; i < GaussLegendre32::order; ++i)
        acc += rule.weight[i] * f(mid + half * rule.node[i]);
    return acc * half;
}

/// Integrates f over the segments delimited by `cuts` (ascending). Each
/// segment gets one order-32 pass plus a halved refinement; the refined value
/// is returned and the pair must agree to `rel_tol` or the call throws.
///
/// `abs_tol` accepts results whose disagreement is negligible on the caller's
/// scale. Integrands built from expanded kernel polynomials lose relative
/// precision where the kernel itself underflows toward its support edge; the
/// values there are many orders below anything that feeds the caller, so an
/// absolute floor keeps the relative criterion meaningful without masking
/// genuine failures.
template <class F>
double integrate_segments(F&& f, std::span<const double> cuts, double rel_tol = 1e-12,
                          double abs_tol = 0.0) {
    double coarse = 0.0, fine = 0.0;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        const double a = cuts[s], b = cuts[s + 1];
        if (!(b > a)) continue;
        coarse += gauss_legendre(f, a, b);
        const double m = 0.5 * (a + b);
        fine += gauss_legendre(f, a, m) + gauss_legendre(f, m, b);
    }
    const double err = std::abs(fine - coarse);
    if (err > rel_tol * std::abs(fine) && err > abs_tol && err > 1e-280) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3e (value %.3e)", err, fine);
        throw QuadratureError(std::string("integrate_segments: refinement disagreement ") + buf);
    }
    return fine;
}

/// Merge helper: ascending cut list from interval ends plus interior split
/// points, deduplicated.
inline std::vector<double> make_cuts(double a, double b, std::span<const double> interior) {
    std::vector<double> cuts;
    cuts.push_back(a);
    for (double x : interior)
        if (x > a && x < b) cuts.push_back(x);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(),
                           [](double u, double v) { return std::abs(u - v) < 1e-14; }),
               cuts.end());
    return cuts;
}

} // namespace sphray
