#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sphray/errors.hpp"
#include "sphray/kernel.hpp"
#include "sphray/piecewise.hpp"
#include "sphray/polynomial.hpp"

namespace sphray {

inline constexpr int max_pieces = 8;  // K
inline constexpr int max_degree = 6;  // D

/// Candidate space parameters: number of nontrivial polynomial pieces K and
/// maximum piece degree D.
struct ApproxConfig {
    int K = 2;
    int D = 1;

    void validate() const {
        if (K < 1 || K > max_pieces) throw ConfigError("K must be in [1, 8]");
        if (D < 1 || D > max_degree) throw ConfigError("D must be in [1, 6]");
    }
};

struct BasisIndex {
    int k = 0;
    int d = 0;
    friend bool operator==(const BasisIndex&, const BasisIndex&) = default;
};

inline int positive_knot_count(const ApproxConfig& cfg) { return (cfg.K + 1) / 2; }

/// Index pairs (k, d) of the generating functions, lexicographic. For odd K
/// the innermost piece spans the center, so its odd-degree shapes would break
/// evenness and are excluded.
inline std::vector<BasisIndex> basis_index_set(const ApproxConfig& cfg) {
    cfg.validate();
    std::vector<BasisIndex> out;
    const int m = positive_knot_count(cfg);
    for (int k = 1; k <= m; ++k)
        for (int d = 1; d <= cfg.D; ++d) {
            if (cfg.K % 2 == 1 && k == 1 && d % 2 == 1) continue;
            out.push_back({k, d});
        }
    return out;
}

/// Dimension of the candidate space: always floor(K*D/2).
inline int approx_dimension(const ApproxConfig& cfg) { return cfg.K * cfg.D / 2; }

/// The generating function for index (k, d): 1 inside knot k-1, a degree-d
/// falloff to 0 across [knot_{k-1}, knot_k], 0 outside.
inline EvenPiecewisePolynomial shape_function(const std::vector<double>& knots, int k, int d) {
    std::vector<Polynomial> pieces(knots.size());
    for (int j = 0; j + 1 < k; ++j) pieces[j] = Polynomial::constant(1.0);
    const double lo = k >= 2 ? knots[k - 2] : 0.0;
    const double width = knots[k - 1] - lo;
    Polynomial ramp = Polynomial::affine_power(1.0 / width, -lo / width, d);
    pieces[k - 1] = Polynomial::constant(1.0) - ramp;
    return EvenPiecewisePolynomial(knots, std::move(pieces));
}

struct BasisFunction {
    BasisIndex index;
    EvenPiecewisePolynomial f;
    std::vector<double> combo; // coordinates in the generating set
    double norm_sq = 0.0;
};

inline std::vector<BasisFunction> nonorthogonal_basis(const ApproxConfig& cfg,
                                                      const std::vector<double>& knots) {
    const auto idx = basis_index_set(cfg);
    if (static_cast<int>(knots.size()) != positive_knot_count(cfg))
        throw ConfigError("nonorthogonal_basis: knot count does not match K");
    std::vector<BasisFunction> out;
    out.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        BasisFunction b;
        b.index = idx[i];
        b.f = shape_function(knots, idx[i].k, idx[i].d);
        b.combo.assign(idx.size(), 0.0);
        b.combo[i] = 1.0;
        b.norm_sq = b.f.norm_sq();
        out.push_back(std::move(b));
    }
    return out;
}

/// Smallest acceptable ratio of a shape function's squared norm after
/// orthogonalization to its squared norm before. Ramp families of degree d
/// lose roughly a factor 20 per degree even on well-spread knots (measured
/// floors: 5e-3 at d=2 down to 4e-8 at d=6, nearly independent of K and of
/// the knot layout), so the cutoff tracks d with a ~45x safety margin. A
/// drop below it means the shape is numerically parallel to the span of its
/// predecessors, which happens when knots crowd together; such bases yield
/// difference coefficients orders of magnitude above the approximant's
/// amplitude and poison the integer quantization stage.
inline double orthogonality_floor(int d) {
    return std::max(0.04 * std::pow(20.0, -d), 1e-12);
}

/// Sequential orthogonalization in index order, using exact inner products.
/// Each output records its expansion in the generating set so projections
/// against arbitrary targets stay linear in quadrature passes.
inline std::vector<BasisFunction> gram_schmidt(std::vector<BasisFunction> basis) {
    for (std::size_t i = 0; i < basis.size(); ++i) {
        const double input_norm_sq = basis[i].f.norm_sq();
        for (std::size_t j = 0; j < i; ++j) {
            const double r = basis[i].f.inner(basis[j].f) / basis[j].norm_sq;
            basis[i].f.add_scaled(basis[j].f, -r);
            for (std::size_t c = 0; c < basis[i].combo.size(); ++c)
                basis[i].combo[c] -= r * basis[j].combo[c];
        }
        basis[i].norm_sq = basis[i].f.norm_sq();
        if (!(basis[i].norm_sq > orthogonality_floor(basis[i].index.d) * input_norm_sq))
            throw DegenerateKnotError("gram_schmidt: basis collapsed at index (" +
                                      std::to_string(basis[i].index.k) + "," +
                                      std::to_string(basis[i].index.d) + ")");
    }
    return basis;
}

/// Moments integral_a^b t^i B_lam(t) dt for i = 0..D in one quadrature pass,
/// segments split at section breakpoints, halved refinement per component.
inline std::array<double, max_degree + 1> section_moments(const PiecewisePolynomialKernel& kernel,
                                                          double lam, double a, double b, int D,
                                                          double scale) {
    std::array<double, max_degree + 1> coarse{}, fine{};
    if (!(b > a)) return fine;
    auto cuts = make_cuts(a, b, ray_section_splits(kernel, lam));
    const auto& rule = GaussLegendre32::get();
    auto pass = [&](double lo, double hi, std::array<double, max_degree + 1>& acc) {
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        std::array<double, max_degree + 1> local{};
        for (int n = 0; n < GaussLegendre32::order; ++n) {
            const double t = mid + half * rule.node[n];
            double p = rule.weight[n] * ray_section(kernel, lam, t);
            for (int i = 0; i <= D; ++i) {
                local[i] += p;
                p *= t;
            }
        }
        for (int i = 0; i <= D; ++i) acc[i] += local[i] * half;
    };
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        pass(cuts[s], cuts[s + 1], coarse);
        const double m = 0.5 * (cuts[s] + cuts[s + 1]);
        pass(cuts[s], m, fine);
        pass(m, cuts[s + 1], fine);
    }
    const double abs_tol = 1e-12 * scale * std::pow(std::max(std::abs(b), 1.0), D) * (b - a + 1.0);
    for (int i = 0; i <= D; ++i) {
        const double err = std::abs(fine[i] - coarse[i]);
        if (err > 1e-12 * std::abs(fine[i]) && err > abs_tol && err > 1e-280)
            throw QuadratureError("section_moments: refinement disagreement");
    }
    return fine;
}

/// Inner product of a grid function with the section, by quadrature.
inline double inner_with_section(const PiecewisePolynomialKernel& kernel, double lam,
                                 const EvenPiecewisePolynomial& f, double scale) {
    const double s = ray_section_support(kernel, lam);
    double acc = 0.0;
    for (std::size_t j = 0; j < f.piece_count(); ++j) {
        const double lo = f.lower_edge(j), hi = std::min(f.upper_edge(j), s);
        if (!(hi > lo) || f.piece(j).is_zero()) continue;
        auto cuts = make_cuts(lo, hi, ray_section_splits(kernel, lam));
        acc += integrate_segments(
            [&](double t) { return f.piece(j).eval(t) * ray_section(kernel, lam, t); }, cuts,
            1e-12, 1e-12 * scale * kernel.q);
    }
    return 2.0 * acc;
}

struct FixedKnotSolution {
    std::vector<double> coefficients;      // per orthogonal basis element
    EvenPiecewisePolynomial approximant;   // best candidate on this grid
    double error = 0.0;                    // L2 distance to the section
};

/// Relative margin below the support radius at which optimization becomes
/// numerically meaningless (the section all but vanishes); such rays get the
/// zero approximant and carry the full section norm as their error.
inline constexpr double edge_cutoff = 1e-3;

inline FixedKnotSolution project_fixed_knots(const PiecewisePolynomialKernel& kernel, double lam,
                                             const ApproxConfig& cfg,
                                             const std::vector<double>& knots) {
    cfg.validate();
    FixedKnotSolution sol;
    sol.approximant = EvenPiecewisePolynomial::zero(knots);
    const double scale = kernel_scale(kernel);

    if (lam >= kernel.q) {
        sol.error = 0.0;
        return sol;
    }
    if (lam > kernel.q * (1.0 - edge_cutoff)) {
        sol.error = std::sqrt(std::max(ray_section_norm_sq(kernel, lam, scale), 0.0));
        return sol;
    }

    const double nb2 = ray_section_norm_sq(kernel, lam, scale);
    auto basis = nonorthogonal_basis(cfg, knots);
    if (basis.empty()) {
        sol.error = std::sqrt(std::max(nb2, 0.0));
        return sol;
    }
    auto orth = gram_schmidt(std::move(basis));

    // One moment pass per piece serves every generating function by linearity.
    const double s = ray_section_support(kernel, lam);
    const int m = static_cast<int>(knots.size());
    std::vector<std::array<double, max_degree + 1>> moments(m);
    for (int j = 0; j < m; ++j) {
        const double lo = j == 0 ? 0.0 : knots[j - 1];
        const double hi = std::min(knots[j], s);
        if (hi > lo) moments[j] = section_moments(kernel, lam, lo, hi, cfg.D, scale);
    }

    const auto idx = basis_index_set(cfg);
    std::vector<double> beta(idx.size(), 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const int k = idx[i].k, d = idx[i].d;
        double acc = 0.0;
        for (int j = 0; j + 1 < k; ++j) acc += moments[j][0];
        const double lo = k >= 2 ? knots[k - 2] : 0.0;
        const double width = knots[k - 1] - lo;
        Polynomial ramp = Polynomial::affine_power(1.0 / width, -lo / width, d);
        acc += moments[k - 1][0];
        for (std::size_t c = 0; c < ramp.size(); ++c) acc -= ramp[c] * moments[k - 1][c];
        beta[i] = 2.0 * acc;
    }

    double captured = 0.0;
    sol.coefficients.resize(orth.size());
    for (std::size_t i = 0; i < orth.size(); ++i) {
        double num = 0.0;
        for (std::size_t c = 0; c < beta.size(); ++c) num += orth[i].combo[c] * beta[c];
        sol.coefficients[i] = num / orth[i].norm_sq;
        captured += num * num / orth[i].norm_sq;
        sol.approximant.add_scaled(orth[i].f, sol.coefficients[i]);
    }

    double e2 = nb2 - captured;
    if (e2 < -1e-8 * std::max(nb2, 1e-300))
        throw NumericError("project_fixed_knots: captured energy exceeds the section norm");
    sol.error = std::sqrt(std::max(e2, 0.0));
    return sol;
}

struct OptimizeOptions {
    std::uint64_t seed = 0;
    int restarts = 8;          // total simplex starts, warm start included
    int max_iterations = 800;  // per start
    double sweep_tol = 1e-12;  // stop once a sweep improves the best error by less
};

struct KnotOptimum {
    std::vector<double> knots;
    FixedKnotSolution solution;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard Nelder-Mead on R^n. Returns best point; `converged` reports
/// whether improvement per sweep dropped below tol before the budget ran out.
template <class F>
bool nelder_mead(F&& f, std::vector<double>& x, double& fx, int max_iter, double tol,
                 int* iterations_out) {
    const std::size_t n = x.size();
    std::vector<std::vector<double>> pts(n + 1, x);
    std::vector<double> fv(n + 1);
    for (std::size_t i = 1; i <= n; ++i) pts[i][i - 1] += 0.15;
    for (std::size_t i = 0; i <= n; ++i) fv[i] = f(pts[i]);

    auto order = [&] {
        for (std::size_t i = 1; i <= n; ++i)
            for (std::size_t j = i; j > 0 && fv[j] < fv[j - 1]; --j) {
                std::swap(fv[j], fv[j - 1]);
                std::swap(pts[j], pts[j - 1]);
            }
    };
    order();

    bool converged = false;
    int it = 0, stalled = 0;
    for (; it < max_iter; ++it) {
        const double prev_best = fv[0];
        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += pts[i][j] / static_cast<double>(n);

        auto blend = [&](double c) {
            std::vector<double> p(n);
            for (std::size_t j = 0; j < n; ++j) p[j] = centroid[j] + c * (pts[n][j] - centroid[j]);
            return p;
        };

        auto xr = blend(-1.0);
        double fr = f(xr);
        if (fr < fv[0]) {
            auto xe = blend(-2.0);
            double fe = f(xe);
            if (fe < fr) { pts[n] = std::move(xe); fv[n] = fe; }
            else { pts[n] = std::move(xr); fv[n] = fr; }
        } else if (fr < fv[n - 1]) {
            pts[n] = std::move(xr);
            fv[n] = fr;
        } else {
            auto xc = blend(fr < fv[n] ? -0.5 : 0.5);
            double fc = f(xc);
            if (fc < std::min(fr, fv[n])) { pts[n] = std::move(xc); fv[n] = fc; }
            else {
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t j = 0; j < n; ++j)
                        pts[i][j] = pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]);
                    fv[i] = f(pts[i]);
                }
            }
        }
        order();

        stalled = (prev_best - fv[0] < tol) ? stalled + 1 : 0;
        if (stalled >= 2) {
            converged = true;
            ++it;
            break;
        }
    }
    x = pts[0];
    fx = fv[0];
    if (iterations_out) *iterations_out = it;
    return converged;
}

} // namespace detail

/// Searches for the knot radii minimizing the projection error at normalized
/// ray distance `lam`. Knots are driven through their gap logarithms so the
/// ordering constraint cannot be violated; several simplex starts (a warm or
/// equidistant one plus random feasible ones) guard against local minima.
inline KnotOptimum optimize_knots(const PiecewisePolynomialKernel& kernel, double lam,
                                  const ApproxConfig& cfg, const OptimizeOptions& opts = {},
                                  const std::vector<double>* warm_start = nullptr) {
    cfg.validate();
    const int m = positive_knot_count(cfg);
    const double q = kernel.q;
    const double s = ray_section_support(kernel, lam);

    auto equidistant = [&](double end) {
        std::vector<double> kn(m);
        for (int i = 0; i < m; ++i) kn[i] = end * (i + 1) / m;
        return kn;
    };

    KnotOptimum out;
    if (lam >= q || lam > q * (1.0 - edge_cutoff) || approx_dimension(cfg) == 0) {
        out.knots = equidistant(s > 0.0 ? s : q);
        out.solution = project_fixed_knots(kernel, lam, cfg, out.knots);
        out.converged = true;
        return out;
    }

    const double big = 1e3 * (1.0 + std::sqrt(ray_section_norm_sq(kernel, lam)));
    auto to_knots = [&](const std::vector<double>& u) {
        std::vector<double> kn(m);
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
            if (!(u[i] > -45.0 && u[i] < 45.0)) return std::vector<double>{};
            const double gap = std::exp(u[i]);
            if (gap < 1e-6 * q || gap > 10.0 * q) return std::vector<double>{};
            acc += gap;
            kn[i] = acc;
        }
        return kn;
    };
    auto objective = [&](const std::vector<double>& u) {
        auto kn = to_knots(u);
        if (kn.empty()) return big;
        try {
            double val = project_fixed_knots(kernel, lam, cfg, kn).error;
            if (kn.back() > q) val += kn.back() - q;
            return val;
        } catch (const DegenerateKnotError&) {
            return big;
        } catch (const NumericError&) {
            return big;
        }
    };
    auto to_gap_logs = [&](const std::vector<double>& kn) {
        std::vector<double> u(m);
        double prev = 0.0;
        for (int i = 0; i < m; ++i) {
            u[i] = std::log(std::max(kn[i] - prev, 1e-5 * q));
            prev = kn[i];
        }
        return u;
    };

    std::vector<std::vector<double>> starts;
    starts.push_back(to_gap_logs(warm_start && static_cast<int>(warm_start->size()) == m
                                     ? *warm_start
                                     : equidistant(s)));
    std::mt19937_64 rng(opts.seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    while (static_cast<int>(starts.size()) < std::max(opts.restarts, 1)) {
        std::vector<double> pos(m);
        for (int i = 0; i < m; ++i) pos[i] = s * (0.03 + 0.97 * detail::uniform01(rng));
        std::sort(pos.begin(), pos.end());
        for (int i = 0; i < m; ++i) {
            const double prev = i == 0 ? 0.0 : pos[i - 1];
            pos[i] = std::max(pos[i], prev + 1e-4 * s);
        }
        starts.push_back(to_gap_logs(pos));
    }

    double best_val = big;
    std::vector<double> best_u;
    bool any_converged = false;
    int total_iters = 0;
    for (auto& u0 : starts) {
        std::vector<double> u = u0;
        double val = 0.0;
        int iters = 0;
        const bool conv =
            detail::nelder_mead(objective, u, val, opts.max_iterations, opts.sweep_tol, &iters);
        total_iters += iters;
        if (val < best_val) {
            best_val = val;
            best_u = u;
            any_converged = conv;
        } else if (val == best_val && conv) {
            any_converged = true;
        }
    }

    auto kn = to_knots(best_u);
    if (kn.empty()) throw NumericError("optimize_knots: search left the feasible region");
    for (double& x : kn) x = std::min(x, q);
    out.knots = kn;
    out.solution = project_fixed_knots(kernel, lam, cfg, out.knots);
    out.converged = any_converged;
    out.iterations = total_iters;
    if (!any_converged)
        throw ConvergenceError("optimize_knots: iteration budget exhausted at lam = " +
                                   std::to_string(lam),
                               out.knots, out.solution.error);
    return out;
}

} // namespace sphray
