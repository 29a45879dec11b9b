#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "sphray/approx.hpp"
#include "sphray/oracle.hpp"

using namespace sphray;
using Catch::Approx;

namespace {

const PiecewisePolynomialKernel& kern() {
    static const auto k = cubic_bspline();
    return k;
}

std::vector<double> equidistant_knots(int m, double end) {
    std::vector<double> kn(m);
    for (int i = 0; i < m; ++i) kn[i] = end * (i + 1) / m;
    return kn;
}

} // namespace

TEST_CASE("index set and dimension bookkeeping") {
    REQUIRE(approx_dimension({4, 3}) == 6);
    REQUIRE(approx_dimension({3, 3}) == 4);
    REQUIRE(approx_dimension({1, 1}) == 0);
    REQUIRE(positive_knot_count({4, 3}) == 2);
    REQUIRE(positive_knot_count({5, 2}) == 3);

    const auto even = basis_index_set({4, 2});
    REQUIRE(even.size() == 4);
    REQUIRE(even[0] == BasisIndex{1, 1});
    REQUIRE(even[3] == BasisIndex{2, 2});

    // odd piece counts span the center, so odd degrees on the innermost
    // piece would break evenness
    const auto odd = basis_index_set({3, 3});
    REQUIRE(odd.size() == 4);
    for (const auto& i : odd) REQUIRE((i.k != 1 || i.d % 2 == 0));

    for (int K = 1; K <= 8; ++K)
        for (int D = 1; D <= 6; ++D)
            REQUIRE(static_cast<int>(basis_index_set({K, D}).size()) ==
                    approx_dimension({K, D}));

    REQUIRE_THROWS_AS((ApproxConfig{0, 1}.validate()), ConfigError);
    REQUIRE_THROWS_AS((ApproxConfig{9, 1}.validate()), ConfigError);
    REQUIRE_THROWS_AS((ApproxConfig{2, 0}.validate()), ConfigError);
    REQUIRE_THROWS_AS((ApproxConfig{2, 7}.validate()), ConfigError);
}

TEST_CASE("shape functions are plateaus with polynomial falloffs") {
    const std::vector<double> kn{0.5, 1.25};
    for (int d = 1; d <= 3; ++d) {
        const auto f = shape_function(kn, 2, d);
        REQUIRE(f.evaluate(0.0) == Approx(1.0));
        REQUIRE(f.evaluate(0.49) == Approx(1.0));
        REQUIRE(f.evaluate(0.5) == Approx(1.0));
        const double mid = 0.875; // halfway down the ramp
        REQUIRE(f.evaluate(mid) == Approx(1.0 - std::pow(0.5, d)));
        REQUIRE(f.evaluate(1.25) == Approx(0.0).margin(1e-15));
        REQUIRE(f.evaluate(1.5) == 0.0);
        REQUIRE(f.evaluate(-mid) == Approx(f.evaluate(mid)));
    }
    const auto g = shape_function(kn, 1, 2);
    REQUIRE(g.evaluate(0.0) == Approx(1.0));
    REQUIRE(g.evaluate(0.25) == Approx(0.75));
    REQUIRE(g.evaluate(0.5) == Approx(0.0).margin(1e-15));
    REQUIRE(g.evaluate(1.0) == 0.0);
}

TEST_CASE("orthogonalized bases are orthogonal and span the same space") {
    std::mt19937_64 rng(3);
    for (auto [K, D] : {std::pair{2, 1}, {4, 3}, {5, 2}, {3, 4}, {8, 2}}) {
        const ApproxConfig cfg{K, D};
        const int m = positive_knot_count(cfg);
        std::vector<double> kn(m);
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
            acc += 0.3 + (rng() % 1000) / 1000.0;
            kn[i] = acc;
        }
        auto raw = nonorthogonal_basis(cfg, kn);
        auto orth = gram_schmidt(nonorthogonal_basis(cfg, kn));

        for (std::size_t i = 0; i < orth.size(); ++i)
            for (std::size_t j = 0; j < i; ++j) {
                const double ip = orth[i].f.inner(orth[j].f);
                REQUIRE(std::abs(ip) <=
                        1e-9 * std::sqrt(orth[i].norm_sq * orth[j].norm_sq) + 1e-11);
            }

        // each combo row reproduces its orthogonalized function exactly
        for (std::size_t i = 0; i < orth.size(); ++i) {
            auto rebuilt = EvenPiecewisePolynomial::zero(kn);
            for (std::size_t c = 0; c < raw.size(); ++c)
                rebuilt.add_scaled(raw[c].f, orth[i].combo[c]);
            rebuilt.add_scaled(orth[i].f, -1.0);
            REQUIRE(rebuilt.norm_sq() <= 1e-15);
        }
    }
}

TEST_CASE("single-element bases pass through unchanged") {
    const auto b = gram_schmidt(nonorthogonal_basis({2, 1}, {1.0}));
    REQUIRE(b.size() == 1);
    REQUIRE(b[0].combo == std::vector<double>{1.0});
}

TEST_CASE("crowded knots are rejected as degenerate") {
    // two knots this close make the second family of shapes numerically
    // parallel to the first and the projection coefficients meaningless
    REQUIRE_THROWS_AS(gram_schmidt(nonorthogonal_basis({4, 3}, {1.0, 1.0 + 1e-7})),
                      DegenerateKnotError);
    REQUIRE_THROWS_AS(gram_schmidt(nonorthogonal_basis({4, 2}, {0.5, 0.5 + 1e-9})),
                      DegenerateKnotError);

    // well-spread knots stay fine even at the degree where legitimate norm
    // loss is largest
    REQUIRE_NOTHROW(gram_schmidt(nonorthogonal_basis({8, 6}, equidistant_knots(4, 2.0))));
    REQUIRE_NOTHROW(gram_schmidt(nonorthogonal_basis({2, 6}, {1.3})));
}

TEST_CASE("projection leaves an orthogonal residual") {
    const auto& k = kern();
    const double scale = kernel_scale(k);
    for (auto [K, D, lam] : {std::tuple{2, 1, 0.3}, {4, 3, 0.8}, {3, 2, 1.4}, {5, 4, 0.1}}) {
        const ApproxConfig cfg{K, D};
        const auto kn = equidistant_knots(positive_knot_count(cfg),
                                          0.9 * ray_section_support(k, lam));
        const auto sol = project_fixed_knots(k, lam, cfg, kn);
        for (const auto& b : nonorthogonal_basis(cfg, kn)) {
            const double with_section = inner_with_section(k, lam, b.f, scale);
            const double with_approx = sol.approximant.inner(b.f);
            REQUIRE(std::abs(with_section - with_approx) <= 1e-9);
        }
    }
}

TEST_CASE("projection is a local minimum in every coefficient direction") {
    const auto& k = kern();
    const double scale = kernel_scale(k);
    const double lam = 0.6;
    const ApproxConfig cfg{4, 3};
    const auto kn = equidistant_knots(2, 0.8 * ray_section_support(k, lam));
    const auto sol = project_fixed_knots(k, lam, cfg, kn);

    const double nb2 = ray_section_norm_sq(k, lam, scale);
    auto error_of = [&](const EvenPiecewisePolynomial& S) {
        return std::sqrt(std::max(
            nb2 - 2.0 * inner_with_section(k, lam, S, scale) + S.norm_sq(), 0.0));
    };
    REQUIRE(error_of(sol.approximant) == Approx(sol.error).margin(1e-10));

    const auto orth = gram_schmidt(nonorthogonal_basis(cfg, kn));
    for (const auto& a : orth)
        for (double eps : {1e-3, -1e-3}) {
            auto S = sol.approximant;
            S.add_scaled(a.f, eps);
            REQUIRE(error_of(S) > sol.error);
        }
}

TEST_CASE("single hat projection matches the closed-form reference") {
    const auto& k = kern();
    for (auto [lam, theta] : {std::pair{0.0, 1.1}, {0.4, 1.3}, {1.0, 0.7}, {1.5, 1.0}}) {
        const auto sol = project_fixed_knots(k, lam, {2, 1}, {theta});
        const double ref = oracle::hat_error(lam, theta, 1 << 15);
        REQUIRE(sol.error == Approx(ref).margin(1e-8));
    }
}

TEST_CASE("projection agrees with a dense truncated-power solve") {
    const auto& k = kern();
    for (auto [K, D, lam] : {std::tuple{4, 3, 0.5}, {4, 3, 1.2}, {2, 2, 0.8}, {6, 2, 0.3}}) {
        const ApproxConfig cfg{K, D};
        const auto kn = equidistant_knots(positive_knot_count(cfg),
                                          0.85 * ray_section_support(k, lam));
        const auto sol = project_fixed_knots(k, lam, cfg, kn);
        const double ref = oracle::tpower_projection_error(lam, kn, D, 1 << 14);
        REQUIRE(sol.error == Approx(ref).margin(1e-6));
    }
}

TEST_CASE("edge distances get the zero approximant") {
    const auto& k = kern();
    const ApproxConfig cfg{4, 3};
    const auto near_edge = project_fixed_knots(k, k.q * (1.0 - 1e-4), cfg, {0.5, 1.0});
    REQUIRE(near_edge.error ==
            Approx(std::sqrt(ray_section_norm_sq(k, k.q * (1.0 - 1e-4)))).margin(1e-12));
    REQUIRE(near_edge.coefficients.empty());

    const auto outside = project_fixed_knots(k, 2.5, cfg, {0.5, 1.0});
    REQUIRE(outside.error == 0.0);
}

TEST_CASE("zero-dimensional spaces carry the full section norm") {
    const auto& k = kern();
    const auto sol = project_fixed_knots(k, 0.5, {1, 1}, {1.0});
    REQUIRE(sol.error == Approx(std::sqrt(ray_section_norm_sq(k, 0.5))).margin(1e-12));
}

TEST_CASE("optimizer matches a dense grid search for the single hat") {
    const auto& k = kern();
    const auto opt = optimize_knots(k, 0.0, {2, 1});
    REQUIRE(opt.converged);
    REQUIRE(opt.knots.size() == 1);

    auto [theta_g, err_g] = oracle::grid_min(
        [&](double th) { return oracle::hat_error(0.0, th, 4096); }, 0.05, 2.0, 2000);
    REQUIRE(opt.solution.error == Approx(err_g).epsilon(5e-4));
    REQUIRE(opt.knots[0] == Approx(theta_g).margin(5e-3));
}

TEST_CASE("optimizer is deterministic in the seed") {
    const auto& k = kern();
    OptimizeOptions o;
    o.seed = 99;
    const auto a = optimize_knots(k, 0.7, {4, 2}, o);
    const auto b = optimize_knots(k, 0.7, {4, 2}, o);
    REQUIRE(a.knots == b.knots);
    REQUIRE(a.solution.error == b.solution.error);

    o.seed = 123456;
    const auto c = optimize_knots(k, 0.7, {4, 2}, o);
    REQUIRE(c.solution.error == Approx(a.solution.error).margin(1e-6));
}

TEST_CASE("optimal error shrinks as the space grows") {
    const auto& k = kern();
    for (double lam : {0.2, 0.9}) {
        double prev = 1e30;
        for (int K : {2, 4, 6}) {
            const auto r = optimize_knots(k, lam, {K, 2});
            REQUIRE(r.solution.error <= prev + 1e-12);
            prev = r.solution.error;
        }
        const auto d1 = optimize_knots(k, lam, {2, 1});
        const auto d3 = optimize_knots(k, lam, {2, 3});
        REQUIRE(d3.solution.error <= d1.solution.error + 1e-12);
    }
}

TEST_CASE("warm starts cannot worsen the optimum") {
    const auto& k = kern();
    const auto cold = optimize_knots(k, 1.1, {4, 3});
    const auto warm = optimize_knots(k, 1.1, {4, 3}, {}, &cold.knots);
    REQUIRE(warm.solution.error <= cold.solution.error * (1.0 + 1e-9));
}

TEST_CASE("iteration starvation raises a convergence error") {
    const auto& k = kern();
    OptimizeOptions o;
    o.max_iterations = 1;
    o.restarts = 2;
    o.sweep_tol = 0.0;
    try {
        (void)optimize_knots(k, 0.5, {4, 2}, o);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        REQUIRE(e.best_knots.size() == 2);
        REQUIRE(e.best_error > 0.0);
        REQUIRE(e.best_error < 1.0);
    }
}

TEST_CASE("near-coincident knot optima are fenced off") {
    const auto& k = kern();
    const ApproxConfig cfg{4, 3};

    // this knot pair once slipped into a table: a confluent configuration
    // whose difference coefficients reach ~3e4 while the approximant peaks
    // at 6.4e-3, which integer quantization cannot absorb
    const std::vector<double> confluent{1.169808672, 1.184897953};
    REQUIRE_THROWS_AS(project_fixed_knots(k, 1.56897949, cfg, confluent),
                      DegenerateKnotError);

    // the optimizer therefore settles on a well-separated optimum nearby
    const auto r = optimize_knots(k, 1.56897949, cfg);
    const double s = ray_section_support(k, 1.56897949);
    double prev = 0.0;
    for (double kn : r.knots) {
        REQUIRE(kn - prev > 0.02 * s);
        prev = kn;
    }
    REQUIRE(r.solution.error < 1e-5);
}

TEST_CASE("optimizer rejects invalid setups") {
    const auto& k = kern();
    REQUIRE_THROWS_AS(optimize_knots(k, 0.5, {0, 1}), ConfigError);
    REQUIRE_THROWS_AS(project_fixed_knots(k, 0.5, {2, 1}, {1.0, 2.0}), ConfigError);
}
