#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sphray/approx.hpp"
#include "sphray/int_ops.hpp"
#include "sphray/parallel.hpp"

namespace sphray {

/// Optimized approximation data for one tabulated ray distance: the knot
/// radii, the change of the piece polynomials across each positive knot
/// (Taylor coefficients about the knot, orders 1..D in index-set order), and
/// the achieved L2 error.
struct LutEntry {
    double lambda = 0.0;
    double error = 0.0;
    std::vector<double> knots;
    std::vector<double> s_hat;
};

struct Lut {
    std::string kernel_id;
    double q = 0.0;
    int K = 0;
    int D = 0;
    std::vector<LutEntry> entries;

    double delta_lambda() const { return q / static_cast<double>(entries.size()); }

    /// Nearest tabulated entry; exact midpoints resolve to the lower index.
    /// Distances at or beyond the support return a zero entry.
    const LutEntry& lookup(double lam) const {
        if (entries.empty()) throw NumericError("lut: empty table");
        if (lam >= q) return zero_entry_;
        const double x = lam / delta_lambda();
        double i = std::floor(x);
        if (i == x && i > 0.0) i -= 1.0;
        const auto idx = std::min<std::size_t>(entries.size() - 1,
                                               static_cast<std::size_t>(std::max(i, 0.0)));
        return entries[idx];
    }

    void rebuild_zero_entry() {
        const int m = (K + 1) / 2;
        zero_entry_.lambda = q;
        zero_entry_.error = 0.0;
        zero_entry_.knots.assign(m, 0.0);
        for (int k = 1; k <= m; ++k) zero_entry_.knots[k - 1] = q * k / m;
        zero_entry_.s_hat.assign(basis_index_set({K, D}).size(), 0.0);
    }

private:
    LutEntry zero_entry_;
};

/// Taylor coefficients (orders 1..D, index-set order) of the jump from each
/// piece to its right neighbor at the positive knots. Order 0 vanishes by
/// continuity and is not stored.
inline std::vector<double> to_difference_coefficients(const FixedKnotSolution& sol,
                                                      const ApproxConfig& cfg) {
    const auto& S = sol.approximant;
    const auto idx = basis_index_set(cfg);
    const int m = static_cast<int>(S.piece_count());
    std::vector<double> out;
    out.reserve(idx.size());
    for (const auto& kd : idx) {
        const Polynomial right = kd.k < m ? S.piece(kd.k) : Polynomial{};
        const Polynomial diff = right - S.piece(kd.k - 1);
        out.push_back(diff.taylor_at(S.upper_edge(kd.k - 1))[kd.d]);
    }
    return out;
}

template <class T>
struct DiffKnot {
    T pos{};
    std::array<T, max_degree + 1> b{};
};

/// Expands positive-side knot data into the full symmetric knot list.
/// Coefficients mirror with sign (-1)^(d+1); the remaining freedom is fixed
/// so the function is exactly even about the center and returns to exact
/// zero past the last knot:
///  - even piece count: a center knot carries the odd-order jumps,
///  - odd piece count: the innermost pair absorbs them, filled in
///    descending odd order because higher orders feed lower ones.
/// Works verbatim for real arithmetic and for checked integers, which is what
/// makes the quantized pipeline telescope exactly.
template <class T>
std::vector<DiffKnot<T>> mirror_closure(std::span<const T> pos,
                                        std::span<const std::array<T, max_degree + 1>> bpos,
                                        int K, int D) {
    const int m = static_cast<int>(bpos.size());
    // rows 0..m-1 hold knots -m..-1; the center (even K only) is separate
    std::vector<std::array<T, max_degree + 1>> bneg(m);
    for (int k = 1; k <= m; ++k)
        for (int d = 0; d <= D; ++d)
            bneg[m - k][d] = (d % 2 == 1) ? bpos[k - 1][d] : -bpos[k - 1][d];

    // center-to-knot offsets; powers are built incrementally and never one
    // step past their use so a wide but legal offset cannot trip the checked
    // arithmetic spuriously
    auto offset = [&](int k) { return pos[k] - pos[0]; };

    std::array<T, max_degree + 1> center{};
    std::vector<DiffKnot<T>> out;
    if (K % 2 == 0) {
        for (int d = 1; d <= D; d += 2) {
            T acc{};
            for (int k = 1; k <= m; ++k) {
                const T off = offset(k);
                T pw = T(1ll);
                for (int j = d; j <= D; ++j) {
                    acc += T(binomial_int(j, d)) * bneg[m - k][j] * pw;
                    if (j < D) pw = pw * off;
                }
            }
            center[d] = -(acc + acc);
        }
    } else {
        for (int d = (D % 2 == 1 ? D : D - 1); d >= 1; d -= 2) {
            T acc{};
            for (int k = 2; k <= m; ++k) acc += bneg[m - k][d];
            for (int k = 1; k <= m; ++k) {
                const T off = offset(k);
                T pw = off;
                for (int j = d + 1; j <= D; ++j) {
                    acc += T(binomial_int(j, d)) * bneg[m - k][j] * pw;
                    if (j < D) pw = pw * off;
                }
            }
            bneg[m - 1][d] = -acc;
        }
    }

    out.reserve(2 * m + 1);
    for (int k = m; k >= 1; --k) {
        DiffKnot<T> kn;
        kn.pos = pos[0] + pos[0] - pos[k];
        kn.b = bneg[m - k];
        out.push_back(kn);
    }
    if (K % 2 == 0) {
        DiffKnot<T> kn;
        kn.pos = pos[0];
        kn.b = center;
        out.push_back(kn);
    }
    for (int k = 1; k <= m; ++k) {
        DiffKnot<T> kn;
        kn.pos = pos[k];
        for (int d = 0; d <= D; ++d)
            kn.b[d] = (d % 2 == 1) ? bneg[m - k][d] : -bneg[m - k][d];
        out.push_back(kn);
    }
    return out;
}

/// A section rebuilt from knot jump data by forward accumulation; evaluation
/// uses the locally recentered polynomial of the containing piece.
struct ReconstructedSection {
    std::vector<double> positions;
    std::vector<Polynomial> local;

    double evaluate(double t) const {
        if (positions.empty() || t < positions.front() || t >= positions.back()) return 0.0;
        std::size_t i = 0;
        while (i + 1 < positions.size() && t >= positions[i + 1]) ++i;
        return local[i].eval(t - positions[i]);
    }
};

inline ReconstructedSection reconstruct_entry(const LutEntry& e, int K, int D) {
    const int m = (K + 1) / 2;
    std::vector<double> pos(m + 1, 0.0);
    for (int k = 1; k <= m; ++k) pos[k] = e.knots[k - 1];
    std::vector<std::array<double, max_degree + 1>> bpos(m);
    const auto idx = basis_index_set({K, D});
    for (std::size_t i = 0; i < idx.size(); ++i) bpos[idx[i].k - 1][idx[i].d] = e.s_hat[i];

    auto knots = mirror_closure<double>(pos, bpos, K, D);

    ReconstructedSection r;
    std::array<double, max_degree + 1> a{};
    double prev = 0.0;
    for (std::size_t i = 0; i < knots.size(); ++i) {
        if (i > 0) {
            const double dt = knots[i].pos - prev;
            std::array<double, max_degree + 1> next{};
            for (int d = 0; d <= D; ++d) {
                double acc = knots[i].b[d];
                double pw = 1.0;
                for (int j = d; j <= D; ++j) {
                    acc += static_cast<double>(binomial_int(j, d)) * a[j] * pw;
                    pw *= dt;
                }
                next[d] = acc;
            }
            a = next;
        } else {
            a = knots[i].b;
        }
        prev = knots[i].pos;
        r.positions.push_back(knots[i].pos);
        Polynomial p;
        for (int d = 0; d <= D; ++d) p.set(d, a[d]);
        r.local.push_back(p);
    }
    return r;
}

/// Largest reconstructed amplitude across the entry, sampled inside pieces.
inline double entry_amplitude(const LutEntry& e, int K, int D) {
    auto r = reconstruct_entry(e, K, D);
    double amp = 0.0;
    for (std::size_t i = 0; i + 1 < r.positions.size(); ++i)
        for (int s = 0; s <= 32; ++s) {
            const double t =
                r.positions[i] + (r.positions[i + 1] - r.positions[i]) * s / 32.0;
            amp = std::max(amp, std::abs(r.evaluate(t)));
        }
    return amp;
}

struct LutBuildOptions {
    std::uint64_t seed = 0;
    int threads = 1;
};

/// Tabulates optimized approximations over ray distances (i + 1/2) q / N.
/// A sequential pass seeds every 16th entry, each warm-started from the
/// previous seed; the blocks in between then refine independently (and so
/// parallelize) while chaining warm starts entry to entry inside each block.
inline Lut build_lut(const PiecewisePolynomialKernel& kernel, const ApproxConfig& cfg, int N,
                     const LutBuildOptions& opts = {}) {
    cfg.validate();
    if (N < 1) throw ConfigError("lut: N must be positive");
    Lut lut;
    lut.kernel_id = kernel.id;
    lut.q = kernel.q;
    lut.K = cfg.K;
    lut.D = cfg.D;
    lut.entries.resize(N);

    auto compute = [&](int i, const std::vector<double>* warm) {
        const double lam = (i + 0.5) * kernel.q / N;
        OptimizeOptions oo;
        oo.seed = opts.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1));
        auto r = optimize_knots(kernel, lam, cfg, oo, warm);
        lut.entries[i] = {lam, r.solution.error, r.knots,
                          to_difference_coefficients(r.solution, cfg)};
    };

    constexpr int step = 16;
    const std::vector<double>* warm = nullptr;
    for (int i = 0; i < N; i += step) {
        compute(i, warm);
        warm = &lut.entries[i].knots;
    }
    const int blocks = (N + step - 1) / step;
    parallel_for(blocks, resolve_threads(opts.threads), [&](std::size_t b) {
        const int lo = static_cast<int>(b) * step;
        const int hi = std::min(lo + step, N);
        for (int i = lo + 1; i < hi; ++i) compute(i, &lut.entries[i - 1].knots);
    });

    lut.rebuild_zero_entry();
    return lut;
}

/// Aggregate relative error of the tabulated approximations over all rays
/// through a unit contribution (midpoint sum over the table grid).
inline double overall_error(const Lut& lut, const KernelConstants& c) {
    if (c.kappa <= 0.0) return 0.0;
    const double dl = lut.delta_lambda();
    double acc = 0.0;
    for (const auto& e : lut.entries) acc += e.lambda * e.error * e.error * dl;
    return std::sqrt(2.0 * std::numbers::pi * acc) / c.kappa;
}

// --- binary table format -------------------------------------------------
//
// little-endian: magic "SPLT", u32 version, 16-byte zero-padded kernel id,
// f64 support radius, u32 K, u32 D, u32 N, then N records of
// (f64 lambda, f64 error, ceil(K/2) x f64 knots, floor(K*D/2) x f64 jumps).

inline constexpr std::uint32_t lut_format_version = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("lut: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("lut: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

} // namespace detail

inline void serialize_lut(const Lut& lut, std::ostream& os) {
    os.write("SPLT", 4);
    detail::put_u32(os, lut_format_version);
    char id[16] = {};
    std::memcpy(id, lut.kernel_id.data(), std::min<std::size_t>(lut.kernel_id.size(), 16));
    os.write(id, 16);
    detail::put_f64(os, lut.q);
    detail::put_u32(os, static_cast<std::uint32_t>(lut.K));
    detail::put_u32(os, static_cast<std::uint32_t>(lut.D));
    detail::put_u32(os, static_cast<std::uint32_t>(lut.entries.size()));
    for (const auto& e : lut.entries) {
        detail::put_f64(os, e.lambda);
        detail::put_f64(os, e.error);
        for (double k : e.knots) detail::put_f64(os, k);
        for (double s : e.s_hat) detail::put_f64(os, s);
    }
    if (!os) throw IoError("lut: write failure");
}

inline Lut deserialize_lut(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SPLT", 4) != 0) throw IoError("lut: bad magic");
    const auto version = detail::get_u32(is);
    if (version != lut_format_version)
        throw IoError("lut: unsupported format version " + std::to_string(version));
    char id[17] = {};
    is.read(id, 16);
    if (!is) throw IoError("lut: truncated file");

    Lut lut;
    lut.kernel_id = id;
    lut.q = detail::get_f64(is);
    lut.K = static_cast<int>(detail::get_u32(is));
    lut.D = static_cast<int>(detail::get_u32(is));
    const auto n = detail::get_u32(is);
    if (!(lut.q > 0.0)) throw IoError("lut: invalid support radius");
    ApproxConfig cfg{lut.K, lut.D};
    cfg.validate();
    const int m = positive_knot_count(cfg);
    const auto jn = basis_index_set(cfg).size();

    lut.entries.resize(n);
    double prev = -1.0;
    for (auto& e : lut.entries) {
        e.lambda = detail::get_f64(is);
        e.error = detail::get_f64(is);
        e.knots.resize(m);
        for (double& k : e.knots) k = detail::get_f64(is);
        e.s_hat.resize(jn);
        for (double& s : e.s_hat) s = detail::get_f64(is);
        if (!(e.lambda > prev)) throw IoError("lut: distances not ascending");
        prev = e.lambda;
    }
    is.peek();
    if (!is.eof()) throw IoError("lut: trailing bytes");
    lut.rebuild_zero_entry();
    return lut;
}

inline void save_lut(const Lut& lut, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("lut: cannot open " + path + " for writing");
    serialize_lut(lut, f);
}

inline Lut load_lut(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("lut: cannot open " + path);
    return deserialize_lut(f);
}

} // namespace sphray
