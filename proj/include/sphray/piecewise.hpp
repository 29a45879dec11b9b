#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sphray/errors.hpp"
#include "sphray/polynomial.hpp"

namespace sphray {

/// Even function assembled from polynomial pieces over a positive knot grid:
/// f(t) = pieces[j](|t|) for |t| in [knot_{j-1}, knot_j] (knot_{-1} = 0) and
/// f(t) = 0 for |t| beyond the last knot. All linear algebra between
/// functions on the same grid is exact (closed-form monomial integrals).
class EvenPiecewisePolynomial {
public:
    EvenPiecewisePolynomial() = default;

    EvenPiecewisePolynomial(std::vector<double> knots, std::vector<Polynomial> pieces)
        : knots_(std::move(knots)), pieces_(std::move(pieces)) {
        if (knots_.size() != pieces_.size())
            throw NumericError("piecewise: knot/piece count mismatch");
        double prev = 0.0;
        for (double k : knots_) {
            if (!(k > prev)) throw NumericError("piecewise: knots must ascend from 0");
            prev = k;
        }
    }

    static EvenPiecewisePolynomial zero(std::vector<double> knots) {
        std::vector<Polynomial> pieces(knots.size());
        return EvenPiecewisePolynomial(std::move(knots), std::move(pieces));
    }

    std::size_t piece_count() const { return pieces_.size(); }
    const std::vector<double>& knots() const { return knots_; }
    const Polynomial& piece(std::size_t j) const { return pieces_[j]; }
    Polynomial& piece(std::size_t j) { return pieces_[j]; }
    double lower_edge(std::size_t j) const { return j == 0 ? 0.0 : knots_[j - 1]; }
    double upper_edge(std::size_t j) const { return knots_[j]; }
    double support() const { return knots_.empty() ? 0.0 : knots_.back(); }

    double evaluate(double t) const {
        t = std::abs(t);
        for (std::size_t j = 0; j < pieces_.size(); ++j)
            if (t <= knots_[j]) return pieces_[j].eval(t);
        return 0.0;
    }

    bool same_grid(const EvenPiecewisePolynomial& o) const { return knots_ == o.knots_; }

    void add_scaled(const EvenPiecewisePolynomial& o, double s) {
        if (!same_grid(o)) throw NumericError("piecewise: grid mismatch");
        for (std::size_t j = 0; j < pieces_.size(); ++j) pieces_[j].add_scaled(o.pieces_[j], s);
    }

    /// Exact L2 inner product over the real line (same grid required).
    double inner(const EvenPiecewisePolynomial& o) const {
        if (!same_grid(o)) throw NumericError("piecewise: grid mismatch");
        double acc = 0.0;
        for (std::size_t j = 0; j < pieces_.size(); ++j) {
            if (pieces_[j].is_zero() || o.pieces_[j].is_zero()) continue;
            acc += (pieces_[j] * o.pieces_[j]).integral(lower_edge(j), upper_edge(j));
        }
        return 2.0 * acc;
    }

    double norm_sq() const { return inner(*this); }

private:
    std::vector<double> knots_;
    std::vector<Polynomial> pieces_;
};

} // namespace sphray
