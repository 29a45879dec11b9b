#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>

#include "sphray/errors.hpp"

namespace sphray {

/// C(n, k) as a double, exact for everything that fits the table.
inline double binomial(int n, int k) {
    static constexpr int N = 36;
    struct Table {
        std::array<std::array<double, N>, N> c{};
        Table() {
            for (int i = 0; i < N; ++i) {
                c[i][0] = 1.0;
                for (int j = 1; j <= i; ++j)
                    c[i][j] = c[i - 1][j - 1] + (j < i ? c[i - 1][j] : 0.0);
            }
        }
    };
    static const Table t;
    if (k < 0 || n < 0 || k > n) return 0.0;
    if (n >= N) throw NumericError("binomial: order out of range");
    return t.c[n][k];
}

/// Dense univariate polynomial, monomial basis, ascending coefficients.
/// Inline storage keeps the hot projection loops allocation-free; capacity
/// covers products of the degrees this library works with.
class Polynomial {
public:
    static constexpr std::size_t capacity = 32;

    Polynomial() = default;

    Polynomial(std::initializer_list<double> coeffs) {
        if (coeffs.size() > capacity) throw NumericError("Polynomial: too many coefficients");
        for (double v : coeffs) c_[n_++] = v;
        trim();
    }

    static Polynomial constant(double v) {
        Polynomial p;
        p.c_[0] = v;
        p.n_ = 1;
        p.trim();
        return p;
    }

    /// (a*t + b)^d expanded into monomials.
    static Polynomial affine_power(double a, double b, int d) {
        Polynomial p;
        p.n_ = static_cast<std::size_t>(d) + 1;
        for (int i = 0; i <= d; ++i)
            p.c_[i] = binomial(d, i) * std::pow(a, i) * std::pow(b, d - i);
        p.trim();
        return p;
    }

    std::size_t size() const { return n_; }
    int degree() const { return static_cast<int>(n_) - 1; }
    bool is_zero() const { return n_ == 0; }

    double operator[](std::size_t i) const { return i < n_ ? c_[i] : 0.0; }

    void set(std::size_t i, double v) {
        if (i >= capacity) throw NumericError("Polynomial: degree out of range");
        if (i >= n_) {
            for (std::size_t j = n_; j <= i; ++j) c_[j] = 0.0;
            n_ = i + 1;
        }
        c_[i] = v;
    }

    double eval(double t) const {
        double r = 0.0;
        for (std::size_t i = n_; i-- > 0;) r = r * t + c_[i];
        return r;
    }

    Polynomial derivative() const {
        Polynomial p;
        if (n_ <= 1) return p;
        p.n_ = n_ - 1;
        for (std::size_t i = 1; i < n_; ++i) p.c_[i - 1] = c_[i] * static_cast<double>(i);
        p.trim();
        return p;
    }

    Polynomial antiderivative() const {
        Polynomial p;
        if (n_ + 1 > capacity) throw NumericError("Polynomial: degree out of range");
        p.n_ = n_ + 1;
        p.c_[0] = 0.0;
        for (std::size_t i = 0; i < n_; ++i) p.c_[i + 1] = c_[i] / static_cast<double>(i + 1);
        return p;
    }

    double integral(double a, double b) const {
        Polynomial f = antiderivative();
        return f.eval(b) - f.eval(a);
    }

    Polynomial& operator+=(const Polynomial& o) {
        for (std::size_t i = 0; i < o.n_; ++i) set(i, (*this)[i] + o.c_[i]);
        trim();
        return *this;
    }

    Polynomial& operator-=(const Polynomial& o) {
        for (std::size_t i = 0; i < o.n_; ++i) set(i, (*this)[i] - o.c_[i]);
        trim();
        return *this;
    }

    Polynomial operator+(const Polynomial& o) const { Polynomial p(*this); p += o; return p; }
    Polynomial operator-(const Polynomial& o) const { Polynomial p(*this); p -= o; return p; }

    Polynomial operator*(const Polynomial& o) const {
        Polynomial p;
        if (n_ == 0 || o.n_ == 0) return p;
        if (n_ + o.n_ - 1 > capacity) throw NumericError("Polynomial: product degree out of range");
        p.n_ = n_ + o.n_ - 1;
        for (std::size_t i = 0; i < p.n_; ++i) p.c_[i] = 0.0;
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < o.n_; ++j) p.c_[i + j] += c_[i] * o.c_[j];
        p.trim();
        return p;
    }

    Polynomial scaled(double s) const {
        Polynomial p(*this);
        for (std::size_t i = 0; i < p.n_; ++i) p.c_[i] *= s;
        p.trim();
        return p;
    }

    void add_scaled(const Polynomial& o, double s) {
        for (std::size_t i = 0; i < o.n_; ++i) set(i, (*this)[i] + s * o.c_[i]);
        trim();
    }

    /// Coefficients of the same polynomial written in powers of (t - center):
    /// p(t) = sum_d out[d] * (t - center)^d.
    Polynomial taylor_at(double center) const {
        Polynomial p;
        if (n_ == 0) return p;
        p.n_ = n_;
        for (std::size_t d = 0; d < n_; ++d) {
            double acc = 0.0;
            for (std::size_t i = d; i < n_; ++i)
                acc += c_[i] * binomial(static_cast<int>(i), static_cast<int>(d)) *
                       std::pow(center, static_cast<double>(i - d));
            p.c_[d] = acc;
        }
        p.trim();
        return p;
    }

private:
    void trim() {
        while (n_ > 0 && c_[n_ - 1] == 0.0) --n_;
    }

    std::array<double, capacity> c_{};
    std::size_t n_ = 0;
};

} // namespace sphray
