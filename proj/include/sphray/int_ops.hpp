#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>

#include "sphray/errors.hpp"

namespace sphray {

#if !defined(__SIZEOF_INT128__)
#error "this library needs a compiler with a 128-bit integer type"
#endif

/// Double-word signed integer (two 64-bit limbs handled by the compiler).
using Int128 = __int128;

enum class IntWidth : int { w32 = 32, w64 = 64, w128 = 128 };

inline IntWidth int_width_from(int bits) {
    switch (bits) {
        case 32: return IntWidth::w32;
        case 64: return IntWidth::w64;
        case 128: return IntWidth::w128;
    }
    throw ConfigError("int width must be one of 32, 64, 128");
}

template <class T>
struct IntTraits;

template <>
struct IntTraits<std::int32_t> {
    static constexpr int bits = 32;
    static constexpr std::int32_t max_value = INT32_MAX;
    static constexpr const char* name = "int32";
};

template <>
struct IntTraits<std::int64_t> {
    static constexpr int bits = 64;
    static constexpr std::int64_t max_value = INT64_MAX;
    static constexpr const char* name = "int64";
};

template <>
struct IntTraits<Int128> {
    static constexpr int bits = 128;
    static constexpr Int128 max_value = static_cast<Int128>((~static_cast<unsigned __int128>(0)) >> 1);
    static constexpr const char* name = "int128";
};

/// Largest representable value of the width, as a double (1 ulp high for the
/// wide types; only used to size real-valued quanta, never to bound casts).
inline double int_max_double(IntWidth w) {
    return std::ldexp(1.0, static_cast<int>(w) - 1) - 1.0;
}

/// Signed integer with add/sub/mul that throw instead of wrapping. The
/// quantized pipeline runs entirely on this type so a single forgotten check
/// cannot silently corrupt a render.
template <class T>
struct Checked {
    T v{};

    Checked() = default;
    explicit Checked(T x) : v(x) {}
    Checked(long long x) : v(static_cast<T>(x)) {
        if (static_cast<long long>(v) != x) throw OverflowError("integer constant out of range");
    }

    friend Checked operator+(Checked a, Checked b) {
        T r;
        if (__builtin_add_overflow(a.v, b.v, &r)) throw OverflowError("integer overflow in +");
        return Checked(r);
    }
    friend Checked operator-(Checked a, Checked b) {
        T r;
        if (__builtin_sub_overflow(a.v, b.v, &r)) throw OverflowError("integer overflow in -");
        return Checked(r);
    }
    friend Checked operator*(Checked a, Checked b) {
        T r;
        if (__builtin_mul_overflow(a.v, b.v, &r)) throw OverflowError("integer overflow in *");
        return Checked(r);
    }
    Checked operator-() const {
        T r;
        if (__builtin_sub_overflow(static_cast<T>(0), v, &r))
            throw OverflowError("integer overflow in negate");
        return Checked(r);
    }
    Checked& operator+=(Checked o) { return *this = *this + o; }
    Checked& operator-=(Checked o) { return *this = *this - o; }

    friend bool operator==(Checked a, Checked b) { return a.v == b.v; }
    friend auto operator<=>(Checked a, Checked b) { return a.v <=> b.v; }
};

/// Rounds to the nearest integer, ties to even (the default FP environment),
/// and refuses values outside the representable range of T.
template <class T>
T round_to_int(double x, const char* what) {
    const double r = std::nearbyint(x);
    const double hi = std::ldexp(1.0, IntTraits<T>::bits - 1); // 2^(bits-1), exact
    if (!(r >= -hi && r < hi))
        throw OverflowError(std::string(what) + " does not fit " + IntTraits<T>::name);
    return static_cast<T>(r);
}

/// Calls f with one of std::type_identity<int32_t|int64_t|Int128>.
template <class F>
decltype(auto) dispatch_int_width(IntWidth w, F&& f) {
    switch (w) {
        case IntWidth::w32: return f(std::type_identity<std::int32_t>{});
        case IntWidth::w64: return f(std::type_identity<std::int64_t>{});
        case IntWidth::w128: return f(std::type_identity<Int128>{});
    }
    throw ConfigError("unknown integer width");
}

/// C(j, d) for j <= 6, the only orders the piece-degree cap allows.
inline long long binomial_int(int j, int d) {
    static constexpr long long table[7][7] = {
        {1, 0, 0, 0, 0, 0, 0},  {1, 1, 0, 0, 0, 0, 0},   {1, 2, 1, 0, 0, 0, 0},
        {1, 3, 3, 1, 0, 0, 0},  {1, 4, 6, 4, 1, 0, 0},   {1, 5, 10, 10, 5, 1, 0},
        {1, 6, 15, 20, 15, 6, 1}};
    if (j < 0 || j > 6 || d < 0 || d > 6) throw NumericError("binomial_int: order out of range");
    return table[j][d];
}

} // namespace sphray
