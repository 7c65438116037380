// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace undo::grade {

/// Reduced fraction with a positive denominator. Arithmetic reports overflow
/// by returning nullopt; callers then fall back to floating point.
class Rational {
public:
    Rational() = default;
    explicit Rational(int64_t integer) : num_(integer), den_(1) {}

    static std::optional<Rational> make(int64_t num, int64_t den);

    int64_t num() const { return num_; }
    int64_t den() const { return den_; }
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
    bool is_integer() const { return den_ == 1; }
    std::string str() const;

    std::optional<Rational> add(const Rational& o) const;
    std::optional<Rational> sub(const Rational& o) const;
    std::optional<Rational> mul(const Rational& o) const;
    std::optional<Rational> div(const Rational& o) const;
    std::optional<Rational> negate() const;

    bool operator==(const Rational&) const = default;

    /// Reduces num/den computed in 128-bit arithmetic; nullopt on a zero
    /// denominator or when the reduced value does not fit in 64 bits.
    static std::optional<Rational> reduce(__int128 num, __int128 den);

private:
    int64_t num_ = 0;
    int64_t den_ = 1;
};

/// Result of evaluating an answer expression: exact while every step stayed
/// rational, otherwise a double.
struct Number {
    bool exact = true;
    Rational rational;
    double real = 0.0;

    double value() const { return exact ? rational.to_double() : real; }
};

/// Evaluates arithmetic written in plain text or LaTeX: integers, decimals,
/// `\frac{a}{b}`, `\sqrt{x}`, `\pi`, parentheses and braces, unary signs,
/// + - * / ^, `\times`, `\cdot`, `\div`, and implicit multiplication before a
/// parenthesis or command (`2\pi`, `3\sqrt{2}`). Returns nullopt when the
/// whole input does not parse or divides by zero.
std::optional<Number> evaluate_expression(std::string_view text);

} // namespace undo::grade
