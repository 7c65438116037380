// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/expression.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

namespace undo::grade {

namespace {

std::optional<int64_t> exact_isqrt(int64_t v) {
    if (v < 0) return std::nullopt;
    auto r = static_cast<int64_t>(std::llround(std::sqrt(static_cast<long double>(v))));
    for (int64_t c = std::max<int64_t>(0, r - 1); c <= r + 1; ++c) {
        if (static_cast<__int128>(c) * c == v) return c;
    }
    return std::nullopt;
}

Number real_number(double v) { return Number{false, Rational{}, v}; }

class Parser {
public:
    explicit Parser(std::string_view s) : s_(s) {}

    std::optional<Number> parse() {
        auto v = expr();
        skip_ws();
        if (!v || pos_ != s_.size()) return std::nullopt;
        if (!v->exact && !std::isfinite(v->real)) return std::nullopt;
        return v;
    }

private:
    std::string_view s_;
    size_t pos_ = 0;

    bool at_end() const { return pos_ >= s_.size(); }
    char peek() const { return at_end() ? '\0' : s_[pos_]; }
    bool lookahead(std::string_view t) const { return s_.substr(pos_).starts_with(t); }

    // Whitespace and LaTeX sizing/spacing commands carry no value.
    void skip_ws() {
        for (;;) {
            while (!at_end() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            bool skipped = false;
            for (std::string_view noise : {"\\left", "\\right", "\\,", "\\!", "\\;", "\\:", "\\ "}) {
                if (lookahead(noise)) {
                    // "\left" must not swallow a longer command name.
                    size_t end = pos_ + noise.size();
                    if (std::isalpha(static_cast<unsigned char>(noise.back())) && end < s_.size() &&
                        std::isalpha(static_cast<unsigned char>(s_[end])))
                        continue;
                    pos_ = end;
                    skipped = true;
                    break;
                }
            }
            if (!skipped) return;
        }
    }

    // Reads a command name after a backslash without consuming it.
    std::string_view peek_command() const {
        if (peek() != '\\') return {};
        size_t end = pos_ + 1;
        while (end < s_.size() && std::isalpha(static_cast<unsigned char>(s_[end]))) ++end;
        return s_.substr(pos_ + 1, end - pos_ - 1);
    }

    bool accept(std::string_view t) {
        skip_ws();
        if (lookahead(t)) {
            pos_ += t.size();
            return true;
        }
        return false;
    }

    bool accept_command(std::string_view name) {
        skip_ws();
        if (peek_command() == name) {
            pos_ += name.size() + 1;
            return true;
        }
        return false;
    }

    static std::optional<Number> combine(const Number& a, const Number& b, char op) {
        if (a.exact && b.exact) {
            std::optional<Rational> r;
            switch (op) {
            case '+': r = a.rational.add(b.rational); break;
            case '-': r = a.rational.sub(b.rational); break;
            case '*': r = a.rational.mul(b.rational); break;
            case '/':
                if (b.rational.num() == 0) return std::nullopt;
                r = a.rational.div(b.rational);
                break;
            }
            if (r) return Number{true, *r, 0.0};
        }
        double x = a.value(), y = b.value();
        switch (op) {
        case '+': return real_number(x + y);
        case '-': return real_number(x - y);
        case '*': return real_number(x * y);
        case '/':
            if (y == 0.0) return std::nullopt;
            return real_number(x / y);
        }
        return std::nullopt;
    }

    std::optional<Number> expr() {
        auto lhs = term();
        if (!lhs) return std::nullopt;
        for (;;) {
            char op = 0;
            if (accept("+")) op = '+';
            else if (accept("-") || accept("\xE2\x88\x92")) op = '-';
            else break;
            auto rhs = term();
            if (!rhs) return std::nullopt;
            lhs = combine(*lhs, *rhs, op);
            if (!lhs) return std::nullopt;
        }
        return lhs;
    }

    bool starts_implicit_factor() {
        skip_ws();
        char c = peek();
        if (c == '(' || c == '{' || lookahead("\xCF\x80")) return true;
        auto cmd = peek_command();
        return cmd == "frac" || cmd == "dfrac" || cmd == "tfrac" || cmd == "sqrt" || cmd == "pi";
    }

    std::optional<Number> term() {
        auto lhs = unary();
        if (!lhs) return std::nullopt;
        for (;;) {
            char op = 0;
            if (accept("*") || accept_command("times") || accept_command("cdot") || accept("\xC3\x97")) op = '*';
            else if (accept("/") || accept_command("div") || accept("\xC3\xB7")) op = '/';
            else if (starts_implicit_factor()) op = '*';
            else break;
            auto rhs = unary();
            if (!rhs) return std::nullopt;
            lhs = combine(*lhs, *rhs, op);
            if (!lhs) return std::nullopt;
        }
        return lhs;
    }

    std::optional<Number> unary() {
        if (accept("-") || accept("\xE2\x88\x92")) {
            auto v = unary();
            if (!v) return std::nullopt;
            if (v->exact) {
                if (auto n = v->rational.negate()) return Number{true, *n, 0.0};
            }
            return real_number(-v->value());
        }
        if (accept("+")) return unary();
        return power();
    }

    std::optional<Number> power() {
        auto base = primary();
        if (!base) return std::nullopt;
        if (!accept("^")) return base;
        auto exponent = argument();
        if (!exponent) return std::nullopt;
        if (base->exact && exponent->exact && exponent->rational.is_integer() &&
            std::abs(exponent->rational.num()) <= 64) {
            int64_t e = exponent->rational.num();
            std::optional<Rational> acc = Rational(1);
            for (int64_t i = 0; i < std::abs(e) && acc; ++i) acc = acc->mul(base->rational);
            if (acc && e < 0) {
                if (acc->num() == 0) return std::nullopt;
                acc = Rational(1).div(*acc);
            }
            if (acc) return Number{true, *acc, 0.0};
        }
        double v = std::pow(base->value(), exponent->value());
        if (!std::isfinite(v)) return std::nullopt;
        return real_number(v);
    }

    // A braced group, a single digit, or a single command (`\frac12`, `\sqrt\pi`).
    std::optional<Number> argument() {
        skip_ws();
        if (accept("{")) {
            auto v = expr();
            if (!v || !accept("}")) return std::nullopt;
            return v;
        }
        if (std::isdigit(static_cast<unsigned char>(peek()))) {
            int64_t d = peek() - '0';
            ++pos_;
            return Number{true, Rational(d), 0.0};
        }
        if (peek() == '\\' || peek() == '(' || lookahead("\xCF\x80")) return primary();
        return std::nullopt;
    }

    std::optional<Number> number() {
        size_t start = pos_;
        while (std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
        size_t int_end = pos_;
        size_t frac_start = pos_, frac_end = pos_;
        if (peek() == '.' && pos_ + 1 < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_ + 1]))) {
            ++pos_;
            frac_start = pos_;
            while (std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
            frac_end = pos_;
        }
        if (pos_ == start) return std::nullopt;
        std::string digits(s_.substr(start, int_end - start));
        std::string frac(s_.substr(frac_start, frac_end - frac_start));
        if (digits.size() + frac.size() <= 18) {
            int64_t num = 0;
            for (char c : digits + frac) num = num * 10 + (c - '0');
            int64_t den = 1;
            for (size_t i = 0; i < frac.size(); ++i) den *= 10;
            if (auto r = Rational::make(num, den)) return Number{true, *r, 0.0};
        }
        return real_number(std::strtod(std::string(s_.substr(start, pos_ - start)).c_str(), nullptr));
    }

    std::optional<Number> primary() {
        skip_ws();
        char c = peek();
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && pos_ + 1 < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])))) {
            return number();
        }
        if (accept("(")) {
            auto v = expr();
            if (!v || !accept(")")) return std::nullopt;
            return v;
        }
        if (accept("{")) {
            auto v = expr();
            if (!v || !accept("}")) return std::nullopt;
            return v;
        }
        if (accept("\xCF\x80")) return real_number(std::numbers::pi);
        auto cmd = peek_command();
        if (cmd.empty()) return std::nullopt;
        pos_ += cmd.size() + 1;
        if (cmd == "pi") return real_number(std::numbers::pi);
        if (cmd == "frac" || cmd == "dfrac" || cmd == "tfrac") {
            auto num = argument();
            if (!num) return std::nullopt;
            auto den = argument();
            if (!den) return std::nullopt;
            return combine(*num, *den, '/');
        }
        if (cmd == "sqrt") {
            std::optional<Number> index;
            skip_ws();
            if (accept("[")) {
                index = expr();
                if (!index || !accept("]")) return std::nullopt;
            }
            auto radicand = argument();
            if (!radicand) return std::nullopt;
            if (!index) {
                if (radicand->exact && radicand->rational.num() >= 0) {
                    auto n = exact_isqrt(radicand->rational.num());
                    auto d = exact_isqrt(radicand->rational.den());
                    if (n && d) {
                        if (auto r = Rational::make(*n, *d)) return Number{true, *r, 0.0};
                    }
                }
                if (radicand->value() < 0) return std::nullopt;
                return real_number(std::sqrt(radicand->value()));
            }
            if (index->value() == 0.0) return std::nullopt;
            double v = std::pow(radicand->value(), 1.0 / index->value());
            if (!std::isfinite(v)) return std::nullopt;
            return real_number(v);
        }
        return std::nullopt;
    }
};

} // namespace

std::optional<Rational> Rational::make(int64_t num, int64_t den) { return reduce(num, den); }

std::optional<Rational> Rational::reduce(__int128 num, __int128 den) {
    if (den == 0) return std::nullopt;
    if (den < 0) {
        num = -num;
        den = -den;
    }
    __int128 a = num < 0 ? -num : num, b = den;
    while (b != 0) {
        __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) {
        num /= a;
        den /= a;
    }
    constexpr __int128 lo = std::numeric_limits<int64_t>::min(), hi = std::numeric_limits<int64_t>::max();
    if (num < lo || num > hi || den > hi) return std::nullopt;
    Rational r;
    r.num_ = static_cast<int64_t>(num);
    r.den_ = static_cast<int64_t>(den);
    return r;
}

std::string Rational::str() const {
    if (den_ == 1) return std::to_string(num_);
    return fmt::format("{}/{}", num_, den_);
}

std::optional<Rational> Rational::add(const Rational& o) const {
    return Rational::reduce(static_cast<__int128>(num_) * o.den_ + static_cast<__int128>(o.num_) * den_,
                   static_cast<__int128>(den_) * o.den_);
}

std::optional<Rational> Rational::sub(const Rational& o) const {
    return Rational::reduce(static_cast<__int128>(num_) * o.den_ - static_cast<__int128>(o.num_) * den_,
                   static_cast<__int128>(den_) * o.den_);
}

std::optional<Rational> Rational::mul(const Rational& o) const {
    return Rational::reduce(static_cast<__int128>(num_) * o.num_, static_cast<__int128>(den_) * o.den_);
}

std::optional<Rational> Rational::div(const Rational& o) const {
    if (o.num_ == 0) return std::nullopt;
    return Rational::reduce(static_cast<__int128>(num_) * o.den_, static_cast<__int128>(den_) * o.num_);
}

std::optional<Rational> Rational::negate() const { return Rational::reduce(-static_cast<__int128>(num_), den_); }

std::optional<Number> evaluate_expression(std::string_view text) {
    if (text.empty()) return std::nullopt;
    return Parser(text).parse();
}

} // namespace undo::grade
