#include "tinytiler/common.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace tinytiler {

namespace {

BigInt pow10(std::size_t n) {
  BigInt r = 1;
  for (std::size_t i = 0; i < n; ++i) r *= 10;
  return r;
}

}  // namespace

Rational rational_from_string(const std::string& text) {
  std::string s = text;
  if (s.empty()) throw Error("empty rational literal");
  auto slash = s.find('/');
  if (slash != std::string::npos) {
    BigInt num(s.substr(0, slash));
    BigInt den(s.substr(slash + 1));
    if (den == 0) throw Error("rational with zero denominator: " + text);
    return Rational(num, den);
  }
  auto dot = s.find('.');
  if (dot == std::string::npos) {
    auto e = s.find_first_of("eE");
    if (e != std::string::npos) return rational_from_double(std::stod(s));
    return Rational(BigInt(s), 1);
  }
  bool neg = s[0] == '-';
  if (neg || s[0] == '+') s.erase(0, 1);
  dot = s.find('.');
  std::string digits = s.substr(0, dot) + s.substr(dot + 1);
  std::size_t frac = s.size() - dot - 1;
  for (char c : digits)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw Error("malformed rational literal: " + text);
  BigInt num(digits.empty() ? "0" : digits);
  if (neg) num = -num;
  return Rational(num, pow10(frac));
}

std::string rational_to_string(const Rational& r) {
  std::ostringstream os;
  os << r.numerator();
  if (r.denominator() != 1) os << "/" << r.denominator();
  return os.str();
}

Rational rational_from_double(double v) {
  if (!std::isfinite(v)) throw Error("non-finite value for rational");
  if (v == 0.0) return Rational(0);
  int exp = 0;
  double mant = std::frexp(v, &exp);  // v = mant * 2^exp, 0.5 <= |mant| < 1
  // 53 doublings make the mantissa integral
  BigInt num(static_cast<long long>(std::ldexp(mant, 53)));
  exp -= 53;
  if (exp >= 0) {
    num <<= exp;
    return Rational(num, 1);
  }
  BigInt den = BigInt(1) << (-exp);
  return Rational(num, den);
}

double rational_to_double(const Rational& r) {
  return static_cast<double>(boost::multiprecision::cpp_rational(r.numerator(), r.denominator()));
}

}  // namespace tinytiler
