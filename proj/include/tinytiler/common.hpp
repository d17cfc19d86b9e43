#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <boost/rational.hpp>

namespace tinytiler {

using BigInt = boost::multiprecision::cpp_int;

/// Exact rational arithmetic for quanta, zero points and objective scores.
using Rational = boost::rational<BigInt>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Diagnostic {
  std::string where;    // layer id, buffer id, or event reference
  std::string message;
};

Rational rational_from_string(const std::string& text);
std::string rational_to_string(const Rational& r);
Rational rational_from_double(double v);  // exact: doubles are dyadic rationals
double rational_to_double(const Rational& r);

inline std::uint64_t align4(std::uint64_t n) { return (n + 3u) & ~std::uint64_t{3}; }

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace tinytiler
