#pragma once

// Thin wrapper around MPFR-backed floating point (via Boost.Multiprecision)
// used for the catastrophically cancelling alternating sums in the
// death-process semigroup.  Precision is set per computation scope in bits.

#include <boost/multiprecision/mpfr.hpp>

#include <cmath>

#include "dualhmm/common.hpp"

namespace dualhmm {

using BigFloat =
    boost::multiprecision::number<boost::multiprecision::mpfr_float_backend<0>,
                                  boost::multiprecision::et_off>;

// Decimal digits that guarantee at least `bits` bits of mantissa.
inline unsigned digits10_for_bits(unsigned bits) {
  return static_cast<unsigned>(std::ceil(bits * 0.30102999566398120)) + 2;
}

// Scoped change of the thread-default BigFloat precision.  Values created
// inside the scope keep their own precision after the guard is destroyed.
class PrecisionGuard {
 public:
  explicit PrecisionGuard(unsigned bits)
      : old_digits_(BigFloat::default_precision()) {
    BigFloat::default_precision(digits10_for_bits(bits));
  }
  ~PrecisionGuard() { BigFloat::default_precision(old_digits_); }
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  unsigned old_digits_;
};

inline double to_double(const BigFloat& x) { return x.convert_to<double>(); }

// log(x) computed in extended precision, rounded to double; handles values
// far outside the double exponent range.  Requires x >= 0.
inline double log_to_double(const BigFloat& x) {
  if (x == 0) return neg_inf;
  if (x < 0) throw NumericError("log_to_double: negative argument");
  return to_double(BigFloat(log(x)));
}

}  // namespace dualhmm
