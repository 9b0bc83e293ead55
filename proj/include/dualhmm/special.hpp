// Scalar special functions backed by GSL, wrapped for log-domain use.
#pragma once

#include <cmath>
#include <string>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_bessel.h>

#include "dualhmm/common.hpp"

namespace dualhmm {

namespace detail {

// GSL aborts on error by default; switch to status codes exactly once.
inline bool disable_gsl_abort() {
  static const bool done = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  return done;
}

// Ascending series log I_nu(z) = log sum_k (z/2)^{2k+nu} / (k! Gamma(nu+k+1)).
// Valid for nu > -1, where every term is positive. Converges for all z, fast
// for small z.
inline double log_bessel_i_series(double nu, double z) {
  const double log_half_z = std::log(0.5 * z);
  double log_term = nu * log_half_z - lgamma(nu + 1.0);
  double log_sum = log_term;
  for (int k = 1; k < 10000; ++k) {
    log_term += 2.0 * log_half_z - std::log(static_cast<double>(k)) -
                std::log(nu + static_cast<double>(k));
    log_sum = log_add_exp(log_sum, log_term);
    if (log_term < log_sum - 45.0) return log_sum;
  }
  throw ConvergenceError("modified Bessel series did not converge at order " +
                         std::to_string(nu) + ", argument " + std::to_string(z));
}

}  // namespace detail

// log I_nu(z) for z >= 0 and nu > -1 (covers all gamma-type transition
// densities with positive shape). Uses exponentially scaled GSL evaluations
// for large arguments and the ascending series elsewhere; orders in (-1, 0)
// go through I_{-nu} and K_{-nu}.
inline double log_bessel_i(double nu, double z) {
  detail::disable_gsl_abort();
  require(nu > -1.0, "log_bessel_i requires order > -1, got " + std::to_string(nu));
  require(z >= 0.0 && std::isfinite(z),
          "log_bessel_i requires finite nonnegative argument, got " + std::to_string(z));
  if (z == 0.0) return nu == 0.0 ? 0.0 : neg_inf;
  // The series is cheap and fully accurate when few terms dominate.
  if (z < 2.0 || z * z < 0.5 * (nu + 1.0)) return detail::log_bessel_i_series(nu, z);

  if (nu >= 0.0) {
    gsl_sf_result res;
    const int status = gsl_sf_bessel_Inu_scaled_e(nu, z, &res);
    if (status != 0 || res.val <= 0.0) {
      if (status == GSL_EUNDRFLW || res.val <= 0.0) return detail::log_bessel_i_series(nu, z);
      throw NumericError("Bessel I evaluation failed (status " + std::to_string(status) +
                         ") at order " + std::to_string(nu) + ", argument " + std::to_string(z));
    }
    return z + std::log(res.val);
  }

  // I_nu = I_{-nu} + (2/pi) sin(-nu pi) K_{-nu} for noninteger nu < 0.
  const double pos = -nu;
  gsl_sf_result ri, rk;
  const int si = gsl_sf_bessel_Inu_scaled_e(pos, z, &ri);
  const int sk = gsl_sf_bessel_Knu_scaled_e(pos, z, &rk);
  if (si != 0 || sk != 0) {
    throw NumericError("Bessel I/K evaluation failed (status " + std::to_string(si) + "/" +
                       std::to_string(sk) + ") at order " + std::to_string(nu) + ", argument " +
                       std::to_string(z));
  }
  const double correction = (2.0 / M_PI) * std::sin(pos * M_PI) * std::exp(-2.0 * z) * rk.val;
  const double scaled = ri.val + correction;
  if (scaled <= 0.0) return detail::log_bessel_i_series(nu, z);
  return z + std::log(scaled);
}

}  // namespace dualhmm
